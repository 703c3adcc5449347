//! Split annotations: structured form, parser, canonical printer and
//! validation against a function signature.
//!
//! ```text
//! annotation := "@splittable" "(" paramlist? ")" ("->" expr)?
//! param      := "mut"? ident ":" expr
//! expr       := ident "(" identlist? ")" | ident | "_" | "unknown"
//! ```

use std::collections::HashSet;
use std::fmt;

use thiserror::Error;

use crate::split_types::{SplitRegistry, UNKNOWN};
use crate::value::DataType;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum SplitTypeExpr {
    /// `Kind(arg, ...)`: parameters computed from the named arguments.
    Constructor { kind: String, args: Vec<String> },
    /// A type variable local to one annotation.
    Generic(String),
    /// `_`: the argument is broadcast to every batch rather than split.
    Missing,
    /// `unknown`: a fresh split type equal to nothing else.
    Unknown,
}

impl fmt::Display for SplitTypeExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SplitTypeExpr::Constructor { kind, args } => write!(f, "{kind}({})", args.join(", ")),
            SplitTypeExpr::Generic(name) => f.write_str(name),
            SplitTypeExpr::Missing => f.write_str("_"),
            SplitTypeExpr::Unknown => f.write_str(UNKNOWN),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AnnotatedParam {
    pub name: String,
    pub mutable: bool,
    pub expr: SplitTypeExpr,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SplitAnnotation {
    pub params: Vec<AnnotatedParam>,
    pub ret: Option<SplitTypeExpr>,
}

impl SplitAnnotation {
    pub fn arity(&self) -> usize {
        self.params.len()
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    /// Extends the annotation to `arity` parameters; omitted trailing
    /// parameters are broadcast (`_`).
    pub fn padded(mut self, arity: usize) -> Self {
        let mut next = self.params.len();
        while self.params.len() < arity {
            let mut name = format!("arg{next}");
            while self.param_index(&name).is_some() {
                name.push('_');
            }
            self.params.push(AnnotatedParam { name, mutable: false, expr: SplitTypeExpr::Missing });
            next += 1;
        }
        self
    }

    /// Turns bare identifiers that name registered kinds into zero-argument
    /// constructors; everything else bare stays generic.
    pub fn resolve_kinds(mut self, registry: &SplitRegistry) -> Self {
        let fix = |e: &mut SplitTypeExpr| {
            if let SplitTypeExpr::Generic(name) = e {
                if registry.contains(name) {
                    *e = SplitTypeExpr::Constructor { kind: std::mem::take(name), args: Vec::new() };
                }
            }
        };
        for p in &mut self.params {
            fix(&mut p.expr);
        }
        if let Some(r) = &mut self.ret {
            fix(r);
        }
        self
    }
}

impl fmt::Display for SplitAnnotation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("@splittable(")?;
        for (i, p) in self.params.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            if p.mutable {
                f.write_str("mut ")?;
            }
            write!(f, "{}: {}", p.name, p.expr)?;
        }
        f.write_str(")")?;
        if let Some(r) = &self.ret {
            write!(f, " -> {r}")?;
        }
        Ok(())
    }
}

impl std::str::FromStr for SplitAnnotation {
    type Err = AnnotationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_annotation(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnnotationError {
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("constructor argument `{name}` at byte {offset} does not name a parameter")]
    UnknownReference { name: String, offset: usize },
    #[error("parameter `{name}` at byte {offset} is declared twice")]
    DuplicateParameter { name: String, offset: usize },
}

impl AnnotationError {
    pub fn offset(&self) -> usize {
        match *self {
            AnnotationError::Parse { offset, .. }
            | AnnotationError::UnknownReference { offset, .. }
            | AnnotationError::DuplicateParameter { offset, .. } => offset,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok<'a> {
    At,
    LParen,
    RParen,
    Comma,
    Colon,
    Arrow,
    Underscore,
    Ident(&'a str),
    Eof,
}

impl fmt::Display for Tok<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::At => f.write_str("`@`"),
            Tok::LParen => f.write_str("`(`"),
            Tok::RParen => f.write_str("`)`"),
            Tok::Comma => f.write_str("`,`"),
            Tok::Colon => f.write_str("`:`"),
            Tok::Arrow => f.write_str("`->`"),
            Tok::Underscore => f.write_str("`_`"),
            Tok::Ident(s) => write!(f, "`{s}`"),
            Tok::Eof => f.write_str("end of input"),
        }
    }
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn next_token(&mut self) -> Result<(Tok<'a>, usize), AnnotationError> {
        let bytes = self.src.as_bytes();
        while self.pos < bytes.len() && bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        let Some(&c) = bytes.get(start) else {
            return Ok((Tok::Eof, start));
        };
        let single = |tok, lexer: &mut Self| {
            lexer.pos += 1;
            Ok((tok, start))
        };
        match c {
            b'@' => single(Tok::At, self),
            b'(' => single(Tok::LParen, self),
            b')' => single(Tok::RParen, self),
            b',' => single(Tok::Comma, self),
            b':' => single(Tok::Colon, self),
            b'-' if bytes.get(start + 1) == Some(&b'>') => {
                self.pos += 2;
                Ok((Tok::Arrow, start))
            }
            b'_' if !bytes.get(start + 1).is_some_and(|b| b.is_ascii_alphanumeric() || *b == b'_') => {
                single(Tok::Underscore, self)
            }
            c if c.is_ascii_alphabetic() => {
                let end = bytes[start..]
                    .iter()
                    .position(|b| !(b.is_ascii_alphanumeric() || *b == b'_'))
                    .map_or(bytes.len(), |n| start + n);
                self.pos = end;
                Ok((Tok::Ident(&self.src[start..end]), start))
            }
            _ => {
                let ch = self.src[start..].chars().next().unwrap_or('?');
                Err(AnnotationError::Parse { offset: start, message: format!("unexpected character `{ch}`") })
            }
        }
    }
}

struct Parser<'a> {
    lexer: Lexer<'a>,
    peeked: Option<(Tok<'a>, usize)>,
    references: Vec<(String, usize)>,
}

impl<'a> Parser<'a> {
    fn peek(&mut self) -> Result<&(Tok<'a>, usize), AnnotationError> {
        if self.peeked.is_none() {
            self.peeked = Some(self.lexer.next_token()?);
        }
        Ok(self.peeked.as_ref().expect("just filled"))
    }

    fn bump(&mut self) -> Result<(Tok<'a>, usize), AnnotationError> {
        self.peek()?;
        Ok(self.peeked.take().expect("just filled"))
    }

    fn expect(&mut self, want: Tok<'static>) -> Result<usize, AnnotationError> {
        let (tok, offset) = self.bump()?;
        if tok == want {
            Ok(offset)
        } else {
            Err(AnnotationError::Parse { offset, message: format!("expected {want}, found {tok}") })
        }
    }

    fn ident(&mut self, what: &str) -> Result<(&'a str, usize), AnnotationError> {
        match self.bump()? {
            (Tok::Ident(s), offset) => Ok((s, offset)),
            (tok, offset) => Err(AnnotationError::Parse { offset, message: format!("expected {what}, found {tok}") }),
        }
    }

    fn annotation(&mut self) -> Result<SplitAnnotation, AnnotationError> {
        self.expect(Tok::At)?;
        match self.bump()? {
            (Tok::Ident("splittable"), _) => {}
            (tok, offset) => {
                return Err(AnnotationError::Parse { offset, message: format!("expected `splittable`, found {tok}") })
            }
        }
        self.expect(Tok::LParen)?;
        let mut params = Vec::new();
        let mut seen = HashSet::new();
        loop {
            if self.peek()?.0 == Tok::RParen {
                self.bump()?;
                break;
            }
            let (first, offset) = self.ident("parameter name")?;
            let (mutable, name, offset) = if first == "mut" && matches!(self.peek()?.0, Tok::Ident(_)) {
                let (name, offset) = self.ident("parameter name")?;
                (true, name, offset)
            } else {
                (false, first, offset)
            };
            if !seen.insert(name) {
                return Err(AnnotationError::DuplicateParameter { name: name.to_string(), offset });
            }
            self.expect(Tok::Colon)?;
            let expr = self.expr()?;
            params.push(AnnotatedParam { name: name.to_string(), mutable, expr });
            match self.bump()? {
                (Tok::Comma, _) => {}
                (Tok::RParen, _) => break,
                (tok, offset) => {
                    return Err(AnnotationError::Parse { offset, message: format!("expected `,` or `)`, found {tok}") })
                }
            }
        }
        let ret = if self.peek()?.0 == Tok::Arrow {
            self.bump()?;
            Some(self.expr()?)
        } else {
            None
        };
        match self.bump()? {
            (Tok::Eof, _) => {}
            (tok, offset) => {
                return Err(AnnotationError::Parse { offset, message: format!("unexpected {tok} after annotation") })
            }
        }
        for (name, offset) in self.references.drain(..) {
            if !seen.contains(name.as_str()) {
                return Err(AnnotationError::UnknownReference { name, offset });
            }
        }
        Ok(SplitAnnotation { params, ret })
    }

    fn expr(&mut self) -> Result<SplitTypeExpr, AnnotationError> {
        match self.bump()? {
            (Tok::Underscore, _) => Ok(SplitTypeExpr::Missing),
            (Tok::Ident(UNKNOWN), _) => Ok(SplitTypeExpr::Unknown),
            (Tok::Ident(name), _) => {
                if self.peek()?.0 != Tok::LParen {
                    return Ok(SplitTypeExpr::Generic(name.to_string()));
                }
                self.bump()?;
                let mut args = Vec::new();
                loop {
                    if self.peek()?.0 == Tok::RParen {
                        self.bump()?;
                        break;
                    }
                    let (arg, offset) = self.ident("argument name")?;
                    self.references.push((arg.to_string(), offset));
                    args.push(arg.to_string());
                    match self.bump()? {
                        (Tok::Comma, _) => {}
                        (Tok::RParen, _) => break,
                        (tok, offset) => {
                            return Err(AnnotationError::Parse {
                                offset,
                                message: format!("expected `,` or `)`, found {tok}"),
                            })
                        }
                    }
                }
                Ok(SplitTypeExpr::Constructor { kind: name.to_string(), args })
            }
            (tok, offset) => Err(AnnotationError::Parse { offset, message: format!("expected a split type, found {tok}") }),
        }
    }
}

/// Parses one `@splittable(...)` annotation. Whitespace is insignificant.
pub fn parse_annotation(text: &str) -> Result<SplitAnnotation, AnnotationError> {
    Parser { lexer: Lexer { src: text, pos: 0 }, peeked: None, references: Vec::new() }.annotation()
}

/// Argument and return types of an annotated function.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Signature {
    pub params: Vec<ParamSig>,
    pub ret: Option<DataType>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamSig {
    pub ty: DataType,
    pub writable: bool,
}

impl Signature {
    pub fn new() -> Self {
        Signature { params: Vec::new(), ret: None }
    }

    pub fn arg<T: 'static>(mut self) -> Self {
        self.params.push(ParamSig { ty: DataType::of::<T>(), writable: false });
        self
    }

    pub fn arg_mut<T: 'static>(mut self) -> Self {
        self.params.push(ParamSig { ty: DataType::of::<T>(), writable: true });
        self
    }

    pub fn returns<T: 'static>(mut self) -> Self {
        self.ret = Some(DataType::of::<T>());
        self
    }

    pub fn arity(&self) -> usize {
        self.params.len()
    }
}

impl Default for Signature {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    Arity { annotated: usize, signature: usize },
    UnregisteredKind { param: String, kind: String },
    ConcreteType { param: String, kind: String, kind_type: String, arg_type: String },
    NotWritable { param: String },
    /// A `mut` parameter passed whole to every batch would be written concurrently.
    MutableMissing { param: String },
    ReturnMismatch { annotated: bool, signature: bool },
    MissingReturn,
    UnboundReturnGeneric(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Arity { annotated, signature } => {
                write!(f, "annotation has {annotated} parameters but the function takes {signature}")
            }
            Violation::UnregisteredKind { param, kind } => write!(f, "`{param}`: split kind `{kind}` is not registered"),
            Violation::ConcreteType { param, kind, kind_type, arg_type } => {
                write!(f, "`{param}`: `{kind}` splits {kind_type}, but the argument is {arg_type}")
            }
            Violation::NotWritable { param } => write!(f, "`{param}` is marked mut but the argument is read-only"),
            Violation::MutableMissing { param } => write!(f, "`{param}` is marked mut but is not split"),
            Violation::ReturnMismatch { annotated, signature } => write!(
                f,
                "return split type {} but the function {} a value",
                if *annotated { "given" } else { "missing" },
                if *signature { "returns" } else { "does not return" }
            ),
            Violation::MissingReturn => f.write_str("a returned value cannot use `_`"),
            Violation::UnboundReturnGeneric(g) => write!(f, "return generic `{g}` is not bound by any parameter"),
        }
    }
}

/// Every violation found; empty means valid.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return f.write_str("valid");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Checks an annotation against a signature and the registered kinds.
/// Annotations with fewer parameters than the signature are accepted; the
/// missing trailing parameters count as `_`.
pub fn validate_annotation(sa: &SplitAnnotation, sig: &Signature, registry: &SplitRegistry) -> ValidationReport {
    let mut violations = Vec::new();
    if sa.arity() > sig.arity() {
        violations.push(Violation::Arity { annotated: sa.arity(), signature: sig.arity() });
    }
    let check_kind = |violations: &mut Vec<Violation>, param: &str, expr: &SplitTypeExpr, ty: Option<DataType>| {
        let kind_name = match expr {
            SplitTypeExpr::Constructor { kind, .. } => kind,
            SplitTypeExpr::Generic(name) if registry.contains(name) => name,
            _ => return,
        };
        match registry.get(kind_name) {
            None => violations.push(Violation::UnregisteredKind { param: param.to_string(), kind: kind_name.clone() }),
            Some(kind) => {
                if let Some(ty) = ty {
                    if kind.concrete_type() != ty {
                        violations.push(Violation::ConcreteType {
                            param: param.to_string(),
                            kind: kind_name.clone(),
                            kind_type: kind.concrete_type().to_string(),
                            arg_type: ty.to_string(),
                        });
                    }
                }
            }
        }
    };
    for (i, p) in sa.params.iter().enumerate() {
        let psig = sig.params.get(i);
        check_kind(&mut violations, &p.name, &p.expr, psig.map(|s| s.ty));
        if p.mutable && psig.is_some_and(|s| !s.writable) {
            violations.push(Violation::NotWritable { param: p.name.clone() });
        }
        if p.mutable && p.expr == SplitTypeExpr::Missing {
            violations.push(Violation::MutableMissing { param: p.name.clone() });
        }
    }
    match (&sa.ret, sig.ret) {
        (Some(expr), Some(ty)) => {
            check_kind(&mut violations, "return", expr, Some(ty));
            match expr {
                SplitTypeExpr::Missing => violations.push(Violation::MissingReturn),
                SplitTypeExpr::Generic(g) if !registry.contains(g) => {
                    let bound = sa.params.iter().any(|p| matches!(&p.expr, SplitTypeExpr::Generic(n) if n == g));
                    if !bound {
                        violations.push(Violation::UnboundReturnGeneric(g.clone()));
                    }
                }
                _ => {}
            }
        }
        (None, None) => {}
        (annotated, signature) => violations
            .push(Violation::ReturnMismatch { annotated: annotated.is_some(), signature: signature.is_some() }),
    }
    ValidationReport { violations }
}
