//! Split types, the splitting API that annotators implement per split kind,
//! and the registry that maps kind names to implementations.

use std::collections::HashMap;
use std::fmt;
use std::ops::Range;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use thiserror::Error;

use crate::value::{DataType, Value};

/// Name reserved for the identity-unique `unknown` split type.
pub const UNKNOWN: &str = "unknown";

static NEXT_UNKNOWN: AtomicU64 = AtomicU64::new(1);

/// One split-type parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Param {
    Int(i64),
    Tag(u8),
}

impl Param {
    pub fn as_int(&self) -> Option<i64> {
        match *self {
            Param::Int(v) => Some(v),
            Param::Tag(_) => None,
        }
    }
}

impl From<i64> for Param {
    fn from(v: i64) -> Self {
        Param::Int(v)
    }
}

impl fmt::Display for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Param::Int(v) => write!(f, "{v}"),
            Param::Tag(t) => write!(f, "#{t}"),
        }
    }
}

/// A named, parameterized descriptor of how a value is partitioned.
///
/// Equality is structural except for `unknown`, which is never equal to
/// anything, including itself. Use [`SplitType::same_instance`] when the
/// identity of an `unknown` matters.
#[derive(Clone)]
pub struct SplitType {
    name: Arc<str>,
    params: Vec<Param>,
    instance: Option<u64>,
}

impl SplitType {
    pub fn new(name: impl Into<Arc<str>>, params: impl Into<Vec<Param>>) -> Self {
        SplitType { name: name.into(), params: params.into(), instance: None }
    }

    /// A fresh `unknown`, distinct from every other split type.
    pub fn unknown() -> Self {
        let id = NEXT_UNKNOWN.fetch_add(1, Ordering::Relaxed);
        SplitType { name: Arc::from(UNKNOWN), params: Vec::new(), instance: Some(id) }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn int_param(&self, index: usize) -> Option<i64> {
        self.params.get(index).and_then(Param::as_int)
    }

    pub fn is_unknown(&self) -> bool {
        &*self.name == UNKNOWN
    }

    /// Instance id of an `unknown` created by [`SplitType::unknown`].
    pub fn unknown_instance(&self) -> Option<u64> {
        self.instance
    }

    /// Structural equality, extended so that an `unknown` matches the very
    /// same instance it was cloned from.
    pub fn same_instance(&self, other: &SplitType) -> bool {
        match (self.instance, other.instance) {
            (Some(a), Some(b)) => a == b,
            _ => self == other,
        }
    }
}

/// Equality that licenses pipelining two values together.
pub fn split_type_eq(a: &SplitType, b: &SplitType) -> bool {
    !a.is_unknown() && !b.is_unknown() && a.name == b.name && a.params == b.params
}

impl PartialEq for SplitType {
    fn eq(&self, other: &Self) -> bool {
        split_type_eq(self, other)
    }
}

impl fmt::Display for SplitType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(id) = self.instance {
            return write!(f, "{UNKNOWN}#{id}");
        }
        write!(f, "{}<", self.name)?;
        for (i, p) in self.params.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{p}")?;
        }
        f.write_str(">")
    }
}

impl fmt::Debug for SplitType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// Sizes reported by a kind's `info` function; drives batching.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RuntimeInfo {
    pub total_elements: usize,
    /// Bytes per element. Zero for metadata-only kinds (such as a length that
    /// is split alongside arrays) which occupy no cache.
    pub element_size_bytes: usize,
}

/// Extra context handed to splitters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WorkerCtx {
    pub worker_id: usize,
    pub worker_count: usize,
    pub batch_index: usize,
}

impl WorkerCtx {
    pub fn single() -> Self {
        WorkerCtx { worker_id: 0, worker_count: 1, batch_index: 0 }
    }
}

/// A piece of a split value covering `range` of the original's elements.
#[derive(Debug, Clone)]
pub struct SplitPiece {
    pub value: Value,
    pub range: Range<usize>,
}

/// One argument as seen by a split-type constructor.
#[derive(Debug, Clone, Copy)]
pub enum CtorArg<'a> {
    Data(&'a Value),
    /// Not yet computed; carries the split type its producer assigned, if any.
    Pending(Option<&'a SplitType>),
}

impl<'a> CtorArg<'a> {
    pub fn value(&self) -> Option<&'a Value> {
        match *self {
            CtorArg::Data(v) => Some(v),
            CtorArg::Pending(_) => None,
        }
    }

    /// Reads an integer argument, accepting any of the common integer widths.
    pub fn as_i64(&self) -> Option<i64> {
        let v = self.value()?;
        v.downcast_ref::<i64>()
            .copied()
            .or_else(|| v.downcast_ref::<i32>().map(|&x| x as i64))
            .or_else(|| v.downcast_ref::<usize>().and_then(|&x| i64::try_from(x).ok()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CtorError {
    /// The parameters depend on data that has not been computed yet.
    #[error("constructor needs materialized data")]
    NeedsData,
    #[error("{0}")]
    Invalid(String),
}

pub type ConstructorFn = Arc<dyn Fn(&[CtorArg<'_>]) -> Result<Vec<Param>, CtorError> + Send + Sync>;
pub type SplitterFn =
    Arc<dyn Fn(&Value, Range<usize>, &SplitType, &WorkerCtx) -> Result<Option<Value>, String> + Send + Sync>;
pub type MergerFn = Arc<dyn Fn(Vec<Value>, &SplitType) -> Result<Value, String> + Send + Sync>;
pub type InfoFn = Arc<dyn Fn(&Value, &SplitType) -> Result<RuntimeInfo, String> + Send + Sync>;
pub type DefaultCtorFn = Arc<dyn Fn(&Value) -> Result<Vec<Param>, String> + Send + Sync>;

/// The splitting API behind one split-type name.
#[derive(Clone)]
pub struct SplitKind {
    name: String,
    concrete_type: DataType,
    constructor: ConstructorFn,
    splitter: Option<SplitterFn>,
    merger: Option<MergerFn>,
    info: Option<InfoFn>,
    default_constructor: Option<DefaultCtorFn>,
    /// Another kind whose split types this kind's constructor builds.
    produces: Option<String>,
}

impl fmt::Debug for SplitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SplitKind")
            .field("name", &self.name)
            .field("concrete_type", &self.concrete_type)
            .field("splitter", &self.splitter.is_some())
            .field("merger", &self.merger.is_some())
            .field("info", &self.info.is_some())
            .field("default", &self.default_constructor.is_some())
            .field("produces", &self.produces)
            .finish()
    }
}

impl SplitKind {
    /// Starts a kind whose constructor is the identity over integer arguments.
    pub fn builder(name: impl Into<String>, concrete_type: DataType) -> SplitKindBuilder {
        SplitKindBuilder {
            kind: SplitKind {
                name: name.into(),
                concrete_type,
                constructor: Arc::new(identity_constructor),
                splitter: None,
                merger: None,
                info: None,
                default_constructor: None,
                produces: None,
            },
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn concrete_type(&self) -> DataType {
        self.concrete_type
    }

    pub fn has_splitter(&self) -> bool {
        self.splitter.is_some()
    }

    pub fn has_merger(&self) -> bool {
        self.merger.is_some()
    }

    pub fn has_default(&self) -> bool {
        self.default_constructor.is_some()
    }

    /// Name of the split types this kind's constructor builds.
    pub fn produces(&self) -> &str {
        self.produces.as_deref().unwrap_or(&self.name)
    }
}

fn identity_constructor(args: &[CtorArg<'_>]) -> Result<Vec<Param>, CtorError> {
    args.iter()
        .map(|a| match a {
            CtorArg::Pending(_) => Err(CtorError::NeedsData),
            CtorArg::Data(_) => a
                .as_i64()
                .map(Param::Int)
                .ok_or_else(|| CtorError::Invalid("identity constructor expects integer arguments".into())),
        })
        .collect()
}

pub struct SplitKindBuilder {
    kind: SplitKind,
}

impl SplitKindBuilder {
    pub fn constructor(
        mut self,
        f: impl Fn(&[CtorArg<'_>]) -> Result<Vec<Param>, CtorError> + Send + Sync + 'static,
    ) -> Self {
        self.kind.constructor = Arc::new(f);
        self
    }

    pub fn splitter(
        mut self,
        f: impl Fn(&Value, Range<usize>, &SplitType, &WorkerCtx) -> Result<Option<Value>, String>
            + Send
            + Sync
            + 'static,
    ) -> Self {
        self.kind.splitter = Some(Arc::new(f));
        self
    }

    pub fn merger(mut self, f: impl Fn(Vec<Value>, &SplitType) -> Result<Value, String> + Send + Sync + 'static) -> Self {
        self.kind.merger = Some(Arc::new(f));
        self
    }

    pub fn info(mut self, f: impl Fn(&Value, &SplitType) -> Result<RuntimeInfo, String> + Send + Sync + 'static) -> Self {
        self.kind.info = Some(Arc::new(f));
        self
    }

    pub fn default_constructor(mut self, f: impl Fn(&Value) -> Result<Vec<Param>, String> + Send + Sync + 'static) -> Self {
        self.kind.default_constructor = Some(Arc::new(f));
        self
    }

    /// Makes this kind a named constructor for `kind`: it builds `kind`'s
    /// split types, which `kind` splits and merges.
    pub fn produces(mut self, kind: impl Into<String>) -> Self {
        self.kind.produces = Some(kind.into());
        self
    }

    pub fn build(self) -> SplitKind {
        self.kind
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SplitError {
    #[error("split kind `{0}` is already registered")]
    DuplicateKind(String),
    #[error("invalid split kind `{kind}`: {reason}")]
    InvalidKind { kind: String, reason: String },
    #[error("split kind `{0}` is not registered")]
    UnknownKind(String),
    #[error("constructor for `{kind}` failed: {reason}")]
    ConstructorFailure { kind: String, reason: String },
    #[error("splitting with {split_type} failed: {reason}")]
    SplitFailure { split_type: String, reason: String },
    #[error("merging with {split_type} failed: {reason}")]
    MergeFailure { split_type: String, reason: String },
    #[error("split kind `{0}` has no splitter")]
    NoSplitter(String),
    #[error("split kind `{0}` has no merger")]
    NoMerger(String),
    #[error("no default split type is registered for {0}")]
    NoDefault(String),
}

/// Maps split-kind names to their splitting API. Written during setup,
/// read-only afterwards.
#[derive(Debug, Default, Clone)]
pub struct SplitRegistry {
    kinds: HashMap<String, SplitKind>,
    defaults: HashMap<DataType, String>,
}

impl SplitRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, kind: SplitKind) -> Result<(), SplitError> {
        if self.kinds.contains_key(&kind.name) {
            return Err(SplitError::DuplicateKind(kind.name));
        }
        if kind.name == UNKNOWN || kind.name == "_" {
            return Err(SplitError::InvalidKind { kind: kind.name, reason: "reserved name".into() });
        }
        if let Some(target) = &kind.produces {
            let reason = match self.kinds.get(target) {
                None => Some(format!("produces unregistered kind `{target}`")),
                Some(t) if t.concrete_type != kind.concrete_type => Some(format!("`{target}` splits another data type")),
                Some(t) if t.produces.is_some() => Some(format!("`{target}` is itself a named constructor")),
                Some(_) if kind.splitter.is_some() || kind.merger.is_some() || kind.default_constructor.is_some() => {
                    Some("a named constructor cannot split, merge or be a default".into())
                }
                Some(_) => None,
            };
            if let Some(reason) = reason {
                return Err(SplitError::InvalidKind { kind: kind.name, reason });
            }
        }
        if kind.splitter.is_some() && kind.info.is_none() {
            return Err(SplitError::InvalidKind { kind: kind.name, reason: "a splitter requires an info function".into() });
        }
        if kind.default_constructor.is_some() {
            if kind.splitter.is_none() {
                return Err(SplitError::InvalidKind {
                    kind: kind.name,
                    reason: "a default constructor requires a splitter".into(),
                });
            }
            if let Some(other) = self.defaults.get(&kind.concrete_type) {
                return Err(SplitError::InvalidKind {
                    kind: kind.name,
                    reason: format!("{} already has default kind `{other}`", kind.concrete_type),
                });
            }
            self.defaults.insert(kind.concrete_type, kind.name.clone());
        }
        self.kinds.insert(kind.name.clone(), kind);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&SplitKind> {
        self.kinds.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.kinds.contains_key(name)
    }

    fn kind(&self, name: &str) -> Result<&SplitKind, SplitError> {
        self.kinds.get(name).ok_or_else(|| SplitError::UnknownKind(name.to_string()))
    }

    /// The kind used to split values of `ty` when nothing else decides.
    pub fn default_kind(&self, ty: DataType) -> Option<&SplitKind> {
        self.defaults.get(&ty).and_then(|n| self.kinds.get(n))
    }

    /// Evaluates a kind's constructor. `NeedsData` is passed through so the
    /// planner can defer construction until the data exists.
    pub fn try_construct(&self, kind: &str, args: &[CtorArg<'_>]) -> Result<Result<SplitType, CtorError>, SplitError> {
        let k = self.kind(kind)?;
        Ok((k.constructor)(args).map(|params| SplitType::new(k.produces(), params)))
    }

    pub fn construct(&self, kind: &str, args: &[CtorArg<'_>]) -> Result<SplitType, SplitError> {
        self.try_construct(kind, args)?
            .map_err(|e| SplitError::ConstructorFailure { kind: kind.to_string(), reason: e.to_string() })
    }

    /// Default split type for a concrete value.
    pub fn default_split_type(&self, value: &Value) -> Result<SplitType, SplitError> {
        let ty = value.data_type();
        let kind = self.default_kind(ty).ok_or_else(|| SplitError::NoDefault(ty.name().to_string()))?;
        let ctor = kind.default_constructor.as_ref().expect("default kinds carry a default constructor");
        let params =
            ctor(value).map_err(|reason| SplitError::ConstructorFailure { kind: kind.name.clone(), reason })?;
        Ok(SplitType::new(kind.name.as_str(), params))
    }

    pub fn runtime_info(&self, value: &Value, st: &SplitType) -> Result<RuntimeInfo, SplitError> {
        let k = self.kind(st.name())?;
        let info = k.info.as_ref().ok_or_else(|| SplitError::NoSplitter(k.name.clone()))?;
        info(value, st).map_err(|reason| SplitError::SplitFailure { split_type: st.to_string(), reason })
    }

    /// Splits out `[start, end)`, clamped to the value's element count.
    /// Returns `None` (end of input) once `start` reaches the element count.
    pub fn split(
        &self,
        value: &Value,
        range: Range<usize>,
        st: &SplitType,
        ctx: &WorkerCtx,
    ) -> Result<Option<SplitPiece>, SplitError> {
        let k = self.kind(st.name())?;
        let splitter = k.splitter.as_ref().ok_or_else(|| SplitError::NoSplitter(k.name.clone()))?;
        if range.start > range.end {
            return Err(SplitError::SplitFailure {
                split_type: st.to_string(),
                reason: format!("inverted range {}..{}", range.start, range.end),
            });
        }
        let total = self.runtime_info(value, st)?.total_elements;
        if range.start >= total {
            return Ok(None);
        }
        let range = range.start..range.end.min(total);
        let piece = splitter(value, range.clone(), st, ctx)
            .map_err(|reason| SplitError::SplitFailure { split_type: st.to_string(), reason })?;
        Ok(piece.map(|value| SplitPiece { value, range }))
    }

    /// Merges pieces (ordered by ascending range) back into one value. The
    /// pieces are consumed.
    pub fn merge(&self, pieces: Vec<Value>, st: &SplitType) -> Result<Value, SplitError> {
        let k = self.kind(st.name())?;
        let merger = k.merger.as_ref().ok_or_else(|| SplitError::NoMerger(k.name.clone()))?;
        if pieces.is_empty() {
            return Err(SplitError::MergeFailure { split_type: st.to_string(), reason: "no pieces".into() });
        }
        merger(pieces, st).map_err(|reason| SplitError::MergeFailure { split_type: st.to_string(), reason })
    }

    pub fn kinds(&self) -> impl Iterator<Item = &SplitKind> {
        self.kinds.values()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, Clone, PartialEq)]
    struct Ints(Vec<i64>);
    impl crate::value::Data for Ints {}

    fn ints_kind() -> SplitKind {
        SplitKind::builder("IntsSplit", DataType::of::<Ints>())
            .splitter(|v, r, _, _| Ok(Some(Value::new(Ints(v.downcast_ref::<Ints>().unwrap().0[r].to_vec())))))
            .merger(|pieces, _| {
                Ok(Value::new(Ints(pieces.iter().flat_map(|p| p.downcast_ref::<Ints>().unwrap().0.clone()).collect())))
            })
            .info(|v, st| {
                let len = v.downcast_ref::<Ints>().ok_or("not Ints")?.0.len();
                let declared = st.int_param(0).unwrap_or(len as i64) as usize;
                Ok(RuntimeInfo { total_elements: declared.min(len), element_size_bytes: 8 })
            })
            .default_constructor(|v| Ok(vec![Param::Int(v.downcast_ref::<Ints>().unwrap().0.len() as i64)]))
            .build()
    }

    #[test]
    fn equality_rules() {
        let a = SplitType::new("ArraySplit", vec![Param::Int(10)]);
        let b = SplitType::new("ArraySplit", vec![Param::Int(10)]);
        let c = SplitType::new("ArraySplit", vec![Param::Int(5)]);
        let d = SplitType::new("SizeSplit", vec![Param::Int(10)]);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
        let u = SplitType::unknown();
        assert_ne!(u, u.clone());
        assert!(!split_type_eq(&u, &u));
        assert!(u.same_instance(&u.clone()));
        assert!(!u.same_instance(&SplitType::unknown()));
        assert_eq!(a.to_string(), "ArraySplit<10>");
    }

    #[test]
    fn duplicate_and_invalid_registration() {
        let mut reg = SplitRegistry::new();
        reg.register(ints_kind()).unwrap();
        assert_eq!(reg.register(ints_kind()), Err(SplitError::DuplicateKind("IntsSplit".into())));
        let bad = SplitKind::builder("Bad", DataType::of::<Ints>()).splitter(|_, _, _, _| Ok(None)).build();
        assert!(matches!(reg.register(bad), Err(SplitError::InvalidKind { .. })));
        let merge_only = SplitKind::builder("SumInts", DataType::of::<Ints>()).merger(|mut p, _| Ok(p.remove(0))).build();
        reg.register(merge_only).unwrap();
        assert!(reg.get("SumInts").is_some_and(|k| k.has_merger() && !k.has_splitter()));
    }

    #[test]
    fn named_constructors_build_the_target_kind() {
        let mut reg = SplitRegistry::new();
        let first = || {
            SplitKind::builder("FirstHalf", DataType::of::<Ints>())
                .constructor(|args| match args {
                    [CtorArg::Data(v)] => Ok(vec![Param::Int(v.downcast_ref::<Ints>().unwrap().0.len() as i64 / 2)]),
                    _ => Err(CtorError::NeedsData),
                })
                .produces("IntsSplit")
                .build()
        };
        assert!(matches!(reg.register(first()), Err(SplitError::InvalidKind { .. })), "target must exist first");
        reg.register(ints_kind()).unwrap();
        reg.register(first()).unwrap();
        let v = Value::new(Ints(vec![1, 2, 3, 4, 5, 6]));
        let st = reg.construct("FirstHalf", &[CtorArg::Data(&v)]).unwrap();
        assert_eq!(st, SplitType::new("IntsSplit", vec![Param::Int(3)]));
        assert_eq!(reg.runtime_info(&v, &st).unwrap().total_elements, 3);

        let splitting = SplitKind::builder("Splits", DataType::of::<Ints>())
            .produces("IntsSplit")
            .splitter(|_, _, _, _| Ok(None))
            .info(|_, _| Ok(RuntimeInfo { total_elements: 0, element_size_bytes: 0 }))
            .build();
        assert!(matches!(reg.register(splitting), Err(SplitError::InvalidKind { .. })));
        let other_type = SplitKind::builder("Other", DataType::of::<i64>()).produces("IntsSplit").build();
        assert!(matches!(reg.register(other_type), Err(SplitError::InvalidKind { .. })));
    }

    #[test]
    fn identity_constructor_and_failures() {
        let mut reg = SplitRegistry::new();
        reg.register(ints_kind()).unwrap();
        let ten = Value::new(10i64);
        let st = reg.construct("IntsSplit", &[CtorArg::Data(&ten)]).unwrap();
        assert_eq!(st, SplitType::new("IntsSplit", vec![Param::Int(10)]));
        let s = Value::new("x".to_string());
        assert!(matches!(reg.construct("IntsSplit", &[CtorArg::Data(&s)]), Err(SplitError::ConstructorFailure { .. })));
        assert_eq!(reg.try_construct("IntsSplit", &[CtorArg::Pending(None)]).unwrap(), Err(CtorError::NeedsData));
        assert!(matches!(reg.construct("Nope", &[]), Err(SplitError::UnknownKind(_))));
    }

    #[test]
    fn split_clamps_and_ends() {
        let mut reg = SplitRegistry::new();
        reg.register(ints_kind()).unwrap();
        let v = Value::new(Ints((1..=10).collect()));
        let st = SplitType::new("IntsSplit", vec![Param::Int(10)]);
        let ctx = WorkerCtx::single();
        let p = reg.split(&v, 0..5, &st, &ctx).unwrap().unwrap();
        assert_eq!(p.value.downcast_ref::<Ints>().unwrap().0, vec![1, 2, 3, 4, 5]);
        assert_eq!(p.range, 0..5);
        let tail = reg.split(&v, 8..15, &st, &ctx).unwrap().unwrap();
        assert_eq!(tail.range, 8..10);
        assert!(reg.split(&v, 10..15, &st, &ctx).unwrap().is_none());
        let merged = reg
            .merge(vec![Value::new(Ints(vec![1, 2, 3])), Value::new(Ints(vec![4, 5]))], &st)
            .unwrap();
        assert_eq!(merged.downcast_ref::<Ints>().unwrap().0, vec![1, 2, 3, 4, 5]);
        let one = Value::new(Ints(vec![7]));
        assert!(reg.merge(vec![one.clone()], &st).unwrap().downcast_ref::<Ints>() == Some(&Ints(vec![7])));
    }

    #[test]
    fn defaults_by_type() {
        let mut reg = SplitRegistry::new();
        reg.register(ints_kind()).unwrap();
        let v = Value::new(Ints(vec![1, 2, 3]));
        assert_eq!(reg.default_split_type(&v).unwrap(), SplitType::new("IntsSplit", vec![Param::Int(3)]));
        assert!(matches!(reg.default_split_type(&Value::new(1.0f64)), Err(SplitError::NoDefault(_))));
    }
}
