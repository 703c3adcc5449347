//! Small test-only data type and split kinds: a shared `i64` buffer split
//! into views, a length split alongside it, and a summing reduction.
#![allow(dead_code)]

use std::fmt;
use std::sync::{Arc, Mutex};

use splitann::{
    BufferKey, CtorArg, CtorError, Data, DataType, FunctionDef, Param, RuntimeInfo, Session, Signature, SplitKind,
    Value,
};

struct Store(Mutex<Vec<i64>>);

/// A view into a shared, mutable `i64` store.
#[derive(Clone)]
pub struct Buf {
    store: Arc<Store>,
    offset: usize,
    len: usize,
}

impl Buf {
    pub fn new(data: Vec<i64>) -> Self {
        let len = data.len();
        Buf { store: Arc::new(Store(Mutex::new(data))), offset: 0, len }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn view(&self, offset: usize, len: usize) -> Buf {
        assert!(offset + len <= self.len);
        Buf { store: Arc::clone(&self.store), offset: self.offset + offset, len }
    }

    pub fn to_vec(&self) -> Vec<i64> {
        self.store.0.lock().unwrap()[self.offset..self.offset + self.len].to_vec()
    }

    pub fn write(&self, data: &[i64]) {
        assert_eq!(data.len(), self.len);
        self.store.0.lock().unwrap()[self.offset..self.offset + self.len].copy_from_slice(data);
    }
}

impl fmt::Debug for Buf {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Buf{:?}", self.to_vec())
    }
}

impl Data for Buf {
    fn buffer_key(&self) -> Option<BufferKey> {
        Some(BufferKey { storage: Arc::as_ptr(&self.store) as usize, offset: self.offset, len: self.len })
    }
}

pub fn buf(v: &Value) -> &Buf {
    v.downcast_ref::<Buf>().expect("a Buf")
}

pub fn int(v: &Value) -> i64 {
    *v.downcast_ref::<i64>().expect("an i64")
}

fn len_ctor(args: &[CtorArg<'_>]) -> Result<Vec<Param>, CtorError> {
    match args {
        [a] => a.as_i64().map(|n| vec![Param::Int(n)]).ok_or(CtorError::NeedsData),
        _ => Err(CtorError::Invalid("expects one length".into())),
    }
}

pub fn kinds() -> Vec<SplitKind> {
    vec![
        SplitKind::builder("Len", DataType::of::<i64>())
            .constructor(len_ctor)
            .splitter(|_, r, _, _| Ok(Some(Value::new(r.len() as i64))))
            .info(|v, _| Ok(RuntimeInfo { total_elements: int(v).max(0) as usize, element_size_bytes: 0 }))
            .build(),
        SplitKind::builder("Vec", DataType::of::<Buf>())
            .constructor(len_ctor)
            .splitter(|v, r, _, _| Ok(Some(Value::new(buf(v).view(r.start, r.len())))))
            .merger(|pieces, _| Ok(Value::new(Buf::new(pieces.iter().flat_map(|p| buf(p).to_vec()).collect()))))
            .info(|v, _| Ok(RuntimeInfo { total_elements: buf(v).len(), element_size_bytes: 8 }))
            .default_constructor(|v| Ok(vec![Param::Int(buf(v).len() as i64)]))
            .build(),
        SplitKind::builder("Total", DataType::of::<i64>())
            .merger(|pieces, _| Ok(Value::new(pieces.iter().map(int).sum::<i64>())))
            .build(),
    ]
}

fn vec_sig(inputs: usize, out_mut: bool) -> Signature {
    let mut sig = Signature::new().arg::<i64>();
    for _ in 0..inputs {
        sig = sig.arg::<Buf>();
    }
    if out_mut {
        sig = sig.arg_mut::<Buf>();
    }
    sig
}

fn elementwise(f: impl Fn(i64, i64) -> i64 + Send + Sync + 'static) -> impl Fn(&[Value]) -> Result<Option<Value>, String> {
    move |args| {
        let a = buf(&args[1]).to_vec();
        let b = buf(&args[2]).to_vec();
        let out: Vec<i64> = a.iter().zip(&b).map(|(x, y)| f(*x, *y)).collect();
        buf(&args[3]).write(&out);
        Ok(None)
    }
}

/// Registers the kinds and a handful of functions:
///
/// * `vadd`, `vmul`: `(n, a, b, mut out)` in-place elementwise ops
/// * `vneg`: `(n, a, mut out)`
/// * `add`: `(a: S, b: S) -> S`, `addk`: `(a: S, k: _) -> S`
/// * `total`: `(a: Vec(len)) ... -> Total`, `keep_pos`: `(a: S) -> unknown`
pub fn session() -> Session {
    let mut s = Session::new();
    for k in kinds() {
        s.register_kind(k).unwrap();
    }
    let mkl = "@splittable(size: Len(size), a: Vec(size), b: Vec(size), mut out: Vec(size))";
    s.register_function(FunctionDef::new("vadd", mkl, vec_sig(2, true), elementwise(|x, y| x.wrapping_add(y))).unwrap())
        .unwrap();
    s.register_function(FunctionDef::new("vmul", mkl, vec_sig(2, true), elementwise(|x, y| x.wrapping_mul(y))).unwrap())
        .unwrap();
    s.register_function(
        FunctionDef::new(
            "vneg",
            "@splittable(size: Len(size), a: Vec(size), mut out: Vec(size))",
            vec_sig(1, true),
            |args| {
                let a: Vec<i64> = buf(&args[1]).to_vec().iter().map(|x| x.wrapping_neg()).collect();
                buf(&args[2]).write(&a);
                Ok(None)
            },
        )
        .unwrap(),
    )
    .unwrap();
    s.register_function(
        FunctionDef::new(
            "add",
            "@splittable(a: S, b: S) -> S",
            Signature::new().arg::<Buf>().arg::<Buf>().returns::<Buf>(),
            |args| {
                let (a, b) = (buf(&args[0]).to_vec(), buf(&args[1]).to_vec());
                if a.len() != b.len() {
                    return Err(format!("length {} vs {}", a.len(), b.len()));
                }
                Ok(Some(Value::new(Buf::new(a.iter().zip(&b).map(|(x, y)| x.wrapping_add(*y)).collect()))))
            },
        )
        .unwrap(),
    )
    .unwrap();
    s.register_function(
        FunctionDef::new(
            "addk",
            "@splittable(a: S, k: _) -> S",
            Signature::new().arg::<Buf>().arg::<i64>().returns::<Buf>(),
            |args| {
                let k = int(&args[1]);
                Ok(Some(Value::new(Buf::new(buf(&args[0]).to_vec().iter().map(|x| x.wrapping_add(k)).collect()))))
            },
        )
        .unwrap(),
    )
    .unwrap();
    s.register_function(
        FunctionDef::new(
            "total",
            "@splittable(a: Vec(n), n: Len(n)) -> Total",
            Signature::new().arg::<Buf>().arg::<i64>().returns::<i64>(),
            |args| Ok(Some(Value::new(buf(&args[0]).to_vec().iter().fold(0i64, |s, x| s.wrapping_add(*x))))),
        )
        .unwrap(),
    )
    .unwrap();
    s.register_function(
        FunctionDef::new(
            "keep_pos",
            "@splittable(a: S) -> unknown",
            Signature::new().arg::<Buf>().returns::<Buf>(),
            |args| Ok(Some(Value::new(Buf::new(buf(&args[0]).to_vec().into_iter().filter(|x| *x > 0).collect())))),
        )
        .unwrap(),
    )
    .unwrap();
    s
}
