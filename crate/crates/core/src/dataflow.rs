//! Lazy capture of annotated calls into a dataflow graph.
//!
//! Calls are recorded, not run. Returned values come back as [`LazyHandle`]s
//! and in-place mutations are tracked per backing store so that later readers
//! depend on the most recent writer.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, OnceLock, Weak};

use thiserror::Error;

use crate::annotation::{parse_annotation, AnnotationError, Signature, SplitAnnotation};
use crate::value::{DataType, Value};

static NEXT_VALUE: AtomicU64 = AtomicU64::new(1);

fn fresh_value_id() -> ValueId {
    ValueId(NEXT_VALUE.fetch_add(1, Ordering::Relaxed))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ValueId(pub u64);

impl fmt::Display for ValueId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

/// Index of a node in program order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub usize);

/// An argument position or the return value of a call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Slot {
    Arg(usize),
    Return,
}

pub type KernelFn = Arc<dyn Fn(&[Value]) -> Result<Option<Value>, String> + Send + Sync>;

/// An annotated, side-effect-free function.
#[derive(Clone)]
pub struct FunctionDef {
    name: String,
    annotation: SplitAnnotation,
    signature: Signature,
    kernel: KernelFn,
}

impl FunctionDef {
    pub fn new(
        name: impl Into<String>,
        annotation: &str,
        signature: Signature,
        kernel: impl Fn(&[Value]) -> Result<Option<Value>, String> + Send + Sync + 'static,
    ) -> Result<Self, AnnotationError> {
        let sa = parse_annotation(annotation)?;
        Ok(Self::with_annotation(name, sa, signature, kernel))
    }

    pub fn with_annotation(
        name: impl Into<String>,
        annotation: SplitAnnotation,
        signature: Signature,
        kernel: impl Fn(&[Value]) -> Result<Option<Value>, String> + Send + Sync + 'static,
    ) -> Self {
        let arity = signature.arity();
        FunctionDef { name: name.into(), annotation: annotation.padded(arity), signature, kernel: Arc::new(kernel) }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn annotation(&self) -> &SplitAnnotation {
        &self.annotation
    }

    pub(crate) fn annotation_mut(&mut self) -> &mut SplitAnnotation {
        &mut self.annotation
    }

    pub fn signature(&self) -> &Signature {
        &self.signature
    }

    pub fn call(&self, args: &[Value]) -> Result<Option<Value>, String> {
        (self.kernel)(args)
    }
}

impl fmt::Debug for FunctionDef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.name, self.annotation)
    }
}

/// Shared result slot behind a [`LazyHandle`] and its aliases.
pub struct HandleSlot {
    session: u64,
    canonical: ValueId,
    data: OnceLock<Value>,
}

/// Deferred result of an annotated call. Reading it through the session
/// forces evaluation of everything captured so far.
///
/// Clones and [`aliases`](LazyHandle::alias) share one result slot.
#[derive(Clone)]
pub struct LazyHandle {
    id: ValueId,
    alias_of: Option<ValueId>,
    slot: Arc<HandleSlot>,
}

impl LazyHandle {
    fn new(session: u64, id: ValueId) -> Self {
        LazyHandle { id, alias_of: None, slot: Arc::new(HandleSlot { session, canonical: id, data: OnceLock::new() }) }
    }

    pub fn id(&self) -> ValueId {
        self.id
    }

    pub fn canonical_id(&self) -> ValueId {
        self.slot.canonical
    }

    pub fn alias_of(&self) -> Option<ValueId> {
        self.alias_of
    }

    /// A copy with its own id that resolves to the same data.
    pub fn alias(&self) -> LazyHandle {
        LazyHandle { id: fresh_value_id(), alias_of: Some(self.slot.canonical), slot: Arc::clone(&self.slot) }
    }

    pub fn is_evaluated(&self) -> bool {
        self.slot.data.get().is_some()
    }

    /// The evaluated data, if evaluation already happened.
    pub fn get(&self) -> Option<&Value> {
        self.slot.data.get()
    }

    pub(crate) fn session(&self) -> u64 {
        self.slot.session
    }

    pub(crate) fn fill(slot: &HandleSlot, value: Value) {
        let _ = slot.data.set(value);
    }
}

impl fmt::Debug for LazyHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.get() {
            Some(v) => write!(f, "LazyHandle({}: {v:?})", self.id),
            None => write!(f, "LazyHandle({}: pending)", self.id),
        }
    }
}

/// A call argument as supplied by client code.
#[derive(Debug, Clone)]
pub enum Arg {
    Value(Value),
    Lazy(LazyHandle),
}

impl Arg {
    pub fn data<T: crate::value::Data>(data: T) -> Arg {
        Arg::Value(Value::new(data))
    }
}

impl From<Value> for Arg {
    fn from(v: Value) -> Self {
        Arg::Value(v)
    }
}

impl From<LazyHandle> for Arg {
    fn from(h: LazyHandle) -> Self {
        Arg::Lazy(h)
    }
}

impl From<&LazyHandle> for Arg {
    fn from(h: &LazyHandle) -> Self {
        Arg::Lazy(h.clone())
    }
}

/// Where a graph value comes from.
#[derive(Clone)]
pub enum ValueSource {
    /// Captured at registration: scalars by value, buffers by shared reference.
    Literal(Value),
    /// Returned by a captured call.
    Result { producer: NodeId, ty: Option<DataType>, handle: Weak<HandleSlot> },
}

impl ValueSource {
    /// True when client code still holds a handle to this result.
    pub fn escapes(&self) -> bool {
        match self {
            ValueSource::Literal(_) => false,
            ValueSource::Result { handle, .. } => handle.strong_count() > 0,
        }
    }

    pub fn literal(&self) -> Option<&Value> {
        match self {
            ValueSource::Literal(v) => Some(v),
            ValueSource::Result { .. } => None,
        }
    }
}

impl fmt::Debug for ValueSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValueSource::Literal(v) => write!(f, "Literal({v:?})"),
            ValueSource::Result { producer, .. } => write!(f, "Result(node {})", producer.0),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CallNode {
    pub id: NodeId,
    pub seq: usize,
    pub function: Arc<FunctionDef>,
    pub args: Vec<ValueId>,
    pub ret: Option<ValueId>,
}

impl CallNode {
    /// Value bound to `slot` of this call.
    pub fn value_at(&self, slot: Slot) -> Option<ValueId> {
        match slot {
            Slot::Arg(i) => self.args.get(i).copied(),
            Slot::Return => self.ret,
        }
    }

    pub fn name(&self) -> &str {
        self.function.name()
    }
}

/// A data dependency: `to` reads `value`, last written or returned by `from`
/// at `from_slot`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Edge {
    pub from: NodeId,
    pub to: NodeId,
    pub value: ValueId,
    pub from_slot: Slot,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DataflowError {
    #[error("the graph is being evaluated; registration is not allowed")]
    GraphSealed,
    #[error("`{function}` takes {expected} arguments, got {found}")]
    Arity { function: String, expected: usize, found: usize },
    #[error("`{function}` argument {index}: expected {expected}, got {found}")]
    TypeMismatch { function: String, index: usize, expected: String, found: String },
    #[error("handle {0} belongs to a different session")]
    ForeignHandle(ValueId),
    #[error("handle {0} is pending but not part of the current graph")]
    StaleHandle(ValueId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum WriteKey {
    Storage(usize),
    Value(ValueId),
}

/// Captured calls in program order plus their data dependencies.
#[derive(Debug, Default)]
pub struct DataflowGraph {
    session: u64,
    nodes: Vec<CallNode>,
    edges: Vec<Edge>,
    values: HashMap<ValueId, ValueSource>,
    buffers: HashMap<crate::value::BufferKey, ValueId>,
    last_writer: HashMap<WriteKey, (NodeId, Slot)>,
    sealed: bool,
}

impl DataflowGraph {
    pub fn new(session: u64) -> Self {
        DataflowGraph { session, ..Default::default() }
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[CallNode] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &CallNode {
        &self.nodes[id.0]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn in_edges(&self, node: NodeId) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(move |e| e.to == node)
    }

    pub fn value(&self, id: ValueId) -> Option<&ValueSource> {
        self.values.get(&id)
    }

    pub fn values(&self) -> impl Iterator<Item = (ValueId, &ValueSource)> {
        self.values.iter().map(|(k, v)| (*k, v))
    }

    pub fn is_sealed(&self) -> bool {
        self.sealed
    }

    pub fn seal(&mut self) {
        self.sealed = true;
    }

    pub fn unseal(&mut self) {
        self.sealed = false;
    }

    /// Declared data type of a graph value.
    pub fn value_type(&self, id: ValueId) -> Option<DataType> {
        match self.values.get(&id)? {
            ValueSource::Literal(v) => Some(v.data_type()),
            ValueSource::Result { ty, .. } => *ty,
        }
    }

    /// True when `storage` backs any value captured in this graph.
    pub fn references_storage(&self, storage: usize) -> bool {
        self.buffers.keys().any(|k| k.storage == storage)
    }

    fn write_key(&self, id: ValueId) -> WriteKey {
        match self.values.get(&id) {
            Some(ValueSource::Literal(v)) => match v.buffer_key() {
                Some(k) => WriteKey::Storage(k.storage),
                None => WriteKey::Value(id),
            },
            _ => WriteKey::Value(id),
        }
    }

    fn resolve_arg(&mut self, function: &FunctionDef, index: usize, arg: Arg) -> Result<ValueId, DataflowError> {
        let expected = function.signature().params[index].ty;
        let check = |found: DataType| {
            if found == expected {
                Ok(())
            } else {
                Err(DataflowError::TypeMismatch {
                    function: function.name().to_string(),
                    index,
                    expected: expected.to_string(),
                    found: found.to_string(),
                })
            }
        };
        let value = match arg {
            Arg::Lazy(h) => {
                if h.session() != self.session {
                    return Err(DataflowError::ForeignHandle(h.id()));
                }
                match h.get() {
                    Some(v) => v.clone(),
                    None => {
                        let id = h.canonical_id();
                        let ty = self.value_type(id).ok_or(DataflowError::StaleHandle(h.id()))?;
                        check(ty)?;
                        return Ok(id);
                    }
                }
            }
            Arg::Value(v) => v,
        };
        check(value.data_type())?;
        if let Some(key) = value.buffer_key() {
            if let Some(&id) = self.buffers.get(&key) {
                return Ok(id);
            }
            let id = fresh_value_id();
            self.buffers.insert(key, id);
            self.values.insert(id, ValueSource::Literal(value));
            return Ok(id);
        }
        let id = fresh_value_id();
        self.values.insert(id, ValueSource::Literal(value));
        Ok(id)
    }

    /// Appends a call. Returns a pending handle iff the annotation declares a
    /// return split type.
    pub fn register(&mut self, function: Arc<FunctionDef>, args: Vec<Arg>) -> Result<Option<LazyHandle>, DataflowError> {
        if self.sealed {
            return Err(DataflowError::GraphSealed);
        }
        let arity = function.signature().arity();
        if args.len() != arity {
            return Err(DataflowError::Arity { function: function.name().to_string(), expected: arity, found: args.len() });
        }
        let ids = args
            .into_iter()
            .enumerate()
            .map(|(i, a)| self.resolve_arg(&function, i, a))
            .collect::<Result<Vec<_>, _>>()?;

        let node = NodeId(self.nodes.len());
        let mut seen = HashSet::new();
        for &id in &ids {
            if let Some(&(from, from_slot)) = self.last_writer.get(&self.write_key(id)) {
                if seen.insert((from, id)) {
                    self.edges.push(Edge { from, to: node, value: id, from_slot });
                }
            }
        }
        for (i, p) in function.annotation().params.iter().enumerate() {
            if p.mutable {
                let key = self.write_key(ids[i]);
                self.last_writer.insert(key, (node, Slot::Arg(i)));
            }
        }
        let handle = function.annotation().ret.as_ref().map(|_| LazyHandle::new(self.session, fresh_value_id()));
        let ret = handle.as_ref().map(|h| {
            let id = h.canonical_id();
            self.values.insert(
                id,
                ValueSource::Result { producer: node, ty: function.signature().ret, handle: Arc::downgrade(&h.slot) },
            );
            self.last_writer.insert(WriteKey::Value(id), (node, Slot::Return));
            id
        });
        self.nodes.push(CallNode { id: node, seq: node.0, function, args: ids, ret });
        Ok(handle)
    }

    /// One trace line: `seq fn_name arg_ids mut_mask`.
    pub fn trace_line(&self, node: NodeId) -> String {
        let n = &self.nodes[node.0];
        let ids: Vec<String> = n.args.iter().map(ToString::to_string).collect();
        let mask: String =
            n.function.annotation().params.iter().map(|p| if p.mutable { '1' } else { '0' }).collect();
        format!("{} {} [{}] {}", n.seq, n.name(), ids.join(","), mask)
    }
}

/// Writes evaluated results into the handles that are still alive.
pub(crate) fn fill_handles(graph: &DataflowGraph, outputs: &HashMap<ValueId, Value>) {
    for (id, source) in &graph.values {
        if let ValueSource::Result { handle, .. } = source {
            if let (Some(slot), Some(v)) = (handle.upgrade(), outputs.get(id)) {
                LazyHandle::fill(&slot, v.clone());
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::Signature;

    fn f(name: &str, sa: &str, sig: Signature) -> Arc<FunctionDef> {
        Arc::new(FunctionDef::new(name, sa, sig, |_| Ok(None)).unwrap())
    }

    #[derive(Debug)]
    struct Buf(usize);
    impl crate::value::Data for Buf {
        fn buffer_key(&self) -> Option<crate::value::BufferKey> {
            Some(crate::value::BufferKey { storage: self.0, offset: 0, len: 4 })
        }
    }

    fn vd(name: &str) -> Arc<FunctionDef> {
        f(
            name,
            "@splittable(size: S, a: S, b: S, mut out: S)",
            Signature::new().arg::<i64>().arg::<Buf>().arg::<Buf>().arg_mut::<Buf>(),
        )
    }

    #[test]
    fn mut_buffers_create_edges() {
        let mut g = DataflowGraph::new(1);
        let log1p = f(
            "vd_log1p",
            "@splittable(size: S, a: S, mut out: S)",
            Signature::new().arg::<i64>().arg::<Buf>().arg_mut::<Buf>(),
        );
        let d1 = Value::new(Buf(100));
        let tmp = Value::new(Buf(200));
        assert!(g.register(log1p, vec![Arg::data(4i64), d1.clone().into(), d1.clone().into()]).unwrap().is_none());
        assert_eq!(g.edges().len(), 0);
        g.register(vd("vd_add"), vec![Arg::data(4i64), d1.clone().into(), tmp.clone().into(), d1.clone().into()])
            .unwrap();
        assert_eq!(g.edges(), &[Edge { from: NodeId(0), to: NodeId(1), value: g.nodes()[1].args[1], from_slot: Slot::Arg(2) }]);
        // write-after-write keeps order
        g.register(vd("vd_div"), vec![Arg::data(4i64), tmp.clone().into(), tmp.clone().into(), d1.into()]).unwrap();
        assert!(g.edges().iter().any(|e| e.from == NodeId(1) && e.to == NodeId(2)));
        assert_eq!(g.trace_line(NodeId(1)).split(' ').nth(1), Some("vd_add"));
        assert!(g.trace_line(NodeId(1)).ends_with(" 0001"));
    }

    #[test]
    fn returned_values_create_edges() {
        let mut g = DataflowGraph::new(7);
        let add = f("add", "@splittable(l: S, r: S) -> S", Signature::new().arg::<i64>().arg::<i64>().returns::<i64>());
        let scale = f("scale", "@splittable(m: S, v: _) -> S", Signature::new().arg::<i64>().arg::<f64>().returns::<i64>());
        let h = g.register(add, vec![Arg::data(1i64), Arg::data(2i64)]).unwrap().unwrap();
        assert!(!h.is_evaluated());
        let h2 = g.register(scale.clone(), vec![(&h).into(), Arg::data(2.0f64)]).unwrap().unwrap();
        assert_eq!(g.edges(), &[Edge { from: NodeId(0), to: NodeId(1), value: h.canonical_id(), from_slot: Slot::Return }]);
        assert_ne!(h2.id(), h.id());
        assert!(g.in_edges(NodeId(0)).next().is_none());

        let alias = h.alias();
        assert_eq!(alias.alias_of(), Some(h.id()));
        assert_ne!(alias.id(), h.id());
        g.register(scale.clone(), vec![alias.into(), Arg::data(3.0f64)]).unwrap();
        assert_eq!(g.edges().last().unwrap().value, h.canonical_id());

        let other = DataflowGraph::new(8);
        let mut other = other;
        assert!(matches!(other.register(scale.clone(), vec![(&h).into(), Arg::data(1.0f64)]), Err(DataflowError::ForeignHandle(_))));
        assert!(matches!(
            g.register(scale, vec![Arg::data(1.0f64), Arg::data(1.0f64)]),
            Err(DataflowError::TypeMismatch { index: 0, .. })
        ));
    }

    #[test]
    fn sealed_graph_rejects_registration() {
        let mut g = DataflowGraph::new(1);
        g.seal();
        let err = g.register(vd("vd_add"), vec![]).unwrap_err();
        assert_eq!(err, DataflowError::GraphSealed);
        g.unseal();
        assert!(matches!(g.register(vd("vd_add"), vec![]), Err(DataflowError::Arity { .. })));
    }
}
