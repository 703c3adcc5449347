//! Turns a captured graph into an execution plan: split types are
//! constructed from captured arguments, generics are inferred along edges,
//! and calls are packed greedily into stages whose connecting values share a
//! split type.

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

use crate::annotation::SplitTypeExpr;
use crate::dataflow::{DataflowGraph, NodeId, Slot, ValueId, ValueSource};
use crate::value::BufferKey;
use crate::split_types::{CtorArg, CtorError, SplitError, SplitRegistry, SplitType, UNKNOWN};

/// Split type given to one argument or return value.
#[derive(Debug, Clone)]
pub enum Assigned {
    Split(SplitType),
    Missing,
}

impl Assigned {
    pub fn split_type(&self) -> Option<&SplitType> {
        match self {
            Assigned::Split(st) => Some(st),
            Assigned::Missing => None,
        }
    }
}

impl fmt::Display for Assigned {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Assigned::Split(st) => write!(f, "{st}"),
            Assigned::Missing => f.write_str("_"),
        }
    }
}

/// How an `unknown` that enters a later stage is turned into a concrete
/// split type once its data exists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Resolution {
    /// Re-split with the registered default for the data type.
    Default,
    /// Run the kind's constructor on the node's then-materialized arguments.
    Construct { node: NodeId, slot: Slot, kind: String },
}

/// One typed position, as reported by [`Assignments::typed_args`].
#[derive(Debug, Clone)]
pub struct TypedArg {
    pub node: NodeId,
    pub slot: Slot,
    pub assigned: Assigned,
}

/// Split types per (node, slot). Partial until [`infer`] runs.
#[derive(Debug, Clone, Default)]
pub struct Assignments {
    types: HashMap<(NodeId, Slot), Assigned>,
    resolutions: HashMap<u64, Resolution>,
}

impl Assignments {
    pub fn get(&self, node: NodeId, slot: Slot) -> Option<&Assigned> {
        self.types.get(&(node, slot))
    }

    pub fn resolution(&self, instance: u64) -> Option<&Resolution> {
        self.resolutions.get(&instance)
    }

    pub fn typed_args(&self) -> Vec<TypedArg> {
        let mut out: Vec<TypedArg> =
            self.types.iter().map(|(&(node, slot), a)| TypedArg { node, slot, assigned: a.clone() }).collect();
        out.sort_by_key(|t| (t.node, t.slot));
        out
    }

    fn set(&mut self, node: NodeId, slot: Slot, a: Assigned) {
        self.types.insert((node, slot), a);
    }

    fn fresh_unknown(&mut self, resolution: Resolution) -> SplitType {
        let st = SplitType::unknown();
        self.resolutions.insert(st.unknown_instance().expect("fresh unknown"), resolution);
        st
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("node {} (`{function}`): {source}", node.0)]
    Constructor { node: NodeId, function: String, source: SplitError },
    #[error("node {} (`{function}`): generic `{generic}` receives both {first} and {second}", node.0)]
    InferenceConflict { node: NodeId, function: String, generic: String, first: String, second: String },
    #[error("node {} (`{function}`): cannot infer generic `{generic}`: {reason}", node.0)]
    Unresolved { node: NodeId, function: String, generic: String, reason: String },
    #[error("node {} (`{function}`) writes a buffer view that partially overlaps another of its arguments", node.0)]
    OverlappingViews { node: NodeId, function: String },
    #[error("edge from node {} to node {} runs against program order", from.0, to.0)]
    CycleDetected { from: NodeId, to: NodeId },
}

fn slots_of(graph: &DataflowGraph, node: NodeId) -> impl Iterator<Item = (Slot, &SplitTypeExpr)> {
    let sa = graph.node(node).function.annotation();
    sa.params
        .iter()
        .enumerate()
        .map(|(i, p)| (Slot::Arg(i), &p.expr))
        .chain(sa.ret.iter().map(|r| (Slot::Return, r)))
}

/// Type assigned to the position that last wrote or returned `value` before
/// `node` read it.
fn incoming_type<'a>(graph: &DataflowGraph, types: &'a Assignments, node: NodeId, value: ValueId) -> Option<&'a Assigned> {
    graph
        .in_edges(node)
        .find(|e| e.value == value)
        .and_then(|e| types.get(e.from, e.from_slot))
}

/// Constructs split types that depend only on captured literals, creates a
/// fresh `unknown` per `-> unknown`, and marks `_` as missing. Generics and
/// constructors over pending values are left for [`infer`].
pub fn assign_split_types(graph: &DataflowGraph, registry: &SplitRegistry) -> Result<Assignments, PlanError> {
    let mut types = Assignments::default();
    for node in graph.nodes() {
        let slots: Vec<(Slot, SplitTypeExpr)> = slots_of(graph, node.id).map(|(s, e)| (s, e.clone())).collect();
        for (slot, expr) in slots {
            match expr {
                SplitTypeExpr::Missing => types.set(node.id, slot, Assigned::Missing),
                SplitTypeExpr::Unknown => {
                    let st = types.fresh_unknown(Resolution::Default);
                    types.set(node.id, slot, Assigned::Split(st));
                }
                SplitTypeExpr::Constructor { kind, args } => {
                    let values: Vec<Option<&crate::value::Value>> =
                        ctor_values(graph, node.id, &args).into_iter().map(|v| graph.value(v)?.literal()).collect();
                    if values.iter().all(Option::is_some) {
                        let ctor_args: Vec<CtorArg<'_>> = values.into_iter().flatten().map(CtorArg::Data).collect();
                        let st = registry.construct(&kind, &ctor_args).map_err(|source| PlanError::Constructor {
                            node: node.id,
                            function: node.name().to_string(),
                            source,
                        })?;
                        types.set(node.id, slot, Assigned::Split(st));
                    }
                }
                SplitTypeExpr::Generic(_) => {}
            }
        }
    }
    Ok(types)
}

fn ctor_values(graph: &DataflowGraph, node: NodeId, args: &[String]) -> Vec<ValueId> {
    let n = graph.node(node);
    let sa = n.function.annotation();
    args.iter()
        .map(|a| n.args[sa.param_index(a).expect("constructor arguments are validated at parse time")])
        .collect()
}

/// Completes a partial assignment.
///
/// Known types are pushed forward along edges into generic consumers; all
/// positions sharing a generic within one annotation get the same type.
/// Program order is a topological order of the graph, so one pass in that
/// order reaches the fixed point. A generic that receives nothing falls back
/// to the registered default split type of one of its literal arguments.
pub fn infer(graph: &DataflowGraph, registry: &SplitRegistry, mut types: Assignments) -> Result<Assignments, PlanError> {
    for node in graph.nodes() {
        let id = node.id;
        let function = node.name().to_string();
        let slots: Vec<(Slot, SplitTypeExpr)> = slots_of(graph, id).map(|(s, e)| (s, e.clone())).collect();

        for (slot, expr) in &slots {
            let SplitTypeExpr::Constructor { kind, args } = expr else { continue };
            if types.get(id, *slot).is_some() {
                continue;
            }
            let values = ctor_values(graph, id, args);
            let pending_types: Vec<Option<SplitType>> = values
                .iter()
                .map(|&v| incoming_type(graph, &types, id, v).and_then(|a| a.split_type().cloned()))
                .collect();
            let ctor_args: Vec<CtorArg<'_>> = values
                .iter()
                .zip(&pending_types)
                .map(|(&v, pt)| match graph.value(v).and_then(ValueSource::literal) {
                    Some(lit) => CtorArg::Data(lit),
                    None => CtorArg::Pending(pt.as_ref()),
                })
                .collect();
            let constructor_err = |source| PlanError::Constructor { node: id, function: function.clone(), source };
            let st = match registry.try_construct(kind, &ctor_args).map_err(constructor_err)? {
                Ok(st) => st,
                Err(CtorError::NeedsData) => {
                    types.fresh_unknown(Resolution::Construct { node: id, slot: *slot, kind: kind.clone() })
                }
                Err(CtorError::Invalid(reason)) => {
                    return Err(constructor_err(SplitError::ConstructorFailure { kind: kind.clone(), reason }))
                }
            };
            types.set(id, *slot, Assigned::Split(st));
        }

        let mut generics: Vec<&str> = Vec::new();
        for (_, expr) in &slots {
            if let SplitTypeExpr::Generic(g) = expr {
                if !generics.contains(&g.as_str()) {
                    generics.push(g);
                }
            }
        }
        for g in generics {
            let members: Vec<Slot> = slots
                .iter()
                .filter(|(_, e)| matches!(e, SplitTypeExpr::Generic(n) if n == g))
                .map(|(s, _)| *s)
                .collect();
            let mut bound: Option<SplitType> = None;
            for slot in &members {
                let Slot::Arg(i) = *slot else { continue };
                let Some(Assigned::Split(incoming)) = incoming_type(graph, &types, id, node.args[i]) else { continue };
                match &bound {
                    None => bound = Some(incoming.clone()),
                    Some(b) if b.same_instance(incoming) => {}
                    Some(b) => {
                        return Err(PlanError::InferenceConflict {
                            node: id,
                            function,
                            generic: g.to_string(),
                            first: b.to_string(),
                            second: incoming.to_string(),
                        })
                    }
                }
            }
            let st = match bound {
                Some(st) => st,
                None => {
                    let literal = members.iter().find_map(|slot| match *slot {
                        Slot::Arg(i) => graph.value(node.args[i]).and_then(ValueSource::literal),
                        Slot::Return => None,
                    });
                    let Some(value) = literal else {
                        return Err(PlanError::Unresolved {
                            node: id,
                            function,
                            generic: g.to_string(),
                            reason: "no incoming split type and no captured argument to take a default from".into(),
                        });
                    };
                    registry.default_split_type(value).map_err(|e| PlanError::Unresolved {
                        node: id,
                        function: function.clone(),
                        generic: g.to_string(),
                        reason: e.to_string(),
                    })?
                }
            };
            for slot in members {
                types.set(id, slot, Assigned::Split(st.clone()));
            }
        }
    }
    Ok(types)
}

/// A pipeline of calls over commonly split inputs.
#[derive(Debug, Clone)]
pub struct Stage {
    pub calls: Vec<NodeId>,
    /// Values split at stage entry, in first-use order.
    pub input_splits: Vec<(ValueId, SplitType)>,
    /// Values passed whole to every batch.
    pub broadcasts: Vec<ValueId>,
    /// Returned values merged at stage exit because later stages or client
    /// code read them.
    pub output_merges: Vec<(ValueId, SplitType)>,
}

#[derive(Debug, Clone)]
pub struct ExecutionPlan {
    pub stages: Vec<Stage>,
    pub types: Assignments,
}

impl ExecutionPlan {
    pub fn empty() -> Self {
        ExecutionPlan { stages: Vec::new(), types: Assignments::default() }
    }

    /// One line per stage: the calls with their argument split types, then
    /// the values merged at the stage boundary.
    /// One line per stage. Unknown split types are numbered in order of
    /// first appearance and merged values are named by the call that
    /// produced them, so equal programs explain to equal text.
    pub fn explain(&self, graph: &DataflowGraph) -> String {
        let mut unknowns: HashMap<u64, usize> = HashMap::new();
        let mut show = |t: &SplitType| match t.unknown_instance() {
            Some(id) => {
                let next = unknowns.len();
                format!("{UNKNOWN}#{}", unknowns.entry(id).or_insert(next))
            }
            None => t.to_string(),
        };
        let mut out = String::new();
        for (k, stage) in self.stages.iter().enumerate() {
            let mut calls = Vec::new();
            for &n in &stage.calls {
                let node = graph.node(n);
                let sa = node.function.annotation();
                let mut args = Vec::new();
                for i in 0..node.args.len() {
                    let t = match self.types.get(n, Slot::Arg(i)) {
                        Some(Assigned::Split(t)) => show(t),
                        Some(Assigned::Missing) => "_".to_string(),
                        None => "?".to_string(),
                    };
                    args.push(if sa.params[i].mutable { format!("mut {t}") } else { t });
                }
                let ret = match self.types.get(n, Slot::Return) {
                    Some(Assigned::Split(t)) => format!(" -> {}", show(t)),
                    Some(Assigned::Missing) => " -> _".to_string(),
                    None => String::new(),
                };
                calls.push(format!("{}({}){ret}", node.name(), args.join(", ")));
            }
            out.push_str(&format!("stage {k}: {}", calls.join("; ")));
            if !stage.output_merges.is_empty() {
                let merges: Vec<String> = stage
                    .output_merges
                    .iter()
                    .map(|(v, st)| {
                        let name = match graph.value(*v) {
                            Some(ValueSource::Result { producer, .. }) => format!("call {}", producer.0),
                            _ => v.to_string(),
                        };
                        format!("{name} by {}", show(st))
                    })
                    .collect();
                out.push_str(&format!(" | merge {}", merges.join(", ")));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone)]
enum Mode {
    Split(SplitType),
    Broadcast,
}

#[derive(Debug, Clone)]
struct Usage {
    mode: Mode,
    returned_here: bool,
    written_here: bool,
    origin: bool,
}

#[derive(Default)]
struct StageBuilder {
    calls: Vec<NodeId>,
    order: Vec<ValueId>,
    usage: HashMap<ValueId, Usage>,
    /// Buffer views touched so far, with whether each is written.
    views: Vec<(ValueId, BufferKey, bool)>,
    /// Element count of the stage's split inputs, once one is known.
    count: Option<usize>,
}

/// Element counts of each call's split arguments that can be computed
/// before execution, i.e. those whose values already exist.
pub type KnownCounts = HashMap<NodeId, Vec<usize>>;

pub fn known_counts(graph: &DataflowGraph, types: &Assignments, registry: &SplitRegistry) -> KnownCounts {
    let mut counts = KnownCounts::new();
    for node in graph.nodes() {
        let mut found: Vec<usize> = Vec::new();
        for (i, &v) in node.args.iter().enumerate() {
            let Some(Assigned::Split(st)) = types.get(node.id, Slot::Arg(i)) else { continue };
            let Some(value) = graph.value(v).and_then(ValueSource::literal) else { continue };
            if st.is_unknown() {
                continue;
            }
            if let Ok(info) = registry.runtime_info(value, st) {
                if !found.contains(&info.total_elements) {
                    found.push(info.total_elements);
                }
            }
        }
        if !found.is_empty() {
            counts.insert(node.id, found);
        }
    }
    counts
}

fn buffer_of(graph: &DataflowGraph, v: ValueId) -> Option<BufferKey> {
    graph.value(v).and_then(ValueSource::literal).and_then(|x| x.buffer_key())
}

/// Two distinct, overlapping views of one store where either is written.
/// Batches of the two views cover different parts of the store, so one
/// batch can clobber data another batch has yet to read.
fn views_conflict(a: (ValueId, BufferKey, bool), b: (ValueId, BufferKey, bool)) -> bool {
    let ((va, ka, wa), (vb, kb, wb)) = (a, b);
    va != vb
        && ka.storage == kb.storage
        && (wa || wb)
        && ka.offset < kb.offset + kb.len
        && kb.offset < ka.offset + ka.len
}

fn node_views(graph: &DataflowGraph, node: NodeId) -> Vec<(ValueId, BufferKey, bool)> {
    let n = graph.node(node);
    let sa = n.function.annotation();
    n.args
        .iter()
        .enumerate()
        .filter_map(|(i, &v)| buffer_of(graph, v).map(|k| (v, k, sa.params[i].mutable)))
        .collect()
}

fn any_view_conflict(views: &[(ValueId, BufferKey, bool)]) -> bool {
    views.iter().enumerate().any(|(i, &a)| views[i + 1..].iter().any(|&b| views_conflict(a, b)))
}

impl StageBuilder {
    fn fits(&self, graph: &DataflowGraph, types: &Assignments, counts: Option<&KnownCounts>, node: NodeId) -> bool {
        let n = graph.node(node);
        if let Some(counts) = counts {
            let theirs = counts.get(&node);
            if let (Some(c), Some(theirs)) = (self.count, theirs) {
                if theirs.iter().any(|&t| t != c) {
                    return false;
                }
            }
            let connected = n.args.iter().enumerate().any(|(i, v)| {
                matches!(types.get(node, Slot::Arg(i)), Some(Assigned::Split(_)))
                    && self.usage.get(v).is_some_and(|u| matches!(u.mode, Mode::Split(_)))
            });
            if !connected && (self.count.is_none() || theirs.is_none()) {
                // unrelated data whose size may differ from the stage's
                return false;
            }
        }
        for e in graph.in_edges(node) {
            if self.calls.contains(&e.from) && graph.node(e.from).value_at(e.from_slot) != Some(e.value) {
                // a different view of a store written in this stage
                return false;
            }
        }
        for new in node_views(graph, node) {
            if self.views.iter().any(|&old| views_conflict(old, new)) {
                return false;
            }
        }
        for (i, &v) in n.args.iter().enumerate() {
            let assigned = types.get(node, Slot::Arg(i)).expect("assignments are complete");
            let Some(existing) = self.usage.get(&v) else { continue };
            match (assigned, &existing.mode) {
                (Assigned::Missing, Mode::Broadcast) => {}
                (Assigned::Missing, Mode::Split(_)) | (Assigned::Split(_), Mode::Broadcast) => return false,
                (Assigned::Split(st), Mode::Split(current)) => {
                    if existing.returned_here && existing.origin {
                        return false;
                    }
                    if !current.same_instance(st) {
                        return false;
                    }
                }
            }
        }
        true
    }

    fn add(&mut self, graph: &DataflowGraph, types: &Assignments, counts: Option<&KnownCounts>, node: NodeId) {
        let n = graph.node(node);
        if self.count.is_none() {
            self.count = counts.and_then(|c| c.get(&node)).map(|c| c[0]);
        }
        let sa = n.function.annotation();
        for (i, &v) in n.args.iter().enumerate() {
            let assigned = types.get(node, Slot::Arg(i)).expect("assignments are complete");
            let entry = self.usage.entry(v).or_insert_with(|| {
                self.order.push(v);
                Usage {
                    mode: match assigned {
                        Assigned::Split(st) => Mode::Split(st.clone()),
                        Assigned::Missing => Mode::Broadcast,
                    },
                    returned_here: false,
                    written_here: false,
                    origin: false,
                }
            });
            if sa.params[i].mutable {
                entry.written_here = true;
            }
        }
        self.views.extend(node_views(graph, node));
        if let (Some(ret), Some(Assigned::Split(st))) = (n.ret, types.get(node, Slot::Return)) {
            self.order.push(ret);
            self.usage.insert(
                ret,
                Usage {
                    mode: Mode::Split(st.clone()),
                    returned_here: true,
                    written_here: true,
                    origin: matches!(sa.ret, Some(SplitTypeExpr::Unknown)),
                },
            );
        }
        self.calls.push(node);
    }

    fn finish(self, graph: &DataflowGraph) -> Stage {
        let last = *self.calls.last().expect("stages are never empty");
        let mut stage = Stage {
            calls: self.calls,
            input_splits: Vec::new(),
            broadcasts: Vec::new(),
            output_merges: Vec::new(),
        };
        for v in self.order {
            let u = &self.usage[&v];
            match (&u.mode, u.returned_here) {
                (Mode::Broadcast, _) => stage.broadcasts.push(v),
                (Mode::Split(st), false) => stage.input_splits.push((v, st.clone())),
                (Mode::Split(st), true) => {
                    let read_later = graph.nodes()[last.0 + 1..].iter().any(|n| n.args.contains(&v));
                    let escapes = graph.value(v).is_some_and(ValueSource::escapes);
                    if read_later || escapes {
                        stage.output_merges.push((v, st.clone()));
                    }
                }
            }
        }
        stage
    }
}

/// Greedy program-order packing: a call joins the current stage iff every
/// value it shares with the stage is split the same way there.
pub fn build_stages(graph: &DataflowGraph, types: Assignments) -> Result<ExecutionPlan, PlanError> {
    pack(graph, types, None)
}

/// [`build_stages`], but a call that shares no split value with the stage
/// only joins when its element count is known and equals the stage's, and
/// known counts must always agree.
pub fn build_stages_with_counts(
    graph: &DataflowGraph,
    types: Assignments,
    counts: &KnownCounts,
) -> Result<ExecutionPlan, PlanError> {
    pack(graph, types, Some(counts))
}

fn pack(graph: &DataflowGraph, types: Assignments, counts: Option<&KnownCounts>) -> Result<ExecutionPlan, PlanError> {
    for e in graph.edges() {
        if e.from >= e.to {
            return Err(PlanError::CycleDetected { from: e.from, to: e.to });
        }
    }
    let mut stages = Vec::new();
    let mut current = StageBuilder::default();
    for node in graph.nodes() {
        if any_view_conflict(&node_views(graph, node.id)) {
            return Err(PlanError::OverlappingViews { node: node.id, function: node.name().to_string() });
        }
        if !current.calls.is_empty() && !current.fits(graph, &types, counts, node.id) {
            stages.push(std::mem::take(&mut current).finish(graph));
        }
        current.add(graph, &types, counts, node.id);
    }
    if !current.calls.is_empty() {
        stages.push(current.finish(graph));
    }
    Ok(ExecutionPlan { stages, types })
}

/// Assign, infer, and stage in one go.
pub fn plan(graph: &DataflowGraph, registry: &SplitRegistry) -> Result<ExecutionPlan, PlanError> {
    let partial = assign_split_types(graph, registry)?;
    let types = infer(graph, registry, partial)?;
    let counts = known_counts(graph, &types, registry);
    build_stages_with_counts(graph, types, &counts)
}

/// Re-checks a plan from the graph: every intra-stage edge must connect
/// equal split types (or the same propagated `unknown`) over the same view,
/// and no stage may touch overlapping views of a store it writes.
/// Returns a description of each problem found.
pub fn verify_plan(graph: &DataflowGraph, plan: &ExecutionPlan) -> Vec<String> {
    let stage_of: HashMap<NodeId, usize> =
        plan.stages.iter().enumerate().flat_map(|(k, s)| s.calls.iter().map(move |&n| (n, k))).collect();
    let mut bad = Vec::new();
    for e in graph.edges() {
        if stage_of.get(&e.from) != stage_of.get(&e.to) {
            continue;
        }
        let producer = plan.types.get(e.from, e.from_slot);
        let consumer_slots: Vec<usize> =
            graph.node(e.to).args.iter().enumerate().filter(|(_, &v)| v == e.value).map(|(i, _)| i).collect();
        let ok = consumer_slots.iter().all(|&i| match (producer, plan.types.get(e.to, Slot::Arg(i))) {
            (Some(Assigned::Split(p)), Some(Assigned::Split(c))) => {
                if p.is_unknown() {
                    let origin = e.from_slot == Slot::Return
                        && matches!(graph.node(e.from).function.annotation().ret, Some(SplitTypeExpr::Unknown));
                    !origin && p.same_instance(c)
                } else {
                    p == c
                }
            }
            _ => false,
        }) && graph.node(e.from).value_at(e.from_slot) == Some(e.value);
        if !ok {
            bad.push(format!("edge {} -> {} on {} crosses split types inside a stage", e.from.0, e.to.0, e.value));
        }
    }
    for (k, stage) in plan.stages.iter().enumerate() {
        let views: Vec<_> = stage.calls.iter().flat_map(|&c| node_views(graph, c)).collect();
        if any_view_conflict(&views) {
            bad.push(format!("stage {k} touches overlapping views of a store it writes"));
        }
    }
    bad
}
