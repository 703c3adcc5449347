//! Runs an execution plan: each stage splits its inputs into cache-sized
//! batches, runs every call of the stage over one batch before moving on to
//! the next, and merges the pieces of the values that outlive the stage.

use std::collections::{HashMap, HashSet};
use std::ops::Range;
use std::time::Instant;

use thiserror::Error;

use crate::dataflow::{DataflowGraph, NodeId, ValueId, ValueSource};
use crate::planner::{ExecutionPlan, Resolution, Stage};
use crate::split_types::{CtorArg, SplitError, SplitRegistry, SplitType, WorkerCtx};
use crate::value::Value;

pub const DEFAULT_L2_BYTES: usize = 256 * 1024;

/// Executor settings. [`ExecConfig::from_env`] reads `SPLITANN_*` variables.
#[derive(Debug, Clone, PartialEq)]
pub struct ExecConfig {
    pub threads: usize,
    /// Fixed batch size in elements; bypasses the cache heuristic.
    pub batch_override: Option<usize>,
    pub l2_bytes: usize,
    /// Fraction of L2 one batch's inputs may occupy.
    pub c_constant: f64,
    /// When false every call runs over all batches before the next call.
    pub pipelining: bool,
    /// Turns silent split anomalies into errors.
    pub pedantic: bool,
    /// Logs each captured call at registration.
    pub trace: bool,
}

impl Default for ExecConfig {
    fn default() -> Self {
        ExecConfig {
            threads: 1,
            batch_override: None,
            l2_bytes: DEFAULT_L2_BYTES,
            c_constant: 1.0,
            pipelining: true,
            pedantic: false,
            trace: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("bad value for {var}: `{value}`")]
pub struct ConfigError {
    pub var: String,
    pub value: String,
}

impl ExecConfig {
    /// Defaults overridden by `SPLITANN_THREADS`, `SPLITANN_BATCH`,
    /// `SPLITANN_L2_BYTES`, `SPLITANN_C`, `SPLITANN_NO_PIPELINE`,
    /// `SPLITANN_PEDANTIC` and `SPLITANN_TRACE`.
    pub fn from_env() -> Result<Self, ConfigError> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    pub fn from_lookup(lookup: impl Fn(&str) -> Option<String>) -> Result<Self, ConfigError> {
        fn parse<T: std::str::FromStr>(var: &str, value: String) -> Result<T, ConfigError> {
            value.trim().parse().map_err(|_| ConfigError { var: var.to_string(), value })
        }
        fn flag(var: &str, value: String) -> Result<bool, ConfigError> {
            match value.trim().to_ascii_lowercase().as_str() {
                "1" | "true" | "yes" | "on" => Ok(true),
                "0" | "false" | "no" | "off" | "" => Ok(false),
                _ => Err(ConfigError { var: var.to_string(), value }),
            }
        }
        let mut cfg = ExecConfig::default();
        if let Some(v) = lookup("SPLITANN_THREADS") {
            cfg.threads = parse("SPLITANN_THREADS", v)?;
        }
        if let Some(v) = lookup("SPLITANN_BATCH") {
            cfg.batch_override = Some(parse("SPLITANN_BATCH", v)?);
        }
        if let Some(v) = lookup("SPLITANN_L2_BYTES") {
            cfg.l2_bytes = parse("SPLITANN_L2_BYTES", v)?;
        }
        if let Some(v) = lookup("SPLITANN_C") {
            cfg.c_constant = parse("SPLITANN_C", v)?;
        }
        if let Some(v) = lookup("SPLITANN_NO_PIPELINE") {
            cfg.pipelining = !flag("SPLITANN_NO_PIPELINE", v)?;
        }
        if let Some(v) = lookup("SPLITANN_PEDANTIC") {
            cfg.pedantic = flag("SPLITANN_PEDANTIC", v)?;
        }
        if let Some(v) = lookup("SPLITANN_TRACE") {
            cfg.trace = flag("SPLITANN_TRACE", v)?;
        }
        cfg.threads = cfg.threads.max(1);
        Ok(cfg)
    }

    /// Elements per batch so that one batch of every split input fits in
    /// `c_constant * l2_bytes`.
    pub fn batch_size(&self, element_bytes: usize) -> usize {
        if let Some(b) = self.batch_override {
            return b.max(1);
        }
        let budget = self.c_constant * self.l2_bytes as f64;
        ((budget / element_bytes.max(1) as f64).floor() as usize).max(1)
    }
}

/// Splits `0..total` into `workers` contiguous ranges whose sizes differ by
/// at most one; earlier ranges take the remainder.
pub fn partition(total: usize, workers: usize) -> Vec<Range<usize>> {
    let workers = workers.max(1);
    let (base, extra) = (total / workers, total % workers);
    let mut start = 0;
    (0..workers)
        .map(|w| {
            let len = base + usize::from(w < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExecError {
    #[error("stage {stage}: {source}")]
    Split { stage: usize, source: SplitError },
    #[error("stage {stage}: value {value} has {found} elements, expected {expected}")]
    ElementCountMismatch { stage: usize, value: ValueId, expected: usize, found: usize },
    #[error("stage {stage}: `{function}` failed: {message}")]
    Kernel { stage: usize, function: String, message: String },
    #[error("stage {stage}: value {value} produced an empty piece")]
    EmptySplit { stage: usize, value: ValueId },
    #[error("stage {stage}: `{context}` yielded no data where data was expected")]
    NullData { stage: usize, context: String },
    #[error("stage {stage}: worker panicked: {message}")]
    WorkerPanic { stage: usize, message: String },
    #[error("stage {stage}: split type {split_type} of value {value} cannot be resolved: {reason}")]
    Unresolved { stage: usize, value: ValueId, split_type: String, reason: String },
    #[error("stage {stage}: value {value} is not available")]
    MissingValue { stage: usize, value: ValueId },
}

/// Timings and sizes for one stage. Times are summed over workers.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StageReport {
    pub calls: usize,
    pub elements: usize,
    pub batch: usize,
    pub batches: usize,
    pub workers: usize,
    pub split_ns: u64,
    pub exec_ns: u64,
    pub merge_ns: u64,
    pub wall_ns: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExecReport {
    pub stages: Vec<StageReport>,
}

impl ExecReport {
    pub fn total(&self) -> StageReport {
        let mut t = StageReport::default();
        for s in &self.stages {
            t.calls += s.calls;
            t.batches += s.batches;
            t.split_ns += s.split_ns;
            t.exec_ns += s.exec_ns;
            t.merge_ns += s.merge_ns;
            t.wall_ns += s.wall_ns;
        }
        t
    }
}

/// Everything a stage's workers share.
struct StageCtx<'a> {
    stage_index: usize,
    stage: &'a Stage,
    graph: &'a DataflowGraph,
    registry: &'a SplitRegistry,
    cfg: &'a ExecConfig,
    inputs: Vec<(ValueId, &'a Value, SplitType)>,
    broadcasts: Vec<(ValueId, &'a Value)>,
    /// Merge types of the stage outputs, `None` when only the pieces know.
    outputs: Vec<(ValueId, Option<SplitType>)>,
    batch: usize,
}

#[derive(Default)]
struct WorkerResult {
    pieces: HashMap<ValueId, Vec<Value>>,
    batches: usize,
    split_ns: u64,
    exec_ns: u64,
    merge_ns: u64,
}

fn nanos(since: Instant) -> u64 {
    since.elapsed().as_nanos() as u64
}

impl StageCtx<'_> {
    fn split_batch(
        &self,
        range: Range<usize>,
        ctx: &WorkerCtx,
    ) -> Result<Option<HashMap<ValueId, Value>>, ExecError> {
        let stage = self.stage_index;
        let mut state = HashMap::with_capacity(self.inputs.len() + self.broadcasts.len());
        let mut ended = Vec::new();
        let mut lens = Vec::new();
        for (id, value, st) in &self.inputs {
            match self.registry.split(value, range.clone(), st, ctx).map_err(|source| ExecError::Split { stage, source })? {
                Some(piece) => {
                    lens.push((*id, piece.range.len()));
                    state.insert(*id, piece.value);
                }
                None => ended.push(*id),
            }
        }
        if !ended.is_empty() {
            if self.cfg.pedantic && !lens.is_empty() {
                return Err(ExecError::NullData { stage, context: format!("split of {}", ended[0]) });
            }
            return Ok(None);
        }
        if self.cfg.pedantic {
            if let Some(&(value, 0)) = lens.iter().find(|(_, n)| *n == 0) {
                return Err(ExecError::EmptySplit { stage, value });
            }
            if let Some(&(value, found)) = lens.iter().find(|(_, n)| *n != lens[0].1) {
                return Err(ExecError::ElementCountMismatch { stage, value, expected: lens[0].1, found });
            }
        }
        for (id, v) in &self.broadcasts {
            state.insert(*id, (*v).clone());
        }
        Ok(Some(state))
    }

    fn run_call(&self, node: NodeId, state: &mut HashMap<ValueId, Value>) -> Result<(), ExecError> {
        let stage = self.stage_index;
        let n = self.graph.node(node);
        let args = n
            .args
            .iter()
            .map(|id| state.get(id).cloned().ok_or(ExecError::MissingValue { stage, value: *id }))
            .collect::<Result<Vec<_>, _>>()?;
        let out = n
            .function
            .call(&args)
            .map_err(|message| ExecError::Kernel { stage, function: n.name().to_string(), message })?;
        match (n.ret, out) {
            (Some(ret), Some(v)) => {
                state.insert(ret, v);
            }
            (Some(_), None) => return Err(ExecError::NullData { stage, context: n.name().to_string() }),
            (None, _) => {}
        }
        Ok(())
    }

    fn keep_outputs(&self, state: &HashMap<ValueId, Value>, result: &mut WorkerResult) {
        for (id, _) in &self.outputs {
            if let Some(v) = state.get(id) {
                result.pieces.entry(*id).or_default().push(v.clone());
            }
        }
    }

    fn merge(&self, id: ValueId, st: Option<&SplitType>, mut pieces: Vec<Value>) -> Result<Value, ExecError> {
        let stage = self.stage_index;
        if pieces.len() == 1 {
            return Ok(pieces.pop().expect("one piece"));
        }
        let st = match st {
            Some(st) => st.clone(),
            None => self.registry.default_split_type(&pieces[0]).map_err(|e| ExecError::Unresolved {
                stage,
                value: id,
                split_type: "unknown".into(),
                reason: e.to_string(),
            })?,
        };
        self.registry.merge(pieces, &st).map_err(|source| ExecError::Split { stage, source })
    }

    fn worker(&self, range: Range<usize>, worker_id: usize, worker_count: usize) -> Result<WorkerResult, ExecError> {
        let mut result = WorkerResult::default();
        let batches: Vec<Range<usize>> = (range.start..range.end)
            .step_by(self.batch)
            .map(|s| s..s.saturating_add(self.batch).min(range.end))
            .collect();
        let ctx_for = |batch_index| WorkerCtx { worker_id, worker_count, batch_index };
        if self.cfg.pipelining {
            for (i, b) in batches.into_iter().enumerate() {
                let t = Instant::now();
                let state = self.split_batch(b, &ctx_for(i))?;
                result.split_ns += nanos(t);
                let Some(mut state) = state else { break };
                let t = Instant::now();
                for &node in &self.stage.calls {
                    self.run_call(node, &mut state)?;
                }
                result.exec_ns += nanos(t);
                self.keep_outputs(&state, &mut result);
                result.batches += 1;
            }
        } else {
            let t = Instant::now();
            let mut states = Vec::with_capacity(batches.len());
            for (i, b) in batches.into_iter().enumerate() {
                match self.split_batch(b, &ctx_for(i))? {
                    Some(s) => states.push(s),
                    None => break,
                }
            }
            result.split_ns += nanos(t);
            let t = Instant::now();
            for &node in &self.stage.calls {
                for state in &mut states {
                    self.run_call(node, state)?;
                }
            }
            result.exec_ns += nanos(t);
            for state in &states {
                self.keep_outputs(state, &mut result);
            }
            result.batches = states.len();
        }
        let t = Instant::now();
        let mut merged = HashMap::new();
        for (id, st) in &self.outputs {
            if let Some(pieces) = result.pieces.remove(id) {
                merged.insert(*id, vec![self.merge(*id, st.as_ref(), pieces)?]);
            }
        }
        result.pieces = merged;
        result.merge_ns += nanos(t);
        Ok(result)
    }
}

fn panic_message(payload: Box<dyn std::any::Any + Send>) -> String {
    payload
        .downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| payload.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "non-string panic payload".into())
}

fn lookup<'a>(
    graph: &'a DataflowGraph,
    materialized: &'a HashMap<ValueId, Value>,
    stage: usize,
    id: ValueId,
) -> Result<&'a Value, ExecError> {
    materialized
        .get(&id)
        .or_else(|| graph.value(id).and_then(ValueSource::literal))
        .ok_or(ExecError::MissingValue { stage, value: id })
}

/// Turns an `unknown` that reaches a stage boundary into a concrete type.
fn resolve(
    graph: &DataflowGraph,
    plan: &ExecutionPlan,
    registry: &SplitRegistry,
    materialized: &HashMap<ValueId, Value>,
    stage: usize,
    id: ValueId,
    value: &Value,
    st: &SplitType,
) -> Result<SplitType, ExecError> {
    let Some(instance) = st.unknown_instance() else { return Ok(st.clone()) };
    let unresolved = |reason: String| ExecError::Unresolved { stage, value: id, split_type: st.to_string(), reason };
    match plan.types.resolution(instance) {
        Some(Resolution::Construct { node, slot: _, kind }) => {
            let n = graph.node(*node);
            let sa = n.function.annotation();
            let params = sa
                .params
                .iter()
                .find_map(|p| match &p.expr {
                    crate::annotation::SplitTypeExpr::Constructor { kind: k, args } if k == kind => Some(args.clone()),
                    _ => None,
                })
                .unwrap_or_default();
            let values = params
                .iter()
                .map(|a| {
                    let vid = n.args[sa.param_index(a).expect("validated")];
                    lookup(graph, materialized, stage, vid)
                })
                .collect::<Result<Vec<_>, _>>()?;
            let args: Vec<CtorArg<'_>> = values.into_iter().map(CtorArg::Data).collect();
            registry.construct(kind, &args).map_err(|e| unresolved(e.to_string()))
        }
        Some(Resolution::Default) | None => registry.default_split_type(value).map_err(|e| unresolved(e.to_string())),
    }
}

/// Executes `plan`, returning every value merged at a stage boundary.
pub fn execute(
    graph: &DataflowGraph,
    plan: &ExecutionPlan,
    registry: &SplitRegistry,
    cfg: &ExecConfig,
) -> Result<(HashMap<ValueId, Value>, ExecReport), ExecError> {
    let mut materialized: HashMap<ValueId, Value> = HashMap::new();
    let mut report = ExecReport::default();
    for (k, stage) in plan.stages.iter().enumerate() {
        let (outputs, stage_report) = run_stage(graph, plan, registry, cfg, &materialized, k, stage)?;
        log::debug!("stage {k}: {stage_report:?}");
        materialized.extend(outputs);
        report.stages.push(stage_report);
    }
    Ok((materialized, report))
}

fn run_stage(
    graph: &DataflowGraph,
    plan: &ExecutionPlan,
    registry: &SplitRegistry,
    cfg: &ExecConfig,
    materialized: &HashMap<ValueId, Value>,
    k: usize,
    stage: &Stage,
) -> Result<(HashMap<ValueId, Value>, StageReport), ExecError> {
    let wall = Instant::now();
    let split_err = |source| ExecError::Split { stage: k, source };

    let mut resolved_instances: HashMap<u64, SplitType> = HashMap::new();
    let mut inputs = Vec::with_capacity(stage.input_splits.len());
    for (id, st) in &stage.input_splits {
        let value = lookup(graph, materialized, k, *id)?;
        let concrete = resolve(graph, plan, registry, materialized, k, *id, value, st)?;
        if let (Some(i), Some(Resolution::Construct { .. })) =
            (st.unknown_instance(), st.unknown_instance().and_then(|i| plan.types.resolution(i)))
        {
            resolved_instances.insert(i, concrete.clone());
        }
        inputs.push((*id, value, concrete));
    }
    let broadcasts = stage
        .broadcasts
        .iter()
        .map(|id| lookup(graph, materialized, k, *id).map(|v| (*id, v)))
        .collect::<Result<Vec<_>, _>>()?;
    let outputs: Vec<(ValueId, Option<SplitType>)> = stage
        .output_merges
        .iter()
        .map(|(id, st)| match st.unknown_instance() {
            None => (*id, Some(st.clone())),
            Some(i) => (*id, resolved_instances.get(&i).cloned()),
        })
        .collect();

    let mut total = None;
    let mut element_bytes = 0;
    for (id, value, st) in &inputs {
        let info = registry.runtime_info(value, st).map_err(split_err)?;
        match total {
            None => total = Some(info.total_elements),
            Some(t) if t != info.total_elements => {
                return Err(ExecError::ElementCountMismatch { stage: k, value: *id, expected: t, found: info.total_elements })
            }
            Some(_) => {}
        }
        element_bytes += info.element_size_bytes;
    }
    let total = total.unwrap_or(0);

    // Keep outside code away from the buffers this stage reads and writes.
    let mut seen = HashSet::new();
    let _guards: Vec<Box<dyn std::any::Any>> = inputs
        .iter()
        .map(|(_, v, _)| *v)
        .chain(broadcasts.iter().map(|(_, v)| *v))
        .filter(|v| v.buffer_key().map_or(true, |b| seen.insert(b.storage)))
        .filter_map(Value::exclusive_access)
        .collect();

    let batch = cfg.batch_size(element_bytes);
    let ctx = StageCtx { stage_index: k, stage, graph, registry, cfg, inputs, broadcasts, outputs, batch };
    let mut report = StageReport { calls: stage.calls.len(), elements: total, batch, ..Default::default() };

    if total == 0 {
        if cfg.pedantic && !ctx.inputs.is_empty() {
            return Err(ExecError::EmptySplit { stage: k, value: ctx.inputs[0].0 });
        }
        // Nothing to split: run once on whole values.
        let mut state: HashMap<ValueId, Value> =
            ctx.inputs.iter().map(|(id, v, _)| (*id, (*v).clone())).collect();
        state.extend(ctx.broadcasts.iter().map(|(id, v)| (*id, (*v).clone())));
        let t = Instant::now();
        for &node in &stage.calls {
            ctx.run_call(node, &mut state)?;
        }
        report.exec_ns = nanos(t);
        report.workers = 1;
        report.batches = 1;
        report.wall_ns = nanos(wall);
        let out = ctx.outputs.iter().filter_map(|(id, _)| state.remove(id).map(|v| (*id, v))).collect();
        return Ok((out, report));
    }

    let workers = cfg.threads.max(1).min(total);
    let ranges = partition(total, workers);
    let results: Vec<Result<WorkerResult, ExecError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = ranges
            .into_iter()
            .enumerate()
            .map(|(w, r)| {
                let ctx = &ctx;
                scope.spawn(move || ctx.worker(r, w, workers))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|p| Err(ExecError::WorkerPanic { stage: k, message: panic_message(p) })))
            .collect()
    });

    let mut per_value: HashMap<ValueId, Vec<Value>> = HashMap::new();
    for r in results {
        let r = r?;
        report.batches += r.batches;
        report.split_ns += r.split_ns;
        report.exec_ns += r.exec_ns;
        report.merge_ns += r.merge_ns;
        for (id, mut pieces) in r.pieces {
            per_value.entry(id).or_default().append(&mut pieces);
        }
    }
    report.workers = workers;

    let t = Instant::now();
    let mut out = HashMap::new();
    for (id, st) in &ctx.outputs {
        if let Some(pieces) = per_value.remove(id) {
            out.insert(*id, ctx.merge(*id, st.as_ref(), pieces)?);
        }
    }
    report.merge_ns += nanos(t);
    report.wall_ns = nanos(wall);
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_size_from_cache() {
        let cfg = ExecConfig::default();
        // three f64 arrays and a length of size 0
        assert_eq!(cfg.batch_size(24), 10922);
        assert_eq!(cfg.batch_size(0), 262_144);
        let cfg = ExecConfig { batch_override: Some(100), ..cfg };
        assert_eq!(cfg.batch_size(24), 100);
        let half = ExecConfig { c_constant: 0.5, ..ExecConfig::default() };
        assert_eq!(half.batch_size(8), 16384);
    }

    #[test]
    fn partition_is_balanced() {
        assert_eq!(partition(10, 3), vec![0..4, 4..7, 7..10]);
        assert_eq!(partition(2, 4), vec![0..1, 1..2, 2..2, 2..2]);
        assert_eq!(partition(0, 1), vec![0..0]);
    }

    #[test]
    fn config_from_lookup() {
        let vars: HashMap<&str, &str> = [("SPLITANN_THREADS", "4"), ("SPLITANN_NO_PIPELINE", "1"), ("SPLITANN_C", "0.5")]
            .into_iter()
            .collect();
        let cfg = ExecConfig::from_lookup(|k| vars.get(k).map(|s| s.to_string())).unwrap();
        assert_eq!(cfg.threads, 4);
        assert!(!cfg.pipelining);
        assert_eq!(cfg.c_constant, 0.5);
        let err = ExecConfig::from_lookup(|k| (k == "SPLITANN_PEDANTIC").then(|| "maybe".to_string())).unwrap_err();
        assert_eq!(err.var, "SPLITANN_PEDANTIC");
    }
}
