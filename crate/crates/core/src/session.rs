//! The client-facing entry point: registers split kinds and annotated
//! functions, captures calls lazily, and evaluates on demand.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use crate::annotation::validate_annotation;
use crate::dataflow::{fill_handles, Arg, DataflowError, DataflowGraph, FunctionDef, LazyHandle};
use crate::executor::{execute, ExecConfig, ExecReport};
use crate::planner::{plan, ExecutionPlan};
use crate::split_types::{SplitKind, SplitRegistry};
use crate::value::Value;
use crate::Error;

static NEXT_SESSION: AtomicU64 = AtomicU64::new(1);

/// Cumulative time spent in each phase.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SessionStats {
    pub calls: u64,
    pub evaluations: u64,
    pub register_ns: u64,
    pub plan_ns: u64,
    pub exec_ns: u64,
}

pub struct Session {
    id: u64,
    registry: SplitRegistry,
    functions: HashMap<String, Arc<FunctionDef>>,
    graph: DataflowGraph,
    config: ExecConfig,
    stats: SessionStats,
    last_report: Option<ExecReport>,
    last_explain: Option<String>,
    trace: Vec<String>,
}

impl Default for Session {
    fn default() -> Self {
        Self::new()
    }
}

impl Session {
    pub fn new() -> Self {
        Self::with_config(ExecConfig::default())
    }

    pub fn with_config(config: ExecConfig) -> Self {
        let id = NEXT_SESSION.fetch_add(1, Ordering::Relaxed);
        Session {
            id,
            registry: SplitRegistry::new(),
            functions: HashMap::new(),
            graph: DataflowGraph::new(id),
            config,
            stats: SessionStats::default(),
            last_report: None,
            last_explain: None,
            trace: Vec::new(),
        }
    }

    pub fn registry(&self) -> &SplitRegistry {
        &self.registry
    }

    pub fn register_kind(&mut self, kind: SplitKind) -> Result<(), Error> {
        Ok(self.registry.register(kind)?)
    }

    pub fn config(&self) -> &ExecConfig {
        &self.config
    }

    pub fn config_mut(&mut self) -> &mut ExecConfig {
        &mut self.config
    }

    /// Validates the annotation against the signature and registered kinds,
    /// then makes the function callable by name.
    pub fn register_function(&mut self, mut def: FunctionDef) -> Result<Arc<FunctionDef>, Error> {
        let resolved = def.annotation().clone().resolve_kinds(&self.registry);
        *def.annotation_mut() = resolved;
        let report = validate_annotation(def.annotation(), def.signature(), &self.registry);
        if !report.is_valid() {
            return Err(Error::InvalidAnnotation { function: def.name().to_string(), report });
        }
        let def = Arc::new(def);
        self.functions.insert(def.name().to_string(), Arc::clone(&def));
        Ok(def)
    }

    pub fn function(&self, name: &str) -> Option<&Arc<FunctionDef>> {
        self.functions.get(name)
    }

    /// Captures a call to a registered function. Nothing runs yet.
    pub fn call(&mut self, name: &str, args: Vec<Arg>) -> Result<Option<LazyHandle>, Error> {
        let t = Instant::now();
        let function = self.functions.get(name).cloned().ok_or_else(|| Error::UnknownFunction(name.to_string()))?;
        let handle = self.graph.register(function, args)?;
        if self.config.trace {
            let line = self.graph.trace_line(crate::dataflow::NodeId(self.graph.nodes().len() - 1));
            log::info!("{line}");
            self.trace.push(line);
        }
        self.stats.calls += 1;
        self.stats.register_ns += t.elapsed().as_nanos() as u64;
        Ok(handle)
    }

    /// Evaluates pending calls if needed and returns the handle's data.
    pub fn force(&mut self, handle: &LazyHandle) -> Result<Value, Error> {
        if handle.session() != self.id {
            return Err(DataflowError::ForeignHandle(handle.id()).into());
        }
        if let Some(v) = handle.get() {
            return Ok(v.clone());
        }
        self.evaluate()?;
        handle.get().cloned().ok_or_else(|| DataflowError::StaleHandle(handle.id()).into())
    }

    /// Call before client code reads a buffer directly: evaluates if any
    /// pending call reads or writes its backing store.
    pub fn touch(&mut self, value: &Value) -> Result<(), Error> {
        match value.buffer_key() {
            Some(key) if self.graph.references_storage(key.storage) => self.evaluate(),
            _ => Ok(()),
        }
    }

    /// Number of captured calls not yet evaluated.
    pub fn pending_calls(&self) -> usize {
        self.graph.nodes().len()
    }

    pub fn graph(&self) -> &DataflowGraph {
        &self.graph
    }

    /// Plans the pending calls without running them.
    pub fn plan(&self) -> Result<ExecutionPlan, Error> {
        if self.graph.is_empty() {
            return Ok(ExecutionPlan::empty());
        }
        Ok(plan(&self.graph, &self.registry)?)
    }

    /// Plan of the pending calls, one line per stage.
    pub fn explain(&self) -> Result<String, Error> {
        Ok(self.plan()?.explain(&self.graph))
    }

    /// Plan of the most recent evaluation.
    pub fn last_explain(&self) -> Option<&str> {
        self.last_explain.as_deref()
    }

    /// Plans and runs everything captured so far. On failure the captured
    /// calls stay in place so they can be inspected.
    pub fn evaluate(&mut self) -> Result<(), Error> {
        if self.graph.is_empty() {
            return Ok(());
        }
        self.graph.seal();
        let result = self.run();
        self.graph.unseal();
        result?;
        self.graph = DataflowGraph::new(self.id);
        Ok(())
    }

    fn run(&mut self) -> Result<(), Error> {
        let t = Instant::now();
        let plan = plan(&self.graph, &self.registry)?;
        self.stats.plan_ns += t.elapsed().as_nanos() as u64;
        let t = Instant::now();
        let (outputs, report) = execute(&self.graph, &plan, &self.registry, &self.config)?;
        self.stats.exec_ns += t.elapsed().as_nanos() as u64;
        fill_handles(&self.graph, &outputs);
        self.last_explain = Some(plan.explain(&self.graph));
        self.last_report = Some(report);
        self.stats.evaluations += 1;
        Ok(())
    }

    pub fn stats(&self) -> SessionStats {
        self.stats
    }

    pub fn last_report(&self) -> Option<&ExecReport> {
        self.last_report.as_ref()
    }

    /// Trace lines recorded while `trace` was enabled.
    pub fn trace_log(&self) -> &[String] {
        &self.trace
    }
}
