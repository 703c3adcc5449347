//! Split annotations: run unmodified data-parallel library functions in
//! cache-sized, pipelined batches.
//!
//! Functions are registered with an annotation such as
//! `@splittable(size: SizeSplit(size), a: ArraySplit(size), mut out: ArraySplit(size))`.
//! Calls through a [`Session`] are captured lazily; forcing a result plans
//! the captured calls into stages and runs each stage batch by batch across
//! worker threads.

pub mod annotation;
pub mod dataflow;
pub mod executor;
pub mod planner;
pub mod session;
pub mod split_types;
pub mod value;

pub use annotation::{
    parse_annotation, validate_annotation, AnnotationError, Signature, SplitAnnotation, SplitTypeExpr,
    ValidationReport, Violation,
};
pub use dataflow::{Arg, DataflowError, DataflowGraph, FunctionDef, LazyHandle, NodeId, Slot, ValueId};
pub use executor::{partition, ExecConfig, ExecError, ExecReport, StageReport};
pub use planner::{Assigned, ExecutionPlan, KnownCounts, PlanError, Stage};
pub use session::{Session, SessionStats};
pub use split_types::{
    split_type_eq, CtorArg, CtorError, Param, RuntimeInfo, SplitError, SplitKind, SplitPiece, SplitRegistry, SplitType,
    WorkerCtx, UNKNOWN,
};
pub use value::{BufferKey, Data, DataType, Value};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
    #[error("invalid annotation on `{function}`: {report}")]
    InvalidAnnotation { function: String, report: ValidationReport },
    #[error("no function named `{0}` is registered")]
    UnknownFunction(String),
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error(transparent)]
    Dataflow(#[from] DataflowError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Exec(#[from] ExecError),
}
