//! Type-erased values that flow through the dataflow graph.

use std::any::{Any, TypeId};
use std::fmt;
use std::sync::Arc;

/// Data that can be passed to annotated functions.
///
/// Implementors are shared across worker threads. Types with an in-place
/// mutable backing store report it through [`Data::buffer_key`] so that the
/// dataflow graph can add write dependencies, and may hand the executor an
/// exclusive guard for the duration of a stage.
pub trait Data: Any + Send + Sync + fmt::Debug {
    fn type_name(&self) -> &'static str {
        std::any::type_name::<Self>()
    }

    /// Identity of the mutable backing store, if any.
    fn buffer_key(&self) -> Option<BufferKey> {
        None
    }

    /// Blocks outside readers of the backing store until the guard drops.
    fn exclusive_access(&self) -> Option<Box<dyn Any>> {
        None
    }
}

/// Identifies a (possibly partial) view of a shared backing store.
///
/// `storage` alone decides aliasing; `offset`/`len` tell two views of the same
/// store apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BufferKey {
    pub storage: usize,
    pub offset: usize,
    pub len: usize,
}

macro_rules! plain_data {
    ($($t:ty),*) => { $(impl Data for $t {})* };
}
plain_data!(i8, i16, i32, i64, u8, u16, u32, u64, usize, isize, f32, f64, bool, String);

/// Concrete data type of a value, used to validate split kinds.
#[derive(Clone, Copy)]
pub struct DataType {
    id: TypeId,
    name: &'static str,
}

impl DataType {
    pub fn of<T: Any + ?Sized>() -> Self {
        Self { id: TypeId::of::<T>(), name: std::any::type_name::<T>() }
    }

    pub fn name(&self) -> &'static str {
        self.name
    }
}

impl PartialEq for DataType {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id
    }
}
impl Eq for DataType {}

impl std::hash::Hash for DataType {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.id.hash(state)
    }
}

impl fmt::Debug for DataType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name)
    }
}

impl fmt::Display for DataType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name)
    }
}

/// A cheaply clonable, shared, type-erased value.
#[derive(Clone)]
pub struct Value(Arc<dyn Data>);

impl Value {
    pub fn new<T: Data>(data: T) -> Self {
        Value(Arc::new(data))
    }

    pub fn downcast_ref<T: Data>(&self) -> Option<&T> {
        let any: &dyn Any = &*self.0;
        any.downcast_ref::<T>()
    }

    pub fn is<T: Data>(&self) -> bool {
        self.data_type() == DataType::of::<T>()
    }

    pub fn data_type(&self) -> DataType {
        let any: &dyn Any = &*self.0;
        DataType { id: any.type_id(), name: self.0.type_name() }
    }

    pub fn buffer_key(&self) -> Option<BufferKey> {
        self.0.buffer_key()
    }

    pub fn exclusive_access(&self) -> Option<Box<dyn Any>> {
        self.0.exclusive_access()
    }

    /// True when both handles point at the same allocation.
    pub fn ptr_eq(&self, other: &Value) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }
}

impl fmt::Debug for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(&*self.0, f)
    }
}
