//! Shared, mutable element stores and the array and matrix views over them.
//!
//! A store is written in place by kernels running on several threads at
//! once, each on a disjoint piece. Outside the executor every access goes
//! through the store's reader-writer lock; the executor takes the write lock
//! for a whole stage (see [`Data::exclusive_access`]) and its kernels then
//! work through raw pointers.

use std::any::Any;
use std::cell::UnsafeCell;
use std::fmt;
use std::sync::Arc;

use parking_lot::{RawRwLock, RwLock};
use splitann::{BufferKey, Data};

use crate::scalar::Scalar;

pub(crate) struct Store<T> {
    data: Box<[UnsafeCell<T>]>,
    lock: Arc<RwLock<()>>,
}

// SAFETY: element access is coordinated by `lock`, or by the executor, which
// holds `lock` exclusively while kernels write disjoint pieces.
unsafe impl<T: Send> Send for Store<T> {}
unsafe impl<T: Send + Sync> Sync for Store<T> {}

impl<T: Scalar> Store<T> {
    fn new(data: Vec<T>) -> Arc<Self> {
        Arc::new(Store { data: data.into_iter().map(UnsafeCell::new).collect(), lock: Arc::new(RwLock::new(())) })
    }

    fn base(&self) -> *mut T {
        UnsafeCell::raw_get(self.data.as_ptr())
    }

    fn id(self: &Arc<Self>) -> usize {
        Arc::as_ptr(self) as *const u8 as usize
    }
}

/// Locks the stores behind `ids` (read) and `writes` (write) in address
/// order, once each, and runs `f` while they are held.
pub(crate) fn with_locks<R>(reads: &[&Arc<RwLock<()>>], writes: &[&Arc<RwLock<()>>], f: impl FnOnce() -> R) -> R {
    let mut all: Vec<(usize, &Arc<RwLock<()>>, bool)> = writes
        .iter()
        .map(|l| (Arc::as_ptr(l) as usize, *l, true))
        .chain(reads.iter().map(|l| (Arc::as_ptr(l) as usize, *l, false)))
        .collect();
    all.sort_by_key(|(p, _, w)| (*p, !*w));
    all.dedup_by_key(|(p, _, _)| *p);
    let mut read_guards = Vec::new();
    let mut write_guards = Vec::new();
    for (_, l, write) in all {
        if write {
            write_guards.push(l.write());
        } else {
            read_guards.push(l.read());
        }
    }
    f()
}

/// A contiguous run of elements in a shared store.
pub struct DenseArray<T> {
    store: Arc<Store<T>>,
    offset: usize,
    len: usize,
}

impl<T> Clone for DenseArray<T> {
    fn clone(&self) -> Self {
        DenseArray { store: Arc::clone(&self.store), offset: self.offset, len: self.len }
    }
}

impl<T: Scalar> DenseArray<T> {
    pub fn new(data: Vec<T>) -> Self {
        let len = data.len();
        DenseArray { store: Store::new(data), offset: 0, len }
    }

    pub fn zeros(len: usize) -> Self {
        Self::new(vec![T::zero(); len])
    }

    pub fn from_fn(len: usize, f: impl FnMut(usize) -> T) -> Self {
        Self::new((0..len).map(f).collect())
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// A view of `len` elements starting at `offset`, sharing this store.
    pub fn view(&self, offset: usize, len: usize) -> Self {
        assert!(offset + len <= self.len, "view {offset}+{len} exceeds length {}", self.len);
        DenseArray { store: Arc::clone(&self.store), offset: self.offset + offset, len }
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.read(|s| s.to_vec())
    }

    pub fn get(&self, i: usize) -> T {
        assert!(i < self.len);
        self.read(|s| s[i])
    }

    /// Runs `f` over the elements under the store's read lock.
    pub fn read<R>(&self, f: impl FnOnce(&[T]) -> R) -> R {
        let _g = self.store.lock.read();
        // SAFETY: the read lock excludes writers outside the executor, and
        // the executor holds the write lock while it runs.
        f(unsafe { std::slice::from_raw_parts(self.ptr(), self.len) })
    }

    /// Runs `f` over the elements under the store's write lock.
    pub fn write<R>(&self, f: impl FnOnce(&mut [T]) -> R) -> R {
        let _g = self.store.lock.write();
        // SAFETY: exclusive by the write lock; views of one store never
        // produce two slices under one lock acquisition.
        f(unsafe { std::slice::from_raw_parts_mut(self.ptr(), self.len) })
    }

    /// Pointer to the first element. Reading or writing through it requires
    /// the caller to rule out conflicting access.
    pub fn ptr(&self) -> *mut T {
        // SAFETY: offset + len never exceeds the store length.
        unsafe { self.store.base().add(self.offset) }
    }

    pub(crate) fn lock(&self) -> &Arc<RwLock<()>> {
        &self.store.lock
    }

    pub fn same_store(&self, other: &DenseArray<T>) -> bool {
        Arc::ptr_eq(&self.store, &other.store)
    }
}

impl<T: Scalar> fmt::Debug for DenseArray<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.len <= 16 {
            write!(f, "DenseArray{:?}", self.to_vec())
        } else {
            write!(f, "DenseArray(len {})", self.len)
        }
    }
}

impl<T: Scalar> PartialEq for DenseArray<T> {
    fn eq(&self, other: &Self) -> bool {
        self.to_vec() == other.to_vec()
    }
}

fn exclusive(lock: &Arc<RwLock<()>>) -> Box<dyn Any> {
    Box::new(RwLock::write_arc(lock)) as Box<parking_lot::lock_api::ArcRwLockWriteGuard<RawRwLock, ()>>
}

impl<T: Scalar> Data for DenseArray<T> {
    fn buffer_key(&self) -> Option<BufferKey> {
        Some(BufferKey { storage: self.store.id(), offset: self.offset, len: self.len })
    }

    fn exclusive_access(&self) -> Option<Box<dyn Any>> {
        Some(exclusive(&self.store.lock))
    }
}

/// A row-major matrix view: `rows` rows of `cols` elements, consecutive rows
/// `stride` elements apart.
pub struct DenseMatrix<T> {
    store: Arc<Store<T>>,
    offset: usize,
    rows: usize,
    cols: usize,
    stride: usize,
}

impl<T> Clone for DenseMatrix<T> {
    fn clone(&self) -> Self {
        DenseMatrix {
            store: Arc::clone(&self.store),
            offset: self.offset,
            rows: self.rows,
            cols: self.cols,
            stride: self.stride,
        }
    }
}

impl<T: Scalar> DenseMatrix<T> {
    /// `data` is row-major and must hold exactly `rows * cols` elements.
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "a {rows}x{cols} matrix needs {} elements", rows * cols);
        DenseMatrix { store: Store::new(data), offset: 0, rows, cols, stride: cols }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(rows, cols, vec![T::zero(); rows * cols])
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        Self::new(rows, cols, (0..rows * cols).map(|i| f(i / cols.max(1), i % cols.max(1))).collect())
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    /// Rows `start..start + n`, sharing this store.
    pub fn row_view(&self, start: usize, n: usize) -> Self {
        assert!(start + n <= self.rows);
        DenseMatrix { offset: self.offset + start * self.stride, rows: n, ..self.clone() }
    }

    /// Columns `start..start + n`, sharing this store.
    pub fn col_view(&self, start: usize, n: usize) -> Self {
        assert!(start + n <= self.cols);
        DenseMatrix { offset: self.offset + start, cols: n, ..self.clone() }
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        assert!(r < self.rows && c < self.cols);
        let _g = self.store.lock.read();
        // SAFETY: in bounds, read lock held.
        unsafe { *self.ptr().add(r * self.stride + c) }
    }

    /// Row-major copy of the elements.
    pub fn to_vec(&self) -> Vec<T> {
        let _g = self.store.lock.read();
        let mut out = Vec::with_capacity(self.rows * self.cols);
        for r in 0..self.rows {
            // SAFETY: row r lies within the store; read lock held.
            out.extend_from_slice(unsafe { std::slice::from_raw_parts(self.ptr().add(r * self.stride), self.cols) });
        }
        out
    }

    /// Overwrites the elements from row-major `data`.
    pub fn assign(&self, data: &[T]) {
        assert_eq!(data.len(), self.rows * self.cols, "assign needs {} elements", self.rows * self.cols);
        let _g = self.store.lock.write();
        for r in 0..self.rows {
            let src = &data[r * self.cols..(r + 1) * self.cols];
            // SAFETY: row r lies within the store; write lock held.
            unsafe { std::ptr::copy_nonoverlapping(src.as_ptr(), self.ptr().add(r * self.stride), self.cols) };
        }
    }

    pub fn to_rows(&self) -> Vec<Vec<T>> {
        let v = self.to_vec();
        if self.cols == 0 {
            return vec![Vec::new(); self.rows];
        }
        v.chunks(self.cols).map(<[T]>::to_vec).collect()
    }

    pub fn ptr(&self) -> *mut T {
        // SAFETY: the view lies within the store.
        unsafe { self.store.base().add(self.offset) }
    }

    pub(crate) fn lock(&self) -> &Arc<RwLock<()>> {
        &self.store.lock
    }

    /// Number of store elements between the first and one past the last
    /// element of the view.
    fn span(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            0
        } else {
            (self.rows - 1) * self.stride + self.cols
        }
    }
}

impl<T: Scalar> fmt::Debug for DenseMatrix<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.rows * self.cols <= 36 {
            write!(f, "DenseMatrix{:?}", self.to_rows())
        } else {
            write!(f, "DenseMatrix({}x{})", self.rows, self.cols)
        }
    }
}

impl<T: Scalar> PartialEq for DenseMatrix<T> {
    fn eq(&self, other: &Self) -> bool {
        self.rows == other.rows && self.cols == other.cols && self.to_vec() == other.to_vec()
    }
}

impl<T: Scalar> Data for DenseMatrix<T> {
    fn buffer_key(&self) -> Option<BufferKey> {
        Some(BufferKey { storage: self.store.id(), offset: self.offset, len: self.span() })
    }

    fn exclusive_access(&self) -> Option<Box<dyn Any>> {
        Some(exclusive(&self.store.lock))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn assign_overwrites_through_a_view() {
        let m = DenseMatrix::from_fn(3, 2, |r, c| (r * 2 + c) as i64);
        m.row_view(1, 2).assign(&[7, 8, 9, 10]);
        assert_eq!(m.to_vec(), vec![0, 1, 7, 8, 9, 10]);
    }

    #[test]
    fn views_share_the_store() {
        let a = DenseArray::new(vec![1.0, 2.0, 3.0, 4.0]);
        let v = a.view(1, 2);
        v.write(|s| s[0] = 9.0);
        assert_eq!(a.to_vec(), vec![1.0, 9.0, 3.0, 4.0]);
        assert_eq!(v.buffer_key().unwrap().storage, a.buffer_key().unwrap().storage);
        assert_ne!(v.buffer_key(), a.buffer_key());
    }

    #[test]
    fn matrix_views() {
        let m = DenseMatrix::from_fn(3, 4, |r, c| (r * 10 + c) as i64);
        let cols = m.col_view(1, 2);
        assert_eq!(cols.to_rows(), vec![vec![1, 2], vec![11, 12], vec![21, 22]]);
        let rows = m.row_view(1, 2);
        assert_eq!(rows.to_rows(), vec![vec![10, 11, 12, 13], vec![20, 21, 22, 23]]);
        assert_eq!(rows.col_view(3, 1).to_vec(), vec![13, 23]);
        assert_eq!(cols.buffer_key().unwrap().len, 10);
    }

    #[test]
    fn exclusive_access_blocks_outside_readers() {
        let a = DenseArray::new(vec![1i64, 2]);
        let guard = a.exclusive_access().unwrap();
        assert!(a.lock().try_read().is_none());
        drop(guard);
        assert_eq!(a.get(1), 2);
    }

    #[test]
    fn lock_helper_dedups() {
        let a = DenseArray::new(vec![1i64, 2]);
        let b = a.view(0, 1);
        let n = with_locks(&[a.lock(), b.lock()], &[a.lock()], || 7);
        assert_eq!(n, 7);
    }
}
