use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

/// Bounded FIFO of samples, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct SlidingWindow {
    xs: VecDeque<DVector<f64>>,
    ys: VecDeque<f64>,
    capacity: usize,
}

impl SlidingWindow {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "window capacity must be positive");
        Self { xs: VecDeque::with_capacity(capacity + 1), ys: VecDeque::with_capacity(capacity + 1), capacity }
    }

    /// Window holding the last `capacity` rows of `(x, y)`.
    pub fn from_data(x: &DMatrix<f64>, y: &DVector<f64>, capacity: usize) -> Self {
        let mut w = Self::new(capacity);
        let start = x.nrows().saturating_sub(capacity);
        for i in start..x.nrows() {
            w.push(x.row(i).transpose(), y[i]);
        }
        w
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.xs.len() >= self.capacity
    }

    /// Appends a sample, returning the evicted oldest one when over capacity.
    pub fn push(&mut self, x: DVector<f64>, y: f64) -> Option<(DVector<f64>, f64)> {
        self.xs.push_back(x);
        self.ys.push_back(y);
        if self.xs.len() > self.capacity {
            Some((self.xs.pop_front().expect("nonempty"), self.ys.pop_front().expect("nonempty")))
        } else {
            None
        }
    }

    pub(crate) fn push_unbounded(&mut self, x: DVector<f64>, y: f64) {
        self.xs.push_back(x);
        self.ys.push_back(y);
    }

    pub(crate) fn pop_oldest(&mut self) -> Option<(DVector<f64>, f64)> {
        Some((self.xs.pop_front()?, self.ys.pop_front()?))
    }

    pub fn oldest(&self) -> Option<(&DVector<f64>, f64)> {
        Some((self.xs.front()?, *self.ys.front()?))
    }

    pub fn inputs(&self) -> DMatrix<f64> {
        let dim = self.xs.front().map_or(0, |x| x.len());
        DMatrix::from_fn(self.xs.len(), dim, |i, d| self.xs[i][d])
    }

    pub fn targets(&self) -> DVector<f64> {
        DVector::from_iterator(self.ys.len(), self.ys.iter().copied())
    }
}
