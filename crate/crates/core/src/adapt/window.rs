use std::collections::VecDeque;

use crate::envs::wrap_angle;
use crate::error::ensure;
use crate::tensor::DenseMatrix;
use crate::Result;

/// The last `k` state-action pairs.
///
/// Presented as a `(n + m) × k` matrix, oldest column first. Until `k`
/// pairs have been pushed the leading columns are zero and [`is_full`]
/// is false. Angle channels are unwrapped backwards from the newest
/// sample so a crossing of ±π does not appear as a jump.
///
/// [`is_full`]: HistoryWindow::is_full
#[derive(Clone, Debug, PartialEq)]
pub struct HistoryWindow {
    n: usize,
    m: usize,
    k: usize,
    angle_dims: Vec<usize>,
    buf: VecDeque<(Vec<f64>, Vec<f64>)>,
}

impl HistoryWindow {
    pub fn new(n: usize, m: usize, k: usize, angle_dims: Vec<usize>) -> Self {
        Self { n, m, k, angle_dims, buf: VecDeque::with_capacity(k) }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.buf.len() == self.k
    }

    pub fn clear(&mut self) {
        self.buf.clear();
    }

    pub fn push(&mut self, x: &[f64], a: &[f64]) -> Result<()> {
        ensure!(x.len() == self.n && a.len() == self.m, Contract, "window push: expected ({}, {})", self.n, self.m);
        if self.buf.len() == self.k {
            self.buf.pop_front();
        }
        self.buf.push_back((x.to_vec(), a.to_vec()));
        Ok(())
    }

    pub fn to_matrix(&self) -> DenseMatrix {
        let c = self.n + self.m;
        let mut w = DenseMatrix::zeros(c, self.k);
        let pad = self.k - self.buf.len();
        for (j, (x, a)) in self.buf.iter().enumerate() {
            for (i, v) in x.iter().chain(a).enumerate() {
                w.set(i, pad + j, *v);
            }
        }
        for &d in &self.angle_dims {
            let mut col = self.k;
            while col > pad + 1 {
                col -= 1;
                let newer = w.get(d, col);
                let older = w.get(d, col - 1);
                w.set(d, col - 1, newer - wrap_angle(newer - older));
            }
        }
        w
    }
}
