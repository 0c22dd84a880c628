//! Block-tridiagonal linear systems.
//!
//! Block elimination in order with partially pivoted LU inside each
//! diagonal block. The time-interleaved KKT systems of the transport problem
//! have exactly this shape.

use nalgebra::{DMatrix, DVector};

pub(crate) struct BlockTridiagonal {
    pub diag: Vec<DMatrix<f64>>,
    /// `upper[b]` couples block `b` (rows) with block `b + 1` (columns).
    pub upper: Vec<DMatrix<f64>>,
    /// `lower[b]` couples block `b + 1` (rows) with block `b` (columns).
    pub lower: Vec<DMatrix<f64>>,
    offsets: Vec<usize>,
}

impl BlockTridiagonal {
    pub fn new(sizes: &[usize]) -> Self {
        let mut offsets = Vec::with_capacity(sizes.len() + 1);
        let mut acc = 0;
        for &s in sizes {
            offsets.push(acc);
            acc += s;
        }
        offsets.push(acc);
        let diag = sizes.iter().map(|&s| DMatrix::zeros(s, s)).collect();
        let upper = sizes.windows(2).map(|w| DMatrix::zeros(w[0], w[1])).collect();
        let lower = sizes.windows(2).map(|w| DMatrix::zeros(w[1], w[0])).collect();
        Self {
            diag,
            upper,
            lower,
            offsets,
        }
    }

    pub fn dim(&self) -> usize {
        *self.offsets.last().expect("offsets")
    }

    fn locate(&self, i: usize) -> (usize, usize) {
        let b = self.offsets.partition_point(|&o| o <= i) - 1;
        (b, i - self.offsets[b])
    }

    /// Adds `v` at global position `(i, j)`; the blocks must be adjacent.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (bi, li) = self.locate(i);
        let (bj, lj) = self.locate(j);
        if bi == bj {
            self.diag[bi][(li, lj)] += v;
        } else if bj == bi + 1 {
            self.upper[bi][(li, lj)] += v;
        } else if bi == bj + 1 {
            self.lower[bj][(li, lj)] += v;
        } else {
            debug_assert!(v == 0.0, "entry outside the block band");
        }
    }

    /// Replaces row and column `i` by the identity.
    pub fn pin(&mut self, i: usize) {
        let (b, l) = self.locate(i);
        self.diag[b].row_mut(l).fill(0.0);
        self.diag[b].column_mut(l).fill(0.0);
        self.diag[b][(l, l)] = 1.0;
        if b + 1 < self.diag.len() {
            self.upper[b].row_mut(l).fill(0.0);
            self.lower[b].column_mut(l).fill(0.0);
        }
        if b > 0 {
            self.upper[b - 1].column_mut(l).fill(0.0);
            self.lower[b - 1].row_mut(l).fill(0.0);
        }
    }

    /// Solves the system, consuming the matrix. `None` on a singular pivot block.
    pub fn solve(mut self, rhs: &[f64]) -> Option<Vec<f64>> {
        let nb = self.diag.len();
        let mut z: Vec<DVector<f64>> = (0..nb)
            .map(|b| DVector::from_column_slice(&rhs[self.offsets[b]..self.offsets[b + 1]]))
            .collect();
        let mut y: Vec<DMatrix<f64>> = Vec::with_capacity(nb.saturating_sub(1));
        for b in 0..nb {
            if b > 0 {
                let l = &self.lower[b - 1];
                let correction = l * &y[b - 1];
                self.diag[b] -= correction;
                let zc = l * &z[b - 1];
                z[b] -= zc;
            }
            let lu = self.diag[b].clone().lu();
            z[b] = lu.solve(&z[b])?;
            if b + 1 < nb {
                y.push(lu.solve(&self.upper[b])?);
            }
        }
        for b in (0..nb.saturating_sub(1)).rev() {
            let next = z[b + 1].clone();
            z[b] -= &y[b] * next;
        }
        let mut out: Vec<f64> = Vec::with_capacity(self.dim());
        for v in z {
            out.extend(v.iter());
        }
        if out.iter().all(|x| x.is_finite()) {
            Some(out)
        } else {
            None
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_dense_solve() {
        let sizes = [3, 2, 4, 1];
        let mut bt = BlockTridiagonal::new(&sizes);
        let n = bt.dim();
        let mut dense = DMatrix::<f64>::zeros(n, n);
        let mut seed = 1u64;
        let mut next = || {
            seed = seed
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((seed >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        for i in 0..n {
            for j in 0..n {
                let (bi, _) = bt.locate(i);
                let (bj, _) = bt.locate(j);
                if bi.abs_diff(bj) <= 1 {
                    // Indefinite with a zero diagonal entry so pivoting matters.
                    let v = if i == j && i == 1 { 0.0 } else { next() };
                    bt.add(i, j, v);
                    dense[(i, j)] = v;
                }
            }
        }
        let rhs: Vec<f64> = (0..n).map(|i| i as f64 - 3.0).collect();
        let x = bt.solve(&rhs).unwrap();
        let r = &dense * DVector::from_vec(x) - DVector::from_vec(rhs);
        assert!(r.amax() < 1e-10);
    }
}
