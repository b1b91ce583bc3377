//! Finite windows of Z^d with a translation-invariant kernel.

use std::collections::HashMap;

use crate::chain::MarkovChain;
use crate::error::{Error, Result};
use crate::scalar::{upsilon, ScalarKernel};

/// The box [-R, R]^d with rates k(x, x + h) = k_*(h) whenever both ends lie in the box.
#[derive(Debug, Clone)]
pub struct LatticeWindow {
    pub chain: MarkovChain,
    pub dim: usize,
    pub radius: i64,
    pub kernel: Vec<(Vec<i64>, f64)>,
    points: Vec<Vec<i64>>,
    index: HashMap<Vec<i64>, usize>,
}

/// Builds the window chain. The kernel lists jump vectors with their rates.
pub fn lattice_window(dim: usize, kernel: &[(Vec<i64>, f64)], radius: i64) -> Result<LatticeWindow> {
    if dim == 0 || radius < 1 {
        return Err(Error::InvalidParameter("lattice window needs dim >= 1 and radius >= 1".into()));
    }
    if kernel.is_empty() {
        return Err(Error::InvalidParameter("kernel is empty".into()));
    }
    for (h, r) in kernel {
        if h.len() != dim || h.iter().all(|&c| c == 0) {
            return Err(Error::InvalidParameter(format!("bad jump vector {h:?}")));
        }
        if !(r.is_finite() && *r > 0.0) {
            return Err(Error::InvalidParameter(format!("kernel rate {r} must be positive")));
        }
    }
    let side = (2 * radius + 1) as usize;
    let total = side.checked_pow(dim as u32).ok_or_else(|| Error::InvalidParameter("window too large".into()))?;
    let mut points = Vec::with_capacity(total);
    for mut i in 0..total {
        let mut p = vec![0i64; dim];
        for c in p.iter_mut().rev() {
            *c = (i % side) as i64 - radius;
            i /= side;
        }
        points.push(p);
    }
    let index: HashMap<Vec<i64>, usize> = points.iter().cloned().enumerate().map(|(i, p)| (p, i)).collect();
    let mut edges = Vec::new();
    for (i, p) in points.iter().enumerate() {
        for (h, r) in kernel {
            let q: Vec<i64> = p.iter().zip(h).map(|(a, b)| a + b).collect();
            if let Some(&j) = index.get(&q) {
                edges.push((i, j, *r));
            }
        }
    }
    let labels = points
        .iter()
        .map(|p| format!("({})", p.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",")))
        .collect();
    let chain = MarkovChain::from_edges(labels, &edges, None)?;
    Ok(LatticeWindow { chain, dim, radius, kernel: kernel.to_vec(), points, index })
}

/// Nearest-neighbour kernel on Z^d with unit rates.
pub fn nearest_neighbor_kernel(dim: usize) -> Vec<(Vec<i64>, f64)> {
    let mut k = Vec::with_capacity(2 * dim);
    for i in 0..dim {
        for s in [1, -1] {
            let mut h = vec![0; dim];
            h[i] = s;
            k.push((h, 1.0));
        }
    }
    k
}

impl LatticeWindow {
    pub fn point(&self, i: usize) -> &[i64] {
        &self.points[i]
    }

    pub fn index_of(&self, p: &[i64]) -> Option<usize> {
        self.index.get(p).copied()
    }

    fn shift(&self, i: usize, h: &[i64]) -> Option<usize> {
        let q: Vec<i64> = self.points[i].iter().zip(h).map(|(a, b)| a + b).collect();
        self.index_of(&q)
    }

    /// True when x + h + sigma lies in the window for all kernel jumps h, sigma.
    pub fn is_interior(&self, i: usize) -> bool {
        self.kernel.iter().all(|(h, _)| {
            self.kernel.iter().all(|(s, _)| {
                let hs: Vec<i64> = h.iter().zip(s).map(|(a, b)| a + b).collect();
                self.shift(i, h).is_some() && (hs.iter().all(|&c| c == 0) || self.shift(i, &hs).is_some())
            })
        })
    }

    pub fn interior(&self) -> Vec<usize> {
        (0..self.chain.n()).filter(|&i| self.is_interior(i)).collect()
    }

    /// Calls `term(kh, ks, f(x+h+sigma), f(x+h), f(x+sigma), f(x))` over all kernel pairs.
    fn pair_sum(&self, f: &[f64], i: usize, mut term: impl FnMut(f64, f64, [f64; 4]) -> f64) -> Option<f64> {
        let mut s = 0.0;
        for (h, kh) in &self.kernel {
            for (sg, ks) in &self.kernel {
                let xh = self.shift(i, h)?;
                let xs = self.shift(i, sg)?;
                let hs: Vec<i64> = h.iter().zip(sg).map(|(a, b)| a + b).collect();
                let xhs = if hs.iter().all(|&c| c == 0) { i } else { self.shift(i, &hs)? };
                s += term(*kh, *ks, [f[xhs], f[xh], f[xs], f[i]]);
            }
        }
        Some(s)
    }

    /// Closed-form Gamma_2 at an interior vertex; `None` near the boundary.
    pub fn gamma2_closed(&self, f: &[f64], i: usize) -> Option<f64> {
        self.pair_sum(f, i, |kh, ks, [a, b, c, d]| {
            let dd = a - b - c + d;
            0.25 * kh * ks * dd * dd
        })
    }

    /// Closed-form Psi_{2,Upsilon} at an interior vertex; `None` near the boundary.
    pub fn psi2_closed(&self, f: &[f64], i: usize) -> Option<f64> {
        self.pair_sum(f, i, |kh, ks, [a, b, c, d]| 0.5 * kh * ks * (c - d).exp() * upsilon(a - b - c + d))
    }

    /// Right side of the second fundamental identity:
    /// sum k_*(h) k_*(sigma) Lambda_H(f(x+h+sigma) - f(x+h), f(x+sigma) - f(x)).
    pub fn second_identity_closed(&self, h: ScalarKernel, f: &[f64], i: usize) -> Option<Result<f64>> {
        let mut err = None;
        let v = self.pair_sum(f, i, |kh, ks, [a, b, c, d]| match h.bregman(a - b, c - d) {
            Ok(l) => kh * ks * l,
            Err(e) => {
                err = Some(e);
                0.0
            }
        })?;
        Some(match err {
            Some(e) => Err(e),
            None => Ok(v),
        })
    }
}
