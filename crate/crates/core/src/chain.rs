//! Reversible continuous-time Markov chains on finite state sets.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Relative tolerance for accepting detailed balance when a chain is built.
pub const REVERSIBILITY_TOL: f64 = 1e-10;

/// One directed rate entry of a [`ChainSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateEntry {
    pub from: String,
    pub to: String,
    pub rate: f64,
}

/// Serialized chain description (JSON interchange format).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSpec {
    pub states: Vec<String>,
    pub rates: Vec<RateEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measure: Option<Vec<f64>>,
}

impl ChainSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidSpec(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("chain spec serializes")
    }

    /// Checks the structural invariants that do not need the measure.
    pub fn check_well_formed(&self) -> Result<()> {
        if self.states.is_empty() {
            return Err(Error::InvalidSpec("no states".into()));
        }
        let mut index = HashMap::with_capacity(self.states.len());
        for (i, s) in self.states.iter().enumerate() {
            if index.insert(s.as_str(), i).is_some() {
                return Err(Error::InvalidSpec(format!("duplicate state label {s:?}")));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for r in &self.rates {
            for l in [&r.from, &r.to] {
                if !index.contains_key(l.as_str()) {
                    return Err(Error::InvalidSpec(format!("unknown state label {l:?}")));
                }
            }
            if r.from == r.to {
                return Err(Error::InvalidSpec(format!("self-loop on {:?}", r.from)));
            }
            if !seen.insert((r.from.as_str(), r.to.as_str())) {
                return Err(Error::InvalidSpec(format!(
                    "duplicate rate entry {:?} -> {:?}",
                    r.from, r.to
                )));
            }
            if !(r.rate.is_finite() && r.rate > 0.0) {
                return Err(Error::NonPositiveRate {
                    from: r.from.clone(),
                    to: r.to.clone(),
                    rate: r.rate,
                });
            }
        }
        if let Some(m) = &self.measure {
            if m.len() != self.states.len() {
                return Err(Error::DimensionMismatch { expected: self.states.len(), got: m.len() });
            }
        }
        Ok(())
    }
}

/// An irreducible, reversible Markov chain with a normalized reversible measure.
///
/// Rates are kept as adjacency lists sorted by neighbour index, so every sum
/// over neighbours runs in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovChain {
    labels: Vec<String>,
    adj: Vec<Vec<(usize, f64)>>,
    pi: Vec<f64>,
}

impl MarkovChain {
    /// Builds a chain from labels and directed `(from, to, rate)` triples.
    ///
    /// When `measure` is `None` the reversible measure is propagated along a
    /// BFS spanning tree in log space and then checked on every edge.
    pub fn from_edges(
        labels: Vec<String>,
        edges: &[(usize, usize, f64)],
        measure: Option<&[f64]>,
    ) -> Result<Self> {
        let n = labels.len();
        if n == 0 {
            return Err(Error::InvalidSpec("no states".into()));
        }
        let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for &(x, y, r) in edges {
            if x >= n || y >= n {
                return Err(Error::InvalidSpec(format!("edge ({x},{y}) out of range")));
            }
            if x == y {
                return Err(Error::InvalidSpec(format!("self-loop at {}", labels[x])));
            }
            if !(r.is_finite() && r > 0.0) {
                return Err(Error::NonPositiveRate {
                    from: labels[x].clone(),
                    to: labels[y].clone(),
                    rate: r,
                });
            }
            adj[x].push((y, r));
        }
        for (x, row) in adj.iter_mut().enumerate() {
            row.sort_by_key(|e| e.0);
            if row.windows(2).any(|w| w[0].0 == w[1].0) {
                return Err(Error::InvalidSpec(format!("duplicate edge out of {}", labels[x])));
            }
        }
        let mut chain = MarkovChain { labels, adj, pi: Vec::new() };
        chain.check_weakly_connected()?;
        let (log_pi, pi) = match measure {
            Some(m) => {
                if m.len() != n {
                    return Err(Error::DimensionMismatch { expected: n, got: m.len() });
                }
                for (i, &v) in m.iter().enumerate() {
                    if !(v.is_finite() && v > 0.0) {
                        return Err(Error::InvalidSpec(format!(
                            "measure entry {i} is not strictly positive"
                        )));
                    }
                }
                let log_pi: Vec<f64> = m.iter().map(|v| v.ln()).collect();
                (log_pi, normalize_linear(m, &chain.labels)?)
            }
            None => {
                let log_pi = chain.propagate_log_measure()?;
                let pi = normalize_log(&log_pi, &chain.labels)?;
                (log_pi, pi)
            }
        };
        chain.pi = pi;
        chain.check_detailed_balance(&log_pi)?;
        Ok(chain)
    }

    /// Builds and validates a chain from its serialized description.
    pub fn from_spec(spec: &ChainSpec) -> Result<Self> {
        spec.check_well_formed()?;
        let index: HashMap<&str, usize> =
            spec.states.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let edges: Vec<(usize, usize, f64)> = spec
            .rates
            .iter()
            .map(|r| (index[r.from.as_str()], index[r.to.as_str()], r.rate))
            .collect();
        Self::from_edges(spec.states.clone(), &edges, spec.measure.as_deref())
    }

    /// Serializes the chain, including its normalized measure.
    pub fn to_spec(&self) -> ChainSpec {
        let mut rates = Vec::new();
        for x in 0..self.n() {
            for &(y, r) in &self.adj[x] {
                rates.push(RateEntry { from: self.labels[x].clone(), to: self.labels[y].clone(), rate: r });
            }
        }
        ChainSpec { states: self.labels.clone(), rates, measure: Some(self.pi.clone()) }
    }

    fn check_weakly_connected(&self) -> Result<()> {
        let n = self.n();
        let mut und: Vec<Vec<usize>> = vec![Vec::new(); n];
        for x in 0..n {
            for &(y, _) in &self.adj[x] {
                und[x].push(y);
                und[y].push(x);
            }
        }
        let seen = bfs_order(&und, 0);
        if let Some(i) = seen.iter().position(|s| s.is_none()) {
            return Err(Error::NotIrreducible(self.labels[i].clone()));
        }
        Ok(())
    }

    fn propagate_log_measure(&self) -> Result<Vec<f64>> {
        let n = self.n();
        let mut log_pi = vec![f64::NAN; n];
        log_pi[0] = 0.0;
        let mut queue = VecDeque::from([0usize]);
        // Treat edges in both directions so a one-way edge is reported as
        // a reversibility failure rather than as unreachability.
        let mut und: Vec<Vec<usize>> = vec![Vec::new(); n];
        for x in 0..n {
            for &(y, _) in &self.adj[x] {
                und[x].push(y);
                und[y].push(x);
            }
        }
        for row in und.iter_mut() {
            row.sort_unstable();
            row.dedup();
        }
        while let Some(x) = queue.pop_front() {
            for &y in &und[x] {
                if !log_pi[y].is_nan() {
                    continue;
                }
                let (kxy, kyx) = (self.rate(x, y), self.rate(y, x));
                if kxy == 0.0 || kyx == 0.0 {
                    let (from, to) = if kxy > 0.0 { (x, y) } else { (y, x) };
                    return Err(Error::NotReversible {
                        from: self.labels[from].clone(),
                        to: self.labels[to].clone(),
                        residual: 1.0,
                    });
                }
                log_pi[y] = log_pi[x] + kxy.ln() - kyx.ln();
                queue.push_back(y);
            }
        }
        Ok(log_pi)
    }

    fn check_detailed_balance(&self, log_pi: &[f64]) -> Result<()> {
        for x in 0..self.n() {
            for &(y, kxy) in &self.adj[x] {
                let kyx = self.rate(y, x);
                if kyx == 0.0 {
                    return Err(Error::NotReversible {
                        from: self.labels[x].clone(),
                        to: self.labels[y].clone(),
                        residual: 1.0,
                    });
                }
                let res = edge_balance_residual(log_pi[x], kxy, log_pi[y], kyx);
                if res > REVERSIBILITY_TOL {
                    return Err(Error::NotReversible {
                        from: self.labels[x].clone(),
                        to: self.labels[y].clone(),
                        residual: res,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, x: usize) -> &str {
        &self.labels[x]
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Normalized reversible measure.
    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    /// Out-neighbours of `x` with their rates, sorted by index.
    pub fn neighbors(&self, x: usize) -> &[(usize, f64)] {
        &self.adj[x]
    }

    pub fn degree(&self, x: usize) -> usize {
        self.adj[x].len()
    }

    /// k(x, y), zero when there is no edge.
    pub fn rate(&self, x: usize, y: usize) -> f64 {
        match self.adj[x].binary_search_by_key(&y, |e| e.0) {
            Ok(i) => self.adj[x][i].1,
            Err(_) => 0.0,
        }
    }

    /// Total jump rate out of `x`.
    pub fn m1(&self, x: usize) -> f64 {
        self.adj[x].iter().map(|e| e.1).sum()
    }

    /// Two-step rate mass: sum over y of k(x,y) M1(y).
    pub fn m2(&self, x: usize) -> f64 {
        self.adj[x].iter().map(|&(y, k)| k * self.m1(y)).sum()
    }

    pub fn max_m1(&self) -> f64 {
        (0..self.n()).map(|x| self.m1(x)).fold(0.0, f64::max)
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().map(Vec::len).sum()
    }

    /// True when every stored rate equals 1.
    pub fn is_unweighted(&self) -> bool {
        self.adj.iter().flatten().all(|e| e.1 == 1.0)
    }

    pub fn check_len(&self, f: &[f64]) -> Result<()> {
        if f.len() != self.n() {
            return Err(Error::DimensionMismatch { expected: self.n(), got: f.len() });
        }
        Ok(())
    }

    /// (Lf)(x) = sum_y k(x,y) (f(y) - f(x)).
    pub fn generator_apply(&self, f: &[f64]) -> Result<Vec<f64>> {
        self.check_len(f)?;
        Ok((0..self.n()).map(|x| self.generator_at(f, x)).collect())
    }

    pub fn generator_at(&self, f: &[f64], x: usize) -> f64 {
        self.adj[x].iter().map(|&(y, k)| k * (f[y] - f[x])).sum()
    }

    /// |sum_x (Lf)(x) pi(x)|, which vanishes for an invariant measure.
    pub fn invariance_residual(&self, f: &[f64]) -> Result<f64> {
        self.invariance_residual_with(f, &self.pi)
    }

    /// Same as [`Self::invariance_residual`] but against an arbitrary weight vector.
    pub fn invariance_residual_with(&self, f: &[f64], weights: &[f64]) -> Result<f64> {
        self.check_len(weights)?;
        let lf = self.generator_apply(f)?;
        Ok(lf.iter().zip(weights).map(|(a, b)| a * b).sum::<f64>().abs())
    }

    /// Largest relative detailed-balance defect over all edges.
    pub fn detailed_balance_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for x in 0..self.n() {
            for &(y, kxy) in &self.adj[x] {
                let lhs = self.pi[x] * kxy;
                let rhs = self.pi[y] * self.rate(y, x);
                worst = worst.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()));
            }
        }
        worst
    }

    /// Integral of `f` against the measure.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        f.iter().zip(&self.pi).map(|(a, b)| a * b).sum()
    }

    /// Graph distances from `x` in the (symmetric) transition graph.
    pub fn distances_from(&self, x: usize) -> Vec<Option<usize>> {
        let und: Vec<Vec<usize>> =
            self.adj.iter().map(|row| row.iter().map(|e| e.0).collect()).collect();
        bfs_order(&und, x)
    }

    /// Length of the shortest cycle, `None` for forests.
    pub fn girth(&self) -> Option<usize> {
        let n = self.n();
        let mut best: Option<usize> = None;
        for s in 0..n {
            let mut dist = vec![usize::MAX; n];
            let mut parent = vec![usize::MAX; n];
            dist[s] = 0;
            let mut q = VecDeque::from([s]);
            while let Some(v) = q.pop_front() {
                for &(w, _) in &self.adj[v] {
                    if dist[w] == usize::MAX {
                        dist[w] = dist[v] + 1;
                        parent[w] = v;
                        q.push_back(w);
                    } else if parent[v] != w {
                        let c = dist[v] + dist[w] + 1;
                        best = Some(best.map_or(c, |b| b.min(c)));
                    }
                }
            }
        }
        best
    }

    /// Returns a copy with every rate multiplied by `c > 0`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::InvalidParameter(format!("scale factor {c} must be positive")));
        }
        let mut out = self.clone();
        for row in out.adj.iter_mut() {
            for e in row.iter_mut() {
                e.1 *= c;
            }
        }
        Ok(out)
    }

    /// Returns a copy with new labels (same length).
    pub fn relabeled(&self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.n() {
            return Err(Error::DimensionMismatch { expected: self.n(), got: labels.len() });
        }
        let mut out = self.clone();
        out.labels = labels;
        Ok(out)
    }

    /// Dense generator matrix, row-major, with the negative jump rates on the diagonal.
    pub fn dense_generator(&self) -> Vec<f64> {
        let n = self.n();
        let mut q = vec![0.0; n * n];
        for x in 0..n {
            for &(y, k) in &self.adj[x] {
                q[x * n + y] = k;
                q[x * n + x] -= k;
            }
        }
        q
    }

    /// SHA-256 over labels, rates and measure, as lowercase hex.
    pub fn chain_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.n() as u64).to_le_bytes());
        for (x, l) in self.labels.iter().enumerate() {
            h.update((l.len() as u64).to_le_bytes());
            h.update(l.as_bytes());
            h.update(self.pi[x].to_bits().to_le_bytes());
            h.update((self.adj[x].len() as u64).to_le_bytes());
            for &(y, k) in &self.adj[x] {
                h.update((y as u64).to_le_bytes());
                h.update(k.to_bits().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn edge_balance_residual(lpx: f64, kxy: f64, lpy: f64, kyx: f64) -> f64 {
    // Compare pi(x)k(x,y) and pi(y)k(y,x) in log space, as a relative defect.
    let d = (lpx + kxy.ln()) - (lpy + kyx.ln());
    d.abs().exp_m1()
}

fn normalize_log(log_pi: &[f64], labels: &[String]) -> Result<Vec<f64>> {
    let max = log_pi.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_pi.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    let pi: Vec<f64> = w.iter().map(|v| v / total).collect();
    if let Some(i) = pi.iter().position(|&v| !(v > 0.0 && v.is_normal())) {
        return Err(Error::MeasureUnderflow(labels[i].clone()));
    }
    Ok(pi)
}

/// Normalizes a given measure; one that already sums to 1 is kept bit for bit.
fn normalize_linear(m: &[f64], labels: &[String]) -> Result<Vec<f64>> {
    let total: f64 = m.iter().sum();
    let pi: Vec<f64> =
        if (total - 1.0).abs() <= 8.0 * f64::EPSILON { m.to_vec() } else { m.iter().map(|v| v / total).collect() };
    if let Some(i) = pi.iter().position(|&v| !(v > 0.0 && v.is_normal())) {
        return Err(Error::MeasureUnderflow(labels[i].clone()));
    }
    Ok(pi)
}

fn bfs_order(adj: &[Vec<usize>], s: usize) -> Vec<Option<usize>> {
    let mut dist = vec![None; adj.len()];
    dist[s] = Some(0);
    let mut q = VecDeque::from([s]);
    while let Some(v) = q.pop_front() {
        let d = dist[v].unwrap();
        for &w in &adj[v] {
            if dist[w].is_none() {
                dist[w] = Some(d + 1);
                q.push_back(w);
            }
        }
    }
    dist
}
