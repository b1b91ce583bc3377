//! Constructors for standard chain families.

use crate::chain::MarkovChain;
use crate::error::{Error, Result};
use crate::tensor;

pub use crate::lattice::{lattice_window, LatticeWindow};

fn numbered(n: usize) -> Vec<String> {
    (0..n).map(|i| i.to_string()).collect()
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} = {v} must be positive and finite")))
    }
}

/// Two states with k(0,1) = a and k(1,0) = b.
pub fn two_point(a: f64, b: f64) -> Result<MarkovChain> {
    positive("a", a)?;
    positive("b", b)?;
    MarkovChain::from_edges(numbered(2), &[(0, 1, a), (1, 0, b)], None)
}

/// A single state with no transitions; the neutral factor for products.
pub fn one_point() -> MarkovChain {
    MarkovChain::from_edges(numbered(1), &[], None).expect("one-point chain is valid")
}

/// Complete graph on `n` states with unit rates.
pub fn complete(n: usize) -> Result<MarkovChain> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!("complete graph needs n >= 2, got {n}")));
    }
    weighted_complete(&vec![1.0; n])
}

/// Complete graph with k(x, y) = l(y); reversible with pi proportional to l.
pub fn weighted_complete(l: &[f64]) -> Result<MarkovChain> {
    if l.len() < 2 {
        return Err(Error::InvalidParameter("weighted complete graph needs at least 2 weights".into()));
    }
    for &w in l {
        positive("weight", w)?;
    }
    let n = l.len();
    let mut edges = Vec::with_capacity(n * (n - 1));
    for x in 0..n {
        for (y, &w) in l.iter().enumerate() {
            if x != y {
                edges.push((x, y, w));
            }
        }
    }
    MarkovChain::from_edges(numbered(n), &edges, None)
}

/// The n-dimensional hypercube, built as the n-fold product of the unit two-point chain.
///
/// States are labelled by bit strings.
pub fn hypercube(n: usize) -> Result<MarkovChain> {
    if n == 0 {
        return Err(Error::InvalidParameter("hypercube dimension must be at least 1".into()));
    }
    let k2 = complete(2)?;
    let mut c = k2.clone();
    for _ in 1..n {
        c = tensor::product(&c, &k2)?.into_chain();
    }
    let labels = c.labels().iter().map(|l| l.replace(tensor::LABEL_SEP, "")).collect();
    c.relabeled(labels)
}

/// Unweighted cycle on `n >= 3` states.
pub fn cycle(n: usize) -> Result<MarkovChain> {
    if n < 3 {
        return Err(Error::InvalidParameter(format!("cycle needs n >= 3, got {n}")));
    }
    let mut edges = Vec::with_capacity(2 * n);
    for x in 0..n {
        edges.push((x, (x + 1) % n, 1.0));
        edges.push(((x + 1) % n, x, 1.0));
    }
    MarkovChain::from_edges(numbered(n), &edges, None)
}

/// Weighted 4-cycle on x1, x2, x3, x4.
///
/// The edges x1-x2 and x4-x3 carry rate `a_plus` in that direction and
/// `a_minus` back; x1-x4 and x2-x3 carry `b_plus` and `b_minus` likewise.
pub fn weighted_4cycle(a_plus: f64, a_minus: f64, b_plus: f64, b_minus: f64) -> Result<MarkovChain> {
    for (n, v) in [("a+", a_plus), ("a-", a_minus), ("b+", b_plus), ("b-", b_minus)] {
        positive(n, v)?;
    }
    let labels = ["x1", "x2", "x3", "x4"].iter().map(|s| s.to_string()).collect();
    let edges = [
        (0, 1, a_plus),
        (1, 0, a_minus),
        (3, 2, a_plus),
        (2, 3, a_minus),
        (0, 3, b_plus),
        (3, 0, b_minus),
        (1, 2, b_plus),
        (2, 1, b_minus),
    ];
    MarkovChain::from_edges(labels, &edges, None)
}

/// Birth-death chain on {0, ..., n} with birth rates `a` and death rates `b`.
///
/// `a` must have length `n` or `n + 1` (the last entry is dropped, as the
/// truncation sets the birth rate at `n` to zero); `b` has length `n + 1`
/// with `b[0] == 0`.
pub fn birth_death(a: &[f64], b: &[f64], n: usize) -> Result<MarkovChain> {
    if n == 0 {
        return Err(Error::InvalidParameter("truncation level must be at least 1".into()));
    }
    if a.len() != n && a.len() != n + 1 {
        return Err(Error::InvalidParameter(format!("birth rates need length {n} or {}", n + 1)));
    }
    if b.len() != n + 1 {
        return Err(Error::InvalidParameter(format!("death rates need length {}", n + 1)));
    }
    if b[0] != 0.0 {
        return Err(Error::InvalidParameter("death rate at 0 must be 0".into()));
    }
    let mut edges = Vec::with_capacity(2 * n);
    for x in 0..n {
        positive("birth rate", a[x])?;
        positive("death rate", b[x + 1])?;
        edges.push((x, x + 1, a[x]));
        edges.push((x + 1, x, b[x + 1]));
    }
    MarkovChain::from_edges(numbered(n + 1), &edges, None)
}

/// Truncated Poisson chain: birth rate `lambda`, death rate x.
pub fn poisson(lambda: f64, n: usize) -> Result<MarkovChain> {
    positive("lambda", lambda)?;
    let a = vec![lambda; n];
    let b: Vec<f64> = (0..=n).map(|x| x as f64).collect();
    birth_death(&a, &b, n)
}

/// Star with center 0 and leaves 1..=m: k(0, i) = `out_rates[i-1]`, k(i, 0) = `in_rates[i-1]`.
pub fn star(out_rates: &[f64], in_rates: &[f64]) -> Result<MarkovChain> {
    if out_rates.is_empty() || out_rates.len() != in_rates.len() {
        return Err(Error::InvalidParameter("star needs matching, nonempty rate lists".into()));
    }
    let mut edges = Vec::new();
    for (i, (&o, &r)) in out_rates.iter().zip(in_rates).enumerate() {
        positive("center-out rate", o)?;
        positive("leaf-in rate", r)?;
        edges.push((0, i + 1, o));
        edges.push((i + 1, 0, r));
    }
    MarkovChain::from_edges(numbered(out_rates.len() + 1), &edges, None)
}

/// Adds the edge x0 <-> y0 to a birth-death chain on {0..N}, with
/// k(x0, y0) = eps and k(y0, x0) = eps pi(x0) / pi(y0), keeping pi unchanged.
pub fn perturbed_birth_death(base: &MarkovChain, x0: usize, y0: usize, eps: f64) -> Result<MarkovChain> {
    positive("eps", eps)?;
    let n = base.n();
    if x0 >= n || y0 >= n {
        return Err(Error::InvalidParameter(format!("vertices ({x0}, {y0}) outside 0..{n}")));
    }
    if y0 < x0 + 2 {
        return Err(Error::InvalidParameter("need y0 >= x0 + 2 so the new edge is not already present".into()));
    }
    for x in 0..n {
        let ok = base.neighbors(x).iter().all(|&(y, _)| y + 1 == x || x + 1 == y);
        if !ok {
            return Err(Error::InvalidParameter("base chain is not a birth-death chain".into()));
        }
    }
    let pi = base.pi();
    let mut edges: Vec<(usize, usize, f64)> = Vec::with_capacity(base.edge_count() + 2);
    for x in 0..n {
        edges.extend(base.neighbors(x).iter().map(|&(y, k)| (x, y, k)));
    }
    edges.push((x0, y0, eps));
    edges.push((y0, x0, eps * pi[x0] / pi[y0]));
    MarkovChain::from_edges(base.labels().to_vec(), &edges, Some(pi))
}

/// Simple undirected graph with unit rates in both directions.
pub fn unweighted_graph(n: usize, undirected_edges: &[(usize, usize)]) -> Result<MarkovChain> {
    let mut edges = Vec::with_capacity(2 * undirected_edges.len());
    for &(a, b) in undirected_edges {
        edges.push((a, b, 1.0));
        edges.push((b, a, 1.0));
    }
    MarkovChain::from_edges(numbered(n), &edges, None)
}
