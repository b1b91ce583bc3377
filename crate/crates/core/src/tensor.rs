//! Product chains and checks of curvature tensorization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::chain::MarkovChain;
use crate::curvature::{cd_upsilon_check, CheckOutcome, CurvatureOptions};
use crate::error::{Error, Result};
use crate::upsilon::{psi2_upsilon, psi_upsilon, Residual};

/// Separator between factor labels in product state labels.
pub const LABEL_SEP: &str = "|";

/// Default state-count cap for [`product`].
pub const DEFAULT_PRODUCT_CAP: usize = 1_000_000;

/// Products above this size are checked on a random vertex sample.
pub const FULL_CHECK_LIMIT: usize = 2000;

/// Number of sampled vertices for large products.
pub const SAMPLE_SIZE: usize = 200;

/// The chain on X1 x X2 whose generator acts on each coordinate separately.
///
/// State (x, y) has flat index `x * n2 + y`.
#[derive(Debug, Clone)]
pub struct ProductChain {
    pub chain: MarkovChain,
    pub factor1: MarkovChain,
    pub factor2: MarkovChain,
}

pub fn product(c1: &MarkovChain, c2: &MarkovChain) -> Result<ProductChain> {
    product_with_cap(c1, c2, DEFAULT_PRODUCT_CAP)
}

pub fn product_with_cap(c1: &MarkovChain, c2: &MarkovChain, cap: usize) -> Result<ProductChain> {
    let (n1, n2) = (c1.n(), c2.n());
    match n1.checked_mul(n2) {
        Some(n) if n <= cap => {}
        _ => return Err(Error::SizeOverflow { n1, n2, cap }),
    }
    let mut edges = Vec::with_capacity(n1 * c2.edge_count() + n2 * c1.edge_count());
    for x in 0..n1 {
        for y in 0..n2 {
            let s = x * n2 + y;
            for &(x2, k) in c1.neighbors(x) {
                edges.push((s, x2 * n2 + y, k));
            }
            for &(y2, k) in c2.neighbors(y) {
                edges.push((s, x * n2 + y2, k));
            }
        }
    }
    let mut labels = Vec::with_capacity(n1 * n2);
    let mut pi = Vec::with_capacity(n1 * n2);
    for x in 0..n1 {
        for y in 0..n2 {
            labels.push(format!("{}{LABEL_SEP}{}", c1.label(x), c2.label(y)));
            pi.push(c1.pi()[x] * c2.pi()[y]);
        }
    }
    let chain = MarkovChain::from_edges(labels, &edges, Some(&pi))?;
    Ok(ProductChain { chain, factor1: c1.clone(), factor2: c2.clone() })
}

impl ProductChain {
    pub fn into_chain(self) -> MarkovChain {
        self.chain
    }

    pub fn n1(&self) -> usize {
        self.factor1.n()
    }

    pub fn n2(&self) -> usize {
        self.factor2.n()
    }

    pub fn index(&self, x: usize, y: usize) -> usize {
        x * self.n2() + y
    }

    pub fn coords(&self, s: usize) -> (usize, usize) {
        (s / self.n2(), s % self.n2())
    }

    /// The slice x -> f(x, y).
    pub fn slice_first(&self, f: &[f64], y: usize) -> Vec<f64> {
        (0..self.n1()).map(|x| f[self.index(x, y)]).collect()
    }

    /// The slice y -> f(x, y).
    pub fn slice_second(&self, f: &[f64], x: usize) -> Vec<f64> {
        (0..self.n2()).map(|y| f[self.index(x, y)]).collect()
    }

    /// Applies `op` to every slice of both kinds and adds the results pointwise.
    fn slice_sum(&self, f: &[f64], op: impl Fn(&MarkovChain, &[f64]) -> Result<Vec<f64>>) -> Result<Vec<f64>> {
        self.chain.check_len(f)?;
        let mut out = vec![0.0; f.len()];
        for y in 0..self.n2() {
            let v = op(&self.factor1, &self.slice_first(f, y))?;
            for x in 0..self.n1() {
                out[self.index(x, y)] += v[x];
            }
        }
        for x in 0..self.n1() {
            let v = op(&self.factor2, &self.slice_second(f, x))?;
            for y in 0..self.n2() {
                out[self.index(x, y)] += v[y];
            }
        }
        Ok(out)
    }

    /// Product generator against the sum of the factor generators on slices.
    pub fn generator_split_residual(&self, f: &[f64]) -> Result<Residual> {
        let direct = self.chain.generator_apply(f)?;
        let split = self.slice_sum(f, |c, s| c.generator_apply(s))?;
        Ok(crate::upsilon::field_residual(&direct, &split))
    }

    /// Psi_Upsilon on the product against the sum over slices.
    pub fn psi_split_residual(&self, f: &[f64]) -> Result<Residual> {
        let direct = psi_upsilon(&self.chain, f)?;
        let split = self.slice_sum(f, psi_upsilon)?;
        Ok(crate::upsilon::field_residual(&direct, &split))
    }

    /// Pointwise Psi_2 on the product minus the sum of the slice values.
    pub fn superadditivity_slack(&self, f: &[f64]) -> Result<Vec<f64>> {
        let direct = psi2_upsilon(&self.chain, f)?;
        let split = self.slice_sum(f, psi2_upsilon)?;
        Ok(direct.iter().zip(&split).map(|(a, b)| a - b).collect())
    }
}

/// Result of checking the product at the minimum of the factor constants.
#[derive(Debug, Clone, Serialize)]
pub struct TensorReport {
    pub kappa: f64,
    pub vertices: Vec<usize>,
    pub outcomes: Vec<CheckOutcome>,
    pub all_hold: bool,
    /// Smallest superadditivity slack over the random fields, relative to the local scale.
    pub min_superadditivity_slack: f64,
    pub superadditivity_holds: bool,
}

/// Vertex sample used for product checks: everything for small products,
/// otherwise a seeded uniform sample.
pub fn default_vertex_sample(n: usize, seed: u64) -> Vec<usize> {
    if n <= FULL_CHECK_LIMIT {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = rand::seq::index::sample(&mut rng, n, SAMPLE_SIZE).into_vec();
    v.sort_unstable();
    v
}

/// Verifies both factor constants, then checks the product at their minimum.
///
/// `fields` random fields (amplitude up to 3) are used for the superadditivity estimate.
pub fn tensor_curvature_check(
    c1: &MarkovChain,
    kappa1: f64,
    c2: &MarkovChain,
    kappa2: f64,
    vertices: Option<&[usize]>,
    fields: usize,
    opts: &CurvatureOptions,
) -> Result<TensorReport> {
    for (i, (c, k)) in [(c1, kappa1), (c2, kappa2)].into_iter().enumerate() {
        if c.n() == 1 {
            continue;
        }
        let ok: Vec<bool> = (0..c.n())
            .into_par_iter()
            .map(|x| cd_upsilon_check(c, k, x, opts).map(|o| o.holds))
            .collect::<Result<_>>()?;
        if let Some(x) = ok.iter().position(|h| !h) {
            return Err(Error::PrerequisiteFailed(format!("factor {} fails at vertex {x} with kappa {k}", i + 1)));
        }
    }
    let p = product(c1, c2)?;
    let kappa = kappa1.min(kappa2);
    let vs = match vertices {
        Some(v) => v.to_vec(),
        None => default_vertex_sample(p.chain.n(), opts.seed),
    };
    let outcomes: Vec<CheckOutcome> =
        vs.par_iter().map(|&x| cd_upsilon_check(&p.chain, kappa, x, opts)).collect::<Result<_>>()?;
    let all_hold = outcomes.iter().all(|o| o.holds);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x7e45);
    let mut min_slack = f64::INFINITY;
    let scale = p.chain.max_m1().powi(2);
    for _ in 0..fields {
        let amp = rng.random_range(0.1..3.0);
        let f: Vec<f64> = (0..p.chain.n()).map(|_| rng.random_range(-amp..amp)).collect();
        let s = p.superadditivity_slack(&f)?;
        for v in s {
            min_slack = min_slack.min(v / scale);
        }
    }
    Ok(TensorReport {
        kappa,
        vertices: vs,
        outcomes,
        all_hold,
        min_superadditivity_slack: min_slack,
        superadditivity_holds: fields == 0 || min_slack >= -1e-10,
    })
}
