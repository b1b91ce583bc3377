//! Per-vertex curvature constants.
//!
//! The Bakry-Emery constant is computed exactly from a quadratic form on the
//! two-ball. The Upsilon constant is estimated by minimizing the ratio
//! `Psi_2 / Psi` over fields normalized by `f(x) = 0`, written in the first
//! sphere differences `u`. Every second-sphere value is eliminated in closed
//! form: the objective is convex in each of them and the minimizer is
//! `w = log(sum c e^u) - log(sum c e^-u)` over the terms that share it.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Serialize, Serializer};

use crate::chain::MarkovChain;
use crate::error::{Error, Result};
use crate::optim::{bfgs, BfgsOptions};
use crate::scalar::{bregman_phi_p_prime, phi_p_prime, upsilon};
use crate::upsilon::{psi2_upsilon, psi_upsilon};

/// Amplitudes of the divergence probe along the branching witness family.
pub const PROBE_TAUS: [f64; 5] = [-10.0, -20.0, -40.0, -80.0, -160.0];

/// Small-field scales used as limit candidates around the Bakry-Emery witness.
const LIMIT_SCALES: [f64; 3] = [1e-4, 1e-5, 1e-6];

/// Configuration shared by the estimator and the checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvatureOptions {
    pub starts: usize,
    pub amplitude: f64,
    pub minus_inf_threshold: f64,
    /// Relative slack tolerance; the absolute tolerance is this times the local rate scale.
    pub tol_slack: f64,
    pub seed: u64,
    pub max_iter: usize,
    /// Bound on |f(y) - f(x)| during the search.
    pub cap: f64,
}

impl Default for CurvatureOptions {
    fn default() -> Self {
        CurvatureOptions {
            starts: 64,
            amplitude: 40.0,
            minus_inf_threshold: -1e6,
            tol_slack: 1e-8,
            seed: 0,
            max_iter: 400,
            cap: 200.0,
        }
    }
}

/// A curvature constant that may be unbounded below.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KappaValue {
    Finite(f64),
    MinusInfinity,
}

impl KappaValue {
    pub fn finite(&self) -> Option<f64> {
        match self {
            KappaValue::Finite(v) => Some(*v),
            KappaValue::MinusInfinity => None,
        }
    }

    pub fn is_minus_infinity(&self) -> bool {
        matches!(self, KappaValue::MinusInfinity)
    }

    /// Ordering-compatible numeric view (MinusInfinity maps to -inf).
    pub fn as_f64(&self) -> f64 {
        self.finite().unwrap_or(f64::NEG_INFINITY)
    }
}

impl Serialize for KappaValue {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            KappaValue::Finite(v) => s.serialize_f64(*v),
            KappaValue::MinusInfinity => s.serialize_str("minus_infinity"),
        }
    }
}

/// The center, first sphere and second sphere of a vertex.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TwoBall {
    pub center: usize,
    pub s1: Vec<usize>,
    pub s2: Vec<usize>,
}

impl TwoBall {
    pub fn new(chain: &MarkovChain, x: usize) -> Result<Self> {
        if x >= chain.n() {
            return Err(Error::InvalidParameter(format!("vertex {x} out of range")));
        }
        let s1: Vec<usize> = chain.neighbors(x).iter().map(|e| e.0).collect();
        if s1.is_empty() {
            return Err(Error::IsolatedVertex(x));
        }
        let mut s2: Vec<usize> = s1
            .iter()
            .flat_map(|&y| chain.neighbors(y).iter().map(|e| e.0))
            .filter(|&z| z != x && !s1.contains(&z))
            .collect();
        s2.sort_unstable();
        s2.dedup();
        Ok(TwoBall { center: x, s1, s2 })
    }

    /// Number of free values once f(x) is fixed.
    pub fn free_count(&self) -> usize {
        self.s1.len() + self.s2.len()
    }

    /// The largest jump rate among the center and its neighbours.
    pub fn rate_scale(&self, chain: &MarkovChain) -> f64 {
        self.s1.iter().map(|&y| chain.m1(y)).fold(chain.m1(self.center), f64::max)
    }
}

/// G(p, q) = Upsilon(q - p) - Upsilon'(p)(q - p) and its two partial derivatives.
#[inline]
fn pair_term(p: f64, q: f64) -> (f64, f64, f64) {
    let s = q - p;
    let ep = p.exp();
    let eqp = s.exp();
    (upsilon(s) - p.exp_m1() * s, ep - eqp - ep * s, eqp - ep)
}

/// Logarithm of sum c_i e^{sign * u_i}, evaluated without overflow.
fn log_sum_exp(terms: &[(usize, f64)], u: &[f64], sign: f64) -> f64 {
    let m = terms.iter().map(|&(i, c)| c.ln() + sign * u[i]).fold(f64::NEG_INFINITY, f64::max);
    m + terms.iter().map(|&(i, c)| (c.ln() + sign * u[i] - m).exp()).sum::<f64>().ln()
}

/// Ratio objective in first-sphere differences for one vertex.
#[derive(Debug, Clone)]
struct Reduced {
    ball: TwoBall,
    a: Vec<f64>,
    m1: f64,
    to_center: Vec<(usize, f64)>,
    within_s1: Vec<(usize, usize, f64)>,
    groups: Vec<Vec<(usize, f64)>>,
    /// 1/d for the dimensional variant; 0 for d = infinity.
    inv_dim: f64,
}

impl Reduced {
    fn new(chain: &MarkovChain, x: usize, inv_dim: f64) -> Result<Self> {
        let ball = TwoBall::new(chain, x)?;
        let pos = |v: usize, list: &[usize]| list.binary_search(&v).ok();
        let mut s1_sorted = ball.s1.clone();
        s1_sorted.sort_unstable();
        debug_assert_eq!(s1_sorted, ball.s1);
        let a: Vec<f64> = chain.neighbors(x).iter().map(|e| e.1).collect();
        let mut to_center = Vec::new();
        let mut within_s1 = Vec::new();
        let mut groups: Vec<Vec<(usize, f64)>> = vec![Vec::new(); ball.s2.len()];
        for (i, &y) in ball.s1.iter().enumerate() {
            for &(z, kyz) in chain.neighbors(y) {
                let c = a[i] * kyz;
                if z == x {
                    to_center.push((i, c));
                } else if let Some(j) = pos(z, &ball.s1) {
                    within_s1.push((i, j, c));
                } else {
                    let s = pos(z, &ball.s2).expect("second sphere vertex");
                    groups[s].push((i, c));
                }
            }
        }
        Ok(Reduced { m1: chain.m1(x), ball, a, to_center, within_s1, groups, inv_dim })
    }

    fn m(&self) -> usize {
        self.a.len()
    }

    fn s2_values(&self, u: &[f64]) -> Vec<f64> {
        self.groups.iter().map(|g| log_sum_exp(g, u, 1.0) - log_sum_exp(g, u, -1.0)).collect()
    }

    /// Returns (numerator, denominator) of the ratio with their gradients,
    /// where numerator = 2 Psi_2 - 2 (Lf)^2 / d and denominator = 2 Psi.
    fn eval(&self, u: &[f64], gn: &mut [f64], gd: &mut [f64]) -> (f64, f64) {
        let m = self.m();
        gn.iter_mut().for_each(|v| *v = 0.0);
        let mut num = 0.0;
        for &(i, c) in &self.to_center {
            let (g, dp, _) = pair_term(u[i], 0.0);
            num += c * g;
            gn[i] += c * dp;
        }
        for &(i, j, c) in &self.within_s1 {
            let (g, dp, dq) = pair_term(u[i], u[j]);
            num += c * g;
            gn[i] += c * dp;
            gn[j] += c * dq;
        }
        for (grp, w) in self.groups.iter().zip(self.s2_values(u)) {
            for &(i, c) in grp {
                let (g, dp, _) = pair_term(u[i], w);
                num += c * g;
                gn[i] += c * dp;
            }
        }
        let (mut sa, mut sb, mut ss) = (0.0, 0.0, 0.0);
        for i in 0..m {
            sa += self.a[i] * u[i].exp_m1();
            sb += self.a[i] * u[i];
            ss += self.a[i] * upsilon(u[i]);
        }
        num += sa * sb - self.m1 * ss - 2.0 * self.inv_dim * sb * sb;
        for i in 0..m {
            let ai = self.a[i];
            gn[i] += ai * u[i].exp() * sb + sa * ai - self.m1 * ai * u[i].exp_m1() - 4.0 * self.inv_dim * sb * ai;
            gd[i] = 2.0 * ai * u[i].exp_m1();
        }
        (num, 2.0 * ss)
    }

    fn ratio(&self, u: &[f64]) -> f64 {
        let m = self.m();
        let (mut gn, mut gd) = (vec![0.0; m], vec![0.0; m]);
        let (n, d) = self.eval(u, &mut gn, &mut gd);
        if d > 0.0 {
            n / d
        } else {
            f64::INFINITY
        }
    }

    fn ratio_grad(&self, u: &[f64], g: &mut [f64]) -> f64 {
        let m = self.m();
        let mut gd = vec![0.0; m];
        let (n, d) = self.eval(u, g, &mut gd);
        if !(d > 0.0) {
            return f64::INFINITY;
        }
        let r = n / d;
        for i in 0..m {
            g[i] = (g[i] - r * gd[i]) / d;
        }
        r
    }

    /// Full-chain field with f(x) = 0, first sphere `u`, optimal second sphere.
    fn field(&self, n: usize, u: &[f64]) -> Vec<f64> {
        let mut f = vec![0.0; n];
        for (i, &y) in self.ball.s1.iter().enumerate() {
            f[y] = u[i];
        }
        for (s, w) in self.ball.s2.iter().zip(self.s2_values(u)) {
            f[*s] = w;
        }
        f
    }

    /// Branching family: u = tau on every neighbour except `j`, where u = -tau.
    fn family_point(&self, j: usize, tau: f64) -> Vec<f64> {
        (0..self.m()).map(|i| if i == j { -tau } else { tau }).collect()
    }

    /// Looks for divergence to -infinity along the branching family.
    fn probe(&self, opts: &CurvatureOptions, scale: f64) -> Option<(Vec<f64>, Vec<f64>)> {
        for j in 0..self.m() {
            let ratios: Vec<f64> = PROBE_TAUS.iter().map(|&t| self.ratio(&self.family_point(j, t))).collect();
            if diverges(&ratios, opts.minus_inf_threshold, scale) {
                return Some((ratios, self.family_point(j, *PROBE_TAUS.last().unwrap())));
            }
        }
        None
    }
}

/// Decides whether ratios along a doubling amplitude sweep head to -infinity.
///
/// Either the last value is below `threshold`, or the decrements are positive
/// and keep growing geometrically, which is the signature of unbounded
/// (at least linear) decay. Bounded cases approach their limit with
/// exponentially shrinking decrements.
fn diverges(ratios: &[f64], threshold: f64, scale: f64) -> bool {
    let last = *ratios.last().unwrap();
    if last < threshold {
        return true;
    }
    if ratios.iter().any(|r| !r.is_finite()) {
        return false;
    }
    let dec: Vec<f64> = ratios.windows(2).map(|w| w[0] - w[1]).collect();
    let k = dec.len();
    k >= 3
        && dec[k - 1] > 1e-2 * scale
        && dec[k - 2] > 0.0
        && dec[k - 1] >= 1.5 * dec[k - 2]
        && dec[k - 2] >= 1.5 * dec[k - 3]
}

/// Diagnostics attached to every optimizer-based result.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub starts_run: usize,
    pub converged_starts: usize,
    /// Number of optimized starts that reached the best value within 1e-7 relative.
    pub agreeing_starts: usize,
    /// True when the best value came from a small-field limit candidate.
    pub best_from_limit: bool,
    pub converged: bool,
    /// Ratios along the divergence probe, when it fired.
    pub probe_ratios: Option<Vec<f64>>,
}

struct Search {
    value: f64,
    u: Vec<f64>,
    diagnostics: Diagnostics,
}

fn vertex_rng(seed: u64, x: usize, salt: u64) -> ChaCha8Rng {
    let mix = seed ^ (x as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ salt.wrapping_mul(0xD1B5_4A32_D192_ED03);
    ChaCha8Rng::seed_from_u64(mix)
}

fn start_points(m: usize, opts: &CurvatureOptions, rng: &mut ChaCha8Rng, extra: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let t = opts.amplitude;
    let levels = [-t, -0.5 * t, 0.0, 0.5 * t, t];
    let scales = [0.5, 2.0, 8.0];
    let mut out: Vec<Vec<f64>> = extra.to_vec();
    let random = opts.starts.saturating_sub(out.len()).max(2);
    for s in 0..random {
        let p: Vec<f64> = if s % 2 == 0 {
            loop {
                let p: Vec<f64> = (0..m).map(|_| levels[rng.random_range(0..levels.len())]).collect();
                if p.iter().any(|&v| v != 0.0) {
                    break p;
                }
            }
        } else {
            let sc = scales[(s / 2) % scales.len()];
            (0..m).map(|_| sc * rng.sample::<f64, _>(StandardNormal)).collect()
        };
        out.push(p);
    }
    out
}

/// Minimizes the reduced ratio from many starts; includes limit candidates.
fn search(red: &Reduced, chain: &MarkovChain, opts: &CurvatureOptions, salt: u64) -> Search {
    let m = red.m();
    let x = red.ball.center;
    let mut rng = vertex_rng(opts.seed, x, salt);
    let be = bakry_emery_direction(chain, x).ok();
    let mut limits: Vec<Vec<f64>> = Vec::new();
    let mut extra: Vec<Vec<f64>> = Vec::new();
    if let Some(v) = &be {
        for &l in &LIMIT_SCALES {
            for sgn in [1.0, -1.0] {
                limits.push(v.iter().map(|c| sgn * l * c).collect());
            }
        }
        for sc in [0.5, -0.5, 2.0, -2.0] {
            extra.push(v.iter().map(|c| sc * c).collect());
        }
    }
    for j in 0..m {
        for t in [1.0, -1.0, 5.0, -5.0] {
            extra.push(red.family_point(j, t));
        }
    }
    let starts = start_points(m, opts, &mut rng, &extra);
    let bopts = BfgsOptions { max_iter: opts.max_iter, grad_tol: 1e-11, cap: opts.cap };
    let runs: Vec<_> = starts.par_iter().map(|s| bfgs(|u, g| red.ratio_grad(u, g), s, &bopts)).collect();
    let mut best = (f64::INFINITY, vec![0.0; m], false);
    for r in &runs {
        if r.value < best.0 {
            best = (r.value, r.x.clone(), false);
        }
    }
    for l in &limits {
        let v = red.ratio(l);
        if v < best.0 {
            best = (v, l.clone(), true);
        }
    }
    let band = 1e-7 * (1.0 + best.0.abs());
    let agreeing = runs.iter().filter(|r| r.value <= best.0 + band).count();
    let converged_starts = runs.iter().filter(|r| r.converged).count();
    let diagnostics = Diagnostics {
        starts_run: runs.len(),
        converged_starts,
        agreeing_starts: agreeing,
        best_from_limit: best.2,
        converged: best.2 || agreeing >= 2,
        probe_ratios: None,
    };
    Search { value: best.0, u: best.1, diagnostics }
}

/// Exact Bakry-Emery constant at one vertex with a minimizing field.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BakryEmery {
    pub kappa: f64,
    pub witness: Vec<f64>,
}

/// Quadratic form 2 Gamma_2 = z^T Q z / 2 on (S1, S2) with f(x) = 0.
fn gamma2_hessian(chain: &MarkovChain, ball: &TwoBall) -> DMatrix<f64> {
    let m = ball.s1.len();
    let k = ball.free_count();
    let x = ball.center;
    let idx = |v: usize| -> Option<usize> {
        ball.s1.binary_search(&v).ok().or_else(|| ball.s2.binary_search(&v).ok().map(|s| m + s))
    };
    let a: Vec<f64> = chain.neighbors(x).iter().map(|e| e.1).collect();
    let mut q = DMatrix::<f64>::zeros(k, k);
    for (i, &y) in ball.s1.iter().enumerate() {
        for &(z, kyz) in chain.neighbors(y) {
            let c = a[i] * kyz;
            // c (q^2/2 - 2 p q + 3 p^2 / 2), p = u_i, q = f(z).
            q[(i, i)] += 3.0 * c;
            if z != x {
                let j = idx(z).expect("two-ball vertex");
                q[(j, j)] += c;
                q[(i, j)] -= 2.0 * c;
                q[(j, i)] -= 2.0 * c;
            }
        }
    }
    let m1 = chain.m1(x);
    for i in 0..m {
        for j in 0..m {
            q[(i, j)] += 2.0 * a[i] * a[j];
        }
        q[(i, i)] -= m1 * a[i];
    }
    q
}

/// Exact Bakry-Emery curvature at `x`.
pub fn bakry_emery_kappa(chain: &MarkovChain, x: usize) -> Result<BakryEmery> {
    let ball = TwoBall::new(chain, x)?;
    let (kappa, u, v) = bakry_emery_parts(chain, &ball);
    let mut f = vec![0.0; chain.n()];
    for (i, &y) in ball.s1.iter().enumerate() {
        f[y] = u[i];
    }
    for (s, &z) in ball.s2.iter().enumerate() {
        f[z] = v[s];
    }
    Ok(BakryEmery { kappa, witness: f })
}

fn bakry_emery_parts(chain: &MarkovChain, ball: &TwoBall) -> (f64, Vec<f64>, Vec<f64>) {
    let m = ball.s1.len();
    let k = ball.free_count();
    let q = gamma2_hessian(chain, ball);
    // Schur complement over the second sphere; its block is diagonal and positive.
    let mut r = q.view((0, 0), (m, m)).into_owned();
    for s in m..k {
        let qss = q[(s, s)];
        for i in 0..m {
            for j in 0..m {
                r[(i, j)] -= q[(i, s)] * q[(s, j)] / qss;
            }
        }
    }
    let a: Vec<f64> = chain.neighbors(ball.center).iter().map(|e| e.1).collect();
    let scale: Vec<f64> = a.iter().map(|v| 1.0 / (2.0 * v).sqrt()).collect();
    let mut s = r.clone();
    for i in 0..m {
        for j in 0..m {
            s[(i, j)] *= scale[i] * scale[j];
        }
    }
    let s = 0.5 * (&s + s.transpose());
    let eig = SymmetricEigen::new(s);
    let (imin, &kappa) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|p, q| p.1.total_cmp(q.1))
        .expect("nonempty spectrum");
    let e = eig.eigenvectors.column(imin);
    let u: Vec<f64> = (0..m).map(|i| e[i] * scale[i]).collect();
    let v: Vec<f64> = (m..k).map(|s| -(0..m).map(|i| q[(s, i)] * u[i]).sum::<f64>() / q[(s, s)]).collect();
    (kappa, u, v)
}

/// First-sphere part of the Bakry-Emery minimizer, normalized to unit sup-norm.
fn bakry_emery_direction(chain: &MarkovChain, x: usize) -> Result<Vec<f64>> {
    let ball = TwoBall::new(chain, x)?;
    let (_, u, _) = bakry_emery_parts(chain, &ball);
    let n = u.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    Ok(u.iter().map(|v| v / n).collect())
}

/// Best-found Upsilon curvature at one vertex.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UpsilonEstimate {
    pub kappa: KappaValue,
    /// Field on the whole chain, zero at the vertex and outside its two-ball.
    pub witness: Vec<f64>,
    pub diagnostics: Diagnostics,
}

/// Estimates the Upsilon curvature constant at `x`.
///
/// Non-convergence is reported through `diagnostics.converged` together with
/// the best value found.
pub fn cd_upsilon_kappa(chain: &MarkovChain, x: usize, opts: &CurvatureOptions) -> Result<UpsilonEstimate> {
    let red = Reduced::new(chain, x, 0.0)?;
    let scale = red.ball.rate_scale(chain);
    if let Some((ratios, u)) = red.probe(opts, scale) {
        return Ok(UpsilonEstimate {
            kappa: KappaValue::MinusInfinity,
            witness: red.field(chain.n(), &u),
            diagnostics: Diagnostics {
                starts_run: 0,
                converged_starts: 0,
                agreeing_starts: 0,
                best_from_limit: false,
                converged: true,
                probe_ratios: Some(ratios),
            },
        });
    }
    let s = search(&red, chain, opts, 0);
    Ok(UpsilonEstimate { kappa: KappaValue::Finite(s.value), witness: red.field(chain.n(), &s.u), diagnostics: s.diagnostics })
}

/// Verdict of a curvature-dimension check at one vertex.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub holds: bool,
    /// Infimum found of (Psi_2 - (Lf)^2/d) / Psi minus kappa; -inf when unbounded below.
    pub worst_slack: f64,
    pub tolerance: f64,
    pub counterexample: Option<Vec<f64>>,
    pub diagnostics: Diagnostics,
}

fn check_with(chain: &MarkovChain, kappa: f64, inv_dim: f64, x: usize, opts: &CurvatureOptions) -> Result<CheckOutcome> {
    let red = Reduced::new(chain, x, inv_dim)?;
    let scale = red.ball.rate_scale(chain);
    let tolerance = opts.tol_slack * scale;
    if let Some((ratios, u)) = red.probe(opts, scale) {
        return Ok(CheckOutcome {
            holds: false,
            worst_slack: f64::NEG_INFINITY,
            tolerance,
            counterexample: Some(red.field(chain.n(), &u)),
            diagnostics: Diagnostics {
                starts_run: 0,
                converged_starts: 0,
                agreeing_starts: 0,
                best_from_limit: false,
                converged: true,
                probe_ratios: Some(ratios),
            },
        });
    }
    let s = search(&red, chain, opts, 1);
    let slack = s.value - kappa;
    let holds = slack >= -tolerance;
    Ok(CheckOutcome {
        holds,
        worst_slack: slack,
        tolerance,
        counterexample: (!holds).then(|| red.field(chain.n(), &s.u)),
        diagnostics: s.diagnostics,
    })
}

/// Checks Psi_2(f)(x) >= kappa Psi(f)(x) for all f.
pub fn cd_upsilon_check(chain: &MarkovChain, kappa: f64, x: usize, opts: &CurvatureOptions) -> Result<CheckOutcome> {
    check_with(chain, kappa, 0.0, x, opts)
}

/// Checks Psi_2(f)(x) >= (Lf)(x)^2 / d + kappa Psi(f)(x); `d = inf` is allowed.
pub fn cd_upsilon_dim_check(
    chain: &MarkovChain,
    kappa: f64,
    d: f64,
    x: usize,
    opts: &CurvatureOptions,
) -> Result<CheckOutcome> {
    if !(d > 0.0) {
        return Err(Error::InvalidParameter(format!("dimension {d} must be positive")));
    }
    check_with(chain, kappa, 1.0 / d, x, opts)
}

/// Psi^{(p)}(f) at one vertex.
fn psi_p_at(chain: &MarkovChain, p: f64, f: &[f64], y: usize) -> f64 {
    chain
        .neighbors(y)
        .iter()
        .map(|&(z, k)| -k * bregman_phi_p_prime(p, f[z], f[y]).unwrap_or(f64::NAN))
        .sum()
}

fn l_dphi_at(chain: &MarkovChain, dphi: &[f64], y: usize) -> f64 {
    chain.neighbors(y).iter().map(|&(z, k)| k * (dphi[z] - dphi[y])).sum()
}

/// (Psi_2^{(p)}(f)(x), Psi^{(p)}(f)(x)) from values on the two-ball only.
pub fn psi2_p_local(chain: &MarkovChain, p: f64, f: &[f64], x: usize) -> (f64, f64) {
    let q = p - 1.0;
    // Differences of Phi_p' only; the constant 1/p cancels.
    let dphi: Vec<f64> = f.iter().map(|&v| (q * v.ln()).exp_m1() / q).collect();
    let px = psi_p_at(chain, p, f, x);
    let lx = l_dphi_at(chain, &dphi, x);
    let mut s = 0.0;
    for &(y, k) in chain.neighbors(x) {
        let py = psi_p_at(chain, p, f, y);
        let ly = l_dphi_at(chain, &dphi, y);
        s += k * ((py - px) - (f[y] / f[x] - 1.0) * (ly - lx));
    }
    (0.5 * s, px)
}

/// Checks Psi_2^{(p)}(f)(x) >= kappa / (2 - p) Psi^{(p)}(f)(x) over positive f = exp(g), g(x) = 0.
pub fn cd_p_check(chain: &MarkovChain, p: f64, kappa: f64, x: usize, opts: &CurvatureOptions) -> Result<CheckOutcome> {
    if !(p > 1.0 && p < 2.0) {
        return Err(Error::InvalidParameter(format!("p = {p} must lie in (1, 2)")));
    }
    // Sanity-check the evaluator's domain once.
    phi_p_prime(p, 1.0)?;
    let ball = TwoBall::new(chain, x)?;
    let vars: Vec<usize> = ball.s1.iter().chain(&ball.s2).copied().collect();
    let k = vars.len();
    let n = chain.n();
    let target = kappa / (2.0 - p);
    let scale = ball.rate_scale(chain);
    let tolerance = opts.tol_slack * scale;
    let to_field = |g: &[f64]| -> Vec<f64> {
        let mut f = vec![1.0; n];
        for (i, &v) in vars.iter().enumerate() {
            f[v] = g[i].exp();
        }
        f
    };
    let ratio = |g: &[f64]| -> f64 {
        let (num, den) = psi2_p_local(chain, p, &to_field(g), x);
        if den > 0.0 && num.is_finite() {
            num / den
        } else {
            f64::INFINITY
        }
    };
    let obj = |g: &[f64], grad: &mut [f64]| -> f64 {
        let r = ratio(g);
        let mut gp = g.to_vec();
        for i in 0..k {
            let h = 1e-6 * (1.0 + g[i].abs());
            gp[i] = g[i] + h;
            let up = ratio(&gp);
            gp[i] = g[i] - h;
            let dn = ratio(&gp);
            gp[i] = g[i];
            grad[i] = (up - dn) / (2.0 * h);
        }
        r
    };
    let mut rng = vertex_rng(opts.seed, x, 2);
    let mut extra = Vec::new();
    for i in 0..k {
        for t in [0.5, -0.5, 3.0, -3.0] {
            let mut e = vec![0.0; k];
            e[i] = t;
            extra.push(e);
        }
    }
    let popts = CurvatureOptions { starts: opts.starts.max(extra.len() + 8), amplitude: opts.amplitude.min(10.0), ..*opts };
    let starts = start_points(k, &popts, &mut rng, &extra);
    let bopts = BfgsOptions { max_iter: opts.max_iter, grad_tol: 1e-9, cap: 30.0 };
    let runs: Vec<_> = starts.par_iter().map(|s| bfgs(obj, s, &bopts)).collect();
    let mut best = (f64::INFINITY, vec![0.0; k], false);
    for r in &runs {
        if r.value < best.0 {
            best = (r.value, r.x.clone(), false);
        }
    }
    for i in 0..k {
        for l in [1e-3, -1e-3] {
            let mut e = vec![0.0; k];
            e[i] = l;
            let v = ratio(&e);
            if v < best.0 {
                best = (v, e, true);
            }
        }
    }
    let band = 1e-7 * (1.0 + best.0.abs());
    let agreeing = runs.iter().filter(|r| r.value <= best.0 + band).count();
    let slack = best.0 - target;
    let holds = slack >= -tolerance;
    Ok(CheckOutcome {
        holds,
        worst_slack: slack,
        tolerance,
        counterexample: (!holds).then(|| to_field(&best.1)),
        diagnostics: Diagnostics {
            starts_run: runs.len(),
            converged_starts: runs.iter().filter(|r| r.converged).count(),
            agreeing_starts: agreeing,
            best_from_limit: best.2,
            converged: best.2 || agreeing >= 2,
            probe_ratios: None,
        },
    })
}

/// Field of the branching family at amplitude `tau`: f(y) - f(x) = -tau,
/// tau on the other neighbours of x, and each second-sphere value continues
/// its neighbour's increment.
pub fn no_lower_bound_witness(chain: &MarkovChain, x: usize, y: usize, tau: f64) -> Result<Vec<f64>> {
    if x >= chain.n() || y >= chain.n() || chain.rate(x, y) == 0.0 {
        return Err(Error::InvalidParameter(format!("no edge between {x} and {y}")));
    }
    let cond = chain.m1(x) + chain.m1(y) - 2.0 * (chain.rate(x, y) + chain.rate(y, x));
    let tol = 1e-12 * (chain.m1(x) + chain.m1(y));
    if cond <= tol {
        return Err(Error::ConditionNotMet(cond));
    }
    if let Some(g) = chain.girth() {
        if g < 5 {
            return Err(Error::GirthTooSmall(g));
        }
    }
    let mut f = vec![0.0; chain.n()];
    for &(yi, _) in chain.neighbors(x) {
        let inc = if yi == y { -tau } else { tau };
        f[yi] = inc;
        for &(z, _) in chain.neighbors(yi) {
            if z != x {
                f[z] = 2.0 * inc;
            }
        }
    }
    Ok(f)
}

/// Ratio Psi_2(f)(x) / Psi(f)(x) computed with the definitional operators.
pub fn upsilon_ratio(chain: &MarkovChain, f: &[f64], x: usize) -> Result<f64> {
    let psi = psi_upsilon(chain, f)?;
    let psi2 = psi2_upsilon(chain, f)?;
    Ok(psi2[x] / psi[x])
}

/// The test field tau (y - n) on {n-2, ..., n+2} of a birth-death chain, zero elsewhere.
pub fn birth_death_family_field(n_states: usize, n: usize, tau: f64) -> Result<Vec<f64>> {
    if n < 2 || n + 2 >= n_states {
        return Err(Error::InvalidParameter(format!("vertex {n} needs two neighbours on each side")));
    }
    let mut f = vec![0.0; n_states];
    for y in n - 2..=n + 2 {
        if y != n {
            f[y] = tau * (y as f64 - n as f64);
        }
    }
    Ok(f)
}

/// Certified constant for a strictly monotone birth-death chain:
/// the minimum over x >= 1 of sqrt(2 min(da, db) (da + db)), with
/// da = a(x-1) - a(x), db = b(x) - b(x-1) and a(N) = 0.
pub fn birth_death_kappa_bound(a: &[f64], b: &[f64], n: usize) -> Result<f64> {
    if n == 0 || (a.len() != n && a.len() != n + 1) || b.len() != n + 1 {
        return Err(Error::InvalidParameter("rate lists do not match the truncation level".into()));
    }
    let birth = |x: usize| if x >= n { 0.0 } else { a[x] };
    let mut kappa = f64::INFINITY;
    for x in 1..=n {
        let da = birth(x - 1) - birth(x);
        let db = b[x] - b[x - 1];
        if !(da > 0.0 && db > 0.0) {
            return Err(Error::MonotonicityViolated(x));
        }
        kappa = kappa.min((2.0 * da.min(db) * (da + db)).sqrt());
    }
    Ok(kappa)
}

/// Sufficient condition for CD_Upsilon(kappa) on a weighted star.
pub fn star_kappa_certificate(chain: &MarkovChain, kappa: f64) -> Result<bool> {
    let center = star_center(chain).ok_or(Error::NotAStar)?;
    let m1 = chain.m1(center);
    let bound = kappa / (1.0 + 3f64.sqrt());
    Ok(chain.neighbors(center).iter().all(|&(leaf, out)| {
        let back = chain.rate(leaf, center);
        back - (m1 - out) >= kappa && out >= bound
    }))
}

/// Index of the center when the chain is a star, i.e. every other vertex is a
/// leaf attached to it.
pub fn star_center(chain: &MarkovChain) -> Option<usize> {
    let n = chain.n();
    if n < 2 {
        return None;
    }
    (0..n).find(|&c| chain.degree(c) == n - 1 && (0..n).all(|v| v == c || chain.degree(v) == 1))
}

/// Per-vertex part of a curvature report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VertexReport {
    pub vertex: String,
    pub index: usize,
    pub kappa_be: f64,
    pub kappa_upsilon: KappaValue,
    /// (Psi_2 - kappa Psi) / Psi at the witness, from the definitional operators.
    pub slack: Option<f64>,
    pub witness: Vec<f64>,
    pub witness_be: Vec<f64>,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GlobalKappa {
    pub kappa_be: f64,
    pub kappa_upsilon: KappaValue,
    pub converged: bool,
}

/// Curvature constants for a set of vertices.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvatureReport {
    pub chain_hash: String,
    pub per_vertex: Vec<VertexReport>,
    pub global: GlobalKappa,
    pub seed: u64,
    pub opts: CurvatureOptions,
}

/// Evaluates both constants at `vertices` (all when `None`), in parallel.
pub fn curvature_report(
    chain: &MarkovChain,
    vertices: Option<&[usize]>,
    opts: &CurvatureOptions,
) -> Result<CurvatureReport> {
    let all: Vec<usize> = (0..chain.n()).collect();
    let vs = vertices.unwrap_or(&all);
    let per_vertex: Vec<VertexReport> = vs
        .par_iter()
        .map(|&x| -> Result<VertexReport> {
            let be = bakry_emery_kappa(chain, x)?;
            let up = cd_upsilon_kappa(chain, x, opts)?;
            let slack = match up.kappa {
                KappaValue::Finite(k) => {
                    let psi = psi_upsilon(chain, &up.witness)?[x];
                    let psi2 = psi2_upsilon(chain, &up.witness)?[x];
                    Some((psi2 - k * psi) / psi)
                }
                KappaValue::MinusInfinity => None,
            };
            Ok(VertexReport {
                vertex: chain.label(x).to_string(),
                index: x,
                kappa_be: be.kappa,
                kappa_upsilon: up.kappa,
                slack,
                witness: up.witness,
                witness_be: be.witness,
                diagnostics: up.diagnostics,
            })
        })
        .collect::<Result<_>>()?;
    let kappa_be = per_vertex.iter().map(|v| v.kappa_be).fold(f64::INFINITY, f64::min);
    let ku = per_vertex.iter().map(|v| v.kappa_upsilon.as_f64()).fold(f64::INFINITY, f64::min);
    let kappa_upsilon = if ku == f64::NEG_INFINITY { KappaValue::MinusInfinity } else { KappaValue::Finite(ku) };
    let converged = per_vertex.iter().all(|v| v.diagnostics.converged);
    Ok(CurvatureReport {
        chain_hash: chain.chain_hash(),
        per_vertex,
        global: GlobalKappa { kappa_be, kappa_upsilon, converged },
        seed: opts.seed,
        opts: *opts,
    })
}
