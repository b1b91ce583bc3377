//! Heat flow of densities, entropy functionals along it, and the functional
//! inequalities they satisfy.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::Exp1;
use serde::Serialize;

use crate::chain::MarkovChain;
use crate::error::{Error, Result};
use crate::scalar::{phi_p, phi_p_prime, upsilon};
use crate::upsilon::{log_mean, log_mean_d1, psi2_p, psi2_upsilon, psi_p, psi_upsilon, Residual};

/// Largest state count for which the dense exponential is the default.
pub const DENSE_LIMIT: usize = 400;

/// Tolerance on the total mass of a density.
pub const MASS_TOL: f64 = 1e-10;

/// Maximum number of consecutive step halvings in the adaptive integrator.
const MAX_HALVINGS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FlowMethod {
    /// Dense exponential up to [`DENSE_LIMIT`] states, adaptive Runge-Kutta beyond.
    Auto,
    Dense,
    RungeKutta,
}

/// Tolerances of the adaptive integrator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlowOptions {
    pub method: FlowMethod,
    pub rtol: f64,
    pub atol: f64,
}

impl Default for FlowOptions {
    fn default() -> Self {
        FlowOptions { method: FlowMethod::Auto, rtol: 1e-11, atol: 1e-14 }
    }
}

/// Evolves fields under P_t = exp(tL).
pub struct Semigroup<'a> {
    chain: &'a MarkovChain,
    dense: Option<DMatrix<f64>>,
    opts: FlowOptions,
    cache: HashMap<u64, DMatrix<f64>>,
}

impl<'a> Semigroup<'a> {
    pub fn new(chain: &'a MarkovChain, opts: FlowOptions) -> Self {
        let use_dense = match opts.method {
            FlowMethod::Auto => chain.n() <= DENSE_LIMIT,
            FlowMethod::Dense => true,
            FlowMethod::RungeKutta => false,
        };
        let dense = use_dense.then(|| DMatrix::from_row_slice(chain.n(), chain.n(), &chain.dense_generator()));
        Semigroup { chain, dense, opts, cache: HashMap::new() }
    }

    /// Returns P_t f. Fields that must stay positive are checked by `positive`.
    pub fn advance(&mut self, f: &[f64], t: f64, positive: bool) -> Result<Vec<f64>> {
        self.advance_shifted(f, t, positive.then_some(0.0))
    }

    /// Returns P_t u, requiring `shift + P_t u > 0` when a shift is given.
    /// Constants are fixed by P_t, so evolving `rho - 1` keeps rounding proportional to the deviation.
    fn advance_shifted(&mut self, f: &[f64], t: f64, shift: Option<f64>) -> Result<Vec<f64>> {
        self.chain.check_len(f)?;
        if !(t >= 0.0 && t.is_finite()) {
            return Err(Error::InvalidParameter(format!("time {t} must be nonnegative and finite")));
        }
        if t == 0.0 {
            return Ok(f.to_vec());
        }
        let out = match &self.dense {
            Some(gen) => {
                // Steps of a uniform grid differ only in the last bits; share one exponential.
                let tq: f64 = format!("{t:.13e}").parse().expect("formatted float");
                if self.cache.len() >= 16 && !self.cache.contains_key(&tq.to_bits()) {
                    self.cache.clear();
                }
                let e = self.cache.entry(tq.to_bits()).or_insert_with(|| (gen * tq).exp());
                (&*e * DVector::from_column_slice(f)).as_slice().to_vec()
            }
            None => rk_advance(self.chain, f, t, &self.opts, shift)?,
        };
        if let Some(s) = shift {
            if let Some(&v) = out.iter().find(|v| !(s + **v > 0.0)) {
                return Err(Error::PositivityLoss(s + v));
            }
        }
        Ok(out)
    }
}

/// P_t f for a single time.
pub fn semigroup_apply(chain: &MarkovChain, f: &[f64], t: f64) -> Result<Vec<f64>> {
    Semigroup::new(chain, FlowOptions::default()).advance(f, t, false)
}

// Dormand-Prince 5(4) tableau; the generator is time independent, so the nodes are not needed.
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

fn rk_advance(chain: &MarkovChain, f: &[f64], t_end: f64, opts: &FlowOptions, shift: Option<f64>) -> Result<Vec<f64>> {
    let n = f.len();
    let lf = |y: &[f64]| chain.generator_apply(y).expect("length checked");
    let mut y = f.to_vec();
    let mut t = 0.0;
    let mut h = (0.1 / chain.max_m1().max(f64::MIN_POSITIVE)).min(t_end);
    let s0 = shift.unwrap_or(0.0);
    let mut halvings = 0;
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; n]; 7];
    let mut tmp = vec![0.0; n];
    while t < t_end {
        let step = h.min(t_end - t);
        k[0] = lf(&y);
        for s in 1..7 {
            for i in 0..n {
                tmp[i] = y[i] + step * (0..s).map(|j| A[s][j] * k[j][i]).sum::<f64>();
            }
            k[s] = lf(&tmp);
        }
        let mut err = 0.0f64;
        let ynew: Vec<f64> = (0..n).map(|i| y[i] + step * (0..7).map(|s| B5[s] * k[s][i]).sum::<f64>()).collect();
        for i in 0..n {
            let e = step * (0..7).map(|s| (B5[s] - B4[s]) * k[s][i]).sum::<f64>();
            let sc = opts.atol + opts.rtol * (s0 + y[i]).abs().max((s0 + ynew[i]).abs());
            err = err.max(e.abs() / sc);
        }
        if shift.is_some() && ynew.iter().any(|v| !(s0 + *v > 0.0)) {
            halvings += 1;
            if halvings > MAX_HALVINGS {
                let v = ynew.iter().copied().fold(f64::INFINITY, f64::min);
                return Err(Error::PositivityLoss(s0 + v));
            }
            h = step * 0.5;
            continue;
        }
        if err <= 1.0 {
            t = if step == t_end - t { t_end } else { t + step };
            y = ynew;
            halvings = 0;
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h = step * factor;
    }
    Ok(y)
}

/// Entropy, Fisher information and related channels along the heat flow.
#[derive(Debug, Clone, Serialize)]
pub struct FlowTrace {
    pub times: Vec<f64>,
    pub densities: Vec<Vec<f64>>,
    pub h: Vec<f64>,
    pub i: Vec<f64>,
    /// 2 integral of rho Psi_2(log rho).
    pub d2h: Vec<f64>,
    pub p: Option<f64>,
    pub hp: Option<Vec<f64>>,
    pub ip: Option<Vec<f64>>,
    /// 2 integral of rho Psi_2^{(p)}(rho).
    pub d2hp: Option<Vec<f64>>,
    /// Largest |integral of rho_t - 1| along the trace.
    pub max_mass_error: f64,
    /// Largest jump rate of the chain, used to scale residual bounds.
    pub rate_scale: f64,
}

fn check_density(chain: &MarkovChain, rho: &[f64]) -> Result<()> {
    chain.check_len(rho)?;
    if let Some(i) = rho.iter().position(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::NonDensity(format!("value {} at state {i} is not strictly positive", rho[i])));
    }
    let mass = chain.integrate(rho);
    if (mass - 1.0).abs() > MASS_TOL {
        return Err(Error::NonDensity(format!("total mass {mass} differs from 1")));
    }
    Ok(())
}

/// Uniform grid 0, step, ..., T (the last point is T itself).
pub fn uniform_grid(t_end: f64, step: f64) -> Result<Vec<f64>> {
    if !(t_end > 0.0 && step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidParameter("grid needs positive T and step".into()));
    }
    let m = (t_end / step).round() as usize;
    Ok((0..=m.max(1)).map(|k| if k == m.max(1) { t_end } else { k as f64 * step }).collect())
}

/// Runs the heat flow from `rho0` and records the entropy channels at `times`.
///
/// `times` must be nondecreasing and start at a nonnegative value.
pub fn heat_flow(chain: &MarkovChain, rho0: &[f64], times: &[f64], p: Option<f64>) -> Result<FlowTrace> {
    heat_flow_with(chain, rho0, times, p, FlowOptions::default())
}

pub fn heat_flow_with(
    chain: &MarkovChain,
    rho0: &[f64],
    times: &[f64],
    p: Option<f64>,
    opts: FlowOptions,
) -> Result<FlowTrace> {
    check_density(chain, rho0)?;
    if times.is_empty() || times[0] < 0.0 || times.windows(2).any(|w| !(w[1] >= w[0])) {
        return Err(Error::InvalidParameter("output grid must be nonempty, nonnegative and nondecreasing".into()));
    }
    if let Some(p) = p {
        phi_p(p, 1.0)?;
    }
    let mut sg = Semigroup::new(chain, opts);
    let mut deviations = Vec::with_capacity(times.len());
    let dev0: Vec<f64> = rho0.iter().map(|r| r - 1.0).collect();
    let mut dev = sg.advance_shifted(&dev0, times[0], Some(1.0))?;
    let mut prev = times[0];
    for &t in times {
        dev = sg.advance_shifted(&dev, t - prev, Some(1.0))?;
        prev = t;
        deviations.push(dev.clone());
    }
    let densities: Vec<Vec<f64>> = deviations.iter().map(|u| u.iter().map(|v| 1.0 + v).collect()).collect();
    let mut trace = FlowTrace {
        times: times.to_vec(),
        h: Vec::with_capacity(times.len()),
        i: Vec::with_capacity(times.len()),
        d2h: Vec::with_capacity(times.len()),
        p,
        hp: p.map(|_| Vec::new()),
        ip: p.map(|_| Vec::new()),
        d2hp: p.map(|_| Vec::new()),
        max_mass_error: 0.0,
        rate_scale: chain.max_m1(),
        densities: Vec::new(),
    };
    for (rho, u) in densities.iter().zip(&deviations) {
        trace.max_mass_error = trace.max_mass_error.max(chain.integrate(u).abs());
        trace.h.push(entropy_of_deviation(chain, u));
        trace.i.push(fisher(chain, rho)?);
        trace.d2h.push(entropy_second_derivative(chain, rho)?);
        if let Some(p) = p {
            trace.hp.as_mut().unwrap().push(p_entropy(chain, p, rho)?);
            trace.ip.as_mut().unwrap().push(p_fisher(chain, p, rho)?);
            trace.d2hp.as_mut().unwrap().push(p_entropy_second_derivative(chain, p, rho)?);
        }
    }
    trace.densities = densities;
    Ok(trace)
}

impl FlowTrace {
    /// CSV with header `t,H,I,d2H` (plus `Hp,Ip` for power channels), 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(if self.p.is_some() { "t,H,I,d2H,Hp,Ip\n" } else { "t,H,I,d2H\n" });
        for k in 0..self.times.len() {
            s.push_str(&format!("{:.16e},{:.16e},{:.16e},{:.16e}", self.times[k], self.h[k], self.i[k], self.d2h[k]));
            if let (Some(hp), Some(ip)) = (&self.hp, &self.ip) {
                s.push_str(&format!(",{:.16e},{:.16e}", hp[k], ip[k]));
            }
            s.push('\n');
        }
        s
    }

    /// Entropy is nonincreasing up to `tol` relative to H(rho_0).
    pub fn entropy_monotone(&self, tol: f64) -> bool {
        let sc = self.h.first().copied().unwrap_or(0.0).abs().max(f64::MIN_POSITIVE);
        self.h.windows(2).all(|w| w[1] <= w[0] + tol * sc)
    }
}

/// H(rho) = integral of rho log rho, with 0 log 0 = 0.
pub fn entropy(chain: &MarkovChain, rho: &[f64]) -> Result<f64> {
    chain.check_len(rho)?;
    if let Some(i) = rho.iter().position(|v| !(*v >= 0.0 && v.is_finite())) {
        return Err(Error::NonDensity(format!("value {} at state {i} is negative", rho[i])));
    }
    let u: Vec<f64> = rho.iter().map(|r| r - 1.0).collect();
    Ok(entropy_of_deviation(chain, &u))
}

// With rho = 1 + u: rho log rho - rho + 1 = rho Upsilon(-log rho) stays accurate near rho = 1,
// and the mass term restores the literal definition.
fn entropy_of_deviation(chain: &MarkovChain, u: &[f64]) -> f64 {
    let mut core = 0.0;
    let mut mass = 0.0;
    for (&v, &w) in u.iter().zip(chain.pi()) {
        let term = if v == -1.0 { 1.0 } else { (1.0 + v) * upsilon(-v.ln_1p()) };
        core += w * term;
        mass += w * v;
    }
    core + mass
}

fn ensure_positive(rho: &[f64]) -> Result<()> {
    match rho.iter().position(|v| !(*v > 0.0 && v.is_finite())) {
        Some(index) => Err(Error::NonPositiveField { index, value: rho[index] }),
        None => Ok(()),
    }
}

fn log_field(rho: &[f64]) -> Vec<f64> {
    rho.iter().map(|v| v.ln()).collect()
}

fn weighted_sum(chain: &MarkovChain, rho: &[f64], g: &[f64]) -> f64 {
    chain.pi().iter().zip(rho).zip(g).map(|((w, r), v)| w * r * v).sum()
}

/// I(rho) = integral of rho Psi_Upsilon(log rho).
pub fn fisher(chain: &MarkovChain, rho: &[f64]) -> Result<f64> {
    chain.check_len(rho)?;
    ensure_positive(rho)?;
    let psi = psi_upsilon(chain, &log_field(rho))?;
    Ok(weighted_sum(chain, rho, &psi))
}

/// Dirichlet form E(f, g) = (1/2) sum pi(x) k(x,y) (f(y) - f(x)) (g(y) - g(x)).
pub fn dirichlet_form(chain: &MarkovChain, f: &[f64], g: &[f64]) -> Result<f64> {
    chain.check_len(f)?;
    chain.check_len(g)?;
    let mut s = 0.0;
    for x in 0..chain.n() {
        let w = chain.pi()[x];
        for &(y, k) in chain.neighbors(x) {
            s += w * k * (f[y] - f[x]) * (g[y] - g[x]);
        }
    }
    Ok(0.5 * s)
}

/// Fisher information as E(rho, log rho).
pub fn fisher_dirichlet(chain: &MarkovChain, rho: &[f64]) -> Result<f64> {
    ensure_positive(rho)?;
    dirichlet_form(chain, rho, &log_field(rho))
}

/// 2 integral of rho Psi_2(log rho), the second time derivative of H along the flow.
pub fn entropy_second_derivative(chain: &MarkovChain, rho: &[f64]) -> Result<f64> {
    ensure_positive(rho)?;
    let psi2 = psi2_upsilon(chain, &log_field(rho))?;
    Ok(2.0 * weighted_sum(chain, rho, &psi2))
}

/// H_p(rho) = integral of Phi_p(rho).
pub fn p_entropy(chain: &MarkovChain, p: f64, rho: &[f64]) -> Result<f64> {
    chain.check_len(rho)?;
    let mut s = 0.0;
    for (&r, &w) in rho.iter().zip(chain.pi()) {
        s += w * phi_p(p, r)?;
    }
    Ok(s)
}

/// I_p(rho) = integral of rho Psi^{(p)}(rho) / (2 - p).
pub fn p_fisher(chain: &MarkovChain, p: f64, rho: &[f64]) -> Result<f64> {
    let psi = psi_p(chain, p, rho)?;
    Ok(weighted_sum(chain, rho, &psi) / (2.0 - p))
}

/// I_p as E(rho, Phi_p'(rho)).
pub fn p_fisher_dirichlet(chain: &MarkovChain, p: f64, rho: &[f64]) -> Result<f64> {
    chain.check_len(rho)?;
    let d: Vec<f64> = rho.iter().map(|&r| phi_p_prime(p, r)).collect::<Result<_>>()?;
    dirichlet_form(chain, rho, &d)
}

/// 2 integral of rho Psi_2^{(p)}(rho).
pub fn p_entropy_second_derivative(chain: &MarkovChain, p: f64, rho: &[f64]) -> Result<f64> {
    let psi2 = psi2_p(chain, p, rho)?;
    Ok(2.0 * weighted_sum(chain, rho, &psi2))
}

/// Outcome of a finite-difference identity check along a trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FdResidual {
    pub max_residual: f64,
    /// Step-size based bound the residual is expected to respect.
    pub bound: f64,
    pub within_bound: bool,
}

/// Finite-difference weights for derivatives 0 to `m` at `x0` on the nodes `xs`
/// (Fornberg's recursion); `w[d][j]` multiplies the value at `xs[j]`.
fn fd_weights(x0: f64, xs: &[f64], m: usize) -> Vec<Vec<f64>> {
    let n = xs.len();
    let mut c = vec![vec![0.0; n]; m + 1];
    c[0][0] = 1.0;
    let mut c1 = 1.0;
    let mut c4 = xs[0] - x0;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = xs[i] - x0;
        for j in 0..i {
            let c3 = xs[i] - xs[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_grid(trace: &FlowTrace) -> Result<()> {
    let t = &trace.times;
    if t.len() < 3 {
        return Err(Error::GridTooCoarse("need at least three grid times".into()));
    }
    let hmax = t.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    if t.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::GridTooCoarse("grid times must be strictly increasing".into()));
    }
    // At least five points per fastest relaxation time 1 / max M1.
    if hmax * trace.rate_scale > 0.2 {
        return Err(Error::GridTooCoarse(format!("grid step {hmax} exceeds 0.2 / max M1")));
    }
    Ok(())
}

/// Compares the difference quotient of `values` with `sign * target`.
///
/// Five-point stencils are used when the grid allows, three-point otherwise.
/// The bound is ten times the leading Taylor remainder of the stencil. The
/// high derivatives of the channel it needs are those of `sign * target`, read
/// off the target by the same stencil, so no time scale is presumed.
fn fd_check(trace: &FlowTrace, values: &[f64], target: &[f64], second: bool, sign: f64) -> Result<FdResidual> {
    check_grid(trace)?;
    let t = &trace.times;
    let half = if t.len() >= 5 { 2 } else { 1 };
    let n = 2 * half + 1;
    let d = if second { 2 } else { 1 };
    let mut worst = 0.0f64;
    let mut remainder = 0.0f64;
    for k in half..t.len() - half {
        let nodes = &t[k - half..=k + half];
        let w = fd_weights(t[k], nodes, n - 1);
        let deriv = dot(&w[d], &values[k - half..=k + half]);
        worst = worst.max((deriv - sign * target[k]).abs());
        // The stencil is exact through degree n - 1; the channel's m-th derivative is target^(m - d).
        let tg = &target[k - half..=k + half];
        let mut r = 0.0;
        let mut fact: f64 = (1..n).map(|q| q as f64).product();
        for m in n..n + d {
            fact *= m as f64;
            let moment = w[d].iter().zip(nodes).map(|(a, x)| a * (x - t[k]).powi(m as i32)).sum::<f64>() / fact;
            r += moment.abs() * dot(&w[m - d], tg).abs();
        }
        remainder = remainder.max(r);
    }
    // Floating-point cancellation floor of the difference quotients.
    let hmin = t.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    let vmax = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let floor = 64.0 * f64::EPSILON * vmax / if second { hmin * hmin } else { hmin };
    let bound = 10.0 * remainder + floor;
    Ok(FdResidual { max_residual: worst, bound, within_bound: worst <= bound })
}

/// |dH/dt + I| at interior grid times.
pub fn de_bruijn_residual(trace: &FlowTrace) -> Result<FdResidual> {
    fd_check(trace, &trace.h, &trace.i, false, -1.0)
}

/// |d^2H/dt^2 - 2 integral rho Psi_2(log rho)| at interior grid times.
pub fn second_derivative_residual(trace: &FlowTrace) -> Result<FdResidual> {
    fd_check(trace, &trace.h, &trace.d2h, true, 1.0)
}

/// Residuals of the power-entropy analogues of the two identities above.
pub fn p_flow_identities(trace: &FlowTrace) -> Result<(FdResidual, FdResidual)> {
    let (Some(hp), Some(ip), Some(d2hp)) = (&trace.hp, &trace.ip, &trace.d2hp) else {
        return Err(Error::InvalidParameter("trace has no power-entropy channels".into()));
    };
    let first = fd_check(trace, hp, ip, false, -1.0)?;
    let second = fd_check(trace, hp, d2hp, true, 1.0)?;
    Ok((first, second))
}

/// Worst value of a functional-inequality ratio over a sample of densities.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InequalityReport {
    pub alpha: f64,
    /// Largest 2 alpha H / I found; the inequality holds when this is at most 1.
    pub worst_ratio: f64,
    pub worst_index: Option<usize>,
    pub samples: usize,
    pub holds: bool,
}

fn inequality_report(
    alpha: f64,
    samples: &[Vec<f64>],
    mut eval: impl FnMut(&[f64]) -> Result<(f64, f64)>,
) -> Result<InequalityReport> {
    let mut worst = f64::NEG_INFINITY;
    let mut worst_index = None;
    for (k, rho) in samples.iter().enumerate() {
        let (h, i) = eval(rho)?;
        // A constant density gives 0 <= 0.
        if i <= 0.0 && h <= 0.0 {
            continue;
        }
        let r = 2.0 * alpha * h / i;
        if r > worst {
            worst = r;
            worst_index = Some(k);
        }
    }
    let worst_ratio = if worst_index.is_some() { worst } else { 0.0 };
    Ok(InequalityReport { alpha, worst_ratio, worst_index, samples: samples.len(), holds: worst_ratio <= 1.0 + 1e-9 })
}

/// Evaluates H(rho) <= I(rho) / (2 alpha) on every sample.
pub fn mlsi_check(chain: &MarkovChain, alpha: f64, samples: &[Vec<f64>]) -> Result<InequalityReport> {
    inequality_report(alpha, samples, |rho| Ok((entropy(chain, rho)?, fisher(chain, rho)?)))
}

/// Evaluates H_p(rho) <= I_p(rho) / (2 alpha) on every sample.
pub fn beckner_check(chain: &MarkovChain, p: f64, alpha: f64, samples: &[Vec<f64>]) -> Result<InequalityReport> {
    inequality_report(alpha, samples, |rho| Ok((p_entropy(chain, p, rho)?, p_fisher(chain, p, rho)?)))
}

/// Rescales positive weights into a probability density with respect to pi.
pub fn normalize_density(chain: &MarkovChain, w: &[f64]) -> Result<Vec<f64>> {
    chain.check_len(w)?;
    ensure_positive(w)?;
    let mass = chain.integrate(w);
    Ok(w.iter().map(|v| v / mass).collect())
}

/// Density of a uniformly random probability vector (flat Dirichlet) with respect to pi.
pub fn random_density<R: Rng>(chain: &MarkovChain, rng: &mut R) -> Vec<f64> {
    let e: Vec<f64> = (0..chain.n()).map(|_| rng.sample::<f64, _>(Exp1).max(1e-300)).collect();
    let total: f64 = e.iter().sum();
    e.iter().zip(chain.pi()).map(|(v, w)| v / total / w).collect()
}

/// Exponential tilts rho proportional to exp(s g) for indicator and graph-distance
/// fields g, with |s| on a log grid from 0.05 to 13.8 (mass ratios up to about 1e6).
pub fn tilted_densities(chain: &MarkovChain) -> Vec<Vec<f64>> {
    let n = chain.n();
    let mut fields: Vec<Vec<f64>> = Vec::new();
    for x in 0..n {
        let mut ind = vec![0.0; n];
        ind[x] = 1.0;
        fields.push(ind);
        let d = chain.distances_from(x);
        fields.push(d.iter().map(|v| v.unwrap_or(0) as f64).collect());
    }
    let steps = 24;
    let (lo, hi) = (0.05f64.ln(), 13.8f64.ln());
    let mut out = Vec::with_capacity(fields.len() * 2 * steps);
    for g in &fields {
        let gmax = g.iter().fold(0.0f64, |a, v| a.max(*v));
        if gmax == 0.0 {
            continue;
        }
        for j in 0..steps {
            let s = (lo + (hi - lo) * j as f64 / (steps - 1) as f64).exp() / gmax;
            for sign in [1.0, -1.0] {
                let w: Vec<f64> = g.iter().map(|v| (sign * s * v).exp()).collect();
                out.push(normalize_density(chain, &w).expect("positive weights"));
            }
        }
    }
    out
}

/// `count` random densities followed by the tilted family.
pub fn density_samples<R: Rng>(chain: &MarkovChain, count: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut v: Vec<Vec<f64>> = (0..count).map(|_| random_density(chain, rng)).collect();
    v.extend(tilted_densities(chain));
    v
}

/// Exponential entropy decay along the flow.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayReport {
    pub kappa: f64,
    pub holds: bool,
    /// Largest H(rho_t) / (e^{-2 kappa t} H(rho_0)) on the grid.
    pub worst_ratio: f64,
    /// True when H(rho_0) = 0 and there is nothing to check.
    pub trivial: bool,
}

/// Checks H(rho_t) <= e^{-2 kappa t} H(rho_0) (1 + 1e-8) on the trace grid.
pub fn entropy_decay_check(chain: &MarkovChain, kappa: f64, rho0: &[f64], times: &[f64]) -> Result<DecayReport> {
    let trace = heat_flow(chain, rho0, times, None)?;
    Ok(decay_report(&trace, kappa))
}

/// Decay check on an existing trace.
pub fn decay_report(trace: &FlowTrace, kappa: f64) -> DecayReport {
    let t0 = trace.times[0];
    let h0 = trace.h[0];
    if h0 <= 0.0 {
        return DecayReport { kappa, holds: true, worst_ratio: 0.0, trivial: true };
    }
    let mut worst = 0.0f64;
    for (t, h) in trace.times.iter().zip(&trace.h) {
        worst = worst.max(h / ((-2.0 * kappa * (t - t0)).exp() * h0));
    }
    DecayReport { kappa, holds: worst <= 1.0 + 1e-8, worst_ratio: worst, trivial: false }
}

/// Late-time exponential rate of H: minus the least-squares slope of log H
/// over the final decade of the resolved part of the trace.
///
/// Values below 1e-10 H(t_0) are dropped first: there the rounding of the
/// mass (about 1e-16) is no longer negligible against H.
pub fn decay_rate_fit(trace: &FlowTrace) -> Result<f64> {
    let h0 = *trace.h.first().ok_or_else(|| Error::InvalidParameter("empty trace".into()))?;
    let floor = 1e-10 * h0;
    let resolved: Vec<(f64, f64)> =
        trace.times.iter().zip(&trace.h).take_while(|(_, h)| **h > floor).map(|(t, h)| (*t, *h)).collect();
    let h_end = match resolved.last() {
        Some(&(_, h)) if h > 0.0 => h,
        _ => return Err(Error::InvalidParameter("entropy vanishes on the whole trace".into())),
    };
    let pts: Vec<(f64, f64)> =
        resolved.iter().filter(|(_, h)| *h <= 10.0 * h_end).map(|(t, h)| (*t, h.ln())).collect();
    if pts.len() < 3 {
        return Err(Error::GridTooCoarse("fewer than three points in the last decade".into()));
    }
    let m = pts.len() as f64;
    let (st, sy) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let (tm, ym) = (st / m, sy / m);
    let (num, den) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + (p.0 - tm) * (p.1 - ym), a.1 + (p.0 - tm).powi(2)));
    Ok(-num / den)
}

/// Pointwise gradient bound Psi(P_t f) <= e^{-2 kappa t} P_t Psi(f).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientBoundReport {
    pub kappa: f64,
    /// Smallest e^{-2 kappa t} P_t Psi(f)(x) - Psi(P_t f)(x) over times and states.
    pub worst_slack: f64,
    pub worst_time: f64,
    pub worst_state: usize,
    pub holds: bool,
}

pub fn gradient_bound_check(chain: &MarkovChain, f: &[f64], kappa: f64, times: &[f64]) -> Result<GradientBoundReport> {
    let mut sg = Semigroup::new(chain, FlowOptions::default());
    let psi_f = psi_upsilon(chain, f)?;
    let mut rep = GradientBoundReport { kappa, worst_slack: f64::INFINITY, worst_time: 0.0, worst_state: 0, holds: true };
    for &t in times {
        let ptf = sg.advance(f, t, false)?;
        let lhs = psi_upsilon(chain, &ptf)?;
        let rhs = sg.advance(&psi_f, t, false)?;
        let decay = (-2.0 * kappa * t).exp();
        for x in 0..chain.n() {
            let s = decay * rhs[x] - lhs[x];
            if s < rep.worst_slack {
                rep.worst_slack = s;
                rep.worst_time = t;
                rep.worst_state = x;
            }
        }
    }
    rep.holds = rep.worst_slack >= -1e-9;
    Ok(rep)
}

/// A(rho, psi) = (1/2) sum (psi(x) - psi(y))^2 theta(rho(x), rho(y)) k(x,y) pi(x).
pub fn erbar_maas_a(chain: &MarkovChain, rho: &[f64], psi: &[f64]) -> Result<f64> {
    chain.check_len(rho)?;
    chain.check_len(psi)?;
    ensure_positive(rho)?;
    let mut s = 0.0;
    for x in 0..chain.n() {
        for &(y, k) in chain.neighbors(x) {
            s += (psi[x] - psi[y]).powi(2) * log_mean(rho[x], rho[y]) * k * chain.pi()[x];
        }
    }
    Ok(0.5 * s)
}

/// B(rho, psi) with the mixed term through the partial derivatives of theta.
pub fn erbar_maas_b(chain: &MarkovChain, rho: &[f64], psi: &[f64]) -> Result<f64> {
    chain.check_len(rho)?;
    chain.check_len(psi)?;
    ensure_positive(rho)?;
    let lrho = chain.generator_apply(rho)?;
    let lpsi = chain.generator_apply(psi)?;
    let (mut first, mut second) = (0.0, 0.0);
    for x in 0..chain.n() {
        let w = chain.pi()[x];
        for &(y, k) in chain.neighbors(x) {
            let d = psi[x] - psi[y];
            let lhat = log_mean_d1(rho[x], rho[y]) * lrho[x] + log_mean_d1(rho[y], rho[x]) * lrho[y];
            first += d * d * lhat * k * w;
            second += (lpsi[x] - lpsi[y]) * d * log_mean(rho[x], rho[y]) * k * w;
        }
    }
    Ok(0.25 * first - 0.5 * second)
}

/// Residuals of A(rho, log rho) = I(rho) and B(rho, log rho) = (1/2) d^2H/dt^2.
pub fn em_identity_residuals(chain: &MarkovChain, rho: &[f64]) -> Result<(Residual, Residual)> {
    let l = log_field(rho);
    let a = erbar_maas_a(chain, rho, &l)?;
    let b = erbar_maas_b(chain, rho, &l)?;
    let i = fisher(chain, rho)?;
    let half_d2 = 0.5 * entropy_second_derivative(chain, rho)?;
    let res = |x: f64, y: f64| Residual { abs: (x - y).abs(), scale: x.abs().max(y.abs()).max(f64::MIN_POSITIVE) };
    Ok((res(a, i), res(b, half_d2)))
}
