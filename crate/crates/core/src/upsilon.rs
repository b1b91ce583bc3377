//! Pointwise difference operators built from a scalar kernel H, the iterated
//! operators Gamma_2 and Psi_2, and independent cross-check formulas.

use serde::Serialize;

use crate::chain::MarkovChain;
use crate::error::{Error, Result};
use crate::scalar::{self, delta_eps, upsilon, ScalarKernel};

/// An absolute residual together with the magnitude of the terms that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Residual {
    pub abs: f64,
    pub scale: f64,
}

impl Residual {
    pub fn zero() -> Self {
        Residual { abs: 0.0, scale: 0.0 }
    }

    /// `abs / scale`, or 0 when both vanish.
    pub fn relative(&self) -> f64 {
        if self.abs == 0.0 {
            0.0
        } else {
            self.abs / self.scale.max(f64::MIN_POSITIVE)
        }
    }

    /// Pointwise maximum of two residuals.
    pub fn max(self, other: Residual) -> Residual {
        if other.relative() > self.relative() {
            other
        } else {
            self
        }
    }

    pub fn within(&self, rel_tol: f64) -> bool {
        self.abs <= rel_tol * self.scale
    }
}

/// Builds a residual from two computations of the same field.
pub fn field_residual(a: &[f64], b: &[f64]) -> Residual {
    let mut r = Residual::zero();
    for (x, y) in a.iter().zip(b) {
        let cand = Residual { abs: (x - y).abs(), scale: x.abs().max(y.abs()).max(f64::MIN_POSITIVE) };
        r = r.max(cand);
    }
    r
}

fn check_positive_field(f: &[f64]) -> Result<()> {
    match f.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
        Some(index) => Err(Error::NonPositiveField { index, value: f[index] }),
        None => Ok(()),
    }
}

/// Psi_H(f)(x) = sum_y k(x,y) H(f(y) - f(x)).
pub fn psi_h(chain: &MarkovChain, h: ScalarKernel, f: &[f64]) -> Result<Vec<f64>> {
    chain.check_len(f)?;
    (0..chain.n())
        .map(|x| chain.neighbors(x).iter().map(|&(y, k)| Ok(k * h.value(f[y] - f[x])?)).sum())
        .collect()
}

/// B_H(f, g)(x) = sum_y k(x,y) H(f(y) - f(x)) (g(y) - g(x)).
pub fn b_h(chain: &MarkovChain, h: ScalarKernel, f: &[f64], g: &[f64]) -> Result<Vec<f64>> {
    chain.check_len(f)?;
    chain.check_len(g)?;
    (0..chain.n())
        .map(|x| {
            chain
                .neighbors(x)
                .iter()
                .map(|&(y, k)| Ok(k * h.value(f[y] - f[x])? * (g[y] - g[x])))
                .sum()
        })
        .collect()
}

/// Carre du champ Gamma(f, g).
pub fn gamma(chain: &MarkovChain, f: &[f64], g: &[f64]) -> Result<Vec<f64>> {
    chain.check_len(f)?;
    chain.check_len(g)?;
    Ok((0..chain.n())
        .map(|x| {
            0.5 * chain.neighbors(x).iter().map(|&(y, k)| k * (f[y] - f[x]) * (g[y] - g[x])).sum::<f64>()
        })
        .collect())
}

/// Gamma_2(f) = (L Gamma(f) - 2 Gamma(f, Lf)) / 2.
pub fn gamma2(chain: &MarkovChain, f: &[f64]) -> Result<Vec<f64>> {
    let g = gamma(chain, f, f)?;
    let lf = chain.generator_apply(f)?;
    let lg = chain.generator_apply(&g)?;
    let cross = gamma(chain, f, &lf)?;
    Ok(lg.iter().zip(&cross).map(|(a, b)| 0.5 * (a - 2.0 * b)).collect())
}

pub fn psi_upsilon(chain: &MarkovChain, f: &[f64]) -> Result<Vec<f64>> {
    psi_h(chain, ScalarKernel::Upsilon, f)
}

/// L Psi_H(f) - B_{H'}(f, Lf), the quantity of the second fundamental identity.
///
/// Here `h_prime` must be the kernel whose value is H'.
pub fn second_identity_lhs(
    chain: &MarkovChain,
    h: ScalarKernel,
    h_prime: ScalarKernel,
    f: &[f64],
) -> Result<Vec<f64>> {
    let psi = psi_h(chain, h, f)?;
    let lpsi = chain.generator_apply(&psi)?;
    let lf = chain.generator_apply(f)?;
    let b = b_h(chain, h_prime, f, &lf)?;
    Ok(lpsi.iter().zip(&b).map(|(a, c)| a - c).collect())
}

/// Psi_{2,Upsilon}(f) = (L Psi_Upsilon(f) - B_{Upsilon'}(f, Lf)) / 2.
pub fn psi2_upsilon(chain: &MarkovChain, f: &[f64]) -> Result<Vec<f64>> {
    let s = second_identity_lhs(chain, ScalarKernel::Upsilon, ScalarKernel::UpsilonPrime, f)?;
    Ok(s.into_iter().map(|v| 0.5 * v).collect())
}

/// Psi_{2,Upsilon}(f)(x) from the double-sum expansion over the two-ball of x.
pub fn psi2_upsilon_expanded_at(chain: &MarkovChain, f: &[f64], x: usize) -> f64 {
    let mut two_step = 0.0;
    let (mut sum_up, mut lf, mut psi) = (0.0, 0.0, 0.0);
    for &(y, kxy) in chain.neighbors(x) {
        let u = f[y] - f[x];
        let up = u.exp_m1();
        let inner: f64 = chain
            .neighbors(y)
            .iter()
            .map(|&(z, kyz)| {
                let s = f[z] - f[y];
                kyz * (upsilon(s) - up * s)
            })
            .sum();
        two_step += kxy * inner;
        sum_up += kxy * up;
        lf += kxy * u;
        psi += kxy * upsilon(u);
    }
    0.5 * (two_step + sum_up * lf - chain.m1(x) * psi)
}

pub fn psi2_upsilon_expanded(chain: &MarkovChain, f: &[f64]) -> Result<Vec<f64>> {
    chain.check_len(f)?;
    Ok((0..chain.n()).map(|x| psi2_upsilon_expanded_at(chain, f, x)).collect())
}

/// Gamma_2(f)(x) from the same expansion with H = r^2 / 2.
pub fn gamma2_expanded_at(chain: &MarkovChain, f: &[f64], x: usize) -> f64 {
    let mut two_step = 0.0;
    let mut lf = 0.0;
    let mut g = 0.0;
    for &(y, kxy) in chain.neighbors(x) {
        let u = f[y] - f[x];
        let inner: f64 =
            chain.neighbors(y).iter().map(|&(z, kyz)| {
                let s = f[z] - f[y];
                kyz * (0.5 * s * s - u * s)
            }).sum();
        two_step += kxy * inner;
        lf += kxy * u;
        g += kxy * 0.5 * u * u;
    }
    0.5 * (two_step + lf * lf - chain.m1(x) * g)
}

/// Maximum defect of L(log f) = Lf / f - Psi_Upsilon(log f).
pub fn log_chain_residual(chain: &MarkovChain, f: &[f64]) -> Result<Residual> {
    chain.check_len(f)?;
    check_positive_field(f)?;
    let lg: Vec<f64> = f.iter().map(|v| v.ln()).collect();
    let l_log = chain.generator_apply(&lg)?;
    let lf = chain.generator_apply(f)?;
    let psi = psi_upsilon(chain, &lg)?;
    let mut r = Residual::zero();
    for x in 0..chain.n() {
        let rhs = lf[x] / f[x] - psi[x];
        let scale: f64 = chain
            .neighbors(x)
            .iter()
            .map(|&(y, k)| k * ((lg[y] - lg[x]).abs() + (f[y] / f[x] - 1.0).abs()))
            .sum();
        r = r.max(Residual { abs: (l_log[x] - rhs).abs(), scale: scale.max(f64::MIN_POSITIVE) });
    }
    Ok(r)
}

/// Maximum defect of L(H(f)) = H'(f) Lf + sum_y k(x,y) Lambda_H(f(y), f(x)).
pub fn first_fundamental_identity_residual(
    chain: &MarkovChain,
    h: ScalarKernel,
    f: &[f64],
) -> Result<Residual> {
    chain.check_len(f)?;
    let hf: Vec<f64> = f.iter().map(|&v| h.value(v)).collect::<Result<_>>()?;
    let lhf = chain.generator_apply(&hf)?;
    let lf = chain.generator_apply(f)?;
    let mut r = Residual::zero();
    for x in 0..chain.n() {
        let dh = h.derivative(f[x])?;
        let mut breg = 0.0;
        let mut scale = (dh * lf[x]).abs();
        for &(y, k) in chain.neighbors(x) {
            let l = k * h.bregman(f[y], f[x])?;
            breg += l;
            scale += k * (hf[y] - hf[x]).abs() + l.abs();
        }
        let rhs = dh * lf[x] + breg;
        r = r.max(Residual { abs: (lhf[x] - rhs).abs(), scale: scale.max(f64::MIN_POSITIVE) });
    }
    Ok(r)
}

/// Relative defect of (1/2) int e^g B_{Upsilon'}(g, h) dmu = - int e^g Lh dmu.
pub fn exp_integral_identity_residual(chain: &MarkovChain, g: &[f64], h: &[f64]) -> Result<Residual> {
    let b = b_h(chain, ScalarKernel::UpsilonPrime, g, h)?;
    let lh = chain.generator_apply(h)?;
    let pi = chain.pi();
    let mut lhs = 0.0;
    let mut rhs = 0.0;
    let mut scale = 0.0;
    for x in 0..chain.n() {
        let w = g[x].exp() * pi[x];
        lhs += 0.5 * w * b[x];
        rhs -= w * lh[x];
        scale += w * (b[x].abs() + lh[x].abs());
    }
    Ok(Residual { abs: (lhs - rhs).abs(), scale: scale.max(f64::MIN_POSITIVE) })
}

fn check_p(p: f64) -> Result<()> {
    if p > 1.0 && p < 2.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("p = {p} must lie in (1, 2)")))
    }
}

/// Psi^{(p)}(f)(x) = - sum_y k(x,y) Lambda_{Phi_p'}(f(y), f(x)).
pub fn psi_p(chain: &MarkovChain, p: f64, f: &[f64]) -> Result<Vec<f64>> {
    check_p(p)?;
    chain.check_len(f)?;
    check_positive_field(f)?;
    (0..chain.n())
        .map(|x| {
            let mut s = 0.0;
            for &(y, k) in chain.neighbors(x) {
                s -= k * scalar::bregman_phi_p_prime(p, f[y], f[x])?;
            }
            Ok(s)
        })
        .collect()
}

/// Psi_2^{(p)}(f) = (L Psi^{(p)}(f) - B_{Upsilon'}(log f, L Phi_p'(f))) / 2.
pub fn psi2_p(chain: &MarkovChain, p: f64, f: &[f64]) -> Result<Vec<f64>> {
    let psi = psi_p(chain, p, f)?;
    let lpsi = chain.generator_apply(&psi)?;
    let logf: Vec<f64> = f.iter().map(|v| v.ln()).collect();
    let dphi: Vec<f64> = f.iter().map(|&v| scalar::phi_p_prime(p, v)).collect::<Result<_>>()?;
    let ldphi = chain.generator_apply(&dphi)?;
    let b = b_h(chain, ScalarKernel::UpsilonPrime, &logf, &ldphi)?;
    Ok(lpsi.iter().zip(&b).map(|(a, c)| 0.5 * (a - c)).collect())
}

/// Gamma_2^{log}(f) through the psi-Laplacian construction with psi = log,
/// for chains whose rates all equal 1.
pub fn munch_gamma2_log(chain: &MarkovChain, f: &[f64]) -> Result<Vec<f64>> {
    chain.check_len(f)?;
    check_positive_field(f)?;
    if !chain.is_unweighted() {
        return Err(Error::NotUnweighted);
    }
    let n = chain.n();
    let lap = |g: &[f64], x: usize| -> f64 { chain.neighbors(x).iter().map(|&(y, _)| g[y] - g[x]).sum() };
    let delta_f: Vec<f64> = (0..n).map(|x| lap(f, x)).collect();
    // psi-Laplacian: Delta[log(f / f(x))](x).
    let delta_psi: Vec<f64> =
        (0..n).map(|x| chain.neighbors(x).iter().map(|&(y, _)| (f[y] / f[x]).ln()).sum()).collect();
    let f_delta_psi: Vec<f64> = f.iter().zip(&delta_psi).map(|(a, b)| a * b).collect();
    let mut out = Vec::with_capacity(n);
    for x in 0..n {
        // Omega: Delta[psi'(f/f(x)) (f/f(x)) (Delta f / f - Delta f(x) / f(x))](x) with psi' = 1/r.
        let inner = |z: usize| -> f64 {
            let ratio = f[z] / f[x];
            (1.0 / ratio) * ratio * (delta_f[z] / f[z] - delta_f[x] / f[x])
        };
        let omega: f64 = chain.neighbors(x).iter().map(|&(y, _)| inner(y) - inner(x)).sum();
        let v = 0.5 * (omega + delta_f[x] * delta_psi[x] / f[x] - lap(&f_delta_psi, x) / f[x]);
        out.push(v);
    }
    Ok(out)
}

/// Outcome of the small-field comparison between the Upsilon and quadratic calculus.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmallFieldReport {
    pub eps: f64,
    pub delta_eps: f64,
    pub delta: f64,
    pub max_rate: f64,
    /// Minimum over vertices of Psi - (1 - eps) Gamma.
    pub psi_lower_slack: f64,
    /// Minimum over vertices of (1 + eps) Gamma - Psi.
    pub psi_upper_slack: f64,
    pub psi2_lower_slack: f64,
    pub psi2_upper_slack: f64,
}

impl SmallFieldReport {
    pub fn holds(&self) -> bool {
        self.psi_lower_slack >= 0.0
            && self.psi_upper_slack >= 0.0
            && self.psi2_lower_slack >= 0.0
            && self.psi2_upper_slack >= 0.0
    }
}

/// Checks the two-sided comparison of Psi with Gamma and of Psi_2 with Gamma_2
/// for a field with 2 |f|_inf <= delta_eps.
pub fn small_field_comparison(chain: &MarkovChain, f: &[f64], eps: f64) -> Result<SmallFieldReport> {
    chain.check_len(f)?;
    let de = delta_eps(eps)?;
    let delta = 2.0 * f.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if delta > de {
        return Err(Error::FieldTooLarge { two_sup: delta, delta_eps: de });
    }
    let m = chain.max_m1();
    let g = gamma(chain, f, f)?;
    let g2 = gamma2(chain, f)?;
    let psi = psi_upsilon(chain, f)?;
    let psi2 = psi2_upsilon(chain, f)?;
    let mut rep = SmallFieldReport {
        eps,
        delta_eps: de,
        delta,
        max_rate: m,
        psi_lower_slack: f64::INFINITY,
        psi_upper_slack: f64::INFINITY,
        psi2_lower_slack: f64::INFINITY,
        psi2_upper_slack: f64::INFINITY,
    };
    for x in 0..chain.n() {
        let pad = 6.0 * m * (eps + delta) * g[x];
        rep.psi_lower_slack = rep.psi_lower_slack.min(psi[x] - (1.0 - eps) * g[x]);
        rep.psi_upper_slack = rep.psi_upper_slack.min((1.0 + eps) * g[x] - psi[x]);
        rep.psi2_lower_slack = rep.psi2_lower_slack.min(psi2[x] - ((1.0 - 2.0 * eps) * g2[x] - pad));
        rep.psi2_upper_slack = rep.psi2_upper_slack.min((1.0 + 2.0 * eps) * g2[x] + pad - psi2[x]);
    }
    Ok(rep)
}

/// Logarithmic mean theta(s, t) = (s - t) / (ln s - ln t), with theta(s, s) = s.
pub fn log_mean(s: f64, t: f64) -> f64 {
    let l = s.ln() - t.ln();
    if l.abs() < 1e-6 {
        t * (1.0 + l * (0.5 + l / 6.0))
    } else {
        t * l.exp_m1() / l
    }
}

/// Partial derivative of the logarithmic mean in its first argument.
pub fn log_mean_d1(s: f64, t: f64) -> f64 {
    let l = s.ln() - t.ln();
    if l == 0.0 {
        0.5
    } else {
        upsilon(-l) / (l * l)
    }
}
