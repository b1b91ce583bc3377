//! Scalar special functions: the Upsilon function, power entropies, Bregman
//! distances and the two-parameter `nu` family.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sum of `coef(n) r^n / n!` for `n = start..start+terms`, evaluated term by term.
fn power_series(r: f64, start: u32, terms: u32, coef: impl Fn(u32) -> f64) -> f64 {
    let mut term = 1.0;
    for k in 1..=start {
        term *= r / k as f64;
    }
    let mut s = 0.0;
    for n in start..start + terms {
        s += coef(n) * term;
        term *= r / (n + 1) as f64;
    }
    s
}

/// Upsilon(r) = e^r - 1 - r, accurate to full relative precision near 0.
pub fn upsilon(r: f64) -> f64 {
    if r.abs() < 0.5 {
        power_series(r, 2, 20, |_| 1.0)
    } else {
        r.exp_m1() - r
    }
}

/// Upsilon'(r) = e^r - 1.
pub fn upsilon_prime(r: f64) -> f64 {
    r.exp_m1()
}

/// omega(t) = t e^t - e^t + 1 = t Upsilon'(t) - Upsilon(t).
pub fn omega(t: f64) -> f64 {
    if t.abs() < 0.5 {
        power_series(t, 2, 20, |n| (n - 1) as f64)
    } else {
        t * t.exp() - t.exp_m1()
    }
}

/// Lambda_Upsilon(w, z) = e^z Upsilon(w - z).
pub fn bregman_upsilon(w: f64, z: f64) -> f64 {
    z.exp() * upsilon(w - z)
}

fn check_p(p: f64) -> Result<()> {
    if p > 1.0 && p < 2.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("p = {p} must lie in (1, 2)")))
    }
}

fn check_positive(r: f64) -> Result<()> {
    if r > 0.0 && r.is_finite() {
        Ok(())
    } else {
        Err(Error::DomainError(format!("argument {r} must be positive")))
    }
}

/// Power entropy density Phi_p(r) = (r^p - r) / (p (p - 1)) for r >= 0.
pub fn phi_p(p: f64, r: f64) -> Result<f64> {
    check_p(p)?;
    if r == 0.0 {
        return Ok(0.0);
    }
    check_positive(r)?;
    let q = p - 1.0;
    Ok(r * (q * r.ln()).exp_m1() / (q * p))
}

/// Phi_p'(r) = (p r^(p-1) - 1) / (p (p - 1)).
pub fn phi_p_prime(p: f64, r: f64) -> Result<f64> {
    check_p(p)?;
    check_positive(r)?;
    let q = p - 1.0;
    Ok((q * r.ln()).exp_m1() / q + 1.0 / p)
}

/// Phi_p''(r) = r^(p-2).
pub fn phi_p_second(p: f64, r: f64) -> Result<f64> {
    check_p(p)?;
    check_positive(r)?;
    Ok(r.powf(p - 2.0))
}

/// Bregman distance of Phi_p' at (w, z), written in ell = ln(w/z).
pub fn bregman_phi_p_prime(p: f64, w: f64, z: f64) -> Result<f64> {
    check_p(p)?;
    check_positive(w)?;
    check_positive(z)?;
    let q = p - 1.0;
    let ell = ((w - z) / z).ln_1p();
    let core = if ell.abs() < 0.5 {
        // expm1(q l) - q expm1(l) = sum_{n>=2} (q^n - q) l^n / n!
        power_series(ell, 2, 24, |n| q.powi(n as i32) - q)
    } else {
        (q * ell).exp_m1() - q * ell.exp_m1()
    };
    Ok(z.powf(q) * core / q)
}

/// Scalar kernels H accepted by the Bregman-type operators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "p")]
pub enum ScalarKernel {
    Identity,
    HalfSquare,
    Upsilon,
    /// H(r) = e^r - 1, the derivative of Upsilon.
    UpsilonPrime,
    /// Same function as `UpsilonPrime`; kept as its own tag for callers that name it this way.
    ExpMinusOne,
    /// H(r) = ln r on r > 0.
    LogBregman,
    /// H = Phi_p' with p in (1, 2), on r > 0.
    PhiPPrime(f64),
}

impl ScalarKernel {
    fn check_domain(&self, r: f64) -> Result<()> {
        match self {
            ScalarKernel::LogBregman => check_positive(r),
            ScalarKernel::PhiPPrime(p) => {
                check_p(*p)?;
                check_positive(r)
            }
            _ if r.is_finite() => Ok(()),
            _ => Err(Error::DomainError(format!("argument {r} is not finite"))),
        }
    }

    pub fn value(&self, r: f64) -> Result<f64> {
        self.check_domain(r)?;
        Ok(match *self {
            ScalarKernel::Identity => r,
            ScalarKernel::HalfSquare => 0.5 * r * r,
            ScalarKernel::Upsilon => upsilon(r),
            ScalarKernel::UpsilonPrime | ScalarKernel::ExpMinusOne => r.exp_m1(),
            ScalarKernel::LogBregman => r.ln(),
            ScalarKernel::PhiPPrime(p) => phi_p_prime(p, r)?,
        })
    }

    pub fn derivative(&self, r: f64) -> Result<f64> {
        self.check_domain(r)?;
        Ok(match *self {
            ScalarKernel::Identity => 1.0,
            ScalarKernel::HalfSquare => r,
            ScalarKernel::Upsilon => r.exp_m1(),
            ScalarKernel::UpsilonPrime | ScalarKernel::ExpMinusOne => r.exp(),
            ScalarKernel::LogBregman => 1.0 / r,
            ScalarKernel::PhiPPrime(p) => phi_p_second(p, r)?,
        })
    }

    /// Whether H is convex on its domain (so its Bregman distance is nonnegative).
    pub fn is_convex(&self) -> bool {
        !matches!(self, ScalarKernel::LogBregman | ScalarKernel::PhiPPrime(_))
    }

    /// Lambda_H(w, z) = H(w) - H(z) - H'(z) (w - z), in cancellation-free form.
    pub fn bregman(&self, w: f64, z: f64) -> Result<f64> {
        self.check_domain(w)?;
        self.check_domain(z)?;
        Ok(match *self {
            ScalarKernel::Identity => 0.0,
            ScalarKernel::HalfSquare => 0.5 * (w - z) * (w - z),
            ScalarKernel::Upsilon | ScalarKernel::UpsilonPrime | ScalarKernel::ExpMinusOne => {
                bregman_upsilon(w, z)
            }
            ScalarKernel::LogBregman => -upsilon(((w - z) / z).ln_1p()),
            ScalarKernel::PhiPPrime(p) => bregman_phi_p_prime(p, w, z)?,
        })
    }
}

/// The family nu_{c,d}(r) = c Upsilon'(r) r + Upsilon(-r) - d Upsilon(r).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nu {
    pub c: f64,
    pub d: f64,
}

impl Nu {
    pub fn new(c: f64, d: f64) -> Self {
        Nu { c, d }
    }

    /// Derivative of order `k` (0 to 4) at `r`.
    ///
    /// Near zero the Taylor series `sum_{n>=2} (c n + (-1)^n - d) r^n / n!`
    /// is used so that the sign of tiny values is exact.
    pub fn derivative(&self, k: u32, r: f64) -> f64 {
        assert!(k <= 4, "derivative order {k} not supported");
        let Nu { c, d } = *self;
        let coef = |n: u32| c * n as f64 + if n % 2 == 0 { 1.0 } else { -1.0 } - d;
        if r.abs() <= 1.0 {
            // Differentiating k times shifts the series index by k.
            let start = 2u32.saturating_sub(k);
            return power_series(r, start, 40, |m| coef(m + k));
        }
        let (e, em) = (r.exp(), (-r).exp());
        match k {
            0 => c * r.exp_m1() * r + upsilon(-r) - d * upsilon(r),
            1 => e * (c * r + c - d) - c - em + 1.0 + d,
            2 => e * (c * r + 2.0 * c - d) + em,
            3 => e * (c * r + 3.0 * c - d) - em,
            _ => e * (c * r + 4.0 * c - d) + em,
        }
    }

    pub fn value(&self, r: f64) -> f64 {
        self.derivative(0, r)
    }
}

/// h(lambda) = 2 lambda + 1 for lambda >= 2 and 3 lambda - 1 on [1, 2).
pub fn nu_h(lambda: f64) -> f64 {
    if lambda >= 2.0 {
        2.0 * lambda + 1.0
    } else {
        3.0 * lambda - 1.0
    }
}

/// tau(lambda) = 2^(3/2) sqrt(lambda) - 1.
pub fn nu_tau(lambda: f64) -> f64 {
    2f64.powf(1.5) * lambda.sqrt() - 1.0
}

/// Result of a sign scan of `nu` over a grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NuScan {
    pub min_value: f64,
    pub argmin: f64,
}

/// Scans `nu` on `[lo, hi]` with step `step`, refining with step 1e-3 around
/// any sign change or local minimum found on the coarse grid.
pub fn nu_scan(nu: Nu, lo: f64, hi: f64, step: f64) -> NuScan {
    let n = ((hi - lo) / step).round() as usize;
    let grid: Vec<f64> = (0..=n).map(|i| lo + i as f64 * step).collect();
    let vals: Vec<f64> = grid.iter().map(|&r| nu.value(r)).collect();
    let mut best = NuScan { min_value: f64::INFINITY, argmin: lo };
    let mut consider = |r: f64, v: f64| {
        if v < best.min_value {
            best = NuScan { min_value: v, argmin: r };
        }
    };
    for (i, (&r, &v)) in grid.iter().zip(&vals).enumerate() {
        consider(r, v);
        let left = if i > 0 { vals[i - 1] } else { f64::INFINITY };
        let right = if i + 1 < vals.len() { vals[i + 1] } else { f64::INFINITY };
        let sign_change = i + 1 < vals.len() && (v < 0.0) != (vals[i + 1] < 0.0);
        if sign_change || (v <= left && v <= right) {
            let a = (r - step).max(lo);
            let b = (r + step).min(hi);
            let m = ((b - a) / 1e-3).round() as usize;
            for j in 0..=m {
                let s = a + j as f64 * 1e-3;
                consider(s, nu.value(s));
            }
        }
    }
    best
}

/// Smallest ratio q(r) = 2 Upsilon(r) / r^2 bracket: returns delta such that
/// |q(r) - 1| <= eps for |r| <= delta, found by bisection to 1e-10.
pub fn delta_eps(eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps < 0.5) {
        return Err(Error::InvalidParameter(format!("eps = {eps} must lie in (0, 1/2)")));
    }
    // q is increasing, so the worst points of [-delta, delta] are the endpoints.
    let q = |r: f64| 2.0 * upsilon(r) / (r * r);
    let ok = |d: f64| q(d) <= 1.0 + eps && q(-d) >= 1.0 - eps;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while ok(hi) {
        hi *= 2.0;
    }
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}
