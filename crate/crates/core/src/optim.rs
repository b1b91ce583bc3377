//! Box-capped BFGS with Armijo backtracking.

/// Settings for [`bfgs`].
#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Stop when the sup-norm of the gradient falls below `grad_tol * (1 + |f|)`.
    pub grad_tol: f64,
    /// Every coordinate is clamped to `[-cap, cap]`.
    pub cap: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        BfgsOptions { max_iter: 400, grad_tol: 1e-10, cap: 200.0 }
    }
}

#[derive(Debug, Clone)]
pub struct BfgsResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    /// True when the gradient test or a stalled-progress test ended the run.
    pub converged: bool,
}

/// Minimizes `obj`, which returns the value and writes the gradient into its
/// second argument. Non-finite values are treated as infeasible.
pub fn bfgs<F>(obj: F, x0: &[f64], opts: &BfgsOptions) -> BfgsResult
where
    F: Fn(&[f64], &mut [f64]) -> f64,
{
    let m = x0.len();
    let clamp = |v: f64| v.clamp(-opts.cap, opts.cap);
    let mut x: Vec<f64> = x0.iter().map(|&v| clamp(v)).collect();
    let mut g = vec![0.0; m];
    let mut fx = obj(&x, &mut g);
    if !fx.is_finite() {
        return BfgsResult { x, value: f64::INFINITY, iterations: 0, converged: false };
    }
    let mut h = identity(m);
    let mut fresh = true;
    let mut stalls = 0;
    let (mut xn, mut gn, mut d) = (vec![0.0; m], vec![0.0; m], vec![0.0; m]);
    for it in 0..opts.max_iter {
        let gmax = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if gmax <= opts.grad_tol * (1.0 + fx.abs()) {
            return BfgsResult { x, value: fx, iterations: it, converged: true };
        }
        for i in 0..m {
            d[i] = -(0..m).map(|j| h[i * m + j] * g[j]).sum::<f64>();
        }
        let slope: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
        if !(slope < 0.0) {
            h = identity(m);
            fresh = true;
            for i in 0..m {
                d[i] = -g[i];
            }
        }
        let mut alpha = if fresh { (1.0 / gmax).min(1.0) } else { 1.0 };
        let mut accepted = false;
        let mut fnew = fx;
        for _ in 0..80 {
            for i in 0..m {
                xn[i] = clamp(x[i] + alpha * d[i]);
            }
            fnew = obj(&xn, &mut gn);
            let actual: f64 = (0..m).map(|i| (xn[i] - x[i]) * g[i]).sum();
            if fnew.is_finite() && fnew <= fx + 1e-4 * actual.min(0.0) {
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            if fresh {
                return BfgsResult { x, value: fx, iterations: it, converged: true };
            }
            h = identity(m);
            fresh = true;
            continue;
        }
        let s: Vec<f64> = (0..m).map(|i| xn[i] - x[i]).collect();
        let y: Vec<f64> = (0..m).map(|i| gn[i] - g[i]).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let s_norm = s.iter().map(|v| v * v).sum::<f64>().sqrt();
        let y_norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if sy > 1e-12 * s_norm * y_norm {
            if fresh {
                // Scale the initial inverse Hessian before the first update.
                let yy: f64 = y.iter().map(|v| v * v).sum();
                let gamma = sy / yy;
                for v in h.iter_mut() {
                    *v *= gamma;
                }
            }
            bfgs_update(&mut h, &s, &y, sy);
            fresh = false;
        }
        let decrease = fx - fnew;
        x.copy_from_slice(&xn);
        g.copy_from_slice(&gn);
        fx = fnew;
        if decrease <= 1e-15 * (1.0 + fx.abs()) {
            stalls += 1;
            if stalls >= 3 {
                return BfgsResult { x, value: fx, iterations: it + 1, converged: true };
            }
        } else {
            stalls = 0;
        }
    }
    BfgsResult { x, value: fx, iterations: opts.max_iter, converged: false }
}

fn identity(m: usize) -> Vec<f64> {
    let mut h = vec![0.0; m * m];
    for i in 0..m {
        h[i * m + i] = 1.0;
    }
    h
}

/// H <- (I - rho s y^T) H (I - rho y s^T) + rho s s^T.
fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let m = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..m).map(|i| (0..m).map(|j| h[i * m + j] * y[j]).sum()).collect();
    let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
    for i in 0..m {
        for j in 0..m {
            h[i * m + j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}
