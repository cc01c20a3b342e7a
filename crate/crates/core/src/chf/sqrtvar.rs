//! Conditional expectation of the volatility `E[sqrt(v_t) | v_s]` under the
//! square-root diffusion and the time integrals built from it.

use statrs::function::gamma::ln_gamma;

use crate::model::ModelSpec;

/// Below this horizon `E[sqrt(v_t) | v_s]` is replaced by `sqrt(v_s)`.
pub const SMALL_TAU: f64 = 1e-4;

/// Default number of quadrature intervals for the volatility integrals.
pub const DEFAULT_INTERVALS: usize = 64;

const SERIES_TOL: f64 = 1e-12;

/// Noncentral chi-square parameters of `v_{s+tau} = c * chi2(d, lambda)`.
#[derive(Clone, Copy, Debug)]
pub struct ChiSquareParams {
    pub c: f64,
    pub d: f64,
    pub lambda: f64,
}

pub fn chi_square_params(kappa: f64, gamma: f64, vbar: f64, v_s: f64, tau: f64) -> ChiSquareParams {
    let g2 = gamma * gamma;
    let one_minus = -(-kappa * tau).exp_m1();
    let c = g2 * one_minus / (4.0 * kappa);
    let d = 4.0 * kappa * vbar / g2;
    let lambda = 4.0 * kappa * v_s * (-kappa * tau).exp() / (g2 * one_minus);
    ChiSquareParams { c, d, lambda }
}

/// `E[sqrt(v_{s+tau}) | v_s]`.
///
/// Uses `sqrt(v_s)` for tiny `tau`, the closed approximation
/// `sqrt(c (lambda - 1 + d + d / (2 (d + lambda))))` when `d > 1/2`, and the
/// Poisson-mixture series otherwise. A vanishing vol-of-vol collapses to the
/// deterministic mean path.
pub fn expected_sqrt_v(kappa: f64, gamma: f64, vbar: f64, v_s: f64, tau: f64) -> f64 {
    if tau < SMALL_TAU {
        return v_s.sqrt();
    }
    if gamma <= 1e-12 {
        return (vbar + (v_s - vbar) * (-kappa * tau).exp()).max(0.0).sqrt();
    }
    let p = chi_square_params(kappa, gamma, vbar, v_s, tau);
    if p.d > 0.5 {
        let inner = p.lambda - 1.0 + p.d + p.d / (2.0 * (p.d + p.lambda));
        return (p.c * inner).max(0.0).sqrt();
    }
    expected_sqrt_v_series(p)
}

/// `sqrt(2c) e^{-lambda/2} sum_k (lambda/2)^k / k! * Gamma((1+d)/2 + k) / Gamma(d/2 + k)`.
///
/// Summed outwards from the dominant Poisson term until the increments fall
/// below `1e-12` of the running sum in both directions.
pub fn expected_sqrt_v_series(p: ChiSquareParams) -> f64 {
    let half = 0.5 * p.lambda;
    let a = 0.5 * (1.0 + p.d);
    let b = 0.5 * p.d;
    let mut k0 = half.floor() as usize;
    if b + k0 as f64 == 0.0 {
        k0 = 1;
    }
    if half == 0.0 {
        // only the k = 0 term survives
        if b == 0.0 {
            return 0.0;
        }
        return (2.0 * p.c).sqrt() * (ln_gamma(a) - ln_gamma(b)).exp();
    }
    let log_term = |k: usize| {
        let kf = k as f64;
        -half + kf * half.ln() - ln_gamma(kf + 1.0) + ln_gamma(a + kf) - ln_gamma(b + kf)
    };
    let peak = log_term(k0).exp();
    let mut sum = peak;

    let mut t = peak;
    let mut k = k0;
    loop {
        let kf = k as f64;
        t *= half / (kf + 1.0) * (a + kf) / (b + kf);
        k += 1;
        sum += t;
        if t <= SERIES_TOL * sum && kf > half {
            break;
        }
    }

    let mut t = peak;
    let mut k = k0;
    while k > 0 {
        let kf = k as f64;
        t *= kf / half * (b + kf - 1.0) / (a + kf - 1.0);
        k -= 1;
        sum += t;
        if t <= SERIES_TOL * sum {
            break;
        }
    }
    (2.0 * p.c).sqrt() * sum
}

/// `(1 - e^{-lambda s}) / lambda`, equal to `s` at `lambda = 0`.
pub(crate) fn decay_integral(lambda: f64, s: f64) -> f64 {
    if lambda == 0.0 {
        s
    } else {
        -(-lambda * s).exp_m1() / lambda
    }
}

/// Left-rectangle approximations of
/// `G1 / lambda = int_0^tau E[sqrt(v_{T-s}) | v_t] (1 - e^{-lambda s}) / lambda ds` and
/// `G2 = int_0^tau E[sqrt(v_{T-s}) | v_t] e^{-lambda s} ds`.
pub fn volatility_integrals(model: &ModelSpec, tau: f64, v: f64, intervals: usize) -> (f64, f64) {
    let ds = tau / intervals as f64;
    let mut g1 = 0.0;
    let mut g2 = 0.0;
    for k in 0..intervals {
        let s = k as f64 * ds;
        let e = expected_sqrt_v(model.kappa, model.gamma, model.vbar, v, tau - s);
        g1 += e * decay_integral(model.lambda, s);
        g2 += e * (-model.lambda * s).exp();
    }
    (g1 * ds, g2 * ds)
}

/// Tabulated [`volatility_integrals`] on a grid uniform in `sqrt(v)`, with
/// cubic interpolation; states beyond the table are computed directly.
#[derive(Clone, Debug)]
pub struct VolatilityIntegralTable {
    model: ModelSpec,
    tau: f64,
    intervals: usize,
    step: f64,
    g1: Vec<f64>,
    g2: Vec<f64>,
}

const TABLE_NODES: usize = 1024;

impl VolatilityIntegralTable {
    pub fn new(model: &ModelSpec, tau: f64, intervals: usize) -> Self {
        let v_max = 4.0f64.max(16.0 * model.vbar.max(model.v0));
        let step = v_max.sqrt() / (TABLE_NODES - 1) as f64;
        let (g1, g2) = (0..TABLE_NODES)
            .map(|i| {
                let y = i as f64 * step;
                volatility_integrals(model, tau, y * y, intervals)
            })
            .unzip();
        VolatilityIntegralTable { model: model.clone(), tau, intervals, step, g1, g2 }
    }

    pub fn eval(&self, v: f64) -> (f64, f64) {
        let y = v.max(0.0).sqrt() / self.step;
        if y > (TABLE_NODES - 1) as f64 {
            return volatility_integrals(&self.model, self.tau, v, self.intervals);
        }
        let i = (y.floor() as usize).clamp(1, TABLE_NODES - 3);
        let t = y - i as f64;
        let w = [
            -t * (t - 1.0) * (t - 2.0) / 6.0,
            (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0,
            -(t + 1.0) * t * (t - 2.0) / 2.0,
            (t + 1.0) * t * (t - 1.0) / 6.0,
        ];
        let interp = |f: &[f64]| w.iter().zip(&f[i - 1..i + 3]).map(|(a, b)| a * b).sum::<f64>();
        (interp(&self.g1), interp(&self.g2))
    }
}
