use num_complex::Complex64;

use crate::chf::exponent::LogMgf;
use crate::chf::sqrtvar::DEFAULT_INTERVALS;
use crate::chf::dchf_with;
use crate::error::{invalid, Error, Result};
use crate::model::{ModelFamily, ModelSpec};

/// Conditional discounted moment `E[x_T^a v_T^b r_T^c D(t, t + tau) | X_t]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MomentRequest {
    /// Exponents of `(x, v, r)`.
    pub exps: [u8; 3],
    pub tau: f64,
    /// Conditioning state `(x, v, r)`.
    pub state: [f64; 3],
}

impl MomentRequest {
    pub fn degree(&self) -> usize {
        self.exps.iter().map(|&e| e as usize).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MomentBackend {
    /// Closed forms for the Heston model, degree <= 2.
    ClosedForm,
    /// Finite differences of the complex characteristic function at zero.
    FiniteDifference,
    /// Truncated power series of the log moment generating function.
    PowerSeries,
}

fn check_request(model: &ModelSpec, req: &MomentRequest) -> Result<()> {
    let cap = model.family.degree_cap();
    if req.degree() > cap {
        return Err(Error::DegreeTooHigh { degree: req.degree(), cap });
    }
    if !(req.tau >= 0.0) {
        return Err(invalid("tau", "must be non-negative"));
    }
    if req.exps[1] > 0 && !model.family.stochastic_variance() {
        return Err(invalid("exps", "variance is not a state variable of this model"));
    }
    if req.exps[2] > 0 && !model.family.stochastic_rate() {
        return Err(invalid("exps", "rate is not a state variable of this model"));
    }
    Ok(())
}

pub fn discounted_moment(model: &ModelSpec, req: &MomentRequest, backend: MomentBackend) -> Result<f64> {
    check_request(model, req)?;
    match backend {
        MomentBackend::ClosedForm => closed_form(model, req),
        MomentBackend::FiniteDifference => finite_difference(model, req, DEFAULT_INTERVALS),
        MomentBackend::PowerSeries => {
            let poly = moment_x_expansion(model, req.exps, req.tau, req.state[1], req.state[2])?;
            Ok(poly.eval(req.state[0]))
        }
    }
}

/// Compares the power-series backend (or the closed form, where available)
/// against finite differences and fails beyond `rel_tol`.
pub fn cross_check_moment(model: &ModelSpec, req: &MomentRequest, rel_tol: f64) -> Result<(f64, f64)> {
    let primary = if model.family == ModelFamily::Heston && req.degree() <= 2 {
        MomentBackend::ClosedForm
    } else {
        MomentBackend::PowerSeries
    };
    let a = discounted_moment(model, req, primary)?;
    let b = discounted_moment(model, req, MomentBackend::FiniteDifference)?;
    if (a - b).abs() > rel_tol * a.abs().max(b.abs()).max(1e-300) {
        return Err(Error::MomentMismatch { exps: req.exps, a, b });
    }
    Ok((a, b))
}

/// Discounted moments as a polynomial in the current log-spot.
///
/// `shifted[k] = E[(x_T - x_t)^k v_T^b r_T^c D]`, so that
/// `E[x_T^a v_T^b r_T^c D] = sum_j C(a, j) x_t^j shifted[a - j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct XExpansion {
    pub shifted: Vec<f64>,
}

impl XExpansion {
    pub fn degree(&self) -> usize {
        self.shifted.len() - 1
    }

    /// `order`-th derivative in `x_t` of the moment, evaluated at `x`.
    pub fn derivative(&self, x: f64, order: usize) -> f64 {
        let a = self.degree();
        if order > a {
            return 0.0;
        }
        // d^o/dx^o sum_j C(a,j) x^j s[a-j]
        let mut total = 0.0;
        for j in order..=a {
            let falling: f64 = (0..order).map(|i| (j - i) as f64).product();
            total += binomial(a, j) * falling * x.powi((j - order) as i32) * self.shifted[a - j];
        }
        total
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.derivative(x, 0)
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

pub fn moment_x_expansion(model: &ModelSpec, exps: [u8; 3], tau: f64, v: f64, r: f64) -> Result<XExpansion> {
    let req = MomentRequest { exps, tau, state: [0.0, v, r] };
    check_request(model, &req)?;
    let lm = LogMgf::new(model, tau, req.degree())?;
    let mut raw = vec![0.0; lm.set().len()];
    lm.raw_moments(v, r, &mut raw);
    let vars = model.family.state_vars();
    let shifted = (0..=exps[0])
        .map(|k| {
            let mut e = [0u8; 3];
            for (i, var) in vars.iter().enumerate() {
                e[i] = if var.slot() == 0 { k } else { exps[var.slot()] };
            }
            raw[lm.set().index(e).expect("exponent within degree")]
        })
        .collect();
    Ok(XExpansion { shifted })
}

fn closed_form(model: &ModelSpec, req: &MomentRequest) -> Result<f64> {
    if model.family != ModelFamily::Heston || req.degree() > 2 {
        return Err(invalid("backend", "closed forms cover Heston moments of degree <= 2"));
    }
    let (kappa, gamma, vbar, rho, r) = (model.kappa, model.gamma, model.vbar, model.rho_xv, model.r0);
    let tau = req.tau;
    let [x, v, _] = req.state;
    let e1 = (-kappa * tau).exp();
    let e2 = (-2.0 * kappa * tau).exp();
    let bond = (-r * tau).exp();
    let g2 = gamma * gamma;
    let k2 = kappa * kappa;
    let k3 = k2 * kappa;
    let kt = kappa * tau;
    let mean_x = x + (vbar - v) * (1.0 - e1) / (2.0 * kappa) + (r - 0.5 * vbar) * tau;
    let mean_v = vbar + (v - vbar) * e1;

    let value = match req.exps {
        [0, 0, 0] => 1.0,
        [1, 0, 0] => mean_x,
        [0, 1, 0] => mean_v,
        [2, 0, 0] => {
            let omega1 = e2 * g2 + 4.0 * e1 * ((1.0 + kt) * g2 - 2.0 * rho * kappa * gamma * (2.0 + kt) + 2.0 * k2)
                + (2.0 * kt - 5.0) * g2
                - 8.0 * rho * kappa * gamma * (kt - 2.0)
                + 8.0 * k2 * (kt - 1.0);
            let omega2 = -e2 * g2 + 2.0 * e1 * (-kt * g2 + 2.0 * rho * kappa * gamma * (1.0 + kt) - 2.0 * k2) + g2
                - 4.0 * kappa * rho * gamma
                + 4.0 * k2;
            mean_x * mean_x + vbar / (8.0 * k3) * omega1 + v / (4.0 * k3) * omega2
        }
        [0, 2, 0] => v * g2 / kappa * (e1 - e2) + vbar * g2 / (2.0 * kappa) * (1.0 - e1).powi(2) + mean_v * mean_v,
        [1, 1, 0] => {
            let omega3 = e2 + 2.0 * kappa * e1 * (tau - 2.0 * rho / gamma * (1.0 + kt)) + (4.0 * kappa * rho - gamma) / gamma;
            let omega4 = e1 * (1.0 - kt + 2.0 * rho * k2 * tau / gamma) - e2;
            mean_v * mean_x + vbar * g2 / (4.0 * k2) * omega3 + v * g2 / (2.0 * k2) * omega4
        }
        _ => return Err(invalid("exps", "not a Heston state monomial")),
    };
    Ok(value * bond)
}

const STENCILS: [&[(f64, f64)]; 4] = [
    &[(0.0, 1.0)],
    &[(1.0, 0.5), (-1.0, -0.5)],
    &[(1.0, 1.0), (0.0, -2.0), (-1.0, 1.0)],
    &[(2.0, 0.5), (1.0, -1.0), (-1.0, 1.0), (-2.0, -0.5)],
];

/// Mixed central differences of the characteristic function at `u = 0`,
/// refined by two Richardson levels. Steps are scaled per variable by the
/// magnitude of the state so that `h * |Y|` is comparable across `x`, `v`, `r`.
fn finite_difference(model: &ModelSpec, req: &MomentRequest, intervals: usize) -> Result<f64> {
    let [x, v, r] = req.state;
    let scale = [x.abs() + 1.0, v.abs() + model.vbar + 0.01, r.abs() + model.theta.abs() + 0.01];
    let h: [f64; 3] = std::array::from_fn(|d| 0.02 / scale[d]);
    let order = req.exps.map(|e| e as usize);

    let diff = |shrink: f64| -> Result<Complex64> {
        let mut total = Complex64::new(0.0, 0.0);
        for &(o0, w0) in STENCILS[order[0]] {
            for &(o1, w1) in STENCILS[order[1]] {
                for &(o2, w2) in STENCILS[order[2]] {
                    let u = [
                        Complex64::new(o0 * h[0] * shrink, 0.0),
                        Complex64::new(o1 * h[1] * shrink, 0.0),
                        Complex64::new(o2 * h[2] * shrink, 0.0),
                    ];
                    total += w0 * w1 * w2 * dchf_with(model, u, req.tau, req.state, intervals)?;
                }
            }
        }
        let denom: f64 = (0..3).map(|d| (h[d] * shrink).powi(order[d] as i32)).product();
        Ok(total / denom)
    };
    let d0 = diff(1.0)?;
    let d1 = diff(0.5)?;
    let d2 = diff(0.25)?;
    let r1a = (4.0 * d1 - d0) / 3.0;
    let r1b = (4.0 * d2 - d1) / 3.0;
    let r2 = (16.0 * r1b - r1a) / 15.0;
    let deg = req.degree() as i32;
    Ok((r2 / Complex64::i().powi(deg)).re)
}
