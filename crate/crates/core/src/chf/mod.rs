//! Discounted characteristic functions and discounted moments.
//!
//! [`dchf`] evaluates `E[exp(i u . X_T) D(t, T) | X_t]` in complex arithmetic.
//! The moment engine works with the same exponent on the real axis
//! (`u = -i s`) as a truncated power series; see [`LogMgf`].

mod exponent;
mod moments;
pub mod sqrtvar;

use num_complex::Complex64;

use crate::error::{invalid, Result};
use crate::model::{ModelFamily, ModelSpec};
pub use exponent::LogMgf;
pub use moments::{
    cross_check_moment, discounted_moment, moment_x_expansion, MomentBackend, MomentRequest,
};
use sqrtvar::{volatility_integrals, DEFAULT_INTERVALS};

/// Hull-White time integrals over `[0, tau]` for mean reversion `lambda`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct HwIntegrals {
    /// `int e^{-lambda s} ds`
    pub b: f64,
    /// `exp(-lambda tau)`
    pub e: f64,
    /// `int b(s)^2 ds` with `b(s) = (1 - e^{-lambda s}) / lambda`
    pub bb: f64,
    /// `int b(s) e^{-lambda s} ds`
    pub be: f64,
    /// `int e^{-2 lambda s} ds`
    pub ee: f64,
    /// `int b(s) ds = (tau - b) / lambda`
    pub b_int: f64,
}

impl HwIntegrals {
    pub fn new(lambda: f64, tau: f64) -> Self {
        let z = lambda * tau;
        let e = (-z).exp();
        if z < 1e-3 {
            // series in z; exact to O(z^3)
            let t2 = tau * tau;
            return HwIntegrals {
                b: tau * (1.0 - z / 2.0 + z * z / 6.0),
                e,
                bb: t2 * tau * (1.0 / 3.0 - z / 4.0 + 7.0 * z * z / 60.0),
                be: t2 * (0.5 - z / 2.0 + 7.0 * z * z / 24.0),
                ee: tau * (1.0 - z + 2.0 * z * z / 3.0),
                b_int: t2 * (0.5 - z / 6.0 + z * z / 24.0),
            };
        }
        let b = -(-z).exp_m1() / lambda;
        let ee = -(-2.0 * z).exp_m1() / (2.0 * lambda);
        HwIntegrals {
            b,
            e,
            bb: (tau - 2.0 * b + ee) / (lambda * lambda),
            be: (b - ee) / lambda,
            ee,
            b_int: (tau - b) / lambda,
        }
    }
}

/// Hull-White zero-coupon bond `P(t, t + tau)` given `r_t`.
pub fn hull_white_bond(model: &ModelSpec, tau: f64, r: f64) -> f64 {
    let hw = HwIntegrals::new(model.lambda, tau);
    let a = -model.theta * (tau - hw.b) + 0.5 * model.eta * model.eta * hw.bb;
    (a - hw.b * r).exp()
}

/// `E[exp(i u . (x_T, v_T, r_T)) D(t, t + tau) | state]` with `state = (x, v, r)`.
///
/// Components of `u` and `state` for variables the family lacks are ignored.
pub fn dchf(model: &ModelSpec, u: [Complex64; 3], tau: f64, state: [f64; 3]) -> Result<Complex64> {
    dchf_with(model, u, tau, state, DEFAULT_INTERVALS)
}

/// [`dchf`] with an explicit number of quadrature intervals for the
/// volatility integrals of the Heston-Hull-White approximation.
pub fn dchf_with(
    model: &ModelSpec,
    u: [Complex64; 3],
    tau: f64,
    state: [f64; 3],
    intervals: usize,
) -> Result<Complex64> {
    if !(tau >= 0.0) {
        return Err(invalid("tau", "must be non-negative"));
    }
    let i = Complex64::i();
    let one = Complex64::new(1.0, 0.0);
    let [x, v, r] = state;
    let (u1, u2, u3) = (u[0], u[1], u[2]);
    let iu1 = i * u1;
    if tau == 0.0 {
        let mut z = iu1 * x;
        if model.family.stochastic_variance() {
            z += i * u2 * v;
        }
        if model.family.stochastic_rate() {
            z += i * u3 * r;
        }
        return Ok(z.exp());
    }

    let heston = |rate_term: bool| -> (Complex64, Complex64) {
        let (kappa, gamma, rho) = (model.kappa, model.gamma, model.rho_xv);
        let g2 = gamma * gamma;
        let beta = kappa - gamma * rho * iu1;
        let d1 = (beta * beta + g2 * u1 * (u1 + i)).sqrt();
        let r_plus = (beta + d1) / g2;
        let r_minus = (beta - d1) / g2;
        let g = (i * u2 - r_minus) / (i * u2 - r_plus);
        let ed = (-d1 * tau).exp();
        let c = r_plus - 2.0 * d1 / (g2 * (one - g * ed));
        let mut a = kappa * model.vbar * (r_minus * tau - 2.0 / g2 * ((one - g * ed) / (one - g)).ln());
        if rate_term {
            a += model.r0 * (iu1 - 1.0) * tau;
        }
        (a, c)
    };

    // Hull-White parts shared by the hybrids: (theta term + eta^2 term, rate coefficient)
    let hull_white = || -> (Complex64, Complex64) {
        let (lambda, theta, eta) = (model.lambda, model.theta, model.eta);
        let e = (-lambda * tau).exp();
        let d = (iu1 - 1.0) / lambda * (1.0 - e) + i * u3 * e;
        let i_theta = theta * ((iu1 - 1.0) * tau + (e - 1.0) * (iu1 - 1.0) / lambda - i * u3 * (e - 1.0));
        let w = lambda * u3 - u1 - i;
        let i_eta = eta * eta / (2.0 * lambda * lambda)
            * (2.0 / lambda * (u1 + i) * (e - 1.0) * w + (e * e - 1.0) / (2.0 * lambda) * w * w
                - (u1 + i) * (u1 + i) * tau);
        (i_theta + i_eta, d)
    };

    let exponent = match model.family {
        ModelFamily::Bs => {
            let s2 = model.sigma * model.sigma;
            0.5 * s2 * iu1 * (iu1 - 1.0) * tau + model.r0 * (iu1 - 1.0) * tau + iu1 * x
        }
        ModelFamily::Heston => {
            let (a, c) = heston(true);
            a + iu1 * x + c * v
        }
        ModelFamily::Bshw => {
            let (lambda, eta, sigma) = (model.lambda, model.eta, model.sigma);
            let e = (-lambda * tau).exp();
            let i1 = 0.5 * sigma * sigma * iu1 * (iu1 - 1.0) * tau;
            let i4 = eta * sigma * model.rho_xr / lambda
                * (-(iu1 + u1 * u1) / lambda * (lambda * tau + e - 1.0) + u1 * u3 * (e - 1.0));
            let (hw, d) = hull_white();
            i1 + hw + i4 + iu1 * x + d * r
        }
        ModelFamily::Hhw => {
            if model.gamma == 0.0 && v == 0.0 {
                return Err(invalid("gamma", "degenerate variance with zero state"));
            }
            let (a, c) = heston(false);
            let (hw, d) = hull_white();
            let (g1_over_lambda, g2) = volatility_integrals(model, tau, v, intervals);
            let i4 = model.eta * model.rho_xr * (-(iu1 + u1 * u1) * g1_over_lambda - u1 * u3 * g2);
            a + hw + i4 + iu1 * x + c * v + d * r
        }
    };
    Ok(exponent.exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::preset;

    fn zero() -> [Complex64; 3] {
        [Complex64::new(0.0, 0.0); 3]
    }

    #[test]
    fn heston_bond() {
        let (model, _, _) = preset("TestA").unwrap();
        let p = dchf(&model, zero(), 0.1, [100f64.ln(), 0.0348, 0.0]).unwrap();
        assert!((p.re - 0.996_007_989_343).abs() < 1e-9, "{p}");
        assert!(p.im.abs() < 1e-15);
    }

    #[test]
    fn degenerate_interval() {
        let (model, _, _) = preset("TestA").unwrap();
        let u = [Complex64::new(0.7, 0.0), Complex64::new(-1.3, 0.0), Complex64::new(0.0, 0.0)];
        let x = 100f64.ln();
        let p = dchf(&model, u, 0.0, [x, 0.0348, 0.0]).unwrap();
        let want = (Complex64::i() * (0.7 * x - 1.3 * 0.0348)).exp();
        assert!((p - want).norm() < 1e-15);
    }

    #[test]
    fn hybrid_bonds_match_hull_white() {
        let (model, _, _) = preset("TestB_rho02_T5").unwrap();
        let p = dchf(&model, zero(), 1.0, [100f64.ln(), 0.05, 0.02]).unwrap();
        // oracle: exp(-int E[r]) times the variance adjustment of the integrated rate
        let (lambda, eta, tau) = (0.01f64, 0.01f64, 1.0f64);
        let b = (1.0 - (-lambda * tau).exp()) / lambda;
        let var = eta * eta / (lambda * lambda) * (tau - 2.0 * b + (1.0 - (-2.0 * lambda * tau).exp()) / (2.0 * lambda));
        let want = (-0.02 * tau + 0.5 * var).exp();
        assert!((p.re - want).abs() < 1e-10, "{} vs {}", p.re, want);
        assert!((hull_white_bond(&model, 1.0, 0.02) - want).abs() < 1e-12);

        let mut bshw = model.clone();
        bshw.family = ModelFamily::Bshw;
        bshw.sigma = 0.2;
        let q = dchf(&bshw, zero(), 1.0, [100f64.ln(), 0.0, 0.02]).unwrap();
        assert!((q.re - want).abs() < 1e-10);
    }

    #[test]
    fn negative_tau_rejected() {
        let (model, _, _) = preset("TestA").unwrap();
        assert!(dchf(&model, zero(), -1.0, [0.0; 3]).is_err());
    }

    #[test]
    fn hw_integral_series_branch_is_continuous() {
        for &tau in &[0.5, 5.0] {
            let lambda = 0.999e-3 / tau;
            let a = HwIntegrals::new(lambda, tau);
            let b = HwIntegrals::new(lambda * 1.002, tau);
            for (x, y) in [(a.b, b.b), (a.bb, b.bb), (a.be, b.be), (a.ee, b.ee), (a.b_int, b.b_int)] {
                assert!((x - y).abs() < 1e-5 * x.abs(), "{x} {y}");
            }
        }
    }
}
