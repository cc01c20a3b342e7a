use crate::chf::sqrtvar::{VolatilityIntegralTable, DEFAULT_INTERVALS};
use crate::chf::HwIntegrals;
use crate::error::{Error, Result};
use crate::jet::Jet;
use crate::model::{ModelFamily, ModelSpec, StateVar};
use crate::monomial::{MonomialSet, MAX_TERMS};

/// Log of the discounted moment generating function of
/// `Y = (x_T - x_t, v_T, r_T)` over one interval,
///
/// `log E[exp(s . Y) D(t, t + tau) | v_t, r_t]
///    = a(s) + c(s) v_t + d(s) r_t + e1(s) G1(v_t) / lambda + e2(s) G2(v_t)`,
///
/// stored as truncated power series in `s` around zero. The jet variables are
/// the family's state variables in `(x, v, r)` order.
#[derive(Clone, Debug)]
pub struct LogMgf {
    family: ModelFamily,
    tau: f64,
    set: MonomialSet,
    a: [f64; MAX_TERMS],
    c: [f64; MAX_TERMS],
    d: [f64; MAX_TERMS],
    e1: [f64; MAX_TERMS],
    e2: [f64; MAX_TERMS],
    table: Option<VolatilityIntegralTable>,
    factorials: [f64; MAX_TERMS],
}

fn copy(j: Jet<'_>) -> [f64; MAX_TERMS] {
    let mut out = [0.0; MAX_TERMS];
    out[..j.coeffs().len()].copy_from_slice(j.coeffs());
    out
}

impl LogMgf {
    pub fn new(model: &ModelSpec, tau: f64, degree: usize) -> Result<Self> {
        Self::with_intervals(model, tau, degree, DEFAULT_INTERVALS)
    }

    pub fn with_intervals(model: &ModelSpec, tau: f64, degree: usize, intervals: usize) -> Result<Self> {
        model.validate()?;
        let cap = model.family.degree_cap();
        if degree > cap {
            return Err(Error::DegreeTooHigh { degree, cap });
        }
        if !(tau >= 0.0) {
            return Err(crate::error::invalid("tau", "must be non-negative"));
        }
        let vars = model.family.state_vars();
        let set = MonomialSet::new(vars.len(), degree);
        let var = |which: StateVar| match vars.iter().position(|&v| v == which) {
            Some(k) => Jet::variable(&set, k, 0.0),
            None => Jet::zero(&set),
        };
        let (s1, s2, s3) = (var(StateVar::LogSpot), var(StateVar::Variance), var(StateVar::Rate));
        let zero = Jet::zero(&set);
        let s1m1 = s1 - 1.0;
        let quad = s1 * s1m1; // s1^2 - s1

        let (mut a, c) = if model.family.stochastic_variance() {
            heston_parts(model, tau, s1, s2)
        } else {
            (quad * (0.5 * model.sigma * model.sigma * tau), zero)
        };
        let (mut d, mut e1, mut e2) = (zero, zero, zero);
        if model.family.stochastic_rate() {
            let hw = HwIntegrals::new(model.lambda, tau);
            d = s1m1 * hw.b + s3 * hw.e;
            a = a + model.theta * (s1m1 * (tau - hw.b) + s3 * (model.lambda * hw.b));
            let var = s1m1 * s1m1 * hw.bb + s1m1 * s3 * (2.0 * hw.be) + s3 * s3 * hw.ee;
            a = a + var * (0.5 * model.eta * model.eta);
            match model.family {
                ModelFamily::Bshw => {
                    let k = model.rho_xr * model.eta * model.sigma;
                    a = a + quad * (k * hw.b_int) + s1 * s3 * (k * hw.b);
                }
                _ => {
                    e1 = quad * (model.eta * model.rho_xr);
                    e2 = s1 * s3 * (model.eta * model.rho_xr);
                }
            }
        } else {
            a = a + s1m1 * (model.r0 * tau);
        }

        let table = (model.family == ModelFamily::Hhw && tau > 0.0)
            .then(|| VolatilityIntegralTable::new(model, tau, intervals));

        let mut factorials = [1.0; MAX_TERMS];
        for (f, e) in factorials.iter_mut().zip(set.exponents()) {
            *f = e.iter().map(|&k| (1..=k).map(f64::from).product::<f64>()).product();
        }

        Ok(LogMgf {
            family: model.family,
            tau,
            a: copy(a),
            c: copy(c),
            d: copy(d),
            e1: copy(e1),
            e2: copy(e2),
            set,
            table,
            factorials,
        })
    }

    pub fn set(&self) -> &MonomialSet {
        &self.set
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn family(&self) -> ModelFamily {
        self.family
    }

    /// The exponent at state `(v, r)`; unused coordinates are ignored.
    pub fn exponent(&self, v: f64, r: f64) -> Jet<'_> {
        let n = self.set.len();
        let mut out = [0.0; MAX_TERMS];
        let (w1, w2) = match &self.table {
            Some(t) => t.eval(v),
            None => (0.0, 0.0),
        };
        for k in 0..n {
            out[k] = self.a[k] + self.c[k] * v + self.d[k] * r + self.e1[k] * w1 + self.e2[k] * w2;
        }
        Jet::from_coeffs(&self.set, &out)
    }

    /// `E[Y^alpha D]` for every monomial `alpha` of the set.
    pub fn raw_moments(&self, v: f64, r: f64, out: &mut [f64]) {
        let m = self.exponent(v, r).exp();
        for ((o, c), f) in out.iter_mut().zip(m.coeffs()).zip(&self.factorials) {
            *o = c * f;
        }
    }

    /// `E[prod_d ((Y_d - center_d) / scale_d)^alpha_d D]` for every monomial,
    /// with `center` and `scale` indexed like the jet variables.
    pub fn standardized_moments(&self, v: f64, r: f64, center: &[f64], scale: &[f64], out: &mut [f64]) {
        let mut psi = self.exponent(v, r);
        let n = self.set.n_vars();
        let mut factor = [1.0; 3];
        for k in 0..n {
            if self.set.degree() > 0 {
                let mut e = [0u8; 3];
                e[k] = 1;
                let i = self.set.index(e).unwrap();
                psi.coeffs_mut()[i] -= center[k];
            }
            factor[k] = 1.0 / scale[k];
        }
        let m = psi.rescale_vars(factor).exp();
        for ((o, c), f) in out.iter_mut().zip(m.coeffs()).zip(&self.factorials) {
            *o = c * f;
        }
    }
}

/// Heston exponent pieces `(a, c)` in the real-argument form
/// `c = [r_-(1 - E) + s2 E - r_- s2 q] / [1 - s2 q + (s2 - r_-) E q]`,
/// `a = kappa vbar (r_- tau - 2 log1p(gamma^2 w) / gamma^2)`,
/// with `beta = kappa - gamma rho s1`, `D = sqrt(beta^2 + gamma^2 s1 (1 - s1))`,
/// `r_- = s1 (s1 - 1) / (beta + D)`, `q = gamma^2 / (beta + D)`, `E = exp(-D tau)`
/// and `w = (s2 - r_-)(1 - E) / ((beta + D)(q r_- - 1))`.
/// These stay finite as the vol-of-vol goes to zero.
fn heston_parts<'a>(model: &ModelSpec, tau: f64, s1: Jet<'a>, s2: Jet<'a>) -> (Jet<'a>, Jet<'a>) {
    let (kappa, gamma, rho) = (model.kappa, model.gamma, model.rho_xv);
    let g2 = gamma * gamma;
    let beta = kappa - s1 * (gamma * rho);
    let dd = (beta * beta + s1 * (1.0 - s1) * g2).sqrt();
    let bd = beta + dd;
    let r_minus = s1 * (s1 - 1.0) / bd;
    let q = bd.recip() * g2;
    let e = (dd * (-tau)).exp();
    let one_minus_e = 1.0 - e;
    let c = (r_minus * one_minus_e + s2 * e - r_minus * s2 * q) / (1.0 - s2 * q + (s2 - r_minus) * e * q);
    let w = (s2 - r_minus) * one_minus_e / (bd * (q * r_minus - 1.0));
    let a = (r_minus * tau - w.log1p_scaled(g2) * 2.0) * (kappa * model.vbar);
    (a, c)
}
