//! Truncated multivariate power series.
//!
//! A [`Jet`] holds the Taylor coefficients (not derivatives) of a function of
//! up to three variables around a base point, truncated at the degree of its
//! [`MonomialSet`]. Arithmetic and elementary functions propagate the
//! truncated expansion exactly.

use std::ops::{Add, Mul, Neg, Sub};

use crate::monomial::{MonomialSet, MAX_TERMS};

#[derive(Clone, Copy, Debug)]
pub struct Jet<'a> {
    set: &'a MonomialSet,
    c: [f64; MAX_TERMS],
}

impl<'a> Jet<'a> {
    pub fn constant(set: &'a MonomialSet, value: f64) -> Self {
        let mut c = [0.0; MAX_TERMS];
        c[0] = value;
        Jet { set, c }
    }

    pub fn zero(set: &'a MonomialSet) -> Self {
        Self::constant(set, 0.0)
    }

    /// The coordinate function of variable `var` expanded around `base`.
    ///
    /// Variables beyond the set's dimension are constant.
    pub fn variable(set: &'a MonomialSet, var: usize, base: f64) -> Self {
        let mut j = Self::constant(set, base);
        if var < set.n_vars() && set.degree() > 0 {
            let mut e = [0u8; 3];
            e[var] = 1;
            j.c[set.index(e).unwrap()] = 1.0;
        }
        j
    }

    pub fn from_coeffs(set: &'a MonomialSet, coeffs: &[f64]) -> Self {
        let mut c = [0.0; MAX_TERMS];
        c[..set.len()].copy_from_slice(&coeffs[..set.len()]);
        Jet { set, c }
    }

    pub fn set(&self) -> &'a MonomialSet {
        self.set
    }

    pub fn value(&self) -> f64 {
        self.c[0]
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.c[..self.set.len()]
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        let n = self.set.len();
        &mut self.c[..n]
    }

    pub fn scale(mut self, k: f64) -> Self {
        for x in self.coeffs_mut() {
            *x *= k;
        }
        self
    }

    /// Substitutes `s_d -> factor[d] * s_d`.
    pub fn rescale_vars(mut self, factor: [f64; 3]) -> Self {
        let set = self.set;
        for (x, e) in self.coeffs_mut().iter_mut().zip(set.exponents()) {
            *x *= factor[0].powi(e[0] as i32) * factor[1].powi(e[1] as i32) * factor[2].powi(e[2] as i32);
        }
        self
    }

    /// Composes with a scalar function given its derivatives at the base value.
    pub fn compose(&self, derivs: [f64; 4]) -> Self {
        let mut tail = *self;
        tail.c[0] = 0.0;
        let mut out = Self::constant(self.set, derivs[0]);
        let mut power = Self::constant(self.set, 1.0);
        let mut factorial = 1.0;
        for (k, &dk) in derivs.iter().enumerate().skip(1).take(self.set.degree()) {
            power = power * tail;
            factorial *= k as f64;
            let w = dk / factorial;
            for (o, p) in out.coeffs_mut().iter_mut().zip(power.coeffs()) {
                *o += w * p;
            }
        }
        out
    }

    pub fn exp(&self) -> Self {
        let e = self.c[0].exp();
        self.compose([e; 4])
    }

    pub fn sqrt(&self) -> Self {
        let a = self.c[0];
        let s = a.sqrt();
        self.compose([s, 0.5 / s, -0.25 / (s * a), 0.375 / (s * a * a)])
    }

    pub fn recip(&self) -> Self {
        let a = self.c[0];
        let r = 1.0 / a;
        self.compose([r, -r * r, 2.0 * r * r * r, -6.0 * r * r * r * r])
    }

    /// `ln(1 + c w) / c`, equal to `w` at `c = 0`.
    pub fn log1p_scaled(&self, c: f64) -> Self {
        let w = self.c[0];
        let d = 1.0 + c * w;
        let f0 = if c == 0.0 { w } else { (c * w).ln_1p() / c };
        self.compose([f0, 1.0 / d, -c / (d * d), 2.0 * c * c / (d * d * d)])
    }

    /// Evaluates the truncated polynomial at displacement `ds` from the base.
    pub fn eval(&self, ds: [f64; 3]) -> f64 {
        let mut m = [0.0; MAX_TERMS];
        self.set.eval(&ds, &mut m[..self.set.len()]);
        self.coeffs().iter().zip(&m).map(|(a, b)| a * b).sum()
    }
}

impl<'a> Add for Jet<'a> {
    type Output = Jet<'a>;
    fn add(mut self, rhs: Jet<'a>) -> Jet<'a> {
        for (a, b) in self.c.iter_mut().zip(rhs.c.iter()) {
            *a += b;
        }
        self
    }
}

impl<'a> Sub for Jet<'a> {
    type Output = Jet<'a>;
    fn sub(mut self, rhs: Jet<'a>) -> Jet<'a> {
        for (a, b) in self.c.iter_mut().zip(rhs.c.iter()) {
            *a -= b;
        }
        self
    }
}

impl<'a> Neg for Jet<'a> {
    type Output = Jet<'a>;
    fn neg(self) -> Jet<'a> {
        self.scale(-1.0)
    }
}

impl<'a> Mul for Jet<'a> {
    type Output = Jet<'a>;
    fn mul(self, rhs: Jet<'a>) -> Jet<'a> {
        let mut c = [0.0; MAX_TERMS];
        for &(i, j, k) in self.set.products() {
            c[k as usize] += self.c[i as usize] * rhs.c[j as usize];
        }
        Jet { set: self.set, c }
    }
}

impl<'a> Add<f64> for Jet<'a> {
    type Output = Jet<'a>;
    fn add(mut self, rhs: f64) -> Jet<'a> {
        self.c[0] += rhs;
        self
    }
}

impl<'a> Sub<f64> for Jet<'a> {
    type Output = Jet<'a>;
    fn sub(mut self, rhs: f64) -> Jet<'a> {
        self.c[0] -= rhs;
        self
    }
}

impl<'a> Mul<f64> for Jet<'a> {
    type Output = Jet<'a>;
    fn mul(self, rhs: f64) -> Jet<'a> {
        self.scale(rhs)
    }
}

impl<'a> Add<Jet<'a>> for f64 {
    type Output = Jet<'a>;
    fn add(self, rhs: Jet<'a>) -> Jet<'a> {
        rhs + self
    }
}

impl<'a> Sub<Jet<'a>> for f64 {
    type Output = Jet<'a>;
    fn sub(self, rhs: Jet<'a>) -> Jet<'a> {
        -rhs + self
    }
}

impl<'a> Mul<Jet<'a>> for f64 {
    type Output = Jet<'a>;
    fn mul(self, rhs: Jet<'a>) -> Jet<'a> {
        rhs.scale(self)
    }
}

impl<'a> std::ops::Div for Jet<'a> {
    type Output = Jet<'a>;
    fn div(self, rhs: Jet<'a>) -> Jet<'a> {
        self * rhs.recip()
    }
}
