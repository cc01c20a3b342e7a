//! Graded monomial sets in up to three variables.
//!
//! One enumeration is shared by the regression basis and by the truncated
//! power series used for moment generation, so index `k` refers to the same
//! exponent vector in both places.

pub const MAX_DEGREE: usize = 3;
/// Number of monomials of degree <= 3 in three variables.
pub const MAX_TERMS: usize = 20;

const SIDE: usize = MAX_DEGREE + 1;

#[derive(Clone, Debug, PartialEq)]
pub struct MonomialSet {
    n: usize,
    degree: usize,
    exps: Vec<[u8; 3]>,
    lookup: [u8; SIDE * SIDE * SIDE],
    /// `(i, j, k)` with `exps[i] + exps[j] == exps[k]`, total degree <= `degree`.
    products: Vec<(u8, u8, u8)>,
}

const NONE: u8 = u8::MAX;

impl MonomialSet {
    /// All monomials of total degree <= `degree` in `n` variables, graded,
    /// and within a degree ordered by descending power of the first variable.
    ///
    /// Exponents are stored as `[e0, e1, e2]` with unused variables set to 0.
    pub fn new(n: usize, degree: usize) -> Self {
        assert!((1..=3).contains(&n) && degree <= MAX_DEGREE);
        let mut exps = Vec::new();
        for d in 0..=degree {
            let mut level = Vec::new();
            for a in (0..=d).rev() {
                for b in (0..=d - a).rev() {
                    let c = d - a - b;
                    let e = [a as u8, b as u8, c as u8];
                    if e[n..].iter().all(|&x| x == 0) {
                        level.push(e);
                    }
                }
            }
            exps.extend(level);
        }
        let mut lookup = [NONE; SIDE * SIDE * SIDE];
        for (k, e) in exps.iter().enumerate() {
            lookup[Self::slot(*e)] = k as u8;
        }
        let mut products = Vec::new();
        for (i, a) in exps.iter().enumerate() {
            for (j, b) in exps.iter().enumerate() {
                let s = [a[0] + b[0], a[1] + b[1], a[2] + b[2]];
                if (s[0] + s[1] + s[2]) as usize <= degree {
                    products.push((i as u8, j as u8, lookup[Self::slot(s)]));
                }
            }
        }
        MonomialSet { n, degree, exps, lookup, products }
    }

    fn slot(e: [u8; 3]) -> usize {
        (e[0] as usize * SIDE + e[1] as usize) * SIDE + e[2] as usize
    }

    pub fn n_vars(&self) -> usize {
        self.n
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.exps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exps.is_empty()
    }

    pub fn exponents(&self) -> &[[u8; 3]] {
        &self.exps
    }

    pub fn index(&self, e: [u8; 3]) -> Option<usize> {
        if e.iter().any(|&x| x as usize > MAX_DEGREE) {
            return None;
        }
        match self.lookup[Self::slot(e)] {
            NONE => None,
            k => Some(k as usize),
        }
    }

    /// Index of the monomial with the exponent of variable `var` lowered by one.
    pub fn lowered(&self, k: usize, var: usize) -> Option<usize> {
        let mut e = self.exps[k];
        if e[var] == 0 {
            return None;
        }
        e[var] -= 1;
        self.index(e)
    }

    pub(crate) fn products(&self) -> &[(u8, u8, u8)] {
        &self.products
    }

    /// Evaluates every monomial at `z` into `out`.
    pub fn eval(&self, z: &[f64], out: &mut [f64]) {
        let mut pw = [[1.0; SIDE]; 3];
        for (d, row) in pw.iter_mut().enumerate().take(self.n) {
            for k in 1..=self.degree {
                row[k] = row[k - 1] * z[d];
            }
        }
        for (o, e) in out.iter_mut().zip(&self.exps) {
            *o = pw[0][e[0] as usize] * pw[1][e[1] as usize] * pw[2][e[2] as usize];
        }
    }
}

/// `(n + p)! / (n! p!)`.
pub fn basis_count(n: usize, p: usize) -> usize {
    (1..=n).fold(1usize, |acc, i| acc * (p + i) / i)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_match_binomial() {
        for n in 1..=3 {
            for p in 0..=3 {
                assert_eq!(MonomialSet::new(n, p).len(), basis_count(n, p), "n={n} p={p}");
            }
        }
        assert_eq!(basis_count(3, 3), MAX_TERMS);
    }

    #[test]
    fn two_dim_order() {
        let s = MonomialSet::new(2, 2);
        assert_eq!(
            s.exponents(),
            &[[0, 0, 0], [1, 0, 0], [0, 1, 0], [2, 0, 0], [1, 1, 0], [0, 2, 0]]
        );
    }

    #[test]
    fn lookup_and_lowering() {
        let s = MonomialSet::new(3, 2);
        for (k, e) in s.exponents().iter().enumerate() {
            assert_eq!(s.index(*e), Some(k));
        }
        assert_eq!(s.index([3, 0, 0]), None);
        let k = s.index([1, 0, 1]).unwrap();
        assert_eq!(s.lowered(k, 0), s.index([0, 0, 1]));
        assert_eq!(s.lowered(k, 1), None);
    }

    #[test]
    fn products_close() {
        let s = MonomialSet::new(2, 3);
        for &(i, j, k) in s.products() {
            let (a, b, c) = (s.exponents()[i as usize], s.exponents()[j as usize], s.exponents()[k as usize]);
            assert_eq!([a[0] + b[0], a[1] + b[1], a[2] + b[2]], c);
        }
    }

    #[test]
    fn eval_monomials() {
        let s = MonomialSet::new(2, 2);
        let mut out = [0.0; 6];
        s.eval(&[2.0, 3.0], &mut out);
        assert_eq!(out, [1.0, 2.0, 3.0, 4.0, 6.0, 9.0]);
    }
}
