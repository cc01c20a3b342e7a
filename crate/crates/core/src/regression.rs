//! Monomial bases and per-bundle least squares.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundling::BundleAssignment;
use crate::error::{Error, Result};
use crate::monomial::MonomialSet;

/// Relative singular-value cutoff of the least-squares solve.
pub const RANK_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct BasisSpec {
    set: MonomialSet,
}

/// Graded monomials of total degree <= `p` in `n` variables.
pub fn enumerate_basis(n: usize, p: usize) -> Result<BasisSpec> {
    let cap = if n == 3 { 2 } else { 3 };
    if !(1..=3).contains(&n) || p > cap {
        return Err(Error::UnsupportedBasis { n, p });
    }
    Ok(BasisSpec { set: MonomialSet::new(n, p) })
}

impl BasisSpec {
    pub fn n(&self) -> usize {
        self.set.n_vars()
    }

    pub fn p(&self) -> usize {
        self.set.degree()
    }

    /// Number of basis functions `H`.
    pub fn len(&self) -> usize {
        self.set.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn exponents(&self) -> &[[u8; 3]] {
        self.set.exponents()
    }

    pub fn set(&self) -> &MonomialSet {
        &self.set
    }

    /// Fewest observations a bundle needs for its own fit.
    pub fn min_occupancy(&self) -> usize {
        (2 * self.len()).max(10)
    }

    /// Human-readable names such as `x*v^2`.
    pub fn names(&self, vars: &[&str]) -> Vec<String> {
        self.exponents()
            .iter()
            .map(|e| {
                let parts: Vec<String> = e
                    .iter()
                    .zip(vars)
                    .filter(|(&k, _)| k > 0)
                    .map(|(&k, v)| if k == 1 { v.to_string() } else { format!("{v}^{k}") })
                    .collect();
                if parts.is_empty() {
                    "1".to_string()
                } else {
                    parts.join("*")
                }
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fit {
    pub coeffs: Vec<f64>,
    pub rank: usize,
    /// Ratio of extreme singular values of the column-scaled design.
    pub condition: f64,
}

impl Fit {
    pub fn rank_deficient(&self, h: usize) -> bool {
        self.rank < h
    }
}

/// Factorized least-squares problem `min |A b - y|` for a fixed design.
///
/// Columns are scaled to unit norm, the scaled matrix is reduced by
/// Householder QR, and `R` is solved through its SVD with singular values
/// below `1e-12` of the largest dropped, giving the minimum-norm solution.
pub struct LeastSquares {
    h: usize,
    norms: Vec<f64>,
    qr: Option<nalgebra::linalg::QR<f64, nalgebra::Dyn, nalgebra::Dyn>>,
    svd: nalgebra::linalg::SVD<f64, nalgebra::Dyn, nalgebra::Dyn>,
    rank: usize,
    condition: f64,
    tol: f64,
    rows: usize,
}

impl LeastSquares {
    /// `design` is row-major with `h` columns.
    pub fn new(design: &[f64], h: usize) -> Result<Self> {
        if h == 0 || design.len() % h != 0 {
            return Err(Error::LengthMismatch { expected: h, got: design.len() });
        }
        let n = design.len() / h;
        let mut a = DMatrix::from_row_slice(n, h, design);
        let mut norms = vec![1.0; h];
        for (k, nk) in norms.iter_mut().enumerate() {
            let s = a.column(k).norm();
            if s > 0.0 {
                *nk = s;
                a.column_mut(k).scale_mut(1.0 / s);
            }
        }
        let (qr, r) = if n >= h {
            let qr = a.qr();
            let r = qr.r();
            (Some(qr), r)
        } else {
            (None, a)
        };
        let svd = r.svd(true, true);
        let smax = svd.singular_values.max();
        let tol = RANK_TOL * smax;
        let kept = svd.singular_values.iter().copied().filter(|&s| s > tol);
        let rank = kept.clone().count();
        let smin = kept.fold(f64::INFINITY, f64::min);
        let condition = if rank == 0 { f64::INFINITY } else { smax / smin };
        Ok(LeastSquares { h, norms, qr, svd, rank, condition, tol, rows: n })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn condition(&self) -> f64 {
        self.condition
    }

    pub fn solve(&self, targets: &[f64]) -> Result<Fit> {
        if targets.len() != self.rows {
            return Err(Error::LengthMismatch { expected: self.rows, got: targets.len() });
        }
        let h = self.h;
        let y = DVector::from_column_slice(targets);
        let rhs = match &self.qr {
            Some(qr) => {
                let mut qty = y;
                qr.q_tr_mul(&mut qty);
                qty.rows(0, h).into_owned()
            }
            None => y,
        };
        let gamma = if self.rank > 0 {
            self.svd.solve(&rhs, self.tol).map_err(|e| Error::OutOfRange(e.to_string()))?
        } else {
            DVector::zeros(h)
        };
        let coeffs = gamma.iter().zip(&self.norms).map(|(g, s)| g / s).collect();
        Ok(Fit { coeffs, rank: self.rank, condition: self.condition })
    }
}

/// Least squares `min |A b - y|` for a row-major design with `h` columns;
/// see [`LeastSquares`].
pub fn fit_bundle(targets: &[f64], design: &[f64], h: usize) -> Result<Fit> {
    let n = targets.len();
    if design.len() != n * h {
        return Err(Error::LengthMismatch { expected: n * h, got: design.len() });
    }
    if n == 0 {
        return Ok(Fit { coeffs: vec![0.0; h], rank: 0, condition: f64::INFINITY });
    }
    LeastSquares::new(design, h)?.solve(targets)
}

/// Coefficients of one bundle, in the variables `(X - center) / scale`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleFit {
    pub coeffs: Vec<f64>,
    pub center: [f64; 3],
    pub scale: [f64; 3],
    pub observations: usize,
    pub rank: usize,
    pub condition: f64,
    /// Levels climbed to reach a group with enough observations.
    pub fallback_levels: usize,
}

/// Per-bundle regression of next-date values `targets` on the basis of the
/// next-date states `states` (one column per basis variable), with bundles
/// taken from `assign`. Sparse bundles borrow the fit of the smallest
/// enclosing group that has enough observations.
pub fn fit_date(
    basis: &BasisSpec,
    assign: &BundleAssignment,
    states: &[&[f64]],
    targets: &[f64],
) -> Result<Vec<BundleFit>> {
    Ok(fit_date_multi(basis, assign, states, &[targets])?.pop().unwrap())
}

/// [`fit_date`] for several target vectors sharing bundles and design;
/// indexed `[target][bundle]`.
pub fn fit_date_multi(
    basis: &BasisSpec,
    assign: &BundleAssignment,
    states: &[&[f64]],
    targets: &[&[f64]],
) -> Result<Vec<Vec<BundleFit>>> {
    if states.len() != basis.n() {
        return Err(Error::LengthMismatch { expected: basis.n(), got: states.len() });
    }
    let min = basis.min_occupancy();
    let depth = assign.radices().len();
    let members = assign.members();
    let sizes: Vec<usize> = members.iter().map(Vec::len).collect();

    // group sizes by levels climbed
    let mut level_sizes = vec![sizes.clone()];
    for up in 1..=depth {
        let n_groups = assign.ancestor(assign.n_bundles() - 1, up) + 1;
        let mut s = vec![0usize; n_groups];
        for (id, &c) in sizes.iter().enumerate() {
            s[assign.ancestor(id, up)] += c;
        }
        level_sizes.push(s);
    }
    let source: Vec<(usize, usize)> = (0..assign.n_bundles())
        .map(|id| {
            let mut up = 0;
            while up < depth && level_sizes[up][assign.ancestor(id, up)] < min {
                up += 1;
            }
            (up, assign.ancestor(id, up))
        })
        .collect();
    let mut needed: Vec<(usize, usize)> = source.clone();
    needed.sort_unstable();
    needed.dedup();

    let fits: Vec<Vec<BundleFit>> = needed
        .par_iter()
        .map(|&(up, group)| {
            let idx: Vec<usize> = (0..assign.n_bundles())
                .filter(|&id| assign.ancestor(id, up) == group)
                .flat_map(|id| members[id].iter().copied())
                .collect();
            let mut fits = fit_group_multi(basis, states, targets, &idx)?;
            for f in &mut fits {
                f.fallback_levels = up;
            }
            Ok(fits)
        })
        .collect::<Result<_>>()?;

    Ok((0..targets.len())
        .map(|t| {
            source
                .iter()
                .map(|key| {
                    let k = needed.binary_search(key).expect("fitted group");
                    fits[k][t].clone()
                })
                .collect()
        })
        .collect())
}

/// Relative spread below which a state coordinate counts as constant.
pub const DEGENERATE_SPREAD: f64 = 1e-10;

/// Per-variable mean and standard deviation over `idx`; infinite scale for a
/// constant column.
pub fn standardization(states: &[&[f64]], idx: &[usize]) -> ([f64; 3], [f64; 3]) {
    let mut center = [0.0; 3];
    let mut scale = [1.0; 3];
    if !idx.is_empty() {
        let cnt = idx.len() as f64;
        for (d, col) in states.iter().enumerate() {
            let mean = idx.iter().map(|&i| col[i]).sum::<f64>() / cnt;
            let var = idx.iter().map(|&i| (col[i] - mean).powi(2)).sum::<f64>() / cnt;
            center[d] = mean;
            let sd = var.sqrt();
            // an infinite scale maps the coordinate to zero, dropping it
            scale[d] = if sd > DEGENERATE_SPREAD * mean.abs() { sd } else { f64::INFINITY };
        }
    }
    (center, scale)
}

/// Standardizes the states of `idx` and fits the basis on them.
pub fn fit_group(basis: &BasisSpec, states: &[&[f64]], targets: &[f64], idx: &[usize]) -> Result<BundleFit> {
    Ok(fit_group_multi(basis, states, &[targets], idx)?.pop().unwrap())
}

fn fit_group_multi(basis: &BasisSpec, states: &[&[f64]], targets: &[&[f64]], idx: &[usize]) -> Result<Vec<BundleFit>> {
    let n = basis.n();
    let h = basis.len();
    let (center, scale) = standardization(states, idx);
    let mut design = vec![0.0; idx.len() * h];
    let mut z = [0.0; 3];
    for (row, &i) in idx.iter().enumerate() {
        for d in 0..n {
            z[d] = (states[d][i] - center[d]) / scale[d];
        }
        basis.set().eval(&z[..n], &mut design[row * h..(row + 1) * h]);
    }
    let solver = if idx.is_empty() { None } else { Some(LeastSquares::new(&design, h)?) };
    targets
        .iter()
        .map(|t| {
            let fit = match &solver {
                Some(s) => {
                    let y: Vec<f64> = idx.iter().map(|&i| t[i]).collect();
                    s.solve(&y)?
                }
                None => Fit { coeffs: vec![0.0; h], rank: 0, condition: f64::INFINITY },
            };
            Ok(BundleFit {
                coeffs: fit.coeffs,
                center,
                scale,
                observations: idx.len(),
                rank: fit.rank,
                condition: fit.condition,
                fallback_levels: 0,
            })
        })
        .collect()
}

/// Pass-1 coefficients for every date `m = 0..M-1` and bundle.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CoefficientTable {
    pub dates: Vec<Vec<BundleFit>>,
}

impl CoefficientTable {
    pub fn new(n_steps: usize) -> Self {
        CoefficientTable { dates: vec![Vec::new(); n_steps] }
    }

    pub fn get(&self, m: usize, bundle: usize) -> Option<&BundleFit> {
        self.dates.get(m)?.get(bundle)
    }

    /// Rows `date,bundle,k,beta,observations,rank,condition,fallback`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "date,bundle,k,beta,observations,rank,condition,fallback")?;
        for (m, fits) in self.dates.iter().enumerate() {
            for (j, f) in fits.iter().enumerate() {
                for (k, b) in f.coeffs.iter().enumerate() {
                    writeln!(
                        w,
                        "{m},{j},{k},{b},{},{},{},{}",
                        f.observations, f.rank, f.condition, f.fallback_levels
                    )?;
                }
            }
        }
        Ok(())
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else if n == 1 { z } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pm) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

fn legendre(k: usize, x: f64) -> f64 {
    let (mut p0, mut p1) = (1.0, x);
    if k == 0 {
        return 1.0;
    }
    for j in 2..=k {
        let p2 = ((2 * j - 1) as f64 * x * p1 - (j - 1) as f64 * p0) / j as f64;
        p0 = p1;
        p1 = p2;
    }
    p1
}

/// L2 norm of `f` minus its projection onto piecewise polynomials of degree
/// `p` over `j` equal subintervals of `[a, b]`.
pub fn projection_error<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, p: usize, j: usize) -> f64 {
    let (nodes, weights) = gauss_legendre(p + 24);
    let h = (b - a) / j as f64;
    let mut err2 = 0.0;
    for s in 0..j {
        let lo = a + s as f64 * h;
        let vals: Vec<f64> = nodes.iter().map(|&t| f(lo + 0.5 * h * (t + 1.0))).collect();
        let coef: Vec<f64> = (0..=p)
            .map(|k| {
                let m: f64 = nodes.iter().zip(&weights).zip(&vals).map(|((&t, &w), &v)| w * v * legendre(k, t)).sum();
                m * (2 * k + 1) as f64 / 2.0
            })
            .collect();
        for ((&t, &w), &v) in nodes.iter().zip(&weights).zip(&vals) {
            let proj: f64 = coef.iter().enumerate().map(|(k, c)| c * legendre(k, t)).sum();
            err2 += 0.5 * h * w * (v - proj).powi(2);
        }
    }
    err2.sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionProbe {
    pub p: usize,
    pub bundles: Vec<usize>,
    pub errors: Vec<f64>,
}

impl ProjectionProbe {
    /// Least-squares slope of `log error` against `log J`.
    pub fn slope(&self) -> f64 {
        let xs: Vec<f64> = self.bundles.iter().map(|&j| (j as f64).ln()).collect();
        let ys: Vec<f64> = self.errors.iter().map(|e| e.ln()).collect();
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        sxy / sxx
    }
}

/// Projection errors for every `J` in `bundles`.
pub fn projection_error_probe<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, p: usize, bundles: &[usize]) -> ProjectionProbe {
    let errors = bundles.iter().map(|&j| projection_error(&f, a, b, p, j)).collect();
    ProjectionProbe { p, bundles: bundles.to_vec(), errors }
}
