//! Partitioning of the cross-sectional path cloud into bundles.
//!
//! Two methods: recursive bifurcation at per-dimension means on rotated
//! (decorrelated) data, and equal-number quantile splitting in a priority
//! order of the state variables. Either method yields a [`BundleRule`] that
//! classifies any other sample without refitting.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelFamily, StateVar};

/// Marker id of a path that is not bundled.
pub const INACTIVE: u32 = u32::MAX;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum BundleMethod {
    /// `levels` rounds of splitting each dimension at its mean, after rotation.
    Bifurcation { levels: usize },
    /// Nested quantile splits in the family's priority order.
    EqualNumber { splits: Vec<usize> },
}

impl BundleMethod {
    pub fn n_bundles(&self, n_dims: usize) -> usize {
        match self {
            BundleMethod::Bifurcation { levels } => (1usize << n_dims).pow(*levels as u32),
            BundleMethod::EqualNumber { splits } => splits.iter().product(),
        }
    }

    /// Method producing `j` bundles for an `n_dims` cloud, if `j` is a power
    /// of `2^n_dims`.
    pub fn bifurcation_for(j: usize, n_dims: usize) -> Result<Self> {
        let base = 1usize << n_dims;
        let mut levels = 0;
        let mut k = 1;
        while k < j {
            k *= base;
            levels += 1;
        }
        if k != j {
            return Err(crate::error::invalid("bundles", format!("{j} is not a power of {base}")));
        }
        Ok(BundleMethod::Bifurcation { levels })
    }

    pub fn validate(&self, n_dims: usize) -> Result<()> {
        match self {
            BundleMethod::Bifurcation { .. } => Ok(()),
            BundleMethod::EqualNumber { splits } => {
                if splits.is_empty() || splits.len() > n_dims || splits.contains(&0) {
                    return Err(crate::error::invalid(
                        "splits",
                        format!("need 1..={n_dims} positive split counts, got {splits:?}"),
                    ));
                }
                Ok(())
            }
        }
    }
}

/// State variables in the order used for equal-number ranking: log-spot
/// first, then rate, then variance.
pub fn priority_order(family: ModelFamily) -> Vec<StateVar> {
    let vars = family.state_vars();
    [StateVar::LogSpot, StateVar::Rate, StateVar::Variance]
        .into_iter()
        .filter(|v| vars.contains(v))
        .collect()
}

/// Bundle id per path at one date.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BundleAssignment {
    ids: Vec<u32>,
    n_bundles: usize,
    radices: Vec<usize>,
}

impl BundleAssignment {
    /// Everything in one bundle.
    pub fn single(active: &[bool]) -> Self {
        BundleAssignment {
            ids: active.iter().map(|&a| if a { 0 } else { INACTIVE }).collect(),
            n_bundles: 1,
            radices: Vec::new(),
        }
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn n_bundles(&self) -> usize {
        self.n_bundles
    }

    /// Branching factor of each refinement level, coarsest first.
    pub fn radices(&self) -> &[usize] {
        &self.radices
    }

    pub fn bundle_of(&self, path: usize) -> Option<usize> {
        match self.ids[path] {
            INACTIVE => None,
            id => Some(id as usize),
        }
    }

    /// Id of the group `up` levels above bundle `id`.
    pub fn ancestor(&self, id: usize, up: usize) -> usize {
        let up = up.min(self.radices.len());
        let div: usize = self.radices[self.radices.len() - up..].iter().product();
        id / div
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.n_bundles];
        for &id in &self.ids {
            if id != INACTIVE {
                s[id as usize] += 1;
            }
        }
        s
    }

    pub fn empty_bundles(&self) -> usize {
        self.sizes().iter().filter(|&&s| s == 0).count()
    }

    /// Paths of each bundle in ascending path order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_bundles];
        for (i, &id) in self.ids.iter().enumerate() {
            if id != INACTIVE {
                out[id as usize].push(i);
            }
        }
        out
    }

    /// Rows `path,date,bundle`; inactive paths are skipped.
    pub fn write_csv<W: Write>(&self, mut w: W, date: f64, header: bool) -> std::io::Result<()> {
        if header {
            writeln!(w, "path,date,bundle")?;
        }
        for (i, &id) in self.ids.iter().enumerate() {
            if id != INACTIVE {
                writeln!(w, "{i},{date},{id}")?;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
enum Levels {
    /// Per level, per parent node: split point of each rotated dimension.
    Means(Vec<Vec<[f64; 3]>>),
    /// Per level, per parent group: lower `(value, rank key)` of groups 1..J.
    Quantiles(Vec<Vec<Vec<(f64, f64)>>>),
}

/// Persisted classification rule of one date.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleRule {
    n_dims: usize,
    rotation: [[f64; 3]; 3],
    radices: Vec<usize>,
    /// Size of the sample the rule was built on; rank keys of other samples
    /// are rescaled to it.
    reference_paths: usize,
    levels: Levels,
}

/// Sample slope `cov(a, b) / var(a)` over the active paths; `None` if `a`
/// has no spread.
fn slope(a: &[f64], b: &[f64], active: &[usize]) -> Option<f64> {
    let n = active.len() as f64;
    if active.len() < 2 {
        return None;
    }
    let ma = active.iter().map(|&i| a[i]).sum::<f64>() / n;
    let mb = active.iter().map(|&i| b[i]).sum::<f64>() / n;
    let (mut sab, mut saa) = (0.0, 0.0);
    for &i in active {
        let da = a[i] - ma;
        sab += da * (b[i] - mb);
        saa += da * da;
    }
    (saa > 0.0).then(|| sab / saa)
}

/// `(cos, sin)` of the rotation angle for slope `k`, with `sign(0) = +1`.
fn angle(k: f64) -> (f64, f64) {
    let h = (1.0 + k * k).sqrt();
    let sign = if k < 0.0 { -1.0 } else { 1.0 };
    (sign / h, k.abs() / h)
}

fn identity() -> [[f64; 3]; 3] {
    [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
}

/// Rotation matrix decorrelating `cols[1..]` from `cols[0]`; identity if the
/// first column has no spread or there is a single column.
pub fn rotation(cols: &[&[f64]], active: &[usize]) -> [[f64; 3]; 3] {
    match cols.len() {
        2 => match slope(cols[0], cols[1], active) {
            Some(k) => {
                let (c, s) = angle(k);
                [[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]]
            }
            None => identity(),
        },
        3 => match (slope(cols[0], cols[1], active), slope(cols[0], cols[2], active)) {
            (Some(k1), Some(k2)) => {
                let (c1, s1) = angle(k1);
                let (c2, s2) = angle(k2);
                [[c1 * s2, s1, -c1 * c2], [-s1 * s2, c1, s1 * c2], [c2, 0.0, s2]]
            }
            _ => identity(),
        },
        _ => identity(),
    }
}

/// Applies a rotation to the columns, returning the rotated columns.
pub fn rotate(cols: &[&[f64]], rot: &[[f64; 3]; 3]) -> Vec<Vec<f64>> {
    let n = cols.len();
    let len = cols.first().map_or(0, |c| c.len());
    (0..n)
        .map(|r| (0..len).map(|i| (0..n).map(|c| rot[r][c] * cols[c][i]).sum()).collect())
        .collect()
}

fn check_columns(cols: &[&[f64]], active: Option<&[bool]>) -> Result<usize> {
    if cols.is_empty() || cols.len() > 3 {
        return Err(crate::error::invalid("columns", format!("{} columns", cols.len())));
    }
    let n = cols[0].len();
    for c in cols {
        if c.len() != n {
            return Err(Error::LengthMismatch { expected: n, got: c.len() });
        }
    }
    if let Some(a) = active {
        if a.len() != n {
            return Err(Error::LengthMismatch { expected: n, got: a.len() });
        }
    }
    Ok(n)
}

fn active_indices(n: usize, active: Option<&[bool]>) -> Vec<usize> {
    match active {
        Some(a) => (0..n).filter(|&i| a[i]).collect(),
        None => (0..n).collect(),
    }
}

/// Mask of paths still alive: not knocked out before date `m` and not
/// exercised before `m`.
pub fn active_filter(knocked_out_at: Option<&[usize]>, exercised_at: Option<&[usize]>, m: usize, n: usize) -> Vec<bool> {
    (0..n)
        .map(|i| {
            knocked_out_at.is_none_or(|k| k[i] > m) && exercised_at.is_none_or(|e| e[i] >= m)
        })
        .collect()
}

/// Recursive bifurcation with rotation over the `(x, v[, r])` columns.
pub fn recursive_bifurcation(
    cols: &[&[f64]],
    levels: usize,
    active: Option<&[bool]>,
) -> Result<(BundleAssignment, BundleRule)> {
    let n = check_columns(cols, active)?;
    let dims = cols.len();
    let act = active_indices(n, active);
    let rot = rotation(cols, &act);
    let q = rotate(cols, &rot);
    let base = 1usize << dims;

    let mut node = vec![0usize; n];
    let mut means_all = Vec::with_capacity(levels);
    for level in 0..levels {
        let nodes = base.pow(level as u32);
        let mut sums = vec![[0.0f64; 3]; nodes];
        let mut lo = vec![[f64::INFINITY; 3]; nodes];
        let mut hi = vec![[f64::NEG_INFINITY; 3]; nodes];
        let mut counts = vec![0usize; nodes];
        for &i in &act {
            let k = node[i];
            counts[k] += 1;
            for d in 0..dims {
                sums[k][d] += q[d][i];
                lo[k][d] = lo[k][d].min(q[d][i]);
                hi[k][d] = hi[k][d].max(q[d][i]);
            }
        }
        // clamped so that rounding cannot split a constant column
        let means: Vec<[f64; 3]> = (0..nodes)
            .map(|k| {
                let mut m = [f64::NAN; 3];
                if counts[k] > 0 {
                    for d in 0..dims {
                        m[d] = (sums[k][d] / counts[k] as f64).clamp(lo[k][d], hi[k][d]);
                    }
                }
                m
            })
            .collect();
        for &i in &act {
            let mu = &means[node[i]];
            let mut code = 0;
            for d in 0..dims {
                if q[d][i] > mu[d] {
                    code |= 1 << d;
                }
            }
            node[i] = node[i] * base + code;
        }
        means_all.push(means);
    }

    let mut ids = vec![INACTIVE; n];
    for &i in &act {
        ids[i] = node[i] as u32;
    }
    let radices = vec![base; levels];
    let assignment = BundleAssignment { ids, n_bundles: base.pow(levels as u32), radices: radices.clone() };
    let rule = BundleRule { n_dims: dims, rotation: rot, radices, reference_paths: n, levels: Levels::Means(means_all) };
    Ok((assignment, rule))
}

/// Nested equal-number splitting; `cols` are in priority order and
/// `splits[l]` groups are cut along `cols[l]`.
pub fn equal_number(
    cols: &[&[f64]],
    splits: &[usize],
    active: Option<&[bool]>,
) -> Result<(BundleAssignment, BundleRule)> {
    let n = check_columns(cols, active)?;
    if splits.is_empty() || splits.len() > cols.len() || splits.contains(&0) {
        return Err(crate::error::invalid("splits", format!("{splits:?} for {} columns", cols.len())));
    }
    let act = active_indices(n, active);
    let product: usize = splits.iter().product();
    if product > act.len() {
        return Err(Error::TooManySplits { product, active: act.len() });
    }

    // groups of path indices at the current level, in group-id order
    let mut groups: Vec<Vec<usize>> = vec![act];
    let mut bounds_all = Vec::with_capacity(splits.len());
    for (level, &j) in splits.iter().enumerate() {
        let col = cols[level];
        let mut next = Vec::with_capacity(groups.len() * j);
        let mut bounds = Vec::with_capacity(groups.len());
        for mut g in groups {
            g.sort_by(|&a, &b| col[a].total_cmp(&col[b]).then(a.cmp(&b)));
            let len = g.len();
            let (q, r) = (len / j, len % j);
            let start = |k: usize| k * q + k.min(r);
            let mut b = Vec::with_capacity(j.saturating_sub(1));
            for k in 0..j {
                let s = start(k);
                if k > 0 {
                    b.push((col[g[s]], g[s] as f64));
                }
                next.push(g[s..start(k + 1)].to_vec());
            }
            bounds.push(b);
        }
        bounds_all.push(bounds);
        groups = next;
    }

    let mut ids = vec![INACTIVE; n];
    for (id, g) in groups.iter().enumerate() {
        for &i in g {
            ids[i] = id as u32;
        }
    }
    let assignment = BundleAssignment { ids, n_bundles: product, radices: splits.to_vec() };
    let rule = BundleRule {
        n_dims: cols.len(),
        rotation: identity(),
        radices: splits.to_vec(),
        reference_paths: n,
        levels: Levels::Quantiles(bounds_all),
    };
    Ok((assignment, rule))
}

/// Builds bundles with `method`. Columns are `(x, v[, r])` for bifurcation
/// and in priority order for equal-number splitting.
pub fn build(
    method: &BundleMethod,
    cols: &[&[f64]],
    active: Option<&[bool]>,
) -> Result<(BundleAssignment, BundleRule)> {
    match method {
        BundleMethod::Bifurcation { levels } => recursive_bifurcation(cols, *levels, active),
        BundleMethod::EqualNumber { splits } => equal_number(cols, splits, active),
    }
}

impl BundleRule {
    pub fn n_bundles(&self) -> usize {
        self.radices.iter().product()
    }

    pub fn radices(&self) -> &[usize] {
        &self.radices
    }

    pub fn rotation(&self) -> &[[f64; 3]; 3] {
        &self.rotation
    }

    /// Bundle of a single point given by its columns' values and rank key.
    fn locate(&self, p: &[f64; 3], key: f64) -> u32 {
        let dims = self.n_dims;
        match &self.levels {
            Levels::Means(levels) => {
                let mut q = [0.0; 3];
                for (r, qr) in q.iter_mut().enumerate().take(dims) {
                    *qr = (0..dims).map(|c| self.rotation[r][c] * p[c]).sum();
                }
                let base = 1usize << dims;
                let mut node = 0usize;
                for means in levels {
                    let mu = &means[node];
                    let mut code = 0;
                    for d in 0..dims {
                        if q[d] > mu[d] {
                            code |= 1 << d;
                        }
                    }
                    node = node * base + code;
                }
                node as u32
            }
            Levels::Quantiles(levels) => {
                let mut group = 0usize;
                for (l, bounds) in levels.iter().enumerate() {
                    let b = &bounds[group];
                    let v = p[l];
                    let k = b.partition_point(|&(bv, bk)| bv < v || (bv == v && bk <= key));
                    group = group * self.radices[l] + k;
                }
                group as u32
            }
        }
    }

    /// Assigns another sample with the stored thresholds. Values beyond the
    /// extremes fall into the outermost bundles.
    pub fn classify(&self, cols: &[&[f64]], active: Option<&[bool]>) -> Result<BundleAssignment> {
        let n = check_columns(cols, active)?;
        if cols.len() != self.n_dims {
            return Err(Error::LengthMismatch { expected: self.n_dims, got: cols.len() });
        }
        let scale = self.reference_paths as f64 / n as f64;
        let ids = (0..n)
            .map(|i| {
                if active.is_some_and(|a| !a[i]) {
                    return INACTIVE;
                }
                let mut p = [0.0; 3];
                for (d, c) in cols.iter().enumerate() {
                    p[d] = c[i];
                }
                let key = if scale == 1.0 { i as f64 } else { i as f64 * scale };
                self.locate(&p, key)
            })
            .collect();
        Ok(BundleAssignment { ids, n_bundles: self.n_bundles(), radices: self.radices.clone() })
    }
}
