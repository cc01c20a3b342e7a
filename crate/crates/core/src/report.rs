//! Exposure profiles, their CSV form, and profile comparison.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "t,EE,EEstar,PFE,DeltaEE,GammaEE";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Direct,
    Path,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::Direct => "direct",
            Estimator::Path => "path",
        }
    }
}

/// Per-date exposure statistics. Greeks are absent when the basis order is
/// too low to provide them.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub t: Vec<f64>,
    pub ee: Vec<f64>,
    pub ee_star: Vec<f64>,
    pub pfe: Vec<f64>,
    pub delta: Option<Vec<f64>>,
    pub gamma: Option<Vec<f64>>,
}

fn cell(v: Option<&Vec<f64>>, m: usize) -> String {
    v.map(|c| c[m].to_string()).unwrap_or_default()
}

impl Profile {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// One header row, then `t,EE,EEstar,PFE,DeltaEE,GammaEE` per date in
    /// shortest round-trip decimal form; unavailable Greeks are empty.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        for m in 0..self.len() {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                self.t[m],
                self.ee[m],
                self.ee_star[m],
                self.pfe[m],
                cell(self.delta.as_ref(), m),
                cell(self.gamma.as_ref(), m)
            )?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii")
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().transpose()?.unwrap_or_default();
        if header.trim() != CSV_HEADER {
            return Err(Error::Config(format!("unexpected CSV header `{}`", header.trim())));
        }
        let mut p = Profile { delta: Some(Vec::new()), gamma: Some(Vec::new()), ..Default::default() };
        let mut has_delta = true;
        let mut has_gamma = true;
        for (row, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(Error::Config(format!("row {}: expected 6 fields, got {}", row + 2, f.len())));
            }
            let num = |s: &str| -> Result<f64> {
                s.trim().parse().map_err(|_| Error::Config(format!("row {}: bad number `{s}`", row + 2)))
            };
            p.t.push(num(f[0])?);
            p.ee.push(num(f[1])?);
            p.ee_star.push(num(f[2])?);
            p.pfe.push(num(f[3])?);
            if f[4].trim().is_empty() {
                has_delta = false;
            } else if let Some(d) = p.delta.as_mut() {
                d.push(num(f[4])?);
            }
            if f[5].trim().is_empty() {
                has_gamma = false;
            } else if let Some(g) = p.gamma.as_mut() {
                g.push(num(f[5])?);
            }
        }
        if !has_delta {
            p.delta = None;
        }
        if !has_gamma {
            p.gamma = None;
        }
        Ok(p)
    }
}

/// `sqrt(sum (a - b)^2 / sum a^2)`, zero when both are identically zero.
pub fn relative_l2(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::GridMismatch);
    }
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = a.iter().map(|x| x * x).sum();
    Ok(if num == 0.0 { 0.0 } else { (num / den).sqrt() })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub ee: f64,
    pub pfe: f64,
    pub delta: Option<f64>,
    pub gamma: Option<f64>,
}

/// Relative L2 distance of `b` from the reference `a`, per quantity.
pub fn compare(a: &Profile, b: &Profile) -> Result<Comparison> {
    if a.t.len() != b.t.len() || a.t.iter().zip(&b.t).any(|(x, y)| (x - y).abs() > 1e-12 * (1.0 + x.abs())) {
        return Err(Error::GridMismatch);
    }
    let opt = |x: &Option<Vec<f64>>, y: &Option<Vec<f64>>| match (x, y) {
        (Some(x), Some(y)) => relative_l2(x, y).map(Some),
        _ => Ok(None),
    };
    Ok(Comparison {
        ee: relative_l2(&a.ee, &b.ee)?,
        pfe: relative_l2(&a.pfe, &b.pfe)?,
        delta: opt(&a.delta, &b.delta)?,
        gamma: opt(&a.gamma, &b.gamma)?,
    })
}

/// One estimator's results for one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExposureReport {
    pub estimator: Estimator,
    pub seed: u64,
    pub n_paths: usize,
    pub profile: Profile,
    pub v0: f64,
    /// Standard error of the Monte Carlo average behind `v0`.
    pub v0_std_err: f64,
    pub cva: f64,
}

impl ExposureReport {
    pub fn delta0(&self) -> Option<f64> {
        self.profile.delta.as_ref().map(|d| d[0])
    }

    pub fn gamma0(&self) -> Option<f64> {
        self.profile.gamma.as_ref().map(|g| g[0])
    }
}
