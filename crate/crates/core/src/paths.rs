//! Forward simulation of `(x, v, r)` on the substep grid.
//!
//! Variance uses the quadratic-exponential scheme (switch at `psi = 1.5`),
//! the log-spot the trapezoidal exact-integral update without martingale
//! correction, and the short rate its exact Gaussian transition. Discount
//! factors accumulate left-point rates.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{BarrierMonitoring, ModelFamily, ModelSpec, StateVar, TimeGrid};
use crate::rng::RngStream;

const PSI_CRIT: f64 = 1.5;
const DEGENERATE_GAMMA: f64 = 1e-12;
const CHUNK: usize = 2048;

#[derive(Clone, Copy, Debug, Default)]
pub struct SimOptions {
    /// Record the minimum of `x` over the substeps of every interval.
    pub track_minimum: bool,
}

/// Realized states on the monitoring dates, stored date-major
/// (`values[m * n_paths + i]`).
#[derive(Clone, Debug, PartialEq)]
pub struct PathGrid {
    family: ModelFamily,
    n_paths: usize,
    dates: Vec<f64>,
    seed: u64,
    x: Vec<f64>,
    v: Option<Vec<f64>>,
    r: Option<Vec<f64>>,
    disc: Vec<f64>,
    min_x: Option<Vec<f64>>,
    const_v: f64,
    const_r: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleMoment {
    pub mean: f64,
    pub std_err: f64,
}

struct Stepper {
    family: ModelFamily,
    dt: f64,
    // variance
    kappa: f64,
    vbar: f64,
    gamma: f64,
    ek: f64,
    s2_v: f64,
    s2_c: f64,
    // rate
    theta: f64,
    er: f64,
    rate_sd: f64,
    r0: f64,
    // asset
    rho_xv: f64,
    rho_xr: f64,
    perp: f64,
    sigma2: f64,
}

impl Stepper {
    fn new(model: &ModelSpec, dt: f64) -> Self {
        let ek = (-model.kappa * dt).exp();
        let g2 = model.gamma * model.gamma;
        let (s2_v, s2_c) = if model.kappa > 0.0 {
            (
                g2 * ek * (1.0 - ek) / model.kappa,
                model.vbar * g2 * (1.0 - ek).powi(2) / (2.0 * model.kappa),
            )
        } else {
            (0.0, 0.0)
        };
        let lambda = model.lambda;
        let rate_var = if lambda > 0.0 { -(-2.0 * lambda * dt).exp_m1() / (2.0 * lambda) } else { dt };
        let rho_xv = if model.family.stochastic_variance() { model.rho_xv } else { 0.0 };
        let rho_xr = if model.family.stochastic_rate() { model.rho_xr } else { 0.0 };
        let degenerate = !model.family.stochastic_variance() || model.gamma <= DEGENERATE_GAMMA;
        let perp = if degenerate {
            (1.0 - rho_xr * rho_xr).max(0.0).sqrt()
        } else {
            (1.0 - rho_xv * rho_xv - rho_xr * rho_xr).max(0.0).sqrt()
        };
        Stepper {
            family: model.family,
            dt,
            kappa: model.kappa,
            vbar: model.vbar,
            gamma: model.gamma,
            ek,
            s2_v,
            s2_c,
            theta: model.theta,
            er: (-lambda * dt).exp(),
            rate_sd: model.eta * rate_var.sqrt(),
            r0: model.r0,
            rho_xv,
            rho_xr,
            perp,
            sigma2: model.sigma * model.sigma,
        }
    }

    fn variance(&self, v: f64, u: f64, z: f64) -> f64 {
        let m = self.vbar + (v - self.vbar) * self.ek;
        if self.gamma <= DEGENERATE_GAMMA || m <= 0.0 {
            return m.max(0.0);
        }
        let s2 = v * self.s2_v + self.s2_c;
        let psi = s2 / (m * m);
        if psi <= PSI_CRIT {
            let inv = 2.0 / psi;
            let b2 = inv - 1.0 + inv.sqrt() * (inv - 1.0).sqrt();
            let a = m / (1.0 + b2);
            let y = b2.sqrt() + z;
            a * y * y
        } else {
            let p = (psi - 1.0) / (psi + 1.0);
            let beta = (1.0 - p) / m;
            if u <= p {
                0.0
            } else {
                ((1.0 - p) / (1.0 - u)).ln() / beta
            }
        }
    }

    /// One substep; returns the new `(x, v, r)` and the left-point `r dt`.
    fn step(&self, state: [f64; 3], rng: &mut RngStream) -> ([f64; 3], f64) {
        let [x, v, r] = state;
        let u = rng.uniform();
        let zx = rng.normal();
        let zr = rng.normal();
        let dt = self.dt;

        let (r_new, r_int) = if self.family.stochastic_rate() {
            let r_new = self.theta + (r - self.theta) * self.er + self.rate_sd * zr;
            (r_new, 0.5 * (r + r_new) * dt)
        } else {
            (self.r0, self.r0 * dt)
        };

        let (v_new, x_new) = if self.family.stochastic_variance() {
            let zv = zx_for_variance(u);
            let v_new = self.variance(v, u, zv);
            let v_avg = 0.5 * (v + v_new);
            let mut dx = r_int - 0.5 * v_avg * dt;
            if self.gamma > DEGENERATE_GAMMA {
                dx += self.rho_xv / self.gamma
                    * (v_new - v - self.kappa * self.vbar * dt + self.kappa * v_avg * dt);
            }
            dx += (v_avg * dt).sqrt() * (self.rho_xr * zr + self.perp * zx);
            (v_new, x + dx)
        } else {
            let s2 = self.sigma2;
            let dx = r_int - 0.5 * s2 * dt + (s2 * dt).sqrt() * (self.rho_xr * zr + self.perp * zx);
            (s2, x + dx)
        };
        ([x_new, v_new, r_new], r * dt)
    }
}

/// Normal quantile of the variance uniform for the quadratic branch.
fn zx_for_variance(u: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    thread_local! {
        static N: Normal = Normal::standard();
    }
    N.with(|n| n.inverse_cdf(u))
}

pub fn simulate(model: &ModelSpec, grid: &TimeGrid, n_paths: usize, seed: u64) -> Result<PathGrid> {
    simulate_with(model, grid, n_paths, seed, SimOptions::default())
}

pub fn simulate_with(
    model: &ModelSpec,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
    opts: SimOptions,
) -> Result<PathGrid> {
    if n_paths < 2 {
        return Err(Error::InvalidParameter { name: "n_paths", reason: "at least 2 paths".into() });
    }
    model.validate()?;
    grid.validate()?;
    let stepper = Stepper::new(model, grid.dt);
    let n_dates = grid.dates.len();
    let init = model.initial_state();
    let stoch_v = model.family.stochastic_variance();
    let stoch_r = model.family.stochastic_rate();

    let n_chunks = n_paths.div_ceil(CHUNK);
    let chunks: Vec<ChunkOut> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let start = c * CHUNK;
            let len = CHUNK.min(n_paths - start);
            let mut out = ChunkOut::new(len, n_dates, stoch_v, stoch_r, opts.track_minimum);
            for j in 0..len {
                let mut rng = RngStream::new(seed, (start + j) as u64);
                let mut state = init;
                let mut rate_sum = 0.0;
                out.record(0, j, state, 1.0, state[0]);
                for m in 0..grid.n_steps() {
                    let mut lo = f64::INFINITY;
                    for _ in 0..grid.substeps(m) {
                        let (next, r_dt) = stepper.step(state, &mut rng);
                        state = next;
                        rate_sum += r_dt;
                        lo = lo.min(state[0]);
                    }
                    out.record(m + 1, j, state, (-rate_sum).exp(), lo);
                }
            }
            out
        })
        .collect();

    let total = n_paths * n_dates;
    let mut x = vec![0.0; total];
    let mut v = stoch_v.then(|| vec![0.0; total]);
    let mut r = stoch_r.then(|| vec![0.0; total]);
    let mut disc = vec![0.0; total];
    let mut min_x = opts.track_minimum.then(|| vec![0.0; total]);
    for (c, chunk) in chunks.into_iter().enumerate() {
        let start = c * CHUNK;
        let len = chunk.len;
        for m in 0..n_dates {
            let dst = m * n_paths + start..m * n_paths + start + len;
            let src = m * len..(m + 1) * len;
            x[dst.clone()].copy_from_slice(&chunk.x[src.clone()]);
            disc[dst.clone()].copy_from_slice(&chunk.disc[src.clone()]);
            if let (Some(d), Some(s)) = (v.as_mut(), chunk.v.as_ref()) {
                d[dst.clone()].copy_from_slice(&s[src.clone()]);
            }
            if let (Some(d), Some(s)) = (r.as_mut(), chunk.r.as_ref()) {
                d[dst.clone()].copy_from_slice(&s[src.clone()]);
            }
            if let (Some(d), Some(s)) = (min_x.as_mut(), chunk.min_x.as_ref()) {
                d[dst].copy_from_slice(&s[src]);
            }
        }
    }

    Ok(PathGrid {
        family: model.family,
        n_paths,
        dates: grid.dates.clone(),
        seed,
        x,
        v,
        r,
        disc,
        min_x,
        const_v: init[1],
        const_r: model.r0,
    })
}

struct ChunkOut {
    len: usize,
    x: Vec<f64>,
    v: Option<Vec<f64>>,
    r: Option<Vec<f64>>,
    disc: Vec<f64>,
    min_x: Option<Vec<f64>>,
}

impl ChunkOut {
    fn new(len: usize, n_dates: usize, v: bool, r: bool, track: bool) -> Self {
        let n = len * n_dates;
        ChunkOut {
            len,
            x: vec![0.0; n],
            v: v.then(|| vec![0.0; n]),
            r: r.then(|| vec![0.0; n]),
            disc: vec![0.0; n],
            min_x: track.then(|| vec![0.0; n]),
        }
    }

    fn record(&mut self, m: usize, j: usize, s: [f64; 3], disc: f64, lo: f64) {
        let k = m * self.len + j;
        self.x[k] = s[0];
        self.disc[k] = disc;
        if let Some(v) = self.v.as_mut() {
            v[k] = s[1];
        }
        if let Some(r) = self.r.as_mut() {
            r[k] = s[2];
        }
        if let Some(mx) = self.min_x.as_mut() {
            mx[k] = lo;
        }
    }
}

impl PathGrid {
    pub fn family(&self) -> ModelFamily {
        self.family
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn n_dims(&self) -> usize {
        self.family.n_dims()
    }

    pub fn dates(&self) -> &[f64] {
        &self.dates
    }

    pub fn n_steps(&self) -> usize {
        self.dates.len() - 1
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn slice<'a>(&self, data: &'a [f64], m: usize) -> &'a [f64] {
        &data[m * self.n_paths..(m + 1) * self.n_paths]
    }

    pub fn x(&self, m: usize) -> &[f64] {
        self.slice(&self.x, m)
    }

    /// Variance at date `m`; `None` for constant-volatility families.
    pub fn v(&self, m: usize) -> Option<&[f64]> {
        self.v.as_deref().map(|d| self.slice(d, m))
    }

    /// Short rate at date `m`; `None` for constant-rate families.
    pub fn r(&self, m: usize) -> Option<&[f64]> {
        self.r.as_deref().map(|d| self.slice(d, m))
    }

    /// Pathwise `D(0, t_m)`.
    pub fn disc(&self, m: usize) -> &[f64] {
        self.slice(&self.disc, m)
    }

    /// Column of a state variable that the family simulates.
    pub fn column(&self, var: StateVar, m: usize) -> &[f64] {
        match var {
            StateVar::LogSpot => self.x(m),
            StateVar::Variance => self.v(m).expect("variance is not simulated"),
            StateVar::Rate => self.r(m).expect("rate is not simulated"),
        }
    }

    /// Full `(x, v, r)` of path `i` at date `m`, constants filled in.
    pub fn state(&self, m: usize, i: usize) -> [f64; 3] {
        let k = m * self.n_paths + i;
        [
            self.x[k],
            self.v.as_ref().map_or(self.const_v, |v| v[k]),
            self.r.as_ref().map_or(self.const_r, |r| r[k]),
        ]
    }

    /// First date index at which each path is knocked out by a down-and-out
    /// barrier, or `n_steps + 1` if it survives. Substep monitoring requires a
    /// grid simulated with [`SimOptions::track_minimum`].
    pub fn knockout_dates(&self, barrier: f64, monitoring: BarrierMonitoring) -> Result<Vec<usize>> {
        let level = barrier.ln();
        let src = match monitoring {
            BarrierMonitoring::Dates => &self.x,
            BarrierMonitoring::Substeps => self.min_x.as_ref().ok_or_else(|| Error::InvalidParameter {
                name: "monitoring",
                reason: "grid was simulated without substep minima".into(),
            })?,
        };
        let never = self.n_steps() + 1;
        let mut out = vec![never; self.n_paths];
        for m in 1..self.dates.len() {
            let col = self.slice(src, m);
            for (o, &lo) in out.iter_mut().zip(col) {
                if *o == never && lo <= level {
                    *o = m;
                }
            }
        }
        Ok(out)
    }

    /// Cross-sectional mean of `x^a v^b r^c` at date `m`, optionally weighted
    /// by the pathwise discount to time zero.
    pub fn sample_moment(&self, m: usize, exps: [u8; 3], discounted: bool) -> Result<SampleMoment> {
        if m >= self.dates.len() {
            return Err(Error::OutOfRange(format!("date {m} of {}", self.dates.len())));
        }
        if (exps[1] > 0 && self.v.is_none()) || (exps[2] > 0 && self.r.is_none()) {
            return Err(Error::OutOfRange(format!("exponents {exps:?} for {:?}", self.family)));
        }
        let n = self.n_paths as f64;
        let (mut s1, mut s2) = (0.0, 0.0);
        for i in 0..self.n_paths {
            let st = self.state(m, i);
            let mut y = st[0].powi(exps[0] as i32) * st[1].powi(exps[1] as i32) * st[2].powi(exps[2] as i32);
            if discounted {
                y *= self.disc[m * self.n_paths + i];
            }
            s1 += y;
            s2 += y * y;
        }
        let mean = s1 / n;
        let var = ((s2 - n * mean * mean) / (n - 1.0)).max(0.0);
        Ok(SampleMoment { mean, std_err: (var / n).sqrt() })
    }

    /// Columnar dump `path,date,x,v,r,disc`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "path,date,x,v,r,disc")?;
        for i in 0..self.n_paths {
            for m in 0..self.dates.len() {
                let [x, v, r] = self.state(m, i);
                writeln!(w, "{},{},{},{},{},{}", i, self.dates[m], x, v, r, self.disc[m * self.n_paths + i])?;
            }
        }
        Ok(())
    }
}
