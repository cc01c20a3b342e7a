//! Default probabilities, CVA, and reference pricers.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::model::{ContractKind, ContractSpec, ModelSpec, OptionType, TimeGrid};
use crate::paths::{simulate_with, SimOptions};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CreditSpec {
    /// Constant hazard rate per year.
    pub hazard: f64,
    pub recovery: f64,
    /// PFE confidence level.
    pub alpha: f64,
}

impl Default for CreditSpec {
    fn default() -> Self {
        CreditSpec { hazard: 0.03, recovery: 0.0, alpha: 0.975 }
    }
}

impl CreditSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.hazard >= 0.0 && self.hazard.is_finite()) {
            return Err(crate::error::invalid("hazard", "must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.recovery) {
            return Err(crate::error::invalid("recovery", "must lie in [0, 1)"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(crate::error::invalid("alpha", "must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// `1 - exp(-h t)`.
pub fn pd(t: f64, hazard: f64) -> f64 {
    -(-hazard * t).exp_m1()
}

/// `(1 - recovery) * sum_m EE*(t_m) (PD(t_{m+1}) - PD(t_m))` over `m = 0..M-1`.
///
/// `ee_star` may hold `M` or `M + 1` values; a trailing value at `t_M` is
/// ignored.
pub fn cva(ee_star: &[f64], credit: &CreditSpec, dates: &[f64]) -> Result<f64> {
    let m = dates.len().saturating_sub(1);
    if ee_star.len() != m && ee_star.len() != m + 1 {
        return Err(Error::LengthMismatch { expected: m, got: ee_star.len() });
    }
    let sum: f64 = (0..m)
        .map(|k| ee_star[k] * (pd(dates[k + 1], credit.hazard) - pd(dates[k], credit.hazard)))
        .sum();
    Ok((1.0 - credit.recovery) * sum)
}

fn norm_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

/// Black-Scholes price with continuous rate `r` and no dividends.
pub fn bs_price(option: OptionType, s0: f64, strike: f64, maturity: f64, rate: f64, vol: f64) -> f64 {
    let df = (-rate * maturity).exp();
    let omega = option.omega();
    if vol <= 0.0 || maturity <= 0.0 {
        return (omega * (s0 - strike * df)).max(0.0);
    }
    let sd = vol * maturity.sqrt();
    let d1 = ((s0 / strike).ln() + rate * maturity) / sd + 0.5 * sd;
    let d2 = d1 - sd;
    omega * (s0 * norm_cdf(omega * d1) - strike * df * norm_cdf(omega * d2))
}

fn bs_vega(s0: f64, strike: f64, maturity: f64, rate: f64, vol: f64) -> f64 {
    let sd = vol * maturity.sqrt();
    let d1 = ((s0 / strike).ln() + rate * maturity) / sd + 0.5 * sd;
    s0 * (-0.5 * d1 * d1).exp() / (2.0 * std::f64::consts::PI).sqrt() * maturity.sqrt()
}

const VOL_LO: f64 = 1e-6;
const VOL_HI: f64 = 5.0;

/// Black-Scholes implied volatility in `[1e-6, 5]`: Newton steps kept inside
/// a shrinking bracket, bisecting whenever a step leaves it.
pub fn implied_vol(option: OptionType, price: f64, s0: f64, strike: f64, maturity: f64, rate: f64) -> Result<f64> {
    let df = (-rate * maturity).exp();
    let (lower, upper) = match option {
        OptionType::Call => ((s0 - strike * df).max(0.0), s0),
        OptionType::Put => ((strike * df - s0).max(0.0), strike * df),
    };
    if !(price > lower && price < upper) {
        return Err(Error::PriceOutOfBounds { price, lower, upper });
    }
    let f = |v: f64| bs_price(option, s0, strike, maturity, rate, v) - price;
    let (mut lo, mut hi) = (VOL_LO, VOL_HI);
    if f(lo) > 0.0 || f(hi) < 0.0 {
        return Err(Error::PriceOutOfBounds { price, lower: lower.max(price - f(lo)), upper: price - f(hi) });
    }
    let mut v = 0.2;
    for _ in 0..200 {
        let fv = f(v);
        if fv.abs() < 1e-12 {
            return Ok(v);
        }
        if fv > 0.0 {
            hi = v;
        } else {
            lo = v;
        }
        let vega = bs_vega(s0, strike, maturity, rate, v);
        let step = v - fv / vega;
        v = if vega > 0.0 && step > lo && step < hi { step } else { 0.5 * (lo + hi) };
        if hi - lo < 1e-15 {
            break;
        }
    }
    Ok(v)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McPrice {
    pub price: f64,
    pub std_err: f64,
}

/// Plain Monte Carlo price of a European or down-and-out contract from
/// pathwise discounted terminal cash flows.
pub fn mc_european_oracle(
    model: &ModelSpec,
    contract: &ContractSpec,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<McPrice> {
    Ok(mc_european_oracle_batch(model, std::slice::from_ref(contract), grid, n_paths, seed)?[0])
}

/// [`mc_european_oracle`] for several contracts on one set of paths; all
/// must share kind, barrier and monitoring.
pub fn mc_european_oracle_batch(
    model: &ModelSpec,
    contracts: &[ContractSpec],
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<McPrice>> {
    let first = contracts.first().ok_or_else(|| crate::error::invalid("contracts", "empty batch"))?;
    for c in contracts {
        c.validate(model.s0)?;
        if c.kind == ContractKind::Bermudan {
            return Err(crate::error::invalid("kind", "the oracle prices European-style cash flows only"));
        }
        if c.kind != first.kind || c.barrier != first.barrier || c.monitoring != first.monitoring {
            return Err(crate::error::invalid("contracts", "a batch must share kind and barrier"));
        }
    }
    let barrier = matches!(first.kind, ContractKind::DownAndOutBarrier);
    let opts = SimOptions { track_minimum: barrier && first.monitoring == crate::model::BarrierMonitoring::Substeps };
    let paths = simulate_with(model, grid, n_paths, seed, opts)?;
    let m = grid.n_steps();
    let alive = if barrier { Some(paths.knockout_dates(first.barrier.unwrap(), first.monitoring)?) } else { None };
    let n = n_paths as f64;
    Ok(contracts
        .iter()
        .map(|contract| {
            let (mut s1, mut s2) = (0.0, 0.0);
            for (i, (&x, &d)) in paths.x(m).iter().zip(paths.disc(m)).enumerate() {
                let knocked = alive.as_ref().is_some_and(|k| k[i] <= m);
                let cf = if knocked { 0.0 } else { d * contract.payoff(x.exp()) };
                s1 += cf;
                s2 += cf * cf;
            }
            let price = s1 / n;
            let var = ((s2 - n * price * price) / (n - 1.0)).max(0.0);
            McPrice { price, std_err: (var / n).sqrt() }
        })
        .collect())
}
