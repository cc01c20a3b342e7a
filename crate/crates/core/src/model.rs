//! Model parameterizations, contracts and monitoring schedules.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelFamily {
    Bs,
    Heston,
    Bshw,
    Hhw,
}

/// Coordinates of the state vector `(x, v, r)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StateVar {
    LogSpot,
    Variance,
    Rate,
}

impl StateVar {
    /// Position in the full `(x, v, r)` triple.
    pub fn slot(self) -> usize {
        match self {
            StateVar::LogSpot => 0,
            StateVar::Variance => 1,
            StateVar::Rate => 2,
        }
    }
}

impl ModelFamily {
    pub fn state_vars(self) -> &'static [StateVar] {
        use StateVar::*;
        match self {
            ModelFamily::Bs => &[LogSpot],
            ModelFamily::Heston => &[LogSpot, Variance],
            ModelFamily::Bshw => &[LogSpot, Rate],
            ModelFamily::Hhw => &[LogSpot, Variance, Rate],
        }
    }

    pub fn n_dims(self) -> usize {
        self.state_vars().len()
    }

    pub fn stochastic_variance(self) -> bool {
        matches!(self, ModelFamily::Heston | ModelFamily::Hhw)
    }

    pub fn stochastic_rate(self) -> bool {
        matches!(self, ModelFamily::Bshw | ModelFamily::Hhw)
    }

    /// Highest total monomial degree with available discounted moments.
    pub fn degree_cap(self) -> usize {
        if self == ModelFamily::Hhw {
            2
        } else {
            3
        }
    }
}

/// Dynamics parameters. Fields not used by a family are ignored.
///
/// `r0` is the constant rate for BS and Heston and the initial short rate for
/// the Hull-White hybrids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub family: ModelFamily,
    pub s0: f64,
    #[serde(default)]
    pub r0: f64,
    #[serde(default)]
    pub v0: f64,
    #[serde(default)]
    pub kappa: f64,
    #[serde(default)]
    pub vbar: f64,
    #[serde(default)]
    pub gamma: f64,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default)]
    pub theta: f64,
    #[serde(default)]
    pub eta: f64,
    #[serde(default)]
    pub sigma: f64,
    #[serde(default)]
    pub rho_xv: f64,
    #[serde(default)]
    pub rho_xr: f64,
}

impl ModelSpec {
    pub fn x0(&self) -> f64 {
        self.s0.ln()
    }

    /// Initial `(x, v, r)`; the variance slot holds `sigma^2` for the BS family.
    pub fn initial_state(&self) -> [f64; 3] {
        let v = if self.family.stochastic_variance() {
            self.v0
        } else {
            self.sigma * self.sigma
        };
        [self.x0(), v, self.r0]
    }

    pub fn feller_satisfied(&self) -> bool {
        2.0 * self.kappa * self.vbar >= self.gamma * self.gamma
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            ("s0", self.s0),
            ("r0", self.r0),
            ("v0", self.v0),
            ("kappa", self.kappa),
            ("vbar", self.vbar),
            ("gamma", self.gamma),
            ("lambda", self.lambda),
            ("theta", self.theta),
            ("eta", self.eta),
            ("sigma", self.sigma),
            ("rho_xv", self.rho_xv),
            ("rho_xr", self.rho_xr),
        ];
        for (name, value) in finite {
            if !value.is_finite() {
                return Err(invalid(name, "must be finite"));
            }
        }
        if self.s0 <= 0.0 {
            return Err(invalid("s0", "must be positive"));
        }
        for (name, value) in [
            ("kappa", self.kappa),
            ("gamma", self.gamma),
            ("lambda", self.lambda),
            ("eta", self.eta),
            ("sigma", self.sigma),
            ("v0", self.v0),
            ("vbar", self.vbar),
        ] {
            if value < 0.0 {
                return Err(invalid(name, "must be non-negative"));
            }
        }
        for (name, value) in [("rho_xv", self.rho_xv), ("rho_xr", self.rho_xr)] {
            if !(-1.0..=1.0).contains(&value) {
                return Err(invalid(name, "must lie in [-1, 1]"));
            }
        }
        let rho_xv = if self.family.stochastic_variance() { self.rho_xv } else { 0.0 };
        let rho_xr = if self.family.stochastic_rate() { self.rho_xr } else { 0.0 };
        if rho_xv * rho_xv + rho_xr * rho_xr > 1.0 + 1e-12 {
            return Err(invalid("rho_xr", "correlation matrix is not positive semi-definite"));
        }
        if self.family.stochastic_variance() && self.kappa <= 0.0 {
            return Err(invalid("kappa", "must be positive for stochastic variance"));
        }
        if self.family == ModelFamily::Bshw && self.sigma <= 0.0 {
            return Err(invalid("sigma", "must be positive for BSHW"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContractKind {
    European,
    Bermudan,
    DownAndOutBarrier,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptionType {
    Call,
    Put,
}

impl OptionType {
    pub fn omega(self) -> f64 {
        match self {
            OptionType::Call => 1.0,
            OptionType::Put => -1.0,
        }
    }
}

/// Where a down-and-out barrier is checked.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BarrierMonitoring {
    /// Monitoring dates only.
    Dates,
    /// Every simulation substep.
    #[default]
    Substeps,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContractSpec {
    pub kind: ContractKind,
    pub option: OptionType,
    pub strike: f64,
    pub maturity: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub barrier: Option<f64>,
    #[serde(default)]
    pub monitoring: BarrierMonitoring,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub exercise_dates: Vec<f64>,
}

impl ContractSpec {
    pub fn payoff(&self, spot: f64) -> f64 {
        payoff(self.option, self.strike, spot)
    }

    pub fn validate(&self, s0: f64) -> Result<()> {
        if !(self.strike >= 0.0 && self.strike.is_finite()) {
            return Err(invalid("strike", "must be finite and non-negative"));
        }
        if !(self.maturity > 0.0) {
            return Err(invalid("maturity", "must be positive"));
        }
        match self.kind {
            ContractKind::DownAndOutBarrier => match self.barrier {
                Some(l) if l > 0.0 && l < s0 => {}
                Some(_) => return Err(invalid("barrier", "must lie in (0, s0)")),
                None => return Err(invalid("barrier", "required for a barrier contract")),
            },
            _ => {
                if self.barrier.is_some() {
                    return Err(invalid("barrier", "only valid for barrier contracts"));
                }
            }
        }
        match self.kind {
            ContractKind::Bermudan => {
                if self.exercise_dates.is_empty() {
                    return Err(invalid("exercise_dates", "Bermudan needs exercise dates"));
                }
                if self.exercise_dates.iter().any(|&t| !(t > 0.0) || t > self.maturity * (1.0 + 1e-12)) {
                    return Err(invalid("exercise_dates", "must lie in (0, maturity]"));
                }
            }
            _ => {
                if !self.exercise_dates.is_empty() {
                    return Err(invalid("exercise_dates", "only valid for Bermudan contracts"));
                }
            }
        }
        Ok(())
    }

    /// Exercise flags per monitoring date of `grid`.
    pub fn exercise_flags(&self, grid: &TimeGrid) -> Result<Vec<bool>> {
        let mut flags = vec![false; grid.dates.len()];
        for &t in &self.exercise_dates {
            let m = grid.index_of(t).ok_or(Error::ExerciseDateMissing(t))?;
            if m == 0 {
                return Err(Error::ExerciseDateMissing(t));
            }
            flags[m] = true;
        }
        Ok(flags)
    }
}

/// `max(omega (S - K), 0)`.
pub fn payoff(option: OptionType, strike: f64, spot: f64) -> f64 {
    (option.omega() * (spot - strike)).max(0.0)
}

/// Monitoring dates with the simulation substep used between them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeGrid {
    pub dates: Vec<f64>,
    pub dt: f64,
}

impl TimeGrid {
    pub fn new(dates: Vec<f64>, dt: f64) -> Result<Self> {
        let grid = TimeGrid { dates, dt };
        grid.validate()?;
        Ok(grid)
    }

    /// `steps` equal intervals on `[0, maturity]`.
    pub fn uniform(maturity: f64, steps: usize, dt: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidGrid("at least one interval required".into()));
        }
        let dates = (0..=steps).map(|m| maturity * m as f64 / steps as f64).collect();
        Self::new(dates, dt)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dates.len() < 2 {
            return Err(Error::InvalidGrid("at least one interval required".into()));
        }
        if self.dates[0] != 0.0 {
            return Err(Error::InvalidGrid("first date must be 0".into()));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidGrid("substep must be positive".into()));
        }
        for m in 0..self.n_steps() {
            let h = self.dates[m + 1] - self.dates[m];
            if !(h > 0.0) {
                return Err(Error::InvalidGrid("dates must be strictly increasing".into()));
            }
            let k = (h / self.dt).round();
            if k < 1.0 || (k * self.dt - h).abs() > 1e-12 * h.max(1.0) * k {
                return Err(Error::InvalidGrid(format!(
                    "substep {} does not divide interval {} ({})",
                    self.dt, m, h
                )));
            }
        }
        Ok(())
    }

    /// Number of monitoring intervals `M`.
    pub fn n_steps(&self) -> usize {
        self.dates.len() - 1
    }

    pub fn maturity(&self) -> f64 {
        *self.dates.last().unwrap()
    }

    /// Substeps between `t_m` and `t_{m+1}`.
    pub fn substeps(&self, m: usize) -> usize {
        ((self.dates[m + 1] - self.dates[m]) / self.dt).round() as usize
    }

    pub fn index_of(&self, t: f64) -> Option<usize> {
        self.dates
            .iter()
            .position(|&d| (d - t).abs() <= 1e-12 * t.abs().max(1.0))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Preset {
    TestA,
    TestBRho02T5,
    TestBRho06T10,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::TestA, Preset::TestBRho02T5, Preset::TestBRho06T10];

    pub fn name(self) -> &'static str {
        match self {
            Preset::TestA => "TestA",
            Preset::TestBRho02T5 => "TestB_rho02_T5",
            Preset::TestBRho06T10 => "TestB_rho06_T10",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Preset::TestA => "Heston Bermudan put, T=1, 10 exercise dates, Feller violated",
            Preset::TestBRho02T5 => "Heston-Hull-White Bermudan put, rho_xr=0.2, T=5",
            Preset::TestBRho06T10 => "Heston-Hull-White Bermudan put, rho_xr=0.6, T=10",
        }
    }

    pub fn build(self) -> (ModelSpec, ContractSpec, TimeGrid) {
        match self {
            Preset::TestA => {
                let model = ModelSpec {
                    family: ModelFamily::Heston,
                    s0: 100.0,
                    r0: 0.04,
                    v0: 0.0348,
                    kappa: 1.15,
                    vbar: 0.0348,
                    gamma: 0.39,
                    lambda: 0.0,
                    theta: 0.0,
                    eta: 0.0,
                    sigma: 0.0,
                    rho_xv: -0.64,
                    rho_xr: 0.0,
                };
                bermudan_put(model, 1.0)
            }
            Preset::TestBRho02T5 => bermudan_put(test_b_model(0.2), 5.0),
            Preset::TestBRho06T10 => bermudan_put(test_b_model(0.6), 10.0),
        }
    }
}

fn test_b_model(rho_xr: f64) -> ModelSpec {
    ModelSpec {
        family: ModelFamily::Hhw,
        s0: 100.0,
        r0: 0.02,
        v0: 0.05,
        kappa: 0.3,
        vbar: 0.05,
        gamma: 0.6,
        lambda: 0.01,
        theta: 0.02,
        eta: 0.01,
        sigma: 0.0,
        rho_xv: -0.3,
        rho_xr,
    }
}

fn bermudan_put(model: ModelSpec, maturity: f64) -> (ModelSpec, ContractSpec, TimeGrid) {
    let grid = TimeGrid::uniform(maturity, 10, 0.05).expect("preset grid");
    let contract = ContractSpec {
        kind: ContractKind::Bermudan,
        option: OptionType::Put,
        strike: 100.0,
        maturity,
        barrier: None,
        monitoring: BarrierMonitoring::Substeps,
        exercise_dates: grid.dates[1..].to_vec(),
    };
    (model, contract, grid)
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::UnknownPreset(s.to_string()))
    }
}

pub fn preset(name: &str) -> Result<(ModelSpec, ContractSpec, TimeGrid)> {
    Ok(name.parse::<Preset>()?.build())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn payoff_examples() {
        assert_eq!(payoff(OptionType::Put, 100.0, 90.0), 10.0);
        assert_eq!(payoff(OptionType::Call, 100.0, 90.0), 0.0);
        assert_eq!(payoff(OptionType::Put, 100.0, 100.0), 0.0);
    }

    #[test]
    fn test_a_preset() {
        let (model, contract, grid) = preset("TestA").unwrap();
        assert!(!model.feller_satisfied());
        assert_eq!(contract.exercise_dates.len(), 10);
        assert!((contract.exercise_dates[0] - 0.1).abs() < 1e-15);
        assert_eq!(*contract.exercise_dates.last().unwrap(), 1.0);
        assert!(contract.exercise_dates.iter().all(|&t| t > 0.0 && t <= 1.0));
        assert_eq!(grid.substeps(0), 2);
        model.validate().unwrap();
        contract.validate(model.s0).unwrap();
    }

    #[test]
    fn test_b_presets() {
        let (model, contract, grid) = preset("TestB_rho02_T5").unwrap();
        assert_eq!(model.rho_xr, 0.2);
        assert_eq!(contract.maturity, 5.0);
        assert_eq!(grid.substeps(3), 10);
        assert!(!model.feller_satisfied());
        let (model, contract, _) = preset("TestB_rho06_T10").unwrap();
        assert_eq!(model.rho_xr, 0.6);
        assert_eq!(contract.maturity, 10.0);
        assert!(matches!(preset("TestC"), Err(Error::UnknownPreset(_))));
    }

    #[test]
    fn grid_validation() {
        assert!(TimeGrid::uniform(1.0, 10, 0.03).is_err());
        assert!(TimeGrid::new(vec![0.0, 0.5, 0.4], 0.1).is_err());
        assert!(TimeGrid::new(vec![0.0], 0.1).is_err());
        assert!(TimeGrid::uniform(1.0, 10, 0.0).is_err());
        let g = TimeGrid::uniform(10.0, 200, 0.05).unwrap();
        assert_eq!(g.substeps(199), 1);
        assert_eq!(g.index_of(0.1), Some(2));
    }

    #[test]
    fn exercise_dates_must_be_on_grid() {
        let (_, mut contract, grid) = preset("TestA").unwrap();
        assert_eq!(contract.exercise_flags(&grid).unwrap().iter().filter(|&&f| f).count(), 10);
        contract.exercise_dates.push(0.55);
        assert!(matches!(contract.exercise_flags(&grid), Err(Error::ExerciseDateMissing(_))));
    }

    #[test]
    fn contract_validation() {
        let (model, mut contract, _) = preset("TestA").unwrap();
        contract.kind = ContractKind::DownAndOutBarrier;
        contract.exercise_dates.clear();
        assert!(contract.validate(model.s0).is_err());
        contract.barrier = Some(80.0);
        contract.validate(model.s0).unwrap();
        contract.barrier = Some(120.0);
        assert!(contract.validate(model.s0).is_err());
    }

    #[test]
    fn model_validation() {
        let (mut model, _, _) = preset("TestB_rho06_T10").unwrap();
        model.validate().unwrap();
        model.rho_xv = -0.9;
        assert!(model.validate().is_err());
        model.rho_xv = -0.3;
        model.gamma = -1.0;
        assert!(model.validate().is_err());
    }
}
