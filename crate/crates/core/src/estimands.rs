//! Potential-outcome domain types and exact estimand oracles.
//!
//! The oracles work on fully observed finite populations, which only exist
//! in simulation. They are the ground truth every estimator is checked
//! against. The mediator is binary at this layer; multi-level mediators are
//! handled by the estimators.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::Moments;

/// One unit's complete latent world: two latent mediators, the binary
/// potential mediators they threshold to, and the four potential outcomes
/// `Y_t(m)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PotentialTable {
    latent: [f64; 2],
    mediator: [bool; 2],
    outcome: [[f64; 2]; 2],
}

impl PotentialTable {
    /// Builds a table from latent mediators; `M_t = 1` iff the latent value
    /// is strictly positive. `outcomes[t][m]` is `Y_t(m)`.
    pub fn from_latent(m0_latent: f64, m1_latent: f64, outcomes: [[f64; 2]; 2]) -> Result<Self> {
        if !(m0_latent.is_finite() && m1_latent.is_finite()) {
            return Err(Error::domain("latent mediators must be finite"));
        }
        check_outcomes(&outcomes)?;
        Ok(Self {
            latent: [m0_latent, m1_latent],
            mediator: [m0_latent > 0.0, m1_latent > 0.0],
            outcome: outcomes,
        })
    }

    /// Builds a table from binary potential mediators directly. The latent
    /// values are set to `+1`/`-1` so the threshold invariant still holds.
    pub fn from_mediators(m0: bool, m1: bool, outcomes: [[f64; 2]; 2]) -> Result<Self> {
        let latent = |m: bool| if m { 1.0 } else { -1.0 };
        Self::from_latent(latent(m0), latent(m1), outcomes)
    }

    pub fn latent_mediator(&self, t: usize) -> f64 {
        self.latent[t]
    }

    /// `M_t` as a level in `{0, 1}`.
    pub fn mediator(&self, t: usize) -> usize {
        self.mediator[t] as usize
    }

    /// `Y_t(m)`.
    pub fn outcome(&self, t: usize, m: usize) -> f64 {
        self.outcome[t][m]
    }

    /// `Y_t(M_t)`, the outcome under the natural mediator.
    pub fn natural_outcome(&self, t: usize) -> f64 {
        self.outcome[t][self.mediator(t)]
    }

    pub fn outcomes(&self) -> [[f64; 2]; 2] {
        self.outcome
    }

    /// Returns the table with the treated latent mediator replaced by the
    /// control one, so `M_1 = M_0` for this unit.
    pub fn with_identical_mediators(mut self) -> Self {
        self.latent[1] = self.latent[0];
        self.mediator[1] = self.mediator[0];
        self
    }

    /// Adds `shift` to both latent mediators and re-thresholds.
    pub fn shift_mediators(mut self, shift: f64) -> Self {
        for t in 0..2 {
            self.latent[t] += shift;
            self.mediator[t] = self.latent[t] > 0.0;
        }
        self
    }

    /// Adds `shift` to all four potential outcomes.
    pub fn shift_outcomes(mut self, shift: f64) -> Self {
        for row in &mut self.outcome {
            for y in row {
                *y += shift;
            }
        }
        self
    }
}

fn check_outcomes(outcomes: &[[f64; 2]; 2]) -> Result<()> {
    if outcomes.iter().flatten().all(|y| y.is_finite()) {
        Ok(())
    } else {
        Err(Error::domain("potential outcomes must be finite"))
    }
}

/// Which data source a record belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
pub enum Group {
    /// Treatment randomized, mediator left natural.
    #[default]
    Observational,
    /// First design group: treatment randomized, mediator natural.
    DesignGroup1,
    /// Second design group: treatment and mediator both assigned.
    DesignGroup2,
}

impl Group {
    pub fn as_str(&self) -> &'static str {
        match self {
            Group::Observational => "observational",
            Group::DesignGroup1 => "group1",
            Group::DesignGroup2 => "group2",
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Group {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "observational" | "obs" => Ok(Group::Observational),
            "group1" | "design1" | "1" => Ok(Group::DesignGroup1),
            "group2" | "design2" | "2" => Ok(Group::DesignGroup2),
            other => Err(Error::domain(format!("unknown group `{other}`"))),
        }
    }
}

/// One unit's observable data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservedRecord {
    pub treated: bool,
    /// Mediator level in `0..support`.
    pub mediator: usize,
    pub outcome: f64,
    /// Integer-coded discrete covariate.
    pub stratum: Option<u32>,
    pub group: Group,
    /// Analysis weight; `1.0` for ordinary records.
    pub weight: f64,
}

impl ObservedRecord {
    pub fn new(treated: bool, mediator: usize, outcome: f64) -> Self {
        Self {
            treated,
            mediator,
            outcome,
            stratum: None,
            group: Group::Observational,
            weight: 1.0,
        }
    }

    pub fn with_group(mut self, group: Group) -> Self {
        self.group = group;
        self
    }

    pub fn with_stratum(mut self, stratum: u32) -> Self {
        self.stratum = Some(stratum);
        self
    }

    pub fn with_weight(mut self, weight: f64) -> Self {
        self.weight = weight;
        self
    }

    /// Treatment as `0`/`1`.
    pub fn t(&self) -> usize {
        self.treated as usize
    }

    /// True when the record matches the source table under consistency:
    /// natural records must carry `M_t`, and every record must carry
    /// `Y_t(m)` for its own `(t, m)`.
    pub fn is_consistent_with(&self, table: &PotentialTable) -> bool {
        let t = self.t();
        if self.mediator > 1 {
            return false;
        }
        let natural_ok = self.group == Group::DesignGroup2 || self.mediator == table.mediator(t);
        natural_ok && self.outcome == table.outcome(t, self.mediator)
    }
}

/// Label of a causal quantity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Estimand {
    Ate,
    Cde(usize),
    Wcde,
    Iie,
    Nde,
    Nie,
}

impl fmt::Display for Estimand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Estimand::Ate => f.write_str("ATE"),
            Estimand::Cde(m) => write!(f, "CDE({m})"),
            Estimand::Wcde => f.write_str("WCDE"),
            Estimand::Iie => f.write_str("IIE"),
            Estimand::Nde => f.write_str("NDE"),
            Estimand::Nie => f.write_str("NIE"),
        }
    }
}

impl std::str::FromStr for Estimand {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let upper = s.to_ascii_uppercase();
        match upper.as_str() {
            "ATE" => return Ok(Estimand::Ate),
            "WCDE" => return Ok(Estimand::Wcde),
            "IIE" | "IID" => return Ok(Estimand::Iie),
            "NDE" => return Ok(Estimand::Nde),
            "NIE" => return Ok(Estimand::Nie),
            _ => {}
        }
        upper
            .strip_prefix("CDE(")
            .and_then(|rest| rest.strip_suffix(')'))
            .and_then(|m| m.parse().ok())
            .map(Estimand::Cde)
            .ok_or_else(|| Error::domain(format!("unknown estimand `{s}`")))
    }
}

/// A labeled oracle value with its Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimandValue {
    pub tag: Estimand,
    pub value: f64,
    pub mc_se: Option<f64>,
}

impl EstimandValue {
    fn from_moments(tag: Estimand, moments: &Moments) -> Self {
        Self {
            tag,
            value: moments.mean(),
            mc_se: moments.std_error(),
        }
    }
}

/// `ICDE(m) = Y_1(m) - Y_0(m)`.
pub fn unit_icde(table: &PotentialTable, m: usize) -> Result<f64> {
    check_binary_level(m)?;
    Ok(table.outcome(1, m) - table.outcome(0, m))
}

fn check_binary_level(m: usize) -> Result<()> {
    if m > 1 {
        Err(Error::domain(format!("mediator level {m} outside binary support")))
    } else {
        Ok(())
    }
}

fn check_probability(p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::domain(format!("treatment probability {p} outside [0, 1]")))
    }
}

fn check_nonempty(population: &[PotentialTable]) -> Result<()> {
    if population.is_empty() {
        Err(Error::domain("empty population"))
    } else {
        Ok(())
    }
}

/// Per-unit contribution to the ATE: `Y_1(M_1) - Y_0(M_0)` in its binary
/// expansion.
pub fn unit_ate(table: &PotentialTable) -> f64 {
    let m1 = table.mediator(1) as f64;
    let m0 = table.mediator(0) as f64;
    let y1 = m1 * table.outcome(1, 1) + (1.0 - m1) * table.outcome(1, 0);
    let y0 = m0 * table.outcome(0, 1) + (1.0 - m0) * table.outcome(0, 0);
    y1 - y0
}

/// `w * ICDE(1) + (1 - w) * ICDE(0)` for a mediator weight `w` on level 1.
fn weighted_icde(table: &PotentialTable, w: f64) -> f64 {
    let icde1 = table.outcome(1, 1) - table.outcome(0, 1);
    let icde0 = table.outcome(1, 0) - table.outcome(0, 0);
    w * icde1 + (1.0 - w) * icde0
}

/// Per-unit WCDE contribution with the treatment averaged out analytically:
/// the weight on level 1 is `E[M] = p M_1 + (1 - p) M_0`.
pub fn unit_wcde(table: &PotentialTable, p: f64) -> f64 {
    let w = p * table.mediator(1) as f64 + (1.0 - p) * table.mediator(0) as f64;
    weighted_icde(table, w)
}

/// Per-unit NDE contribution, weight `(M_1 + M_0) / 2`.
pub fn unit_nde(table: &PotentialTable) -> f64 {
    let w = (table.mediator(1) + table.mediator(0)) as f64 / 2.0;
    weighted_icde(table, w)
}

/// Per-unit NIE contribution,
/// `(M_1 - M_0) / 2 * [(Y_1(1) - Y_1(0)) + (Y_0(1) - Y_0(0))]`.
pub fn unit_nie(table: &PotentialTable) -> f64 {
    let dm = table.mediator(1) as f64 - table.mediator(0) as f64;
    let shift1 = table.outcome(1, 1) - table.outcome(1, 0);
    let shift0 = table.outcome(0, 1) - table.outcome(0, 0);
    0.5 * dm * (shift1 + shift0)
}

fn mean_of(
    tag: Estimand,
    population: &[PotentialTable],
    f: impl Fn(&PotentialTable) -> f64,
) -> EstimandValue {
    let moments: Moments = population.iter().map(f).collect();
    EstimandValue::from_moments(tag, &moments)
}

pub fn oracle_ate(population: &[PotentialTable]) -> Result<EstimandValue> {
    check_nonempty(population)?;
    Ok(mean_of(Estimand::Ate, population, unit_ate))
}

/// WCDE when treatment is Bernoulli(`p`), independent of the potential world.
pub fn oracle_wcde(population: &[PotentialTable], p: f64) -> Result<EstimandValue> {
    check_probability(p)?;
    check_nonempty(population)?;
    Ok(mean_of(Estimand::Wcde, population, |u| unit_wcde(u, p)))
}

/// WCDE when unit `i` is treated with its own probability `propensity[i]`.
pub fn oracle_wcde_with_propensity(
    population: &[PotentialTable],
    propensity: &[f64],
) -> Result<EstimandValue> {
    check_nonempty(population)?;
    if population.len() != propensity.len() {
        return Err(Error::domain("propensity length differs from population size"));
    }
    for &p in propensity {
        check_probability(p)?;
    }
    let moments: Moments = population
        .iter()
        .zip(propensity)
        .map(|(u, &p)| unit_wcde(u, p))
        .collect();
    Ok(EstimandValue::from_moments(Estimand::Wcde, &moments))
}

/// `IIE = ATE - WCDE`. The standard error is that of the per-unit differences.
pub fn oracle_iie(population: &[PotentialTable], p: f64) -> Result<EstimandValue> {
    let ate = oracle_ate(population)?;
    let wcde = oracle_wcde(population, p)?;
    let diffs: Moments = population
        .iter()
        .map(|u| unit_ate(u) - unit_wcde(u, p))
        .collect();
    Ok(EstimandValue {
        tag: Estimand::Iie,
        value: ate.value - wcde.value,
        mc_se: diffs.std_error(),
    })
}

pub fn oracle_nde(population: &[PotentialTable]) -> Result<EstimandValue> {
    check_nonempty(population)?;
    Ok(mean_of(Estimand::Nde, population, unit_nde))
}

/// NIE from its definition `(NIE(1) + NIE(0)) / 2` with `Y_t(M_k)`
/// expanded over the binary mediator.
pub fn oracle_nie(population: &[PotentialTable]) -> Result<EstimandValue> {
    check_nonempty(population)?;
    Ok(mean_of(Estimand::Nie, population, unit_nie))
}

pub fn oracle_cde(population: &[PotentialTable], m: usize) -> Result<EstimandValue> {
    check_binary_level(m)?;
    check_nonempty(population)?;
    Ok(mean_of(Estimand::Cde(m), population, |u| {
        u.outcome(1, m) - u.outcome(0, m)
    }))
}
