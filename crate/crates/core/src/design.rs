//! The two-group randomized identification protocol.
//!
//! Group 1 randomizes treatment and lets the mediator respond naturally,
//! which yields the mediator marginal `p̂(M)`. Group 2 randomizes treatment
//! and assigns the mediator from `p̂(M)`, which yields the controlled cell
//! means. An extra observational view (fresh treatment draws for every unit,
//! natural mediators) feeds the ATE and the classical NDE comparator.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::estimands::{Group, ObservedRecord};
use crate::error::{Error, Result};
use crate::estimators::{
    apply_level_merge, estimate_ate, estimate_iie, estimate_wcde, fit_cell_statistics,
    plan_level_merge, EstimateReport,
};

/// A manipulable experimental unit pool.
///
/// Implementations must be deterministic: the same query always returns the
/// same answer.
pub trait ExperimentOracle {
    fn unit_count(&self) -> usize;

    /// Number of mediator levels.
    fn mediator_support(&self) -> usize;

    /// `(M_t, Y_t(M_t))` for `unit` under treatment `t`.
    fn respond_natural(&self, unit: usize, t: usize) -> Result<(usize, f64)>;

    /// `Y_t(m)` for `unit` with the mediator set to `m`.
    fn respond_controlled(&self, unit: usize, t: usize, m: usize) -> Result<f64>;
}

/// How group 2 draws its mediator assignments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MediatorAssignment {
    /// `M ~ p̂(M)` independently of `T`.
    #[default]
    Marginal,
    /// `M ~ p̂(M | T)` from group 1, falling back to the marginal when
    /// group 1 has no units in that arm.
    Joint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignOptions {
    /// Share of units sent to group 1.
    pub group1_fraction: f64,
    pub assignment: MediatorAssignment,
}

impl Default for DesignOptions {
    fn default() -> Self {
        Self {
            group1_fraction: 0.5,
            assignment: MediatorAssignment::Marginal,
        }
    }
}

/// Which records feed the ATE estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum AteSource {
    #[default]
    Observational,
    Group1,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignDataset {
    pub group1: Vec<ObservedRecord>,
    pub group2: Vec<ObservedRecord>,
    pub observational: Vec<ObservedRecord>,
    /// Mediator marginal observed in group 1 and used for group 2.
    pub p_hat_group1: Vec<f64>,
    pub mediator_support: usize,
}

impl DesignDataset {
    /// All records, group 1 first, then group 2, then the observational view.
    pub fn all_records(&self) -> Vec<ObservedRecord> {
        self.group1
            .iter()
            .chain(&self.group2)
            .chain(&self.observational)
            .copied()
            .collect()
    }

    /// Rebuilds a dataset from records labelled by group.
    pub fn from_records(records: &[ObservedRecord], support: usize) -> Result<Self> {
        let pick = |g: Group| -> Vec<ObservedRecord> {
            records.iter().filter(|r| r.group == g).copied().collect()
        };
        let group1 = pick(Group::DesignGroup1);
        let group2 = pick(Group::DesignGroup2);
        if group1.is_empty() || group2.is_empty() {
            return Err(Error::domain("design data needs records in both group1 and group2"));
        }
        let mut p_hat = vec![0.0; support];
        for r in &group1 {
            if r.mediator >= support {
                return Err(Error::domain(format!("mediator level {} outside support", r.mediator)));
            }
            p_hat[r.mediator] += 1.0;
        }
        for p in &mut p_hat {
            *p /= group1.len() as f64;
        }
        Ok(Self {
            group1,
            group2,
            observational: pick(Group::Observational),
            p_hat_group1: p_hat,
            mediator_support: support,
        })
    }
}

fn categorical(weights: &[f64]) -> Result<WeightedIndex<f64>> {
    WeightedIndex::new(weights).map_err(|e| Error::Estimation(format!("mediator assignment: {e}")))
}

/// Runs the protocol on the first `n` units of `oracle`.
///
/// Step 1 splits the units at random. Step 2 draws `T ~ Bernoulli(p)` in
/// group 1 and records the natural response. Step 3 draws `T ~ Bernoulli(p)`
/// and `M` from group 1's mediator distribution in group 2 and records the
/// controlled response. The observational view redraws treatment for all `n`
/// units.
pub fn run_two_group_design<O, R>(
    oracle: &O,
    n: usize,
    p: f64,
    options: &DesignOptions,
    rng: &mut R,
) -> Result<DesignDataset>
where
    O: ExperimentOracle + ?Sized,
    R: Rng + ?Sized,
{
    if n < 2 {
        return Err(Error::domain(format!("design needs at least 2 units, got {n}")));
    }
    if n > oracle.unit_count() {
        return Err(Error::domain(format!(
            "design asks for {n} units but the oracle has {}",
            oracle.unit_count()
        )));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::domain(format!("treatment probability {p} outside [0, 1]")));
    }
    let frac = options.group1_fraction;
    if !(frac > 0.0 && frac < 1.0) {
        return Err(Error::domain(format!("group-1 fraction {frac} must lie in (0, 1)")));
    }
    let support = oracle.mediator_support();

    let mut units: Vec<usize> = (0..n).collect();
    units.shuffle(rng);
    let n1 = ((n as f64 * frac).round() as usize).clamp(1, n - 1);
    let (first, second) = units.split_at(n1);

    let mut group1 = Vec::with_capacity(first.len());
    let mut by_arm = [vec![0.0; support], vec![0.0; support]];
    for &unit in first {
        let treated = rng.random_bool(p);
        let (m, y) = oracle.respond_natural(unit, treated as usize)?;
        if m >= support {
            return Err(Error::domain(format!("oracle returned mediator level {m} outside support")));
        }
        by_arm[treated as usize][m] += 1.0;
        group1.push(ObservedRecord::new(treated, m, y).with_group(Group::DesignGroup1));
    }
    let p_hat: Vec<f64> = (0..support)
        .map(|m| (by_arm[0][m] + by_arm[1][m]) / n1 as f64)
        .collect();

    let marginal = categorical(&p_hat)?;
    let conditional = match options.assignment {
        MediatorAssignment::Marginal => [None, None],
        MediatorAssignment::Joint => [0, 1].map(|t| categorical(&by_arm[t]).ok()),
    };
    let mut group2 = Vec::with_capacity(second.len());
    for &unit in second {
        let treated = rng.random_bool(p);
        let m = match &conditional[treated as usize] {
            Some(dist) => dist.sample(rng),
            None => marginal.sample(rng),
        };
        let y = oracle.respond_controlled(unit, treated as usize, m)?;
        group2.push(ObservedRecord::new(treated, m, y).with_group(Group::DesignGroup2));
    }

    let mut observational = Vec::with_capacity(n);
    for unit in 0..n {
        let treated = rng.random_bool(p);
        let (m, y) = oracle.respond_natural(unit, treated as usize)?;
        observational.push(ObservedRecord::new(treated, m, y));
    }

    Ok(DesignDataset {
        group1,
        group2,
        observational,
        p_hat_group1: p_hat,
        mediator_support: support,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EstimationOptions {
    pub ate_source: AteSource,
    /// Merge adjacent mediator levels until every group-2 cell has at least
    /// this many records.
    pub merge_sparse_cells: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignEstimates {
    pub ate: EstimateReport,
    pub wcde: EstimateReport,
    pub iie: EstimateReport,
}

/// WCDE from `p̂` (group 1) and the controlled cell means (group 2).
pub fn estimate_design_wcde(ds: &DesignDataset, merge_sparse_cells: Option<usize>) -> Result<EstimateReport> {
    if ds.group1.is_empty() || ds.group2.is_empty() {
        return Err(Error::domain("design groups must be nonempty"));
    }
    let mut wcde = match merge_sparse_cells {
        Some(min_count) => {
            let plan = plan_level_merge(&ds.group2, ds.mediator_support, min_count);
            let g1 = apply_level_merge(&ds.group1, &plan);
            let g2 = apply_level_merge(&ds.group2, &plan);
            let mut r = estimate_wcde(&fit_cell_statistics(&g1, &g2, plan.merged_support())?)?;
            if !plan.is_identity() {
                r.notes.push(format!(
                    "sparse mediator levels merged into {} levels",
                    plan.merged_support()
                ));
            }
            r
        }
        None => estimate_wcde(&fit_cell_statistics(&ds.group1, &ds.group2, ds.mediator_support)?)?,
    };
    wcde.n_used.insert("group1".into(), ds.group1.len());
    wcde.n_used.insert("group2".into(), ds.group2.len());
    Ok(wcde)
}

pub fn estimate_design_ate(ds: &DesignDataset, source: AteSource) -> Result<EstimateReport> {
    match source {
        AteSource::Observational => {
            if ds.observational.is_empty() {
                return Err(Error::domain("the observational view is empty"));
            }
            estimate_ate(&ds.observational)
        }
        AteSource::Group1 => estimate_ate(&ds.group1),
    }
}

/// WCDE from the two design groups, ATE from the configured source and
/// `IIE = ATE - WCDE`.
pub fn estimate_from_design(ds: &DesignDataset, options: &EstimationOptions) -> Result<DesignEstimates> {
    let wcde = estimate_design_wcde(ds, options.merge_sparse_cells)?;
    let ate = estimate_design_ate(ds, options.ate_source)?;
    let iie = estimate_iie(&ate, &wcde);
    Ok(DesignEstimates { ate, wcde, iie })
}
