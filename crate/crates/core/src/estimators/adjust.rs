//! Adjusted estimators: hypothetical treatment-ratio reweighting,
//! covariate-stratified WCDE, inverse probability weighting, and merging of
//! sparse mediator levels.

use std::collections::BTreeMap;

use super::{
    check_records, estimate_wcde, fit_cell_statistics,
    multinomial_quadratic, EstimateReport,
};
use crate::estimands::{Estimand, ObservedRecord};
use crate::error::{Error, Result};

/// Rescales weights so the treated share becomes `p_star`: treated records
/// are multiplied by `p*/p̂(T=1)` and controls by `(1-p*)/(1-p̂(T=1))`.
pub fn reweight_hypothetical(records: &[ObservedRecord], p_star: f64) -> Result<Vec<ObservedRecord>> {
    if !(0.0..=1.0).contains(&p_star) {
        return Err(Error::domain(format!("target treated share {p_star} outside [0, 1]")));
    }
    let total: f64 = records.iter().map(|r| r.weight).sum();
    let treated: f64 = records.iter().filter(|r| r.treated).map(|r| r.weight).sum();
    let p_hat = treated / total;
    if !(p_hat > 0.0 && p_hat < 1.0) {
        return Err(Error::domain(format!(
            "observed treated share {p_hat} is degenerate; reweighting needs both arms"
        )));
    }
    let treated_factor = p_star / p_hat;
    let control_factor = (1.0 - p_star) / (1.0 - p_hat);
    Ok(records
        .iter()
        .map(|r| {
            let factor = if r.treated { treated_factor } else { control_factor };
            r.with_weight(r.weight * factor)
        })
        .collect())
}

fn group_by_stratum(records: &[ObservedRecord]) -> Result<BTreeMap<u32, Vec<ObservedRecord>>> {
    let mut strata: BTreeMap<u32, Vec<ObservedRecord>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        let v = r
            .stratum
            .ok_or_else(|| Error::domain(format!("record {i} has no stratum")))?;
        strata.entry(v).or_default().push(*r);
    }
    Ok(strata)
}

/// `sum_v p̂(v) sum_m p̂(M=m | v) (ȳ_{1|m,v} - ȳ_{0|m,v})`, every quantity
/// taken from `records`. The standard error adds the stratum-proportion
/// multinomial term to the per-stratum delta-method variances.
pub fn estimate_wcde_stratified(records: &[ObservedRecord], support: usize) -> Result<EstimateReport> {
    check_records(records, support, "stratified sample")?;
    let strata = group_by_stratum(records)?;
    let total_weight: f64 = records.iter().map(|r| r.weight).sum();
    let total_weight_sq: f64 = records.iter().map(|r| r.weight * r.weight).sum();

    let mut shares = Vec::with_capacity(strata.len());
    let mut effects = Vec::with_capacity(strata.len());
    let mut sampling = Some(0.0);
    for (v, subset) in &strata {
        let stats = fit_cell_statistics(subset, subset, support)?;
        let report = estimate_wcde(&stats).map_err(|e| match e {
            Error::EmptyCell { cell } => Error::EmptyCell {
                cell: format!("{}, v={v})", cell.trim_end_matches(')')),
            },
            other => other,
        })?;
        let share = subset.iter().map(|r| r.weight).sum::<f64>() / total_weight;
        sampling = match (sampling, report.se) {
            (Some(acc), Some(se)) => Some(acc + share * share * se * se),
            _ => None,
        };
        shares.push(share);
        effects.push(report.estimate);
    }
    let estimate: f64 = shares.iter().zip(&effects).map(|(s, e)| s * e).sum();
    let n_eff = total_weight * total_weight / total_weight_sq;
    let se = sampling.map(|s| (s + multinomial_quadratic(&shares, &effects) / n_eff).sqrt());

    let mut report = EstimateReport::new(Estimand::Wcde, estimate, se)
        .with_count("records", records.len())
        .with_count("strata", strata.len());
    if se.is_none() {
        report = report.note("standard error unavailable: a required cell has a single record");
    }
    Ok(report)
}

/// Where IPW propensity scores come from.
#[derive(Debug, Clone, PartialEq)]
pub enum Propensity {
    /// The same known probability for every record.
    Constant(f64),
    /// One known probability per record, aligned with the record slice.
    PerRecord(Vec<f64>),
    /// Estimated as the weighted treated share within each stratum.
    ByStratum,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IpwOptions {
    /// Scores must lie in `[epsilon, 1 - epsilon]`.
    pub epsilon: f64,
    /// Clip out-of-range scores instead of failing.
    pub clip: bool,
}

impl Default for IpwOptions {
    fn default() -> Self {
        Self {
            epsilon: 0.01,
            clip: true,
        }
    }
}

fn resolve_propensity(records: &[ObservedRecord], propensity: &Propensity) -> Result<Vec<f64>> {
    match propensity {
        Propensity::Constant(p) => Ok(vec![*p; records.len()]),
        Propensity::PerRecord(scores) => {
            if scores.len() != records.len() {
                return Err(Error::domain("propensity scores and records differ in length"));
            }
            Ok(scores.clone())
        }
        Propensity::ByStratum => {
            let mut mass: BTreeMap<u32, (f64, f64)> = BTreeMap::new();
            for (i, r) in records.iter().enumerate() {
                let v = r
                    .stratum
                    .ok_or_else(|| Error::domain(format!("record {i} has no stratum")))?;
                let entry = mass.entry(v).or_default();
                entry.1 += r.weight;
                if r.treated {
                    entry.0 += r.weight;
                }
            }
            Ok(records
                .iter()
                .map(|r| {
                    let (treated, total) = mass[&r.stratum.expect("checked above")];
                    treated / total
                })
                .collect())
        }
    }
}

/// Stabilised (Hájek) inverse-probability-weighted difference of means.
pub fn estimate_ate_ipw(
    records: &[ObservedRecord],
    propensity: &Propensity,
    options: IpwOptions,
) -> Result<EstimateReport> {
    let support = records.iter().map(|r| r.mediator + 1).max().unwrap_or(1);
    check_records(records, support, "IPW sample")?;
    let eps = options.epsilon;
    if !(0.0..0.5).contains(&eps) {
        return Err(Error::domain(format!("clipping bound {eps} must lie in [0, 0.5)")));
    }
    let scores = resolve_propensity(records, propensity)?;
    let mut clipped = 0usize;
    let mut arms = [(0.0, 0.0, 0usize); 2];
    let mut weights = Vec::with_capacity(records.len());
    for (i, (r, &e)) in records.iter().zip(&scores).enumerate() {
        let e = if (eps..=1.0 - eps).contains(&e) {
            e
        } else if options.clip && e.is_finite() {
            clipped += 1;
            e.clamp(eps, 1.0 - eps)
        } else {
            return Err(Error::domain(format!(
                "propensity {e} of record {i} outside [{eps}, {}]",
                1.0 - eps
            )));
        };
        let a = if r.treated { r.weight / e } else { r.weight / (1.0 - e) };
        let arm = &mut arms[r.t()];
        arm.0 += a;
        arm.1 += a * r.outcome;
        arm.2 += 1;
        weights.push(a);
    }
    for (t, name) in [(1, "treated"), (0, "control")] {
        if arms[t].2 == 0 {
            return Err(Error::Estimation(format!("IPW ATE: the {name} arm is empty")));
        }
    }
    let means = [arms[0].1 / arms[0].0, arms[1].1 / arms[1].0];
    let mut var = [0.0; 2];
    for (r, a) in records.iter().zip(&weights) {
        let t = r.t();
        let resid = r.outcome - means[t];
        var[t] += a * a * resid * resid;
    }
    let se = (var[1] / (arms[1].0 * arms[1].0) + var[0] / (arms[0].0 * arms[0].0)).sqrt();

    let mut report = EstimateReport::new(Estimand::Ate, means[1] - means[0], Some(se))
        .with_count("treated", arms[1].2)
        .with_count("control", arms[0].2)
        .note("Hajek-normalised inverse probability weights; propensities treated as known");
    if clipped > 0 {
        report = report.note(format!("{clipped} propensity scores clipped to [{eps}, {}]", 1.0 - eps));
    }
    Ok(report)
}

/// Mapping from original mediator levels to merged levels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LevelMerge {
    map: Vec<usize>,
    support: usize,
}

impl LevelMerge {
    pub fn identity(support: usize) -> Self {
        Self {
            map: (0..support).collect(),
            support,
        }
    }

    pub fn merged_support(&self) -> usize {
        self.support
    }

    pub fn level(&self, m: usize) -> usize {
        self.map[m]
    }

    pub fn is_identity(&self) -> bool {
        self.support == self.map.len()
    }
}

/// Groups adjacent mediator levels until every `(t, level)` cell of
/// `cell_source` has at least `min_count` records. A trailing group that
/// never reaches the threshold joins the previous one.
pub fn plan_level_merge(cell_source: &[ObservedRecord], support: usize, min_count: usize) -> LevelMerge {
    let mut counts = vec![[0usize; 2]; support];
    for r in cell_source {
        if r.mediator < support {
            counts[r.mediator][r.t()] += 1;
        }
    }
    let mut map = vec![0; support];
    let mut group = 0;
    let mut acc = [0usize; 2];
    let mut open = false;
    for m in 0..support {
        map[m] = group;
        open = true;
        acc[0] += counts[m][0];
        acc[1] += counts[m][1];
        if acc[0] >= min_count && acc[1] >= min_count {
            group += 1;
            acc = [0, 0];
            open = false;
        }
    }
    if open && group > 0 {
        let last = group;
        for g in &mut map {
            if *g == last {
                *g = last - 1;
            }
        }
    }
    let merged = map.iter().copied().max().map_or(0, |g| g + 1);
    LevelMerge { map, support: merged }
}

pub fn apply_level_merge(records: &[ObservedRecord], merge: &LevelMerge) -> Vec<ObservedRecord> {
    records
        .iter()
        .map(|r| ObservedRecord {
            mediator: merge.level(r.mediator),
            ..*r
        })
        .collect()
}
