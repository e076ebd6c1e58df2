//! Plug-in estimators computed from observed records.
//!
//! Everything here is a pure function of immutable record slices. Records
//! carry a weight; unweighted data simply has every weight equal to one and
//! goes through the same code path.

mod adjust;

use std::collections::BTreeMap;
use std::fmt::Write as _;

pub use adjust::{
    apply_level_merge, estimate_ate_ipw, estimate_wcde_stratified, plan_level_merge,
    reweight_hypothetical, IpwOptions, LevelMerge, Propensity,
};

use crate::estimands::{Estimand, ObservedRecord};
use crate::error::{Error, Result};

/// Weighted summary of one group of outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CellSummary {
    pub count: usize,
    pub weight_sum: f64,
    pub weight_sq_sum: f64,
    /// `NaN` when the cell is empty.
    pub mean: f64,
    /// Bias-corrected within-cell variance, present from two records on.
    pub variance: Option<f64>,
}

impl CellSummary {
    fn from_pairs<I>(pairs: I) -> Self
    where
        I: Iterator<Item = (f64, f64)> + Clone,
    {
        let (mut count, mut sw, mut sw2, mut swy) = (0usize, 0.0, 0.0, 0.0);
        for (y, w) in pairs.clone() {
            count += 1;
            sw += w;
            sw2 += w * w;
            swy += w * y;
        }
        if count == 0 {
            return Self {
                mean: f64::NAN,
                ..Self::default()
            };
        }
        let mean = swy / sw;
        let variance = (count >= 2).then(|| {
            let ss: f64 = pairs.map(|(y, w)| w * (y - mean) * (y - mean)).sum();
            ss / sw * count as f64 / (count - 1) as f64
        });
        Self {
            count,
            weight_sum: sw,
            weight_sq_sum: sw2,
            mean,
            variance,
        }
    }

    /// Variance of the cell mean, `s^2 * sum(w^2) / sum(w)^2`.
    pub fn mean_variance(&self) -> Option<f64> {
        self.variance
            .map(|v| v * self.weight_sq_sum / (self.weight_sum * self.weight_sum))
    }

    /// Kish effective sample size.
    pub fn effective_size(&self) -> f64 {
        self.weight_sum * self.weight_sum / self.weight_sq_sum
    }
}

/// Mediator marginal from one source plus `(t, m)` cell summaries from
/// another.
#[derive(Debug, Clone, PartialEq)]
pub struct CellStatistics {
    support: usize,
    p_hat: Vec<f64>,
    n_phat: usize,
    n_phat_effective: f64,
    cells: [Vec<CellSummary>; 2],
}

impl CellStatistics {
    pub fn mediator_support(&self) -> usize {
        self.support
    }

    /// `p̂(M = m)` for every level.
    pub fn p_hat(&self) -> &[f64] {
        &self.p_hat
    }

    pub fn n_phat(&self) -> usize {
        self.n_phat
    }

    /// Kish effective size of the mediator-marginal source.
    pub fn n_phat_effective(&self) -> f64 {
        self.n_phat_effective
    }

    pub fn cell(&self, t: usize, m: usize) -> &CellSummary {
        &self.cells[t][m]
    }

    pub fn cell_count(&self, t: usize, m: usize) -> usize {
        self.cells[t][m].count
    }

    pub fn cell_mean(&self, t: usize, m: usize) -> Option<f64> {
        let c = &self.cells[t][m];
        (c.count > 0).then_some(c.mean)
    }

    pub fn cell_var(&self, t: usize, m: usize) -> Option<f64> {
        self.cells[t][m].variance
    }

    fn require_cell(&self, t: usize, m: usize, label: &dyn Fn(usize, usize) -> String) -> Result<f64> {
        self.cell_mean(t, m)
            .ok_or_else(|| Error::EmptyCell { cell: label(t, m) })
    }
}

fn cell_label(t: usize, m: usize) -> String {
    format!("(t={t}, m={m})")
}

pub(crate) fn check_records(records: &[ObservedRecord], support: usize, what: &str) -> Result<()> {
    if records.is_empty() {
        return Err(Error::domain(format!("{what} is empty")));
    }
    for (i, r) in records.iter().enumerate() {
        if r.mediator >= support {
            return Err(Error::domain(format!(
                "{what} record {i}: mediator level {} outside support 0..{support}",
                r.mediator
            )));
        }
        if !(r.weight.is_finite() && r.weight > 0.0) {
            return Err(Error::domain(format!(
                "{what} record {i}: weight {} must be positive and finite",
                r.weight
            )));
        }
        if !r.outcome.is_finite() {
            return Err(Error::domain(format!("{what} record {i}: outcome is not finite")));
        }
    }
    Ok(())
}

/// Weighted mediator distribution of `records`, plus `sum(w)` and `sum(w^2)`.
pub(crate) fn mediator_distribution<'a, I>(records: I, support: usize) -> (Vec<f64>, f64, f64)
where
    I: IntoIterator<Item = &'a ObservedRecord>,
{
    let mut mass = vec![0.0; support];
    let (mut sw, mut sw2) = (0.0, 0.0);
    for r in records {
        mass[r.mediator] += r.weight;
        sw += r.weight;
        sw2 += r.weight * r.weight;
    }
    for v in &mut mass {
        *v /= sw;
    }
    (mass, sw, sw2)
}

/// Aggregates `p_source` into `p̂(M)` and `cell_source` into `(t, m)` cells.
/// Empty cells are kept with count zero.
pub fn fit_cell_statistics(
    p_source: &[ObservedRecord],
    cell_source: &[ObservedRecord],
    support: usize,
) -> Result<CellStatistics> {
    if support == 0 {
        return Err(Error::domain("mediator support must be at least one level"));
    }
    check_records(p_source, support, "mediator-marginal source")?;
    check_records(cell_source, support, "cell source")?;
    let (p_hat, sw, sw2) = mediator_distribution(p_source, support);
    let cells = [0usize, 1].map(|t| {
        (0..support)
            .map(|m| {
                CellSummary::from_pairs(
                    cell_source
                        .iter()
                        .filter(move |r| r.t() == t && r.mediator == m)
                        .map(|r| (r.outcome, r.weight)),
                )
            })
            .collect()
    });
    Ok(CellStatistics {
        support,
        p_hat,
        n_phat: p_source.len(),
        n_phat_effective: sw * sw / sw2,
        cells,
    })
}

/// Result of one estimator run.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport {
    pub tag: Estimand,
    pub estimate: f64,
    pub se: Option<f64>,
    /// Record counts per data source.
    pub n_used: BTreeMap<String, usize>,
    pub notes: Vec<String>,
}

impl EstimateReport {
    fn new(tag: Estimand, estimate: f64, se: Option<f64>) -> Self {
        Self {
            tag,
            estimate,
            se,
            n_used: BTreeMap::new(),
            notes: Vec::new(),
        }
    }

    fn with_count(mut self, source: &str, n: usize) -> Self {
        self.n_used.insert(source.to_owned(), n);
        self
    }

    fn note(mut self, note: impl Into<String>) -> Self {
        self.notes.push(note.into());
        self
    }

    /// One-line JSON rendering used by the CLI.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "estimand": self.tag.to_string(),
            "estimate": self.estimate,
            "se": self.se,
            "n_used": self.n_used,
            "notes": self.notes,
        })
    }
}

/// Inputs of the delta-method variance of the WCDE estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaVarianceInputs {
    /// `d̂_m = ȳ_{1|m} - ȳ_{0|m}`.
    pub d_hat: Vec<f64>,
    pub p_hat: Vec<f64>,
    /// Size of the sample behind `p_hat` (effective size when weighted).
    pub n_phat: f64,
    /// Variances of the cell means, indexed `[t][m]`.
    pub mean_variances: [Vec<f64>; 2],
}

/// `d'(diag(p) - pp')d`, evaluated in the centred form
/// `sum p_m (d_m - p'd)^2 + (p'd)^2 (1 - sum p)` and clamped at zero.
pub(crate) fn multinomial_quadratic(p: &[f64], d: &[f64]) -> f64 {
    let centre: f64 = p.iter().zip(d).map(|(p, d)| p * d).sum();
    let total: f64 = p.iter().sum();
    let spread: f64 = p
        .iter()
        .zip(d)
        .map(|(p, d)| p * (d - centre) * (d - centre))
        .sum();
    (spread + centre * centre * (1.0 - total)).max(0.0)
}

/// Delta-method variance of `sum_m p̂_m d̂_m` with `p̂` and the cell means
/// from independent samples:
/// `d'(diag(p) - pp')d / N_p + sum_m p_m^2 (V(ȳ_{1|m}) + V(ȳ_{0|m}))`.
pub fn wcde_variance(inputs: &DeltaVarianceInputs) -> Result<f64> {
    let k = inputs.p_hat.len();
    if inputs.d_hat.len() != k || inputs.mean_variances.iter().any(|v| v.len() != k) {
        return Err(Error::domain("delta-method inputs have mismatched lengths"));
    }
    if inputs.n_phat.is_nan() || inputs.n_phat < 1.0 {
        return Err(Error::domain(format!(
            "mediator-marginal sample size {} must be at least 1",
            inputs.n_phat
        )));
    }
    if inputs.p_hat.iter().any(|p| p.is_nan() || *p < 0.0) {
        return Err(Error::domain("mediator proportions must be nonnegative"));
    }
    let mv = &inputs.mean_variances;
    if mv.iter().flatten().any(|v| v.is_nan() || *v < 0.0) {
        return Err(Error::domain("cell-mean variances must be nonnegative"));
    }
    let multinomial = multinomial_quadratic(&inputs.p_hat, &inputs.d_hat) / inputs.n_phat;
    let sampling: f64 = (0..k)
        .map(|m| inputs.p_hat[m] * inputs.p_hat[m] * (mv[1][m] + mv[0][m]))
        .sum();
    Ok(multinomial + sampling)
}

/// Difference of weighted arm means, with a two-sample standard error.
pub fn estimate_ate(records: &[ObservedRecord]) -> Result<EstimateReport> {
    let support = records.iter().map(|r| r.mediator + 1).max().unwrap_or(1);
    check_records(records, support, "ATE sample")?;
    let arm = |t: usize| {
        CellSummary::from_pairs(
            records
                .iter()
                .filter(move |r| r.t() == t)
                .map(|r| (r.outcome, r.weight)),
        )
    };
    let (treated, control) = (arm(1), arm(0));
    for (name, summary) in [("treated", &treated), ("control", &control)] {
        if summary.count == 0 {
            return Err(Error::Estimation(format!("ATE: the {name} arm is empty")));
        }
    }
    let se = match (treated.mean_variance(), control.mean_variance()) {
        (Some(a), Some(b)) => Some((a + b).sqrt()),
        _ => None,
    };
    let mut report = EstimateReport::new(Estimand::Ate, treated.mean - control.mean, se)
        .with_count("treated", treated.count)
        .with_count("control", control.count);
    if se.is_none() {
        report = report.note("standard error unavailable: an arm has a single record");
    }
    Ok(report)
}

/// `sum_m p̂_m (ȳ_{1|m} - ȳ_{0|m})` over levels with positive mass, with the
/// delta-method standard error when every needed cell variance exists.
pub fn estimate_wcde(stats: &CellStatistics) -> Result<EstimateReport> {
    let k = stats.support;
    let mut d_hat = vec![0.0; k];
    let mut mean_variances = [vec![0.0; k], vec![0.0; k]];
    let mut estimate = 0.0;
    let mut se_available = true;
    for m in 0..k {
        if stats.p_hat[m] <= 0.0 {
            continue;
        }
        let y1 = stats.require_cell(1, m, &cell_label)?;
        let y0 = stats.require_cell(0, m, &cell_label)?;
        d_hat[m] = y1 - y0;
        estimate += stats.p_hat[m] * d_hat[m];
        for (t, slot) in mean_variances.iter_mut().enumerate() {
            match stats.cell(t, m).mean_variance() {
                Some(v) => slot[m] = v,
                None => se_available = false,
            }
        }
    }
    let mut report = EstimateReport::new(Estimand::Wcde, estimate, None)
        .with_count("mediator_source", stats.n_phat)
        .with_count(
            "cell_source",
            stats.cells.iter().flatten().map(|c| c.count).sum(),
        );
    if se_available {
        let var = wcde_variance(&DeltaVarianceInputs {
            d_hat,
            p_hat: stats.p_hat.clone(),
            n_phat: stats.n_phat_effective,
            mean_variances,
        })?;
        report.se = Some(var.sqrt());
    } else {
        report = report.note("standard error unavailable: a required cell has a single record");
    }
    Ok(report)
}

/// `IIE = ATE - WCDE`.
pub fn estimate_iie(ate: &EstimateReport, wcde: &EstimateReport) -> EstimateReport {
    let se = match (ate.se, wcde.se) {
        (Some(a), Some(b)) => Some((a * a + b * b).sqrt()),
        _ => None,
    };
    let mut report = EstimateReport::new(Estimand::Iie, ate.estimate - wcde.estimate, se)
        .note("standard error treats the ATE and WCDE estimates as independent (approximation)");
    for (source, n) in ate.n_used.iter().chain(&wcde.n_used) {
        report = report.with_count(source, *n);
    }
    report
}

/// `ȳ_{1|m} - ȳ_{0|m}` with a two-sample standard error.
pub fn estimate_cde(stats: &CellStatistics, m: usize) -> Result<EstimateReport> {
    if m >= stats.support {
        return Err(Error::domain(format!(
            "mediator level {m} outside support 0..{}",
            stats.support
        )));
    }
    let y1 = stats.require_cell(1, m, &cell_label)?;
    let y0 = stats.require_cell(0, m, &cell_label)?;
    let se = match (stats.cell(1, m).mean_variance(), stats.cell(0, m).mean_variance()) {
        (Some(a), Some(b)) => Some((a + b).sqrt()),
        _ => None,
    };
    Ok(EstimateReport::new(Estimand::Cde(m), y1 - y0, se)
        .with_count("treated", stats.cell_count(1, m))
        .with_count("control", stats.cell_count(0, m)))
}

/// Nonparametric NDE/NIE plug-ins valid under sequential ignorability:
/// `NDE = 1/2 sum_t sum_m d̂_m p̂(M=m | T=t)` and `NIE = ATE - NDE`, all from
/// the same observational sample.
pub fn estimate_nde_nie_plugin(
    records: &[ObservedRecord],
    support: usize,
) -> Result<(EstimateReport, EstimateReport)> {
    let ate = estimate_ate(records)?;
    let stats = fit_cell_statistics(records, records, support)?;
    let arm_distribution = |t: usize| mediator_distribution(records.iter().filter(|r| r.t() == t), support);
    let (q1, sw1, sw1_sq) = arm_distribution(1);
    let (q0, sw0, sw0_sq) = arm_distribution(0);

    let mut d_hat = vec![0.0; support];
    let mut se_terms = Some(0.0);
    for m in 0..support {
        if q1[m] + q0[m] <= 0.0 {
            continue;
        }
        let y1 = stats.require_cell(1, m, &cell_label)?;
        let y0 = stats.require_cell(0, m, &cell_label)?;
        d_hat[m] = y1 - y0;
        let avg = (q1[m] + q0[m]) / 2.0;
        se_terms = match (se_terms, stats.cell(1, m).mean_variance(), stats.cell(0, m).mean_variance()) {
            (Some(acc), Some(a), Some(b)) => Some(acc + avg * avg * (a + b)),
            _ => None,
        };
    }
    let weighted = |q: &[f64]| -> f64 { q.iter().zip(&d_hat).map(|(q, d)| q * d).sum() };
    let nde_value = 0.5 * (weighted(&q1) + weighted(&q0));

    let nde_se = se_terms.map(|sampling| {
        let multinomial = multinomial_quadratic(&q1, &d_hat) / (sw1 * sw1 / sw1_sq)
            + multinomial_quadratic(&q0, &d_hat) / (sw0 * sw0 / sw0_sq);
        (sampling + 0.25 * multinomial).sqrt()
    });
    let mut nde = EstimateReport::new(Estimand::Nde, nde_value, nde_se)
        .with_count("observational", records.len())
        .note("valid only under sequential ignorability");
    if nde_se.is_none() {
        nde = nde.note("standard error unavailable: a required cell has a single record");
    }
    let nie = EstimateReport::new(Estimand::Nie, ate.estimate - nde_value, None)
        .with_count("observational", records.len())
        .note("computed as ATE - NDE; no standard error");
    Ok((nde, nie))
}

/// Human-readable multi-line summary of a set of reports.
pub fn format_reports(reports: &[EstimateReport]) -> String {
    let mut out = String::new();
    for r in reports {
        let se = r.se.map_or_else(|| "-".to_owned(), |s| format!("{s:.6}"));
        let _ = writeln!(out, "{:<8} {:>12.6}  se {se}", r.tag.to_string(), r.estimate);
    }
    out
}
