//! The replication grid: estimator-vs-truth comparison over `(p, phi)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{
    estimate_design_ate, estimate_design_wcde, run_two_group_design, AteSource, DesignOptions,
};
use crate::estimands::{Estimand, ObservedRecord};
use crate::error::{Error, Result};
use crate::estimators::{
    apply_level_merge, estimate_ate, estimate_iie, estimate_nde_nie_plugin, plan_level_merge,
    EstimateReport,
};
use crate::rng::{stream, stream_id, Purpose};
use crate::simulator::{compute_truth, make_oracle, MixtureSampler, SimulationConfig, TruthEntry, TruthTable};
use crate::stats::Moments;

/// Estimands reported per grid cell, in output order.
pub const GRID_ESTIMANDS: [Estimand; 5] = [
    Estimand::Ate,
    Estimand::Wcde,
    Estimand::Iie,
    Estimand::Nde,
    Estimand::Nie,
];

/// Minimum records per cell when sparse mediator levels are merged.
pub const MERGE_MIN_COUNT: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub p_values: Vec<f64>,
    pub phi_values: Vec<f64>,
    pub replications: usize,
    pub n: usize,
    pub master_seed: u64,
    pub truth_pop_size: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            p_values: vec![0.01, 0.1, 0.3, 0.5],
            phi_values: vec![-0.15, -0.1, -0.05, 0.0, 0.05, 0.1, 0.15],
            replications: 1000,
            n: 4000,
            master_seed: 20_240_601,
            truth_pop_size: crate::simulator::DEFAULT_TRUTH_POPULATION,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.p_values.is_empty() || self.phi_values.is_empty() {
            return Err(Error::Config("grid needs at least one p and one phi value".into()));
        }
        if self.replications < 2 {
            return Err(Error::Config("grid needs at least 2 replications".into()));
        }
        if self.n < 2 {
            return Err(Error::Config("sample size must be at least 2".into()));
        }
        if self.p_values.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config("p values must lie in [0, 1]".into()));
        }
        if self.truth_pop_size == 0 {
            return Err(Error::Config("truth population size must be positive".into()));
        }
        Ok(())
    }
}

/// Which truth the NDE comparator is scored against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum NdeReference {
    /// The population NDE.
    #[default]
    Nde,
    /// The population WCDE.
    Wcde,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RunOptions {
    pub ate_source: AteSource,
    pub merge_sparse_cells: bool,
    pub nde_reference: NdeReference,
    pub design: DesignOptions,
}

/// One estimate and its standard error from a single replication.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Draw {
    pub estimate: f64,
    pub se: Option<f64>,
}

impl From<&EstimateReport> for Draw {
    fn from(r: &EstimateReport) -> Self {
        Self {
            estimate: r.estimate,
            se: r.se,
        }
    }
}

/// Estimates from one replication. `None` marks an estimator that could not
/// run because a required cell was empty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplicationOutcome {
    pub ate: Option<Draw>,
    pub wcde: Option<Draw>,
    pub iie: Option<Draw>,
    pub nde: Option<Draw>,
    pub nie: Option<Draw>,
    /// `IIE = ATE - WCDE` and `NIE = ATE_obs - NDE` held bit for bit.
    pub identities_exact: bool,
}

impl ReplicationOutcome {
    pub fn get(&self, estimand: Estimand) -> Option<Draw> {
        match estimand {
            Estimand::Ate => self.ate,
            Estimand::Wcde => self.wcde,
            Estimand::Iie => self.iie,
            Estimand::Nde => self.nde,
            Estimand::Nie => self.nie,
            Estimand::Cde(_) => None,
        }
    }
}

fn tolerate_sparse<T>(result: Result<T>) -> Result<Option<T>> {
    match result {
        Ok(v) => Ok(Some(v)),
        Err(e) if e.is_sparse_data() => Ok(None),
        Err(e) => Err(e),
    }
}

fn nde_plugin(records: &[ObservedRecord], merge: bool) -> Result<(EstimateReport, EstimateReport)> {
    if merge {
        let plan = plan_level_merge(records, 2, MERGE_MIN_COUNT);
        estimate_nde_nie_plugin(&apply_level_merge(records, &plan), plan.merged_support())
    } else {
        estimate_nde_nie_plugin(records, 2)
    }
}

/// Draws one population of `n` units, runs the two-group design on it and
/// evaluates every estimator.
pub fn run_replication<R: rand::Rng + ?Sized>(
    sampler: &MixtureSampler,
    n: usize,
    p: f64,
    options: &RunOptions,
    rng: &mut R,
) -> Result<ReplicationOutcome> {
    let population = sampler.sample_population(n, rng);
    let oracle = make_oracle(&population)?;
    let ds = run_two_group_design(&oracle, n, p, &options.design, rng)?;

    let merge = options.merge_sparse_cells.then_some(MERGE_MIN_COUNT);
    let ate = tolerate_sparse(estimate_design_ate(&ds, options.ate_source))?;
    let wcde = tolerate_sparse(estimate_design_wcde(&ds, merge))?;
    let iie = match (&ate, &wcde) {
        (Some(a), Some(w)) => Some(estimate_iie(a, w)),
        _ => None,
    };
    let plugin = tolerate_sparse(nde_plugin(&ds.observational, options.merge_sparse_cells))?;
    let ate_obs = tolerate_sparse(estimate_ate(&ds.observational))?;

    let mut identities_exact = true;
    if let (Some(a), Some(w), Some(i)) = (&ate, &wcde, &iie) {
        identities_exact &= i.estimate == a.estimate - w.estimate;
    }
    if let (Some(a), Some((nde, nie))) = (&ate_obs, &plugin) {
        identities_exact &= nie.estimate == a.estimate - nde.estimate;
    }
    Ok(ReplicationOutcome {
        ate: ate.as_ref().map(Draw::from),
        wcde: wcde.as_ref().map(Draw::from),
        iie: iie.as_ref().map(Draw::from),
        nde: plugin.as_ref().map(|(nde, _)| Draw::from(nde)),
        nie: plugin.as_ref().map(|(_, nie)| Draw::from(nie)),
        identities_exact,
    })
}

/// Runs `replications` replications of one cell on their own streams.
pub fn run_cell_replications(
    config: &SimulationConfig,
    cell_index: u32,
    replications: usize,
    options: &RunOptions,
    master_seed: u64,
) -> Result<Vec<ReplicationOutcome>> {
    let sampler = config.sampler()?;
    (0..replications)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream(master_seed, stream_id(Purpose::Replication, cell_index, r as u32));
            run_replication(&sampler, config.n, config.p_treat, options, &mut rng)
        })
        .collect()
}

/// Aggregated result for one `(p, phi, estimand)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridResultRow {
    pub p: f64,
    pub phi: f64,
    pub estimand: Estimand,
    pub truth: f64,
    pub truth_mc_se: Option<f64>,
    pub mean_estimate: f64,
    /// `mean_estimate - truth`.
    pub bias: f64,
    pub sd_estimates: f64,
    pub mean_delta_se: Option<f64>,
    pub mean_delta_var: Option<f64>,
    /// Replications that produced an estimate.
    pub replications: usize,
    /// Replications skipped because a required cell was empty.
    pub dropped: usize,
    pub status: String,
}

impl GridResultRow {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }

    /// `sd / sqrt(replications)`.
    pub fn mc_se(&self) -> f64 {
        self.sd_estimates / (self.replications as f64).sqrt()
    }

    fn aborted(p: f64, phi: f64, estimand: Estimand, truth: Option<&TruthEntry>, reason: &str) -> Self {
        let t = truth.and_then(|t| t.get(estimand));
        Self {
            p,
            phi,
            estimand,
            truth: t.map_or(f64::NAN, |v| v.value),
            truth_mc_se: t.and_then(|v| v.mc_se),
            mean_estimate: f64::NAN,
            bias: f64::NAN,
            sd_estimates: f64::NAN,
            mean_delta_se: None,
            mean_delta_var: None,
            replications: 0,
            dropped: 0,
            status: format!("aborted: {reason}"),
        }
    }
}

/// Aggregates replications into rows for every grid estimand.
pub fn aggregate_cell(
    p: f64,
    phi: f64,
    truth: &TruthEntry,
    outcomes: &[ReplicationOutcome],
    nde_reference: NdeReference,
) -> Vec<GridResultRow> {
    GRID_ESTIMANDS
        .iter()
        .map(|&estimand| {
            let reference = match (estimand, nde_reference) {
                (Estimand::Nde, NdeReference::Wcde) => &truth.wcde,
                _ => truth.get(estimand).expect("grid estimands have truths"),
            };
            let draws: Vec<Draw> = outcomes.iter().filter_map(|o| o.get(estimand)).collect();
            let estimates: Moments = draws.iter().map(|d| d.estimate).collect();
            let ses: Moments = draws.iter().filter_map(|d| d.se).collect();
            let vars: Moments = draws.iter().filter_map(|d| d.se.map(|s| s * s)).collect();
            let mean = estimates.mean();
            let status = if draws.len() >= 2 {
                "ok".to_owned()
            } else {
                format!("insufficient: {} successful replications", draws.len())
            };
            GridResultRow {
                p,
                phi,
                estimand,
                truth: reference.value,
                truth_mc_se: reference.mc_se,
                mean_estimate: mean,
                bias: mean - reference.value,
                sd_estimates: estimates.std_dev().unwrap_or(f64::NAN),
                mean_delta_se: (ses.count() > 0).then(|| ses.mean()),
                mean_delta_var: (vars.count() > 0).then(|| vars.mean()),
                replications: draws.len(),
                dropped: outcomes.len() - draws.len(),
                status,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridOutput {
    pub rows: Vec<GridResultRow>,
    pub truth: TruthTable,
    /// Replications in which a decomposition identity failed to hold exactly.
    pub identity_violations: usize,
}

/// Runs the full study: one truth population per `phi`, then `replications`
/// design replications per `(p, phi)` cell. Output rows are sorted by `p`,
/// `phi` and estimand, and depend only on the inputs and `master_seed`.
pub fn run_grid(spec: &GridSpec, base: &SimulationConfig, options: &RunOptions) -> Result<GridOutput> {
    spec.validate()?;
    let base = SimulationConfig {
        seed: spec.master_seed,
        n: spec.n,
        replications: spec.replications,
        ..base.clone()
    };
    let mut truth = TruthTable {
        population_size: spec.truth_pop_size,
        entries: Vec::new(),
    };
    for &phi in &spec.phi_values {
        truth.merge(compute_truth(&base.with_phi(phi), &spec.p_values, spec.truth_pop_size)?);
    }

    let mut rows = Vec::with_capacity(spec.p_values.len() * spec.phi_values.len() * GRID_ESTIMANDS.len());
    let mut identity_violations = 0;
    for (k, &phi) in spec.phi_values.iter().enumerate() {
        for (i, &p) in spec.p_values.iter().enumerate() {
            let entry = truth.lookup(p, phi).expect("truth computed for every cell");
            let cell_index = (k * spec.p_values.len() + i) as u32;
            let config = base.with_phi(phi).with_p(p);
            match run_cell_replications(&config, cell_index, spec.replications, options, spec.master_seed) {
                Ok(outcomes) => {
                    identity_violations += outcomes.iter().filter(|o| !o.identities_exact).count();
                    rows.extend(aggregate_cell(p, phi, entry, &outcomes, options.nde_reference));
                }
                Err(e) => rows.extend(
                    GRID_ESTIMANDS
                        .iter()
                        .map(|&est| GridResultRow::aborted(p, phi, est, Some(entry), &e.to_string())),
                ),
            }
        }
    }
    let order = |e: Estimand| GRID_ESTIMANDS.iter().position(|x| *x == e).unwrap_or(usize::MAX);
    rows.sort_by(|a, b| {
        a.p.total_cmp(&b.p)
            .then(a.phi.total_cmp(&b.phi))
            .then(order(a.estimand).cmp(&order(b.estimand)))
    });
    Ok(GridOutput {
        rows,
        truth,
        identity_violations,
    })
}
