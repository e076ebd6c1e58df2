//! The mixture-of-normals data-generating process and its truth oracle.
//!
//! Each unit's vector `W = (M_0^L, M_1^L, Y_0(0), Y_0(1), Y_1(0), Y_1(1))`
//! is drawn from a scale mixture `sum_k w_k N(mu, s_k Sigma(phi))`; the
//! mediators are the latent values thresholded at zero. `phi` couples the
//! potential mediators to the potential outcomes and is the knob that breaks
//! sequential ignorability.

use std::io::Write;
use std::path::Path;

use nalgebra::{Matrix6, Vector6};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::ExperimentOracle;
use crate::estimands::{
    unit_ate, unit_nde, unit_nie, unit_wcde, Estimand, EstimandValue, ObservedRecord,
    PotentialTable,
};
use crate::error::{Error, Result};
use crate::rng::{stream, stream_id, Purpose};
use crate::stats::Moments;

/// Index of each coordinate of `W`.
pub const M0_LATENT: usize = 0;
pub const M1_LATENT: usize = 1;
pub const Y0_AT_0: usize = 2;
pub const Y0_AT_1: usize = 3;
pub const Y1_AT_0: usize = 4;
pub const Y1_AT_1: usize = 5;

/// Default truth-population size.
pub const DEFAULT_TRUTH_POPULATION: usize = 4_000_000;

const TRUTH_CHUNK: usize = 1 << 16;

/// Missing fields take their default values when deserialized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationConfig {
    pub mixture_weights: Vec<f64>,
    /// Covariance multiplier of each mixture component.
    pub scale_factors: Vec<f64>,
    pub mean: [f64; 6],
    pub phi: f64,
    pub outcome_cov: f64,
    pub mediator_cov: f64,
    pub p_treat: f64,
    pub n: usize,
    pub seed: u64,
    pub replications: usize,
    /// Copy `M_0^L` into `M_1^L` so the treatment never moves the mediator.
    pub identical_mediators: bool,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            mixture_weights: vec![0.6, 0.4],
            scale_factors: vec![1.0, 2.0],
            mean: [-1.0, 1.0, 0.0, 0.2, 0.6, 1.0],
            phi: 0.0,
            outcome_cov: 0.5,
            mediator_cov: 0.6,
            p_treat: 0.5,
            n: 4000,
            seed: 20_240_601,
            replications: 1000,
            identical_mediators: false,
        }
    }
}

impl SimulationConfig {
    pub fn with_phi(&self, phi: f64) -> Self {
        Self { phi, ..self.clone() }
    }

    pub fn with_p(&self, p_treat: f64) -> Self {
        Self {
            p_treat,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sampler().map(|_| ())
    }

    /// Validates the configuration and prepares the component factors.
    pub fn sampler(&self) -> Result<MixtureSampler> {
        let k = self.mixture_weights.len();
        if k == 0 || self.scale_factors.len() != k {
            return Err(Error::Config(
                "mixture weights and scale factors must be nonempty and of equal length".into(),
            ));
        }
        if self.mixture_weights.iter().any(|w| w.is_nan() || *w <= 0.0) {
            return Err(Error::Config("mixture weights must be positive".into()));
        }
        let total: f64 = self.mixture_weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("mixture weights sum to {total}, not 1")));
        }
        if self.scale_factors.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::Config("scale factors must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.p_treat) {
            return Err(Error::Config(format!(
                "treatment probability {} outside [0, 1]",
                self.p_treat
            )));
        }
        if self.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::Config("mean vector must be finite".into()));
        }
        let sigma = build_sigma(self.phi, self.outcome_cov, self.mediator_cov)?;
        let lower = sigma
            .cholesky()
            .expect("build_sigma only returns positive definite matrices")
            .l();
        let factors = self.scale_factors.iter().map(|s| lower * s.sqrt()).collect();
        let mut acc = 0.0;
        let cumulative = self
            .mixture_weights
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        Ok(MixtureSampler {
            mean: Vector6::from_column_slice(&self.mean),
            factors,
            cumulative,
            identical_mediators: self.identical_mediators,
        })
    }
}

/// `Sigma(phi)` over `(M_0^L, M_1^L, Y_0(0), Y_0(1), Y_1(0), Y_1(1))`: unit
/// diagonal, `mediator_cov` between the two latent mediators,
/// `outcome_cov` between any two potential outcomes, `+phi` between `M_j^L`
/// and the outcomes at level `j`, and `-phi` between `M_j^L` and the outcomes
/// at the other level.
pub fn build_sigma(phi: f64, outcome_cov: f64, mediator_cov: f64) -> Result<Matrix6<f64>> {
    let mut s = Matrix6::<f64>::identity();
    let mut set = |i: usize, j: usize, v: f64| {
        s[(i, j)] = v;
        s[(j, i)] = v;
    };
    set(M0_LATENT, M1_LATENT, mediator_cov);
    let outcomes = [Y0_AT_0, Y0_AT_1, Y1_AT_0, Y1_AT_1];
    for (a, &i) in outcomes.iter().enumerate() {
        for &j in &outcomes[a + 1..] {
            set(i, j, outcome_cov);
        }
    }
    for (latent, own, other) in [
        (M0_LATENT, [Y0_AT_0, Y1_AT_0], [Y0_AT_1, Y1_AT_1]),
        (M1_LATENT, [Y0_AT_1, Y1_AT_1], [Y0_AT_0, Y1_AT_0]),
    ] {
        for y in own {
            set(latent, y, phi);
        }
        for y in other {
            set(latent, y, -phi);
        }
    }
    if !s.iter().all(|v| v.is_finite()) || s.cholesky().is_none() {
        return Err(Error::Config(format!(
            "covariance matrix is not positive definite at phi = {phi} \
             (outcome_cov = {outcome_cov}, mediator_cov = {mediator_cov})"
        )));
    }
    Ok(s)
}

/// Prepared sampler for one configuration.
#[derive(Debug, Clone)]
pub struct MixtureSampler {
    mean: Vector6<f64>,
    factors: Vec<Matrix6<f64>>,
    cumulative: Vec<f64>,
    identical_mediators: bool,
}

impl MixtureSampler {
    pub fn sample_vector<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector6<f64> {
        let u: f64 = rng.random();
        let component = self
            .cumulative
            .iter()
            .position(|&c| u < c)
            .unwrap_or(self.factors.len() - 1);
        let z = Vector6::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
        self.mean + self.factors[component] * z
    }

    pub fn sample_unit<R: Rng + ?Sized>(&self, rng: &mut R) -> PotentialTable {
        let w = self.sample_vector(rng);
        let table = PotentialTable::from_latent(
            w[M0_LATENT],
            w[M1_LATENT],
            [[w[Y0_AT_0], w[Y0_AT_1]], [w[Y1_AT_0], w[Y1_AT_1]]],
        )
        .expect("finite mean and factors give finite draws");
        if self.identical_mediators {
            table.with_identical_mediators()
        } else {
            table
        }
    }

    pub fn sample_population<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<PotentialTable> {
        (0..count).map(|_| self.sample_unit(rng)).collect()
    }
}

/// Draws `count` units from the stream `stream_id` of `config.seed`.
pub fn sample_population(config: &SimulationConfig, count: usize, stream_id: u64) -> Result<Vec<PotentialTable>> {
    let sampler = config.sampler()?;
    let mut rng = stream(config.seed, stream_id);
    Ok(sampler.sample_population(count, &mut rng))
}

/// Answers design queries from a fully observed population.
#[derive(Debug, Clone, Copy)]
pub struct PopulationOracle<'a> {
    population: &'a [PotentialTable],
}

impl ExperimentOracle for PopulationOracle<'_> {
    fn unit_count(&self) -> usize {
        self.population.len()
    }

    fn mediator_support(&self) -> usize {
        2
    }

    fn respond_natural(&self, unit: usize, t: usize) -> Result<(usize, f64)> {
        let table = self.unit(unit, t)?;
        Ok((table.mediator(t), table.natural_outcome(t)))
    }

    fn respond_controlled(&self, unit: usize, t: usize, m: usize) -> Result<f64> {
        let table = self.unit(unit, t)?;
        if m > 1 {
            return Err(Error::domain(format!("mediator level {m} outside binary support")));
        }
        Ok(table.outcome(t, m))
    }
}

impl PopulationOracle<'_> {
    fn unit(&self, unit: usize, t: usize) -> Result<&PotentialTable> {
        if t > 1 {
            return Err(Error::domain(format!("treatment {t} is not binary")));
        }
        self.population
            .get(unit)
            .ok_or_else(|| Error::domain(format!("unit {unit} out of range 0..{}", self.population.len())))
    }
}

pub fn make_oracle(population: &[PotentialTable]) -> Result<PopulationOracle<'_>> {
    if population.is_empty() {
        return Err(Error::domain("cannot build an oracle from an empty population"));
    }
    Ok(PopulationOracle { population })
}

/// Draws `T ~ Bernoulli(config.p_treat)` per unit and reveals `M_T` and
/// `Y_T(M_T)`.
pub fn generate_observational<R: Rng + ?Sized>(
    config: &SimulationConfig,
    population: &[PotentialTable],
    rng: &mut R,
) -> Result<Vec<ObservedRecord>> {
    if !(0.0..=1.0).contains(&config.p_treat) {
        return Err(Error::Config(format!(
            "treatment probability {} outside [0, 1]",
            config.p_treat
        )));
    }
    Ok(population
        .iter()
        .map(|u| {
            let t = rng.random_bool(config.p_treat) as usize;
            ObservedRecord::new(t == 1, u.mediator(t), u.natural_outcome(t))
        })
        .collect())
}

/// Oracle values for one `(p, phi)` setup.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthEntry {
    pub p: f64,
    pub phi: f64,
    pub ate: EstimandValue,
    pub wcde: EstimandValue,
    pub iie: EstimandValue,
    pub nde: EstimandValue,
    pub nie: EstimandValue,
}

impl TruthEntry {
    pub fn get(&self, estimand: Estimand) -> Option<&EstimandValue> {
        match estimand {
            Estimand::Ate => Some(&self.ate),
            Estimand::Wcde => Some(&self.wcde),
            Estimand::Iie => Some(&self.iie),
            Estimand::Nde => Some(&self.nde),
            Estimand::Nie => Some(&self.nie),
            Estimand::Cde(_) => None,
        }
    }

    /// Largest relative violation of `ATE = WCDE + IIE` and
    /// `ATE = NDE + NIE`.
    pub fn identity_error(&self) -> f64 {
        let rel = |a: f64, b: f64, c: f64| {
            let scale = a.abs().max(b.abs()).max(c.abs()).max(f64::MIN_POSITIVE);
            (a - b - c).abs() / scale
        };
        rel(self.ate.value, self.wcde.value, self.iie.value)
            .max(rel(self.ate.value, self.nde.value, self.nie.value))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruthTable {
    pub population_size: usize,
    pub entries: Vec<TruthEntry>,
}

impl TruthTable {
    pub fn lookup(&self, p: f64, phi: f64) -> Option<&TruthEntry> {
        self.entries.iter().find(|e| e.p == p && e.phi == phi)
    }

    pub fn merge(&mut self, other: TruthTable) {
        self.entries.extend(other.entries);
        self.entries
            .sort_by(|a, b| a.p.total_cmp(&b.p).then(a.phi.total_cmp(&b.phi)));
    }

    /// Delimited export with columns `p, phi, estimand, value, mc_se`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("p,phi,estimand,value,mc_se\n");
        for e in &self.entries {
            for v in [&e.ate, &e.wcde, &e.iie, &e.nde, &e.nie] {
                let se = v.mc_se.map(|s| s.to_string()).unwrap_or_default();
                out.push_str(&format!("{},{},{},{},{}\n", e.p, e.phi, v.tag, v.value, se));
            }
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(self.to_csv().as_bytes()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone)]
struct TruthAccumulator {
    ate: Moments,
    nde: Moments,
    nie: Moments,
    wcde: Vec<Moments>,
    iie: Vec<Moments>,
}

impl TruthAccumulator {
    fn new(k: usize) -> Self {
        Self {
            ate: Moments::new(),
            nde: Moments::new(),
            nie: Moments::new(),
            wcde: vec![Moments::new(); k],
            iie: vec![Moments::new(); k],
        }
    }

    fn push(&mut self, unit: &PotentialTable, p_values: &[f64]) {
        let ate = unit_ate(unit);
        self.ate.push(ate);
        self.nde.push(unit_nde(unit));
        self.nie.push(unit_nie(unit));
        for (i, &p) in p_values.iter().enumerate() {
            let w = unit_wcde(unit, p);
            self.wcde[i].push(w);
            self.iie[i].push(ate - w);
        }
    }

    fn merge(&mut self, other: &TruthAccumulator) {
        self.ate.merge(&other.ate);
        self.nde.merge(&other.nde);
        self.nie.merge(&other.nie);
        for (a, b) in self.wcde.iter_mut().zip(&other.wcde) {
            a.merge(b);
        }
        for (a, b) in self.iie.iter_mut().zip(&other.iie) {
            a.merge(b);
        }
    }
}

fn value(tag: Estimand, m: &Moments) -> EstimandValue {
    EstimandValue {
        tag,
        value: m.mean(),
        mc_se: m.std_error(),
    }
}

/// Applies the estimand oracles to one population of `population_size`
/// units drawn at `config.phi`; the same population serves every `p` in
/// `p_values`. Units are generated in fixed-size chunks on independent
/// streams and merged in chunk order, so the result does not depend on the
/// number of worker threads.
pub fn compute_truth(config: &SimulationConfig, p_values: &[f64], population_size: usize) -> Result<TruthTable> {
    if population_size == 0 {
        return Err(Error::domain("truth population size must be positive"));
    }
    if p_values.is_empty() {
        return Err(Error::domain("no treatment probabilities given"));
    }
    for &p in p_values {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::domain(format!("treatment probability {p} outside [0, 1]")));
        }
    }
    let sampler = config.sampler()?;
    let chunks = population_size.div_ceil(TRUTH_CHUNK);
    let partials: Vec<TruthAccumulator> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream(config.seed, stream_id(Purpose::Truth, 0, c as u32));
            let len = TRUTH_CHUNK.min(population_size - c * TRUTH_CHUNK);
            let mut acc = TruthAccumulator::new(p_values.len());
            for _ in 0..len {
                acc.push(&sampler.sample_unit(&mut rng), p_values);
            }
            acc
        })
        .collect();
    let mut total = TruthAccumulator::new(p_values.len());
    for part in &partials {
        total.merge(part);
    }

    let ate = value(Estimand::Ate, &total.ate);
    let nde = value(Estimand::Nde, &total.nde);
    let nie = value(Estimand::Nie, &total.nie);
    let entries = p_values
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let wcde = value(Estimand::Wcde, &total.wcde[i]);
            TruthEntry {
                p,
                phi: config.phi,
                ate,
                wcde,
                iie: EstimandValue {
                    tag: Estimand::Iie,
                    value: ate.value - wcde.value,
                    mc_se: total.iie[i].std_error(),
                },
                nde,
                nie,
            }
        })
        .collect();
    Ok(TruthTable {
        population_size,
        entries,
    })
}

/// A variant with a binary covariate `v` that raises the treatment
/// propensity, shifts the latent mediators and shifts every potential
/// outcome. With `phi = 0` the mediator is ignorable given `v`, so the
/// stratified estimators are consistent while the pooled ones are not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfoundedConfig {
    pub base: SimulationConfig,
    /// `P(v = 1)`.
    pub stratum_prob: f64,
    /// `P(T = 1 | v)` for `v = 0, 1`.
    pub propensity: [f64; 2],
    pub outcome_shift: f64,
    pub mediator_shift: f64,
}

impl Default for ConfoundedConfig {
    fn default() -> Self {
        Self {
            base: SimulationConfig::default(),
            stratum_prob: 0.5,
            propensity: [0.2, 0.7],
            outcome_shift: 1.0,
            mediator_shift: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfoundedPopulation {
    pub tables: Vec<PotentialTable>,
    pub strata: Vec<u32>,
}

impl ConfoundedConfig {
    fn check(&self) -> Result<MixtureSampler> {
        if !(0.0..=1.0).contains(&self.stratum_prob) || self.propensity.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config("confounded design probabilities must lie in [0, 1]".into()));
        }
        self.base.sampler()
    }

    pub fn sample_population<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Result<ConfoundedPopulation> {
        let sampler = self.check()?;
        let mut tables = Vec::with_capacity(count);
        let mut strata = Vec::with_capacity(count);
        for _ in 0..count {
            let v = rng.random_bool(self.stratum_prob) as u32;
            let shift = v as f64;
            let table = sampler
                .sample_unit(rng)
                .shift_mediators(self.mediator_shift * shift)
                .shift_outcomes(self.outcome_shift * shift);
            tables.push(table);
            strata.push(v);
        }
        Ok(ConfoundedPopulation { tables, strata })
    }

    /// `P(T = 1 | v_i)` for every unit.
    pub fn propensities(&self, population: &ConfoundedPopulation) -> Vec<f64> {
        population
            .strata
            .iter()
            .map(|&v| self.propensity[v as usize])
            .collect()
    }

    /// Observational records with `T ~ Bernoulli(P(T = 1 | v))`.
    pub fn observe<R: Rng + ?Sized>(&self, population: &ConfoundedPopulation, rng: &mut R) -> Vec<ObservedRecord> {
        population
            .tables
            .iter()
            .zip(&population.strata)
            .map(|(u, &v)| {
                let t = rng.random_bool(self.propensity[v as usize]) as usize;
                ObservedRecord::new(t == 1, u.mediator(t), u.natural_outcome(t)).with_stratum(v)
            })
            .collect()
    }
}
