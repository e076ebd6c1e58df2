//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use wcde::estimands::{oracle_ate, oracle_wcde_with_propensity, Estimand};
use wcde::estimators::{
    estimate_ate, estimate_ate_ipw, estimate_wcde, estimate_wcde_stratified, fit_cell_statistics,
    reweight_hypothetical, IpwOptions, Propensity,
};
use wcde::grid::{run_cell_replications, run_grid, GridOutput, GridResultRow, GridSpec, RunOptions};
use wcde::rng::{stream, stream_id, Purpose};
use wcde::simulator::{compute_truth, generate_observational, ConfoundedConfig, SimulationConfig};
use wcde::stats::{spearman, Moments};

const REPS: usize = 1000;
const N: usize = 4000;
const TRUTH_POP: usize = 4_000_000;
const SEED: u64 = 20_240_601;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn row(out: &GridOutput, p: f64, phi: f64, estimand: Estimand) -> &GridResultRow {
    out.rows
        .iter()
        // Grid values are parsed from the same literals, so exact comparison is safe.
        .find(|r| r.p == p && r.phi == phi && r.estimand == estimand)
        .unwrap_or_else(|| panic!("missing row p={p} phi={phi} {estimand}"))
}

/// `sd / sqrt(1000)` as stated, regardless of how many replications were dropped.
fn nominal_mc_se(r: &GridResultRow) -> f64 {
    r.sd_estimates / (REPS as f64).sqrt()
}

fn wcde_unbiased(r: &GridResultRow) -> bool {
    r.is_ok() && r.bias.abs() <= 3.0 * nominal_mc_se(r)
}

fn criterion_1() -> Outcome {
    let config = SimulationConfig::default();
    let sampler = config.sampler().unwrap();
    let draws = 1_000_000;
    let mut rng = stream(SEED, stream_id(Purpose::Auxiliary, 1, 0));
    let (mut m1, mut m0) = (0usize, 0usize);
    for _ in 0..draws {
        let u = sampler.sample_unit(&mut rng);
        m1 += u.mediator(1);
        m0 += u.mediator(0);
    }
    let p1 = m1 as f64 / draws as f64;
    let p0 = m0 as f64 / draws as f64;
    let z = Normal::standard();
    let analytic = 0.6 * z.cdf(1.0) + 0.4 * z.cdf(1.0 / 2f64.sqrt());
    let pass = (0.805..=0.813).contains(&p1) && (0.187..=0.195).contains(&p0);
    outcome(
        pass,
        format!("P(M1=1)={p1:.5} P(M0=1)={p0:.5} analytic={analytic:.5}"),
    )
}

fn criterion_2() -> Outcome {
    let config = SimulationConfig {
        identical_mediators: true,
        ..SimulationConfig::default()
    };
    let p_values = [0.01, 0.1, 0.3, 0.5];
    let truth = compute_truth(&config, &p_values, 1_000_000).unwrap();
    let truth_zero = truth.entries.iter().all(|e| e.iie.value == 0.0);

    let cell = config.with_p(0.5);
    let outcomes = run_cell_replications(&cell, 900, REPS, &RunOptions::default(), SEED).unwrap();
    let iie: Moments = outcomes.iter().filter_map(|o| o.iie.map(|d| d.estimate)).collect();
    let se = iie.std_error().unwrap();
    let mean = iie.mean();
    outcome(
        truth_zero && iie.count() == REPS as u64 && mean.abs() <= 3.0 * se,
        format!("truth IIE exactly 0: {truth_zero}; mean IIE-hat={mean:.5} (3 MC SE = {:.5})", 3.0 * se),
    )
}

fn criterion_3(full: &GridOutput, smoke: &GridOutput, smoke_time: Duration) -> Outcome {
    let check = |out: &GridOutput| {
        out.rows
            .iter()
            .filter(|r| r.estimand == Estimand::Wcde)
            .map(|r| (wcde_unbiased(r), r.bias.abs() / nominal_mc_se(r)))
            .fold((true, 0.0f64, 0usize), |(ok, worst, n), (pass, z)| (ok && pass, worst.max(z), n + 1))
    };
    let (full_ok, full_worst, cells) = check(full);
    let (smoke_ok, smoke_worst, smoke_cells) = check(smoke);
    let fast = smoke_time < Duration::from_secs(120);
    outcome(
        full_ok && cells == 28 && smoke_ok && smoke_cells == 6 && fast,
        format!(
            "{cells} cells, max |bias|/MC SE = {full_worst:.2}; smoke {smoke_cells} cells max {smoke_worst:.2} in {:.1}s",
            smoke_time.as_secs_f64()
        ),
    )
}

fn criterion_4(full: &GridOutput) -> Outcome {
    let nde_bad = row(full, 0.5, -0.15, Estimand::Nde);
    let wcde_bad = row(full, 0.5, -0.15, Estimand::Wcde);
    let nde_null = row(full, 0.5, 0.0, Estimand::Nde);
    let z_bad = nde_bad.bias.abs() / nominal_mc_se(nde_bad);
    let z_null = nde_null.bias.abs() / nominal_mc_se(nde_null);
    outcome(
        z_bad > 5.0 && wcde_unbiased(wcde_bad) && z_null <= 3.0,
        format!(
            "phi=-0.15: NDE |bias|/MC SE = {z_bad:.1}, WCDE {:.2}; phi=0: NDE {z_null:.2}",
            wcde_bad.bias.abs() / nominal_mc_se(wcde_bad)
        ),
    )
}

fn criterion_5(full: &GridOutput, phis: &[f64]) -> Outcome {
    let series = |e: Estimand| -> Vec<&GridResultRow> { phis.iter().map(|&phi| row(full, 0.5, phi, e)).collect() };
    let nde_bias: Vec<f64> = series(Estimand::Nde).iter().map(|r| r.bias).collect();
    let rho = spearman(phis, &nde_bias).unwrap_or(0.0);
    let wcde = series(Estimand::Wcde);
    let above = wcde.iter().filter(|r| r.bias > 2.0 * r.mc_se()).count();
    let below = wcde.iter().filter(|r| r.bias < -2.0 * r.mc_se()).count();
    outcome(
        (rho.abs() - 1.0).abs() < 1e-12 && above.max(below) <= 4,
        format!("NDE bias Spearman rho = {rho}; WCDE cells beyond 2 MC SE: {above} positive, {below} negative"),
    )
}

fn criterion_6(full: &GridOutput) -> Outcome {
    let r = row(full, 0.5, 0.0, Estimand::Wcde);
    let empirical = r.sd_estimates * r.sd_estimates;
    let delta = r.mean_delta_var.unwrap_or(f64::NAN);
    let rel = (delta - empirical).abs() / empirical;
    outcome(
        rel <= 0.15,
        format!("mean delta variance {delta:.6e} vs empirical {empirical:.6e} (rel. diff {rel:.3})"),
    )
}

fn criterion_7(full: &GridOutput, smoke: &GridOutput) -> Outcome {
    let worst = full
        .truth
        .entries
        .iter()
        .map(|e| e.identity_error())
        .fold(0.0f64, f64::max);
    let violations = full.identity_violations + smoke.identity_violations;
    outcome(
        violations == 0 && worst <= 1e-9,
        format!("replication identity violations: {violations}; worst truth relative error {worst:.2e}"),
    )
}

fn criterion_8(full: &GridOutput) -> Outcome {
    let mut pass = full.truth.population_size == TRUTH_POP;
    let mut worst = 0.0f64;
    let mut gaps = Vec::new();
    for e in &full.truth.entries {
        let gap = e.wcde.value - e.nde.value;
        let combined = e.wcde.mc_se.unwrap().hypot(e.nde.mc_se.unwrap());
        if e.p == 0.5 {
            worst = worst.max(gap.abs() / combined);
            pass &= gap.abs() <= 2.0 * combined;
        }
        if e.p == 0.01 && e.phi == 0.0 {
            gaps.push(format!("p=0.01 gap WCDE-NDE = {gap:.5} ({:.1} combined MC SE)", gap / combined));
        }
    }
    outcome(
        pass,
        format!("p=0.5 worst |WCDE-NDE|/combined MC SE = {worst:.3}; {}", gaps.join("; ")),
    )
}

fn criterion_9() -> Outcome {
    let base = SimulationConfig::default();
    let observed_at = base.with_p(0.1);
    let sampler = base.sampler().unwrap();

    let mut rng = stream(SEED, stream_id(Purpose::Auxiliary, 9, u32::MAX));
    let pop = sampler.sample_population(N, &mut rng);
    let recs = generate_observational(&observed_at, &pop, &mut rng).unwrap();
    let p_hat = recs.iter().filter(|r| r.treated).count() as f64 / recs.len() as f64;
    let plain = estimate_wcde(&fit_cell_statistics(&recs, &recs, 2).unwrap()).unwrap();
    let same = reweight_hypothetical(&recs, p_hat).unwrap();
    let again = estimate_wcde(&fit_cell_statistics(&same, &same, 2).unwrap()).unwrap();
    let exact = plain.estimate == again.estimate;

    let truth = compute_truth(&base, &[0.5], TRUTH_POP).unwrap();
    let truth = &truth.entries[0].wcde;
    let estimates: Vec<f64> = (0..REPS as u32)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream(SEED, stream_id(Purpose::Auxiliary, 9, r));
            let pop = sampler.sample_population(N, &mut rng);
            let recs = generate_observational(&observed_at, &pop, &mut rng).unwrap();
            let shifted = reweight_hypothetical(&recs, 0.5).unwrap();
            estimate_wcde(&fit_cell_statistics(&shifted, &shifted, 2).unwrap())
                .unwrap()
                .estimate
        })
        .collect();
    let m: Moments = estimates.into_iter().collect();
    let se = m.std_error().unwrap().hypot(truth.mc_se.unwrap());
    let z = (m.mean() - truth.value) / se;
    outcome(
        exact && z.abs() <= 3.0,
        format!(
            "p*=p_hat exact: {exact}; reweighted mean {:.5} vs truth WCDE(0.5) {:.5} ({z:.2} combined MC SE)",
            m.mean(),
            truth.value
        ),
    )
}

fn criterion_10() -> Outcome {
    let cfg = ConfoundedConfig::default();
    let mut rng = stream(SEED, stream_id(Purpose::Auxiliary, 10, u32::MAX));
    let pop = cfg.sample_population(2_000_000, &mut rng).unwrap();
    let true_wcde = oracle_wcde_with_propensity(&pop.tables, &cfg.propensities(&pop)).unwrap();
    let true_ate = oracle_ate(&pop.tables).unwrap();
    drop(pop);

    let draws: Vec<[f64; 4]> = (0..REPS as u32)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream(SEED, stream_id(Purpose::Auxiliary, 10, r));
            let pop = cfg.sample_population(N, &mut rng).unwrap();
            let recs = cfg.observe(&pop, &mut rng);
            [
                estimate_wcde_stratified(&recs, 2).unwrap().estimate,
                estimate_ate_ipw(&recs, &Propensity::ByStratum, IpwOptions::default())
                    .unwrap()
                    .estimate,
                estimate_wcde(&fit_cell_statistics(&recs, &recs, 2).unwrap())
                    .unwrap()
                    .estimate,
                estimate_ate(&recs).unwrap().estimate,
            ]
        })
        .collect();
    let z = |k: usize, truth: &wcde::EstimandValue| {
        let m: Moments = draws.iter().map(|d| d[k]).collect();
        (m.mean() - truth.value) / m.std_error().unwrap().hypot(truth.mc_se.unwrap())
    };
    let (z_strat, z_ipw) = (z(0, &true_wcde), z(1, &true_ate));
    let (z_naive_wcde, z_naive_ate) = (z(2, &true_wcde), z(3, &true_ate));
    outcome(
        z_strat.abs() <= 3.0 && z_ipw.abs() <= 3.0 && z_naive_wcde.abs() > 3.0 && z_naive_ate.abs() > 3.0,
        format!(
            "combined MC SE units: stratified WCDE {z_strat:.2}, IPW ATE {z_ipw:.2}; naive WCDE {z_naive_wcde:.1}, naive ATE {z_naive_ate:.1}"
        ),
    )
}

fn main() -> ExitCode {
    let base = SimulationConfig::default();
    let full_spec = GridSpec {
        replications: REPS,
        n: N,
        master_seed: SEED,
        truth_pop_size: TRUTH_POP,
        ..GridSpec::default()
    };
    let smoke_spec = GridSpec {
        p_values: vec![0.1, 0.5],
        phi_values: vec![-0.15, 0.0, 0.15],
        master_seed: SEED + 1,
        ..full_spec.clone()
    };

    let mut failures = 0;
    let mut report = |id: u32, o: Outcome| {
        println!("criterion {id:>2}: {} | {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failures += usize::from(!o.pass);
    };

    report(1, criterion_1());
    report(2, criterion_2());

    let start = Instant::now();
    let smoke = run_grid(&smoke_spec, &base, &RunOptions::default()).expect("smoke grid");
    let smoke_time = start.elapsed();
    let full = run_grid(&full_spec, &base, &RunOptions::default()).expect("full grid");

    report(3, criterion_3(&full, &smoke, smoke_time));
    report(4, criterion_4(&full));
    report(5, criterion_5(&full, &full_spec.phi_values));
    report(6, criterion_6(&full));
    report(7, criterion_7(&full, &smoke));
    report(8, criterion_8(&full));
    report(9, criterion_9());
    report(10, criterion_10());

    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
