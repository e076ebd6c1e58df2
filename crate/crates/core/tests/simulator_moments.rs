use approx::assert_abs_diff_eq;
use statrs::distribution::{ContinuousCDF, Normal};

use wcde::design::{run_two_group_design, DesignOptions};
use wcde::estimands::Group;
use wcde::rng::{stream, stream_id, Purpose};
use wcde::simulator::{build_sigma, make_oracle, SimulationConfig, M0_LATENT, M1_LATENT, Y0_AT_0, Y1_AT_1};
use wcde::stats::Moments;

fn analytic_p_m1() -> f64 {
    let z = Normal::standard();
    0.6 * z.cdf(1.0) + 0.4 * z.cdf(1.0 / 2f64.sqrt())
}

#[test]
fn latent_moments_match_the_mixture() {
    let config = SimulationConfig::default();
    let sampler = config.sampler().unwrap();
    let mut rng = stream(5, stream_id(Purpose::Auxiliary, 100, 0));
    let draws = 200_000;
    let mut m1_latent = Moments::new();
    let mut y00 = Moments::new();
    let mut cross = Moments::new();
    let mut m1 = 0usize;
    for _ in 0..draws {
        let w = sampler.sample_vector(&mut rng);
        m1_latent.push(w[M1_LATENT]);
        y00.push(w[Y0_AT_0]);
        cross.push((w[M0_LATENT] + 1.0) * (w[M1_LATENT] - 1.0));
        m1 += (w[M1_LATENT] > 0.0) as usize;
    }
    // Mixture variance 0.6 * 1 + 0.4 * 2 = 1.4; mediator covariance 0.6 * 1.4.
    assert_abs_diff_eq!(m1_latent.mean(), 1.0, epsilon = 0.01);
    assert_abs_diff_eq!(m1_latent.variance().unwrap(), 1.4, epsilon = 0.02);
    assert_abs_diff_eq!(y00.mean(), 0.0, epsilon = 0.01);
    assert_abs_diff_eq!(cross.mean(), 0.84, epsilon = 0.02);
    assert_abs_diff_eq!(m1 as f64 / draws as f64, analytic_p_m1(), epsilon = 0.005);
}

#[test]
fn phi_couples_mediators_and_outcomes() {
    let sigma = build_sigma(0.1, 0.5, 0.6).unwrap();
    assert!(sigma[(M1_LATENT, Y1_AT_1)] != 0.0);
    assert!(build_sigma(0.0, 0.5, 0.6).unwrap()[(M1_LATENT, Y1_AT_1)] == 0.0);
}

#[test]
fn streams_are_independent() {
    let sampler = SimulationConfig::default().sampler().unwrap();
    let mut a = stream(1, stream_id(Purpose::Replication, 0, 0));
    let mut b = stream(1, stream_id(Purpose::Replication, 0, 1));
    let xs: Vec<f64> = (0..20_000).map(|_| sampler.sample_vector(&mut a)[Y0_AT_0]).collect();
    let ys: Vec<f64> = (0..20_000).map(|_| sampler.sample_vector(&mut b)[Y0_AT_0]).collect();
    assert_ne!(xs[..10], ys[..10]);
    let mx: f64 = xs.iter().sum::<f64>() / xs.len() as f64;
    let my: f64 = ys.iter().sum::<f64>() / ys.len() as f64;
    let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / xs.len() as f64;
    // Var(Y_0(0)) is 1.4; a 4-sigma bound on the correlation is 4 / sqrt(20000).
    assert!(cov.abs() / 1.4 < 4.0 / (20_000f64).sqrt());
}

#[test]
fn design_group1_mediator_frequency() {
    // P(M = 1) in group 1 is p P(M1 = 1) + (1 - p) P(M0 = 1).
    let p = 0.3;
    let q1 = analytic_p_m1();
    let expected = p * q1 + (1.0 - p) * (1.0 - q1);
    let sampler = SimulationConfig::default().sampler().unwrap();
    let mut total = 0usize;
    let mut ones = 0usize;
    for r in 0..10 {
        let mut rng = stream(9, stream_id(Purpose::Auxiliary, 101, r));
        let pop = sampler.sample_population(10_000, &mut rng);
        let oracle = make_oracle(&pop).unwrap();
        let ds = run_two_group_design(&oracle, pop.len(), p, &DesignOptions::default(), &mut rng).unwrap();
        assert!(ds.group1.iter().all(|r| r.group == Group::DesignGroup1));
        total += ds.group1.len();
        ones += ds.group1.iter().filter(|r| r.mediator == 1).count();
    }
    let freq = ones as f64 / total as f64;
    let sd = (expected * (1.0 - expected) / total as f64).sqrt();
    assert!((freq - expected).abs() < 4.0 * sd, "freq {freq} expected {expected}");
}
