use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use wcde::dataset::{read_dataset, write_dataset};
use wcde::design::{estimate_from_design, run_two_group_design, AteSource, DesignDataset, DesignOptions, EstimationOptions};
use wcde::estimands::Group;
use wcde::estimators::{
    estimate_ate, estimate_ate_ipw, estimate_nde_nie_plugin, estimate_wcde, estimate_wcde_stratified,
    fit_cell_statistics, reweight_hypothetical, EstimateReport, IpwOptions, Propensity,
};
use wcde::grid::{run_grid, GridSpec, NdeReference, RunOptions, MERGE_MIN_COUNT};
use wcde::report::{emit_figure_data, emit_table, read_table, render_svg, write_manifest, DEFAULT_SERIES};
use wcde::rng::{stream, stream_id, Purpose};
use wcde::simulator::{compute_truth, make_oracle, SimulationConfig, TruthTable};
use wcde::{Error, Result};

#[derive(Parser)]
#[command(name = "wcde", version, about = "Weighted controlled direct effect estimation and simulation")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run estimators on a delimited dataset.
    Estimate(EstimateArgs),
    /// Simulate the two-group protocol once and report its estimates.
    Design(DesignArgs),
    /// Compute the truth table for a set of (p, phi) setups.
    Truth(TruthArgs),
    /// Run the full estimator-vs-truth replication grid.
    Grid(GridArgs),
    /// Emit figure data (and optionally an SVG) from a saved result table.
    Figure(FigureArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON file overriding simulation settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<SimulationConfig> {
        let mut config = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
            }
            None => SimulationConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args)]
struct EstimateArgs {
    /// Dataset with columns t, m, y and optionally v, weight, group.
    input: PathBuf,
    #[arg(long, default_value = ",", value_parser = parse_delimiter)]
    delimiter: u8,
    /// Number of mediator levels (default: largest observed level + 1).
    #[arg(long)]
    support: Option<usize>,
    /// Also report the WCDE reweighted to this treatment probability.
    #[arg(long)]
    p_star: Option<f64>,
    #[arg(long, value_enum, default_value_t = AteSource::Observational)]
    ate_source: AteSource,
    /// Merge adjacent mediator levels until each cell has this many records.
    #[arg(long)]
    merge_sparse_cells: Option<usize>,
}

#[derive(Args)]
struct DesignArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, default_value_t = 0.5)]
    p: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    phi: f64,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, value_enum, default_value_t = AteSource::Observational)]
    ate_source: AteSource,
    #[arg(long)]
    merge_sparse_cells: Option<usize>,
    /// Write the simulated records here.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct TruthArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, value_delimiter = ',', default_values_t = GridSpec::default().p_values)]
    p_values: Vec<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_values_t = GridSpec::default().phi_values)]
    phi_values: Vec<f64>,
    #[arg(long, default_value_t = wcde::simulator::DEFAULT_TRUTH_POPULATION)]
    truth_pop_size: usize,
    /// Output file (default: stdout).
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct GridArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, value_delimiter = ',', default_values_t = GridSpec::default().p_values)]
    p_values: Vec<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_values_t = GridSpec::default().phi_values)]
    phi_values: Vec<f64>,
    #[arg(long, default_value_t = GridSpec::default().replications)]
    reps: usize,
    #[arg(long, default_value_t = GridSpec::default().n)]
    n: usize,
    #[arg(long, default_value_t = wcde::simulator::DEFAULT_TRUTH_POPULATION)]
    truth_pop_size: usize,
    #[arg(long, default_value = "results")]
    out_dir: PathBuf,
    /// Also write figure.svg.
    #[arg(long)]
    render: bool,
    #[arg(long, value_enum, default_value_t = AteSource::Observational)]
    ate_source: AteSource,
    /// Merge sparse mediator levels instead of dropping the replication.
    #[arg(long)]
    merge_sparse_cells: bool,
    /// Truth the NDE estimator is scored against.
    #[arg(long, value_enum, default_value_t = NdeReference::Nde)]
    nde_reference: NdeReference,
}

#[derive(Args)]
struct FigureArgs {
    /// Result table written by `grid`.
    table: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Keep only rows with this treatment probability.
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    render: bool,
}

fn parse_delimiter(s: &str) -> std::result::Result<u8, String> {
    match s {
        "\\t" | "tab" => Ok(b'\t'),
        _ if s.len() == 1 && s.is_ascii() => Ok(s.as_bytes()[0]),
        _ => Err(format!("delimiter must be one ASCII character, got `{s}`")),
    }
}

fn print_reports(reports: &[EstimateReport]) {
    for r in reports {
        println!("{}", r.to_json());
    }
}

fn estimate(args: &EstimateArgs) -> Result<()> {
    let records = read_dataset(&args.input, args.delimiter)?;
    if records.is_empty() {
        return Err(Error::Estimation("dataset has no records".into()));
    }
    let observed = records.iter().map(|r| r.mediator + 1).max().unwrap_or(1);
    let support = args.support.unwrap_or(observed);
    if support < observed {
        return Err(Error::domain(format!(
            "mediator level {} exceeds the declared support {support}",
            observed - 1
        )));
    }

    if records.iter().any(|r| r.group != Group::Observational) {
        let ds = DesignDataset::from_records(&records, support)?;
        let est = estimate_from_design(
            &ds,
            &EstimationOptions {
                ate_source: args.ate_source,
                merge_sparse_cells: args.merge_sparse_cells,
            },
        )?;
        print_reports(&[est.ate, est.wcde, est.iie]);
        return Ok(());
    }

    let mut reports = vec![estimate_ate(&records)?];
    let stats = fit_cell_statistics(&records, &records, support)?;
    reports.push(estimate_wcde(&stats)?);
    let (nde, nie) = estimate_nde_nie_plugin(&records, support)?;
    reports.extend([nde, nie]);
    if records.iter().any(|r| r.stratum.is_some()) {
        reports.push(estimate_wcde_stratified(&records, support)?);
        reports.push(estimate_ate_ipw(&records, &Propensity::ByStratum, IpwOptions::default())?);
    }
    if let Some(p_star) = args.p_star {
        let reweighted = reweight_hypothetical(&records, p_star)?;
        let stats = fit_cell_statistics(&reweighted, &reweighted, support)?;
        let mut report = estimate_wcde(&stats)?;
        report.notes.push(format!("reweighted to P(T=1) = {p_star}"));
        reports.push(report);
    }
    print_reports(&reports);
    Ok(())
}

fn design(args: &DesignArgs) -> Result<()> {
    let mut config = args.config.load()?.with_phi(args.phi).with_p(args.p);
    if let Some(n) = args.n {
        config.n = n;
    }
    config.validate()?;
    let sampler = config.sampler()?;
    let mut rng = stream(config.seed, stream_id(Purpose::Single, 0, 0));
    let population = sampler.sample_population(config.n, &mut rng);
    let oracle = make_oracle(&population)?;
    let ds = run_two_group_design(&oracle, config.n, args.p, &DesignOptions::default(), &mut rng)?;
    if let Some(path) = &args.output {
        write_dataset(path, &ds.all_records(), b',')?;
    }
    let est = estimate_from_design(
        &ds,
        &EstimationOptions {
            ate_source: args.ate_source,
            merge_sparse_cells: args.merge_sparse_cells,
        },
    )?;
    print_reports(&[est.ate, est.wcde, est.iie]);
    Ok(())
}

fn truth_table(config: &SimulationConfig, p_values: &[f64], phi_values: &[f64], size: usize) -> Result<TruthTable> {
    let mut table = TruthTable {
        population_size: size,
        entries: Vec::new(),
    };
    for &phi in phi_values {
        table.merge(compute_truth(&config.with_phi(phi), p_values, size)?);
    }
    Ok(table)
}

fn truth(args: &TruthArgs) -> Result<()> {
    let config = args.config.load()?;
    let table = truth_table(&config, &args.p_values, &args.phi_values, args.truth_pop_size)?;
    match &args.output {
        Some(path) => table.write_csv(path),
        None => {
            print!("{}", table.to_csv());
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct GridManifestOptions {
    ate_source: AteSource,
    merge_sparse_cells: bool,
    merge_min_count: usize,
    nde_reference: NdeReference,
    design: DesignOptions,
    render: bool,
}

fn grid(args: &GridArgs) -> Result<()> {
    let config = args.config.load()?;
    let spec = GridSpec {
        p_values: args.p_values.clone(),
        phi_values: args.phi_values.clone(),
        replications: args.reps,
        n: args.n,
        master_seed: config.seed,
        truth_pop_size: args.truth_pop_size,
    };
    let options = RunOptions {
        ate_source: args.ate_source,
        merge_sparse_cells: args.merge_sparse_cells,
        nde_reference: args.nde_reference,
        design: DesignOptions::default(),
    };
    let output = run_grid(&spec, &config, &options)?;

    let dir = &args.out_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let mut out = |name: &str| {
        written.push(name.to_owned());
        dir.join(name)
    };
    emit_table(&output.rows, &out("table.csv"))?;
    output.truth.write_csv(&out("truth.csv"))?;
    let figure_rows: Vec<_> = if output.rows.iter().any(|r| r.p == 0.5) {
        output.rows.iter().filter(|r| r.p == 0.5).cloned().collect()
    } else {
        output.rows.clone()
    };
    emit_figure_data(&figure_rows, &out("figure.csv"), &DEFAULT_SERIES)?;
    if args.render {
        render_svg(&figure_rows, &out("figure.svg"), &DEFAULT_SERIES)?;
    }
    written.push("manifest.json".to_owned());
    let manifest_options = GridManifestOptions {
        ate_source: options.ate_source,
        merge_sparse_cells: options.merge_sparse_cells,
        merge_min_count: MERGE_MIN_COUNT,
        nde_reference: options.nde_reference,
        design: options.design,
        render: args.render,
    };
    write_manifest(&dir.join("manifest.json"), &spec, &config, &manifest_options, written)?;

    let aborted = output.rows.iter().filter(|r| r.status.starts_with("aborted")).count();
    println!(
        "{}",
        serde_json::json!({
            "rows": output.rows.len(),
            "aborted_rows": aborted,
            "identity_violations": output.identity_violations,
            "out_dir": dir.display().to_string(),
        })
    );
    Ok(())
}

fn figure(args: &FigureArgs) -> Result<()> {
    let mut rows = read_table(&args.table)?;
    if let Some(p) = args.p {
        rows.retain(|r| r.p == p);
    }
    if rows.is_empty() {
        return Err(Error::domain("no rows to plot"));
    }
    emit_figure_data(&rows, &args.output, &DEFAULT_SERIES)?;
    if args.render {
        render_svg(&rows, &args.output.with_extension("svg"), &DEFAULT_SERIES)?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(workers) = cli.workers {
        if workers == 0 {
            return Err(Error::Config("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    match &cli.command {
        Command::Estimate(a) => estimate(a),
        Command::Design(a) => design(a),
        Command::Truth(a) => truth(a),
        Command::Grid(a) => grid(a),
        Command::Figure(a) => figure(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", serde_json::json!({ "error": e.kind(), "message": e.to_string() }));
            ExitCode::FAILURE
        }
    }
}
