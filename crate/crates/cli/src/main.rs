//! Command-line pipelines: export ingestion, ranking, spectroscopy, growth
//! forecasting and backtesting.
//!
//! Every artifact carries a provenance header (a `# {...}` first line on
//! CSV, a top-level `provenance` key on JSON) echoing the command, its
//! configuration and the SHA-256 of each input, so published rankings can
//! be audited and reruns byte-compared. Outputs are only written once a
//! command has fully succeeded; a failing run leaves nothing behind.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use fitness_rank::eci::{eci_country_step, eci_fixed_point, EciResult};
use fitness_rank::fitness::{
    fitness_fixed_point, spectroscopy_from_scores, IterationOptions, RankingResult,
};
use fitness_rank::forecast::{
    backtest, build_panel, equilibrium_line, forecast_sps, forecast_sps_trend, parse_baseline_csv,
    parse_gdppc_csv, plane_rows, EvaluationReport, PanelDataset, SpsOptions,
};
use fitness_rank::matrix::{
    fig1_complexities, fig1_fixture, generate_nested, generate_noisy_nested, BinaryMatrix,
};
use fitness_rank::trade::{binarize, parse_export_table, rca};

#[derive(Parser, Debug)]
#[command(
    name = "fitness-rank",
    version,
    about = "Country fitness / product complexity rankings and analogue growth forecasts"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Binarize one year of an export table into a country-product matrix
    Ingest(IngestArgs),
    /// Rank countries and products from a matrix CSV
    Rank(RankArgs),
    /// Per-country export profile, products ordered by score
    Spectroscopy(SpectroscopyArgs),
    /// Forecast growth for every country at a base year
    Forecast(ForecastArgs),
    /// Strictly out-of-sample backtest, optionally against a baseline file
    Backtest(BacktestArgs),
    /// Emit synthetic fixture data
    Synth(SynthArgs),
}

#[derive(clap::Args, Debug, Serialize)]
struct IngestArgs {
    /// Export table CSV (country,product,year,value)
    #[arg(long)]
    input: PathBuf,
    /// Year to extract
    #[arg(long)]
    year: i32,
    /// RCA threshold for a competitive export
    #[arg(long, default_value_t = 1.0)]
    threshold: f64,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Algorithm {
    Fitness,
    Eci,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    Csv,
    Json,
}

#[derive(clap::Args, Debug, Serialize)]
struct RankArgs {
    /// Binary matrix CSV (from `ingest` or `synth`)
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = Algorithm::Fitness)]
    algorithm: Algorithm,
    /// With --algorithm eci: run a single averaging step against this
    /// product,complexity CSV instead of the full iteration
    #[arg(long)]
    exogenous_complexities: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Output path; CSV output also writes `<output>.meta.json`
    #[arg(long)]
    output: PathBuf,
}

#[derive(clap::Args, Debug, Serialize)]
struct SpectroscopyArgs {
    /// Binary matrix CSV
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    country: String,
    /// fitness orders by complexity, eci by pci
    #[arg(long, value_enum, default_value_t = Algorithm::Fitness)]
    algorithm: Algorithm,
    #[arg(long)]
    output: PathBuf,
}

#[derive(clap::Args, Debug, Serialize)]
struct ForecastArgs {
    /// Export table CSV spanning multiple years
    #[arg(long)]
    input: PathBuf,
    /// GDP per capita CSV (country,year,gdppc)
    #[arg(long)]
    gdppc: PathBuf,
    /// Base year to forecast from (default: latest panel year)
    #[arg(long)]
    base_year: Option<i32>,
    #[arg(long, default_value_t = 1.0)]
    threshold: f64,
    #[arg(long, default_value_t = 5)]
    horizon: u32,
    #[arg(long, default_value_t = 20)]
    k: usize,
    #[arg(long, default_value_t = 0.1)]
    laminar_threshold: f64,
    #[arg(long, default_value_t = 0.5)]
    blend: f64,
    #[arg(long)]
    output: PathBuf,
    /// Also export plane rows (country,year,log_fitness,log_gdppc,...)
    #[arg(long)]
    plane_output: Option<PathBuf>,
}

#[derive(clap::Args, Debug, Serialize)]
struct BacktestArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    gdppc: PathBuf,
    /// External forecasts CSV (country,base_year,predicted_growth)
    #[arg(long)]
    baseline: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    threshold: f64,
    #[arg(long, default_value_t = 5)]
    horizon: u32,
    #[arg(long, default_value_t = 20)]
    k: usize,
    #[arg(long, default_value_t = 0.1)]
    laminar_threshold: f64,
    #[arg(long, default_value_t = 0.5)]
    blend: f64,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Fixture {
    /// Two countries: A exports q1..q10, B exports only q6
    Fig1,
    /// Exogenous complexities 1..10 for the fig1 products
    Fig1Complexities,
    /// Perfectly nested staircase (needs --rows/--cols)
    Nested,
    /// Staircase with seeded random flips (needs --rows/--cols)
    NoisyNested,
}

#[derive(clap::Args, Debug, Serialize)]
struct SynthArgs {
    #[arg(long, value_enum)]
    fixture: Fixture,
    #[arg(long)]
    rows: Option<usize>,
    #[arg(long)]
    cols: Option<usize>,
    #[arg(long, default_value_t = 0.1)]
    flip_prob: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
}

type CliResult<T> = Result<T, Box<dyn std::error::Error>>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("FITNESS_RANK_LOG")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(artifacts) => match write_artifacts(&artifacts) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => fail(&e.to_string()),
        },
        Err(e) => fail(&e.to_string()),
    }
}

fn fail(message: &str) -> ExitCode {
    // One machine-parsable line on stderr.
    eprintln!(
        "{}",
        serde_json::json!({ "error": message.lines().collect::<Vec<_>>().join(" ") })
    );
    ExitCode::FAILURE
}

struct Artifact {
    path: PathBuf,
    bytes: Vec<u8>,
}

/// All outputs are staged in memory and written together; if any write
/// fails, everything written by this run is removed again.
fn write_artifacts(artifacts: &[Artifact]) -> CliResult<()> {
    let mut written: Vec<&Path> = Vec::new();
    for artifact in artifacts {
        if let Err(e) = std::fs::write(&artifact.path, &artifact.bytes) {
            for path in written {
                let _ = std::fs::remove_file(path);
            }
            return Err(format!("writing {}: {e}", artifact.path.display()).into());
        }
        written.push(&artifact.path);
    }
    Ok(())
}

#[derive(Serialize)]
struct Provenance {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    config: serde_json::Value,
    /// SHA-256 of each input file, keyed by flag name.
    inputs: BTreeMap<&'static str, String>,
}

impl Provenance {
    fn new(command: &'static str, config: serde_json::Value) -> Self {
        Provenance {
            tool: "fitness-rank",
            version: env!("CARGO_PKG_VERSION"),
            command,
            config,
            inputs: BTreeMap::new(),
        }
    }

    fn with_input(mut self, name: &'static str, bytes: &[u8]) -> Self {
        let digest = Sha256::digest(bytes);
        let mut hex = String::with_capacity(64);
        for b in digest {
            let _ = write!(hex, "{b:02x}");
        }
        self.inputs.insert(name, format!("sha256:{hex}"));
        self
    }

    fn csv_header(&self) -> String {
        format!("# {}\n", serde_json::to_string(self).expect("serializable"))
    }

    fn json_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("serializable")
    }
}

fn read_input(path: &Path) -> CliResult<Vec<u8>> {
    std::fs::read(path).map_err(|e| format!("reading {}: {e}", path.display()).into())
}

fn config_json<T: Serialize>(args: &T) -> serde_json::Value {
    serde_json::to_value(args).expect("args serialize")
}

fn run(command: Command) -> CliResult<Vec<Artifact>> {
    match command {
        Command::Ingest(args) => run_ingest(args),
        Command::Rank(args) => run_rank(args),
        Command::Spectroscopy(args) => run_spectroscopy(args),
        Command::Forecast(args) => run_forecast(args),
        Command::Backtest(args) => run_backtest(args),
        Command::Synth(args) => run_synth(args),
    }
}

fn run_ingest(args: IngestArgs) -> CliResult<Vec<Artifact>> {
    let bytes = read_input(&args.input)?;
    let table = parse_export_table(&bytes[..])?;
    let rca_matrix = rca(&table, args.year)?;
    let matrix = binarize(&rca_matrix, args.threshold)?;
    let prov = Provenance::new("ingest", config_json(&args)).with_input("input", &bytes);
    let body = format!("{}{}", prov.csv_header(), matrix.to_csv_string());
    Ok(vec![Artifact {
        path: args.output,
        bytes: body.into_bytes(),
    }])
}

enum Ranked {
    Fitness(RankingResult),
    Eci(EciResult),
    /// One averaging step against exogenous complexities; values are the
    /// raw per-country averages.
    EciOneStep(BTreeMap<String, f64>),
}

impl Ranked {
    fn csv_body(&self) -> String {
        match self {
            Ranked::Fitness(r) => r.to_csv_string(),
            Ranked::Eci(r) => r.to_csv_string(),
            Ranked::EciOneStep(values) => {
                let mut out = String::from("entity,kind,value,rank\n");
                for e in fitness_rank::fitness::ranked_entries(values) {
                    let _ = writeln!(out, "{},eci,{},{}", e.entity, e.value, e.rank);
                }
                out
            }
        }
    }

    fn metadata(&self) -> serde_json::Value {
        match self {
            Ranked::Fitness(r) => r.metadata_json(),
            Ranked::Eci(r) => r.metadata_json(),
            Ranked::EciOneStep(_) => serde_json::json!({
                "iterations": 1,
                "converged": true,
                "mode": "one_step_exogenous",
            }),
        }
    }

    fn values_json(&self) -> serde_json::Value {
        match self {
            Ranked::Fitness(r) => serde_json::json!({
                "fitness": r.fitness,
                "complexity": r.complexity,
            }),
            Ranked::Eci(r) => serde_json::json!({ "eci": r.eci, "pci": r.pci }),
            Ranked::EciOneStep(values) => serde_json::json!({ "eci": values }),
        }
    }
}

fn parse_exogenous_complexities(
    bytes: &[u8],
    matrix: &BinaryMatrix,
) -> CliResult<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(bytes);
    let mut by_product: BTreeMap<String, f64> = BTreeMap::new();
    for record in rdr.records() {
        let record = record?;
        if record.len() != 2 {
            return Err("exogenous complexities need product,complexity rows".into());
        }
        let value: f64 = record[1].trim().parse()?;
        by_product.insert(record[0].to_string(), value);
    }
    matrix
        .products()
        .iter()
        .map(|p| {
            by_product
                .get(p)
                .copied()
                .ok_or_else(|| format!("no exogenous complexity for product `{p}`").into())
        })
        .collect()
}

fn run_rank(args: RankArgs) -> CliResult<Vec<Artifact>> {
    let bytes = read_input(&args.input)?;
    let matrix = BinaryMatrix::from_csv_reader(&bytes[..])?;
    let mut prov = Provenance::new("rank", config_json(&args)).with_input("input", &bytes);

    let ranked = match (args.algorithm, &args.exogenous_complexities) {
        (Algorithm::Fitness, None) => {
            Ranked::Fitness(fitness_fixed_point(&matrix, &IterationOptions::default())?)
        }
        (Algorithm::Fitness, Some(_)) => {
            return Err("--exogenous-complexities only applies to --algorithm eci".into())
        }
        (Algorithm::Eci, None) => {
            Ranked::Eci(eci_fixed_point(&matrix, &IterationOptions::default())?)
        }
        (Algorithm::Eci, Some(path)) => {
            let q_bytes = read_input(path)?;
            prov = prov.with_input("exogenous_complexities", &q_bytes);
            let q = parse_exogenous_complexities(&q_bytes, &matrix)?;
            let values = eci_country_step(&matrix, &q)?;
            Ranked::EciOneStep(
                matrix
                    .countries()
                    .iter()
                    .cloned()
                    .zip(values)
                    .collect(),
            )
        }
    };

    match args.format {
        Format::Csv => {
            let body = format!("{}{}", prov.csv_header(), ranked.csv_body());
            let sidecar = serde_json::json!({
                "provenance": prov.json_value(),
                "convergence": ranked.metadata(),
            });
            let mut meta_path = args.output.clone().into_os_string();
            meta_path.push(".meta.json");
            Ok(vec![
                Artifact {
                    path: args.output,
                    bytes: body.into_bytes(),
                },
                Artifact {
                    path: PathBuf::from(meta_path),
                    bytes: pretty_json(&sidecar),
                },
            ])
        }
        Format::Json => {
            let doc = serde_json::json!({
                "provenance": prov.json_value(),
                "convergence": ranked.metadata(),
                "values": ranked.values_json(),
            });
            Ok(vec![Artifact {
                path: args.output,
                bytes: pretty_json(&doc),
            }])
        }
    }
}

fn pretty_json(value: &serde_json::Value) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializable");
    bytes.push(b'\n');
    bytes
}

fn run_spectroscopy(args: SpectroscopyArgs) -> CliResult<Vec<Artifact>> {
    let bytes = read_input(&args.input)?;
    let matrix = BinaryMatrix::from_csv_reader(&bytes[..])?;
    let scores = match args.algorithm {
        Algorithm::Fitness => {
            fitness_fixed_point(&matrix, &IterationOptions::default())?.complexity
        }
        Algorithm::Eci => eci_fixed_point(&matrix, &IterationOptions::default())?.pci,
    };
    let entries = spectroscopy_from_scores(&matrix, &scores, &args.country)?;
    let prov = Provenance::new("spectroscopy", config_json(&args)).with_input("input", &bytes);
    let mut body = prov.csv_header();
    body.push_str("product,complexity,rank\n");
    for e in &entries {
        let _ = writeln!(body, "{},{},{}", e.product, e.complexity, e.rank);
    }
    Ok(vec![Artifact {
        path: args.output,
        bytes: body.into_bytes(),
    }])
}

/// Rank every year of the export table and join with GDP per capita.
fn panel_from_files(
    export_bytes: &[u8],
    gdppc_bytes: &[u8],
    threshold: f64,
    horizon: u32,
) -> CliResult<PanelDataset> {
    let table = parse_export_table(export_bytes)?;
    let gdppc = parse_gdppc_csv(gdppc_bytes)?;
    let mut rankings = BTreeMap::new();
    for year in table.years() {
        let matrix = binarize(&rca(&table, year)?, threshold)?;
        let ranking = fitness_fixed_point(&matrix, &IterationOptions::default())?;
        rankings.insert(year, ranking);
    }
    Ok(build_panel(&rankings, &gdppc, horizon)?)
}

fn run_forecast(args: ForecastArgs) -> CliResult<Vec<Artifact>> {
    let export_bytes = read_input(&args.input)?;
    let gdppc_bytes = read_input(&args.gdppc)?;
    let panel = panel_from_files(&export_bytes, &gdppc_bytes, args.threshold, args.horizon)?;
    let opts = SpsOptions {
        k: args.k,
        laminar_threshold: args.laminar_threshold,
        blend: args.blend,
    };
    let (_, max_year) = panel.year_range();
    let base_year = args.base_year.unwrap_or(max_year);

    let mut rows = String::from(
        "country,base_year,method,predicted_growth,analogue_count,dispersion,regime,analogue_shortfall,trend_fallback\n",
    );
    let mut forecast_count = 0usize;
    let points: Vec<_> = panel
        .points()
        .iter()
        .filter(|p| p.year == base_year)
        .cloned()
        .collect();
    for point in &points {
        let sps = match forecast_sps(&panel, point, &opts, base_year) {
            Ok(f) => f,
            Err(fitness_rank::forecast::ForecastError::NoEligibleAnalogues { .. }) => {
                log::warn!("no eligible analogues for {} at {base_year}", point.country);
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let trend = forecast_sps_trend(&panel, point, &opts, base_year)?;
        for (method, f) in [("sps", &sps), ("sps_trend", &trend)] {
            let _ = writeln!(
                rows,
                "{},{},{method},{},{},{},{},{},{}",
                f.country,
                f.base_year,
                f.predicted_growth,
                f.analogue_count,
                f.dispersion,
                f.regime,
                f.analogue_shortfall,
                f.trend_fallback
            );
        }
        forecast_count += 1;
    }
    if forecast_count == 0 {
        return Err(format!("no forecastable countries at base year {base_year}").into());
    }

    let prov = Provenance::new("forecast", config_json(&args))
        .with_input("input", &export_bytes)
        .with_input("gdppc", &gdppc_bytes);
    let mut artifacts = vec![Artifact {
        path: args.output.clone(),
        bytes: format!("{}{}", prov.csv_header(), rows).into_bytes(),
    }];

    if let Some(plane_path) = &args.plane_output {
        let mut plane_prov = prov.json_value();
        if let Some((slope, intercept)) = equilibrium_line(&panel) {
            plane_prov["equilibrium_line"] =
                serde_json::json!({ "slope": slope, "intercept": intercept });
        }
        let mut body = format!("# {plane_prov}\n");
        body.push_str("country,year,log_fitness,log_gdppc,displacement,regime\n");
        for row in plane_rows(&panel, &opts)? {
            let _ = writeln!(
                body,
                "{},{},{},{},{},{}",
                row.country,
                row.year,
                row.log_fitness,
                row.log_gdppc,
                row.displacement.map(|d| d.to_string()).unwrap_or_default(),
                row.regime.map(|r| r.to_string()).unwrap_or_default()
            );
        }
        artifacts.push(Artifact {
            path: plane_path.clone(),
            bytes: body.into_bytes(),
        });
    }
    Ok(artifacts)
}

fn evaluation_csv_rows(out: &mut String, method: &str, report: &EvaluationReport) {
    let _ = writeln!(
        out,
        "{method},all,{},{},{},{},{},{},{}",
        report.mae,
        report.rmse,
        report.ci_mae.0,
        report.ci_mae.1,
        report.ci_rmse.0,
        report.ci_rmse.1,
        report.n
    );
    for (regime, stats) in &report.per_regime {
        let _ = writeln!(
            out,
            "{method},{regime},{},{},,,,,{}",
            stats.mae, stats.rmse, stats.n
        );
    }
}

fn run_backtest(args: BacktestArgs) -> CliResult<Vec<Artifact>> {
    let export_bytes = read_input(&args.input)?;
    let gdppc_bytes = read_input(&args.gdppc)?;
    let panel = panel_from_files(&export_bytes, &gdppc_bytes, args.threshold, args.horizon)?;
    let opts = SpsOptions {
        k: args.k,
        laminar_threshold: args.laminar_threshold,
        blend: args.blend,
    };

    let mut prov = Provenance::new("backtest", config_json(&args))
        .with_input("input", &export_bytes)
        .with_input("gdppc", &gdppc_bytes);
    let baseline = match &args.baseline {
        Some(path) => {
            let bytes = read_input(path)?;
            prov = prov.with_input("baseline", &bytes);
            Some(parse_baseline_csv(&bytes[..])?)
        }
        None => None,
    };
    let report = backtest(&panel, &opts, baseline.as_ref())?;

    let bytes = match args.format {
        Format::Json => {
            let doc = serde_json::json!({
                "provenance": prov.json_value(),
                "report": report,
            });
            pretty_json(&doc)
        }
        Format::Csv => {
            let mut body = prov.csv_header();
            body.push_str(
                "method,scope,mae,rmse,mae_ci_low,mae_ci_high,rmse_ci_low,rmse_ci_high,n\n",
            );
            evaluation_csv_rows(&mut body, "sps", &report.sps);
            evaluation_csv_rows(&mut body, "sps_trend", &report.sps_trend);
            if let Some(b) = &report.baseline {
                evaluation_csv_rows(&mut body, "baseline", b);
            }
            body.into_bytes()
        }
    };
    Ok(vec![Artifact {
        path: args.output,
        bytes,
    }])
}

fn run_synth(args: SynthArgs) -> CliResult<Vec<Artifact>> {
    let prov = Provenance::new("synth", config_json(&args));
    let body = match args.fixture {
        Fixture::Fig1 => fig1_fixture().to_csv_string(),
        Fixture::Fig1Complexities => {
            let mut out = String::from("product,complexity\n");
            for (product, value) in fig1_fixture().products().iter().zip(fig1_complexities()) {
                let _ = writeln!(out, "{product},{value}");
            }
            out
        }
        Fixture::Nested => {
            let (rows, cols) = nested_shape(&args)?;
            generate_nested(rows, cols)?.to_csv_string()
        }
        Fixture::NoisyNested => {
            let (rows, cols) = nested_shape(&args)?;
            generate_noisy_nested(rows, cols, args.flip_prob, args.seed)?.to_csv_string()
        }
    };
    Ok(vec![Artifact {
        path: args.output,
        bytes: format!("{}{}", prov.csv_header(), body).into_bytes(),
    }])
}

fn nested_shape(args: &SynthArgs) -> CliResult<(usize, usize)> {
    match (args.rows, args.cols) {
        (Some(r), Some(c)) => Ok((r, c)),
        _ => Err("nested fixtures need --rows and --cols".into()),
    }
}
