//! Command-line front end: `simulate`, `fit`, `cv` and `report`.
//!
//! Every option can also come from a plain-text `key = value` file passed
//! with `--config`; options given on the command line take precedence.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use log::info;
use serde_json::json;

use crate::arh::SurfaceSeries;
use crate::bayes::{fit_bayes_surface, loocv, BayesConfig};
use crate::error::Error;
use crate::preprocess::{read_panel, write_panel, LatticeField};
use crate::report::{self, CurveTable, PREDICTOR_CSV, RESPONSE_CSV, SPECTRAL_CSV};
use crate::spatial::{fit_spatial, spatial_kfold_cv, Lag, SpatialConfig, Window};
use crate::synth::{simulate_arh1_panel, simulate_lattice_panel, Arh1Spec, LatticeSpec, Truth};

#[derive(Debug, Parser)]
#[command(
    name = "funreg",
    version,
    about = "Functional regression for surface time series and lattice curve fields"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic panel and its ground-truth sidecar.
    #[command(args_override_self = true)]
    Simulate(Opts),
    /// Fit a pipeline and write coefficient, predictor and plot files.
    #[command(args_override_self = true)]
    Fit(Opts),
    /// Run leave-one-out (surface) or row-and-column (spatial) cross-validation.
    #[command(args_override_self = true)]
    Cv(Opts),
    /// Render plots and per-node errors from an existing fit directory.
    #[command(args_override_self = true)]
    Report(Opts),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Pipeline {
    BayesSurface,
    SpatialSpectral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    Arh1,
    Lattice,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Opts {
    /// `key = value` file with default option values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub pipeline: Option<Pipeline>,
    /// Panel CSV (`fit`, `cv`) or fit directory (`report`).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for per-fold and per-frequency work.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Number of lagged regressors (surface) or of default spatial lags.
    #[arg(long)]
    pub p: Option<usize>,
    /// Truncation level of the surface pipeline; defaults to round(ln N).
    #[arg(long)]
    pub k: Option<usize>,
    /// Number of spatial components; overrides the share threshold.
    #[arg(long)]
    pub m: Option<usize>,
    /// Cumulative singular-value share used to choose the component count.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Spatial lags as `row:col` pairs, e.g. `1:0,0:1,1:1`.
    #[arg(long)]
    pub lags: Option<String>,
    #[arg(long)]
    pub bandwidth: Option<f64>,
    /// `bartlett-hann` or `blackman-harris`.
    #[arg(long)]
    pub window: Option<String>,
    #[arg(long)]
    pub ridge: Option<f64>,
    /// Tukey taper fraction applied before spectral estimation.
    #[arg(long)]
    pub taper: Option<f64>,
    #[arg(long)]
    pub reuse_correlation: bool,
    #[arg(long)]
    pub include_axis_frequencies: bool,
    #[arg(long)]
    pub n_boot: Option<usize>,
    #[arg(long)]
    pub block_len: Option<usize>,
    #[arg(long)]
    pub edge_trim: Option<usize>,
    #[arg(long)]
    pub folds: Option<usize>,
    /// Synthetic generator.
    #[arg(long, value_enum)]
    pub kind: Option<Kind>,
    /// Number of time nodes (surfaces) of a simulated panel.
    #[arg(long)]
    pub n: Option<usize>,
    /// Lattice side of a simulated panel.
    #[arg(long)]
    pub t: Option<usize>,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Run(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Run(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Run(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Run(e.into())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

const BOOL_KEYS: [&str; 2] = ["reuse-correlation", "include-axis-frequencies"];

/// Parses a `key = value` configuration file into command-line arguments.
pub fn config_args(text: &str) -> std::result::Result<Vec<OsString>, String> {
    let mut out = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("config line {}: expected key = value", no + 1))?;
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        if key == "config" {
            return Err(format!(
                "config line {}: nested config files are not supported",
                no + 1
            ));
        }
        if BOOL_KEYS.contains(&key.as_str()) {
            match value {
                "true" | "1" | "yes" => out.push(format!("--{key}").into()),
                "false" | "0" | "no" => {}
                _ => {
                    return Err(format!(
                        "config line {}: {key} expects true or false",
                        no + 1
                    ))
                }
            }
        } else {
            out.push(format!("--{key}").into());
            out.push(value.into());
        }
    }
    Ok(out)
}

/// Inserts the options of a `--config` file right after the subcommand so
/// that later command-line occurrences override them.
pub fn expand_config(args: Vec<OsString>) -> std::result::Result<Vec<OsString>, String> {
    let mut path = None;
    for (i, a) in args.iter().enumerate() {
        let s = a.to_string_lossy();
        if s == "--config" {
            path = args.get(i + 1).map(PathBuf::from);
            if path.is_none() {
                return Err("--config requires a path".into());
            }
        } else if let Some(p) = s.strip_prefix("--config=") {
            path = Some(PathBuf::from(p));
        }
    }
    let Some(path) = path else {
        return Ok(args);
    };
    if args.len() < 2 {
        return Ok(args);
    }
    let text = fs::read_to_string(&path)
        .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
    let extra = config_args(&text)?;
    let mut out = args[..2].to_vec();
    out.extend(extra);
    out.extend_from_slice(&args[2..]);
    Ok(out)
}

/// Parses arguments, runs the command, and returns the process exit code.
pub fn run(args: Vec<OsString>) -> i32 {
    let args = match expand_config(args) {
        Ok(a) => a,
        Err(msg) => {
            eprintln!("error: {msg}");
            return 2;
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}\n\n{}", Cli::command().render_usage());
            2
        }
        Err(CliError::Run(e)) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> CliResult<()> {
    let opts = match &command {
        Command::Simulate(o) | Command::Fit(o) | Command::Cv(o) | Command::Report(o) => o.clone(),
    };
    if let Some(j) = opts.jobs {
        if j == 0 {
            return Err(usage("--jobs must be positive"));
        }
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global();
    }
    match command {
        Command::Simulate(o) => cmd_simulate(&o),
        Command::Fit(o) => cmd_fit(&o),
        Command::Cv(o) => cmd_cv(&o),
        Command::Report(o) => cmd_report(&o),
    }
}

fn require_out(opts: &Opts) -> CliResult<&Path> {
    opts.out
        .as_deref()
        .ok_or_else(|| usage("--out is required"))
}

fn load_input(opts: &Opts) -> CliResult<LatticeField> {
    let path = opts
        .input
        .as_deref()
        .ok_or_else(|| usage("--input is required"))?;
    if !path.exists() {
        return Err(usage(format!("input {} does not exist", path.display())));
    }
    Ok(read_panel(File::open(path)?)?)
}

fn require_pipeline(opts: &Opts) -> CliResult<Pipeline> {
    opts.pipeline
        .ok_or_else(|| usage("--pipeline is required (bayes-surface or spatial-spectral)"))
}

fn positive(v: Option<usize>, name: &str) -> CliResult<Option<usize>> {
    match v {
        Some(0) => Err(usage(format!("--{name} must be positive"))),
        other => Ok(other),
    }
}

pub fn bayes_config(opts: &Opts) -> CliResult<BayesConfig> {
    let d = BayesConfig::default();
    Ok(BayesConfig {
        p: positive(opts.p, "p")?.unwrap_or(d.p),
        k: positive(opts.k, "k")?,
        poly_degree: None,
        edge_trim: opts.edge_trim,
        n_boot: positive(opts.n_boot, "n-boot")?.unwrap_or(d.n_boot),
        block_len: positive(opts.block_len, "block-len")?,
        seed: opts.seed.unwrap_or(d.seed),
        reuse_correlation: opts.reuse_correlation,
    })
}

/// `(1,0), (0,1), (1,1), (2,0), (0,2), (2,1), (1,2), (2,2), …`
pub fn lag_sequence(p: usize) -> Vec<Lag> {
    let mut out = Vec::with_capacity(p);
    let mut radius = 1;
    while out.len() < p {
        let mut shell = vec![[radius, 0], [0, radius]];
        for s in 1..=radius {
            if s < radius {
                shell.push([radius, s]);
                shell.push([s, radius]);
            } else {
                shell.push([radius, radius]);
            }
        }
        out.extend(shell.into_iter().take(p - out.len()));
        radius += 1;
    }
    out
}

pub fn parse_lags(text: &str) -> CliResult<Vec<Lag>> {
    text.split(',')
        .map(|item| {
            let (a, b) = item
                .trim()
                .split_once(':')
                .ok_or_else(|| usage(format!("lag '{item}' is not of the form row:col")))?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|_| usage(format!("lag '{item}' has a non-integer component")))
            };
            Ok([parse(a)?, parse(b)?])
        })
        .collect()
}

pub fn spatial_config(opts: &Opts) -> CliResult<SpatialConfig> {
    let d = SpatialConfig::default();
    let lags = match (&opts.lags, positive(opts.p, "p")?) {
        (Some(text), _) => parse_lags(text)?,
        (None, Some(p)) => lag_sequence(p),
        (None, None) => d.lags,
    };
    if let Some(t) = opts.threshold {
        if !(t > 0.0 && t <= 1.0) {
            return Err(usage("--threshold must lie in (0, 1]"));
        }
    }
    if let Some(b) = opts.bandwidth {
        if !(b.is_finite() && b > 0.0) {
            return Err(usage("--bandwidth must be positive"));
        }
    }
    if let Some(r) = opts.ridge {
        if !(r.is_finite() && r >= 0.0) {
            return Err(usage("--ridge must be non-negative"));
        }
    }
    if let Some(f) = opts.taper {
        if !(0.0..=1.0).contains(&f) {
            return Err(usage("--taper must lie in [0, 1]"));
        }
    }
    let window = match &opts.window {
        Some(w) => w.parse::<Window>().map_err(|e| usage(e.to_string()))?,
        None => d.window,
    };
    Ok(SpatialConfig {
        lags,
        threshold: opts.threshold.unwrap_or(d.threshold),
        m: positive(opts.m, "m")?,
        max_lag: None,
        taper_fraction: opts.taper.unwrap_or(d.taper_fraction),
        bandwidth: opts.bandwidth,
        window,
        ridge: opts.ridge,
        include_axis: opts.include_axis_frequencies,
    })
}

fn cmd_simulate(opts: &Opts) -> CliResult<()> {
    let out = require_out(opts)?;
    let kind = opts
        .kind
        .ok_or_else(|| usage("--kind is required (arh1 or lattice)"))?;
    let seed = opts.seed.unwrap_or(0);
    let (field, truth) = match kind {
        Kind::Arh1 => {
            let d = Arh1Spec::default();
            let spec = Arh1Spec {
                n: opts.n.unwrap_or(d.n),
                side: opts.t.unwrap_or(d.side),
                seed,
                ..d
            };
            let (f, t) = simulate_arh1_panel(&spec).map_err(as_usage)?;
            (f, Truth::Arh1(t))
        }
        Kind::Lattice => {
            let d = LatticeSpec::default();
            let spec = LatticeSpec {
                side: opts.t.unwrap_or(d.side),
                n_tau: opts.n.unwrap_or(d.n_tau),
                seed,
                ..d
            };
            let (f, t) = simulate_lattice_panel(&spec).map_err(as_usage)?;
            (f, Truth::Lattice(t))
        }
    };
    fs::create_dir_all(out)?;
    write_panel(&field, BufWriter::new(File::create(out.join("panel.csv"))?))?;
    fs::write(
        out.join("truth.json"),
        serde_json::to_string_pretty(&truth)? + "\n",
    )?;
    println!(
        "wrote {}×{} panel with {} time nodes to {}",
        field.rows(),
        field.cols(),
        field.grid().len(),
        out.display()
    );
    Ok(())
}

fn as_usage(e: Error) -> CliError {
    match e {
        Error::InvalidInput(msg) => CliError::Usage(msg),
        other => CliError::Run(other),
    }
}

fn panel_entries(field: &LatticeField, nodes: &[(usize, usize)], taus: &[usize]) -> CurveTable {
    let tau = field.grid().nodes();
    nodes
        .iter()
        .map(|&(r, c)| {
            let col = field.data().column(field.node(r, c));
            ((r, c), taus.iter().map(|&g| (tau[g], col[g])).collect())
        })
        .collect()
}

fn write_table(table: &CurveTable, path: &Path) -> CliResult<()> {
    report::write_curves(table, BufWriter::new(File::create(path)?))?;
    Ok(())
}

fn cmd_fit(opts: &Opts) -> CliResult<()> {
    let pipeline = require_pipeline(opts)?;
    let field = load_input(opts)?;
    let out = require_out(opts)?.to_path_buf();
    fs::create_dir_all(&out)?;
    let summary = match pipeline {
        Pipeline::BayesSurface => fit_surface(&field, opts, &out)?,
        Pipeline::SpatialSpectral => fit_lattice(&field, opts, &out)?,
    };
    fs::write(
        out.join("summary.json"),
        serde_json::to_string_pretty(&summary)? + "\n",
    )?;
    let mean = report::render_directory(&out, &out)?;
    println!(
        "fit written to {}; mean absolute in-sample error {mean:.6e}",
        out.display()
    );
    Ok(())
}

fn fit_surface(field: &LatticeField, opts: &Opts, out: &Path) -> CliResult<serde_json::Value> {
    let config = bayes_config(opts)?;
    let series = SurfaceSeries::from_lattice(field)?;
    let fit = fit_bayes_surface(&series, &config)?;
    info!(
        "surface fit: k = {}, lambda = {:?}",
        fit.basis.len(),
        fit.lambda_hat
    );

    let mut beta = String::from("lag,node_row,node_col,value\n");
    for (i, b) in fit.fit.beta.iter().enumerate() {
        for (n, v) in b.values().iter().enumerate() {
            let _ = writeln!(
                beta,
                "{},{},{},{:.12e}",
                i + 1,
                n / field.cols(),
                n % field.cols(),
                v
            );
        }
    }
    fs::write(out.join("beta.csv"), beta)?;

    let mut lam = String::from("k,lambda_hat,prior_a,prior_b,r0_eigenvalue\n");
    for k in 0..fit.lambda_hat.len() {
        let _ = writeln!(
            lam,
            "{},{:.12e},{:.12e},{:.12e},{:.12e}",
            k + 1,
            fit.lambda_hat[k],
            fit.hyper.a[k],
            fit.hyper.b[k],
            fit.basis.values()[k]
        );
    }
    fs::write(out.join("lambda.csv"), lam)?;

    let rows = &fit.fit.rows;
    let levels = fit.predicted_levels()?;
    let nodes: Vec<(usize, usize)> = (0..field.rows())
        .flat_map(|r| (0..field.cols()).map(move |c| (r, c)))
        .collect();
    let tau = field.grid().nodes();
    let predicted: CurveTable = nodes
        .iter()
        .map(|&(r, c)| {
            let n = field.node(r, c);
            (
                (r, c),
                rows.iter()
                    .zip(&levels)
                    .map(|(&t, y)| (tau[t], y.values()[n]))
                    .collect(),
            )
        })
        .collect();
    write_table(&predicted, &out.join(PREDICTOR_CSV))?;
    write_table(&panel_entries(field, &nodes, rows), &out.join(RESPONSE_CSV))?;
    let _ = fs::remove_file(out.join(SPECTRAL_CSV));

    Ok(json!({
        "pipeline": "bayes-surface",
        "n": series.len(),
        "p": config.p,
        "k": fit.basis.len(),
        "rows": rows.len(),
        "first_row": rows.first().map(|r| r + 1),
        "lambda_hat": fit.lambda_hat,
        "prior_a": fit.hyper.a,
        "prior_b": fit.hyper.b,
        "gls_objective": fit.fit.objective,
        "seed": config.seed,
    }))
}

fn fit_lattice(field: &LatticeField, opts: &Opts, out: &Path) -> CliResult<serde_json::Value> {
    let config = spatial_config(opts)?;
    let fit = fit_spatial(field, &config)?;
    info!(
        "spatial fit: M = {}, ridge = {:e}",
        fit.basis.len(),
        fit.gls.ridge
    );

    let pairs = fit.regressors.pairs().to_vec();
    let lags = fit.regressors.lags().to_vec();
    let mut beta = String::from("pair,lag_i,lag_j,tau,value\n");
    for (q, b) in fit.betas.iter().enumerate() {
        let (i, j) = pairs[q];
        for (t, v) in field.grid().nodes().iter().zip(b.values().iter()) {
            let _ = writeln!(
                beta,
                "{},{}:{},{}:{},{},{:.12e}",
                q + 1,
                lags[i][0],
                lags[i][1],
                lags[j][0],
                lags[j][1],
                t,
                v
            );
        }
    }
    fs::write(out.join("beta.csv"), beta)?;
    fs::write(out.join(SPECTRAL_CSV), fit.estimate.to_csv())?;

    let (r0, c0) = fit.eval_origin();
    let (er, ec) = fit.eval_dims();
    let nodes: Vec<(usize, usize)> = (r0..r0 + er)
        .flat_map(|r| (c0..c0 + ec).map(move |c| (r, c)))
        .collect();
    let all: Vec<usize> = (0..field.grid().len()).collect();
    let tau = field.grid().nodes();
    let predicted: CurveTable = nodes
        .iter()
        .zip(&fit.predictions)
        .map(|(&node, y)| {
            (
                node,
                tau.iter()
                    .zip(y.values().iter())
                    .map(|(t, v)| (*t, *v))
                    .collect(),
            )
        })
        .collect();
    write_table(&predicted, &out.join(PREDICTOR_CSV))?;
    write_table(&panel_entries(field, &nodes, &all), &out.join(RESPONSE_CSV))?;

    Ok(json!({
        "pipeline": "spatial-spectral",
        "rows": field.rows(),
        "cols": field.cols(),
        "m": fit.basis.len(),
        "share": fit.long_run.share(fit.basis.len()),
        "lags": lags.iter().map(|h| format!("{}:{}", h[0], h[1])).collect::<Vec<_>>(),
        "bandwidth": fit.estimate.bandwidth,
        "window": fit.estimate.window.id(),
        "ridge": fit.gls.ridge,
        "taper": config.taper_fraction,
        "include_axis_frequencies": config.include_axis,
        "eval_origin": [r0, c0],
        "eval_dims": [er, ec],
    }))
}

fn cmd_cv(opts: &Opts) -> CliResult<()> {
    let pipeline = require_pipeline(opts)?;
    let field = load_input(opts)?;
    let out = require_out(opts)?;
    fs::create_dir_all(out)?;
    match pipeline {
        Pipeline::BayesSurface => {
            let config = bayes_config(opts)?;
            let rep = loocv(&SurfaceSeries::from_lattice(&field)?, &config)?;
            fs::write(out.join("loocv.csv"), rep.to_csv())?;
            println!(
                "LOOCV: {} iterations, mean error {:.10e}",
                rep.iterations(),
                rep.mean
            );
        }
        Pipeline::SpatialSpectral => {
            let config = spatial_config(opts)?;
            let folds = positive(opts.folds, "folds")?.unwrap_or(9);
            let rep = spatial_kfold_cv(&field, folds, &config)?;
            fs::write(out.join("spatial_cv.csv"), rep.to_csv())?;
            println!(
                "spatial CV: {} nodes, grand mean {:.9e}",
                rep.n_nodes(),
                rep.grand_mean
            );
        }
    }
    Ok(())
}

fn cmd_report(opts: &Opts) -> CliResult<()> {
    let input = opts
        .input
        .as_deref()
        .ok_or_else(|| usage("--input (a fit directory) is required"))?;
    if !input.join(PREDICTOR_CSV).exists() || !input.join(RESPONSE_CSV).exists() {
        return Err(usage(format!(
            "{} does not contain {PREDICTOR_CSV} and {RESPONSE_CSV}",
            input.display()
        )));
    }
    let out = opts.out.as_deref().unwrap_or(input);
    let mean = report::render_directory(input, out)?;
    println!(
        "report written to {}; mean absolute error {mean:.6e}",
        out.display()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        let args: Vec<OsString> = args.iter().map(OsString::from).collect();
        Cli::try_parse_from(args).unwrap()
    }

    #[test]
    fn lag_sequence_prefix_matches_defaults() {
        assert_eq!(lag_sequence(3), crate::spatial::DEFAULT_LAGS.to_vec());
        assert_eq!(lag_sequence(5)[3..], [[2, 0], [0, 2]]);
        assert_eq!(lag_sequence(8).last(), Some(&[2, 2]));
    }

    #[test]
    fn lags_parse_and_reject() {
        assert_eq!(parse_lags("1:0, 0:1").unwrap(), vec![[1, 0], [0, 1]]);
        assert!(parse_lags("1-0").is_err());
        assert!(parse_lags("a:0").is_err());
    }

    #[test]
    fn config_values_yield_to_flags() {
        let extra = config_args(
            "# comment\nseed = 4\nwindow=blackman-harris\nreuse_correlation = true\n\n",
        )
        .unwrap();
        let mut args: Vec<OsString> = vec!["funreg".into(), "fit".into()];
        args.extend(extra);
        args.extend(["--seed", "9"].map(OsString::from));
        let Command::Fit(o) = Cli::try_parse_from(args).unwrap().command else {
            panic!("expected fit");
        };
        assert_eq!(o.seed, Some(9));
        assert_eq!(o.window.as_deref(), Some("blackman-harris"));
        assert!(o.reuse_correlation);
        assert!(config_args("seed 4").is_err());
        assert!(config_args("include-axis-frequencies = maybe").is_err());
    }

    #[test]
    fn parameter_ranges_are_checked() {
        let Command::Fit(o) = parse(&["funreg", "fit", "--bandwidth=-1"]).command else {
            panic!()
        };
        assert!(matches!(spatial_config(&o), Err(CliError::Usage(_))));
        let Command::Fit(o) = parse(&["funreg", "fit", "--window", "hamming"]).command else {
            panic!()
        };
        assert!(matches!(spatial_config(&o), Err(CliError::Usage(_))));
        let Command::Fit(o) = parse(&["funreg", "fit", "--p", "0"]).command else {
            panic!()
        };
        assert!(matches!(bayes_config(&o), Err(CliError::Usage(_))));
        let Command::Fit(o) = parse(&["funreg", "fit", "--p", "4", "--ridge", "0.5"]).command
        else {
            panic!()
        };
        let c = spatial_config(&o).unwrap();
        assert_eq!(c.lags.len(), 4);
        assert_eq!(c.ridge, Some(0.5));
    }
}
