//! `nvpol`: simulate polarization-resolved PL/g² sweeps, fit them, and emit plot data.
//!
//! Exit status: 0 on success, 1 on input or validation errors, 2 when a fit stops at the
//! optimizer's iteration cap (the report is still written, flagged `converged: false`).

mod output;
mod report;

use clap::{Args, Parser, Subcommand};
use nvpol::config::ScenarioConfig;
use nvpol::dipole::{CapQuadrature, PolarizationResponse};
use nvpol::estimator::{Estimator, MonteCarlo};
use nvpol::odmr::{add_odmr_noise, spectrum};
use nvpol::statistics::{g2_map_three, g2_map_two};
use nvpol::synthetic::{PolarizationSweep, RandomSeed};
use nvpol::{DipoleEmitter, Error, OrientationLabel};
use output::{dense, matrix_csv, meta_line, write_file, Matrix};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "nvpol",
    version,
    about = "Polarization-resolved g2(0) analysis of NV centers"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario JSON file; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set ratio=0.3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Random seed; overrides the config's `seed` (default 0).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel fits and grids.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Omit the provenance line (which carries a timestamp) from outputs.
    #[arg(long, global = true)]
    no_meta: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a Poisson-noise polarization sweep CSV from the scenario.
    Simulate {
        #[arg(long)]
        out: PathBuf,
        /// Write expected values instead of a noisy sample.
        #[arg(long)]
        noiseless: bool,
    },
    /// Fit all orientation-pair hypotheses to a sweep CSV and write a JSON report.
    Fit {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write measured and best-fit curves as CSV.
        #[arg(long)]
        curves: Option<PathBuf>,
    },
    /// Monte Carlo spread of fitted ratio and background (per-trial CSV), or with
    /// `--min-time` the minimum acquisition time over the config's grid.
    Confidence {
        #[arg(long)]
        out: PathBuf,
        /// Summary JSON (means, covariance, ellipse area).
        #[arg(long)]
        summary: Option<PathBuf>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        min_time: bool,
    },
    /// Mean absolute fit errors and χ² over a background × ratio grid.
    SweepMap {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        trials: usize,
    },
    /// Unpolarized g²(0) heatmap for two or three emitters.
    G2Map {
        #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(2..=3))]
        emitters: u8,
        /// Columns x rows, e.g. 101x101.
        #[arg(long, default_value = "101x101")]
        grid: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// ODMR spectrum of the config's centers, with shot noise if `photons_per_point` is set.
    Odmr {
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-dipole and total polarized emission of every orientation against polarizer angle.
    DipoleCurves {
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated dipole rotation angles β in degrees.
        #[arg(long, default_value = "0", value_delimiter = ',')]
        beta_deg: Vec<f64>,
    },
}

#[derive(Debug)]
enum Failure {
    Input(String),
    NotConverged(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NonConvergence(m) => Failure::NotConverged(m),
            other => Failure::Input(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::NotConverged(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> CliResult {
    let common = &cli.common;
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Failure::Input(format!("thread pool: {e}")))?;
    }
    let mut cfg = match &common.config {
        Some(path) => ScenarioConfig::load(path)
            .map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?,
        None => ScenarioConfig::default(),
    };
    cfg = cfg.with_overrides(&common.overrides)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let seed = RandomSeed(cfg.seed);
    let meta = |name: &str, seeded: bool| {
        (!common.no_meta).then(|| meta_line(name, seeded.then_some(cfg.seed)))
    };

    match &cli.command {
        Command::Simulate { out, noiseless } => {
            let generator = cfg.generator()?;
            let system = cfg.emitter_system()?;
            let sweep = if *noiseless {
                generator.expected(&system, cfg.acquisition_time)?
            } else {
                generator.generate(&system, cfg.acquisition_time, seed)?
            };
            let mut buf = Vec::new();
            sweep.write_csv(&mut buf, meta("simulate", !noiseless).as_deref())?;
            write_file(out, &buf)?;
        }
        Command::Fit { input, out, curves } => {
            fit(&cfg, input, out, curves.as_deref(), meta("fit", false))?
        }
        Command::Confidence {
            out,
            summary,
            trials,
            min_time,
        } => {
            let mc = MonteCarlo::new(cfg.generator()?, cfg.fit_options())?;
            let truth = cfg.truth()?;
            if *min_time {
                let ratios = cfg
                    .ratio_grid
                    .clone()
                    .unwrap_or_else(|| linspace(0.0, 1.0, 5));
                let backgrounds = cfg
                    .background_grid
                    .clone()
                    .unwrap_or_else(|| linspace(0.0, 0.5, 5));
                let mut opts = cfg.min_time_options();
                if let Some(n) = trials {
                    opts.trials = *n;
                }
                let map =
                    mc.min_acquisition_time_map(truth.pair, &ratios, &backgrounds, &opts, seed)?;
                let text = matrix_csv(
                    meta("confidence --min-time", true).as_deref(),
                    "background",
                    &backgrounds,
                    "ratio",
                    &ratios,
                    &[Matrix {
                        quantity: "t_min",
                        values: map.t_min.clone(),
                    }],
                );
                write_file(out, text.as_bytes())?;
                if let Some(path) = summary {
                    write_file(path, &json_bytes(&map)?)?;
                }
            } else {
                let n = trials.unwrap_or(cfg.trials);
                let s = mc.confidence(&truth, cfg.acquisition_time, n, seed)?;
                let mut text = String::new();
                if let Some(m) = meta("confidence", true) {
                    let _ = writeln!(text, "# {m}");
                }
                text.push_str("trial,ratio,background\n");
                for (k, [r, b]) in s.samples.iter().enumerate() {
                    let _ = writeln!(text, "{k},{r},{b}");
                }
                if let Some(path) = summary {
                    write_file(path, &json_bytes(&s)?)?;
                }
                write_file(out, text.as_bytes())?;
            }
        }
        Command::SweepMap { out, trials } => {
            let mc = MonteCarlo::new(cfg.generator()?, cfg.fit_options())?;
            let truth = cfg.truth()?;
            let ratios = cfg
                .ratio_grid
                .clone()
                .unwrap_or_else(|| linspace(0.0, 1.0, 11));
            let backgrounds = cfg
                .background_grid
                .clone()
                .unwrap_or_else(|| linspace(0.0, 1.0, 11));
            let sweep = mc.background_error_sweep(
                truth.pair,
                &backgrounds,
                &ratios,
                cfg.acquisition_time,
                *trials,
                seed,
            )?;
            let text = matrix_csv(
                meta("sweep-map", true).as_deref(),
                "background",
                &backgrounds,
                "ratio",
                &ratios,
                &[
                    Matrix {
                        quantity: "ratio_error",
                        values: dense(&sweep.ratio_error),
                    },
                    Matrix {
                        quantity: "background_error",
                        values: dense(&sweep.background_error),
                    },
                    Matrix {
                        quantity: "chi2",
                        values: dense(&sweep.chi2),
                    },
                ],
            );
            write_file(out, text.as_bytes())?;
        }
        Command::G2Map {
            emitters,
            grid,
            out,
        } => {
            let (cols, rows) = parse_grid(grid)?;
            let map = if *emitters == 2 {
                g2_map_two(&linspace(0.0, 1.0, cols), &linspace(0.0, 1.0, rows))?
            } else {
                g2_map_three(&linspace(0.0, 1.0, cols), &linspace(0.0, 1.0, rows))?
            };
            let text = matrix_csv(
                meta("g2-map", false).as_deref(),
                &map.row_label,
                &map.row_values,
                &map.column_label,
                &map.column_values,
                &[Matrix {
                    quantity: "g2",
                    values: dense(&map.values),
                }],
            );
            write_file(out, text.as_bytes())?;
        }
        Command::Odmr { out } => {
            let odmr = cfg.odmr_config();
            let clean = spectrum(&cfg.odmr_centers(), &odmr)?;
            let spec = match cfg.photons_per_point {
                Some(n) => add_odmr_noise(&clean, n, seed)?,
                None => clean,
            };
            let mut buf = Vec::new();
            spec.write_csv(
                &mut buf,
                meta("odmr", cfg.photons_per_point.is_some()).as_deref(),
            )?;
            write_file(out, &buf)?;
        }
        Command::DipoleCurves { out, beta_deg } => {
            let optics = cfg.optics();
            let quad = CapQuadrature::new(&optics)?;
            let mut text = String::new();
            if let Some(m) = meta("dipole-curves", false) {
                let _ = writeln!(text, "# {m}");
            }
            text.push_str("orientation,beta_deg,angle_deg,dipole_1,dipole_2,total\n");
            let angles: Vec<f64> = (0..=36).map(|i| 5.0 * i as f64).collect();
            for label in OrientationLabel::ALL {
                for &beta in beta_deg {
                    let emitter = DipoleEmitter::new(label, 1.0).with_beta(beta.to_radians());
                    let [p1, p2] = emitter.dipole_moments();
                    let r1 = PolarizationResponse::of_dipole(&p1, &quad);
                    let r2 = PolarizationResponse::of_dipole(&p2, &quad);
                    for a in &angles {
                        let (d1, d2) = (r1.rate(a.to_radians()), r2.rate(a.to_radians()));
                        let _ = writeln!(text, "{label},{beta},{a},{d1},{d2},{}", d1 + d2);
                    }
                }
            }
            write_file(out, text.as_bytes())?;
        }
    }
    Ok(())
}

fn fit(
    cfg: &ScenarioConfig,
    input: &Path,
    out: &Path,
    curves: Option<&Path>,
    meta: Option<String>,
) -> CliResult {
    let file = std::fs::File::open(input)
        .map_err(|e| Failure::Input(format!("{}: {e}", input.display())))?;
    let sweep = PolarizationSweep::read_csv(file)
        .map_err(|e| Failure::Input(format!("{}: {e}", input.display())))?;
    let optics = cfg.optics();
    let options = cfg.fit_options();
    let estimator = Estimator::new(&optics, options)?;
    let result = estimator.fit_all(&sweep)?;
    let report = report::Report::new(
        &result,
        input.display().to_string(),
        sweep.len(),
        &optics,
        options,
        meta.clone(),
    );
    write_file(out, &json_bytes(&report)?)?;

    if let Some(path) = curves {
        let model = estimator.model_sweep(&result.best_fit.hypothesis, &sweep.angles_deg)?;
        let mut text = String::new();
        if let Some(m) = &meta {
            let _ = writeln!(text, "# {m}");
        }
        text.push_str("angle_deg,intensity,model_intensity,g2,model_g2\n");
        for i in 0..sweep.len() {
            let _ = writeln!(
                text,
                "{},{},{},{},{}",
                sweep.angles_deg[i],
                sweep.intensities[i],
                model.intensities[i],
                sweep.g2_values[i],
                model.g2_values[i]
            );
        }
        write_file(path, text.as_bytes())?;
    }
    if !result.converged {
        return Err(Failure::NotConverged(
            "at least one hypothesis stopped at the iteration cap".into(),
        ));
    }
    Ok(())
}

fn json_bytes<T: serde::Serialize>(value: &T) -> CliResult<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Failure::Input(e.to_string()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn linspace(start: f64, stop: f64, n: usize) -> Vec<f64> {
    if n < 2 {
        return vec![start; n];
    }
    (0..n)
        .map(|i| start + (stop - start) * i as f64 / (n - 1) as f64)
        .collect()
}

fn parse_grid(text: &str) -> CliResult<(usize, usize)> {
    let parsed = text.split_once(['x', 'X']).and_then(|(a, b)| {
        Some((
            a.trim().parse::<usize>().ok()?,
            b.trim().parse::<usize>().ok()?,
        ))
    });
    match parsed {
        Some((c, r)) if c >= 2 && r >= 2 => Ok((c, r)),
        _ => Err(Failure::Input(format!(
            "grid {text:?} is not COLSxROWS with at least 2 each"
        ))),
    }
}
