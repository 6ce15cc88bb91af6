use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use tailfl_core::config::SimConfig;
use tailfl_core::federated::{self, read_reports_csv, write_reports_csv, SelectionVector};
use tailfl_core::sim::{self, OnlineOptions, Scheme};

#[derive(Parser)]
#[command(name = "tailfl", version, about = "AoI/URLLC power control with federated GPD tail learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit local GPD models, select and aggregate them (writes models.csv, selection.csv).
    Train {
        #[command(flatten)]
        common: Common,
        /// Also repeat the round this many times and write fl_spread.csv.
        #[arg(long)]
        rounds: Option<usize>,
    },
    /// Run the online power-control simulation (writes metrics.csv, records.csv, ccdf.csv).
    Simulate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArgs,
        /// Sensors whose per-transmission records go to records.csv.
        #[arg(long, default_value_t = 1)]
        record_sensors: usize,
    },
    /// Run the online phase for each V (writes sweep.csv).
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArgs,
        /// Comma-separated V values in 1/W, e.g. `1,10,100,1000`.
        #[arg(long, value_delimiter = ',', conflicts_with = "v_log")]
        v_grid: Option<Vec<f64>>,
        /// Log-spaced grid `lo:hi:count` in decades, e.g. `0:5:11` (the default).
        #[arg(long)]
        v_log: Option<String>,
    },
    /// R/S Hurst estimate of a one-column CSV series.
    Hurst {
        #[arg(long)]
        input: PathBuf,
        /// Column to read; defaults to the first.
        #[arg(long)]
        column: Option<String>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    Proposed,
    Fedavg,
}

#[derive(Args)]
struct ModelArgs {
    /// models.csv from `train`; trained in-process when omitted.
    #[arg(long)]
    model: Option<PathBuf>,
    /// selection.csv from `train`; defaults to the file next to --model.
    #[arg(long)]
    selection: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SchemeArg::Proposed)]
    scheme: SchemeArg,
}

#[derive(Args)]
struct Common {
    /// Key-value TOML configuration; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value = ".")]
    out: PathBuf,

    #[arg(long = "k")]
    num_sensors: Option<usize>,
    #[arg(long)]
    bandwidth_hz: Option<f64>,
    #[arg(long)]
    p_max_dbm: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    data_bits: Option<f64>,
    #[arg(long)]
    noise_dbm_hz: Option<f64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    tail_quantile: Option<f64>,
    #[arg(long)]
    f_threshold: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    q_threshold_s: Option<f64>,
    #[arg(long)]
    v: Option<f64>,
    #[arg(long)]
    distance_m: Option<f64>,
    #[arg(long)]
    hurst: Option<f64>,
    #[arg(long)]
    hurst_max: Option<f64>,
    #[arg(long)]
    history_len: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    runs: Option<usize>,
}

macro_rules! override_fields {
    ($src:expr, $dst:expr, $($field:ident),* $(,)?) => {
        $( if let Some(v) = $src.$field { $dst.$field = v; } )*
    };
}

impl Common {
    fn config(&self) -> Result<SimConfig> {
        let mut cfg = match &self.config {
            Some(p) => SimConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
            None => SimConfig::default(),
        };
        override_fields!(
            self, cfg, num_sensors, bandwidth_hz, p_max_dbm, beta, data_bits, noise_dbm_hz,
            learning_rate, epsilon, tail_quantile, f_threshold, iterations, q_threshold_s, v,
            distance_m, hurst, history_len, horizon, warmup,
        );
        if let Some(h) = self.hurst_max {
            cfg.hurst_max = Some(h);
        }
        if let Some(r) = self.runs {
            cfg.monte_carlo_runs = r;
        }
        cfg.seed = self.seed;
        cfg.validate()?;
        std::fs::create_dir_all(&self.out)
            .with_context(|| format!("creating {}", self.out.display()))?;
        Ok(cfg)
    }
}

fn tail_models(cfg: &SimConfig, args: &ModelArgs) -> Result<Vec<sim::TailModel>> {
    let scheme = match args.scheme {
        SchemeArg::Proposed => Scheme::Proposed,
        SchemeArg::Fedavg => Scheme::FedAvg,
    };
    let Some(path) = &args.model else {
        eprintln!("no --model given; training in-process");
        return Ok(sim::run_training_phase(cfg)?.tail_models(scheme)?);
    };
    let reports = read_reports_csv(path).with_context(|| format!("reading {}", path.display()))?;
    if reports.is_empty() {
        bail!("{} holds no models", path.display());
    }
    let selection = match scheme {
        Scheme::FedAvg => SelectionVector::all(reports.len()),
        Scheme::Proposed => {
            let sel_path = args
                .selection
                .clone()
                .unwrap_or_else(|| path.with_file_name("selection.csv"));
            SelectionVector::read_csv(&sel_path, &reports)
                .with_context(|| format!("reading {}", sel_path.display()))?
        }
    };
    let global = federated::fed_average(&reports, &selection)?;
    Ok(sim::tail_models(&reports, global)?)
}

fn parse_log_grid(grid: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = grid.split(':').collect();
    let [lo, hi, n] = parts.as_slice() else {
        bail!("--v-log expects lo:hi:count, got `{grid}`");
    };
    Ok(sim::log_grid(lo.parse()?, hi.parse()?, n.parse()?))
}

fn read_series(path: &Path, column: Option<&str>) -> Result<Vec<f64>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let idx = match column {
        Some(name) => r
            .headers()?
            .iter()
            .position(|h| h.trim() == name)
            .with_context(|| format!("no column `{name}`"))?,
        None => 0,
    };
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let field = rec.get(idx).context("short row")?;
        out.push(field.trim().parse::<f64>().with_context(|| format!("bad value `{field}`"))?);
    }
    Ok(out)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Train { common, rounds } => {
            let cfg = common.config()?;
            let out = sim::run_training_phase(&cfg)?;
            write_reports_csv(common.out.join("models.csv"), &out.reports)?;
            out.selection.write_csv(common.out.join("selection.csv"), &out.reports)?;
            println!(
                "selected {}/{} sensors; proposed sigma={} xi={}; fedavg sigma={} xi={}",
                out.selection.count(),
                out.reports.len(),
                out.global_proposed.sigma,
                out.global_proposed.xi,
                out.global_fedavg.sigma,
                out.global_fedavg.xi
            );
            if let Some(r) = rounds {
                let spread = sim::global_model_spread(&cfg, r)?;
                let mut w = csv::Writer::from_path(common.out.join("fl_spread.csv"))?;
                w.serialize(spread)?;
                w.flush()?;
                println!(
                    "std over {r} rounds: proposed ({}, {}) fedavg ({}, {})",
                    spread.proposed_sigma_std,
                    spread.proposed_xi_std,
                    spread.fedavg_sigma_std,
                    spread.fedavg_xi_std
                );
            }
        }
        Command::Simulate { common, model, record_sensors } => {
            let cfg = common.config()?;
            let tails = tail_models(&cfg, &model)?;
            let res = sim::run_online_phase(&cfg, &tails, OnlineOptions { record_sensors })?;
            sim::write_metrics_csv(common.out.join("metrics.csv"), &res.metrics)?;
            sim::write_records_csv(common.out.join("records.csv"), &res.records)?;
            sim::write_ccdf_csv(common.out.join("ccdf.csv"), &res.ccdf())?;
            let m = res.metrics;
            println!(
                "P={} W  Pmin={} W  peakAoI={} s  f={}  Pr(q>q_th)={}",
                m.p_avg_w, m.p_min_avg_w, m.peak_aoi_s, m.f_avg, m.violation_prob
            );
        }
        Command::Sweep { common, model, v_grid, v_log } => {
            let cfg = common.config()?;
            let grid = match (v_grid, v_log) {
                (Some(g), _) => g,
                (None, Some(grid)) => parse_log_grid(&grid)?,
                (None, None) => sim::log_grid(0.0, 5.0, 11),
            };
            let tails = tail_models(&cfg, &model)?;
            let table = sim::sweep_v(&cfg, &tails, &grid)?;
            table.write_csv(common.out.join("sweep.csv"))?;
            let s = table.structure();
            println!(
                "argmin P at V={} (interior: {}); monotonicity inversions {:?}",
                table.rows[s.argmin_power].v, s.interior_power_minimum, s.inversions
            );
        }
        Command::Hurst { input, column } => {
            let series = read_series(&input, column.as_deref())?;
            let raw = federated::hurst_estimate_raw(&series)?;
            println!("hurst={} raw={}", raw.clamp(federated::HURST_SRD, federated::HURST_MAX), raw);
        }
    }
    Ok(())
}
