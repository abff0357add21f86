use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use skewsim::sim::{
    pair_trace, run_capture_freq_study, run_experiment, run_os_jitter_probe, run_rx_rx_study,
    HistogramSummary,
};
use skewsim::sync::{log_grid, train_covariances, MeasurementModel};
use skewsim_cli::error::{CliError, Result};
use skewsim_cli::{config, records};

#[derive(Parser)]
#[command(name = "skewsim", version, about = "Clock synchronization simulator and studies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured experiment sweep and write per-period error CSVs.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Seed count (`20`) or explicit list (`3,5,9`); defaults to the
        /// config seed alone.
        #[arg(long)]
        seeds: Option<String>,
        /// Override the config's sync period(s) with a single value.
        #[arg(long)]
        period: Option<f64>,
    },
    /// Receiver-to-receiver timestamp difference distribution.
    StudyRxrx {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, default_value_t = 64)]
        bins: usize,
    },
    /// Slope statistics across capture frequencies.
    StudyCapture {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated capture frequencies in Hz.
        #[arg(long, value_delimiter = ',', default_values_t = [2e6, 4e6, 16e6])]
        freqs: Vec<f64>,
    },
    /// Distribution of consecutive clock-read differences under OS jitter.
    StudyOs {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Probe window, seconds.
        #[arg(long, default_value_t = 1.0)]
        window: f64,
        /// Read rate, reads per second.
        #[arg(long, default_value_t = 1e5)]
        rate: f64,
        #[arg(long, default_value_t = 64)]
        bins: usize,
    },
    /// Grid-search the Kalman covariances on simulated training traces.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long)]
        period: Option<f64>,
        /// Grid points per axis.
        #[arg(long, default_value_t = 10)]
        grid: usize,
        /// Half-span of the grid around the model-derived point, as a factor.
        #[arg(long, default_value_t = 1e3)]
        span: f64,
    },
    /// Per-(period, engine) mean and std of a records CSV or directory.
    Stats {
        /// A records CSV or a directory containing errors_*.csv files.
        path: PathBuf,
    },
}

fn parse_seeds(flag: &Option<String>, base_seed: u64) -> Result<Vec<u64>> {
    let Some(text) = flag else {
        return Ok(vec![base_seed]);
    };
    let issues = |msg: String| CliError::validation(vec![msg]);
    if text.contains(',') {
        let mut seeds = Vec::new();
        for tok in text.split(',') {
            let tok = tok.trim();
            if tok.is_empty() {
                continue;
            }
            seeds.push(
                tok.parse::<u64>()
                    .map_err(|_| issues(format!("seeds: bad seed `{tok}`")))?,
            );
        }
        if seeds.is_empty() {
            return Err(issues("seeds: empty list".into()));
        }
        Ok(seeds)
    } else {
        let n: u64 = text
            .trim()
            .parse()
            .map_err(|_| issues(format!("seeds: expected a count or list, got `{text}`")))?;
        if n == 0 {
            return Err(issues("seeds: count must be >= 1".into()));
        }
        Ok((0..n).map(|i| base_seed.wrapping_add(i)).collect())
    }
}

fn ensure_out_dir(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|source| CliError::Io { path: out.to_path_buf(), source })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

fn histogram_csv(h: &HistogramSummary) -> String {
    let mut out = String::from("bin_lo,bin_hi,count\n");
    for (i, count) in h.counts.iter().enumerate() {
        let lo = h.min + i as f64 * h.bin_width;
        let hi = if i + 1 == h.counts.len() { h.max } else { h.min + (i + 1) as f64 * h.bin_width };
        writeln!(out, "{lo:e},{hi:e},{count}").expect("string write");
    }
    out
}

fn histogram_summary_line(h: &HistogramSummary) -> String {
    format!(
        "n={} min={:e} max={:e} range={:e} mean={:e} variance={:e}",
        h.n, h.min, h.max, h.range, h.mean, h.variance
    )
}

fn cmd_run(config_path: &Path, out: &Path, seeds: &Option<String>, period: &Option<f64>) -> Result<()> {
    let file = config::parse_config(config_path)?;
    let seeds = parse_seeds(seeds, file.base.seed)?;
    let periods: Vec<f64> = match period {
        Some(p) => vec![*p],
        None => file.sync_periods.clone(),
    };
    ensure_out_dir(out)?;
    for &p in &periods {
        // One run per seed, in parallel; the merge order is the seed list,
        // and the writer sorts, so output is independent of scheduling.
        let runs: Vec<Result<Vec<skewsim::sim::SyncErrorRecord>>> = seeds
            .par_iter()
            .map(|&seed| run_experiment(&file.experiment(p, seed)).map_err(CliError::from))
            .collect();
        let mut merged = Vec::new();
        for run in runs {
            merged.extend(run?);
        }
        let path = out.join(records::records_file_name(p));
        let rows = records::write_records(&merged, &path)?;
        println!("wrote {rows} records to {}", path.display());
    }
    Ok(())
}

fn cmd_train(
    config_path: &Path,
    out: &Path,
    seeds: &Option<String>,
    period: &Option<f64>,
    grid_points: usize,
    span: f64,
) -> Result<()> {
    let file = config::parse_config(config_path)?;
    let seeds = parse_seeds(seeds, file.base.seed)?;
    let periods: Vec<f64> = match period {
        Some(p) => vec![*p],
        None => file.sync_periods.clone(),
    };
    if !(span.is_finite() && span > 1.0) {
        return Err(CliError::validation(vec![format!("span: must be > 1, got {span}")]));
    }
    ensure_out_dir(out)?;
    let mut selected_csv = String::from("period,q,r\n");
    for &p in &periods {
        let traces: Vec<Result<Vec<skewsim::TimestampPair>>> = seeds
            .par_iter()
            .map(|&seed| pair_trace(&file.experiment(p, seed)).map_err(CliError::from))
            .collect();
        let mut all = Vec::with_capacity(traces.len());
        for t in traces {
            all.push(t?);
        }
        let model = MeasurementModel::from_noise_profile(
            &file.base.clock_params,
            file.base.capture.as_ref(),
            p,
        );
        let (q0, r0) = model.noise_covariances();
        let q0 = q0.max(1e-24);
        let r0 = r0.max(1e-24);
        let grid = log_grid((q0 / span, q0 * span), (r0 / span, r0 * span), grid_points)?;
        let (q, r) = train_covariances(&all, &grid)?;
        println!("period {p}: selected q={q:e} r={r:e} (model-derived q={q0:e} r={r0:e})");
        writeln!(selected_csv, "{p},{q:e},{r:e}").expect("string write");
    }
    let path = out.join("trained_covariances.csv");
    write_text(&path, &selected_csv)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn run_cli(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Run { config, out, seeds, period } => cmd_run(config, out, seeds, period),
        Command::StudyRxrx { config, out, samples, bins } => {
            let file = config::parse_config(config)?;
            let h = run_rx_rx_study(&file.base, *samples, *bins)?;
            ensure_out_dir(out)?;
            let path = out.join("rxrx_hist.csv");
            write_text(&path, &histogram_csv(&h))?;
            println!("{}", histogram_summary_line(&h));
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::StudyCapture { config, out, freqs } => {
            let file = config::parse_config(config)?;
            let results = run_capture_freq_study(&file.base, freqs)?;
            ensure_out_dir(out)?;
            let mut csv = String::from("freq_hz,m_s,std_s,var_s,n\n");
            for (freq, stats) in &results {
                println!(
                    "freq {freq:e}: m_s = {:.12e}  var_s = {:.6e}  (n = {})",
                    stats.m_s, stats.var_s, stats.n
                );
                writeln!(csv, "{freq:e},{:e},{:e},{:e},{}", stats.m_s, stats.std_s, stats.var_s, stats.n)
                    .expect("string write");
            }
            let path = out.join("capture_freqs.csv");
            write_text(&path, &csv)?;
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::StudyOs { config, out, window, rate, bins } => {
            let file = config::parse_config(config)?;
            let jitter = file.base.clock_params.read_jitter;
            let h = run_os_jitter_probe(&jitter, *window, *rate, file.base.seed, *bins)?;
            ensure_out_dir(out)?;
            let path = out.join("os_hist.csv");
            write_text(&path, &histogram_csv(&h))?;
            println!("{}", histogram_summary_line(&h));
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::Train { config, out, seeds, period, grid, span } => {
            cmd_train(config, out, seeds, period, *grid, *span)
        }
        Command::Stats { path } => {
            let rows = records::stats_command(path)?;
            print!("{}", records::format_stats(&rows));
            Ok(())
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run_cli(cli) {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}
