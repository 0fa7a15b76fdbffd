use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::AppError;
use crate::output::{ensure_dir, resolve_out, write_csv, write_json, Manifest};
use crate::plot::{plot_file, PlotKind};
use crate::reproduce::{reproduce, NAMES};
use crate::sweep::{
    error_summary, gap_summary, run_sweep, separation_checks, suboptimality_checks, ClaimCheck, SummaryRow,
    SweepConfig, SweepOutput,
};
use crate::verify::{verify_all, VerifyConfig};

/// Exact and finite-sample comparisons of reward-model pipelines with direct
/// preference optimization.
#[derive(Debug, Parser)]
#[command(name = "prefgap", version)]
pub struct Cli {
    /// Base seed; sweeps use seeds `seed, seed + 1, ...`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON sweep configuration (for verify-all, an object with `separation`
    /// and `suboptimality` sweeps); command-line flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Rerun a named construction and check its claim.
    Reproduce {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(NAMES))]
        name: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimation-error sweep on the dense-to-sparse env.
    Dtsp(SweepArgs),
    /// Policy sub-optimality sweep on the dense-to-sparse env.
    Subopt(SweepArgs),
    /// Render a CSV table as SVG.
    Plot {
        #[arg(long, value_enum)]
        kind: PlotKind,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every acceptance criterion.
    VerifyAll {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Default, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub n_grid: Option<Vec<usize>>,
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub gamma_c: Option<Vec<f64>>,
    /// Norm of the dense reward component; 0 removes it.
    #[arg(long)]
    pub dense_norm: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl SweepArgs {
    fn apply(&self, cfg: &mut SweepConfig) {
        if let Some(v) = self.d {
            cfg.d = v;
        }
        if let Some(v) = self.k {
            cfg.k = v;
        }
        if let Some(v) = &self.n_grid {
            cfg.n_grid = v.clone();
        }
        if let Some(v) = self.seeds {
            cfg.seeds = v;
        }
        if let Some(v) = &self.gamma_c {
            cfg.gamma_c = v.clone();
        }
        if let Some(v) = self.dense_norm {
            cfg.dense_norm = v;
        }
    }
}

pub const SWEEP_ARTIFACTS: [&str; 7] = [
    "separation_runs.csv",
    "separation.csv",
    "envs.csv",
    "separation.svg",
    "suboptimality_runs.csv",
    "suboptimality.csv",
    "suboptimality.svg",
];

/// Writes run-level and summary tables plus their plots. Sub-optimality files
/// are skipped when the sweep computed no gaps.
pub fn write_sweep_tables(
    dir: &Path,
    out: &SweepOutput,
    errors: &[SummaryRow],
    gaps: &[SummaryRow],
) -> Result<Vec<String>, AppError> {
    let mut written = Vec::new();
    write_csv(&dir.join("separation_runs.csv"), &out.errors)?;
    write_csv(&dir.join("separation.csv"), errors)?;
    write_csv(&dir.join("envs.csv"), &out.envs)?;
    plot_file(PlotKind::Separation, &dir.join("separation.csv"), &dir.join("separation.svg"))?;
    written.extend(SWEEP_ARTIFACTS[..4].iter().map(|s| s.to_string()));
    if !out.gaps.is_empty() {
        write_csv(&dir.join("suboptimality_runs.csv"), &out.gaps)?;
        write_csv(&dir.join("suboptimality.csv"), gaps)?;
        plot_file(PlotKind::Suboptimality, &dir.join("suboptimality.csv"), &dir.join("suboptimality.svg"))?;
        written.extend(SWEEP_ARTIFACTS[4..].iter().map(|s| s.to_string()));
    }
    Ok(written)
}

fn load_config<T: serde::de::DeserializeOwned>(path: Option<&Path>, default: T) -> Result<T, AppError> {
    match path {
        None => Ok(default),
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            serde_json::from_str(&text).map_err(|e| AppError::Schema(format!("{}: {e}", p.display())))
        }
    }
}

fn claims_result(checks: &[ClaimCheck]) -> Result<(), AppError> {
    for c in checks {
        println!("{} {}: {}", if c.passed { "ok  " } else { "FAIL" }, c.name, c.detail);
    }
    let bad: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    if bad.is_empty() {
        Ok(())
    } else {
        Err(AppError::Claim(bad.join("; ")))
    }
}

fn sweep_command(cli: &Cli, args: &SweepArgs, subopt: bool) -> Result<(), AppError> {
    let default = if subopt { SweepConfig::suboptimality_default() } else { SweepConfig::default() };
    let mut cfg = load_config(cli.config.as_deref(), default)?;
    args.apply(&mut cfg);
    if let Some(s) = cli.seed {
        cfg.base_seed = s;
    }
    cfg.suboptimality = subopt;
    let dir = resolve_out(args.out.as_deref());
    ensure_dir(&dir)?;
    let out = run_sweep(&cfg)?;
    let errors = error_summary(&out, cfg.base_seed);
    let gaps = gap_summary(&out, cfg.base_seed);
    let artifacts = write_sweep_tables(&dir, &out, &errors, &gaps)?;
    let name = if subopt { "subopt" } else { "dtsp" };
    write_json(&dir.join("manifest.json"), &Manifest::new(name, &cfg, cfg.base_seed, artifacts))?;
    let checks = if subopt { suboptimality_checks(&out, &gaps, &cfg) } else { separation_checks(&errors, &cfg) };
    write_csv(&dir.join("claims.csv"), &checks)?;
    claims_result(&checks)
}

pub fn run(cli: &Cli) -> Result<(), AppError> {
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(AppError::Usage("--jobs must be positive".into()));
        }
        // Fails only if a pool already exists, in which case it is reused.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j).build_global();
    }
    let seed = cli.seed.unwrap_or(0);
    match &cli.command {
        Command::Reproduce { name, out } => {
            let dir = resolve_out(out.as_deref());
            let results = reproduce(name, seed, &dir);
            if let Ok(rs) = &results {
                for r in rs {
                    println!("{}: V_RLHF {} V_DPO {} V* {}", r.name, r.v_rlhf, r.v_dpo, r.v_star);
                }
            }
            results.map(|_| ())
        }
        Command::Dtsp(args) => sweep_command(cli, args, false),
        Command::Subopt(args) => sweep_command(cli, args, true),
        Command::Plot { kind, input, out } => plot_file(*kind, input, out),
        Command::VerifyAll { out } => {
            let cfg = load_config(cli.config.as_deref(), VerifyConfig::default())?.with_seed(seed);
            let dir = resolve_out(out.as_deref());
            ensure_dir(&dir)?;
            let crit = verify_all(seed, &dir, &cfg)?;
            for c in &crit {
                println!("{}", c.line());
            }
            let bad: Vec<String> =
                crit.iter().filter(|c| !(c.passed && c.within_budget())).map(|c| format!("criterion {}", c.id)).collect();
            if bad.is_empty() {
                Ok(())
            } else {
                Err(AppError::Claim(bad.join(", ")))
            }
        }
    }
}
