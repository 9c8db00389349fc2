//! Command-line front end for the adaptation pipeline.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 runtime failure.

mod selfcheck;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use scope_core::error::Error;
use scope_core::fusion::{manifest_from_jsonl, manifest_to_jsonl};
use scope_core::metrics::{pseudo_quality_report, quality_rows_to_csv};
use scope_core::orchestrator::{
    experiment_to_csv, run_experiment_matrix, run_stage2, selected_subset_kappa,
    stage1_build_bank, stage1_manifest, stage1_train_tpn, ExperimentReport, ScopeConfig,
    Stage1Artifacts, Variant,
};
use scope_core::proadapter::{load_adapter, save_adapter};
use scope_core::prototypes::PrototypeBank;
use scope_core::synthdata::{read_cohort, write_cohort};
use scope_core::tpn::TpnModel;

#[derive(Parser)]
#[command(
    name = "scope",
    about = "Two-stage semi-supervised adaptation on synthetic subject-shifted cohorts",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonOpts {
    /// TOML config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted-path config overrides, e.g. --set stage2.total_epochs=40.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory (default: $SCOPE_OUT or the current directory).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print progress details.
    #[arg(long, short)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort file plus its JSON manifest.
    GenData {
        #[command(flatten)]
        common: CommonOpts,
        /// Override the generation seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the task-prior network on the labeled split.
    TrainTpn {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        cohort: Option<PathBuf>,
    },
    /// Cluster and refine the prototype bank.
    BuildPrototypes {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        cohort: Option<PathBuf>,
        #[arg(long)]
        tpn: Option<PathBuf>,
    },
    /// Build the confidence-scored pseudo-label manifest (JSON lines).
    PseudoLabel {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        cohort: Option<PathBuf>,
        #[arg(long)]
        tpn: Option<PathBuf>,
        #[arg(long)]
        prototypes: Option<PathBuf>,
    },
    /// Stage-II adapter training; writes the adapter checkpoint and run
    /// report.
    Adapt {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        cohort: Option<PathBuf>,
        #[arg(long)]
        tpn: Option<PathBuf>,
        #[arg(long)]
        prototypes: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Evaluate an adapter checkpoint on a cohort split.
    Evaluate {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        cohort: Option<PathBuf>,
        #[arg(long)]
        tpn: Option<PathBuf>,
        #[arg(long)]
        prototypes: Option<PathBuf>,
        #[arg(long)]
        adapter: Option<PathBuf>,
        /// Split to score: validation or test.
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Coverage/quality table over a threshold grid, or a comparison table
    /// from a sweep matrix.
    Report {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        cohort: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Render the matrix.json emitted by `sweep` as a comparison CSV.
        #[arg(long)]
        matrix: Option<PathBuf>,
    },
    /// Multi-seed experiment matrix over pipeline variants.
    Sweep {
        #[command(flatten)]
        common: CommonOpts,
        /// Number of seeds (1..=n); omitted means run.seeds from config.
        #[arg(long)]
        seeds: Option<u64>,
        /// Variant set: baselines, ablations, or all.
        #[arg(long, default_value = "baselines")]
        variants: String,
    },
    /// Run the built-in invariant suite and report pass/fail.
    Selfcheck,
}

fn out_dir(common: &CommonOpts) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| std::env::var_os("SCOPE_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn parse_overrides(set: &[String]) -> Result<Vec<(String, String)>, String> {
    set.iter()
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| format!("override '{kv}' is not KEY=VALUE"))
        })
        .collect()
}

/// Load config + overrides; echo the effective config into the output
/// directory so every artifact records how it was produced.
fn load_config(common: &CommonOpts) -> Result<(ScopeConfig, PathBuf), CliError> {
    let overrides = parse_overrides(&common.set).map_err(CliError::Usage)?;
    let text = match &common.config {
        Some(path) => std::fs::read_to_string(path).map_err(|e| {
            CliError::Usage(format!(
                "cannot read config {}: {e}; expected a TOML file with sections \
                 [data]/[tpn]/[prototypes]/[fusion]/[backbone]/[adapter]/[stage2]/[ablations]/[run]",
                path.display()
            ))
        })?,
        None => String::new(),
    };
    let cfg = ScopeConfig::from_toml(&text, &overrides)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let dir = out_dir(common);
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Runtime(e.to_string()))?;
    let echo = cfg
        .to_toml()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    std::fs::write(dir.join("effective_config.toml"), echo)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok((cfg, dir))
}

enum CliError {
    Usage(String),
    Runtime(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig(_) => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| CliError::Runtime(e.to_string()))
}

fn default_artifact(dir: &Path, chosen: &Option<PathBuf>, name: &str) -> PathBuf {
    chosen.clone().unwrap_or_else(|| dir.join(name))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData { common, seed } => {
            let (mut cfg, dir) = load_config(&common)?;
            if let Some(s) = seed {
                cfg.data.generate.seed = s;
            }
            let cohort = scope_core::synthdata::generate_cohort(&cfg.data.generate)?;
            let path = dir.join("cohort.bin");
            write_cohort(&cohort, &path)?;
            if common.verbose {
                eprintln!(
                    "cohort: {} labeled / {} unlabeled / {} validation / {} test",
                    cohort.labeled().len(),
                    cohort.unlabeled().len(),
                    cohort.validation().len(),
                    cohort.test().len()
                );
            }
            println!("{}", path.display());
            Ok(())
        }
        Command::TrainTpn { common, cohort } => {
            let (cfg, dir) = load_config(&common)?;
            let cohort_path = default_artifact(&dir, &cohort, "cohort.bin");
            let cohort = read_cohort(&cohort_path)?;
            let (model, log) = stage1_train_tpn(&cfg, &cohort, cfg.run.seed)?;
            let path = dir.join("tpn.bin");
            model.save(&path)?;
            write_json(&dir.join("tpn_log.json"), &log)?;
            if common.verbose {
                if let Some(last) = log.epochs.last() {
                    eprintln!(
                        "final epoch: ce {:.4}, geometry {:.4}, train acc {:.3}",
                        last.loss_ce, last.loss_etf, last.train_accuracy
                    );
                }
            }
            println!("{}", path.display());
            Ok(())
        }
        Command::BuildPrototypes {
            common,
            cohort,
            tpn,
        } => {
            let (cfg, dir) = load_config(&common)?;
            let cohort = read_cohort(&default_artifact(&dir, &cohort, "cohort.bin"))?;
            let model = TpnModel::load(&default_artifact(&dir, &tpn, "tpn.bin"))?;
            let (bank, log, warnings) = stage1_build_bank(&cfg, &cohort, &model, cfg.run.seed)?;
            for w in &warnings {
                eprintln!("warning: {w}");
            }
            let path = dir.join("prototypes.bin");
            bank.save(&path)?;
            write_json(&dir.join("refine_log.json"), &log)?;
            println!("{}", path.display());
            Ok(())
        }
        Command::PseudoLabel {
            common,
            cohort,
            tpn,
            prototypes,
        } => {
            let (cfg, dir) = load_config(&common)?;
            let cohort = read_cohort(&default_artifact(&dir, &cohort, "cohort.bin"))?;
            let model = TpnModel::load(&default_artifact(&dir, &tpn, "tpn.bin"))?;
            let bank = PrototypeBank::load(&default_artifact(&dir, &prototypes, "prototypes.bin"))?;
            let manifest = stage1_manifest(&cfg, &cohort, &model, &bank)?;
            let path = dir.join("manifest.jsonl");
            std::fs::write(&path, manifest_to_jsonl(&manifest)?)
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            if common.verbose {
                let selected = manifest.iter().filter(|r| r.selected).count();
                eprintln!("selected {selected} of {} unlabeled samples", manifest.len());
            }
            println!("{}", path.display());
            Ok(())
        }
        Command::Adapt {
            common,
            cohort,
            tpn,
            prototypes,
            manifest,
        } => {
            let (cfg, dir) = load_config(&common)?;
            let cohort = read_cohort(&default_artifact(&dir, &cohort, "cohort.bin"))?;
            let model = TpnModel::load(&default_artifact(&dir, &tpn, "tpn.bin"))?;
            let bank = PrototypeBank::load(&default_artifact(&dir, &prototypes, "prototypes.bin"))?;
            let manifest_text =
                std::fs::read_to_string(default_artifact(&dir, &manifest, "manifest.jsonl"))
                    .map_err(|e| CliError::Runtime(e.to_string()))?;
            let artifacts = Stage1Artifacts {
                tpn: model,
                bank,
                manifest: manifest_from_jsonl(&manifest_text)?,
                tpn_log: Default::default(),
                refine_log: Default::default(),
                warnings: Vec::new(),
            };
            let (mut report, backbone, stack) = run_stage2(&cfg, &cohort, &artifacts, cfg.run.seed)?;
            report.selected_quality_kappa = selected_subset_kappa(
                &artifacts.manifest,
                cohort.unlabeled_eval_labels(),
                cohort.classes(),
            );
            let path = dir.join("adapter.bin");
            save_adapter(&path, &backbone, &stack)?;
            write_json(&dir.join("run_report.json"), &report)?;
            if common.verbose {
                eprintln!(
                    "test kappa {:.4}, weighted F1 {:.4} (epoch {})",
                    report.test.kappa, report.test.weighted_f1, report.selected_epoch
                );
            }
            println!("{}", path.display());
            Ok(())
        }
        Command::Evaluate {
            common,
            cohort,
            tpn,
            prototypes,
            adapter,
            split,
        } => {
            let (cfg, dir) = load_config(&common)?;
            let cohort = read_cohort(&default_artifact(&dir, &cohort, "cohort.bin"))?;
            let model = TpnModel::load(&default_artifact(&dir, &tpn, "tpn.bin"))?;
            let bank = PrototypeBank::load(&default_artifact(&dir, &prototypes, "prototypes.bin"))?;
            let (backbone, stack) = load_adapter(&default_artifact(&dir, &adapter, "adapter.bin"))?;
            let samples = match split.as_str() {
                "validation" => cohort.validation(),
                "test" => cohort.test(),
                other => {
                    return Err(CliError::Usage(format!(
                        "unknown split '{other}' (expected validation or test)"
                    )))
                }
            };
            let metrics = scope_core::orchestrator::evaluate_adapted(
                &backbone,
                &stack,
                &model,
                &bank,
                cfg.ablations.prototype_conditioning_off,
                samples,
            )?;
            let text = serde_json::to_string_pretty(&metrics)
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            std::fs::write(dir.join(format!("metrics_{split}.json")), format!("{text}\n"))
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            println!("{text}");
            Ok(())
        }
        Command::Report {
            common,
            cohort,
            manifest,
            matrix,
        } => {
            let (_cfg, dir) = load_config(&common)?;
            if let Some(matrix_path) = matrix {
                let text = std::fs::read_to_string(&matrix_path)
                    .map_err(|e| CliError::Runtime(e.to_string()))?;
                let report: ExperimentReport =
                    serde_json::from_str(&text).map_err(|e| CliError::Runtime(e.to_string()))?;
                let csv = experiment_to_csv(&report);
                let path = dir.join("comparison.csv");
                std::fs::write(&path, &csv).map_err(|e| CliError::Runtime(e.to_string()))?;
                for inv in &report.inversions {
                    eprintln!("ordering inversion: {inv}");
                }
                print!("{csv}");
                return Ok(());
            }
            let cohort = read_cohort(&default_artifact(&dir, &cohort, "cohort.bin"))?;
            let manifest_text =
                std::fs::read_to_string(default_artifact(&dir, &manifest, "manifest.jsonl"))
                    .map_err(|e| CliError::Runtime(e.to_string()))?;
            let records = manifest_from_jsonl(&manifest_text)?;
            let grid: Vec<f64> = (0..20).map(|i| i as f64 * 0.05).collect();
            let rows = pseudo_quality_report(
                &records,
                cohort.unlabeled_eval_labels(),
                cohort.classes(),
                &grid,
            )?;
            let csv = quality_rows_to_csv(&rows, cohort.classes());
            let path = dir.join("quality.csv");
            std::fs::write(&path, &csv).map_err(|e| CliError::Runtime(e.to_string()))?;
            print!("{csv}");
            Ok(())
        }
        Command::Sweep {
            common,
            seeds,
            variants,
        } => {
            let (cfg, dir) = load_config(&common)?;
            let seed_list: Vec<u64> = match seeds {
                Some(n) => (1..=n).collect(),
                None => cfg.run.seeds.clone(),
            };
            let variant_list: Vec<Variant> = match variants.as_str() {
                "baselines" => Variant::BASELINES.to_vec(),
                "ablations" => Variant::ABLATIONS.to_vec(),
                "all" => {
                    let mut v = Variant::BASELINES.to_vec();
                    v.extend(Variant::ABLATIONS.iter().skip(1));
                    v
                }
                other => {
                    return Err(CliError::Usage(format!(
                        "unknown variant set '{other}' (expected baselines, ablations, or all)"
                    )))
                }
            };
            let report = run_experiment_matrix(&cfg, &variant_list, &seed_list)?;
            for failure in &report.failures {
                eprintln!("warning: {failure}");
            }
            for inv in &report.inversions {
                eprintln!("ordering inversion: {inv}");
            }
            write_json(&dir.join("matrix.json"), &report)?;
            let csv = experiment_to_csv(&report);
            let path = dir.join("matrix.csv");
            std::fs::write(&path, &csv).map_err(|e| CliError::Runtime(e.to_string()))?;
            print!("{csv}");
            Ok(())
        }
        Command::Selfcheck => {
            let all_green = selfcheck::run_all();
            if all_green {
                Ok(())
            } else {
                Err(CliError::Runtime("selfcheck failed".into()))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints its own message; parse failures map to the usage
            // exit code while --help/--version stay at 0.
            let code = e.exit_code();
            let _ = e.print();
            return if code == 0 {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
