//! Experiment configuration: a TOML file naming the system, scheduler, and
//! adversary, with cross-field validation. Rates inside and outside the
//! schedulers' stable ranges are both accepted — exploring instability is a
//! feature; bounds are only checked when the chosen rate actually claims
//! them.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use txsched_core::adversary::{
    parse_ratio, parse_stream, stream_to_csv, AdversaryParams, AutonomyModel, LowerBoundGenerator,
    ReplayGenerator, TokenBucketGenerator, WorkloadShape,
};
use txsched_core::analysis::{analyze, BoundSpec, StabilityReport};
use txsched_core::engine::{run_simulation, Generator, Trace};
use txsched_core::model::{SystemConfig, TxType};
use txsched_core::sched_centralized::{centralized_bounds, CentralizedScheduler};
use txsched_core::sched_distributed::{distributed_bounds, DistributedScheduler};

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemSection,
    pub scheduler: SchedulerSection,
    pub adversary: AdversarySection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub m: u32,
    pub k: u32,
    pub n: Option<u32>,
    pub horizon: u64,
    pub seed: u64,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SchedulerSection {
    /// "centralized" | "distributed"
    pub kind: String,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct AdversarySection {
    /// "token-bucket" | "lower-bound" | "replay"
    pub kind: String,
    /// Generation rate as "p/q".
    pub rho: Option<String>,
    pub b: Option<u32>,
    /// "queue-free" | "queue-based"
    pub model: Option<String>,
    /// Token-bucket only: "uniform" | "singletons" | "cycle".
    pub shape: Option<String>,
    /// Uniform shape: largest type weight drawn.
    pub max_weight: Option<u32>,
    /// Cycle shape: type bitstrings.
    pub types: Option<Vec<String>>,
    /// Replay: stream file.
    pub path: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

pub struct RunOutcome {
    pub report_text: String,
    pub passed: bool,
}

fn parse_model(s: &str) -> Result<AutonomyModel, String> {
    match s {
        "queue-free" => Ok(AutonomyModel::QueueFree),
        "queue-based" => Ok(AutonomyModel::QueueBased),
        other => Err(format!("unknown autonomy model {other:?}")),
    }
}

fn adversary_params(section: &AdversarySection) -> Result<Option<AdversaryParams>, String> {
    match (&section.rho, section.b, &section.model) {
        (Some(rho), Some(b), Some(model)) => {
            let rho = parse_ratio(rho).map_err(|e| e.to_string())?;
            let model = parse_model(model)?;
            AdversaryParams::new(rho, b, model)
                .map(Some)
                .map_err(|e| e.to_string())
        }
        (None, None, None) => Ok(None),
        _ => Err("adversary rho, b, and model must be given together".into()),
    }
}

fn build_generator(
    cfg: &ExperimentConfig,
    system: &SystemConfig,
    params: Option<&AdversaryParams>,
) -> Result<Box<dyn Generator>, String> {
    match cfg.adversary.kind.as_str() {
        "token-bucket" => {
            let params = params.ok_or("token-bucket adversary needs rho, b, and model")?;
            let shape = match cfg.adversary.shape.as_deref().unwrap_or("uniform") {
                "uniform" => WorkloadShape::Uniform {
                    max_weight: cfg.adversary.max_weight.unwrap_or(system.k),
                },
                "singletons" => WorkloadShape::Singletons,
                "cycle" => {
                    let strings = cfg
                        .adversary
                        .types
                        .as_ref()
                        .ok_or("cycle shape needs adversary.types")?;
                    let types = strings
                        .iter()
                        .map(|s| {
                            TxType::parse_bitstring(s)
                                .map_err(|e| e.to_string())?
                                .ok_or_else(|| format!("all-zeros type {s:?}"))
                        })
                        .collect::<Result<Vec<_>, String>>()?;
                    WorkloadShape::Cycle(types)
                }
                other => return Err(format!("unknown workload shape {other:?}")),
            };
            TokenBucketGenerator::new(
                params.clone(),
                system.m,
                system.k,
                system.n,
                shape,
                system.seed,
            )
            .map(|g| Box::new(g) as Box<dyn Generator>)
            .map_err(|e| e.to_string())
        }
        "lower-bound" => {
            let params = params.ok_or("lower-bound adversary needs rho, b, and model")?;
            LowerBoundGenerator::new(params.clone(), system.m, system.k)
                .map(|g| Box::new(g) as Box<dyn Generator>)
                .map_err(|e| e.to_string())
        }
        "replay" => {
            let path = cfg
                .adversary
                .path
                .as_ref()
                .ok_or("replay adversary needs a path")?;
            let text =
                fs::read_to_string(path).map_err(|e| format!("reading {}: {e}", path.display()))?;
            let rounds = parse_stream(&text).map_err(|e| e.to_string())?;
            Ok(Box::new(ReplayGenerator::new(rounds)))
        }
        other => Err(format!("unknown adversary kind {other:?}")),
    }
}

/// The bounds a run claims, given scheduler kind and adversary params: the
/// centralized guarantee applies at rates up to its rho_max inclusive, the
/// distributed one strictly below its rho_max and only with sufficient bulk.
fn claimed_bounds(
    cfg: &ExperimentConfig,
    system: &SystemConfig,
    params: Option<&AdversaryParams>,
) -> Result<Option<(BoundSpec, u64)>, String> {
    let Some(params) = params else {
        return Ok(None);
    };
    match cfg.scheduler.kind.as_str() {
        "centralized" => {
            let bounds = centralized_bounds(system.m, system.k, params.b());
            if params.rho() <= bounds.rho_max_ratio() {
                Ok(Some((BoundSpec::from(&bounds), bounds.milestone_len)))
            } else {
                Ok(None)
            }
        }
        "distributed" => {
            let n = system.n.ok_or("distributed scheduler needs system.n")?;
            let bounds = distributed_bounds(n, system.m, system.k, params.b(), params.rho())
                .map_err(|e| e.to_string())?;
            if params.rho() < bounds.rho_max_ratio() && bounds.bulk_ok {
                let interval = u64::try_from(bounds.interval_len)
                    .map_err(|_| "interval length overflows u64".to_string())?;
                Ok(Some((BoundSpec::from(&bounds), interval)))
            } else {
                Ok(None)
            }
        }
        other => Err(format!("unknown scheduler kind {other:?}")),
    }
}

fn run_agnostic(
    cfg: &ExperimentConfig,
    system: &SystemConfig,
    generator: &mut dyn Generator,
) -> Result<Trace, String> {
    match cfg.scheduler.kind.as_str() {
        "centralized" => {
            let mut sched = CentralizedScheduler::new();
            run_simulation(system, &mut sched, generator).map_err(|e| e.to_string())
        }
        "distributed" => {
            let n = system.n.ok_or("distributed scheduler needs system.n")?;
            let mut sched = DistributedScheduler::new(n, system.m).map_err(|e| e.to_string())?;
            run_simulation(system, &mut sched, generator).map_err(|e| e.to_string())
        }
        other => Err(format!("unknown scheduler kind {other:?}")),
    }
}

fn validate(
    cfg: &ExperimentConfig,
    system: &SystemConfig,
    params: Option<&AdversaryParams>,
) -> Result<(), String> {
    system.validate().map_err(|e| e.to_string())?;
    match cfg.scheduler.kind.as_str() {
        "centralized" => {
            if system.n.is_some() {
                return Err(
                    "the centralized scheduler runs the queue-free model; drop system.n".into(),
                );
            }
            if let Some(p) = params {
                if p.model() != AutonomyModel::QueueFree {
                    return Err("the centralized scheduler requires a queue-free adversary".into());
                }
            }
        }
        "distributed" => {
            if system.n.is_none() {
                return Err("the distributed scheduler needs system.n".into());
            }
            if let Some(p) = params {
                if p.model() != AutonomyModel::QueueBased {
                    return Err("the distributed scheduler requires a queue-based adversary".into());
                }
            }
        }
        other => return Err(format!("unknown scheduler kind {other:?}")),
    }
    Ok(())
}

pub fn run_experiment(
    config_path: &Path,
    seed_override: Option<u64>,
    out_override: Option<&Path>,
) -> Result<RunOutcome, String> {
    let text = fs::read_to_string(config_path)
        .map_err(|e| format!("reading {}: {e}", config_path.display()))?;
    let cfg: ExperimentConfig =
        toml::from_str(&text).map_err(|e| format!("{}: {e}", config_path.display()))?;

    let mut system = SystemConfig {
        m: cfg.system.m,
        k: cfg.system.k,
        n: cfg.system.n,
        horizon: cfg.system.horizon,
        seed: cfg.system.seed,
    };
    if let Some(seed) = seed_override {
        system.seed = seed;
    }
    let params = adversary_params(&cfg.adversary)?;
    validate(&cfg, &system, params.as_ref())?;
    let mut generator = build_generator(&cfg, &system, params.as_ref())?;
    let trace = run_agnostic(&cfg, &system, generator.as_mut())?;

    let claims = claimed_bounds(&cfg, &system, params.as_ref())?;
    let report: StabilityReport = match &claims {
        Some((bounds, interval)) => analyze(&trace, Some(bounds), Some(*interval)),
        None => analyze(&trace, None, None),
    };

    let out_dir: PathBuf = out_override
        .map(Path::to_path_buf)
        .or_else(|| cfg.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&out_dir).map_err(|e| format!("creating {}: {e}", out_dir.display()))?;
    let write = |name: &str, contents: &str| -> Result<(), String> {
        let path = out_dir.join(name);
        fs::write(&path, contents).map_err(|e| format!("writing {}: {e}", path.display()))
    };
    write("trace.csv", &trace.to_csv())?;
    write("trace.json", &trace.to_json())?;
    write(
        "stream.csv",
        &stream_to_csv(&txsched_core::adversary::stream_from_trace(&trace)),
    )?;
    write("report.txt", &report.to_text())?;
    write("report.json", &report.to_json())?;

    Ok(RunOutcome {
        report_text: report.to_text(),
        passed: report.passed(),
    })
}
