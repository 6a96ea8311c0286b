//! Batch front door: configure, run, verify, and report. One command, one
//! process; exit codes are the only success/failure channel (0 success,
//! 1 input/config error, 2 checked-property violation), diagnostics go to
//! stderr, data to files and stdout.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use txsched_core::adversary::{
    parse_ratio, parse_stream, verify_admissibility, AdmissibilityVerdict, AdversaryParams,
    AutonomyModel,
};
use txsched_core::combinatorics::{
    alternative_greedy_coloring, build_set_family, primary_greedy_coloring, ConflictGraph,
};
use txsched_core::sched_centralized::centralized_bounds;
use txsched_core::sched_distributed::distributed_bounds;

use config::run_experiment;

#[derive(Parser)]
#[command(
    name = "txsched",
    version,
    about = "Round-synchronous transactional-memory scheduling simulator"
)]
struct Cli {
    /// Override the seed from the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for run artifacts (trace, stream, report).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation described by a TOML config and write its artifacts.
    Run { config: PathBuf },
    /// Check a generation stream file for (rho, b) admissibility.
    Verify {
        stream: PathBuf,
        /// Generation rate as p/q.
        #[arg(long)]
        rho: String,
        /// Burstiness component.
        #[arg(long)]
        b: u32,
        /// Autonomy model: qf (queue-free) or qb (queue-based).
        #[arg(long, value_parser = ["qf", "qb"])]
        model: String,
    },
    /// Print the pairwise-intersecting set family of order n, one sorted
    /// set per line.
    Setfamily { n: u32 },
    /// Color a graph file (first line: vertex count; then "u v" edges).
    Color {
        graph: PathBuf,
        #[arg(long, default_value = "primary", value_parser = ["primary", "alternative"])]
        variant: String,
        /// Vertex order as comma-separated indices; defaults to 0..n.
        #[arg(long)]
        order: Option<String>,
    },
    /// Evaluate the closed-form bound calculators.
    Bounds {
        /// centralized | distributed
        #[arg(value_parser = ["centralized", "distributed"])]
        scheduler: String,
        #[arg(long)]
        m: u32,
        #[arg(long)]
        k: u32,
        #[arg(long)]
        b: u32,
        /// Processor count (distributed only).
        #[arg(long)]
        n: Option<u32>,
        /// Generation rate as p/q (distributed only).
        #[arg(long)]
        rho: Option<String>,
    },
}

fn main() -> ExitCode {
    // Die quietly when a downstream pipe closes (`txsched ... | head`)
    // instead of panicking on the failed write.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            eprintln!("{e}");
            return ExitCode::from(1);
        }
        Err(e) => {
            // --help / --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };

    let code = match cli.command {
        Command::Run { config } => cmd_run(&config, cli.seed, cli.out.as_deref()),
        Command::Verify {
            stream,
            rho,
            b,
            model,
        } => cmd_verify(&stream, &rho, b, &model),
        Command::Setfamily { n } => cmd_setfamily(n),
        Command::Color {
            graph,
            variant,
            order,
        } => cmd_color(&graph, &variant, order.as_deref()),
        Command::Bounds {
            scheduler,
            m,
            k,
            b,
            n,
            rho,
        } => cmd_bounds(&scheduler, m, k, b, n, rho.as_deref()),
    };
    ExitCode::from(code)
}

fn cmd_run(config_path: &Path, seed_override: Option<u64>, out_override: Option<&Path>) -> u8 {
    match run_experiment(config_path, seed_override, out_override) {
        Ok(outcome) => {
            print!("{}", outcome.report_text);
            if outcome.passed {
                0
            } else {
                eprintln!("bound violations recorded; see the report");
                2
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn cmd_verify(stream_path: &Path, rho: &str, b: u32, model: &str) -> u8 {
    let model = match model {
        "qf" => AutonomyModel::QueueFree,
        _ => AutonomyModel::QueueBased,
    };
    let result = (|| {
        let text = fs::read_to_string(stream_path)
            .map_err(|e| format!("reading {}: {e}", stream_path.display()))?;
        let rounds = parse_stream(&text).map_err(|e| e.to_string())?;
        let rho = parse_ratio(rho).map_err(|e| e.to_string())?;
        let params = AdversaryParams::new(rho, b, model).map_err(|e| e.to_string())?;
        verify_admissibility(&rounds, &params)
            .map(|verdict| (verdict, params))
            .map_err(|e| e.to_string())
    })();
    match result {
        Ok((AdmissibilityVerdict::Admissible, _)) => {
            println!("admissible");
            0
        }
        Ok((AdmissibilityVerdict::Violation(v), params)) => {
            println!(
                "violation: {:?} window [{}, {}] congestion {} > {}",
                v.entity,
                v.window.0,
                v.window.1,
                v.congestion,
                v.allowed(&params)
            );
            2
        }
        Err(msg) => {
            eprintln!("error: {msg}");
            1
        }
    }
}

fn cmd_setfamily(n: u32) -> u8 {
    if n < 1 {
        eprintln!("error: the family order must be at least 1");
        return 1;
    }
    let family = build_set_family(n);
    for set in &family.sets {
        let line: Vec<String> = set.iter().map(u32::to_string).collect();
        println!("{}", line.join(" "));
    }
    0
}

fn parse_graph(text: &str) -> Result<ConflictGraph<usize>, String> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let (lineno, header) = lines.next().ok_or("empty graph file")?;
    let count: usize = header
        .parse()
        .map_err(|_| format!("line {lineno}: expected a vertex count, found {header:?}"))?;
    let mut graph = ConflictGraph::new((0..count).collect());
    for (lineno, line) in lines {
        let mut parts = line.split_whitespace();
        let parse_vertex = |field: Option<&str>| -> Result<usize, String> {
            let f = field.ok_or(format!("line {lineno}: expected \"u v\""))?;
            let v: usize = f
                .parse()
                .map_err(|_| format!("line {lineno}: bad vertex {f:?}"))?;
            if v >= count {
                return Err(format!("line {lineno}: vertex {v} out of range"));
            }
            Ok(v)
        };
        let u = parse_vertex(parts.next())?;
        let v = parse_vertex(parts.next())?;
        if parts.next().is_some() {
            return Err(format!("line {lineno}: trailing fields"));
        }
        if u == v {
            return Err(format!("line {lineno}: self-loop"));
        }
        graph.add_edge(u, v);
    }
    Ok(graph)
}

fn cmd_color(graph_path: &Path, variant: &str, order: Option<&str>) -> u8 {
    let result = (|| -> Result<(), String> {
        let text = fs::read_to_string(graph_path)
            .map_err(|e| format!("reading {}: {e}", graph_path.display()))?;
        let graph = parse_graph(&text)?;
        let order: Vec<usize> = match order {
            None => (0..graph.vertex_count()).collect(),
            Some(spec) => spec
                .split(',')
                .map(|f| {
                    f.trim()
                        .parse::<usize>()
                        .map_err(|_| format!("bad order entry {f:?}"))
                })
                .collect::<Result<_, _>>()?,
        };
        let coloring = match variant {
            "alternative" => alternative_greedy_coloring(&graph, &order),
            _ => primary_greedy_coloring(&graph, &order),
        }
        .map_err(|e| e.to_string())?;
        for v in 0..graph.vertex_count() {
            println!("{v} {}", coloring.color(v));
        }
        Ok(())
    })();
    match result {
        Ok(()) => 0,
        Err(msg) => {
            eprintln!("error: {msg}");
            1
        }
    }
}

fn cmd_bounds(scheduler: &str, m: u32, k: u32, b: u32, n: Option<u32>, rho: Option<&str>) -> u8 {
    match scheduler {
        "centralized" => {
            if k < 1 || k > m || m < 1 || b < 1 {
                eprintln!("error: need m >= 1, 1 <= k <= m, b >= 1");
                return 1;
            }
            let bounds = centralized_bounds(m, k, b);
            println!("rho_max={}/{}", bounds.rho_max.0, bounds.rho_max.1);
            println!("pending_bound={}", bounds.pending_bound);
            println!("latency_bound={}", bounds.latency_bound);
            println!("milestone_len={}", bounds.milestone_len);
            0
        }
        _ => {
            let (Some(n), Some(rho)) = (n, rho) else {
                eprintln!("error: distributed bounds need --n and --rho");
                return 1;
            };
            let rho = match parse_ratio(rho) {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("error: {e}");
                    return 1;
                }
            };
            match distributed_bounds(n, m, k, b, rho) {
                Ok(bounds) => {
                    println!("type_count={}", bounds.type_count);
                    println!("block_size={}", bounds.block_size);
                    println!("interval_block_budget={}", bounds.interval_block_budget);
                    println!("epoch_len={}", bounds.epoch_len);
                    println!("interval_len={}", bounds.interval_len);
                    println!("bulk={}", bounds.bulk);
                    println!("bulk_ok={}", bounds.bulk_ok);
                    println!(
                        "rho_max={}/{} (exclusive)",
                        bounds.rho_max.0, bounds.rho_max.1
                    );
                    println!("pending_bound={}", bounds.pending_bound);
                    println!("latency_bound={}", bounds.latency_bound);
                    if let (Some(e), Some(ok)) =
                        (bounds.entropy_estimate, bounds.entropy_estimate_ok)
                    {
                        println!("type_count_estimate={e}");
                        println!("type_count_estimate_ok={ok}");
                    }
                    0
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    1
                }
            }
        }
    }
}
