use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use mfs_partition::assign::{AssignVariant, SearchBudget};
use mfs_partition::coarsen::CoarseningConfig;
use mfs_partition::io::{self, GenConfig, InstanceBundle};
use mfs_partition::metrics;
use mfs_partition::oracle;
use mfs_partition::partition::{partition, PartitionConfig, PartitionError};
use mfs_partition::refine::{OpSet, RefineConfig};
use mfs_partition::topology::imbalance_capacity;

const EXIT_FAILURE: u8 = 1;
const EXIT_PARSE: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;
const EXIT_BUDGET: u8 = 4;
const EXIT_VIOLATIONS: u8 = 5;

#[derive(Parser)]
#[command(name = "mfspart", version, about = "Multi-FPGA hypergraph partitioner with logic replication")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Partition an instance and write the solution and a metrics report.
    Partition(PartitionArgs),
    /// Print the metrics report of a solution.
    Evaluate(EvalArgs),
    /// Print only the constraint violations of a solution.
    Validate(EvalArgs),
    /// Generate a random instance.
    Gen(GenArgs),
    /// Exhaustively solve a tiny instance without replication.
    Oracle(InstanceArgs),
    /// Run a configuration matrix over generated instances and emit CSV.
    Bench(BenchArgs),
}

#[derive(Args)]
struct InstanceArgs {
    /// Hypergraph file.
    hypergraph: PathBuf,
    /// Topology file.
    topology: PathBuf,
    /// Read the hypergraph in hMETIS format (first pin of each net is its
    /// source).
    #[arg(long)]
    hmetis: bool,
    /// Replace every FPGA capacity with floor((1 + eps) * total / K).
    #[arg(long)]
    epsilon: Option<f64>,
}

#[derive(Args, Clone)]
struct SolverArgs {
    /// Master seed.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Initial coarsening exponent.
    #[arg(long, default_value_t = 0.5)]
    alpha0: f64,
    /// Total growth of the coarsening exponent; 0 keeps it fixed.
    #[arg(long, default_value_t = 3.0)]
    dalpha: f64,
    /// Coarsest-level target size (default max(128, 16K)).
    #[arg(long)]
    nfinal: Option<usize>,
    /// Parallel assignment searches.
    #[arg(long, default_value_t = 4)]
    seeds: usize,
    /// Placement attempts per assignment search.
    #[arg(long, default_value_t = 200_000)]
    assign_budget: u64,
    /// Relative THD change below which the search backtracks deeply.
    #[arg(long, default_value_t = 0.02)]
    stall_delta: f64,
    /// Resume depth fraction after a deep backtrack.
    #[arg(long, default_value_t = 0.3)]
    rho: f64,
    /// Which heat scores the per-seed jitter perturbs.
    #[arg(long, value_enum, default_value_t = VariantArg::Nodes)]
    assign_variant: VariantArg,
    /// Refinement operators: comma-separated subset of mv,ex,rep,del, or
    /// all / none.
    #[arg(long, default_value = "all")]
    ops: OpSet,
    /// Cap on replications per level.
    #[arg(long)]
    max_replicas: Option<usize>,
    /// Accept zero-gain moves and exchanges, up to this many.
    #[arg(long)]
    allow_zero_gain: Option<usize>,
    /// Wall-clock limit in seconds.
    #[arg(long)]
    time_limit: Option<f64>,
}

#[derive(clap::ValueEnum, Clone, Copy)]
enum VariantArg {
    Nodes,
    Fpgas,
    Single,
}

impl SolverArgs {
    fn config(&self) -> PartitionConfig {
        PartitionConfig {
            seed: self.seed,
            coarsen: CoarseningConfig {
                alpha0: self.alpha0,
                dalpha: self.dalpha,
                n_final: self.nfinal,
                ..CoarseningConfig::default()
            },
            assign: SearchBudget {
                max_nodes: self.assign_budget,
                stall_delta: self.stall_delta,
                rho: self.rho,
                ..SearchBudget::default()
            },
            assign_seeds: self.seeds,
            variant: match self.assign_variant {
                VariantArg::Nodes => AssignVariant::Nodes,
                VariantArg::Fpgas => AssignVariant::Fpgas,
                VariantArg::Single => AssignVariant::Single,
            },
            refine: RefineConfig {
                ops: self.ops,
                max_replicas: self.max_replicas,
                allow_zero_gain: self.allow_zero_gain.is_some(),
                zero_gain_limit: self.allow_zero_gain.unwrap_or(0),
                ..RefineConfig::default()
            },
            time_limit: self.time_limit.map(Duration::from_secs_f64),
        }
    }
}

#[derive(Args)]
struct PartitionArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    #[command(flatten)]
    solver: SolverArgs,
    /// Solution output file (default: stdout).
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Metrics report output file (default: stderr).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    instance: InstanceArgs,
    /// Solution file.
    solution: PathBuf,
}

#[derive(Args)]
struct GenKnobs {
    #[arg(long, default_value_t = 1000)]
    vertices: usize,
    #[arg(long, default_value_t = 1000)]
    edges: usize,
    #[arg(long, default_value_t = 8)]
    fpgas: usize,
    #[arg(long, default_value_t = 2)]
    resource_types: usize,
    /// Total capacity over total demand, minus one.
    #[arg(long, default_value_t = 0.3)]
    spare: f64,
    /// Share of nets with long-tailed fanout.
    #[arg(long, default_value_t = 0.3)]
    fanout_skew: f64,
    #[arg(long, default_value_t = 16)]
    max_fanout: usize,
    /// Typical id distance between a net's source and drains.
    #[arg(long, default_value_t = 24)]
    locality: usize,
    /// Links beyond a random spanning tree.
    #[arg(long, default_value_t = 4)]
    extra_links: usize,
    #[arg(long)]
    hop_max: Option<u32>,
    /// Per-FPGA io limit as a multiple of 2 * total net weight / K.
    #[arg(long)]
    io_factor: Option<f64>,
    /// Capacity jitter across FPGAs.
    #[arg(long, default_value_t = 0.2)]
    heterogeneity: f64,
}

impl GenKnobs {
    fn config(&self, seed: u64) -> GenConfig {
        GenConfig {
            seed,
            vertices: self.vertices,
            edges: self.edges,
            fpgas: self.fpgas,
            resource_types: self.resource_types,
            spare: self.spare,
            fanout_skew: self.fanout_skew,
            max_fanout: self.max_fanout,
            locality: self.locality,
            extra_links: self.extra_links,
            hop_max: self.hop_max,
            io_factor: self.io_factor,
            heterogeneity: self.heterogeneity,
        }
    }
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[command(flatten)]
    knobs: GenKnobs,
    /// Hypergraph output file.
    #[arg(long)]
    out_hypergraph: PathBuf,
    /// Topology output file.
    #[arg(long)]
    out_topology: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    knobs: GenKnobs,
    /// Solver settings. `--seed` is replaced by each of `--run-seeds`.
    #[command(flatten)]
    solver: SolverArgs,
    /// Generator seed of the first instance; instance i uses `gen_seed + i`.
    #[arg(long, default_value_t = 1)]
    gen_seed: u64,
    /// Generated instances.
    #[arg(long, default_value_t = 5)]
    instances: u64,
    /// Master seeds to run per instance and configuration.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    run_seeds: Vec<u64>,
    /// Operator sets to compare, separated by ';'. The first is the
    /// baseline of the summary ratios.
    #[arg(long, default_value = "mv,ex;mv,ex,rep;all")]
    configs: String,
    /// CSV output file (default: stdout).
    #[arg(long)]
    csv: Option<PathBuf>,
}

/// A failure that maps to an exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Failure { code, message: message.into() }
    }
}

type CmdResult = Result<u8, Failure>;

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::new(EXIT_PARSE, format!("{}: {e}", path.display())))
}

fn write_out(path: Option<&Path>, text: &str, fallback_stderr: bool) -> Result<(), Failure> {
    match path {
        Some(p) => fs::write(p, text)
            .map_err(|e| Failure::new(EXIT_FAILURE, format!("{}: {e}", p.display()))),
        None if fallback_stderr => {
            eprint!("{text}");
            Ok(())
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load(args: &InstanceArgs) -> Result<InstanceBundle, Failure> {
    let parse_err = |path: &Path, e: io::ParseError| Failure::new(EXIT_PARSE, format!("{}: {e}", path.display()));
    let text = read(&args.hypergraph)?;
    let h = if args.hmetis {
        io::parse_hmetis(&text)
    } else {
        io::parse_hypergraph(&text)
    }
    .map_err(|e| parse_err(&args.hypergraph, e))?;
    let mut t = io::parse_topology(&read(&args.topology)?).map_err(|e| parse_err(&args.topology, e))?;
    if let Some(eps) = args.epsilon {
        if !(eps >= 0.0) {
            return Err(Failure::new(EXIT_FAILURE, "epsilon must be non-negative"));
        }
        let cap = imbalance_capacity(&h.total_weight(), t.num_fpgas(), eps);
        if cap.len() != t.resource_types() {
            return Err(Failure::new(EXIT_PARSE, "resource type count differs between files"));
        }
        t = t
            .with_uniform_capacity(cap)
            .map_err(|e| Failure::new(EXIT_FAILURE, e.to_string()))?;
    }
    InstanceBundle::new(h, t).map_err(|e| Failure::new(EXIT_PARSE, e.to_string()))
}

fn load_solution(path: &Path) -> Result<mfs_partition::Placement, Failure> {
    io::parse_solution(&read(path)?).map_err(|e| Failure::new(EXIT_PARSE, format!("{}: {e}", path.display())))
}

fn cmd_partition(a: &PartitionArgs) -> CmdResult {
    let b = load(&a.instance)?;
    let cfg = a.solver.config();
    let r = partition(&b.hypergraph, &b.topology, &cfg).map_err(|e| match e {
        PartitionError::Infeasible => Failure::new(EXIT_INFEASIBLE, e.to_string()),
        PartitionError::BudgetExhausted => Failure::new(EXIT_BUDGET, e.to_string()),
        PartitionError::Coarsen(_) => Failure::new(EXIT_FAILURE, e.to_string()),
    })?;
    write_out(a.output.as_deref(), &io::write_solution(&r.placement), false)?;
    write_out(a.report.as_deref(), &r.report.to_json(), true)?;
    Ok(if r.report.violations.is_empty() { 0 } else { EXIT_VIOLATIONS })
}

fn cmd_evaluate(a: &EvalArgs, violations_only: bool) -> CmdResult {
    let b = load(&a.instance)?;
    let p = load_solution(&a.solution)?;
    let v = metrics::validate(&b.hypergraph, &b.topology, &p);
    let placement_broken = v.iter().any(|x| x.kind == metrics::ViolationKind::Placement);
    let text = if violations_only || placement_broken {
        let mut s = serde_json::to_string_pretty(&v).expect("violations serialize");
        s.push('\n');
        s
    } else {
        metrics::report(&b.hypergraph, &b.topology, &p).to_json()
    };
    print!("{text}");
    Ok(if v.is_empty() { 0 } else { EXIT_VIOLATIONS })
}

fn cmd_gen(a: &GenArgs) -> CmdResult {
    let b = io::gen_instance(&a.knobs.config(a.seed)).map_err(|e| Failure::new(EXIT_FAILURE, e.to_string()))?;
    write_out(Some(&a.out_hypergraph), &io::write_hypergraph(&b.hypergraph), false)?;
    write_out(Some(&a.out_topology), &io::write_topology(&b.topology), false)?;
    Ok(0)
}

fn cmd_oracle(a: &InstanceArgs) -> CmdResult {
    let b = load(a)?;
    match oracle::exhaustive_partition(&b.hypergraph, &b.topology) {
        Err(e) => Err(Failure::new(EXIT_FAILURE, e.to_string())),
        Ok(None) => Err(Failure::new(EXIT_INFEASIBLE, "no feasible unreplicated placement")),
        Ok(Some((p, thd))) => {
            print!("{}", io::write_solution(&p));
            eprintln!("total_hop_distance {thd}");
            Ok(0)
        }
    }
}

#[derive(serde::Serialize)]
struct BenchRow {
    instance: u64,
    config: String,
    seed: u64,
    status: &'static str,
    thd: Option<u64>,
    cut: Option<u64>,
    replicas: Option<u64>,
    runtime_ms: u128,
}

fn cmd_bench(a: &BenchArgs) -> CmdResult {
    let configs: Vec<OpSet> = a
        .configs
        .split(';')
        .map(|s| s.parse::<OpSet>())
        .collect::<Result<_, _>>()
        .map_err(|e| Failure::new(EXIT_FAILURE, e))?;
    let mut out: Box<dyn std::io::Write> = match &a.csv {
        Some(p) => Box::new(
            fs::File::create(p).map_err(|e| Failure::new(EXIT_FAILURE, format!("{}: {e}", p.display())))?,
        ),
        None => Box::new(std::io::stdout()),
    };
    let mut w = csv::Writer::from_writer(&mut out);
    // per config: sum of THD and sum of per-instance ratios to the baseline
    let mut thd_sum = vec![0f64; configs.len()];
    let mut ratio_sum = vec![0f64; configs.len()];
    let mut pairs = 0usize;
    for i in 0..a.instances {
        let b = io::gen_instance(&a.knobs.config(a.gen_seed + i)).map_err(|e| Failure::new(EXIT_FAILURE, e.to_string()))?;
        for &seed in &a.run_seeds {
            let mut thds = Vec::with_capacity(configs.len());
            for &ops in &configs {
                let mut s = a.solver.clone();
                s.seed = seed;
                s.ops = ops;
                let r = partition(&b.hypergraph, &b.topology, &s.config());
                let row = match &r {
                    Ok(r) => BenchRow {
                        instance: i,
                        config: ops.to_string(),
                        seed,
                        status: if r.report.violations.is_empty() { "ok" } else { "violations" },
                        thd: Some(r.report.total_hop_distance),
                        cut: Some(r.report.cut_size),
                        replicas: Some(r.report.replica_count),
                        runtime_ms: r.elapsed.as_millis(),
                    },
                    Err(e) => BenchRow {
                        instance: i,
                        config: ops.to_string(),
                        seed,
                        status: match e {
                            PartitionError::Infeasible => "infeasible",
                            PartitionError::BudgetExhausted => "budget",
                            PartitionError::Coarsen(_) => "error",
                        },
                        thd: None,
                        cut: None,
                        replicas: None,
                        runtime_ms: 0,
                    },
                };
                thds.push(row.thd);
                w.serialize(&row).map_err(|e| Failure::new(EXIT_FAILURE, e.to_string()))?;
            }
            if thds.iter().all(Option::is_some) {
                pairs += 1;
                let base = thds[0].unwrap_or(0) as f64;
                for (c, t) in thds.iter().enumerate() {
                    let t = t.unwrap_or(0) as f64;
                    thd_sum[c] += t;
                    ratio_sum[c] += if base == 0.0 { 1.0 } else { t / base };
                }
            }
        }
    }
    w.flush().map_err(|e| Failure::new(EXIT_FAILURE, e.to_string()))?;
    drop(w);
    eprintln!("config,mean_thd,mean_ratio_to_baseline,runs");
    for (c, ops) in configs.iter().enumerate() {
        let n = pairs.max(1) as f64;
        eprintln!("\"{ops}\",{:.3},{:.4},{pairs}", thd_sum[c] / n, ratio_sum[c] / n);
    }
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Partition(a) => cmd_partition(a),
        Command::Evaluate(a) => cmd_evaluate(a, false),
        Command::Validate(a) => cmd_evaluate(a, true),
        Command::Gen(a) => cmd_gen(a),
        Command::Oracle(a) => cmd_oracle(a),
        Command::Bench(a) => cmd_bench(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
