//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.
//!
//! Pass criterion numbers as arguments to run a subset, e.g.
//! `cargo test --test acceptance -- 2 3`.

use std::collections::BTreeSet;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mfs_partition::coarsen::CoarseningConfig;
use mfs_partition::io::{gen_instance, write_hypergraph, write_solution, write_topology, GenConfig, InstanceBundle};
use mfs_partition::metrics::{self, ViolationKind};
use mfs_partition::model::Placement;
use mfs_partition::oracle;
use mfs_partition::partition::{partition, PartitionConfig, PartitionError};
use mfs_partition::refine::{refine_level, GainMode, Op, OpSet, RefineConfig, RefineStats, Refiner};
use mfs_partition::topology::compute_hop_matrix;

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Verdict { pass, detail: detail.into() }
    }
}

/// Audit counters shared by criteria 1 to 3 and checked by criterion 4.
#[derive(Default)]
struct AuditLog {
    refine_calls: u64,
    ops: u64,
    failures: u64,
    first: Option<String>,
}

impl AuditLog {
    fn add(&mut self, calls: u64, s: &RefineStats) {
        self.refine_calls += calls;
        self.ops += s.applied_total();
        self.failures += s.audit_failures;
        if self.first.is_none() {
            self.first.clone_from(&s.first_audit_failure);
        }
    }
}

/// Serialized outputs of one run, for the determinism check.
type RunBytes = (String, String);

#[derive(Default)]
struct Transcript {
    runs: Vec<(String, RunBytes)>,
}

fn run_bytes(r: &Result<mfs_partition::partition::PartitionResult, PartitionError>) -> RunBytes {
    match r {
        Ok(r) => (write_solution(&r.placement), r.report.to_json()),
        Err(e) => (String::new(), e.to_string()),
    }
}

fn solver(seed: u64, ops: OpSet, audit: bool) -> PartitionConfig {
    PartitionConfig {
        seed,
        refine: RefineConfig { ops, audit, ..RefineConfig::default() },
        ..PartitionConfig::default()
    }
}

fn level_count(r: &Result<mfs_partition::partition::PartitionResult, PartitionError>) -> u64 {
    r.as_ref().map_or(0, |r| r.level_sizes.len() as u64)
}

// ---------------------------------------------------------------- 1

fn tiny_instances() -> Vec<InstanceBundle> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC1);
    let mut out = Vec::new();
    while out.len() < 200 {
        let vertices = rng.gen_range(3..=10);
        let fpgas = rng.gen_range(2..=3);
        let cfg = GenConfig {
            seed: rng.gen(),
            vertices,
            edges: rng.gen_range(2..=2 * vertices),
            fpgas,
            resource_types: rng.gen_range(1..=2),
            spare: rng.gen_range(0.05..0.6),
            max_fanout: 4,
            locality: 4,
            extra_links: usize::from(rng.gen_bool(0.5)),
            hop_max: if rng.gen_bool(0.2) { Some(1) } else { None },
            io_factor: if rng.gen_bool(0.3) { Some(rng.gen_range(0.5..1.5)) } else { None },
            heterogeneity: 0.3,
            ..GenConfig::default()
        };
        if let Ok(b) = gen_instance(&cfg) {
            out.push(b);
        }
    }
    out
}

fn criterion_1(audit: &mut AuditLog, tr: &mut Transcript) -> Verdict {
    let start = Instant::now();
    let (mut optimal, mut feasible, mut infeasible_agree) = (0, 0, 0);
    let mut problems = Vec::new();
    for (i, b) in tiny_instances().iter().enumerate() {
        let (h, t) = (&b.hypergraph, &b.topology);
        let best = oracle::exhaustive_partition(h, t).expect("small enough");
        let r = partition(h, t, &solver(i as u64, OpSet::move_exchange(), true));
        tr.runs.push((format!("c1/{i}"), run_bytes(&r)));
        audit.refine_calls += level_count(&r);
        match (&best, &r) {
            (Some((_, opt)), Ok(r)) => {
                feasible += 1;
                audit.add(0, &r.refine);
                let thd = r.report.total_hop_distance;
                if !r.report.violations.is_empty() {
                    problems.push(format!("#{i} infeasible output"));
                } else if r.placement.replica_count() > 0 {
                    problems.push(format!("#{i} replicated"));
                } else if thd < *opt {
                    problems.push(format!("#{i} THD {thd} below optimum {opt}"));
                } else if thd == *opt {
                    optimal += 1;
                }
            }
            (Some(_), Err(e)) => {
                feasible += 1;
                problems.push(format!("#{i} feasible but solver said: {e}"));
            }
            (None, Ok(_)) => problems.push(format!("#{i} solver found a placement the oracle rejects")),
            (None, Err(_)) => infeasible_agree += 1,
        }
    }
    let secs = start.elapsed().as_secs_f64();
    // infeasible instances are not counted as solved
    let rate = optimal as f64 / feasible.max(1) as f64;
    let sound = problems.iter().all(|p| !p.contains("below") && !p.contains("rejects"));
    let pass = sound && rate >= 0.6 && secs < 60.0 && problems.is_empty();
    Verdict::new(
        pass,
        format!(
            "{optimal}/{feasible} feasible instances optimal ({:.1}%), {infeasible_agree} infeasible agreed, \
             {} problems{}, {secs:.1}s",
            100.0 * rate,
            problems.len(),
            problems.first().map(|p| format!(" (first: {p})")).unwrap_or_default()
        ),
    )
}

// ---------------------------------------------------------------- 2, 3

fn mid_instance(seed: u64, vertices: usize, fpgas: usize) -> InstanceBundle {
    gen_instance(&GenConfig {
        seed,
        vertices,
        edges: vertices,
        fpgas,
        spare: 0.5,
        locality: 12,
        ..GenConfig::default()
    })
    .expect("generator accepts config")
}

fn random_placement(rng: &mut ChaCha8Rng, n: usize, k: usize, replicas: usize) -> Placement {
    let mut p = Placement::unreplicated((0..n).map(|_| rng.gen_range(0..k)).collect());
    for _ in 0..replicas {
        p.add_replica(rng.gen_range(0..n), rng.gen_range(0..k));
    }
    p
}

/// A random op that is legal in `p`, of a random kind where possible.
fn random_op(rng: &mut ChaCha8Rng, p: &Placement, k: usize) -> Op {
    let n = p.num_vertices();
    loop {
        let v = rng.gen_range(0..n);
        let f = rng.gen_range(0..k);
        let op = match rng.gen_range(0..4) {
            0 => Op::Move { v, to: f },
            1 => Op::Exchange { u: v, v: rng.gen_range(0..n) },
            2 => Op::Replicate { v, to: f },
            _ => match p.replicas[v].choose(rng) {
                Some(&from) => Op::Delete { v, from },
                None => continue,
            },
        };
        if oracle::apply_op(p, op, k).is_some() {
            return op;
        }
    }
}

fn criterion_2(audit: &mut AuditLog, tr: &mut Transcript) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC2);
    let (mut compared, mut stored, mut swept) = (0u64, 0u64, 0u64);
    let mut per_kind = [0u64; 4];
    let mut mismatch = None;
    'outer: for inst in 0..50u64 {
        let k = [2, 3, 4, 6, 8][inst as usize % 5];
        let b = mid_instance(1000 + inst, rng.gen_range(40..160), k);
        let (h, t) = (&b.hypergraph, &b.topology);
        let p = random_placement(&mut rng, h.num_vertices(), k, h.num_vertices() / 4);
        let mut r = Refiner::new(h, t, p, RefineConfig::default());
        for step in 0..200 {
            if step % 40 == 0 {
                for (op, g) in r.entries() {
                    swept += 1;
                    let want = oracle::full_gain_recompute(h, t, r.placement(), op);
                    if want != Some(g) {
                        mismatch = Some(format!("instance {inst} heap entry {op}: {g} vs {want:?}"));
                        break 'outer;
                    }
                }
            }
            let op = random_op(&mut rng, r.placement(), k);
            let want = oracle::full_gain_recompute(h, t, r.placement(), op).expect("legal");
            let got = r.gain(op);
            compared += 1;
            per_kind[op.kind().index()] += 1;
            if got != Some(want) {
                mismatch = Some(format!("instance {inst} op {op}: incremental {got:?}, full {want}"));
                break 'outer;
            }
            if let Some(s) = r.stored_gain(op) {
                stored += 1;
                if s != want {
                    mismatch = Some(format!("instance {inst} stored {op}: {s}, full {want}"));
                    break 'outer;
                }
            }
            r.apply(op);
            if r.thd() != metrics::total_hop_distance(h, r.placement(), t.hops()) {
                mismatch = Some(format!("instance {inst}: cached THD drifted after {op}"));
                break 'outer;
            }
        }
        // refinement from a feasible start on the same instance
        let res = partition(h, t, &solver(inst, OpSet::all(), true));
        audit.refine_calls += level_count(&res);
        if let Ok(res) = &res {
            audit.add(0, &res.refine);
        }
        tr.runs.push((format!("c2/{inst}"), run_bytes(&res)));
    }
    let pass = mismatch.is_none() && compared == 10_000 && per_kind.iter().all(|&c| c > 0);
    Verdict::new(
        pass,
        match mismatch {
            Some(m) => format!("mismatch: {m}"),
            None => format!(
                "{compared} op gains exact (mv {}, ex {}, rep {}, del {}), {stored} stored entries on the \
                 path, {swept} heap entries swept",
                per_kind[0], per_kind[1], per_kind[2], per_kind[3]
            ),
        },
    )
}

fn criterion_3(audit: &mut AuditLog, tr: &mut Transcript) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC3);
    let mut pairs = 0;
    let mut failure = None;
    'outer: for inst in 0..20u64 {
        let k = [3, 4, 8, 5][inst as usize % 4];
        let b = mid_instance(3000 + inst, rng.gen_range(60..200), k);
        let (h, t) = (&b.hypergraph, &b.topology);
        let res = partition(h, t, &solver(inst, OpSet::all(), true));
        audit.refine_calls += level_count(&res);
        tr.runs.push((format!("c3/{inst}"), run_bytes(&res)));
        let start = match res {
            Ok(res) => {
                audit.add(0, &res.refine);
                res.placement
            }
            Err(_) => random_placement(&mut rng, h.num_vertices(), k, 10),
        };
        let mut r = Refiner::new(h, t, start, RefineConfig::default());
        for _ in 0..50 {
            // drift to a new state first
            let op = random_op(&mut rng, r.placement(), k);
            if !matches!(op, Op::Replicate { .. }) {
                r.apply(op);
            }
            let (v, f) = loop {
                let v = rng.gen_range(0..h.num_vertices());
                let f = rng.gen_range(0..k);
                if !r.placement().is_host(v, f) {
                    break (v, f);
                }
            };
            let p0 = r.placement().clone();
            let snapshot = |r: &Refiner<'_>| {
                let p = r.placement();
                (
                    r.thd(),
                    metrics::total_hop_distance(h, p, t.hops()),
                    metrics::cut_size(h, p),
                    (0..k).map(|f| r.usage(f).to_vec()).collect::<Vec<_>>(),
                    metrics::fpga_usage(h, p, k),
                    r.io_usage().to_vec(),
                    metrics::io_usage_all(h, p, t.hops()),
                )
            };
            let before = snapshot(&r);
            let g = r.apply(Op::Replicate { v, to: f });
            let back = r.apply(Op::Delete { v, from: f });
            pairs += 1;
            let after = snapshot(&r);
            if after != before || r.placement() != &p0 || g != -back {
                failure = Some(format!("instance {inst}: replicate/delete of {v} on F{f} changed state"));
                break 'outer;
            }
            if before.0 != before.1 || before.3.iter().zip(&before.4).any(|(a, b)| a[..] != b.0[..]) || before.5 != before.6
            {
                failure = Some(format!("instance {inst}: cached metrics differ from recomputation"));
                break 'outer;
            }
        }
    }
    Verdict::new(
        failure.is_none() && pairs == 1000,
        failure.unwrap_or_else(|| format!("{pairs} pairs restored THD, cut, usage and io exactly")),
    )
}

// ---------------------------------------------------------------- 4

fn criterion_4(audit: &AuditLog) -> Verdict {
    let pass = audit.failures == 0 && audit.ops > 0;
    Verdict::new(
        pass,
        format!(
            "{} refine_level calls, {} applied ops audited, {} failures{}",
            audit.refine_calls,
            audit.ops,
            audit.failures,
            audit.first.as_deref().map(|f| format!(" (first: {f})")).unwrap_or_default()
        ),
    )
}

// ---------------------------------------------------------------- 5, 6

/// Replication needs room to land in, so the suite keeps 40% spare.
fn suite() -> Vec<InstanceBundle> {
    (0..30)
        .map(|i| {
            gen_instance(&GenConfig {
                seed: 5000 + i,
                vertices: 2000,
                edges: 2000,
                fpgas: 8,
                spare: 0.4,
                ..GenConfig::default()
            })
            .expect("suite instance")
        })
        .collect()
}

struct SuiteRuns {
    none: Vec<u64>,
    mv_ex: Vec<u64>,
    all: Vec<u64>,
    fixed: Vec<u64>,
    errors: Vec<String>,
}

fn run_suite(tr: &mut Transcript) -> SuiteRuns {
    let mut s = SuiteRuns { none: vec![], mv_ex: vec![], all: vec![], fixed: vec![], errors: vec![] };
    let fixed = CoarseningConfig::fixed(3.5);
    for (i, b) in suite().iter().enumerate() {
        let arms: [(&str, PartitionConfig); 4] = [
            ("none", solver(1, OpSet::none(), false)),
            ("mv,ex", solver(1, OpSet::move_exchange(), false)),
            ("all", solver(1, OpSet::all(), false)),
            ("fixed", PartitionConfig { coarsen: fixed.clone(), ..solver(1, OpSet::all(), false) }),
        ];
        for (name, cfg) in arms {
            let r = partition(&b.hypergraph, &b.topology, &cfg);
            tr.runs.push((format!("suite/{i}/{name}"), run_bytes(&r)));
            let thd = match r {
                Ok(r) if r.report.violations.is_empty() => r.report.total_hop_distance,
                Ok(_) => {
                    s.errors.push(format!("#{i} {name}: infeasible output"));
                    continue;
                }
                Err(e) => {
                    s.errors.push(format!("#{i} {name}: {e}"));
                    continue;
                }
            };
            match name {
                "none" => s.none.push(thd),
                "mv,ex" => s.mv_ex.push(thd),
                "all" => s.all.push(thd),
                _ => s.fixed.push(thd),
            }
        }
    }
    s
}

fn mean(xs: &[u64]) -> f64 {
    xs.iter().sum::<u64>() as f64 / xs.len().max(1) as f64
}

fn criterion_5(s: &SuiteRuns) -> Verdict {
    let (none, mv_ex, all) = (mean(&s.none), mean(&s.mv_ex), mean(&s.all));
    let gain_all = 1.0 - all / mv_ex;
    let gain_mv = 1.0 - mv_ex / none;
    let complete = s.errors.is_empty() && s.all.len() == 30;
    Verdict::new(
        complete && gain_all >= 0.10 && gain_mv >= 0.30,
        format!(
            "mean THD none {none:.1}, mv+ex {mv_ex:.1} ({:.1}% lower), all {all:.1} ({:.1}% lower than mv+ex){}",
            100.0 * gain_mv,
            100.0 * gain_all,
            s.errors.first().map(|e| format!("; error {e}")).unwrap_or_default()
        ),
    )
}

fn criterion_6(s: &SuiteRuns) -> Verdict {
    let (dynamic, fixed) = (mean(&s.all), mean(&s.fixed));
    let strict = s.all.iter().zip(&s.fixed).filter(|(d, f)| d < f).count();
    let complete = s.errors.is_empty() && s.fixed.len() == 30;
    Verdict::new(
        complete && dynamic <= fixed && strict as f64 >= 0.6 * 30.0,
        format!("mean THD dynamic {dynamic:.1}, fixed 3.5 {fixed:.1}; dynamic strictly better on {strict}/30"),
    )
}

// ---------------------------------------------------------------- 7

fn criterion_7() -> Verdict {
    let b = gen_instance(&GenConfig {
        seed: 7,
        vertices: 100_000,
        edges: 100_000,
        fpgas: 8,
        ..GenConfig::default()
    })
    .expect("large instance");
    let (h, t) = (&b.hypergraph, &b.topology);
    // start from the unrefined multilevel result projected to the input level
    let start = match partition(h, t, &solver(7, OpSet::none(), false)) {
        Ok(r) => r.placement,
        Err(e) => return Verdict::new(false, format!("no starting placement: {e}")),
    };
    let timed = |mode| {
        let cfg = RefineConfig { mode, ..RefineConfig::default() };
        let t0 = Instant::now();
        let (p, s) = refine_level(h, t, start.clone(), &cfg);
        (t0.elapsed(), p, s)
    };
    let (ti, pi, si) = timed(GainMode::Incremental);
    let (tf, pf, sf) = timed(GainMode::FullRecompute);
    let speedup = tf.as_secs_f64() / ti.as_secs_f64();
    let same = pi == pf;
    Verdict::new(
        same && speedup >= 1.5,
        format!(
            "incremental {:.2}s, full recompute {:.2}s, speedup {speedup:.2}x; {} ops, THD {} -> {}{}",
            ti.as_secs_f64(),
            tf.as_secs_f64(),
            si.applied_total(),
            si.thd_before,
            si.thd_after,
            if same { String::new() } else { format!("; results differ (full THD {})", sf.thd_after) }
        ),
    )
}

// ---------------------------------------------------------------- 8

fn criterion_8(first: &Transcript, second: &Transcript, cli: Result<usize, String>) -> Verdict {
    let diff = first
        .runs
        .iter()
        .zip(&second.runs)
        .find(|(a, b)| a != b)
        .map(|(a, _)| a.0.clone());
    let same_len = first.runs.len() == second.runs.len();
    match (diff, cli) {
        (None, Ok(files)) if same_len => Verdict::new(
            true,
            format!("{} library runs and {files} CLI output files byte-identical on rerun", first.runs.len()),
        ),
        (Some(run), _) => Verdict::new(false, format!("run {run} differs")),
        (_, Err(e)) => Verdict::new(false, e),
        _ => Verdict::new(false, "rerun produced a different number of runs"),
    }
}

fn cli_determinism() -> Result<usize, String> {
    let exe = env!("CARGO_BIN_EXE_mfspart");
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut files = 0;
    for seed in 0..3u64 {
        let b = mid_instance(8000 + seed, 800, 8);
        let hg = dir.path().join(format!("g{seed}.hgr"));
        let tp = dir.path().join(format!("g{seed}.topo"));
        std::fs::write(&hg, write_hypergraph(&b.hypergraph)).map_err(|e| e.to_string())?;
        std::fs::write(&tp, write_topology(&b.topology)).map_err(|e| e.to_string())?;
        let mut outputs = Vec::new();
        for run in 0..2 {
            let sol = dir.path().join(format!("s{seed}_{run}.sol"));
            let rep = dir.path().join(format!("s{seed}_{run}.json"));
            let status = std::process::Command::new(exe)
                .arg("partition")
                .arg(&hg)
                .arg(&tp)
                .args(["--seed", &seed.to_string(), "--ops", "all", "-o"])
                .arg(&sol)
                .arg("--report")
                .arg(&rep)
                .status()
                .map_err(|e| e.to_string())?;
            if !status.success() {
                return Err(format!("CLI run failed with {status}"));
            }
            let read = |p: &std::path::Path| std::fs::read(p).map_err(|e| e.to_string());
            outputs.push((read(&sol)?, read(&rep)?));
            files += 2;
        }
        if outputs[0] != outputs[1] {
            return Err(format!("CLI outputs differ for seed {seed}"));
        }
    }
    Ok(files)
}

// ---------------------------------------------------------------- 9

fn criterion_9() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC9);
    for trial in 0..100 {
        let n = rng.gen_range(1..=64);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut links = BTreeSet::new();
        for i in 1..n {
            let j = rng.gen_range(0..i);
            let (a, b) = (order[i], order[j]);
            links.insert((a.min(b), a.max(b)));
        }
        for _ in 0..rng.gen_range(0..=2 * n) {
            let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
            if a != b {
                links.insert((a.min(b), a.max(b)));
            }
        }
        let links: Vec<_> = links.into_iter().collect();
        let bfs = match compute_hop_matrix(n, &links) {
            Ok(m) => m,
            Err(e) => return Verdict::new(false, format!("trial {trial}: {e}")),
        };
        let fw = oracle::floyd_warshall(n, &links);
        for a in 0..n {
            for b in 0..n {
                if bfs.get(a, b) != fw[a * n + b] {
                    return Verdict::new(false, format!("trial {trial} (K={n}): ({a},{b}) differs"));
                }
            }
        }
    }
    Verdict::new(true, "100 topologies with K up to 64 match exactly")
}

// ---------------------------------------------------------------- 10

fn criterion_10() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0xCA);
    let mut bases = Vec::new();
    let mut seed = 10_000;
    while bases.len() < 20 {
        seed += 1;
        let b = gen_instance(&GenConfig {
            seed,
            vertices: 150,
            edges: 200,
            fpgas: 4 + (seed as usize % 5),
            io_factor: Some(4.0),
            ..GenConfig::default()
        })
        .expect("instance");
        if let Ok(r) = partition(&b.hypergraph, &b.topology, &solver(seed, OpSet::all(), false)) {
            if r.report.violations.is_empty() && r.report.max_hop > 1 {
                bases.push((b, r.placement));
            }
        }
    }
    let mut detected = [0u32; 4];
    let mut tried = [0u32; 4];
    let mut miss = None;
    for trial in 0..1000 {
        let (b, p) = &bases[trial % bases.len()];
        let (h, t) = (&b.hypergraph, &b.topology);
        let k = t.num_fpgas();
        let usage = metrics::fpga_usage(h, p, k);
        let io = metrics::io_usage_all(h, p, t.hops());
        let kind = trial % 4;
        tried[kind] += 1;
        let (t2, p2, want) = match kind {
            0 => {
                // shrink one capacity entry below its usage
                let f = (0..k).filter(|&f| usage[f].0.iter().any(|&u| u > 0)).collect::<Vec<_>>();
                let f = *f.choose(&mut rng).expect("some FPGA is used");
                let ty = (0..usage[f].len()).filter(|&i| usage[f].0[i] > 0).collect::<Vec<_>>();
                let ty = *ty.choose(&mut rng).expect("used type");
                let mut caps = t.capacities().to_vec();
                caps[f].0[ty] = rng.gen_range(0..usage[f].0[ty]);
                (t.rebuild(caps, t.io_limits().to_vec(), t.hop_max()).unwrap(), p.clone(), ViolationKind::Resource)
            }
            1 => {
                let f = (0..k).filter(|&f| io[f] > 0).collect::<Vec<_>>();
                let f = *f.choose(&mut rng).expect("some io");
                let mut limits = t.io_limits().to_vec();
                limits[f] = Some(rng.gen_range(0..io[f]));
                (t.rebuild(t.capacities().to_vec(), limits, t.hop_max()).unwrap(), p.clone(), ViolationKind::Io)
            }
            2 => {
                let worst = metrics::max_hop_used(h, p, t.hops());
                let limit = rng.gen_range(1..worst);
                (t.rebuild(t.capacities().to_vec(), t.io_limits().to_vec(), Some(limit)).unwrap(), p.clone(), ViolationKind::Hop)
            }
            _ => {
                let mut q = p.clone();
                let v = rng.gen_range(0..q.num_vertices());
                match rng.gen_range(0..4) {
                    0 => q.original[v] = k + rng.gen_range(0..3),
                    1 => q.replicas[v].push(q.original[v]),
                    2 => {
                        q.original.pop();
                    }
                    _ => q.replicas.push(Vec::new()),
                }
                (t.clone(), q, ViolationKind::Placement)
            }
        };
        let found = metrics::validate(h, &t2, &p2);
        if !found.is_empty() && found.iter().all(|v| v.kind == want) {
            detected[kind] += 1;
        } else if miss.is_none() {
            miss = Some(format!("trial {trial}: injected {want:?}, got {found:?}"));
        }
    }
    let total: u32 = detected.iter().sum();
    Verdict::new(
        total == 1000,
        match miss {
            Some(m) => format!("{total}/1000 detected; {m}"),
            None => format!(
                "1000/1000 detected (resource {}, io {}, hop {}, placement {})",
                detected[0], detected[1], detected[2], detected[3]
            ),
        },
    )
}

// ----------------------------------------------------------------

fn main() -> ExitCode {
    let selected: BTreeSet<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let want = |c: u32| selected.is_empty() || selected.contains(&c);
    let mut audit = AuditLog::default();
    let mut first = Transcript::default();
    let mut results: Vec<(u32, &str, Verdict, Duration)> = Vec::new();
    let mut record = |c: u32, name: &'static str, f: &mut dyn FnMut() -> Verdict| {
        let t0 = Instant::now();
        let v = f();
        let line = (c, name, v, t0.elapsed());
        println!(
            "criterion {:>2} {} {}: {} [{:.1}s]",
            line.0,
            if line.2.pass { "PASS" } else { "FAIL" },
            line.1,
            line.2.detail,
            line.3.as_secs_f64()
        );
        results.push(line);
    };

    let need_c1_3 = want(1) || want(2) || want(3) || want(4) || want(8);
    let need_suite = want(5) || want(6) || want(8);
    if need_c1_3 {
        record(1, "oracle optimality", &mut || criterion_1(&mut audit, &mut first));
        record(2, "gain exactness", &mut || criterion_2(&mut audit, &mut first));
        record(3, "replicate/delete inverse", &mut || criterion_3(&mut audit, &mut first));
        record(4, "monotonic audited refinement", &mut || criterion_4(&audit));
    }
    let suite_runs = need_suite.then(|| run_suite(&mut first));
    if let Some(s) = &suite_runs {
        if want(5) {
            record(5, "operator ablation", &mut || criterion_5(s));
        }
        if want(6) {
            record(6, "dynamic alpha", &mut || criterion_6(s));
        }
    }
    if want(7) {
        record(7, "incremental speedup", &mut criterion_7);
    }
    if want(8) {
        record(8, "determinism", &mut || {
            let mut second = Transcript::default();
            let mut scratch = AuditLog::default();
            criterion_1(&mut scratch, &mut second);
            criterion_2(&mut scratch, &mut second);
            criterion_3(&mut scratch, &mut second);
            run_suite(&mut second);
            criterion_8(&first, &second, cli_determinism())
        });
    }
    if want(9) {
        record(9, "hop matrix equivalence", &mut criterion_9);
    }
    if want(10) {
        record(10, "validator completeness", &mut criterion_10);
    }
    let failed = results.iter().filter(|r| !r.2.pass).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
