use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_mfspart");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn write(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(bytes: &[u8]) -> serde_json::Value {
    serde_json::from_slice(bytes).expect("JSON output")
}

/// Two unit vertices joined by a weight-3 net, on a path F0 - F1 - F2.
fn crossing(dir: &TempDir, cap: u64) -> (PathBuf, PathBuf) {
    let h = write(dir, "x.hgr", "2 1 1\n1\n1\n3 0 1\n");
    let t = write(dir, "x.topo", &format!("3 2 1\n{cap}\n{cap}\n{cap}\n0 1\n1 2\n"));
    (h, t)
}

#[test]
fn evaluate_hand_built_crossing_net() {
    let dir = TempDir::new().unwrap();
    let (h, t) = crossing(&dir, 5);
    let far = write(&dir, "far.sol", "0\n2\n");
    let o = run(&["evaluate", s(&h), s(&t), s(&far)]);
    assert_eq!(code(&o), 0);
    let r = json(&o.stdout);
    assert_eq!(r["total_hop_distance"], 6);
    assert_eq!(r["cut_size"], 1);
    assert_eq!(r["max_hop"], 2);

    let local = write(&dir, "local.sol", "1\n1\n");
    let o = run(&["evaluate", s(&h), s(&t), s(&local)]);
    assert_eq!(code(&o), 0);
    assert_eq!(json(&o.stdout)["total_hop_distance"], 0);
}

#[test]
fn evaluate_reports_capacity_violation() {
    let dir = TempDir::new().unwrap();
    let (h, t) = crossing(&dir, 1);
    let sol = write(&dir, "both.sol", "0\n0\n");
    let o = run(&["evaluate", s(&h), s(&t), s(&sol)]);
    assert_eq!(code(&o), 5);
    let v = &json(&o.stdout)["violations"];
    assert_eq!(v[0]["kind"], "resource");
    assert_eq!(v[0]["site"], 0);

    let o = run(&["validate", s(&h), s(&t), s(&sol)]);
    assert_eq!(code(&o), 5);
    assert_eq!(json(&o.stdout).as_array().unwrap().len(), 1);
}

#[test]
fn parse_and_infeasible_exit_codes() {
    let dir = TempDir::new().unwrap();
    let (h, t) = crossing(&dir, 5);
    let missing = dir.path().join("nope.hgr");
    assert_eq!(code(&run(&["partition", s(&missing), s(&t)])), 2);
    let bad = write(&dir, "bad.hgr", "2 1 1\n1\n");
    assert_eq!(code(&run(&["partition", s(&bad), s(&t)])), 2);

    let heavy = write(&dir, "heavy.hgr", "2 1 1\n9\n1\n3 0 1\n");
    assert_eq!(code(&run(&["partition", s(&heavy), s(&t)])), 3);
    assert_eq!(code(&run(&["oracle", s(&heavy), s(&t)])), 3);

    let o = run(&["partition", s(&h), s(&t)]);
    assert_eq!(code(&o), 0);
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().count(), 2);
}

#[test]
fn gen_partition_evaluate_round_trip() {
    let dir = TempDir::new().unwrap();
    let paths = |tag: &str| (dir.path().join(format!("{tag}.hgr")), dir.path().join(format!("{tag}.topo")));
    let (h1, t1) = paths("a");
    let (h2, t2) = paths("b");
    for (h, t) in [(&h1, &t1), (&h2, &t2)] {
        let o = run(&[
            "gen", "--seed", "9", "--vertices", "400", "--edges", "400", "--fpgas", "4",
            "--out-hypergraph", s(h), "--out-topology", s(t),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(std::fs::read(&h1).unwrap(), std::fs::read(&h2).unwrap());
    assert_eq!(std::fs::read(&t1).unwrap(), std::fs::read(&t2).unwrap());

    let sol = dir.path().join("a.sol");
    let rep = dir.path().join("a.json");
    let o = run(&["partition", s(&h1), s(&t1), "--seed", "3", "-o", s(&sol), "--report", s(&rep)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(&["evaluate", s(&h1), s(&t1), s(&sol)]);
    assert_eq!(code(&o), 0);
    assert_eq!(o.stdout, std::fs::read(&rep).unwrap());
}

#[test]
fn ops_flag_controls_replication() {
    let dir = TempDir::new().unwrap();
    let (h, t) = (dir.path().join("g.hgr"), dir.path().join("g.topo"));
    let o = run(&[
        "gen", "--seed", "4", "--vertices", "600", "--edges", "600", "--spare", "0.5",
        "--out-hypergraph", s(&h), "--out-topology", s(&t),
    ]);
    assert_eq!(code(&o), 0);
    let thd = |ops: &str| {
        let o = run(&["partition", s(&h), s(&t), "--ops", ops, "--report", "/dev/stdout", "-o", "/dev/null"]);
        assert_eq!(code(&o), 0);
        let r = json(&o.stdout);
        (r["total_hop_distance"].as_u64().unwrap(), r["replica_count"].as_u64().unwrap())
    };
    let (none, none_reps) = thd("none");
    let (mv_ex, mv_reps) = thd("mv,ex");
    let (_, all_reps) = thd("all");
    assert_eq!((none_reps, mv_reps), (0, 0));
    assert!(mv_ex <= none);
    assert!(all_reps > 0);
}

#[test]
fn bench_rows_and_summary() {
    let dir = TempDir::new().unwrap();
    let csv_path = dir.path().join("bench.csv");
    let o = run(&[
        "bench", "--vertices", "300", "--edges", "300", "--fpgas", "4", "--instances", "2",
        "--run-seeds", "1,2", "--configs", "mv,ex;mv,ex,rep;all", "--csv", s(&csv_path),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let mut rows = csv::Reader::from_path(&csv_path).unwrap();
    let rows: Vec<csv::StringRecord> = rows.records().map(Result::unwrap).collect();
    // three rows per instance and seed
    assert_eq!(rows.len(), 2 * 2 * 3);
    let thd = |r: &csv::StringRecord| r[4].parse::<f64>().unwrap();
    let mut ratios = vec![Vec::new(); 3];
    for run in rows.chunks(3) {
        for (c, r) in run.iter().enumerate() {
            assert_eq!(&r[3], "ok");
            ratios[c].push(thd(r) / thd(&run[0]));
        }
    }

    let mut summary = csv::Reader::from_reader(o.stderr.as_slice());
    let summary: Vec<csv::StringRecord> = summary.records().map(Result::unwrap).collect();
    assert_eq!(summary.len(), 3);
    for (c, r) in summary.iter().enumerate() {
        let mean = ratios[c].iter().sum::<f64>() / ratios[c].len() as f64;
        let printed: f64 = r[2].parse().unwrap();
        assert!((printed - mean).abs() < 5e-5, "config {c}: {printed} vs {mean}");
        assert_eq!(&r[3], "4");
    }
    assert_eq!(&summary[1][0], "mv,ex,rep");
}
