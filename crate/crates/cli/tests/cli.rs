use std::path::Path;
use std::process::{Command, Output};

use xlayer::linalg::{c64, CMat};
use xlayer::net_model::{instance_to_toml, Dims, InstanceParts};
use xlayer::NetworkInstance;

fn xlayer(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xlayer")).args(args).current_dir(dir).output().unwrap()
}

fn write_pair(dir: &Path, cross: f64) -> String {
    let channels = (0..4)
        .map(|k| CMat::from_element(1, 1, c64(if k / 2 == k % 2 { 1.0 } else { cross }, 0.0)))
        .collect();
    let inst = NetworkInstance::new(InstanceParts {
        dims: Dims { num_bs: 2, num_users: 2, tx_antennas: 1, rx_antennas: 1, tones: 1, slots: 1 },
        channels,
        noise_power: vec![1.0; 2],
        power_budget: vec![1.0; 2],
        link_gain: vec![],
        home_bs: vec![0, 1],
        bs_positions: vec![],
        user_positions: vec![],
    })
    .unwrap();
    let p = dir.join("pair.toml");
    std::fs::write(&p, instance_to_toml(&inst).unwrap()).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn solve_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let inst = write_pair(dir.path(), 0.5);
    let o = xlayer(&["solve", "--algo", "wmmse", "--instance", &inst, "--seed", "3", "--out", "run"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["trace.csv", "rates.csv", "cdf.csv", "manifest.toml"] {
        assert!(dir.path().join("run").join(f).is_file(), "missing {f}");
    }
    let trace = std::fs::read_to_string(dir.path().join("run/trace.csv")).unwrap();
    assert!(trace.starts_with("iteration,objective,sum_rate,min_rate,max_power_violation\n"));
    let manifest = std::fs::read_to_string(dir.path().join("run/manifest.toml")).unwrap();
    assert!(manifest.contains("seed = 3"));
}

#[test]
fn joint_sched_dumps_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let inst = write_pair(dir.path(), 1.0);
    let o = xlayer(&["solve", "--algo", "joint-sched", "--slots", "2", "--instance", &inst, "--out", "s"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("s/schedule.csv")).unwrap();
    assert!(csv.starts_with("user,slot,alpha\n"));
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn nmaxmin_reads_a_graph() {
    let dir = tempfile::tempdir().unwrap();
    let g = "[nodes]\n0 router\n1 router\n2 router\n3 user\n[edges]\n0 1 wired 1\n1 3 wired 5\n0 2 wired 2\n2 3 wired 5\n[commodities]\n0 3\n";
    std::fs::write(dir.path().join("g.txt"), g).unwrap();
    let o = xlayer(&["solve", "--algo", "nmaxmin", "--graph", "g.txt", "--out", "n"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let flows = std::fs::read_to_string(dir.path().join("n/flows.csv")).unwrap();
    assert!(flows.starts_with("commodity,link,rate\n"));
}

#[test]
fn sweep_makes_seed_directories() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "algorithm = \"nn-wmmse\"\nseeds = [1, 2]\noutput = \"sw\"\n[instance]\nkind = \"drop\"\nnum_bs = 2\nnum_users = 3\n[stop]\nmax_iters = 20\n";
    std::fs::write(dir.path().join("exp.toml"), cfg).unwrap();
    let o = xlayer(&["sweep", "--config", "exp.toml"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for s in [1, 2] {
        assert!(dir.path().join(format!("sw/seed-{s}/manifest.toml")).is_file());
    }
    assert!(dir.path().join("sw/config.toml").is_file());
}

#[test]
fn cdf_of_three_rates() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("r.csv"), "user,rate\n0,3\n1,1\n2,2\n").unwrap();
    let o = xlayer(&["cdf", "r.csv"], dir.path());
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let rows: Vec<(f64, f64)> = text
        .lines()
        .skip(1)
        .map(|l| {
            let (a, b) = l.split_once(',').unwrap();
            (a.parse().unwrap(), b.parse().unwrap())
        })
        .collect();
    assert_eq!(rows, vec![(1.0, 1.0 / 3.0), (2.0, 2.0 / 3.0), (3.0, 1.0)]);
}

#[test]
fn oracle_of_interference_free_pair() {
    let dir = tempfile::tempdir().unwrap();
    let inst = write_pair(dir.path(), 0.0);
    let o = xlayer(&["oracle", &inst, "--grid", "11"], dir.path());
    assert!(o.status.success());
    let v: f64 = String::from_utf8(o.stdout).unwrap().trim().parse().unwrap();
    assert!((v - 2.0 * 2f64.ln()).abs() < 1e-12);
}

#[test]
fn configuration_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let inst = write_pair(dir.path(), 0.5);
    assert_eq!(xlayer(&["solve", "--algo", "magic", "--instance", &inst], dir.path()).status.code(), Some(1));
    assert_eq!(xlayer(&["solve", "--config", "missing.toml"], dir.path()).status.code(), Some(1));
    assert_eq!(xlayer(&["solve", "--algo", "wmmse"], dir.path()).status.code(), Some(1));
    assert_eq!(xlayer(&["frobnicate"], dir.path()).status.code(), Some(1));
    assert_eq!(xlayer(&["--help"], dir.path()).status.code(), Some(0));
}
