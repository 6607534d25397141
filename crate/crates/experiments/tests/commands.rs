use std::fs;
use std::process::Command;

use alpha_smc::{Emission, FiniteStateModel, ModelSpec, PolicySpec, TestFunction};
use alpha_smc_experiments::config::ReferenceKind;
use alpha_smc_experiments::estimands::Estimand;
use alpha_smc_experiments::{cmd_ess_growth, cmd_mse, cmd_naive_demo, cmd_simulate_data, cmd_trace, ExperimentConfig};

fn small(policies: &[&str]) -> ExperimentConfig {
    ExperimentConfig {
        n_particles: 64,
        n_steps: 60,
        replicates: 3,
        burn_in: 10,
        policies: policies.iter().map(|s| s.to_string()).collect(),
        sweep_rules: Vec::new(),
        ..ExperimentConfig::default()
    }
}

#[test]
fn mse_against_an_identical_reference_is_zero() {
    let cfg = ExperimentConfig {
        replicates: 1,
        reference: ReferenceKind::Bpf,
        reference_particles: 64,
        reference_seed: Some(ExperimentConfig::default().replicate_seed(0)),
        ..small(&["bpf"])
    };
    let report = cmd_mse(&cfg).unwrap();
    assert_eq!(report.rows.len(), 3 * TestFunction::ALL.len());
    for row in &report.rows {
        assert_eq!(row.mse, 0.0, "{:?} {:?}", row.test_function, row.estimand);
    }
}

#[test]
fn mse_rows_cover_every_estimand() {
    let report = cmd_mse(&small(&["arpf:0.5", "greedy:0.5"])).unwrap();
    for policy in [PolicySpec::Arpf(0.5), PolicySpec::Adaptive(alpha_smc::AdaptationRule::Greedy, 0.5)] {
        for phi in TestFunction::ALL {
            for est in Estimand::ALL {
                let row = report.get(&policy, phi, est).unwrap();
                assert!(row.mse.is_finite() && row.mse >= 0.0);
                assert_eq!(row.per_replicate.len(), 3);
            }
        }
    }
}

#[test]
fn one_block_makes_naive_and_weighted_agree() {
    let cfg = ExperimentConfig {
        block_size: 32,
        blocks: 1,
        n_steps: 10,
        replicates: 20,
        test_functions: vec![TestFunction::Identity],
        ..ExperimentConfig::default()
    };
    let d = cmd_naive_demo(&cfg).unwrap();
    assert!((d.naive_error.mean - d.weighted_error.mean).abs() < 1e-12);
}

#[test]
fn bootstrap_trace_keeps_every_particle_effective() {
    let traces = cmd_trace(&small(&["bpf", "sis"])).unwrap();
    let bpf = &traces[0];
    assert!(bpf.diagnostics.iter().skip(1).all(|d| d.n_eff == 64.0 && d.ess_coeff == 1.0));
    assert_eq!(bpf.diagnostics.len(), 61);
    let sis = &traces[1];
    assert!(sis.diagnostics.iter().all(|d| d.k_n == 0));
}

#[test]
fn uninformative_observations_never_trigger_interaction() {
    let model = FiniteStateModel::new(
        vec![0.5, 0.5],
        vec![vec![0.7, 0.3], vec![0.4, 0.6]],
        Emission::Discrete { probs: vec![vec![0.3, 0.7], vec![0.3, 0.7]] },
    )
    .unwrap();
    let cfg = ExperimentConfig { model: Some(ModelSpec::FiniteState(model)), ..small(&["simple:0.9", "random:0.9", "greedy:0.9", "arpf:0.9"]) };
    for t in cmd_trace(&cfg).unwrap() {
        assert!(t.diagnostics.iter().all(|d| d.k_n == 0 && d.ess_coeff == 1.0), "{}", t.policy);
    }
}

#[test]
fn ess_growth_curves_start_together_and_reach_one() {
    let rows = cmd_ess_growth(&small(&["greedy:0.6"])).unwrap();
    assert_eq!(rows.len(), 3);
    let start = rows[0].mean_ess[0];
    for g in &rows {
        assert_eq!(g.mean_ess[0], start);
        assert!((g.mean_ess.last().unwrap() - 1.0).abs() < 1e-12);
        assert!(g.mean_ess.windows(2).all(|w| w[1] >= w[0] - 1e-12), "{:?}", g.rule);
    }
}

#[test]
fn csv_output_is_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [&a, &b] {
        let cfg = ExperimentConfig { out_dir: Some(dir.path().to_path_buf()), window: Some((5, 20)), ..small(&["random:0.6", "blocks:4"]) };
        cmd_trace(&cfg).unwrap();
        cmd_simulate_data(&cfg).unwrap();
    }
    for name in ["trace_random_0.6.csv", "trace_blocks_4.csv", "observations.csv", "states.csv"] {
        let (x, y) = (fs::read(a.path().join(name)), fs::read(b.path().join(name)));
        let (x, y) = (x.unwrap_or_else(|e| panic!("{name}: {e}")), y.unwrap());
        assert_eq!(x, y, "{name}");
    }
    let trace = fs::read_to_string(a.path().join("trace_random_0.6.csv")).unwrap();
    let mut lines = trace.lines();
    assert_eq!(lines.next().unwrap(), "n,ess_coeff,n_eff,k_n,degree,logZ,x,x2,exp_half");
    assert_eq!(lines.count(), 16);
}

fn asmc(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_asmc")).args(args).output().unwrap();
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stdout).into(), String::from_utf8_lossy(&out.stderr).into())
}

#[test]
fn cli_runs_and_writes_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let (code, stdout, _) = asmc(&["simulate-data", "--steps", "40", "--out-dir", out]);
    assert_eq!(code, 0);
    assert!(stdout.contains("40 observations"));
    let obs = fs::read_to_string(dir.path().join("observations.csv")).unwrap();
    assert!(obs.starts_with("t,y\n"));
    assert_eq!(obs.lines().count(), 41);

    let (code, stdout, _) = asmc(&["trace", "--steps", "30", "--particles", "32", "--policy", "greedy:0.7", "--policy", "bpf"]);
    assert_eq!(code, 0);
    assert_eq!(stdout.lines().count(), 2);
}

#[test]
fn cli_exit_codes() {
    assert_eq!(asmc(&["trace", "--policy", "nope"]).0, 1);
    assert_eq!(asmc(&["trace", "--particles", "0"]).0, 1);

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "n_particle = 10\n").unwrap();
    assert_eq!(asmc(&["trace", "--config", cfg.to_str().unwrap()]).0, 1);

    // every state assigns zero probability to category 1
    let data = dir.path().join("obs.csv");
    fs::write(&data, "t,y\n0,0\n1,1\n2,0\n").unwrap();
    let cfg = dir.path().join("zero.toml");
    fs::write(
        &cfg,
        format!(
            "data = {:?}\nn_steps = 3\npolicies = [\"bpf\"]\nsweep_rules = []\n\n[model]\nkind = \"finite-state\"\nprior = [0.5, 0.5]\ntransition = [[0.5, 0.5], [0.5, 0.5]]\nemission = {{ kind = \"discrete\", probs = [[1.0, 0.0], [1.0, 0.0]] }}\n",
            data.to_str().unwrap()
        ),
    )
    .unwrap();
    let (code, _, stderr) = asmc(&["trace", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code, 2, "{stderr}");
}
