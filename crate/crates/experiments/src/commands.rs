//! One function per CLI subcommand. Each returns a structured report and,
//! when the configuration names an output directory, writes its CSV files
//! there.

use std::fs::File;
use std::io::{BufWriter, Write};

use alpha_smc::adaptation::adapt_select_with;
use alpha_smc::interaction::{make_block_diagonal, make_star_walk, make_to_hub};
use alpha_smc::numeric::ols_slope;
use alpha_smc::oracles::{discrete_forward, kalman_predictive};
use alpha_smc::{
    run, run_with_observer, AdaptationPolicy, AdaptationRule, HmmModel, InteractionSpec, LinearGaussianModel, ModelSpec,
    ObservationRecord, OpCounter, PolicySpec, RunOptions, StateValue, StepDiagnostics, TestFunction,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::config::{default_delta_model, default_finite_model, default_sv_model, ExperimentConfig, ReferenceKind};
use crate::error::{config_err, HarnessError, Result};
use crate::estimands::{exact_filter_predictor, particle_estimates, Estimand, Triple};
use crate::stats::{total_variation, MeanSe};

/// Calls `$body` with `$m` bound to the concrete model inside `$spec`.
macro_rules! with_model {
    ($spec:expr, |$m:ident| $body:expr) => {
        match $spec {
            ModelSpec::LinearGaussian($m) => $body,
            ModelSpec::StochasticVolatility($m) => $body,
            ModelSpec::FiniteState($m) => $body,
        }
    };
}

fn sv_default() -> ModelSpec {
    ModelSpec::StochasticVolatility(default_sv_model())
}

fn finite_default() -> ModelSpec {
    ModelSpec::FiniteState(default_finite_model())
}

fn output(cfg: &ExperimentConfig, name: &str) -> Result<Option<BufWriter<File>>> {
    match &cfg.out_dir {
        None => Ok(None),
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            Ok(Some(BufWriter::new(File::create(dir.join(name))?)))
        }
    }
}

fn file_stem(policy: &PolicySpec) -> String {
    policy.to_string().replace(':', "_")
}

fn state_values<S: StateValue>(phis: &[TestFunction]) -> Vec<impl Fn(&S) -> f64 + '_> {
    phis.iter().map(|phi| move |x: &S| phi.eval(x.value())).collect()
}

// ---------------------------------------------------------------- simulate-data

#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub states: Vec<f64>,
    pub record: ObservationRecord,
}

/// Simulates `n_steps` hidden states and observations; writes
/// `observations.csv` (`t,y`) and `states.csv` (`t,x`).
pub fn cmd_simulate_data(cfg: &ExperimentConfig) -> Result<SimulatedData> {
    let spec = cfg.model_or(sv_default);
    let (states, record) = with_model!(&spec, |m| {
        let (xs, rec) = alpha_smc::simulate_data(m, cfg.n_steps, cfg.data_seed())?;
        (xs.iter().map(StateValue::value).collect::<Vec<f64>>(), rec)
    });
    if let Some(mut out) = output(cfg, "observations.csv")? {
        record.write_csv(&mut out)?;
    }
    if let Some(mut out) = output(cfg, "states.csv")? {
        writeln!(out, "t,x")?;
        for (t, x) in states.iter().enumerate() {
            writeln!(out, "{t},{x:.16e}")?;
        }
    }
    Ok(SimulatedData { states, record })
}

// ---------------------------------------------------------------- trace

/// Diagnostics and filter estimates of one run, rows `n = 0..=n_steps`.
#[derive(Debug, Clone)]
pub struct PolicyTrace {
    pub policy: PolicySpec,
    pub diagnostics: Vec<StepDiagnostics>,
    pub estimates: Vec<Vec<f64>>,
}

fn run_policies<M>(model: &M, cfg: &ExperimentConfig, policies: &[PolicySpec], probe_all: bool) -> Result<Vec<PolicyTrace>>
where
    M: HmmModel<Observation = f64>,
    M::State: StateValue,
{
    let record = cfg.observations(model, cfg.n_steps)?;
    let phis = state_values::<M::State>(&cfg.test_functions);
    let opts = RunOptions::new(cfg.n_particles, cfg.n_steps, cfg.replicate_seed(0));
    policies
        .par_iter()
        .map(|&policy| {
            let mut built = policy.build(cfg.n_particles)?;
            if probe_all {
                built = built.with_probe_all();
            }
            let trace = run(model, &record, &built, &opts, &phis)?;
            Ok(PolicyTrace { policy, diagnostics: trace.diagnostics, estimates: trace.estimates })
        })
        .collect()
}

/// One run per policy on common random numbers; writes `trace_<policy>.csv`
/// with columns `n,ess_coeff,n_eff,k_n,degree,logZ,<phi...>`, restricted to
/// the configured window.
pub fn cmd_trace(cfg: &ExperimentConfig) -> Result<Vec<PolicyTrace>> {
    let spec = cfg.model_or(sv_default);
    let policies = cfg.policy_list()?;
    let traces = with_model!(&spec, |m| run_policies(m, cfg, &policies, false)?);
    let (lo, hi) = cfg.window.unwrap_or((0, usize::MAX));
    for t in &traces {
        if let Some(mut out) = output(cfg, &format!("trace_{}.csv", file_stem(&t.policy)))? {
            write!(out, "n,ess_coeff,n_eff,k_n,degree,logZ")?;
            for phi in &cfg.test_functions {
                write!(out, ",{}", phi.name())?;
            }
            writeln!(out)?;
            for (d, est) in t.diagnostics.iter().zip(&t.estimates).filter(|(d, _)| d.n >= lo && d.n <= hi) {
                write!(out, "{},{:.16e},{:.16e},{},{},{:.16e}", d.n, d.ess_coeff, d.n_eff, d.k_n, d.degree, d.log_z)?;
                for v in est {
                    write!(out, ",{v:.16e}")?;
                }
                writeln!(out)?;
            }
        }
    }
    Ok(traces)
}

// ---------------------------------------------------------------- khist

/// Counts of the adaptation depth `K_n` over the two halves of the
/// post-burn-in steps; index `k` holds the count of `K_n = k`.
#[derive(Debug, Clone)]
pub struct KHistogram {
    pub policy: PolicySpec,
    pub first_half: Vec<usize>,
    pub second_half: Vec<usize>,
}

impl KHistogram {
    pub fn total(&self) -> Vec<usize> {
        let len = self.first_half.len().max(self.second_half.len());
        (0..len).map(|k| self.first_half.get(k).unwrap_or(&0) + self.second_half.get(k).unwrap_or(&0)).collect()
    }

    /// Depths that occurred at least once.
    pub fn support(&self) -> Vec<usize> {
        self.total().iter().enumerate().filter(|(_, c)| **c > 0).map(|(k, _)| k).collect()
    }

    /// Fraction of steps with `K_n > k`.
    pub fn fraction_above(&self, k: usize) -> f64 {
        let total = self.total();
        total.iter().skip(k + 1).sum::<usize>() as f64 / total.iter().sum::<usize>() as f64
    }

    /// Total-variation distance between the two halves.
    pub fn halves_tv(&self) -> f64 {
        total_variation(&self.first_half, &self.second_half)
    }
}

/// Histogram of `K_n` for `n = burn_in+1..=n_steps`, split into two halves;
/// writes `khist.csv` with columns `policy,k,first_half,second_half`.
pub fn cmd_khist(cfg: &ExperimentConfig) -> Result<Vec<KHistogram>> {
    if cfg.n_steps < cfg.burn_in + 2 {
        return Err(config_err(format!("{} steps leave nothing after a burn-in of {}", cfg.n_steps, cfg.burn_in)));
    }
    let spec = cfg.model_or(sv_default);
    let policies = cfg.policy_list()?;
    let traces = with_model!(&spec, |m| run_policies(m, cfg, &policies, false)?);
    let hists: Vec<KHistogram> = traces
        .iter()
        .map(|t| {
            let ks: Vec<usize> = t.diagnostics[cfg.burn_in + 1..].iter().map(|d| d.k_n).collect();
            let (a, b) = ks.split_at(ks.len() / 2);
            let count = |xs: &[usize]| {
                let mut c = vec![0usize; ks.iter().max().unwrap() + 1];
                xs.iter().for_each(|&k| c[k] += 1);
                c
            };
            KHistogram { policy: t.policy, first_half: count(a), second_half: count(b) }
        })
        .collect();
    if let Some(mut out) = output(cfg, "khist.csv")? {
        writeln!(out, "policy,k,first_half,second_half")?;
        for h in &hists {
            for k in 0..h.first_half.len() {
                writeln!(out, "{},{k},{},{}", h.policy, h.first_half[k], h.second_half[k])?;
            }
        }
    }
    Ok(hists)
}

// ---------------------------------------------------------------- ess-growth

/// Time-averaged ESS coefficient after merging to each depth `k = 0..=m`.
#[derive(Debug, Clone)]
pub struct EssGrowth {
    pub rule: AdaptationRule,
    pub tau: f64,
    pub mean_ess: Vec<f64>,
}

/// Drives one filter with the first configured policy and, at every step
/// after burn-in, runs the three adaptive rules with every depth probed on
/// that step's pre-weights, at the first configured threshold. Writes
/// `ess_growth.csv` with columns `rule,k,mean_ess`.
pub fn cmd_ess_growth(cfg: &ExperimentConfig) -> Result<Vec<EssGrowth>> {
    if cfg.n_steps <= cfg.burn_in + 1 {
        return Err(config_err("run shorter than burn-in"));
    }
    let tau = *cfg.taus.first().ok_or_else(|| config_err("ess-growth needs a threshold in `taus`"))?;
    let driver = cfg.policy_list()?[0].build(cfg.n_particles)?;
    let spec = cfg.model_or(sv_default);
    let sums = with_model!(&spec, |m| ess_growth_with(m, cfg, &driver, tau)?);
    let steps = (cfg.n_steps - cfg.burn_in - 1) as f64;
    let rows: Vec<EssGrowth> = RULES
        .iter()
        .zip(sums)
        .map(|(&rule, sum)| EssGrowth { rule, tau, mean_ess: sum.iter().map(|s| s / steps).collect() })
        .collect();
    if let Some(mut out) = output(cfg, "ess_growth.csv")? {
        writeln!(out, "rule,k,mean_ess")?;
        for g in &rows {
            for (k, e) in g.mean_ess.iter().enumerate() {
                writeln!(out, "{},{k},{e:.16e}", g.rule.name())?;
            }
        }
    }
    Ok(rows)
}

const RULES: [AdaptationRule; 3] = [AdaptationRule::Simple, AdaptationRule::Random, AdaptationRule::Greedy];

fn ess_growth_with<M>(model: &M, cfg: &ExperimentConfig, driver: &AdaptationPolicy, tau: f64) -> Result<Vec<Vec<f64>>>
where
    M: HmmModel<Observation = f64>,
{
    let record = cfg.observations(model, cfg.n_steps)?;
    let seed = cfg.replicate_seed(0);
    let mut rng = ChaCha8Rng::seed_from_u64(alpha_smc::split_seed(seed, u64::MAX));
    let mut sums: Vec<Vec<f64>> = Vec::new();
    let opts = RunOptions::new(cfg.n_particles, cfg.n_steps - 1, seed);
    run_with_observer(model, &record, driver, &opts, |sys, d| {
        if d.n <= cfg.burn_in {
            return Ok(());
        }
        let log_g = alpha_smc::model::log_potential_vector(model, sys.states(), &record.observations[d.n], d.n)?;
        let log_pre: Vec<f64> = sys.log_weights().iter().zip(&log_g).map(|(w, g)| w + g).collect();
        for (j, &rule) in RULES.iter().enumerate() {
            let out = adapt_select_with(&log_pre, rule, tau, true, &mut rng, &mut OpCounter::default())?;
            if sums.len() <= j {
                sums.push(vec![0.0; out.ess_trajectory.len()]);
            }
            sums[j].iter_mut().zip(&out.ess_trajectory).for_each(|(s, e)| *s += e);
        }
        Ok(())
    })?;
    Ok(sums)
}

// ---------------------------------------------------------------- mse

#[derive(Debug, Clone)]
pub struct MseRow {
    pub policy: PolicySpec,
    pub test_function: TestFunction,
    pub estimand: Estimand,
    pub mse: f64,
    pub se: f64,
    /// Time-averaged squared error of each replicate.
    pub per_replicate: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct MseReport {
    pub rows: Vec<MseRow>,
    pub replicates: usize,
}

impl MseReport {
    pub fn get(&self, policy: &PolicySpec, phi: TestFunction, estimand: Estimand) -> Option<&MseRow> {
        self.rows.iter().find(|r| r.policy == *policy && r.test_function == phi && r.estimand == estimand)
    }

    /// Mean and standard error of the replicate-wise difference `MSE(a) - MSE(b)`.
    /// Replicate `r` of every policy shares its seed, so the difference is paired.
    pub fn paired_difference(&self, a: &PolicySpec, b: &PolicySpec, phi: TestFunction, estimand: Estimand) -> Option<MeanSe> {
        let (ra, rb) = (self.get(a, phi, estimand)?, self.get(b, phi, estimand)?);
        let d: Vec<f64> = ra.per_replicate.iter().zip(&rb.per_replicate).map(|(x, y)| x - y).collect();
        Some(MeanSe::of(&d))
    }
}

fn reference_values<M>(model: &M, spec: &ModelSpec, record: &ObservationRecord, cfg: &ExperimentConfig) -> Result<Vec<Vec<Triple>>>
where
    M: HmmModel<Observation = f64>,
    M::State: StateValue,
{
    let t_len = cfg.n_steps;
    let phis = &cfg.test_functions;
    let seed = cfg.reference_seed();
    let mut bpf: Vec<Vec<Triple>> = Vec::with_capacity(t_len);
    let opts = RunOptions::new(cfg.reference_particles, t_len - 1, seed).lag_window(cfg.lag);
    let policy = AdaptationPolicy::Fixed(InteractionSpec::Full(cfg.reference_particles));
    run_with_observer(model, record, &policy, &opts, |sys, d| {
        bpf.push(if d.n >= cfg.burn_in {
            particle_estimates(model, sys, &record.observations[d.n], phis, cfg.lag, seed).map_err(core_error)?
        } else {
            Vec::new()
        });
        Ok(())
    })?;
    if cfg.reference == ReferenceKind::Auto {
        if let Some(exact) = exact_filter_predictor(spec, record, phis)? {
            for (n, row) in bpf.iter_mut().enumerate().skip(cfg.burn_in) {
                for (triple, &(f, p)) in row.iter_mut().zip(&exact[n]) {
                    triple[1] = f;
                    triple[2] = p;
                }
            }
        }
    }
    Ok(bpf)
}

fn core_error(e: HarnessError) -> alpha_smc::Error {
    match e {
        HarnessError::Core(e) => e,
        other => alpha_smc::Error::InvalidParameter(other.to_string()),
    }
}

fn mse_with<M>(model: &M, spec: &ModelSpec, cfg: &ExperimentConfig) -> Result<MseReport>
where
    M: HmmModel<Observation = f64>,
    M::State: StateValue,
{
    if cfg.burn_in < cfg.lag {
        return Err(config_err(format!("burn-in {} is shorter than the smoothing lag {}", cfg.burn_in, cfg.lag)));
    }
    if cfg.n_steps <= cfg.burn_in + 1 {
        return Err(config_err("run shorter than burn-in"));
    }
    let policies = cfg.policy_list()?;
    let record = cfg.observations(model, cfg.n_steps)?;
    let reference = reference_values(model, spec, &record, cfg)?;
    let phis = &cfg.test_functions;
    let n_eval = (cfg.n_steps - cfg.burn_in) as f64;

    let mut rows = Vec::new();
    for policy in policies {
        let built = policy.build(cfg.n_particles)?;
        // per replicate: squared error summed over time, indexed [phi][estimand]
        let per_rep: Vec<Vec<Triple>> = (0..cfg.replicates)
            .into_par_iter()
            .map(|r| {
                let seed = cfg.replicate_seed(r);
                let mut acc = vec![[0.0; 3]; phis.len()];
                let opts = RunOptions::new(cfg.n_particles, cfg.n_steps - 1, seed).lag_window(cfg.lag);
                run_with_observer(model, &record, &built, &opts, |sys, d| {
                    if d.n >= cfg.burn_in {
                        let est = particle_estimates(model, sys, &record.observations[d.n], phis, cfg.lag, seed)
                            .map_err(core_error)?;
                        for ((a, e), r) in acc.iter_mut().zip(&est).zip(&reference[d.n]) {
                            for k in 0..3 {
                                a[k] += (e[k] - r[k]).powi(2);
                            }
                        }
                    }
                    Ok(())
                })?;
                Ok(acc)
            })
            .collect::<Result<_>>()?;
        for (j, &phi) in phis.iter().enumerate() {
            for (k, estimand) in Estimand::ALL.into_iter().enumerate() {
                let values: Vec<f64> = per_rep.iter().map(|acc| acc[j][k] / n_eval).collect();
                let s = MeanSe::of(&values);
                rows.push(MseRow { policy, test_function: phi, estimand, mse: s.mean, se: s.se, per_replicate: values });
            }
        }
    }
    Ok(MseReport { rows, replicates: cfg.replicates })
}

/// Mean squared error of the lag smoother, filter and one-step predictor,
/// averaged over the post-burn-in steps and the replicates. References come
/// from exact oracles where available and from a large bootstrap filter
/// otherwise; writes `mse.csv` with columns
/// `policy,test_function,estimand,mse,se,replicates`.
pub fn cmd_mse(cfg: &ExperimentConfig) -> Result<MseReport> {
    let spec = cfg.model_or(sv_default);
    let report = with_model!(&spec, |m| mse_with(m, &spec, cfg)?);
    if let Some(mut out) = output(cfg, "mse.csv")? {
        writeln!(out, "policy,test_function,estimand,mse,se,replicates")?;
        for r in &report.rows {
            writeln!(
                out,
                "{},{},{},{:.16e},{:.16e},{}",
                r.policy,
                r.test_function.name(),
                r.estimand.name(),
                r.mse,
                r.se,
                report.replicates
            )?;
        }
    }
    Ok(report)
}

// ---------------------------------------------------------------- naive-demo

#[derive(Debug, Clone)]
pub struct NaiveDemo {
    pub block_size: usize,
    pub blocks: usize,
    pub step: usize,
    pub test_function: TestFunction,
    /// Exact `pi_n(phi)`.
    pub truth: f64,
    /// Error of the weighted estimate, over replicates.
    pub weighted_error: MeanSe,
    /// Error of the unweighted average of per-block estimates, over replicates.
    pub naive_error: MeanSe,
    /// `Z_n^N / Z_n`, over replicates; `Z_n^N` is the mean of the per-block estimates.
    pub z_ratio: MeanSe,
}

/// Compares the weighted estimator of a block-diagonal run with the plain
/// average of its independent per-block filters; writes `naive_demo.csv`
/// with one row per replicate (`replicate,weighted,naive,z_ratio`).
pub fn cmd_naive_demo(cfg: &ExperimentConfig) -> Result<NaiveDemo> {
    let ModelSpec::FiniteState(model) = cfg.model_or(finite_default) else {
        return Err(config_err("naive-demo needs a finite-state model"));
    };
    let (q, s, n) = (cfg.block_size, cfg.blocks, cfg.n_steps);
    let n_particles = q * s;
    let record = cfg.observations(&model, n.max(1))?;
    let laws = discrete_forward(&model, &record)?;
    let phi = cfg.test_functions[0];
    let truth = laws[n].expectation(|x| phi.eval(x as f64));
    let log_z = laws[n].log_marginal_likelihood;
    let policy = AdaptationPolicy::Fixed(make_block_diagonal(n_particles, q)?);

    let reps: Vec<(f64, f64, f64)> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| {
            let no_phi: [fn(&usize) -> f64; 0] = [];
            let trace = run(&model, &record, &policy, &RunOptions::new(n_particles, n, cfg.replicate_seed(r)), &no_phi)?;
            let sys = &trace.final_system;
            let weighted = sys.estimate_filter(|&x| phi.eval(x as f64));
            let naive = (0..s)
                .map(|b| {
                    let range = b * q..(b + 1) * q;
                    let lw = &sys.log_weights()[range.clone()];
                    let vals: Vec<f64> = sys.states()[range].iter().map(|&x| phi.eval(x as f64)).collect();
                    crate::stats::log_weighted_mean(lw, &vals)
                })
                .sum::<f64>()
                / s as f64;
            Ok((weighted, naive, (sys.estimate_log_z() - log_z).exp()))
        })
        .collect::<Result<_>>()?;

    if let Some(mut out) = output(cfg, "naive_demo.csv")? {
        writeln!(out, "replicate,weighted,naive,z_ratio")?;
        for (r, (w, nv, z)) in reps.iter().enumerate() {
            writeln!(out, "{r},{w:.16e},{nv:.16e},{z:.16e}")?;
        }
    }
    let err = |f: fn(&(f64, f64, f64)) -> f64| MeanSe::of(&reps.iter().map(|x| f(x) - truth).collect::<Vec<_>>());
    Ok(NaiveDemo {
        block_size: q,
        blocks: s,
        step: n,
        test_function: phi,
        truth,
        weighted_error: err(|x| x.0),
        naive_error: err(|x| x.1),
        z_ratio: MeanSe::of(&reps.iter().map(|x| x.2).collect::<Vec<_>>()),
    })
}

// ---------------------------------------------------------------- hub-demo

#[derive(Debug, Clone, PartialEq)]
pub struct StarRow {
    pub n_particles: usize,
    pub laziness: f64,
    pub gap: usize,
    pub max_beta: f64,
    pub hub_beta: f64,
}

#[derive(Debug, Clone)]
pub struct HubDemo {
    /// Every particle equalled the initial state of particle 0 after every step.
    pub collapsed: bool,
    pub steps_checked: usize,
    /// Largest `|pi_n^N(phi) - phi(zeta_0^0)|` seen.
    pub max_estimate_gap: f64,
    pub star: Vec<StarRow>,
    /// Largest `max_i beta^i - 1/N` over block-diagonal interactions of size `star_sizes`.
    pub blocks_beta_excess: f64,
}

/// Runs the to-hub interaction on a model whose particles never move and
/// checks that the system collapses onto the initial state of particle 0;
/// then tabulates `max_i beta_{0,gap}^i` for star-graph walks. Writes
/// `hub_star.csv` (`n_particles,laziness,gap,max_beta,hub_beta`).
pub fn cmd_hub_demo(cfg: &ExperimentConfig) -> Result<HubDemo> {
    let model = match cfg.model.clone() {
        None => default_delta_model(),
        Some(ModelSpec::LinearGaussian(m)) if m.a == 1.0 && m.state_noise_sd == 0.0 => m,
        Some(_) => return Err(config_err("hub-demo needs a linear-Gaussian model with a = 1 and no state noise")),
    };
    let n = cfg.n_particles;
    let record = cfg.observations(&model, cfg.n_steps)?;
    let policy = AdaptationPolicy::Fixed(InteractionSpec::Dense(make_to_hub(n)?));
    let mut origin = f64::NAN;
    let mut collapsed = true;
    let mut steps_checked = 0;
    let mut max_gap = 0.0f64;
    let opts = RunOptions::new(n, cfg.n_steps, cfg.replicate_seed(0));
    run_with_observer(&model, &record, &policy, &opts, |sys, d| {
        if d.n == 0 {
            origin = sys.states()[0];
        } else {
            steps_checked += 1;
            collapsed &= sys.states().iter().all(|&x| x == origin);
            max_gap = max_gap.max((sys.estimate_filter(|&x| x) - origin).abs());
        }
        Ok(())
    })?;

    let mut star = Vec::new();
    let mut blocks_excess = 0.0f64;
    for &size in &cfg.star_sizes {
        for &laziness in &cfg.star_laziness {
            let spec = InteractionSpec::Dense(make_star_walk(size, laziness)?);
            let mut beta = vec![1.0 / size as f64; size];
            for _ in 0..cfg.star_gap {
                beta = spec.left_apply(&beta);
            }
            let max_beta = beta.iter().copied().fold(0.0, f64::max);
            star.push(StarRow { n_particles: size, laziness, gap: cfg.star_gap, max_beta, hub_beta: beta[0] });
        }
        let q = if size % cfg.block_size == 0 { cfg.block_size } else { 1 };
        let blocks = vec![make_block_diagonal(size, q)?; cfg.star_gap];
        let betas = alpha_smc::interaction::beta_vectors(&blocks, cfg.star_gap)?;
        for row in betas {
            for b in row {
                blocks_excess = blocks_excess.max((b - 1.0 / size as f64).abs());
            }
        }
    }
    if let Some(mut out) = output(cfg, "hub_star.csv")? {
        writeln!(out, "n_particles,laziness,gap,max_beta,hub_beta")?;
        for r in &star {
            writeln!(out, "{},{},{},{:.16e},{:.16e}", r.n_particles, r.laziness, r.gap, r.max_beta, r.hub_beta)?;
        }
    }
    Ok(HubDemo { collapsed, steps_checked, max_estimate_gap: max_gap, star, blocks_beta_excess: blocks_excess })
}

// ---------------------------------------------------------------- unbiasedness

#[derive(Debug, Clone)]
pub struct UnbiasednessRow {
    pub policy: PolicySpec,
    /// `Z_n^N / Z_n` over replicates.
    pub ratio: MeanSe,
    /// Smallest ESS coefficient over every step `n >= 1` of every replicate.
    pub min_ess: f64,
    /// Steps whose ESS coefficient fell below the policy's threshold.
    pub violations: usize,
    pub steps_checked: usize,
}

fn exact_log_z(spec: &ModelSpec, record: &ObservationRecord, n: usize) -> Result<f64> {
    match spec {
        ModelSpec::FiniteState(m) => Ok(discrete_forward(m, record)?[n].log_marginal_likelihood),
        ModelSpec::LinearGaussian(m) => Ok(kalman_predictive(m, record)[n].log_marginal_likelihood),
        ModelSpec::StochasticVolatility(_) => Err(config_err("unbiasedness needs a model with an exact marginal likelihood")),
    }
}

fn unbiasedness_with<M>(model: &M, spec: &ModelSpec, cfg: &ExperimentConfig) -> Result<Vec<UnbiasednessRow>>
where
    M: HmmModel<Observation = f64>,
{
    let record = cfg.observations(model, cfg.n_steps.max(1))?;
    let log_z = exact_log_z(spec, &record, cfg.n_steps)?;
    cfg.policy_list()?
        .into_iter()
        .map(|policy| {
            let built = policy.build(cfg.n_particles)?;
            let tau = policy.threshold().unwrap_or(0.0);
            let reps: Vec<(f64, f64, usize)> = (0..cfg.replicates)
                .into_par_iter()
                .map(|r| {
                    let opts = RunOptions::new(cfg.n_particles, cfg.n_steps, cfg.replicate_seed(r));
                    let mut min_ess = f64::INFINITY;
                    let mut violations = 0;
                    let (_, _, sys) = run_with_observer(model, &record, &built, &opts, |_, d| {
                        if d.n >= 1 {
                            min_ess = min_ess.min(d.ess_coeff);
                            violations += (d.ess_coeff < tau) as usize;
                        }
                        Ok(())
                    })?;
                    Ok(((sys.estimate_log_z() - log_z).exp(), min_ess, violations))
                })
                .collect::<Result<_>>()?;
            Ok(UnbiasednessRow {
                policy,
                ratio: MeanSe::of(&reps.iter().map(|x| x.0).collect::<Vec<_>>()),
                min_ess: reps.iter().map(|x| x.1).fold(f64::INFINITY, f64::min),
                violations: reps.iter().map(|x| x.2).sum(),
                steps_checked: cfg.replicates * cfg.n_steps,
            })
        })
        .collect()
}

/// Mean of `Z_n^N / Z_n` over replicates for every configured policy, plus
/// the ESS floor actually achieved; writes `unbiasedness.csv` with columns
/// `policy,replicates,mean_ratio,se,z,min_ess,violations`.
pub fn cmd_unbiasedness(cfg: &ExperimentConfig) -> Result<Vec<UnbiasednessRow>> {
    let spec = cfg.model_or(finite_default);
    let rows = with_model!(&spec, |m| unbiasedness_with(m, &spec, cfg)?);
    if let Some(mut out) = output(cfg, "unbiasedness.csv")? {
        writeln!(out, "policy,replicates,mean_ratio,se,z,min_ess,violations")?;
        for r in &rows {
            writeln!(
                out,
                "{},{},{:.16e},{:.16e},{:.16e},{:.16e},{}",
                r.policy,
                cfg.replicates,
                r.ratio.mean,
                r.ratio.se,
                r.ratio.z(1.0),
                r.min_ess,
                r.violations
            )?;
        }
    }
    Ok(rows)
}

// ---------------------------------------------------------------- library-only studies

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmseAt {
    pub step: usize,
    pub rmse: f64,
    /// Delta-method standard error of the RMSE.
    pub se: f64,
}

/// RMSE over replicates of the particle predictor `pi_n^N(x)` against the
/// Kalman predictive mean, at each requested step.
pub fn predictor_rmse(
    model: &LinearGaussianModel,
    record: &ObservationRecord,
    policy: PolicySpec,
    n_particles: usize,
    steps: &[usize],
    replicates: usize,
    seed: u64,
) -> Result<Vec<RmseAt>> {
    let exact = kalman_predictive(model, record);
    let last = *steps.iter().max().ok_or_else(|| config_err("no steps requested"))?;
    let built = policy.build(n_particles)?;
    let phi = [|x: &f64| *x];
    let errors: Vec<Vec<f64>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let opts = RunOptions::new(n_particles, last, alpha_smc::split_seed(seed, r as u64));
            let trace = run(model, record, &built, &opts, &phi)?;
            Ok(steps.iter().map(|&n| (trace.estimates[n][0] - exact[n].mean).powi(2)).collect())
        })
        .collect::<Result<_>>()?;
    Ok(steps
        .iter()
        .enumerate()
        .map(|(j, &step)| {
            let sq = MeanSe::of(&errors.iter().map(|e| e[j]).collect::<Vec<_>>());
            let rmse = sq.mean.sqrt();
            RmseAt { step, rmse, se: sq.se / (2.0 * rmse) }
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct OpScaling {
    pub rule: AdaptationRule,
    pub sizes: Vec<usize>,
    pub ops_per_call: Vec<f64>,
    /// Fitted exponent of operations against `N` (Simple, Random) or `N log2 N` (Greedy).
    pub exponent: f64,
}

/// Counts the operations of one adaptive selection on i.i.d. log-normal
/// pre-weights (log-scale `sigma`), averaged over `draws` inputs per size,
/// and fits a log-log slope.
pub fn op_count_scaling(rule: AdaptationRule, sizes: &[usize], tau: f64, sigma: f64, draws: usize, seed: u64) -> Result<OpScaling> {
    let mut ops_per_call = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let mut rng = ChaCha8Rng::seed_from_u64(alpha_smc::split_seed(seed, n as u64));
        let mut ops = OpCounter::default();
        for _ in 0..draws {
            let log_pre: Vec<f64> = (0..n).map(|_| { let z: f64 = StandardNormal.sample(&mut rng); sigma * z }).collect();
            adapt_select_with(&log_pre, rule, tau, false, &mut rng, &mut ops)?;
        }
        ops_per_call.push(ops.total() as f64 / draws as f64);
    }
    let xs: Vec<f64> = sizes
        .iter()
        .map(|&n| {
            let n = n as f64;
            if rule == AdaptationRule::Greedy {
                (n * n.log2()).ln()
            } else {
                n.ln()
            }
        })
        .collect();
    let ys: Vec<f64> = ops_per_call.iter().map(|v| v.ln()).collect();
    Ok(OpScaling { rule, sizes: sizes.to_vec(), ops_per_call, exponent: ols_slope(&xs, &ys) })
}
