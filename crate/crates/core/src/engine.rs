//! The particle system and its update.
//!
//! Weights are held in log domain, normalised after every step so that they
//! sum to one; the running log marginal-likelihood estimate is carried
//! separately. Because the weight update is linear, renormalising commutes
//! with it and only weight ratios ever enter the estimators and the ESS.
//!
//! # Random stream discipline
//!
//! A run owns one ChaCha8 stream seeded from its seed. Within a step the
//! stream is consumed in a fixed order:
//!
//! 1. the policy's own draws (one shuffle per step for the Random rule),
//! 2. one uniform per particle, in particle-index order, for the ancestor
//!    draw (particles alone in their block consume nothing),
//! 3. the transition draws, in particle-index order.
//!
//! With [`RngLayout::PerBlock`] each block of a fixed partition owns a
//! separate stream and draws ancestors and then transitions for its own
//! particles, which makes every block evolve exactly as an independent
//! small filter seeded with the same sub-stream.

use std::collections::VecDeque;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adaptation::{AdaptationPolicy, OpCounter};
use crate::error::{Error, Result};
use crate::interaction::{BlockPartition, DenseStochasticMatrix, InteractionSpec};
use crate::model::{HmmModel, ObservationRecord};
use crate::numeric::{ess_coefficient, log_sum_exp};

/// SplitMix64 finaliser.
fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of sub-stream `index` of `master`: the `index + 1`-th output of a
/// SplitMix64 generator started at `master`.
pub fn split_seed(master: u64, index: u64) -> u64 {
    splitmix64(master.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)))
}

/// How a particle system draws its randomness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RngLayout {
    Single,
    /// One stream per contiguous block of the given size, seeded `split_seed(seed, block)`.
    /// Only fixed interactions with exactly these blocks may drive such a system.
    PerBlock(usize),
}

#[derive(Debug, Clone)]
enum Streams {
    Single(ChaCha8Rng),
    PerBlock { partition: BlockPartition, streams: Vec<ChaCha8Rng> },
}

/// Per-step summary of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDiagnostics {
    pub n: usize,
    pub ess_coeff: f64,
    pub n_eff: f64,
    /// Depth of the adaptive search; `log2` of the interaction degree for other policies.
    pub k_n: usize,
    pub degree: usize,
    pub log_z: f64,
    /// ESS coefficient at each depth visited by the adaptive search.
    pub ess_trajectory: Vec<f64>,
}

/// Everything needed to replay one step: the interaction, the potentials of
/// the parent particles, the ancestor of each child and the new weights.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub interaction: InteractionSpec,
    pub log_potentials: Vec<f64>,
    pub ancestors: Vec<usize>,
    pub log_weights_after: Vec<f64>,
}

/// Particle states with normalised log-weights, the log marginal-likelihood
/// estimate, a bounded lineage window and the run's random stream.
#[derive(Debug, Clone)]
pub struct ParticleSystem<S> {
    states: Vec<S>,
    log_weights: Vec<f64>,
    log_normalizer: f64,
    step: usize,
    ess: f64,
    /// Most recent first: (parent states, ancestor of each current particle).
    lineage: VecDeque<(Vec<S>, Vec<usize>)>,
    lag_window: usize,
    streams: Streams,
    ops: OpCounter,
}

impl<S: Clone + std::fmt::Debug> ParticleSystem<S> {
    /// Draws `n` initial particles i.i.d. from the model's initial law, all
    /// with weight one.
    pub fn init<M: HmmModel<State = S>>(model: &M, n: usize, lag_window: usize, seed: u64) -> Result<Self> {
        Self::init_with_layout(model, n, lag_window, seed, RngLayout::Single)
    }

    pub fn init_with_layout<M: HmmModel<State = S>>(model: &M, n: usize, lag_window: usize, seed: u64, layout: RngLayout) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("particle count must be at least 1".into()));
        }
        let (states, streams) = match layout {
            RngLayout::Single => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let states = (0..n).map(|_| model.sample_initial(&mut rng)).collect();
                (states, Streams::Single(rng))
            }
            RngLayout::PerBlock(q) => {
                let partition = BlockPartition::contiguous(n, q)?;
                let mut streams: Vec<ChaCha8Rng> =
                    (0..partition.block_count()).map(|b| ChaCha8Rng::seed_from_u64(split_seed(seed, b as u64))).collect();
                let mut states = Vec::with_capacity(n);
                for (b, rng) in streams.iter_mut().enumerate() {
                    states.extend(partition.block(b).iter().map(|_| model.sample_initial(rng)));
                }
                (states, Streams::PerBlock { partition, streams })
            }
        };
        Ok(ParticleSystem {
            states,
            log_weights: vec![-(n as f64).ln(); n],
            log_normalizer: 0.0,
            step: 0,
            ess: 1.0,
            lineage: VecDeque::with_capacity(lag_window),
            lag_window,
            streams,
            ops: OpCounter::default(),
        })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[S] {
        &self.states
    }

    /// Log-weights normalised to sum to one.
    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn ess_coeff(&self) -> f64 {
        self.ess
    }

    /// Cumulative operation counts of all steps so far.
    pub fn op_counts(&self) -> OpCounter {
        self.ops
    }

    /// Log of the marginal-likelihood estimate `Z_n^N = N^-1 sum_i W_n^i`.
    pub fn estimate_log_z(&self) -> f64 {
        self.log_normalizer
    }

    /// Number of past steps whose lineage is retained.
    pub fn lineage_depth(&self) -> usize {
        self.lineage.len()
    }

    /// Weighted average of `phi` over the current particles.
    pub fn estimate_filter(&self, phi: impl Fn(&S) -> f64) -> f64 {
        weighted_mean(&self.log_weights, self.states.iter().map(phi))
    }

    /// Index, `lag` steps back, of the ancestor of particle `i`.
    pub fn ancestor(&self, i: usize, lag: usize) -> Result<usize> {
        if lag > self.lineage.len() {
            return Err(Error::LagExceedsHistory { lag, available: self.lineage.len() });
        }
        Ok(self.lineage.iter().take(lag).fold(i, |idx, (_, anc)| anc[idx]))
    }

    /// State, `lag` steps back, on the lineage of particle `i`.
    pub fn lineage_state(&self, i: usize, lag: usize) -> Result<&S> {
        let a = self.ancestor(i, lag)?;
        Ok(if lag == 0 { &self.states[a] } else { &self.lineage[lag - 1].0[a] })
    }

    /// Fixed-lag smoother: current weights applied to `phi` of each particle's
    /// ancestor `lag` steps back. `lag = 0` is [`Self::estimate_filter`].
    pub fn lag_smoother_estimate(&self, lag: usize, phi: impl Fn(&S) -> f64) -> Result<f64> {
        self.lineage_estimate(lag, None, phi)
    }

    /// Lineage estimate with the current weights optionally multiplied by
    /// extra per-particle factors (given in log domain), e.g. the potentials
    /// of the next observation.
    pub fn lineage_estimate(&self, lag: usize, extra_log_weights: Option<&[f64]>, phi: impl Fn(&S) -> f64) -> Result<f64> {
        if lag > self.lineage.len() {
            return Err(Error::LagExceedsHistory { lag, available: self.lineage.len() });
        }
        let n = self.len();
        let mut index: Vec<usize> = (0..n).collect();
        for (_, anc) in self.lineage.iter().take(lag) {
            index.iter_mut().for_each(|i| *i = anc[*i]);
        }
        let pool = if lag == 0 { &self.states } else { &self.lineage[lag - 1].0 };
        let values = index.iter().map(|&a| phi(&pool[a]));
        Ok(match extra_log_weights {
            None => weighted_mean(&self.log_weights, values),
            Some(extra) => {
                let lw: Vec<f64> = self.log_weights.iter().zip(extra).map(|(a, b)| a + b).collect();
                weighted_mean(&lw, values)
            }
        })
    }

    /// One update: choose the interaction, update weights and `log Z`, sample ancestors and move.
    pub fn step<M: HmmModel<State = S>>(&mut self, model: &M, y: &M::Observation, policy: &AdaptationPolicy) -> Result<StepDiagnostics> {
        self.step_detailed(model, y, policy, false).map(|(d, _)| d)
    }

    /// [`Self::step`], optionally returning the full [`StepRecord`].
    pub fn step_detailed<M: HmmModel<State = S>>(
        &mut self,
        model: &M,
        y: &M::Observation,
        policy: &AdaptationPolicy,
        record: bool,
    ) -> Result<(StepDiagnostics, Option<StepRecord>)> {
        let n = self.len();
        let t = self.step;
        let next_step = t + 1;

        let mut log_potentials = Vec::with_capacity(n);
        for (index, x) in self.states.iter().enumerate() {
            let value = model.log_potential(x, y, t);
            if value.is_nan() || value == f64::INFINITY {
                return Err(Error::NonFinitePotential { index, state: format!("{x:?}"), value });
            }
            log_potentials.push(value);
        }
        let log_pre: Vec<f64> = self.log_weights.iter().zip(&log_potentials).map(|(w, g)| w + g).collect();
        self.ops.visits += 2 * n as u64;

        let choice = match &mut self.streams {
            Streams::Single(rng) => policy.select(next_step, &log_pre, rng, &mut self.ops)?,
            Streams::PerBlock { partition, streams } => match policy {
                // fixed interactions draw nothing
                AdaptationPolicy::Fixed(spec) if spec.partition().is_some_and(|p| *p == *partition) => {
                    policy.select(next_step, &log_pre, &mut streams[0], &mut self.ops)?
                }
                _ => {
                    return Err(Error::PolicyFamily(
                        "a per-block random layout needs the fixed interaction with the same blocks".into(),
                    ))
                }
            },
        };
        if choice.spec.size() != n {
            return Err(Error::PolicyFamily(format!("interaction of size {} for {n} particles", choice.spec.size())));
        }

        let (new_log_weights, samplers) = match choice.spec.partition() {
            Some(p) => {
                let (w, tables) = block_update(&log_pre, &p, next_step)?;
                (w, AncestorSampler::Blocks { partition: p.into_owned(), tables })
            }
            None => {
                let InteractionSpec::Dense(m) = &choice.spec else { unreachable!("only dense matrices lack a partition") };
                (dense_update(&log_pre, m, next_step)?, AncestorSampler::Dense(m))
            }
        };
        self.ops.visits += 2 * n as u64;

        let increment = log_sum_exp(&new_log_weights);
        if increment == f64::NEG_INFINITY {
            return Err(Error::AllWeightsZero);
        }
        let log_weights: Vec<f64> = new_log_weights.iter().map(|v| v - increment).collect();
        let ess = ess_coefficient(&log_weights)?;

        let mut ancestors = vec![0usize; n];
        let mut new_states: Vec<S> = Vec::with_capacity(n);
        match &mut self.streams {
            Streams::Single(rng) => {
                for (i, a) in ancestors.iter_mut().enumerate() {
                    *a = samplers.draw(i, &log_pre, rng);
                }
                new_states.extend(ancestors.iter().map(|&a| model.sample_transition(&self.states[a], rng)));
            }
            Streams::PerBlock { partition, streams } => {
                let mut moved: Vec<Option<S>> = vec![None; n];
                for (b, rng) in streams.iter_mut().enumerate() {
                    let block = partition.block(b);
                    for &i in block {
                        ancestors[i] = samplers.draw(i, &log_pre, rng);
                    }
                    for &i in block {
                        moved[i] = Some(model.sample_transition(&self.states[ancestors[i]], rng));
                    }
                }
                new_states.extend(moved.into_iter().map(|s| s.expect("every block is visited")));
            }
        }
        self.ops.visits += 2 * n as u64;

        let parents = std::mem::replace(&mut self.states, new_states);
        if self.lag_window > 0 {
            if self.lineage.len() == self.lag_window {
                self.lineage.pop_back();
            }
            self.lineage.push_front((parents, ancestors.clone()));
        }
        self.log_weights = log_weights;
        self.log_normalizer += increment;
        self.step = next_step;
        self.ess = ess;

        let diagnostics = StepDiagnostics {
            n: next_step,
            ess_coeff: ess,
            n_eff: ess * n as f64,
            k_n: choice.k,
            degree: choice.spec.degree(),
            log_z: self.log_normalizer,
            ess_trajectory: choice.ess_trajectory,
        };
        let record = record.then(|| StepRecord {
            interaction: choice.spec,
            log_potentials,
            ancestors,
            log_weights_after: self.log_weights.clone(),
        });
        Ok((diagnostics, record))
    }

    pub fn initial_diagnostics(&self) -> StepDiagnostics {
        StepDiagnostics {
            n: self.step,
            ess_coeff: self.ess,
            n_eff: self.ess * self.len() as f64,
            k_n: 0,
            degree: 1,
            log_z: self.log_normalizer,
            ess_trajectory: Vec::new(),
        }
    }
}

/// One application of the weight recursion: given pre-weights
/// `log(W_{n-1}^j g_{n-1}^j)`, returns `log W_n^i = log sum_j alpha^{ij} W_{n-1}^j g_{n-1}^j`.
pub fn propagate_log_weights(log_pre: &[f64], spec: &InteractionSpec) -> Result<Vec<f64>> {
    if spec.size() != log_pre.len() {
        return Err(Error::PolicyFamily(format!("interaction of size {} for {} particles", spec.size(), log_pre.len())));
    }
    match (spec.partition(), spec) {
        (Some(p), _) => block_update(log_pre, &p, 0).map(|(w, _)| w),
        (None, InteractionSpec::Dense(m)) => dense_update(log_pre, m, 0),
        (None, _) => unreachable!("only dense matrices lack a partition"),
    }
}

fn weighted_mean(log_weights: &[f64], values: impl Iterator<Item = f64>) -> f64 {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut num = 0.0;
    let mut den = 0.0;
    for (lw, v) in log_weights.iter().zip(values) {
        let w = (lw - max).exp();
        if w > 0.0 {
            num += w * v;
            den += w;
        }
    }
    num / den
}

/// Weight update for a B-matrix: every particle of a block gets the block's
/// mean pre-weight. Also builds one alias table per block of size > 1.
fn block_update(log_pre: &[f64], partition: &BlockPartition, step: usize) -> Result<(Vec<f64>, Vec<AliasTable>)> {
    let d = partition.block_size();
    let log_d = (d as f64).ln();
    let mut out = vec![0.0; log_pre.len()];
    let mut tables = Vec::new();
    let mut scratch = Vec::with_capacity(d);
    for (b, block) in partition.blocks().enumerate() {
        scratch.clear();
        scratch.extend(block.iter().map(|&j| log_pre[j]));
        let lse = log_sum_exp(&scratch);
        if lse == f64::NEG_INFINITY {
            return Err(Error::ZeroBlockWeight { step, block: b });
        }
        for &i in block {
            out[i] = lse - log_d;
        }
        if d > 1 {
            tables.push(AliasTable::new(block, &scratch, lse));
        }
    }
    Ok((out, tables))
}

/// Weight update for a dense matrix: `W_i = sum_j alpha_ij W_j g_j`.
fn dense_update(log_pre: &[f64], m: &DenseStochasticMatrix, step: usize) -> Result<Vec<f64>> {
    let max = log_pre.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::AllWeightsZero);
    }
    let shifted: Vec<f64> = log_pre.iter().map(|u| (u - max).exp()).collect();
    (0..m.size())
        .map(|i| {
            let s: f64 = m.row(i).iter().zip(&shifted).map(|(a, w)| a * w).sum();
            if s > 0.0 {
                Ok(s.ln() + max)
            } else {
                Err(Error::ZeroBlockWeight { step, block: i })
            }
        })
        .collect()
}

/// Walker alias table over the members of one block: O(d) to build, one
/// uniform per draw.
#[derive(Debug, Clone)]
struct AliasTable {
    members: Vec<usize>,
    accept: Vec<f64>,
    alias: Vec<usize>,
}

impl AliasTable {
    fn new(members: &[usize], log_w: &[f64], lse: f64) -> Self {
        let d = members.len();
        let mut scaled: Vec<f64> = log_w.iter().map(|lw| (lw - lse).exp() * d as f64).collect();
        let mut accept = vec![1.0; d];
        let mut alias: Vec<usize> = (0..d).collect();
        let (mut small, mut large): (Vec<usize>, Vec<usize>) = (0..d).partition(|&k| scaled[k] < 1.0);
        while let (Some(s), Some(&l)) = (small.pop(), large.last()) {
            accept[s] = scaled[s];
            alias[s] = l;
            scaled[l] -= 1.0 - scaled[s];
            if scaled[l] < 1.0 {
                large.pop();
                small.push(l);
            }
        }
        // leftovers carry probability one up to rounding
        AliasTable { members: members.to_vec(), accept, alias: alias.into_iter().map(|k| members[k]).collect() }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let d = self.members.len();
        let x = rng.random::<f64>() * d as f64;
        let k = (x as usize).min(d - 1);
        if x - (k as f64) < self.accept[k] {
            self.members[k]
        } else {
            self.alias[k]
        }
    }
}

enum AncestorSampler<'a> {
    Blocks { partition: BlockPartition, tables: Vec<AliasTable> },
    Dense(&'a DenseStochasticMatrix),
}

impl AncestorSampler<'_> {
    fn draw<R: Rng + ?Sized>(&self, i: usize, log_pre: &[f64], rng: &mut R) -> usize {
        match self {
            AncestorSampler::Blocks { partition, tables } => {
                if partition.block_size() == 1 {
                    i
                } else {
                    tables[partition.block_of(i)].draw(rng)
                }
            }
            AncestorSampler::Dense(m) => {
                let row = m.row(i);
                let max = row
                    .iter()
                    .zip(log_pre)
                    .filter(|(a, _)| **a > 0.0)
                    .map(|(_, u)| *u)
                    .fold(f64::NEG_INFINITY, f64::max);
                let w: Vec<f64> = row.iter().zip(log_pre).map(|(a, u)| if *a > 0.0 { a * (u - max).exp() } else { 0.0 }).collect();
                let total: f64 = w.iter().sum();
                let target = rng.random::<f64>() * total;
                let mut acc = 0.0;
                for (j, wj) in w.iter().enumerate() {
                    acc += wj;
                    if target < acc {
                        return j;
                    }
                }
                w.iter().rposition(|&v| v > 0.0).unwrap_or(i)
            }
        }
    }
}

/// Settings of a complete run.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub n_particles: usize,
    pub n_steps: usize,
    pub seed: u64,
    /// Number of past steps of lineage to retain (for lag smoothing).
    pub lag_window: usize,
    /// Keep a [`StepRecord`] for every step.
    pub record_particles: bool,
    pub layout: RngLayout,
}

impl RunOptions {
    pub fn new(n_particles: usize, n_steps: usize, seed: u64) -> Self {
        RunOptions { n_particles, n_steps, seed, lag_window: 0, record_particles: false, layout: RngLayout::Single }
    }

    pub fn lag_window(mut self, lag_window: usize) -> Self {
        self.lag_window = lag_window;
        self
    }

    pub fn record_particles(mut self, record: bool) -> Self {
        self.record_particles = record;
        self
    }

    pub fn layout(mut self, layout: RngLayout) -> Self {
        self.layout = layout;
        self
    }
}

/// Output of [`run`]: one diagnostics row per time index `0..=n_steps`,
/// the matching estimates of the registered test functions, optional
/// per-step records and the final system.
#[derive(Debug, Clone)]
pub struct RunTrace<S> {
    pub diagnostics: Vec<StepDiagnostics>,
    pub estimates: Vec<Vec<f64>>,
    pub particle_records: Option<Vec<StepRecord>>,
    pub final_system: ParticleSystem<S>,
}

impl<S> RunTrace<S> {
    pub fn steps(&self) -> usize {
        self.diagnostics.len() - 1
    }

    /// CSV with header `n,ess_coeff,n_eff,k_n,degree,logZ[,<phi names>]`,
    /// reals printed with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W, phi_names: &[&str]) -> Result<()> {
        write!(out, "n,ess_coeff,n_eff,k_n,degree,logZ")?;
        for name in phi_names {
            write!(out, ",{name}")?;
        }
        writeln!(out)?;
        for (d, est) in self.diagnostics.iter().zip(&self.estimates) {
            write!(out, "{},{:.16e},{:.16e},{},{},{:.16e}", d.n, d.ess_coeff, d.n_eff, d.k_n, d.degree, d.log_z)?;
            for v in est {
                write!(out, ",{v:.16e}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Runs `n_steps` updates, calling `observer` after initialisation and after
/// every step.
pub fn run_with_observer<M, F>(
    model: &M,
    record: &ObservationRecord<M::Observation>,
    policy: &AdaptationPolicy,
    options: &RunOptions,
    mut observer: F,
) -> Result<(Vec<StepDiagnostics>, Option<Vec<StepRecord>>, ParticleSystem<M::State>)>
where
    M: HmmModel,
    F: FnMut(&ParticleSystem<M::State>, &StepDiagnostics) -> Result<()>,
{
    if options.n_steps > record.len() {
        return Err(Error::InvalidParameter(format!("{} steps requested, record holds {}", options.n_steps, record.len())));
    }
    record.observations[..options.n_steps]
        .iter()
        .enumerate()
        .try_for_each(|(t, y)| model.validate_observation(y, t))?;
    policy.validate(options.n_particles)?;

    let mut system = ParticleSystem::init_with_layout(model, options.n_particles, options.lag_window, options.seed, options.layout)?;
    let mut diagnostics = Vec::with_capacity(options.n_steps + 1);
    let first = system.initial_diagnostics();
    observer(&system, &first)?;
    diagnostics.push(first);
    let mut records = options.record_particles.then(|| Vec::with_capacity(options.n_steps));
    for y in &record.observations[..options.n_steps] {
        let (d, r) = system.step_detailed(model, y, policy, options.record_particles)?;
        observer(&system, &d)?;
        diagnostics.push(d);
        if let (Some(records), Some(r)) = (records.as_mut(), r) {
            records.push(r);
        }
    }
    Ok((diagnostics, records, system))
}

/// Runs the filter and evaluates each test function at every time index.
pub fn run<M, F>(
    model: &M,
    record: &ObservationRecord<M::Observation>,
    policy: &AdaptationPolicy,
    options: &RunOptions,
    test_functions: &[F],
) -> Result<RunTrace<M::State>>
where
    M: HmmModel,
    F: Fn(&M::State) -> f64,
{
    let mut estimates = Vec::with_capacity(options.n_steps + 1);
    let (diagnostics, particle_records, final_system) = run_with_observer(model, record, policy, options, |sys, _| {
        estimates.push(test_functions.iter().map(|phi| sys.estimate_filter(phi)).collect());
        Ok(())
    })?;
    Ok(RunTrace { diagnostics, estimates, particle_records, final_system })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Emission, FiniteStateModel, LinearGaussianModel};
    use approx::assert_abs_diff_eq;

    fn lg() -> LinearGaussianModel {
        LinearGaussianModel::new(0.9, 1.0, 1.0, 1.0, 0.0, 1.0).unwrap()
    }

    /// Potentials are read from a table indexed by (time, particle state).
    struct TableModel {
        log_g: Vec<Vec<f64>>,
    }

    impl HmmModel for TableModel {
        type State = usize;
        type Observation = usize;
        fn tag(&self) -> &'static str {
            "table"
        }
        fn state_kind(&self) -> crate::model::StateKind {
            crate::model::StateKind::FiniteLabel
        }
        fn sample_initial<R: Rng + ?Sized>(&self, _: &mut R) -> usize {
            unreachable!()
        }
        fn sample_transition<R: Rng + ?Sized>(&self, x: &usize, _: &mut R) -> usize {
            *x
        }
        fn sample_observation<R: Rng + ?Sized>(&self, _: &usize, _: &mut R) -> usize {
            0
        }
        fn log_potential(&self, x: &usize, t: &usize, _: usize) -> f64 {
            self.log_g[*t][*x]
        }
    }

    fn system_with_states(states: Vec<usize>) -> ParticleSystem<usize> {
        let n = states.len();
        ParticleSystem {
            states,
            log_weights: vec![-(n as f64).ln(); n],
            log_normalizer: 0.0,
            step: 0,
            ess: 1.0,
            lineage: VecDeque::new(),
            lag_window: 4,
            streams: Streams::Single(ChaCha8Rng::seed_from_u64(0)),
            ops: OpCounter::default(),
        }
    }

    #[test]
    fn init_contract() {
        let s = ParticleSystem::init(&lg(), 1, 0, 7).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.estimate_log_z(), 0.0);
        assert_eq!(s.ess_coeff(), 1.0);
        let a = ParticleSystem::init(&lg(), 16, 0, 7).unwrap();
        let b = ParticleSystem::init(&lg(), 16, 0, 7).unwrap();
        assert_eq!(a.states(), b.states());
        assert!(ParticleSystem::init(&lg(), 0, 0, 7).is_err());
    }

    #[test]
    fn swap_matrix_swaps_weights() {
        let (g1, g2) = (0.3f64, 1.7f64);
        let model = TableModel { log_g: vec![vec![g1.ln(), g2.ln()]] };
        let mut sys = system_with_states(vec![0, 1]);
        let swap = DenseStochasticMatrix::new(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let policy = AdaptationPolicy::DenseSequence(vec![swap]);
        sys.step(&model, &0, &policy).unwrap();
        // W_1 = (g2, g1), relative to the mean of W_0 = 1
        let w: Vec<f64> = sys.log_weights().iter().map(|lw| lw.exp()).collect();
        assert_abs_diff_eq!(w[0], g2 / (g1 + g2), epsilon = 1e-15);
        assert_abs_diff_eq!(w[1], g1 / (g1 + g2), epsilon = 1e-15);
        assert_abs_diff_eq!(sys.estimate_log_z(), ((g1 + g2) / 2.0).ln(), epsilon = 1e-15);
        // each particle descends from the other
        assert_eq!(sys.states(), &[1, 0]);
    }

    #[test]
    fn sis_with_constant_potential() {
        let c = 2.5f64;
        let model = TableModel { log_g: vec![vec![c.ln(); 3]] };
        let mut sys = system_with_states(vec![0, 1, 2]);
        sys.step(&model, &0, &AdaptationPolicy::Fixed(InteractionSpec::Identity(3))).unwrap();
        assert_abs_diff_eq!(sys.estimate_log_z(), c.ln(), epsilon = 1e-15);
        assert_eq!(sys.ancestor(1, 1).unwrap(), 1);
    }

    #[test]
    fn filter_estimate_examples() {
        let s = system_with_states(vec![3, 5, 7, 9]);
        assert_eq!(s.estimate_filter(|_| 1.0), 1.0);
        assert_eq!(s.estimate_filter(|_| 0.25), 0.25);
        assert_abs_diff_eq!(s.estimate_filter(|&x| if x == 3 { 1.0 } else { 0.0 }), 0.25, epsilon = 1e-15);
        assert_eq!(s.lag_smoother_estimate(0, |&x| x as f64).unwrap(), s.estimate_filter(|&x| x as f64));
        assert!(matches!(s.lag_smoother_estimate(1, |_| 0.0), Err(Error::LagExceedsHistory { lag: 1, available: 0 })));
    }

    #[test]
    fn hand_traced_lineage() {
        // two particles, two steps, ancestors forced by a swap then a to-hub matrix
        let model = TableModel { log_g: vec![vec![0.0, 0.0]; 2] };
        let mut sys = system_with_states(vec![0, 1]);
        let hub = DenseStochasticMatrix::new(vec![vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let swap = DenseStochasticMatrix::new(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let policy = AdaptationPolicy::DenseSequence(vec![swap, hub]);
        sys.step(&model, &0, &policy).unwrap();
        assert_eq!(sys.states(), &[1, 0]);
        sys.step(&model, &1, &policy).unwrap();
        assert_eq!(sys.states(), &[1, 1]);
        // both particles trace back to particle 0 at step 1, which came from particle 1 at step 0
        assert_eq!(sys.ancestor(1, 1).unwrap(), 0);
        assert_eq!(sys.ancestor(1, 2).unwrap(), 1);
        assert_eq!(*sys.lineage_state(0, 2).unwrap(), 1);
        assert_eq!(*sys.lineage_state(0, 1).unwrap(), 1);
        assert_eq!(sys.lag_smoother_estimate(2, |&x| x as f64).unwrap(), 1.0);
    }

    #[test]
    fn zero_block_weight_is_reported() {
        let ninf = f64::NEG_INFINITY;
        let model = TableModel { log_g: vec![vec![0.0, 0.0, ninf, ninf]] };
        let mut sys = system_with_states(vec![0, 1, 2, 3]);
        let policy = AdaptationPolicy::Fixed(crate::interaction::make_block_diagonal(4, 2).unwrap());
        let err = sys.step(&model, &0, &policy).unwrap_err();
        assert_eq!(err, Error::ZeroBlockWeight { step: 1, block: 1 });
        assert!(err.is_numerical());
    }

    #[test]
    fn nan_potential_is_reported() {
        let model = TableModel { log_g: vec![vec![0.0, f64::NAN]] };
        let mut sys = system_with_states(vec![0, 1]);
        let err = sys.step(&model, &0, &AdaptationPolicy::Fixed(InteractionSpec::Full(2))).unwrap_err();
        assert!(matches!(err, Error::NonFinitePotential { index: 1, .. }));
    }

    #[test]
    fn wrong_sized_policy_is_rejected() {
        let model = TableModel { log_g: vec![vec![0.0; 4]] };
        let mut sys = system_with_states(vec![0, 1, 2, 3]);
        let err = sys.step(&model, &0, &AdaptationPolicy::Fixed(InteractionSpec::Full(8))).unwrap_err();
        assert!(matches!(err, Error::PolicyFamily(_)));
        let err = sys.step(&model, &0, &AdaptationPolicy::DenseSequence(vec![])).unwrap_err();
        assert!(matches!(err, Error::PolicyFamily(_)));
    }

    #[test]
    fn alias_table_matches_target_law() {
        let members = [3usize, 8, 1, 6];
        let w = [0.1f64, 0.4, 0.3, 0.2];
        let lw: Vec<f64> = w.iter().map(|v| v.ln()).collect();
        let table = AliasTable::new(&members, &lw, log_sum_exp(&lw));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let draws = 200_000;
        let mut counts = [0usize; 9];
        for _ in 0..draws {
            counts[table.draw(&mut rng)] += 1;
        }
        for (m, p) in members.iter().zip(w) {
            let freq = counts[*m] as f64 / draws as f64;
            let se = (p * (1.0 - p) / draws as f64).sqrt();
            assert!((freq - p).abs() < 5.0 * se, "member {m}: {freq} vs {p}");
        }
    }

    #[test]
    fn split_seeds_differ() {
        let seeds: Vec<u64> = (0..100).map(|i| split_seed(42, i)).collect();
        let mut uniq = seeds.clone();
        uniq.sort();
        uniq.dedup();
        assert_eq!(uniq.len(), seeds.len());
        assert_ne!(split_seed(1, 0), split_seed(2, 0));
    }

    #[test]
    fn zero_step_run_and_csv() {
        let model = FiniteStateModel::new(
            vec![0.5, 0.5],
            vec![vec![0.9, 0.1], vec![0.1, 0.9]],
            Emission::Gaussian { means: vec![-1.0, 1.0], sd: 1.0 },
        )
        .unwrap();
        let (_, rec) = crate::model::simulate_data(&model, 5, 1).unwrap();
        let policy = AdaptationPolicy::Fixed(InteractionSpec::Full(8));
        let phi = [|s: &usize| *s as f64];
        let trace = run(&model, &rec, &policy, &RunOptions::new(8, 0, 3), &phi).unwrap();
        assert_eq!(trace.steps(), 0);
        assert_eq!(trace.diagnostics.len(), 1);
        let trace = run(&model, &rec, &policy, &RunOptions::new(8, 5, 3), &phi).unwrap();
        let mut buf = Vec::new();
        trace.write_csv(&mut buf, &["x"]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("n,ess_coeff,n_eff,k_n,degree,logZ,x\n"));
        assert_eq!(text.lines().count(), 7);
        assert!(run(&model, &rec, &policy, &RunOptions::new(8, 6, 3), &phi).is_err());
    }
}
