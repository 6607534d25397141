//! Rules that choose the interaction matrix at each step from the particle
//! history: fixed matrices, the ESS-threshold resampling rule, and the
//! adaptive B-matrix search driven by the Simple, Random and Greedy pairing
//! rules.
//!
//! Every rule sees only the log pre-weights `u_i = log(W_{n-1}^i g_{n-1}(x_{n-1}^i))`
//! (and, for Random, the run's random stream), so the chosen matrix is a
//! function of the history up to `n-1`.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::engine::RunTrace;
use crate::error::{Error, Result};
use crate::interaction::{make_block_diagonal, BlockPartition, DenseStochasticMatrix, InteractionSpec};
use crate::numeric::{ess_coefficient, log_sum_exp};

/// How the adaptive search orders the current blocks before merging them in pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AdaptationRule {
    /// Adjacent blocks are merged.
    Simple,
    /// Blocks are shuffled once at the first level, adjacent afterwards.
    Random,
    /// Largest weight is paired with smallest, second largest with second smallest, ...
    Greedy,
}

impl AdaptationRule {
    pub fn name(self) -> &'static str {
        match self {
            AdaptationRule::Simple => "simple",
            AdaptationRule::Random => "random",
            AdaptationRule::Greedy => "greedy",
        }
    }
}

/// Tallies the elementary work done while choosing and applying an interaction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCounter {
    /// Weight comparisons made while sorting.
    pub comparisons: u64,
    /// Pairwise block merges.
    pub merges: u64,
    /// Per-element visits in linear passes (weight scans, ESS sums, sampling).
    pub visits: u64,
}

impl OpCounter {
    pub fn total(&self) -> u64 {
        self.comparisons + self.merges + self.visits
    }
}

/// The chosen interaction together with the search depth and the ESS
/// coefficient seen at each visited depth.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptationOutput {
    pub spec: InteractionSpec,
    pub k: usize,
    pub ess_trajectory: Vec<f64>,
}

/// Rule applied at every step to select the interaction matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum AdaptationPolicy {
    Fixed(InteractionSpec),
    /// Full interaction when the ESS coefficient of the pre-weights is strictly below the threshold.
    Arpf { threshold: f64 },
    AdaptiveBMatrix { rule: AdaptationRule, threshold: f64, probe_all: bool },
    /// Matrix `p` is used at step `p + 1`.
    DenseSequence(Vec<DenseStochasticMatrix>),
}

fn check_threshold(tau: f64) -> Result<()> {
    if tau > 0.0 && tau <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("threshold {tau} outside (0, 1]")))
    }
}

fn depth_of(degree: usize) -> usize {
    if degree.is_power_of_two() {
        degree.trailing_zeros() as usize
    } else {
        (usize::BITS - degree.leading_zeros()) as usize
    }
}

impl AdaptationPolicy {
    pub fn arpf(threshold: f64) -> Result<Self> {
        check_threshold(threshold)?;
        Ok(AdaptationPolicy::Arpf { threshold })
    }

    pub fn adaptive(rule: AdaptationRule, threshold: f64) -> Result<Self> {
        check_threshold(threshold)?;
        Ok(AdaptationPolicy::AdaptiveBMatrix { rule, threshold, probe_all: false })
    }

    /// Same policy with the "evaluate E at every depth" diagnostic switched on.
    pub fn with_probe_all(self) -> Self {
        match self {
            AdaptationPolicy::AdaptiveBMatrix { rule, threshold, .. } => {
                AdaptationPolicy::AdaptiveBMatrix { rule, threshold, probe_all: true }
            }
            other => other,
        }
    }

    /// Checks that the policy can drive a system of `n` particles.
    pub fn validate(&self, n: usize) -> Result<()> {
        match self {
            AdaptationPolicy::Fixed(spec) if spec.size() != n => {
                Err(Error::PolicyFamily(format!("fixed interaction has size {}, system has {n} particles", spec.size())))
            }
            AdaptationPolicy::Arpf { threshold } => check_threshold(*threshold),
            AdaptationPolicy::AdaptiveBMatrix { threshold, .. } => {
                check_threshold(*threshold)?;
                if n.is_power_of_two() {
                    Ok(())
                } else {
                    Err(Error::NotPowerOfTwo(n))
                }
            }
            AdaptationPolicy::DenseSequence(ms) => match ms.iter().find(|m| m.size() != n) {
                Some(m) => Err(Error::PolicyFamily(format!("dense matrix of size {} for {n} particles", m.size()))),
                None => Ok(()),
            },
            _ => Ok(()),
        }
    }

    /// Chooses the interaction used to move from step `step - 1` to `step`.
    pub fn select<R: Rng + ?Sized>(&self, step: usize, log_pre: &[f64], rng: &mut R, ops: &mut OpCounter) -> Result<AdaptationOutput> {
        let n = log_pre.len();
        match self {
            AdaptationPolicy::Fixed(spec) => {
                if spec.size() != n {
                    return Err(Error::PolicyFamily(format!("fixed interaction has size {}, system has {n} particles", spec.size())));
                }
                Ok(AdaptationOutput { spec: spec.clone(), k: depth_of(spec.degree()), ess_trajectory: Vec::new() })
            }
            AdaptationPolicy::Arpf { threshold } => {
                let criterion = ess_coefficient(log_pre)?;
                ops.visits += n as u64;
                let spec = if criterion < *threshold { InteractionSpec::Full(n) } else { InteractionSpec::Identity(n) };
                Ok(AdaptationOutput { k: depth_of(spec.degree()), spec, ess_trajectory: vec![criterion] })
            }
            AdaptationPolicy::AdaptiveBMatrix { rule, threshold, probe_all } => {
                adapt_select_with(log_pre, *rule, *threshold, *probe_all, rng, ops)
            }
            AdaptationPolicy::DenseSequence(ms) => {
                let m = ms.get(step - 1).ok_or_else(|| {
                    Error::PolicyFamily(format!("dense sequence has {} matrices, step {step} needs one more", ms.len()))
                })?;
                if m.size() != n {
                    return Err(Error::PolicyFamily(format!("dense matrix of size {} for {n} particles", m.size())));
                }
                let spec = InteractionSpec::Dense(m.clone());
                Ok(AdaptationOutput { k: depth_of(spec.degree()), spec, ess_trajectory: Vec::new() })
            }
        }
    }
}

/// ESS-threshold resampling rule: `Full` if the ESS coefficient of the
/// pre-weights is strictly below `tau`, `Identity` otherwise.
pub fn arpf_select(log_pre: &[f64], tau: f64) -> Result<InteractionSpec> {
    check_threshold(tau)?;
    let criterion = ess_coefficient(log_pre)?;
    Ok(if criterion < tau { InteractionSpec::Full(log_pre.len()) } else { InteractionSpec::Identity(log_pre.len()) })
}

/// Adaptive B-matrix search: merge blocks pairwise, in the order chosen by
/// `rule`, until the ESS coefficient reaches `tau`.
pub fn adapt_select<R: Rng + ?Sized>(log_pre: &[f64], rule: AdaptationRule, tau: f64, rng: &mut R) -> Result<AdaptationOutput> {
    adapt_select_with(log_pre, rule, tau, false, rng, &mut OpCounter::default())
}

/// [`adapt_select`] with the probe-all-depths switch and operation counting.
///
/// With `probe_all` the merging continues to a single block so that the
/// trajectory covers every depth `0..=m`; the returned depth and partition
/// are still those of the first depth reaching `tau`.
pub fn adapt_select_with<R: Rng + ?Sized>(
    log_pre: &[f64],
    rule: AdaptationRule,
    tau: f64,
    probe_all: bool,
    rng: &mut R,
    ops: &mut OpCounter,
) -> Result<AdaptationOutput> {
    check_threshold(tau)?;
    let n = log_pre.len();
    if !n.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(n));
    }
    let m = n.trailing_zeros() as usize;
    let max = log_pre.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > f64::NEG_INFINITY) {
        return Err(Error::AllWeightsZero);
    }

    // Level-0 weights, shifted so the largest is 1.
    let base: Vec<f64> = log_pre.iter().map(|&u| (u - max).exp()).collect();
    let mean0 = base.iter().sum::<f64>() / n as f64;
    ops.visits += n as u64;

    let permutation = if rule == AdaptationRule::Random {
        let mut p: Vec<usize> = (0..n).collect();
        p.shuffle(rng);
        ops.visits += n as u64;
        Some(p)
    } else {
        None
    };

    let ess_at = |level: &[f64], k: usize, ops: &mut OpCounter| -> f64 {
        if k == m {
            return 1.0;
        }
        ops.visits += level.len() as u64;
        let sq: f64 = level.iter().map(|w| w * w).sum();
        (mean0 * mean0 / ((1u64 << k) as f64 * sq / n as f64)).min(1.0)
    };

    let mut level = base.clone();
    // children[k][i] = the two level-k blocks merged into level-(k+1) block i
    let mut children: Vec<Vec<(usize, usize)>> = Vec::new();
    let mut k = 0;
    let mut ess = ess_at(&level, 0, ops);
    let mut trajectory = vec![ess];
    let mut chosen = None;

    loop {
        if chosen.is_none() && (ess >= tau || k == m) {
            chosen = Some(k);
            if !probe_all {
                break;
            }
        }
        if k == m {
            break;
        }
        let order: Vec<usize> = match (rule, k, &permutation) {
            (AdaptationRule::Random, 0, Some(p)) => p.clone(),
            (AdaptationRule::Greedy, _, _) => greedy_order_counted(&level, ops),
            _ => (0..level.len()).collect(),
        };
        let half = level.len() / 2;
        let mut next = Vec::with_capacity(half);
        let mut pairs = Vec::with_capacity(half);
        for i in 0..half {
            let (a, b) = (order[2 * i], order[2 * i + 1]);
            next.push(0.5 * level[a] + 0.5 * level[b]);
            pairs.push((a, b));
        }
        ops.merges += half as u64;
        children.push(pairs);
        level = next;
        k += 1;
        ess = ess_at(&level, k, ops);
        trajectory.push(ess);
    }

    let depth = chosen.expect("search always terminates at a single block");
    let spec = if depth == 0 {
        InteractionSpec::Identity(n)
    } else if depth == m {
        InteractionSpec::Full(n)
    } else {
        let order = expand_blocks(&children, depth, n >> depth, ops);
        let partition = BlockPartition::from_parts_unchecked(order, 1 << depth);
        debug_assert!(merged_weights_match(&partition, &base, &children, depth));
        InteractionSpec::Blocks(partition)
    };
    Ok(AdaptationOutput { spec, k: depth, ess_trajectory: trajectory })
}

/// Unfolds the merge tree from depth `depth` down to particle indices.
fn expand_blocks(children: &[Vec<(usize, usize)>], depth: usize, blocks: usize, ops: &mut OpCounter) -> Vec<usize> {
    let mut order: Vec<usize> = (0..blocks).collect();
    for level in (0..depth).rev() {
        order = order
            .iter()
            .flat_map(|&b| {
                let (x, y) = children[level][b];
                [x, y]
            })
            .collect();
        ops.visits += order.len() as u64;
    }
    order
}

/// Level-k weights equal `2^-k` times the block sums of the level-0 weights.
fn merged_weights_match(partition: &BlockPartition, base: &[f64], children: &[Vec<(usize, usize)>], depth: usize) -> bool {
    let mut level = base.to_vec();
    for pairs in &children[..depth] {
        level = pairs.iter().map(|&(a, b)| 0.5 * level[a] + 0.5 * level[b]).collect();
    }
    let scale = (1u64 << depth) as f64;
    partition.blocks().zip(&level).all(|(block, &w)| {
        let direct = block.iter().map(|&j| base[j]).sum::<f64>() / scale;
        (direct - w).abs() <= 1e-9 * direct.abs().max(f64::MIN_POSITIVE)
    })
}

/// Greedy pairing order for an even-length weight vector.
///
/// Positions `0, 2, 4, ...` receive the largest weights in descending order
/// and positions `1, 3, 5, ...` the smallest in ascending order, so that
/// consecutive pairs match largest with smallest. Tied weights keep their
/// own positions where possible; in particular equal weights give the
/// identity.
pub fn greedy_order(weights: &[f64]) -> Result<Vec<usize>> {
    if !weights.len().is_multiple_of(2) {
        return Err(Error::OddLength(weights.len()));
    }
    Ok(greedy_order_counted(weights, &mut OpCounter::default()))
}

fn greedy_order_counted(weights: &[f64], ops: &mut OpCounter) -> Vec<usize> {
    let len = weights.len();
    let half = len / 2;
    // slot visited at rank r along the chain 0, 2, .., len-2, len-1, len-3, .., 1
    let slot = |r: usize| if r < half { 2 * r } else { len - 1 - 2 * (r - half) };
    let rank_of_slot = |j: usize| if j.is_multiple_of(2) { j / 2 } else { half + (len - 1 - j) / 2 };

    let mut sorted: Vec<usize> = (0..len).collect();
    let mut comparisons = 0u64;
    sorted.sort_by(|&a, &b| {
        comparisons += 1;
        weights[b].total_cmp(&weights[a]).then_with(|| rank_of_slot(a).cmp(&rank_of_slot(b)))
    });
    ops.comparisons += comparisons;
    ops.visits += len as u64;

    let mut order = vec![0; len];
    for (r, &idx) in sorted.iter().enumerate() {
        order[slot(r)] = idx;
    }
    order
}

/// Last step `m <= n` whose incoming interaction was `Full`; 0 if there is none.
///
/// `specs[p]` is the interaction used to move from step `p` to `p + 1`.
pub fn last_resampling_time(specs: &[InteractionSpec], n: usize) -> Result<usize> {
    if specs.len() < n {
        return Err(Error::InsufficientHistory(format!("{} interactions recorded, step {n} requested", specs.len())));
    }
    let mut last = 0;
    for (p, spec) in specs[..n].iter().enumerate() {
        if spec.is_full() {
            last = p + 1;
        } else if !spec.is_identity() {
            return Err(Error::NotArpfTrace);
        }
    }
    Ok(last)
}

/// Verifies, at every recorded step of a run driven by Identity/Full
/// interactions, that particle weights equal the product of potentials
/// accumulated since the last resampling time, scaled by the marginal
/// likelihood estimate at that time.
///
/// Both the relative weights and `log Z` are compared in log domain with
/// tolerance 1e-9.
pub fn arpf_weight_identity_check<S>(trace: &RunTrace<S>) -> Result<bool> {
    const TOL: f64 = 1e-9;
    let records = trace
        .particle_records
        .as_ref()
        .ok_or_else(|| Error::InsufficientHistory("run did not retain per-step particle records".into()))?;
    let specs: Vec<InteractionSpec> = records.iter().map(|r| r.interaction.clone()).collect();
    let n_particles = records.first().map(|r| r.log_potentials.len()).unwrap_or(0);

    for step in 1..=records.len() {
        let t = last_resampling_time(&specs, step)?;
        let mut acc = vec![0.0; n_particles];
        for record in &records[t..step] {
            // between resampling times every particle is its own ancestor
            if record.ancestors.iter().enumerate().any(|(i, &a)| a != i) {
                return Ok(false);
            }
            for (a, g) in acc.iter_mut().zip(&record.log_potentials) {
                *a += g;
            }
        }
        let lse = log_sum_exp(&acc);
        let weights = &records[step - 1].log_weights_after;
        for (lw, a) in weights.iter().zip(&acc) {
            let expected = a - lse;
            if (lw.is_finite() || expected.is_finite())
                && (lw - expected).abs() > TOL {
                    return Ok(false);
                }
        }
        let log_z_t = trace.diagnostics[t].log_z;
        let expected_log_z = log_z_t + lse - (n_particles as f64).ln();
        if (trace.diagnostics[step].log_z - expected_log_z).abs() > TOL {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Textual policy description: `sis | bpf | arpf:<tau> | simple:<tau> |
/// random:<tau> | greedy:<tau> | blocks:<q>`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PolicySpec {
    Sis,
    Bpf,
    Arpf(f64),
    Adaptive(AdaptationRule, f64),
    Blocks(usize),
}

impl PolicySpec {
    /// Instantiates the policy for `n` particles.
    pub fn build(&self, n: usize) -> Result<AdaptationPolicy> {
        let policy = match *self {
            PolicySpec::Sis => AdaptationPolicy::Fixed(InteractionSpec::Identity(n)),
            PolicySpec::Bpf => AdaptationPolicy::Fixed(InteractionSpec::Full(n)),
            PolicySpec::Arpf(tau) => AdaptationPolicy::arpf(tau)?,
            PolicySpec::Adaptive(rule, tau) => AdaptationPolicy::adaptive(rule, tau)?,
            PolicySpec::Blocks(q) => AdaptationPolicy::Fixed(make_block_diagonal(n, q)?),
        };
        policy.validate(n)?;
        Ok(policy)
    }

    pub fn threshold(&self) -> Option<f64> {
        match *self {
            PolicySpec::Arpf(t) | PolicySpec::Adaptive(_, t) => Some(t),
            _ => None,
        }
    }
}

impl fmt::Display for PolicySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicySpec::Sis => write!(f, "sis"),
            PolicySpec::Bpf => write!(f, "bpf"),
            PolicySpec::Arpf(t) => write!(f, "arpf:{t}"),
            PolicySpec::Adaptive(rule, t) => write!(f, "{}:{t}", rule.name()),
            PolicySpec::Blocks(q) => write!(f, "blocks:{q}"),
        }
    }
}

impl FromStr for PolicySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, arg) = match s.split_once(':') {
            Some((a, b)) => (a, Some(b)),
            None => (s, None),
        };
        let tau = |arg: Option<&str>| -> Result<f64> {
            let raw = arg.ok_or_else(|| Error::Parse(format!("policy `{s}` needs a threshold")))?;
            let t: f64 = raw.parse().map_err(|_| Error::Parse(format!("bad threshold `{raw}`")))?;
            check_threshold(t)?;
            Ok(t)
        };
        match (name, arg) {
            ("sis", None) => Ok(PolicySpec::Sis),
            ("bpf", None) => Ok(PolicySpec::Bpf),
            ("arpf", a) => Ok(PolicySpec::Arpf(tau(a)?)),
            ("simple", a) => Ok(PolicySpec::Adaptive(AdaptationRule::Simple, tau(a)?)),
            ("random", a) => Ok(PolicySpec::Adaptive(AdaptationRule::Random, tau(a)?)),
            ("greedy", a) => Ok(PolicySpec::Adaptive(AdaptationRule::Greedy, tau(a)?)),
            ("blocks", Some(q)) => {
                let q: usize = q.parse().map_err(|_| Error::Parse(format!("bad block size `{q}`")))?;
                Ok(PolicySpec::Blocks(q))
            }
            _ => Err(Error::Parse(format!("unknown policy `{s}`"))),
        }
    }
}
