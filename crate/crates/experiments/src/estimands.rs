//! Estimands of the MSE study and their reference values.
//!
//! After `n` updates the particle system targets the law of `X_n` given
//! `y_{0:n-1}`. Multiplying its weights by the potentials of `y_n` turns it
//! into the filter for `X_n` given `y_{0:n}`; from there the smoother follows
//! lineages back `lag` steps and the predictor pushes the filter through one
//! transition.

use alpha_smc::model::log_potential_vector;
use alpha_smc::oracles::{discrete_forward, kalman_filter};
use alpha_smc::{split_seed, HmmModel, ModelSpec, ObservationRecord, ParticleSystem, StateValue, TestFunction};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::stats::log_weighted_mean;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Estimand {
    /// `E[phi(X_{n-lag}) | y_{0:n}]`.
    Smoother,
    /// `E[phi(X_n) | y_{0:n}]`.
    Filter,
    /// `E[phi(X_{n+1}) | y_{0:n}]`.
    Predictor,
}

impl Estimand {
    pub const ALL: [Estimand; 3] = [Estimand::Smoother, Estimand::Filter, Estimand::Predictor];

    pub fn name(self) -> &'static str {
        match self {
            Estimand::Smoother => "smoother",
            Estimand::Filter => "filter",
            Estimand::Predictor => "predictor",
        }
    }
}

/// Values of the three estimands, in [`Estimand::ALL`] order.
pub type Triple = [f64; 3];

/// Particle estimates of every estimand for every test function at the
/// system's current step `n`, using observation `y_n`.
///
/// Models without a closed-form transition expectation fall back to moving
/// each particle once with a stream derived from `propagation_seed` and `n`.
pub fn particle_estimates<M>(
    model: &M,
    system: &ParticleSystem<M::State>,
    y: &M::Observation,
    phis: &[TestFunction],
    lag: usize,
    propagation_seed: u64,
) -> Result<Vec<Triple>>
where
    M: HmmModel,
    M::State: StateValue,
{
    let n = system.step_index();
    let log_g = log_potential_vector(model, system.states(), y, n)?;
    let lw: Vec<f64> = system.log_weights().iter().zip(&log_g).map(|(a, b)| a + b).collect();
    let mut moved: Option<Vec<f64>> = None;
    let mut out = Vec::with_capacity(phis.len());
    for &phi in phis {
        let smoother = system.lineage_estimate(lag, Some(&log_g), |x| phi.eval(x.value()))?;
        let filter = system.lineage_estimate(0, Some(&log_g), |x| phi.eval(x.value()))?;
        let next: Vec<f64> = match system.states().first().and_then(|x| model.transition_expectation(x, phi)) {
            Some(_) => system.states().iter().map(|x| model.transition_expectation(x, phi).unwrap_or(f64::NAN)).collect(),
            None => {
                let moved = moved.get_or_insert_with(|| {
                    let mut rng = ChaCha8Rng::seed_from_u64(split_seed(propagation_seed, n as u64));
                    system.states().iter().map(|x| model.sample_transition(x, &mut rng).value()).collect()
                });
                moved.iter().map(|&v| phi.eval(v)).collect()
            }
        };
        out.push([smoother, filter, log_weighted_mean(&lw, &next)]);
    }
    Ok(out)
}

/// Exact filter and predictor values, indexed `[n][phi]` as `(filter, predictor)`
/// for `n = 0..T-1`. `None` when the model has no exact oracle.
pub fn exact_filter_predictor(spec: &ModelSpec, record: &ObservationRecord, phis: &[TestFunction]) -> Result<Option<Vec<Vec<(f64, f64)>>>> {
    match spec {
        ModelSpec::LinearGaussian(m) => {
            let (pred, filt) = kalman_filter(m, record);
            Ok(Some(
                (0..record.len())
                    .map(|n| {
                        phis.iter()
                            .map(|phi| {
                                let f = phi.gaussian_expectation(filt[n].mean, filt[n].variance.sqrt());
                                let p = phi.gaussian_expectation(pred[n + 1].mean, pred[n + 1].variance.sqrt());
                                (f, p)
                            })
                            .collect()
                    })
                    .collect(),
            ))
        }
        ModelSpec::FiniteState(m) => {
            let laws = discrete_forward(m, record)?;
            Ok(Some(
                (0..record.len())
                    .map(|n| {
                        let log_g = m.emission_log_potentials(record.observations[n]);
                        let lw: Vec<f64> = laws[n].probabilities.iter().zip(&log_g).map(|(p, g)| p.ln() + g).collect();
                        phis.iter()
                            .map(|phi| {
                                let vals: Vec<f64> = (0..m.state_count()).map(|s| phi.eval(s as f64)).collect();
                                (log_weighted_mean(&lw, &vals), laws[n + 1].expectation(|s| phi.eval(s as f64)))
                            })
                            .collect()
                    })
                    .collect(),
            ))
        }
        ModelSpec::StochasticVolatility(_) => Ok(None),
    }
}
