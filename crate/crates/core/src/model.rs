//! Hidden Markov models: the initial law, the transition kernel and the
//! observation potential, plus three built-in models and data simulation.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Shape of a model's latent state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateKind {
    ScalarReal,
    FiniteLabel,
    VectorReal,
}

/// A hidden Markov model given by an initial law, a transition kernel and a
/// strictly positive observation density.
///
/// Samplers must be deterministic functions of the random stream handed to
/// them. Potentials are always returned in log domain.
pub trait HmmModel: Send + Sync {
    type State: Clone + Send + Sync + fmt::Debug;
    type Observation: Clone + Send + Sync + fmt::Debug;

    fn tag(&self) -> &'static str;

    fn state_kind(&self) -> StateKind;

    fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> Self::State;

    fn sample_transition<R: Rng + ?Sized>(&self, x: &Self::State, rng: &mut R) -> Self::State;

    fn sample_observation<R: Rng + ?Sized>(&self, x: &Self::State, rng: &mut R) -> Self::Observation;

    /// `log g(x, y)` for the observation `y` recorded at time `t`.
    fn log_potential(&self, x: &Self::State, y: &Self::Observation, t: usize) -> f64;

    fn validate_observation(&self, _y: &Self::Observation, _t: usize) -> Result<()> {
        Ok(())
    }

    /// `E[phi(X') | X = x]` in closed form, when the model provides one.
    fn transition_expectation(&self, _x: &Self::State, _phi: TestFunction) -> Option<f64> {
        None
    }
}

/// Scalar read-out of a latent state, used by the registered test functions.
pub trait StateValue {
    fn value(&self) -> f64;
}

impl StateValue for f64 {
    fn value(&self) -> f64 {
        *self
    }
}

impl StateValue for usize {
    fn value(&self) -> f64 {
        *self as f64
    }
}

/// The registered set of test functions `phi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TestFunction {
    #[serde(rename = "x")]
    Identity,
    #[serde(rename = "x2")]
    Square,
    #[serde(rename = "exp_half")]
    ExpHalf,
}

impl TestFunction {
    pub const ALL: [TestFunction; 3] = [TestFunction::Identity, TestFunction::Square, TestFunction::ExpHalf];

    pub fn eval(self, x: f64) -> f64 {
        match self {
            TestFunction::Identity => x,
            TestFunction::Square => x * x,
            TestFunction::ExpHalf => (0.5 * x).exp(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TestFunction::Identity => "x",
            TestFunction::Square => "x2",
            TestFunction::ExpHalf => "exp_half",
        }
    }

    /// `E[phi(m + s Z)]` for standard normal `Z`.
    pub fn gaussian_expectation(self, mean: f64, sd: f64) -> f64 {
        match self {
            TestFunction::Identity => mean,
            TestFunction::Square => mean * mean + sd * sd,
            TestFunction::ExpHalf => (0.5 * mean + sd * sd / 8.0).exp(),
        }
    }
}

impl FromStr for TestFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "x" => Ok(TestFunction::Identity),
            "x2" | "x^2" => Ok(TestFunction::Square),
            "exp_half" | "exp(x/2)" => Ok(TestFunction::ExpHalf),
            other => Err(Error::Parse(format!("unknown test function `{other}`"))),
        }
    }
}

fn gaussian_log_density(y: f64, mean: f64, sd: f64) -> f64 {
    let z = (y - mean) / sd;
    -LN_SQRT_2PI - sd.ln() - 0.5 * z * z
}

fn require(cond: bool, msg: impl Into<String>) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InvalidParameter(msg.into()))
    }
}

/// `X_0 ~ N(m0, s0^2)`, `X_n = a X_{n-1} + q V_n`, `Y_n = c X_n + r W_n`.
///
/// Zero state noise and zero prior spread are allowed; they give
/// deterministic dynamics (used by the hub demonstration).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearGaussianModel {
    pub a: f64,
    pub state_noise_sd: f64,
    pub obs_coeff: f64,
    pub obs_noise_sd: f64,
    pub prior_mean: f64,
    pub prior_sd: f64,
}

impl LinearGaussianModel {
    pub fn new(a: f64, state_noise_sd: f64, obs_coeff: f64, obs_noise_sd: f64, prior_mean: f64, prior_sd: f64) -> Result<Self> {
        let m = LinearGaussianModel { a, state_noise_sd, obs_coeff, obs_noise_sd, prior_mean, prior_sd };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.a, self.state_noise_sd, self.obs_coeff, self.obs_noise_sd, self.prior_mean, self.prior_sd];
        require(all.iter().all(|v| v.is_finite()), "linear-Gaussian parameters must be finite")?;
        require(self.state_noise_sd >= 0.0, "state_noise_sd must be non-negative")?;
        require(self.prior_sd >= 0.0, "prior_sd must be non-negative")?;
        require(self.obs_noise_sd > 0.0, "obs_noise_sd must be positive")
    }
}

impl HmmModel for LinearGaussianModel {
    type State = f64;
    type Observation = f64;

    fn tag(&self) -> &'static str {
        "linear-gaussian"
    }

    fn state_kind(&self) -> StateKind {
        StateKind::ScalarReal
    }

    fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        self.prior_mean + self.prior_sd * z
    }

    fn sample_transition<R: Rng + ?Sized>(&self, x: &f64, rng: &mut R) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        self.a * x + self.state_noise_sd * z
    }

    fn sample_observation<R: Rng + ?Sized>(&self, x: &f64, rng: &mut R) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        self.obs_coeff * x + self.obs_noise_sd * z
    }

    fn log_potential(&self, x: &f64, y: &f64, _t: usize) -> f64 {
        gaussian_log_density(*y, self.obs_coeff * x, self.obs_noise_sd)
    }

    fn transition_expectation(&self, x: &f64, phi: TestFunction) -> Option<f64> {
        Some(phi.gaussian_expectation(self.a * x, self.state_noise_sd))
    }
}

/// `X_0 ~ N(0,1)`, `X_n = a X_{n-1} + sigma V_n`, `Y_n = epsilon W_n exp(X_n / 2)`.
///
/// The potential is the exact log-density of `N(0, epsilon^2 e^x)` at `y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StochasticVolatilityModel {
    pub a: f64,
    pub sigma: f64,
    pub epsilon: f64,
}

impl StochasticVolatilityModel {
    pub fn new(a: f64, sigma: f64, epsilon: f64) -> Result<Self> {
        let m = StochasticVolatilityModel { a, sigma, epsilon };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        require(self.a.abs() < 1.0, "stochastic volatility requires |a| < 1")?;
        require(self.sigma > 0.0 && self.sigma.is_finite(), "sigma must be positive")?;
        require(self.epsilon > 0.0 && self.epsilon.is_finite(), "epsilon must be positive")
    }
}

impl HmmModel for StochasticVolatilityModel {
    type State = f64;
    type Observation = f64;

    fn tag(&self) -> &'static str {
        "stochastic-volatility"
    }

    fn state_kind(&self) -> StateKind {
        StateKind::ScalarReal
    }

    fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        StandardNormal.sample(rng)
    }

    fn sample_transition<R: Rng + ?Sized>(&self, x: &f64, rng: &mut R) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        self.a * x + self.sigma * z
    }

    fn sample_observation<R: Rng + ?Sized>(&self, x: &f64, rng: &mut R) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        self.epsilon * z * (0.5 * x).exp()
    }

    fn log_potential(&self, x: &f64, y: &f64, _t: usize) -> f64 {
        // log N(y; 0, eps^2 e^x)
        -LN_SQRT_2PI - self.epsilon.ln() - 0.5 * x - 0.5 * y * y / (self.epsilon * self.epsilon * x.exp())
    }

    fn validate_observation(&self, y: &f64, t: usize) -> Result<()> {
        if *y == 0.0 || !y.is_finite() {
            return Err(Error::InadmissibleObservation { t, value: y.to_string(), model: self.tag() });
        }
        Ok(())
    }

    fn transition_expectation(&self, x: &f64, phi: TestFunction) -> Option<f64> {
        Some(phi.gaussian_expectation(self.a * x, self.sigma))
    }
}

/// Observation law of a finite-state model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Emission {
    /// `Y | X = s ~ N(means[s], sd^2)`.
    Gaussian { means: Vec<f64>, sd: f64 },
    /// `P(Y = k | X = s) = probs[s][k]`; observations are category indices stored as reals.
    Discrete { probs: Vec<Vec<f64>> },
}

/// Finite-state chain on labels `0..S` (label 0 plays the role of "vertex 1").
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiniteStateModel {
    pub prior: Vec<f64>,
    pub transition: Vec<Vec<f64>>,
    pub emission: Emission,
}

fn is_probability_vector(p: &[f64], tol: f64) -> bool {
    p.iter().all(|&v| v >= 0.0 && v.is_finite()) && (p.iter().sum::<f64>() - 1.0).abs() <= tol
}

fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random::<f64>();
    let mut acc = 0.0;
    for (k, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    // rounding left a sliver above the last cumulative value
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

impl FiniteStateModel {
    pub fn new(prior: Vec<f64>, transition: Vec<Vec<f64>>, emission: Emission) -> Result<Self> {
        let m = FiniteStateModel { prior, transition, emission };
        m.validate()?;
        Ok(m)
    }

    pub fn state_count(&self) -> usize {
        self.prior.len()
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.prior.len();
        require(s >= 2, "finite-state model needs at least two states")?;
        require(is_probability_vector(&self.prior, 1e-12), "prior must be a probability vector")?;
        require(self.transition.len() == s, "transition must be S x S")?;
        for (i, row) in self.transition.iter().enumerate() {
            require(row.len() == s, "transition must be S x S")?;
            require(is_probability_vector(row, 1e-12), format!("transition row {i} is not stochastic"))?;
        }
        match &self.emission {
            Emission::Gaussian { means, sd } => {
                require(means.len() == s, "one emission mean per state")?;
                require(*sd > 0.0 && sd.is_finite(), "emission sd must be positive")
            }
            Emission::Discrete { probs } => {
                require(probs.len() == s, "one emission row per state")?;
                let k = probs[0].len();
                for row in probs {
                    require(row.len() == k && k > 0, "emission rows must share a category count")?;
                    require(is_probability_vector(row, 1e-12), "emission rows must be probability vectors")?;
                }
                Ok(())
            }
        }
    }

    /// `log g(s, y)` for every label `s`.
    pub fn emission_log_potentials(&self, y: f64) -> Vec<f64> {
        (0..self.state_count()).map(|s| self.log_potential(&s, &y, 0)).collect()
    }
}

impl HmmModel for FiniteStateModel {
    type State = usize;
    type Observation = f64;

    fn tag(&self) -> &'static str {
        "finite-state"
    }

    fn state_kind(&self) -> StateKind {
        StateKind::FiniteLabel
    }

    fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_categorical(&self.prior, rng)
    }

    fn sample_transition<R: Rng + ?Sized>(&self, x: &usize, rng: &mut R) -> usize {
        sample_categorical(&self.transition[*x], rng)
    }

    fn sample_observation<R: Rng + ?Sized>(&self, x: &usize, rng: &mut R) -> f64 {
        match &self.emission {
            Emission::Gaussian { means, sd } => {
                let z: f64 = StandardNormal.sample(rng);
                means[*x] + sd * z
            }
            Emission::Discrete { probs } => sample_categorical(&probs[*x], rng) as f64,
        }
    }

    fn log_potential(&self, x: &usize, y: &f64, _t: usize) -> f64 {
        match &self.emission {
            Emission::Gaussian { means, sd } => gaussian_log_density(*y, means[*x], *sd),
            Emission::Discrete { probs } => {
                let row = &probs[*x];
                if *y >= 0.0 && y.fract() == 0.0 && (*y as usize) < row.len() {
                    row[*y as usize].ln()
                } else {
                    f64::NAN
                }
            }
        }
    }

    fn validate_observation(&self, y: &f64, t: usize) -> Result<()> {
        let ok = match &self.emission {
            Emission::Gaussian { .. } => y.is_finite(),
            Emission::Discrete { probs } => *y >= 0.0 && y.fract() == 0.0 && (*y as usize) < probs[0].len(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InadmissibleObservation { t, value: y.to_string(), model: self.tag() })
        }
    }

    fn transition_expectation(&self, x: &usize, phi: TestFunction) -> Option<f64> {
        Some(self.transition[*x].iter().enumerate().map(|(j, p)| p * phi.eval(j as f64)).sum())
    }
}

/// A model parameterisation as read from a configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelSpec {
    LinearGaussian(LinearGaussianModel),
    StochasticVolatility(StochasticVolatilityModel),
    FiniteState(FiniteStateModel),
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            ModelSpec::LinearGaussian(m) => m.validate(),
            ModelSpec::StochasticVolatility(m) => m.validate(),
            ModelSpec::FiniteState(m) => m.validate(),
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            ModelSpec::LinearGaussian(m) => m.tag(),
            ModelSpec::StochasticVolatility(m) => m.tag(),
            ModelSpec::FiniteState(m) => m.tag(),
        }
    }
}

/// A fixed observation sequence `y_0, y_1, ...`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationRecord<Y = f64> {
    pub observations: Vec<Y>,
    pub model_tag: String,
    pub seed: Option<u64>,
}

impl<Y: Clone + fmt::Debug> ObservationRecord<Y> {
    pub fn new(observations: Vec<Y>, model_tag: impl Into<String>, seed: Option<u64>) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::EmptyRecord);
        }
        Ok(ObservationRecord { observations, model_tag: model_tag.into(), seed })
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Checks every observation against the model's admissibility rule.
    pub fn validate_for<M: HmmModel<Observation = Y>>(&self, model: &M) -> Result<()> {
        if self.observations.is_empty() {
            return Err(Error::EmptyRecord);
        }
        self.observations.iter().enumerate().try_for_each(|(t, y)| model.validate_observation(y, t))
    }
}

impl ObservationRecord<f64> {
    /// Writes the record as CSV with header `t,y`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,y")?;
        for (t, y) in self.observations.iter().enumerate() {
            writeln!(out, "{t},{y:.16e}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R, model_tag: impl Into<String>) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines.next().transpose()?.unwrap_or_default();
        if header.trim() != "t,y" {
            return Err(Error::Parse(format!("expected header `t,y`, found `{}`", header.trim())));
        }
        let mut observations = Vec::new();
        for (row, line) in lines.enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (t, y) = line
                .split_once(',')
                .ok_or_else(|| Error::Parse(format!("row {row}: expected two columns")))?;
            let t: usize = t.trim().parse().map_err(|_| Error::Parse(format!("row {row}: bad time index")))?;
            if t != observations.len() {
                return Err(Error::Parse(format!("row {row}: time index {t} out of sequence")));
            }
            let y: f64 = y.trim().parse().map_err(|_| Error::Parse(format!("row {row}: bad observation")))?;
            observations.push(y);
        }
        ObservationRecord::new(observations, model_tag, None)
    }
}

/// Draws a latent path `x_0..x_{n-1}` and observations `y_0..y_{n-1}` from the model.
///
/// A single ChaCha8 stream seeded with `seed` is consumed in time order: the
/// state draw at `t` (initial law at `t = 0`), then the observation at `t`.
pub fn simulate_data<M: HmmModel>(model: &M, n_steps: usize, seed: u64) -> Result<(Vec<M::State>, ObservationRecord<M::Observation>)> {
    if n_steps == 0 {
        return Err(Error::InvalidParameter("n_steps must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut path = Vec::with_capacity(n_steps);
    let mut obs = Vec::with_capacity(n_steps);
    let mut x = model.sample_initial(&mut rng);
    for t in 0..n_steps {
        if t > 0 {
            x = model.sample_transition(&x, &mut rng);
        }
        obs.push(model.sample_observation(&x, &mut rng));
        path.push(x.clone());
    }
    let record = ObservationRecord::new(obs, model.tag(), Some(seed))?;
    Ok((path, record))
}

/// `log g_t(x)` for each state; a non-finite value is reported with its index.
pub fn log_potential_vector<M: HmmModel>(model: &M, states: &[M::State], y: &M::Observation, t: usize) -> Result<Vec<f64>> {
    if states.is_empty() {
        return Err(Error::InvalidParameter("no states supplied".into()));
    }
    states
        .iter()
        .enumerate()
        .map(|(index, x)| {
            let value = model.log_potential(x, y, t);
            if value.is_finite() {
                Ok(value)
            } else {
                Err(Error::NonFinitePotential { index, state: format!("{x:?}"), value })
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn sv() -> StochasticVolatilityModel {
        StochasticVolatilityModel::new(0.9, 0.25, 0.1).unwrap()
    }

    #[test]
    fn sv_long_record() {
        let (path, rec) = simulate_data(&sv(), 30_000, 11).unwrap();
        assert_eq!(path.len(), 30_000);
        assert_eq!(rec.len(), 30_000);
        rec.validate_for(&sv()).unwrap();
    }

    #[test]
    fn degenerate_linear_gaussian_path_is_zero() {
        let m = LinearGaussianModel::new(1.0, 0.0, 1.0, 1.0, 0.0, 0.0).unwrap();
        let (path, _) = simulate_data(&m, 50, 3).unwrap();
        assert!(path.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn absorbing_chain_stays_put() {
        let m = FiniteStateModel::new(
            vec![1.0, 0.0, 0.0],
            vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
            Emission::Gaussian { means: vec![0.0, 1.0, 2.0], sd: 1.0 },
        )
        .unwrap();
        let (path, _) = simulate_data(&m, 40, 5).unwrap();
        assert!(path.iter().all(|&s| s == 0));
    }

    #[test]
    fn simulate_rejects_zero_steps() {
        assert!(simulate_data(&sv(), 0, 1).is_err());
    }

    #[test]
    fn sv_potential_at_zero_state() {
        let m = sv();
        let eps = m.epsilon;
        // N(eps; 0, eps^2) = exp(-1/2) / (eps sqrt(2 pi))
        let expected = -0.5 - eps.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
        let v = log_potential_vector(&m, &[0.0], &eps, 0).unwrap();
        assert_abs_diff_eq!(v[0], expected, epsilon = 1e-14);
    }

    #[test]
    fn constant_emission_gives_zero_log_potential() {
        let m = FiniteStateModel::new(
            vec![0.5, 0.5],
            vec![vec![0.9, 0.1], vec![0.2, 0.8]],
            Emission::Discrete { probs: vec![vec![1.0], vec![1.0]] },
        )
        .unwrap();
        let v = log_potential_vector(&m, &[0, 1, 1, 0], &0.0, 0).unwrap();
        assert_eq!(v, vec![0.0; 4]);
    }

    #[test]
    fn linear_gaussian_potential_at_mode() {
        let m = LinearGaussianModel::new(0.5, 1.0, 2.0, 1.0, 0.0, 1.0).unwrap();
        let v = log_potential_vector(&m, &[1.5], &3.0, 0).unwrap();
        assert_abs_diff_eq!(v[0], -0.5 * (2.0 * std::f64::consts::PI).ln(), epsilon = 1e-15);
    }

    #[test]
    fn non_finite_potential_names_the_state() {
        let m = FiniteStateModel::new(
            vec![0.5, 0.5],
            vec![vec![0.5, 0.5], vec![0.5, 0.5]],
            Emission::Discrete { probs: vec![vec![1.0, 0.0], vec![0.5, 0.5]] },
        )
        .unwrap();
        let err = log_potential_vector(&m, &[1, 0], &1.0, 0).unwrap_err();
        assert!(matches!(err, Error::NonFinitePotential { index: 1, .. }));
    }

    #[test]
    fn sv_rejects_zero_observation() {
        let rec = ObservationRecord::new(vec![0.3, 0.0], "sv", None).unwrap();
        assert!(matches!(rec.validate_for(&sv()), Err(Error::InadmissibleObservation { t: 1, .. })));
    }

    #[test]
    fn construction_errors() {
        assert!(StochasticVolatilityModel::new(1.0, 0.25, 0.1).is_err());
        assert!(LinearGaussianModel::new(0.5, 1.0, 1.0, 0.0, 0.0, 1.0).is_err());
        assert!(FiniteStateModel::new(vec![0.6, 0.6], vec![vec![1.0, 0.0]; 2], Emission::Gaussian { means: vec![0.0; 2], sd: 1.0 }).is_err());
        assert!(ObservationRecord::<f64>::new(vec![], "x", None).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let (_, rec) = simulate_data(&sv(), 25, 9).unwrap();
        let mut buf = Vec::new();
        rec.write_csv(&mut buf).unwrap();
        let back = ObservationRecord::read_csv(buf.as_slice(), rec.model_tag.clone()).unwrap();
        assert_eq!(back.observations, rec.observations);
    }

    #[test]
    fn exact_transition_expectations() {
        let m = sv();
        let e = m.transition_expectation(&1.0, TestFunction::Square).unwrap();
        assert_abs_diff_eq!(e, 0.81 + 0.0625, epsilon = 1e-15);
        let e = m.transition_expectation(&1.0, TestFunction::ExpHalf).unwrap();
        assert_abs_diff_eq!(e, (0.45f64 + 0.0625 / 8.0).exp(), epsilon = 1e-15);
    }
}
