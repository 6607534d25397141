//! Exact reference computations: the Kalman predictor for the linear-Gaussian
//! model, the forward algorithm for finite state spaces and brute-force path
//! enumeration of particle weights.

use std::io::Write;

use crate::error::{Error, Result};
use crate::interaction::DenseStochasticMatrix;
use crate::model::{FiniteStateModel, LinearGaussianModel, ObservationRecord};
use crate::numeric::log_sum_exp;

/// Gaussian law of `X_n` given `y_{0:n-1}` and `log p(y_{0:n-1})`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictiveMoments {
    pub mean: f64,
    pub variance: f64,
    pub log_marginal_likelihood: f64,
}

/// Gaussian law of `X_n` given `y_{0:n}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilteredMoments {
    pub mean: f64,
    pub variance: f64,
}

/// Law of `X_n` given `y_{0:n-1}` on a finite state space, and `log p(y_{0:n-1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePredictive {
    pub probabilities: Vec<f64>,
    pub log_marginal_likelihood: f64,
}

impl DiscretePredictive {
    /// Expectation of `phi(label)`.
    pub fn expectation(&self, phi: impl Fn(usize) -> f64) -> f64 {
        self.probabilities.iter().enumerate().map(|(s, p)| p * phi(s)).sum()
    }
}

/// Kalman recursion over the whole record. Returns the predictive moments for
/// `n = 0..=T` (element 0 is the prior) and the filtered moments for `n = 0..T`.
pub fn kalman_filter(model: &LinearGaussianModel, record: &ObservationRecord) -> (Vec<PredictiveMoments>, Vec<FilteredMoments>) {
    let t_len = record.len();
    let mut predictive = Vec::with_capacity(t_len + 1);
    let mut filtered = Vec::with_capacity(t_len);
    let (mut m, mut p) = (model.prior_mean, model.prior_sd * model.prior_sd);
    let mut log_z = 0.0;
    let c = model.obs_coeff;
    let r = model.obs_noise_sd * model.obs_noise_sd;
    let q = model.state_noise_sd * model.state_noise_sd;
    predictive.push(PredictiveMoments { mean: m, variance: p, log_marginal_likelihood: 0.0 });
    for &y in &record.observations {
        let s = c * c * p + r;
        let resid = y - c * m;
        log_z += -0.5 * (2.0 * std::f64::consts::PI * s).ln() - 0.5 * resid * resid / s;
        let gain = p * c / s;
        let mf = m + gain * resid;
        let pf = (1.0 - gain * c) * p;
        filtered.push(FilteredMoments { mean: mf, variance: pf });
        m = model.a * mf;
        p = model.a * model.a * pf + q;
        predictive.push(PredictiveMoments { mean: m, variance: p, log_marginal_likelihood: log_z });
    }
    (predictive, filtered)
}

/// Predictive moments `pi_n` and `log Z_n` for `n = 0..=T`.
pub fn kalman_predictive(model: &LinearGaussianModel, record: &ObservationRecord) -> Vec<PredictiveMoments> {
    kalman_filter(model, record).0
}

/// Forward algorithm with renormalisation at every step. Element `n` holds
/// `pi_n` and `log Z_n` for `n = 0..=T`.
pub fn discrete_forward(model: &FiniteStateModel, record: &ObservationRecord) -> Result<Vec<DiscretePredictive>> {
    let s_count = model.state_count();
    let mut pi = model.prior.clone();
    let mut log_z = 0.0;
    let mut out = Vec::with_capacity(record.len() + 1);
    out.push(DiscretePredictive { probabilities: pi.clone(), log_marginal_likelihood: 0.0 });
    for &y in &record.observations {
        let log_g = model.emission_log_potentials(y);
        if log_g.iter().any(|v| v.is_nan()) {
            return Err(Error::InadmissibleObservation { t: out.len() - 1, value: y.to_string(), model: "finite-state" });
        }
        let log_joint: Vec<f64> = pi.iter().zip(&log_g).map(|(p, g)| p.ln() + g).collect();
        let lse = log_sum_exp(&log_joint);
        if lse == f64::NEG_INFINITY {
            return Err(Error::AllWeightsZero);
        }
        log_z += lse;
        let post: Vec<f64> = log_joint.iter().map(|v| (v - lse).exp()).collect();
        pi = (0..s_count).map(|j| post.iter().enumerate().map(|(i, p)| p * model.transition[i][j]).sum()).collect();
        out.push(DiscretePredictive { probabilities: pi.clone(), log_marginal_likelihood: log_z });
    }
    Ok(out)
}

/// Particle weights `W_n^i` by explicit summation over all ancestral index
/// paths: `sum over (i_0..i_{n-1}) of prod_p g_p(i_p) alpha_p[i_{p+1}][i_p]`.
///
/// `potentials[p][i]` is the (linear) potential of particle `i` at step `p`
/// and `alphas[p]` moves step `p` to `p + 1`. Limited to `N <= 6`, `n <= 4`.
pub fn enumerate_weights(alphas: &[DenseStochasticMatrix], potentials: &[Vec<f64>], n: usize) -> Result<Vec<f64>> {
    let size = alphas.first().map(|a| a.size()).or_else(|| potentials.first().map(Vec::len)).unwrap_or(0);
    if size == 0 || size > 6 || n > 4 {
        return Err(Error::SizeGuard(format!("path enumeration needs 1 <= N <= 6 and n <= 4, got N = {size}, n = {n}")));
    }
    if alphas.len() < n || potentials.len() < n {
        return Err(Error::InvalidParameter(format!("{n} steps need {n} matrices and potential rows")));
    }
    if alphas[..n].iter().any(|a| a.size() != size) || potentials[..n].iter().any(|g| g.len() != size) {
        return Err(Error::InvalidParameter("matrices and potential rows must all have size N".into()));
    }
    let mut out = vec![0.0; size];
    let paths = size.pow(n as u32);
    let mut path = vec![0usize; n];
    for (i_n, slot) in out.iter_mut().enumerate() {
        for code in 0..paths {
            let mut c = code;
            for p in path.iter_mut() {
                *p = c % size;
                c /= size;
            }
            let mut term = 1.0;
            for p in 0..n {
                let next = if p + 1 < n { path[p + 1] } else { i_n };
                term *= potentials[p][path[p]] * alphas[p].get(next, path[p]);
            }
            *slot += term;
        }
    }
    Ok(out)
}

/// CSV `t,mean,variance,logZ`.
pub fn write_predictive_csv<W: Write>(mut out: W, moments: &[PredictiveMoments]) -> Result<()> {
    writeln!(out, "t,mean,variance,logZ")?;
    for (t, m) in moments.iter().enumerate() {
        writeln!(out, "{t},{:.16e},{:.16e},{:.16e}", m.mean, m.variance, m.log_marginal_likelihood)?;
    }
    Ok(())
}

/// CSV `t,p_1..p_S,logZ`.
pub fn write_discrete_csv<W: Write>(mut out: W, laws: &[DiscretePredictive]) -> Result<()> {
    let s_count = laws.first().map_or(0, |l| l.probabilities.len());
    write!(out, "t")?;
    for s in 1..=s_count {
        write!(out, ",p_{s}")?;
    }
    writeln!(out, ",logZ")?;
    for (t, law) in laws.iter().enumerate() {
        write!(out, "{t}")?;
        for p in &law.probabilities {
            write!(out, ",{p:.16e}")?;
        }
        writeln!(out, ",{:.16e}", law.log_marginal_likelihood)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Emission;
    use approx::assert_abs_diff_eq;

    fn rec(ys: &[f64]) -> ObservationRecord {
        ObservationRecord::new(ys.to_vec(), "test", None).unwrap()
    }

    #[test]
    fn kalman_prior_row() {
        let m = LinearGaussianModel::new(0.8, 1.0, 1.0, 1.0, 0.3, 2.0).unwrap();
        let out = kalman_predictive(&m, &rec(&[0.5, -0.2]));
        assert_eq!(out.len(), 3);
        assert_eq!(out[0], PredictiveMoments { mean: 0.3, variance: 4.0, log_marginal_likelihood: 0.0 });
    }

    #[test]
    fn kalman_uninformative_limit_is_ar1_marginal() {
        let (a, sx, m0, s0) = (0.7, 0.5, 1.0, 1.5);
        let m = LinearGaussianModel::new(a, sx, 1.0, 1e8, m0, s0).unwrap();
        let out = kalman_predictive(&m, &rec(&[3.0, -2.0, 1.0, 4.0]));
        let (mut mean, mut var) = (m0, s0 * s0);
        for pm in &out {
            assert_abs_diff_eq!(pm.mean, mean, epsilon = 1e-6);
            assert_abs_diff_eq!(pm.variance, var, epsilon = 1e-6);
            mean *= a;
            var = a * a * var + sx * sx;
        }
    }

    #[test]
    fn kalman_single_conjugate_update() {
        // a = 0: pi_1 forgets the data entirely; check the filtered step instead
        let (c, sy, m0, s0) = (2.0, 0.5, 1.0, 1.0);
        let m = LinearGaussianModel::new(0.0, 1.0, c, sy, m0, s0).unwrap();
        let y = 3.0;
        let (pred, filt) = kalman_filter(&m, &rec(&[y]));
        let prec = 1.0 / (s0 * s0) + c * c / (sy * sy);
        let post_mean = (m0 / (s0 * s0) + c * y / (sy * sy)) / prec;
        assert_abs_diff_eq!(filt[0].mean, post_mean, epsilon = 1e-12);
        assert_abs_diff_eq!(filt[0].variance, 1.0 / prec, epsilon = 1e-12);
        assert_abs_diff_eq!(pred[1].mean, 0.0 * post_mean, epsilon = 1e-12);
        assert_abs_diff_eq!(pred[1].variance, 1.0, epsilon = 1e-12);
        let s = c * c * s0 * s0 + sy * sy;
        let expected = -0.5 * (2.0 * std::f64::consts::PI * s).ln() - (y - c * m0).powi(2) / (2.0 * s);
        assert_abs_diff_eq!(pred[1].log_marginal_likelihood, expected, epsilon = 1e-12);
    }

    #[test]
    fn forward_constant_emission() {
        let c = 0.25;
        let m = FiniteStateModel::new(
            vec![1.0 / 3.0; 3],
            vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
            Emission::Discrete { probs: vec![vec![c, 1.0 - c]; 3] },
        )
        .unwrap();
        let out = discrete_forward(&m, &rec(&[0.0, 0.0, 0.0, 0.0])).unwrap();
        for (n, law) in out.iter().enumerate() {
            for p in &law.probabilities {
                assert_abs_diff_eq!(*p, 1.0 / 3.0, epsilon = 1e-15);
            }
            assert_abs_diff_eq!(law.log_marginal_likelihood, n as f64 * c.ln(), epsilon = 1e-12);
        }
    }

    #[test]
    fn forward_two_state_hand_computation() {
        let t = vec![vec![0.7, 0.3], vec![0.2, 0.8]];
        let e = vec![vec![0.9, 0.1], vec![0.4, 0.6]];
        let m = FiniteStateModel::new(vec![0.6, 0.4], t.clone(), Emission::Discrete { probs: e.clone() }).unwrap();
        let ys = [0.0, 1.0, 1.0];
        let out = discrete_forward(&m, &rec(&ys)).unwrap();
        // unnormalised forward variables
        let mut alpha = [0.6, 0.4];
        for (n, &y) in ys.iter().enumerate() {
            let yi = y as usize;
            let joint = [alpha[0] * e[0][yi], alpha[1] * e[1][yi]];
            alpha = [joint[0] * t[0][0] + joint[1] * t[1][0], joint[0] * t[0][1] + joint[1] * t[1][1]];
            let z: f64 = alpha[0] + alpha[1];
            let law = &out[n + 1];
            assert_abs_diff_eq!(law.log_marginal_likelihood, z.ln(), epsilon = 1e-12);
            assert_abs_diff_eq!(law.probabilities[0], alpha[0] / z, epsilon = 1e-12);
            assert_abs_diff_eq!(law.probabilities[1], alpha[1] / z, epsilon = 1e-12);
        }
    }

    #[test]
    fn forward_rejects_impossible_observation() {
        let m = FiniteStateModel::new(
            vec![1.0, 0.0],
            vec![vec![0.5, 0.5], vec![0.5, 0.5]],
            Emission::Discrete { probs: vec![vec![0.0, 1.0], vec![0.5, 0.5]] },
        )
        .unwrap();
        assert_eq!(discrete_forward(&m, &rec(&[0.0])).unwrap_err(), Error::AllWeightsZero);
    }

    #[test]
    fn enumeration_reduces_for_identity_and_full() {
        let g = vec![vec![0.5, 2.0, 1.5], vec![3.0, 0.25, 1.0], vec![0.75, 1.25, 2.5]];
        let id = vec![DenseStochasticMatrix::identity(3); 3];
        let w = enumerate_weights(&id, &g, 3).unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(w[i], g[0][i] * g[1][i] * g[2][i], epsilon = 1e-12);
        }
        let full = vec![DenseStochasticMatrix::new(vec![vec![1.0 / 3.0; 3]; 3]).unwrap(); 3];
        let w = enumerate_weights(&full, &g, 3).unwrap();
        let expected: f64 = g.iter().map(|row| row.iter().sum::<f64>() / 3.0).product();
        for wi in w {
            assert_abs_diff_eq!(wi, expected, epsilon = 1e-12);
        }
        assert_eq!(enumerate_weights(&id, &g, 0).unwrap(), vec![1.0; 3]);
    }

    #[test]
    fn enumeration_size_guard() {
        let id = vec![DenseStochasticMatrix::identity(7)];
        assert!(matches!(enumerate_weights(&id, &[vec![1.0; 7]], 1), Err(Error::SizeGuard(_))));
        let id = vec![DenseStochasticMatrix::identity(2); 5];
        assert!(matches!(enumerate_weights(&id, &vec![vec![1.0; 2]; 5], 5), Err(Error::SizeGuard(_))));
    }

    #[test]
    fn csv_headers() {
        let mut buf = Vec::new();
        write_discrete_csv(&mut buf, &[DiscretePredictive { probabilities: vec![0.5, 0.5], log_marginal_likelihood: 0.0 }]).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("t,p_1,p_2,logZ\n0,"));
        let mut buf = Vec::new();
        write_predictive_csv(&mut buf, &[]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "t,mean,variance,logZ\n");
    }
}
