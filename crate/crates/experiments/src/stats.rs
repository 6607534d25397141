//! Small summary statistics over replicates.

/// Sample mean and its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
}

impl MeanSe {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        if xs.len() < 2 {
            return MeanSe { mean, se: f64::NAN };
        }
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        MeanSe { mean, se: (var / n).sqrt() }
    }

    /// Distance of the mean from `target` in standard errors.
    pub fn z(&self, target: f64) -> f64 {
        (self.mean - target) / self.se
    }
}

/// Weighted mean with weights given in log domain; zero-weight entries are skipped.
pub fn log_weighted_mean(log_weights: &[f64], values: &[f64]) -> f64 {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut num, mut den) = (0.0, 0.0);
    for (lw, v) in log_weights.iter().zip(values) {
        let w = (lw - max).exp();
        if w > 0.0 {
            num += w * v;
            den += w;
        }
    }
    num / den
}

/// Total-variation distance between two count vectors after normalisation.
pub fn total_variation(a: &[usize], b: &[usize]) -> f64 {
    let (ta, tb) = (a.iter().sum::<usize>() as f64, b.iter().sum::<usize>() as f64);
    let len = a.len().max(b.len());
    let get = |v: &[usize], i: usize| v.get(i).copied().unwrap_or(0) as f64;
    0.5 * (0..len).map(|i| (get(a, i) / ta - get(b, i) / tb).abs()).sum::<f64>()
}
