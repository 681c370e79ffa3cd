//! Structural-learning signals: running statistics of the network's bias
//! and variance estimates, the adaptive sigma rules that turn them into
//! grow/prune decisions, and the selection of prune victims.

use crate::agmm::GaussianComponent;
use crate::network::ElasticNetwork;

/// Welford-style running mean/std with a resettable minimum tracker.
#[derive(Debug, Clone)]
struct SignalStat {
    count: u64,
    mean: f64,
    m2: f64,
    min_mean: f64,
    min_std: f64,
}

impl SignalStat {
    fn new() -> Self {
        SignalStat {
            count: 0,
            mean: 0.0,
            m2: 0.0,
            min_mean: f64::INFINITY,
            min_std: f64::INFINITY,
        }
    }

    fn update(&mut self, value: f64) {
        self.count += 1;
        let delta = value - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (value - self.mean);
        if self.mean + self.std() < self.min_mean + self.min_std {
            self.min_mean = self.mean;
            self.min_std = self.std();
        }
    }

    /// Population standard deviation over everything seen so far.
    fn std(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.m2 / self.count as f64).sqrt()
        }
    }

    fn reset_min_to_current(&mut self) {
        self.min_mean = self.mean;
        self.min_std = self.std();
    }
}

/// Tracks bias and variance histories for one learning phase and answers
/// the grow/prune questions.
///
/// The running statistics are never reset; the minimum trackers are reset
/// each time their rule fires.
#[derive(Debug, Clone)]
pub struct NsTracker {
    bias: SignalStat,
    var: SignalStat,
    last_bias: f64,
    last_var: f64,
}

impl Default for NsTracker {
    fn default() -> Self {
        Self::new()
    }
}

impl NsTracker {
    pub fn new() -> Self {
        NsTracker {
            bias: SignalStat::new(),
            var: SignalStat::new(),
            last_bias: 0.0,
            last_var: 0.0,
        }
    }

    /// Adaptive confidence level for growing, in `[0.75, 2]`; decreases as
    /// the last observed bias grows.
    pub fn chi(&self) -> f64 {
        1.25 * (-(self.last_bias * self.last_bias)).exp() + 0.75
    }

    /// Adaptive confidence level for pruning, in `[0.75, 2]`.
    pub fn gamma(&self) -> f64 {
        1.25 * (-(self.last_var * self.last_var)).exp() + 0.75
    }

    pub fn bias_mean(&self) -> f64 {
        self.bias.mean
    }

    pub fn bias_std(&self) -> f64 {
        self.bias.std()
    }

    pub fn var_mean(&self) -> f64 {
        self.var.mean
    }

    pub fn var_std(&self) -> f64 {
        self.var.std()
    }

    /// Folds a new squared-bias value into the history and reports whether
    /// the grow rule fires. The minimum tracker is reset when it does.
    pub fn update_and_check_grow(&mut self, bias_sq: f64) -> bool {
        if !bias_sq.is_finite() {
            return false;
        }
        self.last_bias = bias_sq;
        self.bias.update(bias_sq);
        if self.bias.count < 2 {
            return false;
        }
        let grow = self.bias.mean + self.bias.std()
            >= self.bias.min_mean + self.chi() * self.bias.min_std;
        if grow {
            self.bias.reset_min_to_current();
        }
        grow
    }

    /// Mirror of the grow rule for the variance signal, with the doubled
    /// sigma level that keeps pruning from firing right after growing.
    pub fn update_and_check_prune(&mut self, var: f64) -> bool {
        if !var.is_finite() {
            return false;
        }
        self.last_var = var;
        self.var.update(var);
        if self.var.count < 2 {
            return false;
        }
        let prune = self.var.mean + self.var.std()
            >= self.var.min_mean + 2.0 * self.gamma() * self.var.min_std;
        if prune {
            self.var.reset_min_to_current();
        }
        prune
    }
}

/// Mean squared difference between an expected output and its target.
pub fn bias_sq(expected: &[f64], target: &[f64]) -> f64 {
    assert_eq!(expected.len(), target.len());
    expected
        .iter()
        .zip(target)
        .map(|(e, t)| (e - t) * (e - t))
        .sum::<f64>()
        / expected.len() as f64
}

/// Network variance of the classifier head under the mixture: the mean
/// over output dimensions of `E[y^2] - E[y]^2`, floored at zero.
pub fn output_variance(
    net: &ElasticNetwork,
    components: &[GaussianComponent],
    weights: &[f64],
) -> f64 {
    let expected = net.expected_output(components, weights);
    let expected_sq = net.expected_squared_output(components, weights);
    let m = expected.len() as f64;
    let var = expected_sq
        .iter()
        .zip(expected.iter())
        .map(|(s, e)| s - e * e)
        .sum::<f64>()
        / m;
    var.max(0.0)
}

/// Variance analogue for the decoder path, used by the generative phase.
pub fn reconstruction_variance(
    net: &ElasticNetwork,
    components: &[GaussianComponent],
    weights: &[f64],
) -> f64 {
    let expected = net.expected_reconstruction(components, weights);
    let expected_sq = net.expected_squared_reconstruction(components, weights);
    let u = expected.len() as f64;
    let var = expected_sq
        .iter()
        .zip(expected.iter())
        .map(|(s, e)| s - e * e)
        .sum::<f64>()
        / u;
    var.max(0.0)
}

/// Hidden units whose statistical contribution falls strictly below one
/// sample standard deviation under the mean. Never flags every unit: the
/// strongest unit always survives.
pub fn select_prune_victims(hc: &[f64]) -> Vec<usize> {
    let r = hc.len();
    if r < 2 {
        return Vec::new();
    }
    let mean = hc.iter().sum::<f64>() / r as f64;
    let var = hc.iter().map(|h| (h - mean) * (h - mean)).sum::<f64>() / (r as f64 - 1.0);
    let threshold = mean - var.sqrt();
    let mut victims: Vec<usize> = (0..r).filter(|&i| hc[i] < threshold).collect();
    if victims.len() == r {
        let best = hc
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        victims.retain(|&i| i != best);
    }
    victims
}
