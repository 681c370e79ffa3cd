//! Online density estimation with a self-evolving diagonal-Gaussian mixture.
//!
//! One mixture tracks one domain's input distribution `p(x)`. Every sample
//! passes through a compatibility test (is it novel?) and a vigilance test
//! (does the winning component still have room?). The outcome either adds a
//! component centred on the sample or tunes the winner toward it, and
//! components whose accumulated matching activity falls behind the rest of
//! the mixture are retired on the fly.

use crate::error::{AtlError, Result};
use serde::{Deserialize, Serialize};

/// Floor applied to every per-dimension standard deviation.
pub const WIDTH_FLOOR: f64 = 1e-3;

/// Width of the very first component, created from a single sample.
/// Sized for min-max-scaled inputs: wide enough to not fragment
/// immediately, narrow enough that novelty within the unit cube stays
/// reachable.
pub const INITIAL_WIDTH: f64 = 0.1;

const SNAPSHOT_VERSION: u32 = 1;

/// One diagonal-Gaussian component of the mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    center: Vec<f64>,
    /// Per-dimension standard deviation, kept at or above [`WIDTH_FLOOR`].
    width: Vec<f64>,
    support: u64,
    /// Sample index at which this component was created.
    born: u64,
    /// Accumulated matching degrees since birth.
    matching_sum: f64,
}

impl GaussianComponent {
    /// Builds a component with the given center and (floored) widths.
    pub fn new(center: Vec<f64>, width: Vec<f64>) -> Self {
        assert_eq!(center.len(), width.len());
        let width = width.into_iter().map(|w| w.max(WIDTH_FLOOR)).collect();
        GaussianComponent {
            center,
            width,
            support: 1,
            born: 0,
            matching_sum: 0.0,
        }
    }

    fn from_sample(x: &[f64], width: f64, born: u64) -> Self {
        GaussianComponent {
            center: x.to_vec(),
            width: vec![width.max(WIDTH_FLOOR); x.len()],
            support: 1,
            born,
            matching_sum: 0.0,
        }
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn width(&self) -> &[f64] {
        &self.width
    }

    pub fn support(&self) -> u64 {
        self.support
    }

    pub fn born(&self) -> u64 {
        self.born
    }

    pub fn matching_sum(&self) -> f64 {
        self.matching_sum
    }

    /// Membership of `x` in this component: the weakest per-dimension
    /// Gaussian membership, `min_j exp(-(x_j - mu_j)^2 / (2 sigma_j^2))`.
    pub fn matching_degree(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for ((&xj, &cj), &wj) in x.iter().zip(&self.center).zip(&self.width) {
            let d = xj - cj;
            worst = worst.max(d * d / (2.0 * wj * wj));
        }
        (-worst).exp()
    }

    /// Log of the exactly normalized diagonal Gaussian density at `x`.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        let mut quad = 0.0;
        let mut log_norm = 0.0;
        for ((&xj, &cj), &wj) in x.iter().zip(&self.center).zip(&self.width) {
            let z = (xj - cj) / wj;
            quad += z * z;
            log_norm += wj.ln();
        }
        let u = self.center.len() as f64;
        -0.5 * quad - 0.5 * u * (2.0 * std::f64::consts::PI).ln() - log_norm
    }

    fn squared_distance(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.center)
            .map(|(&xj, &cj)| (xj - cj) * (xj - cj))
            .sum()
    }

    /// Log of the product of per-dimension variances.
    fn log_volume(&self) -> f64 {
        self.width.iter().map(|w| 2.0 * w.ln()).sum()
    }
}

/// How a component's `mu +/- sigma` box relates to the winner's box.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BoxRelation {
    Contained,
    Partial,
    Disjoint,
}

fn box_relation(comp: &GaussianComponent, winner: &GaussianComponent) -> BoxRelation {
    let mut contained = true;
    for j in 0..comp.center.len() {
        let (a_lo, a_hi) = (comp.center[j] - comp.width[j], comp.center[j] + comp.width[j]);
        let (b_lo, b_hi) = (winner.center[j] - winner.width[j], winner.center[j] + winner.width[j]);
        if a_lo > b_hi || b_lo > a_hi {
            return BoxRelation::Disjoint;
        }
        if a_lo < b_lo || a_hi > b_hi {
            contained = false;
        }
    }
    if contained {
        BoxRelation::Contained
    } else {
        BoxRelation::Partial
    }
}

fn norm(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

/// Self-evolving Gaussian mixture for one domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agmm {
    components: Vec<GaussianComponent>,
    input_dim: usize,
    samples_seen: u64,
    /// Newly created components are exempt from pruning for this many
    /// samples; set to the data-chunk size by the trainer.
    exemption_window: u64,
}

impl Agmm {
    /// Empty mixture; the first [`observe`](Self::observe) call creates the
    /// initial component.
    pub fn new(input_dim: usize, exemption_window: u64) -> Result<Self> {
        if input_dim == 0 {
            return Err(AtlError::InvalidConfig("input_dim must be >= 1".into()));
        }
        if exemption_window == 0 {
            return Err(AtlError::InvalidConfig(
                "exemption_window must be >= 1".into(),
            ));
        }
        Ok(Agmm {
            components: Vec::new(),
            input_dim,
            samples_seen: 0,
            exemption_window,
        })
    }

    /// Mixture initialized from its first sample: one component centred on
    /// `x` with width [`INITIAL_WIDTH`].
    pub fn from_sample(x: &[f64], sample_index: u64, exemption_window: u64) -> Result<Self> {
        let mut agmm = Agmm::new(x.len(), exemption_window)?;
        agmm.check_input(x)?;
        agmm.components
            .push(GaussianComponent::from_sample(x, INITIAL_WIDTH, sample_index));
        agmm.samples_seen = sample_index + 1;
        Ok(agmm)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(AtlError::DimensionMismatch {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        for (position, v) in x.iter().enumerate() {
            if !v.is_finite() {
                return Err(AtlError::NonFiniteInput { position });
            }
        }
        Ok(())
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn component_count(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn samples_seen(&self) -> u64 {
        self.samples_seen
    }

    pub fn exemption_window(&self) -> u64 {
        self.exemption_window
    }

    /// Novelty threshold of the compatibility test for a given dimension
    /// count and sigma-rule level `chi`.
    pub fn compatibility_threshold(input_dim: usize, chi: f64) -> f64 {
        let u = input_dim as f64;
        (-(u * chi) / (4.0 - 2.0 * (-u / 2.0).exp())).exp()
    }

    /// Compatibility test: true when `x` lies outside the zone of influence
    /// of every component.
    pub fn is_novel(&self, x: &[f64], chi: f64) -> bool {
        let best = self
            .components
            .iter()
            .map(|c| c.matching_degree(x))
            .fold(f64::NEG_INFINITY, f64::max);
        best < Self::compatibility_threshold(self.input_dim, chi)
    }

    /// Index of the component closest (Euclidean) to `x`; ties break to the
    /// lowest index.
    pub fn find_winner(&self, x: &[f64]) -> usize {
        let mut best = 0;
        let mut best_dist = f64::INFINITY;
        for (i, comp) in self.components.iter().enumerate() {
            let d = comp.squared_distance(x);
            if d < best_dist {
                best_dist = d;
                best = i;
            }
        }
        best
    }

    /// Overlap control parameter for the vigilance test, from the winner's
    /// relation to every other component. Clamped into `[0.1, 1]`.
    pub fn overlap_rho(&self, winner: usize) -> f64 {
        let m = self.components.len();
        debug_assert!(m >= 2);
        let win = &self.components[winner];
        let share = 1.0 / (m as f64 - 1.0);
        let mut rho = 0.0;
        for (i, comp) in self.components.iter().enumerate() {
            if i == winner {
                continue;
            }
            rho += match box_relation(comp, win) {
                BoxRelation::Contained => share,
                BoxRelation::Partial => {
                    let center_gap = norm(
                        comp.center.iter().zip(&win.center).map(|(a, b)| a - b),
                    ) / norm(comp.center.iter().zip(&win.center).map(|(a, b)| a + b))
                        .max(1e-12);
                    let width_gap = norm(
                        comp.width.iter().zip(&win.width).map(|(a, b)| a - b),
                    ) / norm(comp.width.iter().zip(&win.width).map(|(a, b)| a + b))
                        .max(1e-12);
                    share * (center_gap + width_gap)
                }
                BoxRelation::Disjoint => 0.0,
            };
        }
        rho.clamp(0.1, 1.0)
    }

    /// Vigilance test: true when the winning component's volume already
    /// takes up at least a `rho` share of the total, i.e. it has no room to
    /// absorb the sample. Vacuously false for a lone component.
    pub fn winner_has_no_space(&self, winner: usize, rho: f64) -> bool {
        if self.components.len() < 2 {
            return false;
        }
        let log_vols: Vec<f64> = self.components.iter().map(|c| c.log_volume()).collect();
        let max_lv = log_vols.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = log_vols.iter().map(|lv| (lv - max_lv).exp()).sum();
        (log_vols[winner] - max_lv).exp() >= rho * total
    }

    /// Adds a component centred on `x`; its width is the per-dimension
    /// distance to the winning component, floored.
    pub fn add_component(&mut self, x: &[f64], sample_index: u64) {
        let winner = self.find_winner(x);
        let width: Vec<f64> = x
            .iter()
            .zip(&self.components[winner].center)
            .map(|(&xj, &cj)| (xj - cj).abs().max(WIDTH_FLOOR))
            .collect();
        self.components.push(GaussianComponent {
            center: x.to_vec(),
            width,
            support: 1,
            born: sample_index,
            matching_sum: 0.0,
        });
    }

    /// Moves the winner toward `x` and re-estimates its width, then
    /// increments its support.
    pub fn tune_winner(&mut self, winner: usize, x: &[f64]) {
        let comp = &mut self.components[winner];
        let denom = (comp.support + 1) as f64;
        for ((&xj, cj), wj) in x.iter().zip(&mut comp.center).zip(&mut comp.width) {
            *cj += (xj - *cj) / denom;
            let var = *wj * *wj;
            let d = xj - *cj;
            let var = var + (d * d - var) / denom;
            *wj = var.sqrt().max(WIDTH_FLOOR);
        }
        comp.support += 1;
    }

    /// Accrues each component's matching degree for `x`, then removes
    /// components whose activity over their lifespan falls below the
    /// half-sigma rule. Components younger than the exemption window (and
    /// the last survivor) are never removed. Returns the number pruned.
    pub fn update_activity_and_prune(&mut self, x: &[f64]) -> usize {
        for comp in &mut self.components {
            comp.matching_sum += comp.matching_degree(x);
        }
        let m = self.components.len();
        if m < 2 {
            return 0;
        }
        let n = self.samples_seen;
        let phis: Vec<f64> = self
            .components
            .iter()
            .map(|c| c.matching_sum / (n - c.born).max(1) as f64)
            .collect();
        let mean = phis.iter().sum::<f64>() / m as f64;
        let var = phis.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / (m as f64 - 1.0);
        let threshold = mean - 0.5 * var.sqrt();

        let mut keep = vec![true; m];
        for (i, comp) in self.components.iter().enumerate() {
            if phis[i] < threshold && n - comp.born > self.exemption_window {
                keep[i] = false;
            }
        }
        if keep.iter().all(|k| !k) {
            let best = phis
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap_or(0);
            keep[best] = true;
        }
        let mut it = keep.iter();
        self.components.retain(|_| *it.next().unwrap());
        m - self.components.len()
    }

    /// Posterior mixing coefficients at `x`: nonnegative, summing to one.
    ///
    /// Likelihoods use the cheap `sqrt(2 pi min_j sigma_j)` normalizer; if
    /// every likelihood underflows the weights fall back to uniform.
    pub fn mixing_coefficients(&self, x: &[f64]) -> Vec<f64> {
        let m = self.components.len();
        assert!(m >= 1, "mixture not initialized");
        let total_support: u64 = self.components.iter().map(|c| c.support).sum();
        let scores: Vec<f64> = self
            .components
            .iter()
            .map(|c| {
                let quad: f64 = x
                    .iter()
                    .zip(&c.center)
                    .zip(&c.width)
                    .map(|((&xj, &cj), &wj)| {
                        let z = (xj - cj) / wj;
                        z * z
                    })
                    .sum();
                let min_width = c.width.iter().cloned().fold(f64::INFINITY, f64::min);
                let log_lik = -0.5 * quad
                    - 0.5 * (2.0 * std::f64::consts::PI * min_width).ln();
                log_lik + (c.support as f64 / total_support as f64).ln()
            })
            .collect();
        let max_score = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !max_score.is_finite() {
            return vec![1.0 / m as f64; m];
        }
        let mut weights: Vec<f64> = scores.iter().map(|s| (s - max_score).exp()).collect();
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
        weights
    }

    /// Log of the mixture density at `x` with exact Gaussian normalizers and
    /// support-proportional priors.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        assert!(!self.components.is_empty(), "mixture not initialized");
        let total_support: u64 = self.components.iter().map(|c| c.support).sum();
        let terms: Vec<f64> = self
            .components
            .iter()
            .map(|c| c.log_density(x) + (c.support as f64 / total_support as f64).ln())
            .collect();
        let max_t = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        max_t + terms.iter().map(|t| (t - max_t).exp()).sum::<f64>().ln()
    }

    /// Single per-sample entry point: runs the compatibility and vigilance
    /// tests, adds or tunes accordingly, then updates activity and prunes.
    ///
    /// `chi` is the adaptive sigma-rule level supplied by the significance
    /// tracker of the calling phase.
    pub fn observe(&mut self, x: &[f64], chi: f64) -> Result<()> {
        self.check_input(x)?;
        let idx = self.samples_seen;
        self.samples_seen += 1;
        if self.components.is_empty() {
            self.components
                .push(GaussianComponent::from_sample(x, INITIAL_WIDTH, idx));
        } else {
            let winner = self.find_winner(x);
            let add = self.is_novel(x, chi)
                && (self.components.len() == 1 || {
                    let rho = self.overlap_rho(winner);
                    self.winner_has_no_space(winner, rho)
                });
            if add {
                self.add_component(x, idx);
            } else {
                self.tune_winner(winner, x);
            }
        }
        self.update_activity_and_prune(x);
        Ok(())
    }

    /// Versioned JSON snapshot for checkpointing and fixtures.
    pub fn to_json(&self) -> String {
        let snapshot = Snapshot {
            version: SNAPSHOT_VERSION,
            mixture: self.clone(),
        };
        serde_json::to_string(&snapshot).expect("snapshot serialization cannot fail")
    }

    /// Restores a mixture from [`to_json`](Self::to_json) output.
    pub fn from_json(text: &str) -> Result<Self> {
        let snapshot: Snapshot =
            serde_json::from_str(text).map_err(|e| AtlError::Serialization(e.to_string()))?;
        if snapshot.version != SNAPSHOT_VERSION {
            return Err(AtlError::Serialization(format!(
                "unsupported snapshot version {}",
                snapshot.version
            )));
        }
        for comp in &snapshot.mixture.components {
            if comp.center.len() != snapshot.mixture.input_dim {
                return Err(AtlError::Serialization(
                    "component dimension does not match input_dim".into(),
                ));
            }
        }
        Ok(snapshot.mixture)
    }
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    version: u32,
    mixture: Agmm,
}
