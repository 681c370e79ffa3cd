//! The per-chunk learning cycle: density-model updates, a generative pass
//! over unlabelled target samples, a discriminative pass over labelled
//! source samples, and a divergence step that aligns the hidden
//! representations of the two domains. Width adjustment runs inside both
//! passes, steered by the per-domain density model.

use crate::agmm::{Agmm, GaussianComponent, WIDTH_FLOOR};
use crate::error::{AtlError, Result};
use crate::network::{corrupt, sigmoid, softmax, ElasticNetwork};
use crate::significance::{bias_sq, select_prune_victims, NsTracker};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

/// Floor applied to normalized activation profiles before taking logs.
pub const PROB_FLOOR: f64 = 1e-8;

/// Hyper-parameters and feature flags for a run.
#[derive(Debug, Clone)]
pub struct TrainerConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    /// Passes over each chunk; 1 means strict single-pass learning.
    pub epochs_per_batch: usize,
    /// Fraction of input attributes zeroed by the masking noise.
    pub noise_fraction: f64,
    /// Skip the alignment step (ablation A).
    pub disable_kl: bool,
    /// Replace the mixtures with single running Gaussians and add one
    /// hidden unit per grow event (ablation B).
    pub disable_agmm_ns: bool,
    /// Freeze the hidden width (ablation C).
    pub disable_structural: bool,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            learning_rate: 0.01,
            momentum: 0.95,
            epochs_per_batch: 1,
            noise_fraction: 0.1,
            disable_kl: false,
            disable_agmm_ns: false,
            disable_structural: false,
            seed: 0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(AtlError::InvalidConfig("learning_rate must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(AtlError::InvalidConfig("momentum must be in [0, 1)".into()));
        }
        if self.epochs_per_batch == 0 {
            return Err(AtlError::InvalidConfig("epochs_per_batch must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.noise_fraction) {
            return Err(AtlError::InvalidConfig(
                "noise_fraction must be in [0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// Labelled batch drawn from the source domain.
#[derive(Debug, Clone)]
pub struct SourceBatch {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
}

/// Unlabelled batch drawn from the target domain. The absence of a label
/// field is what keeps target labels out of every trainer operation.
#[derive(Debug, Clone)]
pub struct TargetBatch {
    pub features: Array2<f64>,
}

/// Density estimate of one domain's inputs: the self-evolving mixture, or
/// a single running Gaussian when the mixture is ablated.
#[derive(Debug, Clone)]
pub enum DensityModel {
    Mixture(Agmm),
    Single(RunningGaussian),
}

impl DensityModel {
    fn observe(&mut self, x: &[f64], chi: f64) -> Result<()> {
        match self {
            DensityModel::Mixture(agmm) => agmm.observe(x, chi),
            DensityModel::Single(g) => {
                g.observe(x);
                Ok(())
            }
        }
    }

    pub fn components(&self) -> &[GaussianComponent] {
        match self {
            DensityModel::Mixture(agmm) => agmm.components(),
            DensityModel::Single(g) => g.as_component(),
        }
    }

    pub fn mixing_weights(&self, x: &[f64]) -> Vec<f64> {
        match self {
            DensityModel::Mixture(agmm) => agmm.mixing_coefficients(x),
            DensityModel::Single(_) => vec![1.0],
        }
    }

    pub fn component_count(&self) -> usize {
        self.components().len()
    }

    /// Units added per grow event: the mixture size, or one without it.
    pub fn grow_count(&self) -> usize {
        match self {
            DensityModel::Mixture(agmm) => agmm.component_count(),
            DensityModel::Single(_) => 1,
        }
    }
}

/// Incrementally estimated diagonal Gaussian over one domain's inputs.
#[derive(Debug, Clone)]
pub struct RunningGaussian {
    mean: Vec<f64>,
    m2: Vec<f64>,
    count: u64,
    snapshot: Vec<GaussianComponent>,
}

impl RunningGaussian {
    pub fn new(input_dim: usize) -> Self {
        RunningGaussian {
            mean: vec![0.0; input_dim],
            m2: vec![0.0; input_dim],
            count: 0,
            snapshot: Vec::new(),
        }
    }

    pub fn observe(&mut self, x: &[f64]) {
        self.count += 1;
        let n = self.count as f64;
        for ((&xj, mean), m2) in x.iter().zip(&mut self.mean).zip(&mut self.m2) {
            let delta = xj - *mean;
            *mean += delta / n;
            *m2 += delta * (xj - *mean);
        }
        let width: Vec<f64> = self
            .m2
            .iter()
            .map(|&m2| (m2 / n).sqrt().max(WIDTH_FLOOR))
            .collect();
        self.snapshot = vec![GaussianComponent::new(self.mean.clone(), width)];
    }

    fn as_component(&self) -> &[GaussianComponent] {
        &self.snapshot
    }
}

/// Gradients of the classification loss.
#[derive(Debug, Clone)]
pub struct ClassifierGradients {
    pub w_in: Array2<f64>,
    pub b: Array1<f64>,
    pub w_out: Array2<f64>,
    pub c: Array1<f64>,
}

/// Gradients of the reconstruction loss.
#[derive(Debug, Clone)]
pub struct DecoderGradients {
    pub w_in: Array2<f64>,
    pub b: Array1<f64>,
    pub w_dec: Array2<f64>,
    pub d: Array1<f64>,
}

/// Gradients of the alignment loss (encoder parameters only).
#[derive(Debug, Clone)]
pub struct EncoderGradients {
    pub w_in: Array2<f64>,
    pub b: Array1<f64>,
}

pub fn one_hot(label: usize, class_count: usize) -> Array1<f64> {
    let mut v = Array1::zeros(class_count);
    v[label] = 1.0;
    v
}

fn outer(col: ArrayView1<f64>, row: ArrayView1<f64>) -> Array2<f64> {
    let col = col.insert_axis(Axis(1));
    let row = row.insert_axis(Axis(0));
    &col * &row
}

/// Negative log-likelihood of the true class under the softmax head.
pub fn cross_entropy_loss(net: &ElasticNetwork, x: ArrayView1<f64>, label: usize) -> f64 {
    let (_, probs) = net.forward_classify(x);
    -probs[label].max(1e-300).ln()
}

pub fn classifier_gradients(
    net: &ElasticNetwork,
    x: ArrayView1<f64>,
    label: usize,
) -> ClassifierGradients {
    let (hidden, probs) = net.forward_classify(x);
    let mut delta_out = probs;
    delta_out[label] -= 1.0;
    let grad_w_out = outer(hidden.view(), delta_out.view());
    let dh = net.w_out().dot(&delta_out);
    let delta_h = &dh * &hidden * (1.0 - &hidden);
    ClassifierGradients {
        w_in: outer(x, delta_h.view()),
        b: delta_h,
        w_out: grad_w_out,
        c: delta_out,
    }
}

/// Squared reconstruction error of the decoder against the clean input.
pub fn reconstruction_loss(
    net: &ElasticNetwork,
    x_tilde: ArrayView1<f64>,
    x_clean: ArrayView1<f64>,
) -> f64 {
    let (_, recon) = net.forward_reconstruct(x_tilde);
    recon
        .iter()
        .zip(x_clean.iter())
        .map(|(r, x)| (r - x) * (r - x))
        .sum()
}

pub fn decoder_gradients(
    net: &ElasticNetwork,
    x_tilde: ArrayView1<f64>,
    x_clean: ArrayView1<f64>,
) -> DecoderGradients {
    let (hidden, recon) = net.forward_reconstruct(x_tilde);
    let delta_out = (&recon - &x_clean) * 2.0 * &recon * (1.0 - &recon);
    let grad_w_dec = outer(hidden.view(), delta_out.view());
    let dh = net.w_dec().dot(&delta_out);
    let delta_h = &dh * &hidden * (1.0 - &hidden);
    DecoderGradients {
        w_in: outer(x_tilde, delta_h.view()),
        b: delta_h,
        w_dec: grad_w_dec,
        d: delta_out,
    }
}

/// Batch-mean hidden activations, normalized to the simplex with a floor
/// that keeps the logs finite.
fn activation_profile(net: &ElasticNetwork, batch: ArrayView2<f64>) -> (Array2<f64>, Array1<f64>) {
    let n = batch.nrows();
    let r = net.hidden_count();
    let mut hiddens = Array2::zeros((n, r));
    for (i, x) in batch.rows().into_iter().enumerate() {
        hiddens.row_mut(i).assign(&net.hidden(x));
    }
    let pi = hiddens.mean_axis(Axis(0)).expect("non-empty batch");
    (hiddens, pi)
}

fn normalize_with_floor(pi: &Array1<f64>) -> Array1<f64> {
    let total = pi.sum();
    let mut p = pi.mapv(|v| (v / total).max(PROB_FLOOR));
    let renorm = p.sum();
    p.mapv_inplace(|v| v / renorm);
    p
}

pub(crate) fn symmetric_kl(p: &Array1<f64>, q: &Array1<f64>) -> f64 {
    p.iter()
        .zip(q.iter())
        .map(|(&pi, &qi)| pi * (pi / qi).ln() + qi * (qi / pi).ln())
        .sum()
}

/// Symmetric divergence between the mean hidden-activation profiles of a
/// source batch and a target batch.
pub fn kl_alignment_loss(
    net: &ElasticNetwork,
    source: ArrayView2<f64>,
    target: ArrayView2<f64>,
) -> f64 {
    let (_, pi_s) = activation_profile(net, source);
    let (_, pi_t) = activation_profile(net, target);
    symmetric_kl(&normalize_with_floor(&pi_s), &normalize_with_floor(&pi_t))
}

/// Gradients of the alignment loss with respect to the encoder. The floor
/// in the profile normalization is treated as inactive.
pub fn kl_alignment_gradients(
    net: &ElasticNetwork,
    source: ArrayView2<f64>,
    target: ArrayView2<f64>,
) -> EncoderGradients {
    let (hid_s, pi_s) = activation_profile(net, source);
    let (hid_t, pi_t) = activation_profile(net, target);
    let cap_s = normalize_with_floor(&pi_s);
    let cap_t = normalize_with_floor(&pi_t);

    // d loss / d profile for each domain
    let g_s = Array1::from_iter(
        cap_s
            .iter()
            .zip(cap_t.iter())
            .map(|(&s, &t)| (s / t).ln() + 1.0 - t / s),
    );
    let g_t = Array1::from_iter(
        cap_t
            .iter()
            .zip(cap_s.iter())
            .map(|(&t, &s)| (t / s).ln() + 1.0 - s / t),
    );

    // back through the simplex normalization into the raw batch means
    let to_pi = |g: &Array1<f64>, cap: &Array1<f64>, pi: &Array1<f64>| {
        let dot = g
            .iter()
            .zip(cap.iter())
            .map(|(&gi, &ci)| gi * ci)
            .sum::<f64>();
        let total = pi.sum();
        g.mapv(|gi| gi / total) - (dot / total)
    };
    let dpi_s = to_pi(&g_s, &cap_s, &pi_s);
    let dpi_t = to_pi(&g_t, &cap_t, &pi_t);

    let u = net.input_dim();
    let r = net.hidden_count();
    let mut grad_w_in = Array2::zeros((u, r));
    let mut grad_b = Array1::zeros(r);
    let mut accumulate = |batch: ArrayView2<f64>, hiddens: &Array2<f64>, dpi: &Array1<f64>| {
        let scale = 1.0 / batch.nrows() as f64;
        for (x, h) in batch.rows().into_iter().zip(hiddens.rows()) {
            let delta = Array1::from_iter(
                h.iter()
                    .zip(dpi.iter())
                    .map(|(&hi, &di)| di * scale * hi * (1.0 - hi)),
            );
            grad_w_in += &outer(x, delta.view());
            grad_b += &delta;
        }
    };
    accumulate(source, &hid_s, &dpi_s);
    accumulate(target, &hid_t, &dpi_t);
    EncoderGradients {
        w_in: grad_w_in,
        b: grad_b,
    }
}

#[derive(Debug, Clone)]
struct Velocities {
    w_in: Array2<f64>,
    b: Array1<f64>,
    w_out: Array2<f64>,
    c: Array1<f64>,
    w_dec: Array2<f64>,
    d: Array1<f64>,
}

impl Velocities {
    fn zeros(input_dim: usize, hidden: usize, class_count: usize) -> Self {
        Velocities {
            w_in: Array2::zeros((input_dim, hidden)),
            b: Array1::zeros(hidden),
            w_out: Array2::zeros((hidden, class_count)),
            c: Array1::zeros(class_count),
            w_dec: Array2::zeros((hidden, input_dim)),
            d: Array1::zeros(input_dim),
        }
    }

    /// Pads every hidden-indexed buffer with zeros up to the new width.
    fn grow_to(&mut self, hidden: usize) {
        let (u, m) = (self.w_in.nrows(), self.w_out.ncols());
        let mut w_in = Array2::zeros((u, hidden));
        w_in.slice_mut(ndarray::s![.., ..self.w_in.ncols()])
            .assign(&self.w_in);
        self.w_in = w_in;
        let mut b = Array1::zeros(hidden);
        b.slice_mut(ndarray::s![..self.b.len()]).assign(&self.b);
        self.b = b;
        let mut w_out = Array2::zeros((hidden, m));
        w_out
            .slice_mut(ndarray::s![..self.w_out.nrows(), ..])
            .assign(&self.w_out);
        self.w_out = w_out;
        let mut w_dec = Array2::zeros((hidden, u));
        w_dec
            .slice_mut(ndarray::s![..self.w_dec.nrows(), ..])
            .assign(&self.w_dec);
        self.w_dec = w_dec;
    }

    fn keep(&mut self, keep: &[usize]) {
        self.w_in = self.w_in.select(Axis(1), keep);
        self.b = self.b.select(Axis(0), keep);
        self.w_out = self.w_out.select(Axis(0), keep);
        self.w_dec = self.w_dec.select(Axis(0), keep);
    }
}

/// One momentum step `v <- momentum v - lr g; w <- w + v`. Steps with a
/// non-finite gradient are skipped; returns whether the step applied.
fn sgd_step_mat(
    param: &mut Array2<f64>,
    vel: &mut Array2<f64>,
    grad: &Array2<f64>,
    lr: f64,
    momentum: f64,
) -> bool {
    if grad.iter().any(|g| !g.is_finite()) {
        return false;
    }
    vel.zip_mut_with(grad, |v, &g| *v = momentum * *v - lr * g);
    param.zip_mut_with(vel, |p, &v| *p += v);
    true
}

fn sgd_step_vec(
    param: &mut Array1<f64>,
    vel: &mut Array1<f64>,
    grad: &Array1<f64>,
    lr: f64,
    momentum: f64,
) -> bool {
    if grad.iter().any(|g| !g.is_finite()) {
        return false;
    }
    vel.zip_mut_with(grad, |v, &g| *v = momentum * *v - lr * g);
    param.zip_mut_with(vel, |p, &v| *p += v);
    true
}

/// Everything a run mutates: the network, the per-domain density models,
/// the per-phase significance trackers, momentum state and the RNG.
#[derive(Debug, Clone)]
pub struct AtlState {
    net: ElasticNetwork,
    density_source: DensityModel,
    density_target: DensityModel,
    ns_disc: NsTracker,
    ns_gen: NsTracker,
    vel: Velocities,
    rng: ChaCha8Rng,
    chunk_counter: u64,
    skipped_steps: u64,
}

/// Per-chunk result: test-step predictions plus the training wall time.
#[derive(Debug, Clone)]
pub struct ChunkOutcome {
    pub source_predictions: Vec<usize>,
    pub target_predictions: Vec<usize>,
    pub train_seconds: f64,
}

impl AtlState {
    /// Fresh state with a single hidden unit. `exemption_window` is the
    /// pruning grace period of the density mixtures, normally the chunk
    /// size.
    pub fn new(
        input_dim: usize,
        class_count: usize,
        exemption_window: u64,
        config: &TrainerConfig,
    ) -> Result<Self> {
        config.validate()?;
        if class_count < 2 {
            return Err(AtlError::InvalidConfig("class_count must be >= 2".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let net = ElasticNetwork::new(input_dim, class_count, &mut rng)?;
        let (density_source, density_target) = if config.disable_agmm_ns {
            (
                DensityModel::Single(RunningGaussian::new(input_dim)),
                DensityModel::Single(RunningGaussian::new(input_dim)),
            )
        } else {
            (
                DensityModel::Mixture(Agmm::new(input_dim, exemption_window)?),
                DensityModel::Mixture(Agmm::new(input_dim, exemption_window)?),
            )
        };
        Ok(AtlState {
            vel: Velocities::zeros(input_dim, net.hidden_count(), class_count),
            net,
            density_source,
            density_target,
            ns_disc: NsTracker::new(),
            ns_gen: NsTracker::new(),
            rng,
            chunk_counter: 0,
            skipped_steps: 0,
        })
    }

    pub fn net(&self) -> &ElasticNetwork {
        &self.net
    }

    pub fn hidden_nodes(&self) -> usize {
        self.net.hidden_count()
    }

    pub fn source_components(&self) -> usize {
        self.density_source.component_count()
    }

    pub fn target_components(&self) -> usize {
        self.density_target.component_count()
    }

    pub fn chunk_counter(&self) -> u64 {
        self.chunk_counter
    }

    /// Parameter updates skipped because a gradient was non-finite.
    pub fn skipped_steps(&self) -> u64 {
        self.skipped_steps
    }

    /// Number of `f64` values held by the mutable state, counted from the
    /// live buffers. Depends on the current width and mixture sizes only,
    /// never on how many samples have been processed.
    pub fn state_value_count(&self) -> usize {
        let net = self.net.w_in().len()
            + self.net.b_hidden().len()
            + self.net.w_out().len()
            + self.net.c_out().len()
            + self.net.w_dec().len()
            + self.net.d_dec().len();
        let vel = self.vel.w_in.len()
            + self.vel.b.len()
            + self.vel.w_out.len()
            + self.vel.c.len()
            + self.vel.w_dec.len()
            + self.vel.d.len();
        let density = |d: &DensityModel| -> usize {
            d.components()
                .iter()
                .map(|c| c.center().len() + c.width().len() + 3)
                .sum::<usize>()
                + match d {
                    DensityModel::Mixture(_) => 2,
                    DensityModel::Single(g) => g.mean.len() + g.m2.len() + 1,
                }
        };
        let trackers = 12; // two trackers of five running values plus last signals
        net + vel + density(&self.density_source) + density(&self.density_target) + trackers
    }

    fn grow_units(&mut self, count: usize) {
        self.net.grow(count, &mut self.rng);
        self.vel.grow_to(self.net.hidden_count());
    }

    fn prune_units(&mut self, victims: &[usize]) {
        let r = self.net.hidden_count();
        if self.net.prune(victims).is_ok() {
            let keep: Vec<usize> = (0..r).filter(|i| !victims.contains(i)).collect();
            self.vel.keep(&keep);
        }
    }

    fn apply_classifier(&mut self, g: &ClassifierGradients, config: &TrainerConfig) {
        let (lr, mom) = (config.learning_rate, config.momentum);
        let (w_in, b, w_out, c, _, _) = self.net.params_mut();
        let mut skipped = 0;
        skipped += !sgd_step_mat(w_in, &mut self.vel.w_in, &g.w_in, lr, mom) as u64;
        skipped += !sgd_step_vec(b, &mut self.vel.b, &g.b, lr, mom) as u64;
        skipped += !sgd_step_mat(w_out, &mut self.vel.w_out, &g.w_out, lr, mom) as u64;
        skipped += !sgd_step_vec(c, &mut self.vel.c, &g.c, lr, mom) as u64;
        self.skipped_steps += skipped;
    }

    fn apply_decoder(&mut self, g: &DecoderGradients, config: &TrainerConfig) {
        let (lr, mom) = (config.learning_rate, config.momentum);
        let (w_in, b, _, _, w_dec, d) = self.net.params_mut();
        let mut skipped = 0;
        skipped += !sgd_step_mat(w_in, &mut self.vel.w_in, &g.w_in, lr, mom) as u64;
        skipped += !sgd_step_vec(b, &mut self.vel.b, &g.b, lr, mom) as u64;
        skipped += !sgd_step_mat(w_dec, &mut self.vel.w_dec, &g.w_dec, lr, mom) as u64;
        skipped += !sgd_step_vec(d, &mut self.vel.d, &g.d, lr, mom) as u64;
        self.skipped_steps += skipped;
    }

    fn apply_encoder(&mut self, g: &EncoderGradients, config: &TrainerConfig) {
        let (lr, mom) = (config.learning_rate, config.momentum);
        let (w_in, b, ..) = self.net.params_mut();
        let mut skipped = 0;
        skipped += !sgd_step_mat(w_in, &mut self.vel.w_in, &g.w_in, lr, mom) as u64;
        skipped += !sgd_step_vec(b, &mut self.vel.b, &g.b, lr, mom) as u64;
        self.skipped_steps += skipped;
    }

    /// Width adjustment after a discriminative update: grow on the bias
    /// rule against the one-hot target, prune on the variance rule. Both
    /// signals are taken on the probability scale, keeping them bounded so
    /// the adaptive sigma levels stay meaningful.
    fn structural_classifier_step(&mut self, x: &[f64], target: &Array1<f64>) {
        if self.density_source.component_count() == 0 {
            return;
        }
        let weights = self.density_source.mixing_weights(x);
        let expected_probs = {
            let comps = self.density_source.components();
            softmax(&self.net.expected_output(comps, &weights))
        };
        let bias = bias_sq(expected_probs.as_slice().unwrap(), target.as_slice().unwrap());
        if self.ns_disc.update_and_check_grow(bias) {
            let count = self.density_source.grow_count();
            self.grow_units(count);
        }
        let (expected_probs, expected_sq) = {
            let comps = self.density_source.components();
            let e_h = self.net.expected_hidden(comps, &weights);
            let mut out = e_h.dot(self.net.w_out());
            out += self.net.c_out();
            let mut sq = e_h.mapv(|h| h * h).dot(self.net.w_out());
            sq += self.net.c_out();
            (softmax(&out), softmax(&sq))
        };
        let var = (expected_sq
            .iter()
            .zip(expected_probs.iter())
            .map(|(s, e)| s - e * e)
            .sum::<f64>()
            / expected_probs.len() as f64)
            .max(0.0);
        if self.ns_disc.update_and_check_prune(var) {
            let victims = {
                let comps = self.density_source.components();
                let hc = self.net.hidden_contributions(comps);
                select_prune_victims(hc.as_slice().unwrap())
            };
            if !victims.is_empty() {
                self.prune_units(&victims);
            }
        }
    }

    /// Width adjustment after a generative update, driven by the expected
    /// reconstruction against the clean input.
    fn structural_decoder_step(&mut self, x_clean: &[f64]) {
        if self.density_target.component_count() == 0 {
            return;
        }
        let weights = self.density_target.mixing_weights(x_clean);
        let expected_recon = {
            let comps = self.density_target.components();
            self.net.expected_reconstruction(comps, &weights)
        };
        let bias = bias_sq(expected_recon.as_slice().unwrap(), x_clean);
        if self.ns_gen.update_and_check_grow(bias) {
            let count = self.density_target.grow_count();
            self.grow_units(count);
        }
        let (expected_recon, expected_sq) = {
            let comps = self.density_target.components();
            let e_h = self.net.expected_hidden(comps, &weights);
            let mut out = e_h.dot(self.net.w_dec());
            out += self.net.d_dec();
            out.mapv_inplace(sigmoid);
            let mut sq = e_h.mapv(|h| h * h).dot(self.net.w_dec());
            sq += self.net.d_dec();
            sq.mapv_inplace(sigmoid);
            (out, sq)
        };
        let var = (expected_sq
            .iter()
            .zip(expected_recon.iter())
            .map(|(s, e)| s - e * e)
            .sum::<f64>()
            / expected_recon.len() as f64)
            .max(0.0);
        if self.ns_gen.update_and_check_prune(var) {
            let victims = {
                let comps = self.density_target.components();
                let hc = self.net.hidden_contributions(comps);
                select_prune_victims(hc.as_slice().unwrap())
            };
            if !victims.is_empty() {
                self.prune_units(&victims);
            }
        }
    }

    /// Supervised pass over a labelled source batch, one momentum step per
    /// sample, with width adjustment unless structural learning is off.
    pub fn discriminative_phase(&mut self, batch: &SourceBatch, config: &TrainerConfig) {
        let class_count = self.net.class_count();
        for (x, &label) in batch.features.rows().into_iter().zip(&batch.labels) {
            let grads = classifier_gradients(&self.net, x, label);
            self.apply_classifier(&grads, config);
            if !config.disable_structural {
                let target = one_hot(label, class_count);
                self.structural_classifier_step(x.as_slice().unwrap(), &target);
            }
        }
    }

    /// Denoising pass over an unlabelled target batch.
    pub fn generative_phase(&mut self, batch: &TargetBatch, config: &TrainerConfig) {
        for x in batch.features.rows() {
            let x_tilde = corrupt(x, config.noise_fraction, &mut self.rng);
            let grads = decoder_gradients(&self.net, x_tilde.view(), x);
            self.apply_decoder(&grads, config);
            if !config.disable_structural {
                self.structural_decoder_step(x.as_slice().unwrap());
            }
        }
    }

    /// One encoder step on the symmetric divergence between the domains'
    /// activation profiles. Skipped under ablation A or an empty batch.
    pub fn kl_phase(&mut self, source: &SourceBatch, target: &TargetBatch, config: &TrainerConfig) {
        if config.disable_kl
            || source.features.nrows() == 0
            || target.features.nrows() == 0
        {
            return;
        }
        let grads =
            kl_alignment_gradients(&self.net, source.features.view(), target.features.view());
        self.apply_encoder(&grads, config);
    }

    fn check_batch_dims(&self, source: &SourceBatch, target: &TargetBatch) -> Result<()> {
        let u = self.net.input_dim();
        for cols in [source.features.ncols(), target.features.ncols()] {
            if cols != u {
                return Err(AtlError::DimensionMismatch {
                    expected: u,
                    got: cols,
                });
            }
        }
        if source.features.nrows() != source.labels.len() {
            return Err(AtlError::DimensionMismatch {
                expected: source.features.nrows(),
                got: source.labels.len(),
            });
        }
        if let Some(&bad) = source.labels.iter().find(|&&l| l >= self.net.class_count()) {
            return Err(AtlError::InvalidConfig(format!(
                "label {bad} out of range for {} classes",
                self.net.class_count()
            )));
        }
        Ok(())
    }

    /// Training-only pass over one chunk: density updates first, then the
    /// generative, discriminative and alignment phases, repeated for the
    /// configured number of epochs. The chunk is never revisited.
    pub fn train_chunk(
        &mut self,
        source: &SourceBatch,
        target: &TargetBatch,
        config: &TrainerConfig,
    ) -> Result<()> {
        self.check_batch_dims(source, target)?;
        for x in source.features.rows() {
            let chi = self.ns_disc.chi();
            self.density_source.observe(x.as_slice().unwrap(), chi)?;
        }
        for x in target.features.rows() {
            let chi = self.ns_gen.chi();
            self.density_target.observe(x.as_slice().unwrap(), chi)?;
        }
        for _ in 0..config.epochs_per_batch {
            self.generative_phase(target, config);
            self.discriminative_phase(source, config);
            self.kl_phase(source, target, config);
        }
        self.chunk_counter += 1;
        Ok(())
    }

    /// Prequential step: predict every sample of both batches with the
    /// current network, then train on the chunk.
    pub fn process_chunk(
        &mut self,
        source: &SourceBatch,
        target: &TargetBatch,
        config: &TrainerConfig,
    ) -> Result<ChunkOutcome> {
        self.check_batch_dims(source, target)?;
        let source_predictions = source
            .features
            .rows()
            .into_iter()
            .map(|x| self.net.predict(x))
            .collect();
        let target_predictions = target
            .features
            .rows()
            .into_iter()
            .map(|x| self.net.predict(x))
            .collect();
        let start = Instant::now();
        self.train_chunk(source, target, config)?;
        Ok(ChunkOutcome {
            source_predictions,
            target_predictions,
            train_seconds: start.elapsed().as_secs_f64(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    fn toy_source(n: usize) -> SourceBatch {
        let mut features = Array2::zeros((n, 2));
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let t = i as f64 / n as f64;
            if i % 2 == 0 {
                features[[i, 0]] = 0.1 + 0.1 * t;
                features[[i, 1]] = 0.2;
                labels.push(0);
            } else {
                features[[i, 0]] = 0.8 + 0.1 * t;
                features[[i, 1]] = 0.9;
                labels.push(1);
            }
        }
        SourceBatch { features, labels }
    }

    fn toy_target(n: usize) -> TargetBatch {
        let mut features = Array2::zeros((n, 2));
        for i in 0..n {
            let t = i as f64 / n as f64;
            features[[i, 0]] = 0.5 + 0.3 * (6.0 * t).sin() * 0.5;
            features[[i, 1]] = 0.5 - 0.3 * (6.0 * t).cos() * 0.5;
        }
        TargetBatch { features }
    }

    #[test]
    fn config_validation() {
        assert!(TrainerConfig::default().validate().is_ok());
        let bad = TrainerConfig {
            epochs_per_batch: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainerConfig {
            momentum: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainerConfig {
            noise_fraction: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn sgd_momentum_unrolls_as_expected() {
        let mut param = Array1::from_elem(1, 0.0);
        let mut vel = Array1::zeros(1);
        let grad = Array1::from_elem(1, 1.0);
        sgd_step_vec(&mut param, &mut vel, &grad, 0.01, 0.95);
        assert_relative_eq!(param[0], -0.01, epsilon = 1e-12);
        sgd_step_vec(&mut param, &mut vel, &grad, 0.01, 0.95);
        assert_relative_eq!(param[0], -0.0295, epsilon = 1e-12);
    }

    #[test]
    fn sgd_without_momentum_is_plain_descent() {
        let mut param = Array1::from_elem(1, 1.0);
        let mut vel = Array1::zeros(1);
        let grad = Array1::from_elem(1, 2.0);
        sgd_step_vec(&mut param, &mut vel, &grad, 0.1, 0.0);
        assert_relative_eq!(param[0], 0.8, epsilon = 1e-12);
    }

    #[test]
    fn sgd_velocity_decays_once_gradient_vanishes() {
        let mut param = Array1::from_elem(1, 0.0);
        let mut vel = Array1::zeros(1);
        sgd_step_vec(&mut param, &mut vel, &Array1::from_elem(1, 1.0), 0.01, 0.5);
        let zero = Array1::zeros(1);
        for _ in 0..100 {
            sgd_step_vec(&mut param, &mut vel, &zero, 0.01, 0.5);
        }
        assert!(vel[0].abs() < 1e-20);
    }

    #[test]
    fn sgd_skips_non_finite_gradients() {
        let mut param = Array1::from_elem(1, 1.0);
        let mut vel = Array1::zeros(1);
        let grad = Array1::from_elem(1, f64::NAN);
        assert!(!sgd_step_vec(&mut param, &mut vel, &grad, 0.1, 0.9));
        assert_eq!(param[0], 1.0);
    }

    #[test]
    fn symmetric_kl_worked_example() {
        let p = array![0.8, 0.2];
        let q = array![0.5, 0.5];
        assert_relative_eq!(symmetric_kl(&p, &q), 0.4158883083, epsilon = 1e-9);
        assert_relative_eq!(
            symmetric_kl(&p, &q),
            symmetric_kl(&q, &p),
            epsilon = 1e-15
        );
    }

    #[test]
    fn kl_loss_zero_for_identical_batches() {
        let config = TrainerConfig::default();
        let state = AtlState::new(2, 2, 10, &config).unwrap();
        let batch = toy_target(8);
        let loss = kl_alignment_loss(state.net(), batch.features.view(), batch.features.view());
        assert_eq!(loss, 0.0);
        let grads =
            kl_alignment_gradients(state.net(), batch.features.view(), batch.features.view());
        assert!(grads.w_in.iter().all(|&g| g.abs() < 1e-12));
        assert!(grads.b.iter().all(|&g| g.abs() < 1e-12));
    }

    #[test]
    fn cross_entropy_decreases_on_toy_batch() {
        let config = TrainerConfig {
            disable_structural: true,
            disable_kl: true,
            ..Default::default()
        };
        let mut state = AtlState::new(2, 2, 10, &config).unwrap();
        state.grow_units(4);
        let batch = toy_source(10);
        let mean_loss = |state: &AtlState| {
            batch
                .features
                .rows()
                .into_iter()
                .zip(&batch.labels)
                .map(|(x, &l)| cross_entropy_loss(state.net(), x, l))
                .sum::<f64>()
                / batch.labels.len() as f64
        };
        let before = mean_loss(&state);
        for _ in 0..200 {
            state.discriminative_phase(&batch, &config);
        }
        let after = mean_loss(&state);
        assert!(
            after < before,
            "loss did not decrease: {before} -> {after}"
        );
    }

    #[test]
    fn reconstruction_improves_on_toy_batch() {
        let config = TrainerConfig {
            disable_structural: true,
            disable_kl: true,
            noise_fraction: 0.0,
            ..Default::default()
        };
        let mut state = AtlState::new(2, 2, 10, &config).unwrap();
        state.grow_units(5);
        let batch = toy_target(10);
        let mean_loss = |state: &AtlState| {
            batch
                .features
                .rows()
                .into_iter()
                .map(|x| reconstruction_loss(state.net(), x, x))
                .sum::<f64>()
                / batch.features.nrows() as f64
        };
        let before = mean_loss(&state);
        for _ in 0..100 {
            state.generative_phase(&batch, &config);
        }
        let after = mean_loss(&state);
        assert!(
            after < before,
            "reconstruction did not improve: {before} -> {after}"
        );
    }

    #[test]
    fn structural_flag_freezes_width() {
        let config = TrainerConfig {
            disable_structural: true,
            ..Default::default()
        };
        let mut state = AtlState::new(2, 2, 5, &config).unwrap();
        let source = toy_source(30);
        let target = toy_target(30);
        let before = state.hidden_nodes();
        state.train_chunk(&source, &target, &config).unwrap();
        assert_eq!(state.hidden_nodes(), before);
    }

    #[test]
    fn mixture_grow_count_tracks_components_single_is_one() {
        let mut agmm = Agmm::from_sample(&[0.0], 0, 5).unwrap();
        for (i, x) in [[10.0], [20.0], [30.0]].iter().enumerate() {
            agmm.add_component(x, i as u64 + 1);
        }
        assert_eq!(agmm.component_count(), 4);
        let mixture = DensityModel::Mixture(agmm);
        assert_eq!(mixture.grow_count(), 4);
        let mut rg = RunningGaussian::new(2);
        rg.observe(&[0.5, 0.5]);
        rg.observe(&[0.7, 0.1]);
        let single = DensityModel::Single(rg);
        assert_eq!(single.grow_count(), 1);
        assert_eq!(single.component_count(), 1);
        assert_eq!(single.mixing_weights(&[0.0, 0.0]), vec![1.0]);
    }

    #[test]
    fn grow_units_keeps_velocity_shapes() {
        let config = TrainerConfig::default();
        let mut state = AtlState::new(3, 2, 5, &config).unwrap();
        state.grow_units(4);
        assert_eq!(state.vel.w_in.dim(), (3, 5));
        assert_eq!(state.vel.w_out.dim(), (5, 2));
        assert_eq!(state.vel.w_dec.dim(), (5, 3));
        assert_eq!(state.vel.b.len(), 5);
        state.prune_units(&[0, 2]);
        assert_eq!(state.hidden_nodes(), 3);
        assert_eq!(state.vel.w_in.dim(), (3, 3));
        assert_eq!(state.vel.w_out.dim(), (3, 2));
    }

    #[test]
    fn process_chunk_predicts_before_training() {
        let config = TrainerConfig::default();
        let mut state = AtlState::new(2, 2, 30, &config).unwrap();
        let source = toy_source(30);
        let target = toy_target(30);
        let frozen = state.net().clone();
        let outcome = state.process_chunk(&source, &target, &config).unwrap();
        // predictions must match what the pre-training network would say
        for (x, &p) in source.features.rows().into_iter().zip(&outcome.source_predictions) {
            assert_eq!(frozen.predict(x), p);
        }
        assert_eq!(outcome.target_predictions.len(), 30);
        assert_eq!(state.chunk_counter(), 1);
    }

    #[test]
    fn chunk_processing_is_deterministic() {
        let run = || {
            let config = TrainerConfig {
                seed: 123,
                ..Default::default()
            };
            let mut state = AtlState::new(2, 2, 30, &config).unwrap();
            for _ in 0..3 {
                state
                    .process_chunk(&toy_source(30), &toy_target(30), &config)
                    .unwrap();
            }
            (
                state.net().w_in().clone(),
                state.hidden_nodes(),
                state.source_components(),
            )
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn dimension_mismatch_is_fatal() {
        let config = TrainerConfig::default();
        let mut state = AtlState::new(3, 2, 10, &config).unwrap();
        let source = toy_source(4); // 2 columns, state expects 3
        let target = TargetBatch {
            features: Array2::zeros((4, 3)),
        };
        assert!(state.process_chunk(&source, &target, &config).is_err());
    }

    #[test]
    fn state_size_ignores_sample_count() {
        let config = TrainerConfig::default();
        let mut state = AtlState::new(2, 2, 30, &config).unwrap();
        state.train_chunk(&toy_source(30), &toy_target(30), &config).unwrap();
        let per_unit = |s: &AtlState| {
            s.state_value_count() as f64
                / (s.hidden_nodes() + s.source_components() + s.target_components()) as f64
        };
        let early = per_unit(&state);
        for _ in 0..10 {
            state.train_chunk(&toy_source(30), &toy_target(30), &config).unwrap();
        }
        let late = per_unit(&state);
        assert!(late <= 2.0 * early);
    }
}
