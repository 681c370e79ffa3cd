//! The shared-parameter network: a sigmoid hidden layer feeding both a
//! softmax classifier head and a sigmoid decoder, with a hidden width that
//! grows and shrinks online.
//!
//! The encoder weights are shared between the two heads, so discriminative
//! updates, generative updates and the alignment step all shape the same
//! representation.

use crate::agmm::GaussianComponent;
use crate::error::{AtlError, Result};
use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use std::f64::consts::PI;

pub fn sigmoid(a: f64) -> f64 {
    1.0 / (1.0 + (-a).exp())
}

/// Numerically stable softmax.
pub fn softmax(logits: &Array1<f64>) -> Array1<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out = logits.mapv(|z| (z - max).exp());
    let total = out.sum();
    out.mapv_inplace(|v| v / total);
    out
}

/// Zeroes `round(noise_fraction * u)` distinct coordinates of `x`, chosen
/// uniformly at random.
pub fn corrupt<R: Rng>(x: ArrayView1<f64>, noise_fraction: f64, rng: &mut R) -> Array1<f64> {
    let u = x.len();
    let n_masked = (noise_fraction * u as f64).round() as usize;
    let mut out = x.to_owned();
    let masked = rand::seq::index::sample(rng, u, n_masked.min(u));
    for idx in masked {
        out[idx] = 0.0;
    }
    out
}

/// Mutable borrows of every parameter array, in declaration order.
pub(crate) type ParamsMut<'a> = (
    &'a mut Array2<f64>,
    &'a mut Array1<f64>,
    &'a mut Array2<f64>,
    &'a mut Array1<f64>,
    &'a mut Array2<f64>,
    &'a mut Array1<f64>,
);

/// Single-hidden-layer network with a softmax head and an untied decoder.
#[derive(Debug, Clone)]
pub struct ElasticNetwork {
    /// Encoder weights, `input_dim x hidden`.
    w_in: Array2<f64>,
    /// Hidden bias, `hidden`.
    b_hidden: Array1<f64>,
    /// Classifier weights, `hidden x classes`.
    w_out: Array2<f64>,
    /// Classifier bias, `classes`.
    c_out: Array1<f64>,
    /// Decoder weights, `hidden x input_dim`.
    w_dec: Array2<f64>,
    /// Decoder bias, `input_dim`.
    d_dec: Array1<f64>,
}

fn xavier_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

impl ElasticNetwork {
    /// Network with a single hidden unit; weights use Xavier-uniform
    /// initialization, output biases start at zero.
    pub fn new<R: Rng>(input_dim: usize, class_count: usize, rng: &mut R) -> Result<Self> {
        if input_dim == 0 || class_count == 0 {
            return Err(AtlError::InvalidConfig(
                "input_dim and class_count must be >= 1".into(),
            ));
        }
        let mut net = ElasticNetwork {
            w_in: Array2::zeros((input_dim, 0)),
            b_hidden: Array1::zeros(0),
            w_out: Array2::zeros((0, class_count)),
            c_out: Array1::zeros(class_count),
            w_dec: Array2::zeros((0, input_dim)),
            d_dec: Array1::zeros(input_dim),
        };
        net.grow(1, rng);
        Ok(net)
    }

    /// Assembles a network from explicit parameter arrays, validating that
    /// the shapes agree.
    pub fn from_parts(
        w_in: Array2<f64>,
        b_hidden: Array1<f64>,
        w_out: Array2<f64>,
        c_out: Array1<f64>,
        w_dec: Array2<f64>,
        d_dec: Array1<f64>,
    ) -> Result<Self> {
        let (u, r) = w_in.dim();
        let m = w_out.ncols();
        if r == 0 || u == 0 || m == 0 {
            return Err(AtlError::InvalidConfig(
                "all dimensions must be >= 1".into(),
            ));
        }
        let consistent = b_hidden.len() == r
            && w_out.nrows() == r
            && c_out.len() == m
            && w_dec.dim() == (r, u)
            && d_dec.len() == u;
        if !consistent {
            return Err(AtlError::InvalidConfig(
                "parameter shapes are inconsistent".into(),
            ));
        }
        Ok(ElasticNetwork {
            w_in,
            b_hidden,
            w_out,
            c_out,
            w_dec,
            d_dec,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.w_in.nrows()
    }

    pub fn hidden_count(&self) -> usize {
        self.w_in.ncols()
    }

    pub fn class_count(&self) -> usize {
        self.w_out.ncols()
    }

    pub fn w_in(&self) -> &Array2<f64> {
        &self.w_in
    }

    pub fn b_hidden(&self) -> &Array1<f64> {
        &self.b_hidden
    }

    pub fn w_out(&self) -> &Array2<f64> {
        &self.w_out
    }

    pub fn c_out(&self) -> &Array1<f64> {
        &self.c_out
    }

    pub fn w_dec(&self) -> &Array2<f64> {
        &self.w_dec
    }

    pub fn d_dec(&self) -> &Array1<f64> {
        &self.d_dec
    }

    /// Hidden activations for `x`.
    pub fn hidden(&self, x: ArrayView1<f64>) -> Array1<f64> {
        let mut a = x.dot(&self.w_in);
        a += &self.b_hidden;
        a.mapv_inplace(sigmoid);
        a
    }

    /// Classifier forward pass: `(hidden, class probabilities)`.
    pub fn forward_classify(&self, x: ArrayView1<f64>) -> (Array1<f64>, Array1<f64>) {
        let hidden = self.hidden(x);
        let mut logits = hidden.dot(&self.w_out);
        logits += &self.c_out;
        let probs = softmax(&logits);
        (hidden, probs)
    }

    /// Pre-softmax classifier output.
    pub fn logits(&self, x: ArrayView1<f64>) -> Array1<f64> {
        let hidden = self.hidden(x);
        let mut logits = hidden.dot(&self.w_out);
        logits += &self.c_out;
        logits
    }

    /// Predicted class: argmax probability, ties to the lowest index.
    pub fn predict(&self, x: ArrayView1<f64>) -> usize {
        let logits = self.logits(x);
        let mut best = 0;
        let mut best_v = f64::NEG_INFINITY;
        for (i, &v) in logits.iter().enumerate() {
            if v > best_v {
                best_v = v;
                best = i;
            }
        }
        best
    }

    /// Decoder forward pass on a (possibly corrupted) input:
    /// `(hidden, reconstruction)`.
    pub fn forward_reconstruct(&self, x_tilde: ArrayView1<f64>) -> (Array1<f64>, Array1<f64>) {
        let hidden = self.hidden(x_tilde);
        let mut recon = hidden.dot(&self.w_dec);
        recon += &self.d_dec;
        recon.mapv_inplace(sigmoid);
        (hidden, recon)
    }

    /// Appends `count` hidden units with Xavier-initialized weights.
    /// Existing weights are untouched.
    pub fn grow<R: Rng>(&mut self, count: usize, rng: &mut R) {
        assert!(count >= 1, "grow count must be >= 1");
        let (u, m) = (self.w_in.nrows(), self.w_out.ncols());
        let r_old = self.hidden_count();
        let r_new = r_old + count;

        let limit_in = xavier_limit(u, r_new);
        let mut w_in = Array2::zeros((u, r_new));
        w_in.slice_mut(s![.., ..r_old]).assign(&self.w_in);
        for i in 0..u {
            for j in r_old..r_new {
                w_in[[i, j]] = rng.gen_range(-limit_in..limit_in);
            }
        }
        self.w_in = w_in;

        let mut b = Array1::zeros(r_new);
        b.slice_mut(s![..r_old]).assign(&self.b_hidden);
        for j in r_old..r_new {
            b[j] = rng.gen_range(-limit_in..limit_in);
        }
        self.b_hidden = b;

        let limit_out = xavier_limit(r_new, m);
        let mut w_out = Array2::zeros((r_new, m));
        w_out.slice_mut(s![..r_old, ..]).assign(&self.w_out);
        for j in r_old..r_new {
            for o in 0..m {
                w_out[[j, o]] = rng.gen_range(-limit_out..limit_out);
            }
        }
        self.w_out = w_out;

        let limit_dec = xavier_limit(r_new, u);
        let mut w_dec = Array2::zeros((r_new, u));
        w_dec.slice_mut(s![..r_old, ..]).assign(&self.w_dec);
        for j in r_old..r_new {
            for o in 0..u {
                w_dec[[j, o]] = rng.gen_range(-limit_dec..limit_dec);
            }
        }
        self.w_dec = w_dec;
    }

    /// Removes the given hidden units. Rejects requests that would empty
    /// the network or reference units that do not exist; on error nothing
    /// is mutated.
    pub fn prune(&mut self, indices: &[usize]) -> Result<()> {
        if indices.is_empty() {
            return Ok(());
        }
        let r = self.hidden_count();
        let mut sorted: Vec<usize> = indices.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if let Some(&bad) = sorted.iter().find(|&&i| i >= r) {
            return Err(AtlError::InvalidPrune(format!(
                "unit {bad} out of range (hidden_count = {r})"
            )));
        }
        if sorted.len() >= r {
            return Err(AtlError::InvalidPrune(
                "cannot remove every hidden unit".into(),
            ));
        }
        let keep: Vec<usize> = (0..r).filter(|i| !sorted.contains(i)).collect();
        self.w_in = self.w_in.select(Axis(1), &keep);
        self.b_hidden = self.b_hidden.select(Axis(0), &keep);
        self.w_out = self.w_out.select(Axis(0), &keep);
        self.w_dec = self.w_dec.select(Axis(0), &keep);
        Ok(())
    }

    /// Per-component probit-shifted center: `mu_j / sqrt(1 + pi sigma_j^2 / 8)`.
    fn shifted_center(comp: &GaussianComponent) -> Array1<f64> {
        Array1::from_iter(
            comp.center()
                .iter()
                .zip(comp.width())
                .map(|(&mu, &sigma)| mu / (1.0 + PI * sigma * sigma / 8.0).sqrt()),
        )
    }

    /// Closed-form expected hidden activation under the mixture, using the
    /// probit approximation of the sigmoid.
    pub fn expected_hidden(
        &self,
        components: &[GaussianComponent],
        weights: &[f64],
    ) -> Array1<f64> {
        assert_eq!(components.len(), weights.len());
        let mut expected = Array1::zeros(self.hidden_count());
        for (comp, &w) in components.iter().zip(weights) {
            let shifted = Self::shifted_center(comp);
            let mut a = shifted.dot(&self.w_in);
            a += &self.b_hidden;
            a.mapv_inplace(sigmoid);
            expected.scaled_add(w, &a);
        }
        expected
    }

    /// Expected pre-softmax classifier output under the mixture.
    pub fn expected_output(
        &self,
        components: &[GaussianComponent],
        weights: &[f64],
    ) -> Array1<f64> {
        let mut out = self.expected_hidden(components, weights).dot(&self.w_out);
        out += &self.c_out;
        out
    }

    /// Expected squared classifier output under the independence
    /// approximation: the squared expected hidden activation pushed
    /// through the output map.
    pub fn expected_squared_output(
        &self,
        components: &[GaussianComponent],
        weights: &[f64],
    ) -> Array1<f64> {
        let e_h = self.expected_hidden(components, weights);
        let mut out = e_h.mapv(|h| h * h).dot(&self.w_out);
        out += &self.c_out;
        out
    }

    /// Expected reconstruction: the expected hidden activation pushed
    /// through the decoder.
    pub fn expected_reconstruction(
        &self,
        components: &[GaussianComponent],
        weights: &[f64],
    ) -> Array1<f64> {
        let e_h = self.expected_hidden(components, weights);
        let mut out = e_h.dot(&self.w_dec);
        out += &self.d_dec;
        out.mapv_inplace(sigmoid);
        out
    }

    /// Decoder analogue of [`expected_squared_output`](Self::expected_squared_output).
    pub fn expected_squared_reconstruction(
        &self,
        components: &[GaussianComponent],
        weights: &[f64],
    ) -> Array1<f64> {
        let e_h = self.expected_hidden(components, weights);
        let mut out = e_h.mapv(|h| h * h).dot(&self.w_dec);
        out += &self.d_dec;
        out.mapv_inplace(sigmoid);
        out
    }

    /// Statistical contribution of each hidden unit: the unweighted sum of
    /// its expected activation over the mixture components.
    pub fn hidden_contributions(&self, components: &[GaussianComponent]) -> Array1<f64> {
        let mut hc = Array1::zeros(self.hidden_count());
        for comp in components {
            let shifted = Self::shifted_center(comp);
            let mut a = shifted.dot(&self.w_in);
            a += &self.b_hidden;
            a.mapv_inplace(sigmoid);
            hc += &a;
        }
        hc
    }

    #[cfg(test)]
    pub(crate) fn zeroed(input_dim: usize, hidden: usize, class_count: usize) -> Self {
        ElasticNetwork {
            w_in: Array2::zeros((input_dim, hidden)),
            b_hidden: Array1::zeros(hidden),
            w_out: Array2::zeros((hidden, class_count)),
            c_out: Array1::zeros(class_count),
            w_dec: Array2::zeros((hidden, input_dim)),
            d_dec: Array1::zeros(input_dim),
        }
    }

    pub(crate) fn params_mut(&mut self) -> ParamsMut<'_> {
        (
            &mut self.w_in,
            &mut self.b_hidden,
            &mut self.w_out,
            &mut self.c_out,
            &mut self.w_dec,
            &mut self.d_dec,
        )
    }
}
