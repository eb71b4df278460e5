//! Residual dynamics network: a ReLU MLP with hand-written forward, reverse-mode
//! parameter gradients and input Jacobians.
//!
//! Parameters live in one flat buffer. Layer `l` stores its weight matrix
//! row-major (`out × in`) followed by its bias, layers in order. The final
//! layer therefore occupies the tail of the buffer, which is the fast
//! partition; everything before it is the slow partition.

use std::fmt::Write as _;
use std::ops::Range;

use nalgebra::{SMatrix, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, Error, SimulationFault};
use crate::plant::{Accel3, ControlVector, StateVector};
use crate::time_embedding::TimeEmbeddingSpec;

pub const STATE_DIM: usize = 6;
pub const CONTROL_DIM: usize = 2;
/// State and control columns of the network input.
pub const DECISION_DIM: usize = STATE_DIM + CONTROL_DIM;
pub const OUTPUT_DIM: usize = 3;
pub const HIDDEN_DIM: usize = 64;

/// 40 → 64 → 64 → 3.
pub const FULL_PARAM_COUNT: usize = 6979;
/// 8 → 64 → 64 → 3, used by the variants without a time input.
pub const REDUCED_PARAM_COUNT: usize = 4931;
pub const FAST_PARAM_COUNT: usize = 195;

pub type InputJacobian = SMatrix<f64, OUTPUT_DIM, DECISION_DIM>;

/// Number of scalars in a dense network with the given layer widths.
pub fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
    data: Vec<f64>,
}

impl MlpParams {
    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least one layer");
        assert!(sizes.iter().all(|&s| s > 0), "layer widths must be positive");
        let mut offsets = Vec::with_capacity(sizes.len());
        let mut acc = 0;
        for w in sizes.windows(2) {
            offsets.push(acc);
            acc += w[0] * w[1] + w[1];
        }
        offsets.push(acc);
        Self {
            sizes: sizes.to_vec(),
            offsets,
            data: vec![0.0; acc],
        }
    }

    /// He-normal hidden weights, zero biases, and an all-zero output layer so
    /// that a fresh network predicts exactly zero.
    pub fn init(sizes: &[usize], seed: u64) -> Self {
        let mut params = Self::zeros(sizes);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in 0..params.num_layers() - 1 {
            let fan_in = params.sizes[l];
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
            let (w, _) = params.layer_mut(l);
            for v in w.iter_mut() {
                *v = normal.sample(&mut rng);
            }
        }
        params
    }

    /// The residual network for a given input width, with the count checked.
    pub fn residual(input_dim: usize, seed: u64) -> Self {
        let p = Self::init(&[input_dim, HIDDEN_DIM, HIDDEN_DIM, OUTPUT_DIM], seed);
        assert_eq!(p.fast_range().len(), FAST_PARAM_COUNT);
        if input_dim == DECISION_DIM + TimeEmbeddingSpec::default().dim() {
            assert_eq!(p.len(), FULL_PARAM_COUNT);
        } else if input_dim == DECISION_DIM {
            assert_eq!(p.len(), REDUCED_PARAM_COUNT);
        }
        p
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Final-layer parameters.
    pub fn fast_range(&self) -> Range<usize> {
        self.offsets[self.num_layers() - 1]..self.data.len()
    }

    /// All parameters before the final layer.
    pub fn slow_range(&self) -> Range<usize> {
        0..self.offsets[self.num_layers() - 1]
    }

    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let (start, n_in, n_out) = (self.offsets[l], self.sizes[l], self.sizes[l + 1]);
        let (w, b) = self.data[start..self.offsets[l + 1]].split_at(n_in * n_out);
        (w, b)
    }

    pub fn layer_mut(&mut self, l: usize) -> (&mut [f64], &mut [f64]) {
        let (start, n_in, n_out) = (self.offsets[l], self.sizes[l], self.sizes[l + 1]);
        let end = self.offsets[l + 1];
        self.data[start..end].split_at_mut(n_in * n_out)
    }

    pub fn new_cache(&self) -> ForwardCache {
        ForwardCache {
            input: vec![0.0; self.input_dim()],
            pre: self.sizes[1..].iter().map(|&n| vec![0.0; n]).collect(),
            act: self.sizes[1..self.sizes.len() - 1]
                .iter()
                .map(|&n| vec![0.0; n])
                .collect(),
        }
    }

    /// Forward pass; returns the output and the cache needed by
    /// [`MlpParams::backward_params`].
    pub fn forward(&self, z: &[f64]) -> Result<(Vec<f64>, ForwardCache), SimulationFault> {
        let mut cache = self.new_cache();
        self.forward_into(z, &mut cache)?;
        Ok((cache.output().to_vec(), cache))
    }

    /// Allocation-free forward pass into an existing cache.
    pub fn forward_into(&self, z: &[f64], cache: &mut ForwardCache) -> Result<(), SimulationFault> {
        assert_eq!(z.len(), self.input_dim(), "network input width");
        if z.iter().any(|v| !v.is_finite()) {
            return Err(SimulationFault::NonFiniteInput);
        }
        cache.input.copy_from_slice(z);
        let last = self.num_layers() - 1;
        for l in 0..=last {
            let (w, b) = self.layer(l);
            let n_in = self.sizes[l];
            let (prev, rest): (&[f64], _) = if l == 0 {
                (&cache.input, &mut cache.pre[..])
            } else {
                (&cache.act[l - 1], &mut cache.pre[..])
            };
            let pre = &mut rest[l];
            for (i, out) in pre.iter_mut().enumerate() {
                let row = &w[i * n_in..(i + 1) * n_in];
                *out = b[i] + dot(row, prev);
            }
            if l < last {
                for (a, &p) in cache.act[l].iter_mut().zip(cache.pre[l].iter()) {
                    *a = p.max(0.0);
                }
            }
        }
        Ok(())
    }

    /// Gradient of `grad_out · output` with respect to every parameter, split
    /// into the fast and slow partitions.
    pub fn backward_params(&self, cache: &ForwardCache, grad_out: &[f64]) -> ParamGradient {
        let mut full = vec![0.0; self.len()];
        self.accumulate_gradient(cache, grad_out, &mut full, GradScope::Full);
        let split = self.fast_range().start;
        let fast = full.split_off(split);
        ParamGradient { fast, slow: full }
    }

    /// Adds the parameter gradient into `grad` (indexed like the flat buffer).
    /// With [`GradScope::FastOnly`] the pass stops after the output layer.
    pub fn accumulate_gradient(&self, cache: &ForwardCache, grad_out: &[f64], grad: &mut [f64], scope: GradScope) {
        assert_eq!(grad_out.len(), self.output_dim());
        assert_eq!(grad.len(), self.len());
        let mut delta: Vec<f64> = grad_out.to_vec();
        for l in (0..self.num_layers()).rev() {
            let n_in = self.sizes[l];
            let prev: &[f64] = if l == 0 { &cache.input } else { &cache.act[l - 1] };
            self.accumulate_layer(l, prev, &delta, grad);
            if l == 0 || scope == GradScope::FastOnly {
                break;
            }
            let (w, _) = self.layer(l);
            let mut next = vec![0.0; n_in];
            for (i, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                for (n, &wij) in next.iter_mut().zip(&w[i * n_in..(i + 1) * n_in]) {
                    *n += d * wij;
                }
            }
            for (n, &p) in next.iter_mut().zip(&cache.pre[l - 1]) {
                if p <= 0.0 {
                    *n = 0.0;
                }
            }
            delta = next;
        }
    }

    fn accumulate_layer(&self, l: usize, prev: &[f64], delta: &[f64], grad: &mut [f64]) {
        let n_in = self.sizes[l];
        let start = self.offsets[l];
        let (gw, gb) = grad[start..self.offsets[l + 1]].split_at_mut(n_in * self.sizes[l + 1]);
        for (i, &d) in delta.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            gb[i] += d;
            for (g, &x) in gw[i * n_in..(i + 1) * n_in].iter_mut().zip(prev) {
                *g += d * x;
            }
        }
    }

    /// The output layer alone, applied to the activations that feed it.
    /// Bit-identical to the last layer of [`MlpParams::forward_into`].
    pub fn output_layer(&self, features: &[f64], out: &mut [f64]) {
        let l = self.num_layers() - 1;
        let (w, b) = self.layer(l);
        let n_in = self.sizes[l];
        assert_eq!(features.len(), n_in);
        for (i, o) in out.iter_mut().enumerate() {
            *o = b[i] + dot(&w[i * n_in..(i + 1) * n_in], features);
        }
    }

    /// Output-layer part of [`MlpParams::accumulate_gradient`], from cached
    /// features.
    pub fn accumulate_output_gradient(&self, features: &[f64], grad_out: &[f64], grad: &mut [f64]) {
        assert_eq!(grad.len(), self.len());
        self.accumulate_layer(self.num_layers() - 1, features, grad_out, grad);
    }

    /// `∂output / ∂input[..cols]`, row-major `output_dim × cols`. Uses the
    /// pre-activations stored in `cache`; ReLU has derivative 0 at exactly 0.
    pub fn input_jacobian_cols(&self, cache: &ForwardCache, cols: usize) -> Vec<f64> {
        let n_out = self.output_dim();
        let mut jac = vec![0.0; n_out * cols];
        let mut delta = vec![0.0; *self.sizes.iter().max().unwrap()];
        let mut next = vec![0.0; delta.len()];
        for o in 0..n_out {
            delta[..n_out].iter_mut().for_each(|d| *d = 0.0);
            delta[o] = 1.0;
            let mut width = n_out;
            for l in (0..self.num_layers()).rev() {
                let n_in = self.sizes[l];
                let (w, _) = self.layer(l);
                let keep = if l == 0 { cols } else { n_in };
                next[..keep].iter_mut().for_each(|v| *v = 0.0);
                for i in 0..width {
                    let d = delta[i];
                    if d == 0.0 {
                        continue;
                    }
                    for (n, &wij) in next[..keep].iter_mut().zip(&w[i * n_in..i * n_in + keep]) {
                        *n += d * wij;
                    }
                }
                if l > 0 {
                    for (n, &p) in next[..n_in].iter_mut().zip(&cache.pre[l - 1]) {
                        if p <= 0.0 {
                            *n = 0.0;
                        }
                    }
                }
                std::mem::swap(&mut delta, &mut next);
                width = keep;
            }
            jac[o * cols..(o + 1) * cols].copy_from_slice(&delta[..cols]);
        }
        jac
    }

    /// The 3×8 Jacobian with respect to the state and control inputs.
    pub fn input_jacobian(&self, z: &[f64]) -> Result<InputJacobian, SimulationFault> {
        assert_eq!(self.output_dim(), OUTPUT_DIM);
        let mut cache = self.new_cache();
        self.forward_into(z, &mut cache)?;
        let flat = self.input_jacobian_cols(&cache, DECISION_DIM);
        Ok(InputJacobian::from_row_slice(&flat))
    }

    /// Text checkpoint: a header line with the layer widths, then one value per
    /// line in flat-buffer order.
    pub fn to_text(&self) -> String {
        let sizes: Vec<String> = self.sizes.iter().map(|s| s.to_string()).collect();
        let mut out = format!("# t2s-mlp v1 sizes={}\n", sizes.join(","));
        for v in &self.data {
            let _ = writeln!(out, "{v:?}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, Error> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty checkpoint".into()))?;
        let sizes = header
            .strip_prefix("# t2s-mlp v1 sizes=")
            .ok_or_else(|| Error::Parse(format!("bad checkpoint header: {header}")))?
            .split(',')
            .map(|s| s.trim().parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse(format!("bad layer width: {e}")))?;
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Parse("checkpoint needs at least two non-zero widths".into()));
        }
        let mut params = Self::zeros(&sizes);
        let values = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse(format!("bad parameter value: {e}")))?;
        if values.len() != params.len() {
            return Err(Error::Parse(format!(
                "expected {} parameters, found {}",
                params.len(),
                values.len()
            )));
        }
        params.data.copy_from_slice(&values);
        Ok(params)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradScope {
    Full,
    FastOnly,
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Vec<f64>,
    /// Pre-activations of every layer; the last one is the network output.
    pre: Vec<Vec<f64>>,
    act: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.pre.last().unwrap()
    }

    pub fn pre_activations(&self, layer: usize) -> &[f64] {
        &self.pre[layer]
    }

    /// Activations feeding the output layer.
    pub fn features(&self) -> &[f64] {
        self.act.last().unwrap_or(&self.input)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradient {
    pub fast: Vec<f64>,
    pub slow: Vec<f64>,
}

/// Fixed affine maps around the network: inputs are normalised as
/// `(v - offset) / scale` and the raw output is multiplied by `output_scale`
/// to give accelerations in m/s² and rad/s².
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureScaling {
    pub input_offset: [f64; DECISION_DIM],
    pub input_scale: [f64; DECISION_DIM],
    pub output_scale: f64,
}

impl Default for FeatureScaling {
    fn default() -> Self {
        let hover = crate::plant::QuadParams::default().hover_thrust();
        Self {
            input_offset: [0.0, 0.0, 1.0, 0.0, 0.0, 0.0, hover, hover],
            input_scale: [1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.05, 0.05],
            output_scale: 0.003,
        }
    }
}

impl FeatureScaling {
    pub fn identity() -> Self {
        Self {
            input_offset: [0.0; DECISION_DIM],
            input_scale: [1.0; DECISION_DIM],
            output_scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.input_scale.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(ConfigError::invalid(
                "network.scaling.input_scale",
                "entries must be strictly positive",
            ));
        }
        if self.input_offset.iter().any(|s| !s.is_finite()) {
            return Err(ConfigError::invalid(
                "network.scaling.input_offset",
                "entries must be finite",
            ));
        }
        if !(self.output_scale.is_finite() && self.output_scale > 0.0) {
            return Err(ConfigError::invalid(
                "network.scaling.output_scale",
                "must be strictly positive",
            ));
        }
        Ok(())
    }
}

/// The learned residual `r̂(x, u, ψ(t))`: network, optional time embedding and
/// fixed feature scaling.
#[derive(Debug, Clone)]
pub struct ResidualModel {
    pub params: MlpParams,
    pub embedding: Option<TimeEmbeddingSpec>,
    pub scaling: FeatureScaling,
}

impl ResidualModel {
    pub fn new(embedding: Option<TimeEmbeddingSpec>, scaling: FeatureScaling, seed: u64) -> Self {
        let input_dim = DECISION_DIM + embedding.map_or(0, |e| e.dim());
        Self {
            params: MlpParams::residual(input_dim, seed),
            embedding,
            scaling,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.params.input_dim()
    }

    /// Writes `[state, control, ψ(t)]` (normalised) into `z`.
    pub fn build_input(&self, x: &StateVector, u: &ControlVector, t: f64, z: &mut [f64]) {
        let s = &self.scaling;
        for i in 0..STATE_DIM {
            z[i] = (x[i] - s.input_offset[i]) / s.input_scale[i];
        }
        for j in 0..CONTROL_DIM {
            let i = STATE_DIM + j;
            z[i] = (u[j] - s.input_offset[i]) / s.input_scale[i];
        }
        if let Some(e) = &self.embedding {
            e.embed_into(t, &mut z[DECISION_DIM..]);
        }
    }

    pub fn input_vec(&self, x: &StateVector, u: &ControlVector, t: f64) -> Vec<f64> {
        let mut z = vec![0.0; self.input_dim()];
        self.build_input(x, u, t, &mut z);
        z
    }

    pub fn predict(&self, x: &StateVector, u: &ControlVector, t: f64) -> Result<Accel3, SimulationFault> {
        let mut scratch = ResidualScratch::new(self);
        self.predict_with(x, u, t, &mut scratch)
    }

    pub fn predict_with(
        &self,
        x: &StateVector,
        u: &ControlVector,
        t: f64,
        scratch: &mut ResidualScratch,
    ) -> Result<Accel3, SimulationFault> {
        self.build_input(x, u, t, &mut scratch.z);
        self.params.forward_into(&scratch.z, &mut scratch.cache)?;
        let out = scratch.cache.output();
        Ok(Vector3::new(out[0], out[1], out[2]) * self.scaling.output_scale)
    }

    /// Prediction together with `∂r̂/∂[x, u]` in physical units.
    pub fn predict_with_jacobian(
        &self,
        x: &StateVector,
        u: &ControlVector,
        t: f64,
        scratch: &mut ResidualScratch,
    ) -> Result<(Accel3, InputJacobian), SimulationFault> {
        let r = self.predict_with(x, u, t, scratch)?;
        let flat = self.params.input_jacobian_cols(&scratch.cache, DECISION_DIM);
        let mut jac = InputJacobian::from_row_slice(&flat);
        for c in 0..DECISION_DIM {
            let k = self.scaling.output_scale / self.scaling.input_scale[c];
            for r in 0..OUTPUT_DIM {
                jac[(r, c)] *= k;
            }
        }
        Ok((r, jac))
    }
}

/// Reusable buffers for [`ResidualModel`] evaluations.
#[derive(Debug, Clone)]
pub struct ResidualScratch {
    z: Vec<f64>,
    cache: ForwardCache,
}

impl ResidualScratch {
    pub fn new(model: &ResidualModel) -> Self {
        Self {
            z: vec![0.0; model.input_dim()],
            cache: model.params.new_cache(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_params(sizes: &[usize], seed: u64) -> MlpParams {
        let mut p = MlpParams::zeros(sizes);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in p.as_mut_slice() {
            *v = rng.gen_range(-0.8..0.8);
        }
        p
    }

    #[test]
    fn counts_match_layer_arithmetic() {
        assert_eq!(param_count(&[40, 64, 64, 3]), FULL_PARAM_COUNT);
        assert_eq!(param_count(&[8, 64, 64, 3]), REDUCED_PARAM_COUNT);
        let full = MlpParams::residual(40, 0);
        assert_eq!(full.len(), 6979);
        assert_eq!(full.fast_range().len(), 195);
        assert_eq!(full.slow_range().len(), 6784);
        assert_eq!(MlpParams::residual(8, 0).len(), 4931);
    }

    #[test]
    fn fresh_network_predicts_zero() {
        let p = MlpParams::residual(40, 3);
        let z: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin() * 3.0).collect();
        let (out, _) = p.forward(&z).unwrap();
        assert_eq!(out, vec![0.0; 3]);
        assert_eq!(p.input_jacobian(&z).unwrap(), InputJacobian::zeros());
    }

    #[test]
    fn init_is_seed_deterministic() {
        assert_eq!(MlpParams::residual(40, 9), MlpParams::residual(40, 9));
        assert_ne!(MlpParams::residual(40, 9), MlpParams::residual(40, 10));
    }

    #[test]
    fn doubling_output_layer_doubles_output() {
        let p = random_params(&[5, 4, 4, 3], 1);
        let z = [0.3, -0.2, 0.9, 0.1, -0.5];
        let (out, _) = p.forward(&z).unwrap();
        let mut q = p.clone();
        let fast = q.fast_range();
        q.as_mut_slice()[fast].iter_mut().for_each(|v| *v *= 2.0);
        let (out2, _) = q.forward(&z).unwrap();
        for (a, b) in out.iter().zip(&out2) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn matches_hand_rolled_tiny_network() {
        // 2 → 2 → 2 → 1 written out scalar by scalar.
        let p = random_params(&[2, 2, 2, 1], 4);
        let d = p.as_slice();
        let z = [0.7, -0.4];
        let relu = |v: f64| v.max(0.0);
        let h1 = [
            relu(d[0] * z[0] + d[1] * z[1] + d[4]),
            relu(d[2] * z[0] + d[3] * z[1] + d[5]),
        ];
        let h2 = [
            relu(d[6] * h1[0] + d[7] * h1[1] + d[10]),
            relu(d[8] * h1[0] + d[9] * h1[1] + d[11]),
        ];
        let y = d[12] * h2[0] + d[13] * h2[1] + d[14];
        let (out, _) = p.forward(&z).unwrap();
        assert!((out[0] - y).abs() < 1e-15);
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradient() {
        let p = random_params(&[6, 5, 5, 3], 2);
        let (_, cache) = p.forward(&[0.1; 6]).unwrap();
        let g = p.backward_params(&cache, &[0.0; 3]);
        assert!(g.fast.iter().chain(&g.slow).all(|v| *v == 0.0));
    }

    #[test]
    fn gradient_partition_sizes() {
        let p = MlpParams::residual(40, 0);
        let (_, cache) = p.forward(&[0.5; 40]).unwrap();
        let g = p.backward_params(&cache, &[1.0, 0.0, 0.0]);
        assert_eq!(g.fast.len(), 195);
        assert_eq!(g.slow.len(), 6784);
    }

    #[test]
    fn fast_only_scope_matches_tail_of_full_gradient() {
        let p = random_params(&[6, 5, 5, 3], 8);
        let (_, cache) = p.forward(&[0.2, -0.1, 0.4, 0.3, 0.0, 0.9]).unwrap();
        let up = [0.3, -1.0, 0.5];
        let mut full = vec![0.0; p.len()];
        p.accumulate_gradient(&cache, &up, &mut full, GradScope::Full);
        let mut fast = vec![0.0; p.len()];
        p.accumulate_gradient(&cache, &up, &mut fast, GradScope::FastOnly);
        let r = p.fast_range();
        assert_eq!(&full[r.clone()], &fast[r]);
        assert!(fast[p.slow_range()].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn forward_rejects_non_finite_input() {
        let p = MlpParams::residual(8, 0);
        let mut z = [0.0; 8];
        z[3] = f64::INFINITY;
        assert_eq!(p.forward(&z).unwrap_err(), SimulationFault::NonFiniteInput);
    }

    #[test]
    fn text_checkpoint_round_trips() {
        let p = random_params(&[8, 4, 3], 6);
        let q = MlpParams::from_text(&p.to_text()).unwrap();
        assert_eq!(p, q);
        assert!(MlpParams::from_text("# t2s-mlp v1 sizes=2,1\n1.0\n").is_err());
    }

    #[test]
    fn jacobian_shape_is_three_by_eight() {
        let p = random_params(&[40, 64, 64, 3], 3);
        let j = p.input_jacobian(&[0.1; 40]).unwrap();
        assert_eq!((j.nrows(), j.ncols()), (3, 8));
    }

    #[test]
    fn scaled_model_jacobian_matches_differences() {
        let mut model = ResidualModel::new(Some(TimeEmbeddingSpec::default()), FeatureScaling::default(), 5);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for v in model.params.as_mut_slice() {
            *v += rng.gen_range(-0.1..0.1);
        }
        let x = StateVector::new(0.1, -0.2, 1.05, 0.03, 0.02, -0.1);
        let u = ControlVector::new(0.13, 0.135);
        let mut scratch = ResidualScratch::new(&model);
        let (_, jac) = model.predict_with_jacobian(&x, &u, 0.7, &mut scratch).unwrap();
        let h = 1e-7;
        for c in 0..DECISION_DIM {
            let (mut xp, mut xm, mut up, mut um) = (x, x, u, u);
            if c < 6 {
                xp[c] += h;
                xm[c] -= h;
            } else {
                up[c - 6] += h;
                um[c - 6] -= h;
            }
            let fd = (model.predict(&xp, &up, 0.7).unwrap() - model.predict(&xm, &um, 0.7).unwrap()) / (2.0 * h);
            for r in 0..3 {
                let scale = jac[(r, c)].abs().max(1e-3);
                assert!((fd[r] - jac[(r, c)]).abs() / scale < 1e-4, "({r},{c})");
            }
        }
    }

    proptest! {
        #[test]
        fn forward_leaves_parameters_unchanged(seed in any::<u64>(), z in proptest::collection::vec(-3.0..3.0f64, 40)) {
            let p = random_params(&[40, 64, 64, 3], seed);
            let before = p.clone();
            let (a, _) = p.forward(&z).unwrap();
            let (b, _) = p.forward(&z).unwrap();
            prop_assert_eq!(&p, &before);
            prop_assert_eq!(a, b);
        }

        #[test]
        fn fast_gradient_is_tail_of_full_gradient(
            seed in any::<u64>(),
            z in proptest::collection::vec(-2.0..2.0f64, 8),
            up in proptest::array::uniform3(-1.0..1.0f64),
        ) {
            let p = random_params(&[8, 16, 16, 3], seed);
            let (_, cache) = p.forward(&z).unwrap();
            let mut full = vec![0.0; p.len()];
            p.accumulate_gradient(&cache, &up, &mut full, GradScope::Full);
            let mut fast = vec![0.0; p.len()];
            p.accumulate_gradient(&cache, &up, &mut fast, GradScope::FastOnly);
            let r = p.fast_range();
            prop_assert_eq!(&full[r.clone()], &fast[r]);
            prop_assert!(fast[p.slow_range()].iter().all(|v| *v == 0.0));
        }
    }
}
