//! Noise-prediction network for the conditional diffusion sampler.
//!
//! Input projection, a sinusoidal diffusion-step embedding with a small
//! MLP, a stack of residual blocks, and two output projections. Each
//! residual block adds the projected step embedding, mixes along time
//! with a per-channel diagonal state-space kernel, injects the projected
//! conditioning, applies a gated tanh/sigmoid activation and emits a
//! residual and a skip contribution. Skip outputs of all blocks are
//! summed before the output projections.

use crate::nn::{Graph, Tensor, VarId};
use ndarray::Array1;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DenoiserError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("diffusion step index must be >= 1, got {0}")]
    InvalidStep(usize),
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("non-finite value in network input")]
    NonFiniteInput,
}

/// Network hyperparameters. `full_scale` mirrors the reference setup
/// (36 residual blocks); `desk_scale` keeps tests minutes-fast.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DenoiserConfig {
    pub residual_blocks: usize,
    pub residual_channels: usize,
    pub skip_channels: usize,
    /// Channels of the denoised signal tensor (generation + condition channels).
    pub in_channels: usize,
    /// Channels of the conditioning input (masked signal concatenated with the mask).
    pub condition_channels: usize,
    pub step_embedding_dim: usize,
    pub sequence_length: usize,
    /// States per channel in the sequence-state layer.
    pub ssm_state_dim: usize,
    pub mid_kernel_size: usize,
}

impl DenoiserConfig {
    pub fn full_scale(in_channels: usize) -> Self {
        Self {
            residual_blocks: 36,
            residual_channels: 256,
            skip_channels: 256,
            in_channels,
            condition_channels: 2 * in_channels,
            step_embedding_dim: 128,
            sequence_length: 48,
            ssm_state_dim: 8,
            mid_kernel_size: 3,
        }
    }

    pub fn desk_scale(in_channels: usize) -> Self {
        Self {
            residual_blocks: 4,
            residual_channels: 16,
            skip_channels: 16,
            in_channels,
            condition_channels: 2 * in_channels,
            step_embedding_dim: 16,
            sequence_length: 48,
            ssm_state_dim: 4,
            mid_kernel_size: 3,
        }
    }

    pub fn validate(&self) -> Result<(), DenoiserError> {
        if self.residual_blocks < 1 {
            return Err(DenoiserError::InvalidConfig("residual_blocks must be >= 1".into()));
        }
        for (name, v) in [
            ("residual_channels", self.residual_channels),
            ("skip_channels", self.skip_channels),
            ("in_channels", self.in_channels),
            ("condition_channels", self.condition_channels),
            ("sequence_length", self.sequence_length),
            ("ssm_state_dim", self.ssm_state_dim),
            ("mid_kernel_size", self.mid_kernel_size),
        ] {
            if v < 1 {
                return Err(DenoiserError::InvalidConfig(format!("{name} must be >= 1")));
            }
        }
        if self.step_embedding_dim < 2 || self.step_embedding_dim % 2 != 0 {
            return Err(DenoiserError::InvalidConfig(
                "step_embedding_dim must be even and >= 2".into(),
            ));
        }
        Ok(())
    }
}

/// Raw sinusoidal features of a step index, before the learned projections.
/// Interleaved sin/cos over geometrically spaced frequencies, so t = 0
/// yields the alternating 0/1 pattern.
pub fn sinusoidal_features(t: usize, dim: usize) -> Vec<f64> {
    assert!(dim >= 2 && dim % 2 == 0, "embedding dim must be even");
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for i in 0..half {
        let freq = (10_000f64).powf(-(i as f64) / half.max(1) as f64);
        let arg = t as f64 * freq;
        out.push(arg.sin());
        out.push(arg.cos());
    }
    out
}

/// Bound forward pass: parameter leaf ids (aligned with [`DenoiserNet::params`])
/// plus the output node.
pub struct BoundForward {
    pub param_ids: Vec<VarId>,
    pub output: VarId,
}

/// The noise-prediction network. Parameters are plain tensors; every
/// forward pass binds them as fresh leaves on a [`Graph`].
pub struct DenoiserNet {
    config: DenoiserConfig,
    names: Vec<String>,
    params: Vec<Tensor>,
}

struct ParamBuilder {
    names: Vec<String>,
    params: Vec<Tensor>,
}

impl ParamBuilder {
    fn add(&mut self, name: String, t: Tensor) {
        self.names.push(name);
        self.params.push(t);
    }
}

impl DenoiserNet {
    /// Fan-in scaled random init; the final output projection starts at
    /// zero so the untrained model predicts zero noise.
    pub fn new(config: DenoiserConfig, seed: u64) -> Result<Self, DenoiserError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = config.residual_channels;
        let s = config.skip_channels;
        let k_in = config.in_channels;
        let k_cond = config.condition_channels;
        let e = config.step_embedding_dim;
        let n = config.ssm_state_dim;
        let ks = config.mid_kernel_size;

        let mut b = ParamBuilder { names: Vec::new(), params: Vec::new() };
        let conv = |b: &mut ParamBuilder, rng: &mut ChaCha8Rng, name: &str, co: usize, ci: usize, k: usize| {
            let std = 1.0 / ((ci * k) as f64).sqrt();
            let w = Tensor::from_shape_fn((co, ci, k), |_| {
                let z: f64 = rng.sample(StandardNormal);
                z * std
            });
            b.add(format!("{name}.w"), w);
            b.add(format!("{name}.b"), Tensor::zeros((1, co, 1)));
        };

        conv(&mut b, &mut rng, "input", c, k_in, 1);
        conv(&mut b, &mut rng, "temb.fc1", e, e, 1);
        conv(&mut b, &mut rng, "temb.fc2", e, e, 1);

        for i in 0..config.residual_blocks {
            let p = format!("block{i}");
            conv(&mut b, &mut rng, &format!("{p}.step"), c, e, 1);
            conv(&mut b, &mut rng, &format!("{p}.mid"), 2 * c, c, ks);
            // Sequence-state parameters: timescales log-uniform so kernels
            // span fast and slow decays over the 48-step window.
            let log_dt = Tensor::from_shape_fn((2 * c, 1, 1), |_| {
                rng.gen_range(0.05f64.ln()..0.5f64.ln())
            });
            let log_a = Tensor::from_shape_fn((2 * c, n, 1), |_| {
                rng.gen_range(0.5f64.ln()..4.0f64.ln())
            });
            let scale = 1.0 / (n as f64).sqrt();
            let bvec = Tensor::from_shape_fn((2 * c, n, 1), |_| {
                let z: f64 = rng.sample(StandardNormal);
                z * scale
            });
            let cvec = Tensor::from_shape_fn((2 * c, n, 1), |_| {
                let z: f64 = rng.sample(StandardNormal);
                z * scale
            });
            b.add(format!("{p}.ssm.log_dt"), log_dt);
            b.add(format!("{p}.ssm.log_a"), log_a);
            b.add(format!("{p}.ssm.b"), bvec);
            b.add(format!("{p}.ssm.c"), cvec);
            b.add(format!("{p}.ssm.d"), Tensor::ones((1, 2 * c, 1)));
            conv(&mut b, &mut rng, &format!("{p}.cond"), 2 * c, k_cond, 1);
            conv(&mut b, &mut rng, &format!("{p}.res"), c, c, 1);
            conv(&mut b, &mut rng, &format!("{p}.skip"), s, c, 1);
        }

        conv(&mut b, &mut rng, "out1", s, s, 1);
        conv(&mut b, &mut rng, "out2", k_in, s, 1);
        // zero the final projection
        let last_w = b.params.len() - 2;
        b.params[last_w].fill(0.0);

        Ok(Self { config, names: b.names, params: b.params })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn param_shapes(&self) -> Vec<(usize, usize, usize)> {
        self.params.iter().map(|p| p.dim()).collect()
    }

    pub fn set_params(&mut self, named: &[(String, Tensor)]) -> Result<(), DenoiserError> {
        for (name, value) in named {
            let idx = self
                .names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| DenoiserError::InvalidConfig(format!("unknown parameter {name}")))?;
            if self.params[idx].dim() != value.dim() {
                return Err(DenoiserError::ShapeMismatch {
                    expected: format!("{:?}", self.params[idx].dim()),
                    got: format!("{:?}", value.dim()),
                });
            }
            self.params[idx] = value.clone();
        }
        Ok(())
    }

    /// Zero every learned parameter (used by contract tests).
    pub fn zero_params(&mut self) {
        for p in &mut self.params {
            p.fill(0.0);
        }
    }

    fn param_index(&self, name: &str) -> usize {
        self.names
            .iter()
            .position(|n| n == name)
            .unwrap_or_else(|| panic!("missing parameter {name}"))
    }

    /// Diffusion-step embedding: sinusoidal features followed by the two
    /// learned projections with SiLU nonlinearities.
    pub fn embed_step(&self, t: usize) -> Result<Array1<f64>, DenoiserError> {
        if t < 1 {
            return Err(DenoiserError::InvalidStep(t));
        }
        let mut g = Graph::new();
        let ids: Vec<VarId> = self.params.iter().map(|p| g.leaf(p.clone())).collect();
        let emb = self.embed_graph(&mut g, &ids, &[t]);
        let v = g.value(emb);
        Ok(Array1::from_iter(v.slice(ndarray::s![0, .., 0]).iter().copied()))
    }

    fn embed_graph(&self, g: &mut Graph, ids: &[VarId], steps: &[usize]) -> VarId {
        let e = self.config.step_embedding_dim;
        let mut raw = Tensor::zeros((steps.len(), e, 1));
        for (bi, &t) in steps.iter().enumerate() {
            for (i, f) in sinusoidal_features(t, e).into_iter().enumerate() {
                raw[[bi, i, 0]] = f;
            }
        }
        let feat = g.leaf(raw);
        let h = g.conv1d(feat, ids[self.param_index("temb.fc1.w")], Some(ids[self.param_index("temb.fc1.b")]));
        let h = g.silu(h);
        let h = g.conv1d(h, ids[self.param_index("temb.fc2.w")], Some(ids[self.param_index("temb.fc2.b")]));
        g.silu(h)
    }

    /// Kernel of block `i`'s sequence-state layer, shape `(2C, 1, L)`.
    /// Per channel: k[l] = sum_n c_n * (dt * b_n) * exp(-l * dt * a_n).
    fn ssm_kernel(&self, g: &mut Graph, ids: &[VarId], block: usize) -> VarId {
        let l = self.config.sequence_length;
        let p = format!("block{block}");
        let log_dt = ids[self.param_index(&format!("{p}.ssm.log_dt"))];
        let log_a = ids[self.param_index(&format!("{p}.ssm.log_a"))];
        let bvec = ids[self.param_index(&format!("{p}.ssm.b"))];
        let cvec = ids[self.param_index(&format!("{p}.ssm.c"))];

        let lgrid = g.leaf(Tensor::from_shape_fn((1, 1, l), |(_, _, i)| i as f64));
        let sum_logs = g.add(log_dt, log_a);
        let dt_a = g.exp(sum_logs); // (2C, N, 1)
        let neg_dt_a = g.scale(dt_a, -1.0);
        let exponent = g.mul(neg_dt_a, lgrid); // (2C, N, L)
        let powers = g.exp(exponent);
        let dt = g.exp(log_dt); // (2C, 1, 1)
        let cb = g.mul(cvec, bvec); // (2C, N, 1)
        let coef = g.mul(cb, dt);
        let term = g.mul(coef, powers); // (2C, N, L)
        g.sum_axis(term, 1) // (2C, 1, L)
    }

    fn block_graph(
        &self,
        g: &mut Graph,
        ids: &[VarId],
        block: usize,
        h: VarId,
        cond: VarId,
        temb: VarId,
    ) -> (VarId, VarId) {
        let c = self.config.residual_channels;
        let p = format!("block{block}");
        let pid = |name: &str| ids[self.param_index(&format!("{p}.{name}"))];

        let step = g.conv1d(temb, pid("step.w"), Some(pid("step.b"))); // (B, C, 1)
        let h2 = g.add(h, step);
        let mid = g.conv1d(h2, pid("mid.w"), Some(pid("mid.b"))); // (B, 2C, L)

        let kernel = self.ssm_kernel(g, ids, block);
        let mixed = g.causal_conv(mid, kernel);
        let dterm = g.mul(mid, pid("ssm.d"));
        let seq = g.add(mixed, dterm);

        let cproj = g.conv1d(cond, pid("cond.w"), Some(pid("cond.b")));
        let gated_in = g.add(seq, cproj);

        let ta = g.slice_channels(gated_in, 0, c);
        let sb = g.slice_channels(gated_in, c, 2 * c);
        let t = g.tanh(ta);
        let sg = g.sigmoid(sb);
        let z = g.mul(t, sg); // (B, C, L)

        let res = g.conv1d(z, pid("res.w"), Some(pid("res.b")));
        let sum = g.add(h, res);
        let res_out = g.scale(sum, std::f64::consts::FRAC_1_SQRT_2);
        let skip_out = g.conv1d(z, pid("skip.w"), Some(pid("skip.b")));
        (res_out, skip_out)
    }

    /// Single residual block applied to concrete tensors; returns the
    /// residual and skip outputs.
    pub fn residual_block_forward(
        &self,
        block: usize,
        x: &Tensor,
        condition: &Tensor,
        step_emb: &Tensor,
    ) -> Result<(Tensor, Tensor), DenoiserError> {
        let c = self.config.residual_channels;
        let (bsz, ch, l) = x.dim();
        if ch != c || l != self.config.sequence_length {
            return Err(DenoiserError::ShapeMismatch {
                expected: format!("(B, {c}, {})", self.config.sequence_length),
                got: format!("{:?}", x.dim()),
            });
        }
        if condition.dim() != (bsz, self.config.condition_channels, l) {
            return Err(DenoiserError::ShapeMismatch {
                expected: format!("({bsz}, {}, {l})", self.config.condition_channels),
                got: format!("{:?}", condition.dim()),
            });
        }
        if step_emb.dim() != (bsz, self.config.step_embedding_dim, 1) {
            return Err(DenoiserError::ShapeMismatch {
                expected: format!("({bsz}, {}, 1)", self.config.step_embedding_dim),
                got: format!("{:?}", step_emb.dim()),
            });
        }
        let mut g = Graph::new();
        let ids: Vec<VarId> = self.params.iter().map(|p| g.leaf(p.clone())).collect();
        let hx = g.leaf(x.clone());
        let hc = g.leaf(condition.clone());
        let ht = g.leaf(step_emb.clone());
        let (res, skip) = self.block_graph(&mut g, &ids, block, hx, hc, ht);
        Ok((g.value(res).clone(), g.value(skip).clone()))
    }

    /// Full forward pass on an existing graph; used by the training step
    /// so gradients reach the bound parameter leaves.
    pub fn forward_graph(
        &self,
        g: &mut Graph,
        x: VarId,
        cond: VarId,
        steps: &[usize],
    ) -> BoundForward {
        let ids: Vec<VarId> = self.params.iter().map(|p| g.leaf(p.clone())).collect();
        let out = self.forward_with_ids(g, &ids, x, cond, steps);
        BoundForward { param_ids: ids, output: out }
    }

    fn forward_with_ids(
        &self,
        g: &mut Graph,
        ids: &[VarId],
        x: VarId,
        cond: VarId,
        steps: &[usize],
    ) -> VarId {
        let temb = self.embed_graph(g, ids, steps);
        let h = g.conv1d(x, ids[self.param_index("input.w")], Some(ids[self.param_index("input.b")]));
        let mut h = g.relu(h);
        let mut skip_sum: Option<VarId> = None;
        for i in 0..self.config.residual_blocks {
            let (res, skip) = self.block_graph(g, ids, i, h, cond, temb);
            h = res;
            skip_sum = Some(match skip_sum {
                Some(acc) => g.add(acc, skip),
                None => skip,
            });
        }
        let skips = skip_sum.expect("at least one block");
        let scaled = g.scale(skips, 1.0 / (self.config.residual_blocks as f64).sqrt());
        let act = g.relu(scaled);
        let o1 = g.conv1d(act, ids[self.param_index("out1.w")], Some(ids[self.param_index("out1.b")]));
        let act2 = g.relu(o1);
        g.conv1d(act2, ids[self.param_index("out2.w")], Some(ids[self.param_index("out2.b")]))
    }

    /// Validated plain forward pass: noise estimate with the same shape
    /// as the input signal.
    pub fn denoiser_forward(
        &self,
        x: &Tensor,
        cond: &Tensor,
        steps: &[usize],
    ) -> Result<Tensor, DenoiserError> {
        let (bsz, ch, l) = x.dim();
        if ch != self.config.in_channels || l != self.config.sequence_length {
            return Err(DenoiserError::ShapeMismatch {
                expected: format!("(B, {}, {})", self.config.in_channels, self.config.sequence_length),
                got: format!("{:?}", x.dim()),
            });
        }
        if cond.dim() != (bsz, self.config.condition_channels, l) {
            return Err(DenoiserError::ShapeMismatch {
                expected: format!("({bsz}, {}, {l})", self.config.condition_channels),
                got: format!("{:?}", cond.dim()),
            });
        }
        if steps.len() != bsz {
            return Err(DenoiserError::ShapeMismatch {
                expected: format!("{bsz} step indices"),
                got: format!("{}", steps.len()),
            });
        }
        if let Some(t) = steps.iter().find(|&&t| t < 1) {
            return Err(DenoiserError::InvalidStep(*t));
        }
        if x.iter().chain(cond.iter()).any(|v| !v.is_finite()) {
            return Err(DenoiserError::NonFiniteInput);
        }
        let mut g = Graph::new();
        let xid = g.leaf(x.clone());
        let cid = g.leaf(cond.clone());
        let bound = self.forward_graph(&mut g, xid, cid, steps);
        Ok(g.value(bound.output).clone())
    }
}
