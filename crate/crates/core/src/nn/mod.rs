//! Minimal reverse-mode autodiff over rank-3 tensors.
//!
//! Everything the noise-prediction network needs is expressible with a
//! handful of ops on `(batch, channels, length)` arrays: broadcasting
//! add/mul, pointwise nonlinearities, channel-mixing 1-D convolution,
//! per-channel causal convolution (the sequence-state layer), channel
//! slicing/concat and reductions. The tape is rebuilt per forward pass;
//! values are computed eagerly and `backward` walks the tape once.

mod adam;

pub use adam::Adam;

use ndarray::{Array3, Axis, Zip};

/// All graph values are `(d0, d1, d2)` arrays of f64. By convention the
/// network uses `(batch, channels, time)`; parameters use a leading 1.
pub type Tensor = Array3<f64>;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarId(usize);

impl VarId {
    /// Position in the gradient vector returned by [`Graph::backward`].
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    Add(VarId, VarId),
    Sub(VarId, VarId),
    Mul(VarId, VarId),
    Scale(VarId, f64),
    Exp(VarId),
    Tanh(VarId),
    Sigmoid(VarId),
    Relu(VarId),
    Silu(VarId),
    Square(VarId),
    /// Sum over one axis, keeping it as size 1.
    SumAxis(VarId, usize),
    MeanAll(VarId),
    /// Channel-mixing convolution along the last axis with zero padding.
    /// `w` is `(c_out, c_in, k)`, bias is `(1, c_out, 1)`.
    Conv1d {
        x: VarId,
        w: VarId,
        bias: Option<VarId>,
        pad: usize,
    },
    /// Per-channel causal convolution: kernel `(c, 1, lk)` applied to
    /// `(b, c, l)` with `y[b,c,t] = sum_l k[c,0,l] * x[b,c,t-l]`.
    CausalConv { x: VarId, kernel: VarId },
    ConcatChannels(Vec<VarId>),
    /// Channels `[start, end)` of the input.
    SliceChannels(VarId, usize, usize),
}

struct Node {
    op: Op,
    value: Tensor,
}

/// A define-by-run computation tape. Build one per forward pass.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn bcast_shape(a: &[usize; 3], b: &[usize; 3]) -> [usize; 3] {
    let mut out = [0usize; 3];
    for i in 0..3 {
        assert!(
            a[i] == b[i] || a[i] == 1 || b[i] == 1,
            "incompatible broadcast shapes {a:?} vs {b:?}"
        );
        out[i] = a[i].max(b[i]);
    }
    out
}

fn binop(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let sa: [usize; 3] = a.dim().into();
    let sb: [usize; 3] = b.dim().into();
    let shape = bcast_shape(&sa, &sb);
    let av = a.broadcast(shape).expect("broadcast lhs");
    let bv = b.broadcast(shape).expect("broadcast rhs");
    let mut out = Tensor::zeros(shape);
    Zip::from(&mut out).and(&av).and(&bv).for_each(|o, &x, &y| *o = f(x, y));
    out
}

/// Sum `grad` down to `shape` over the axes that were broadcast.
fn reduce_to(grad: &Tensor, shape: [usize; 3]) -> Tensor {
    let gs: [usize; 3] = grad.dim().into();
    if gs == shape {
        return grad.clone();
    }
    let mut g = grad.clone();
    for ax in 0..3 {
        let cur: [usize; 3] = g.dim().into();
        if shape[ax] == 1 && cur[ax] > 1 {
            g = g.sum_axis(Axis(ax)).insert_axis(Axis(ax));
        }
    }
    g
}

fn dim3(t: &Tensor) -> [usize; 3] {
    t.dim().into()
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, op: Op, value: Tensor) -> VarId {
        self.nodes.push(Node { op, value });
        VarId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> VarId {
        self.push(Op::Leaf, value)
    }

    pub fn value(&self, id: VarId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: VarId) -> f64 {
        let v = self.value(id);
        assert_eq!(v.len(), 1, "scalar() on non-scalar node");
        v[[0, 0, 0]]
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> VarId {
        let v = binop(self.value(a), self.value(b), |x, y| x + y);
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> VarId {
        let v = binop(self.value(a), self.value(b), |x, y| x - y);
        self.push(Op::Sub(a, b), v)
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> VarId {
        let v = binop(self.value(a), self.value(b), |x, y| x * y);
        self.push(Op::Mul(a, b), v)
    }

    pub fn scale(&mut self, a: VarId, c: f64) -> VarId {
        let v = self.value(a).mapv(|x| x * c);
        self.push(Op::Scale(a, c), v)
    }

    pub fn exp(&mut self, a: VarId) -> VarId {
        let v = self.value(a).mapv(f64::exp);
        self.push(Op::Exp(a), v)
    }

    pub fn tanh(&mut self, a: VarId) -> VarId {
        let v = self.value(a).mapv(f64::tanh);
        self.push(Op::Tanh(a), v)
    }

    pub fn sigmoid(&mut self, a: VarId) -> VarId {
        let v = self.value(a).mapv(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(Op::Sigmoid(a), v)
    }

    pub fn relu(&mut self, a: VarId) -> VarId {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.push(Op::Relu(a), v)
    }

    pub fn silu(&mut self, a: VarId) -> VarId {
        let v = self.value(a).mapv(|x| x / (1.0 + (-x).exp()));
        self.push(Op::Silu(a), v)
    }

    pub fn square(&mut self, a: VarId) -> VarId {
        let v = self.value(a).mapv(|x| x * x);
        self.push(Op::Square(a), v)
    }

    pub fn sum_axis(&mut self, a: VarId, axis: usize) -> VarId {
        let v = self.value(a).sum_axis(Axis(axis)).insert_axis(Axis(axis));
        self.push(Op::SumAxis(a, axis), v)
    }

    pub fn mean_all(&mut self, a: VarId) -> VarId {
        let m = self.value(a).mean().unwrap_or(0.0);
        let mut v = Tensor::zeros((1, 1, 1));
        v[[0, 0, 0]] = m;
        self.push(Op::MeanAll(a), v)
    }

    /// Same-padding channel-mixing convolution (`pad = k / 2`).
    pub fn conv1d(&mut self, x: VarId, w: VarId, bias: Option<VarId>) -> VarId {
        let (xv, wv) = (self.value(x), self.value(w));
        let (b, c_in, l) = xv.dim();
        let (c_out, c_in_w, k) = wv.dim();
        assert_eq!(c_in, c_in_w, "conv1d channel mismatch");
        let pad = k / 2;
        let mut out = Tensor::zeros((b, c_out, l));
        for bi in 0..b {
            for oc in 0..c_out {
                for t in 0..l {
                    let mut acc = 0.0;
                    for ki in 0..k {
                        let src = t as isize + ki as isize - pad as isize;
                        if src < 0 || src >= l as isize {
                            continue;
                        }
                        let src = src as usize;
                        for ic in 0..c_in {
                            acc += xv[[bi, ic, src]] * wv[[oc, ic, ki]];
                        }
                    }
                    out[[bi, oc, t]] = acc;
                }
            }
        }
        if let Some(bid) = bias {
            let bv = self.value(bid);
            assert_eq!(bv.dim(), (1, c_out, 1), "conv1d bias shape");
            for bi in 0..b {
                for oc in 0..c_out {
                    for t in 0..l {
                        out[[bi, oc, t]] += bv[[0, oc, 0]];
                    }
                }
            }
        }
        self.push(Op::Conv1d { x, w, bias, pad }, out)
    }

    /// Depthwise causal convolution; the sequence-state layer's time mixing.
    pub fn causal_conv(&mut self, x: VarId, kernel: VarId) -> VarId {
        let (xv, kv) = (self.value(x), self.value(kernel));
        let (b, c, l) = xv.dim();
        let (ck, one, lk) = kv.dim();
        assert_eq!((ck, one), (c, 1), "causal kernel shape");
        let mut out = Tensor::zeros((b, c, l));
        for bi in 0..b {
            for ci in 0..c {
                for t in 0..l {
                    let mut acc = 0.0;
                    for li in 0..=t.min(lk - 1) {
                        acc += kv[[ci, 0, li]] * xv[[bi, ci, t - li]];
                    }
                    out[[bi, ci, t]] = acc;
                }
            }
        }
        self.push(Op::CausalConv { x, kernel }, out)
    }

    pub fn concat_channels(&mut self, parts: &[VarId]) -> VarId {
        assert!(!parts.is_empty());
        let (b, _, l) = self.value(parts[0]).dim();
        let c_total: usize = parts.iter().map(|p| self.value(*p).dim().1).sum();
        let mut out = Tensor::zeros((b, c_total, l));
        let mut off = 0;
        for p in parts {
            let v = self.value(*p);
            let (pb, pc, pl) = v.dim();
            assert_eq!((pb, pl), (b, l), "concat shape mismatch");
            out.slice_mut(ndarray::s![.., off..off + pc, ..]).assign(v);
            off += pc;
        }
        self.push(Op::ConcatChannels(parts.to_vec()), out)
    }

    pub fn slice_channels(&mut self, a: VarId, start: usize, end: usize) -> VarId {
        let v = self.value(a).slice(ndarray::s![.., start..end, ..]).to_owned();
        self.push(Op::SliceChannels(a, start, end), v)
    }

    /// Reverse pass from `root` (must be scalar); returns per-node gradients.
    pub fn backward(&self, root: VarId) -> Vec<Option<Tensor>> {
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        let mut seed = Tensor::zeros((1, 1, 1));
        seed[[0, 0, 0]] = 1.0;
        grads[root.0] = Some(seed);

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.accumulate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        grads
    }

    fn accumulate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let add_grad = |grads: &mut [Option<Tensor>], id: VarId, contrib: Tensor| {
            match &mut grads[id.0] {
                Some(existing) => *existing += &contrib,
                slot => *slot = Some(contrib),
            }
        };
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                add_grad(grads, *a, reduce_to(g, dim3(self.value(*a))));
                add_grad(grads, *b, reduce_to(g, dim3(self.value(*b))));
            }
            Op::Sub(a, b) => {
                add_grad(grads, *a, reduce_to(g, dim3(self.value(*a))));
                add_grad(grads, *b, reduce_to(&g.mapv(|x| -x), dim3(self.value(*b))));
            }
            Op::Mul(a, b) => {
                let ga = binop(g, self.value(*b), |x, y| x * y);
                let gb = binop(g, self.value(*a), |x, y| x * y);
                add_grad(grads, *a, reduce_to(&ga, dim3(self.value(*a))));
                add_grad(grads, *b, reduce_to(&gb, dim3(self.value(*b))));
            }
            Op::Scale(a, c) => add_grad(grads, *a, g.mapv(|x| x * c)),
            Op::Exp(a) => add_grad(grads, *a, g * &self.nodes[idx].value),
            Op::Tanh(a) => {
                let d = self.nodes[idx].value.mapv(|y| 1.0 - y * y);
                add_grad(grads, *a, g * &d);
            }
            Op::Sigmoid(a) => {
                let d = self.nodes[idx].value.mapv(|y| y * (1.0 - y));
                add_grad(grads, *a, g * &d);
            }
            Op::Relu(a) => {
                let d = self.value(*a).mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
                add_grad(grads, *a, g * &d);
            }
            Op::Silu(a) => {
                let d = self.value(*a).mapv(|x| {
                    let s = 1.0 / (1.0 + (-x).exp());
                    s * (1.0 + x * (1.0 - s))
                });
                add_grad(grads, *a, g * &d);
            }
            Op::Square(a) => {
                let d = self.value(*a).mapv(|x| 2.0 * x);
                add_grad(grads, *a, g * &d);
            }
            Op::SumAxis(a, _axis) => {
                let target = dim3(self.value(*a));
                let gb = g.broadcast(target).expect("sum_axis grad broadcast").to_owned();
                add_grad(grads, *a, gb);
            }
            Op::MeanAll(a) => {
                let target = dim3(self.value(*a));
                let n = self.value(*a).len() as f64;
                let gv = g[[0, 0, 0]] / n;
                add_grad(grads, *a, Tensor::from_elem(target, gv));
            }
            Op::Conv1d { x, w, bias, pad } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let (b, c_in, l) = xv.dim();
                let (c_out, _, k) = wv.dim();
                let mut gx = Tensor::zeros((b, c_in, l));
                let mut gw = Tensor::zeros((c_out, c_in, k));
                for bi in 0..b {
                    for oc in 0..c_out {
                        for t in 0..l {
                            let go = g[[bi, oc, t]];
                            if go == 0.0 {
                                continue;
                            }
                            for ki in 0..k {
                                let src = t as isize + ki as isize - *pad as isize;
                                if src < 0 || src >= l as isize {
                                    continue;
                                }
                                let src = src as usize;
                                for ic in 0..c_in {
                                    gx[[bi, ic, src]] += go * wv[[oc, ic, ki]];
                                    gw[[oc, ic, ki]] += go * xv[[bi, ic, src]];
                                }
                            }
                        }
                    }
                }
                add_grad(grads, *x, gx);
                add_grad(grads, *w, gw);
                if let Some(bid) = bias {
                    let mut gb = Tensor::zeros((1, c_out, 1));
                    for bi in 0..b {
                        for oc in 0..c_out {
                            for t in 0..l {
                                gb[[0, oc, 0]] += g[[bi, oc, t]];
                            }
                        }
                    }
                    add_grad(grads, *bid, gb);
                }
            }
            Op::CausalConv { x, kernel } => {
                let xv = self.value(*x);
                let kv = self.value(*kernel);
                let (b, c, l) = xv.dim();
                let lk = kv.dim().2;
                let mut gx = Tensor::zeros((b, c, l));
                let mut gk = Tensor::zeros((c, 1, lk));
                for bi in 0..b {
                    for ci in 0..c {
                        for t in 0..l {
                            let go = g[[bi, ci, t]];
                            if go == 0.0 {
                                continue;
                            }
                            for li in 0..=t.min(lk - 1) {
                                gx[[bi, ci, t - li]] += go * kv[[ci, 0, li]];
                                gk[[ci, 0, li]] += go * xv[[bi, ci, t - li]];
                            }
                        }
                    }
                }
                add_grad(grads, *x, gx);
                add_grad(grads, *kernel, gk);
            }
            Op::ConcatChannels(parts) => {
                let mut off = 0;
                for p in parts {
                    let pc = self.value(*p).dim().1;
                    let gp = g.slice(ndarray::s![.., off..off + pc, ..]).to_owned();
                    add_grad(grads, *p, gp);
                    off += pc;
                }
            }
            Op::SliceChannels(a, start, end) => {
                let mut ga = Tensor::zeros(dim3(self.value(*a)));
                ga.slice_mut(ndarray::s![.., *start..*end, ..]).assign(g);
                add_grad(grads, *a, ga);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn randn(rng: &mut ChaCha8Rng, shape: (usize, usize, usize)) -> Tensor {
        use rand_distr::StandardNormal;
        Tensor::from_shape_fn(shape, |_| rng.sample(StandardNormal))
    }

    /// Finite-difference check of d(loss)/d(leaf) for an arbitrary graph
    /// builder. The loss is mean of squares of the builder output.
    fn check_grads(
        build: impl Fn(&mut Graph, &[VarId]) -> VarId,
        leaves: &[Tensor],
        tol: f64,
    ) {
        let run = |vals: &[Tensor]| -> (f64, Vec<Option<Tensor>>, Vec<VarId>) {
            let mut g = Graph::new();
            let ids: Vec<VarId> = vals.iter().map(|v| g.leaf(v.clone())).collect();
            let out = build(&mut g, &ids);
            let sq = g.square(out);
            let loss = g.mean_all(sq);
            let grads = g.backward(loss);
            (g.scalar(loss), grads, ids)
        };

        let (_, grads, ids) = run(leaves);
        let h = 1e-5;
        for (li, leaf) in leaves.iter().enumerate() {
            let analytic = grads[ids[li].0].as_ref().expect("missing grad");
            for idx in leaf.indexed_iter().map(|(i, _)| i).collect::<Vec<_>>() {
                let mut plus = leaves.to_vec();
                plus[li][idx] += h;
                let mut minus = leaves.to_vec();
                minus[li][idx] -= h;
                let fd = (run(&plus).0 - run(&minus).0) / (2.0 * h);
                let an = analytic[idx];
                let denom = fd.abs().max(an.abs()).max(1e-8);
                assert!(
                    (fd - an).abs() / denom < tol,
                    "grad mismatch leaf {li} idx {idx:?}: fd={fd} analytic={an}"
                );
            }
        }
    }

    #[test]
    fn broadcast_add_reduces_grad() {
        let a = array![[[1.0, 2.0], [3.0, 4.0]]]; // (1,2,2)
        let b = array![[[10.0], [20.0]]]; // (1,2,1) broadcast over time
        let mut g = Graph::new();
        let ia = g.leaf(a.clone());
        let ib = g.leaf(b.clone());
        let s = g.add(ia, ib);
        assert_eq!(g.value(s)[[0, 1, 1]], 24.0);
        let m = g.mean_all(s);
        let grads = g.backward(m);
        // d mean / d b broadcasts back: each b element feeds 2 outputs of 4.
        let gb = grads[ib.0].as_ref().unwrap();
        assert_eq!(gb.dim(), (1, 2, 1));
        assert!((gb[[0, 0, 0]] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn pointwise_op_grads_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = randn(&mut rng, (2, 3, 5));
        let y = randn(&mut rng, (1, 3, 1));
        check_grads(
            |g, ids| {
                let t = g.tanh(ids[0]);
                let s = g.sigmoid(ids[0]);
                let p = g.mul(t, s);
                let e = g.exp(ids[1]);
                let sum = g.add(p, e);
                let r = g.relu(sum);
                g.silu(r)
            },
            &[x, y],
            1e-5,
        );
    }

    #[test]
    fn conv1d_grads_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = randn(&mut rng, (2, 3, 6));
        let w = randn(&mut rng, (4, 3, 3));
        let b = randn(&mut rng, (1, 4, 1));
        check_grads(|g, ids| g.conv1d(ids[0], ids[1], Some(ids[2])), &[x, w, b], 1e-5);
    }

    #[test]
    fn causal_conv_grads_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = randn(&mut rng, (2, 3, 6));
        let k = randn(&mut rng, (3, 1, 6));
        check_grads(|g, ids| g.causal_conv(ids[0], ids[1]), &[x, k], 1e-5);
    }

    #[test]
    fn slice_concat_and_reductions() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let x = randn(&mut rng, (1, 4, 3));
        check_grads(
            |g, ids| {
                let a = g.slice_channels(ids[0], 0, 2);
                let b = g.slice_channels(ids[0], 2, 4);
                let m = g.mul(a, b);
                let cat = g.concat_channels(&[m, a]);
                g.sum_axis(cat, 1)
            },
            &[x],
            1e-5,
        );
    }

    #[test]
    fn causal_conv_is_causal() {
        let mut g = Graph::new();
        let mut x = Tensor::zeros((1, 1, 5));
        x[[0, 0, 2]] = 1.0; // impulse at t=2
        let k = array![[[1.0, 0.5, 0.25]]];
        let ix = g.leaf(x);
        let ik = g.leaf(k);
        let y = g.causal_conv(ix, ik);
        let v = g.value(y);
        assert_eq!(v[[0, 0, 0]], 0.0);
        assert_eq!(v[[0, 0, 1]], 0.0);
        assert_eq!(v[[0, 0, 2]], 1.0);
        assert_eq!(v[[0, 0, 3]], 0.5);
        assert_eq!(v[[0, 0, 4]], 0.25);
    }
}
