//! Parameterized building blocks recorded on a [`Graph`]: linear maps,
//! layer norm, LSTM, same-padded convolution, GLU, add-and-norm and the
//! three attention variants.

use rand::Rng;

use crate::config::AttentionKind;
use crate::graph::{Graph, NodeId};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, bias: bool, rng: &mut impl Rng) -> Self {
        let w = store.add_glorot(format!("{name}.w"), d_in, d_out, rng);
        let b = bias.then(|| store.add(format!("{name}.b"), Tensor::zeros(&[1, d_out])));
        Linear { w, b }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: NodeId) -> NodeId {
        let w = g.param(self.w);
        let y = g.matmul(x, w);
        match self.b {
            Some(b) => {
                let b = g.param(b);
                g.add_row(y, b)
            }
            None => y,
        }
    }
}

/// Layer norm with learned gain and bias.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> Self {
        LayerNorm {
            gain: store.add(format!("{name}.gain"), Tensor::filled(&[1, d], 1.0)),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[1, d])),
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: NodeId) -> NodeId {
        let n = g.layer_norm(x);
        let gain = g.param(self.gain);
        let bias = g.param(self.bias);
        let y = g.mul_row(n, gain);
        g.add_row(y, bias)
    }
}

/// Residual combination: learned layer norm of the sum, or the sum scaled
/// by √0.5.
#[derive(Debug, Clone)]
pub enum AddNorm {
    Layer(LayerNorm),
    Scaled,
}

pub fn add_norm(g: &mut Graph<'_>, a: NodeId, b: NodeId, mode: &AddNorm) -> NodeId {
    let s = g.add(a, b);
    match mode {
        AddNorm::Layer(ln) => ln.forward(g, s),
        AddNorm::Scaled => g.scale(s, 0.5f64.sqrt()),
    }
}

/// First half of the last axis gated by the sigmoid of the second half.
pub fn glu(g: &mut Graph<'_>, x: NodeId) -> Result<NodeId, TensorError> {
    let c = g.value(x).cols();
    if !c.is_multiple_of(2) {
        return Err(TensorError::OddExtent(c));
    }
    let d = c / 2;
    let a = g.slice_cols(x, 0, d);
    let gate = g.slice_cols(x, d, d);
    let s = g.sigmoid(gate);
    Ok(g.mul(a, s))
}

/// Same-length convolution over rows; the kernel is stored as
/// `[k·d_in × d_out]`, i.e. `[k × d_in × d_out]` flattened.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub w: ParamId,
    pub b: ParamId,
    pub k: usize,
}

impl Conv1d {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        k: usize,
        d_in: usize,
        d_out: usize,
        rng: &mut impl Rng,
    ) -> Result<Self, TensorError> {
        if k.is_multiple_of(2) {
            return Err(TensorError::EvenKernel(k));
        }
        let limit = (6.0 / (k * d_in + d_out) as f64).sqrt();
        let data = (0..k * d_in * d_out).map(|_| rng.gen_range(-limit..limit)).collect();
        Ok(Conv1d {
            w: store.add(format!("{name}.w"), Tensor::matrix(k * d_in, d_out, data)),
            b: store.add(format!("{name}.b"), Tensor::zeros(&[1, d_out])),
            k,
        })
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: NodeId) -> NodeId {
        let u = g.unfold(x, self.k).expect("odd kernel");
        let w = g.param(self.w);
        let b = g.param(self.b);
        let y = g.matmul(u, w);
        g.add_row(y, b)
    }
}

/// LSTM with gates ordered input, forget, candidate, output.
#[derive(Debug, Clone)]
pub struct Lstm {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
    pub hidden: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct LstmState {
    pub h: NodeId,
    pub c: NodeId,
}

impl Lstm {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let wx = store.add_glorot(format!("{name}.wx"), d_in, 4 * hidden, rng);
        let wh = store.add_glorot(format!("{name}.wh"), hidden, 4 * hidden, rng);
        let mut bias = Tensor::zeros(&[1, 4 * hidden]);
        bias.data_mut()[hidden..2 * hidden].fill(1.0);
        let b = store.add(format!("{name}.b"), bias);
        Lstm { wx, wh, b, hidden }
    }

    pub fn zero_state(&self, g: &mut Graph<'_>) -> LstmState {
        LstmState {
            h: g.input(Tensor::zeros(&[1, self.hidden])),
            c: g.input(Tensor::zeros(&[1, self.hidden])),
        }
    }

    /// `x·Wx + b` for every row of `x`.
    pub fn project_inputs(&self, g: &mut Graph<'_>, x: NodeId) -> NodeId {
        let wx = g.param(self.wx);
        let b = g.param(self.b);
        let y = g.matmul(x, wx);
        g.add_row(y, b)
    }

    /// One step from an already projected input row.
    pub fn step_projected(&self, g: &mut Graph<'_>, xw: NodeId, state: LstmState) -> LstmState {
        let h = self.hidden;
        let wh = g.param(self.wh);
        let hw = g.matmul(state.h, wh);
        let z = g.add(xw, hw);
        let i = g.slice_cols(z, 0, h);
        let i = g.sigmoid(i);
        let f = g.slice_cols(z, h, h);
        let f = g.sigmoid(f);
        let cand = g.slice_cols(z, 2 * h, h);
        let cand = g.tanh(cand);
        let o = g.slice_cols(z, 3 * h, h);
        let o = g.sigmoid(o);
        let keep = g.mul(f, state.c);
        let write = g.mul(i, cand);
        let c = g.add(keep, write);
        let tc = g.tanh(c);
        let h = g.mul(o, tc);
        LstmState { h, c }
    }

    pub fn step(&self, g: &mut Graph<'_>, x: NodeId, state: LstmState) -> LstmState {
        let xw = self.project_inputs(g, x);
        self.step_projected(g, xw, state)
    }

    /// Hidden states for every row of `x`, run backwards when `reverse`;
    /// row `i` of the output always belongs to input row `i`.
    pub fn sequence(&self, g: &mut Graph<'_>, x: NodeId, reverse: bool) -> NodeId {
        let m = g.value(x).rows();
        let xw = self.project_inputs(g, x);
        let mut state = self.zero_state(g);
        let mut hs = vec![state.h; m];
        let order: Vec<usize> = if reverse { (0..m).rev().collect() } else { (0..m).collect() };
        for t in order {
            let row = g.slice_rows(xw, t, 1);
            state = self.step_projected(g, row, state);
            hs[t] = state.h;
        }
        g.concat_rows(&hs)
    }
}

/// Projected keys and values, cached once per encoder output.
#[derive(Debug, Clone)]
pub struct Memory {
    /// Per head: transposed keys `[d_h × M]` and values `[M × d_h]`.
    heads: Vec<(NodeId, NodeId)>,
}

/// Attention layer shared by the three cross-attention variants and the
/// encoders' self-attention (which uses the multi-head form).
#[derive(Debug, Clone)]
pub struct Attention {
    pub kind: AttentionKind,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    /// Per-head `[W_Q^h, W_K^h, W_V^h]`, each `[d × d/h]` (multi-head only).
    pub heads: Vec<[ParamId; 3]>,
    /// Norm applied to `q + g` (multi-step only); `None` bypasses it.
    pub norm: Option<LayerNorm>,
    /// Scale multi-head scores by `1/√(d/h)`.
    pub scaled: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("d_model {d} is not divisible by {heads} heads")]
pub struct HeadError {
    pub d: usize,
    pub heads: usize,
}

impl Attention {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        kind: AttentionKind,
        d: usize,
        heads: usize,
        scaled: bool,
        rng: &mut impl Rng,
    ) -> Result<Self, HeadError> {
        if heads == 0 || !d.is_multiple_of(heads) {
            return Err(HeadError { d, heads });
        }
        let wq = store.add_glorot(format!("{name}.wq"), d, d, rng);
        let wk = store.add_glorot(format!("{name}.wk"), d, d, rng);
        let wv = store.add_glorot(format!("{name}.wv"), d, d, rng);
        let head_params = if kind == AttentionKind::Mha {
            (0..heads)
                .map(|h| {
                    ["q", "k", "v"].map(|m| store.add_glorot(format!("{name}.head{h}.w{m}"), d, d / heads, rng))
                })
                .collect()
        } else {
            Vec::new()
        };
        let norm = (kind == AttentionKind::Msa).then(|| LayerNorm::new(store, &format!("{name}.norm"), d));
        Ok(Attention {
            kind,
            wq,
            wk,
            wv,
            heads: head_params,
            norm,
            scaled,
        })
    }

    pub fn memory(&self, g: &mut Graph<'_>, k: NodeId, v: NodeId) -> Memory {
        let (wk, wv) = (g.param(self.wk), g.param(self.wv));
        let kp = g.matmul(k, wk);
        let vp = g.matmul(v, wv);
        let heads = if self.heads.is_empty() {
            vec![(g.transpose(kp), vp)]
        } else {
            self.heads
                .iter()
                .map(|[_, hk, hv]| {
                    let (hk, hv) = (g.param(*hk), g.param(*hv));
                    let kh = g.matmul(kp, hk);
                    let vh = g.matmul(vp, hv);
                    (g.transpose(kh), vh)
                })
                .collect()
        };
        Memory { heads }
    }

    /// Context rows for queries `q` (`[T × d]`). `extra` is the decoder
    /// embedding `g`, required by the multi-step variant. Returns the
    /// context and the attention weights of each head.
    pub fn attend(&self, g: &mut Graph<'_>, q: NodeId, extra: Option<NodeId>, mem: &Memory) -> (NodeId, Vec<NodeId>) {
        let query_in = match self.kind {
            AttentionKind::Msa => {
                let e = extra.expect("multi-step attention needs the decoder embedding");
                let s = g.add(q, e);
                match &self.norm {
                    Some(ln) => ln.forward(g, s),
                    None => s,
                }
            }
            _ => q,
        };
        let wq = g.param(self.wq);
        let qp = g.matmul(query_in, wq);
        let mut contexts = Vec::with_capacity(mem.heads.len());
        let mut weights = Vec::with_capacity(mem.heads.len());
        for (i, &(kt, v)) in mem.heads.iter().enumerate() {
            let qh = match self.heads.get(i) {
                Some([hq, _, _]) => {
                    let hq = g.param(*hq);
                    g.matmul(qp, hq)
                }
                None => qp,
            };
            let mut score = g.matmul(qh, kt);
            if self.kind == AttentionKind::Mha && self.scaled {
                let dh = g.value(kt).rows() as f64;
                score = g.scale(score, 1.0 / dh.sqrt());
            }
            let a = g.softmax(score);
            contexts.push(g.matmul(a, v));
            weights.push(a);
        }
        let ctx = if contexts.len() == 1 {
            contexts[0]
        } else {
            g.concat_cols(&contexts)
        };
        (ctx, weights)
    }

    pub fn forward(
        &self,
        g: &mut Graph<'_>,
        q: NodeId,
        extra: Option<NodeId>,
        k: NodeId,
        v: NodeId,
    ) -> (NodeId, Vec<NodeId>) {
        let mem = self.memory(g, k, v);
        self.attend(g, q, extra, &mem)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{grad_check, DEFAULT_EPS};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(17)
    }

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor::matrix(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    #[test]
    fn lstm_zero_weights() {
        let mut store = ParamStore::new();
        let lstm = Lstm::new(&mut store, "l", 3, 2, &mut rng());
        for id in [lstm.wx, lstm.wh, lstm.b] {
            store.get_mut(id).value.data_mut().fill(0.0);
        }
        let mut g = Graph::new(&store);
        let x = g.input(Tensor::matrix(1, 3, vec![0.3, -1.0, 2.0]));
        let s0 = lstm.zero_state(&mut g);
        let s1 = lstm.step(&mut g, x, s0);
        assert_eq!(g.value(s1.h).data(), &[0.0, 0.0]);
    }

    #[test]
    fn lstm_hand_step() {
        let mut store = ParamStore::new();
        let lstm = Lstm::new(&mut store, "l", 1, 2, &mut rng());
        let wx = vec![0.5, -0.5, 0.1, 0.2, 0.3, 0.4, -0.3, 0.6];
        let wh = vec![0.1; 16];
        let b = vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7];
        store.set_value(lstm.wx, Tensor::matrix(1, 8, wx.clone()));
        store.set_value(lstm.wh, Tensor::matrix(2, 8, wh));
        store.set_value(lstm.b, Tensor::matrix(1, 8, b.clone()));
        let (x, h0, c0) = (2.0, [0.5, -0.5], [1.0, 2.0]);

        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        let mut expected_h = [0.0; 2];
        let mut expected_c = [0.0; 2];
        for u in 0..2 {
            let z = |gate: usize| x * wx[gate * 2 + u] + 0.1 * (h0[0] + h0[1]) + b[gate * 2 + u];
            let (i, f, cand, o) = (sig(z(0)), sig(z(1)), z(2).tanh(), sig(z(3)));
            expected_c[u] = f * c0[u] + i * cand;
            expected_h[u] = o * expected_c[u].tanh();
        }

        let mut g = Graph::new(&store);
        let xi = g.input(Tensor::matrix(1, 1, vec![x]));
        let state = LstmState {
            h: g.input(Tensor::matrix(1, 2, h0.to_vec())),
            c: g.input(Tensor::matrix(1, 2, c0.to_vec())),
        };
        let s = lstm.step(&mut g, xi, state);
        for u in 0..2 {
            assert!((g.value(s.h).data()[u] - expected_h[u]).abs() < 1e-14);
            assert!((g.value(s.c).data()[u] - expected_c[u]).abs() < 1e-14);
        }
    }

    #[test]
    fn glu_cases() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let x = g.input(Tensor::matrix(2, 4, vec![0.0, 0.0, 5.0, -5.0, 1.0, 2.0, 30.0, 30.0]));
        let y = glu(&mut g, x).unwrap();
        assert_eq!(g.value(y).shape(), &[2, 2]);
        assert_eq!(&g.value(y).data()[..2], &[0.0, 0.0]);
        assert!((g.value(y).data()[2] - 1.0).abs() < 1e-9);
        assert!((g.value(y).data()[3] - 2.0).abs() < 1e-9);
        let odd = g.input(Tensor::matrix(1, 3, vec![0.0; 3]));
        assert_eq!(glu(&mut g, odd), Err(TensorError::OddExtent(3)));
    }

    #[test]
    fn add_norm_modes() {
        let mut store = ParamStore::new();
        let ln = LayerNorm::new(&mut store, "ln", 3);
        let mut g = Graph::new(&store);
        let x = g.input(Tensor::matrix(1, 3, vec![1.0, -2.0, 4.0]));
        let s = add_norm(&mut g, x, x, &AddNorm::Scaled);
        for (a, b) in g.value(s).data().iter().zip([1.0, -2.0, 4.0]) {
            assert!((a - b * 2f64.sqrt()).abs() < 1e-15);
        }
        let z = g.input(Tensor::zeros(&[1, 3]));
        let s = add_norm(&mut g, z, z, &AddNorm::Scaled);
        assert_eq!(g.value(s).data(), &[0.0; 3]);
        let n = add_norm(&mut g, x, z, &AddNorm::Layer(ln));
        let mean: f64 = g.value(n).data().iter().sum::<f64>() / 3.0;
        assert!(mean.abs() < 1e-12);
    }

    #[test]
    fn attention_hand_cases() {
        let mut store = ParamStore::new();
        let att = Attention::new(&mut store, "a", AttentionKind::Ma, 2, 1, false, &mut rng()).unwrap();
        for id in [att.wq, att.wk, att.wv] {
            store.set_value(id, Tensor::identity(2));
        }
        let mut g = Graph::new(&store);
        let q = g.input(Tensor::matrix(1, 2, vec![1.0, 0.0]));
        let k = g.input(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]));
        let v = g.input(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]));
        let (c, a) = att.forward(&mut g, q, None, k, v);
        let e = std::f64::consts::E;
        let (a0, a1) = (e / (e + 1.0), 1.0 / (e + 1.0));
        assert!((g.value(a[0]).data()[0] - a0).abs() < 1e-15);
        let expected = [a0 + 3.0 * a1, 2.0 * a0 + 4.0 * a1];
        for (x, y) in g.value(c).data().iter().zip(expected) {
            assert!((x - y).abs() < 1e-14);
        }

        // Uniform scores average the values; a single key returns its value.
        let zq = g.input(Tensor::zeros(&[1, 2]));
        let (c, _) = att.forward(&mut g, zq, None, k, v);
        assert_eq!(g.value(c).data(), &[2.0, 3.0]);
        let k1 = g.input(Tensor::matrix(1, 2, vec![0.3, 0.9]));
        let v1 = g.input(Tensor::matrix(1, 2, vec![7.0, -1.0]));
        let (c, _) = att.forward(&mut g, q, None, k1, v1);
        assert_eq!(g.value(c).data(), &[7.0, -1.0]);
    }

    #[test]
    fn msa_degenerates_to_ma() {
        let mut r = rng();
        let mut store = ParamStore::new();
        let ma = Attention::new(&mut store, "ma", AttentionKind::Ma, 4, 1, false, &mut r).unwrap();
        let mut msa = Attention::new(&mut store, "msa", AttentionKind::Msa, 4, 1, false, &mut r).unwrap();
        for (a, b) in [(ma.wq, msa.wq), (ma.wk, msa.wk), (ma.wv, msa.wv)] {
            let v = store.value(a).clone();
            store.set_value(b, v);
        }
        msa.norm = None;
        let (q, k) = (random(&mut r, 1, 4), random(&mut r, 3, 4));
        let mut g = Graph::new(&store);
        let (q, k) = (g.input(q), g.input(k));
        let zero = g.input(Tensor::zeros(&[1, 4]));
        let (c1, _) = ma.forward(&mut g, q, None, k, k);
        let (c2, w) = msa.forward(&mut g, q, Some(zero), k, k);
        assert!(g.value(c1).max_abs_diff(g.value(c2)) < 1e-15);
        let sum: f64 = g.value(w[0]).data().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mha_shapes_and_divisibility() {
        let mut store = ParamStore::new();
        let mut r = rng();
        assert_eq!(
            Attention::new(&mut store, "x", AttentionKind::Mha, 10, 4, true, &mut r).unwrap_err(),
            HeadError { d: 10, heads: 4 }
        );
        let att = Attention::new(&mut store, "m", AttentionKind::Mha, 256, 4, true, &mut r).unwrap();
        assert_eq!(store.value(att.heads[0][0]).shape(), &[256, 64]);
        let mut g = Graph::new(&store);
        let q = g.input(random(&mut r, 3, 256));
        let k = g.input(random(&mut r, 5, 256));
        let (c, w) = att.forward(&mut g, q, None, k, k);
        assert_eq!(g.value(c).shape(), &[3, 256]);
        assert_eq!(w.len(), 4);
        assert_eq!(g.value(w[0]).shape(), &[3, 5]);
    }

    #[test]
    fn layer_gradients() {
        let mut r = rng();
        let mut store = ParamStore::new();
        let lstm = Lstm::new(&mut store, "l", 3, 4, &mut r);
        let conv = Conv1d::new(&mut store, "c", 3, 4, 6, &mut r).unwrap();
        let ln = LayerNorm::new(&mut store, "ln", 3);
        let att = Attention::new(&mut store, "a", AttentionKind::Mha, 3, 3, true, &mut r).unwrap();
        let x = random(&mut r, 4, 3);
        let report = grad_check(
            &mut store,
            |g| {
                let xi = g.input(x.clone());
                let h = lstm.sequence(g, xi, true);
                let c = conv.forward(g, h);
                let y = glu(g, c).unwrap();
                let n = add_norm(g, y, xi, &AddNorm::Layer(ln.clone()));
                let (ctx, _) = att.forward(g, n, None, n, n);
                let t = g.tanh(ctx);
                g.sum(t)
            },
            DEFAULT_EPS,
            30,
        );
        assert!(report.max_rel_error < 1e-5, "{report:?}");
        assert!(Conv1d::new(&mut store, "e", 2, 1, 1, &mut r).is_err());
    }
}
