use std::borrow::Cow;

use rand::Rng;

use crate::env::MarketState;
use crate::error::{Error, Result};
use crate::nn::{
    complete_graph, gcn_apply, lstm_gates, lstm_step, normalized_adjacency, Activation, Dense, LstmCell, ParamId, ParamStore,
    Tape, Tensor, Var,
};

/// Power entries are divided by this (kW) before entering a network.
pub const POWER_SCALE: f64 = 10.0;
/// Price entries are divided by this ($/kWh).
pub const PRICE_SCALE: f64 = 0.1;

/// Fixed rescaling of a `[D.., S.., DR, SMP]` state to order-one inputs.
pub fn scale_state(state: &[f64]) -> Vec<f64> {
    let n = state.len();
    state
        .iter()
        .enumerate()
        .map(|(i, &v)| if i + 2 >= n { v / PRICE_SCALE } else { v / POWER_SCALE })
        .collect()
}

/// Per-node features `[D_i, S_i, DR, SMP]` of a scaled state, one row per cluster.
pub fn node_features(scaled: &[f64], k: usize) -> Vec<f64> {
    let (dr, smp) = (scaled[2 * k], scaled[2 * k + 1]);
    (0..k).flat_map(|i| [scaled[i], scaled[k + i], dr, smp]).collect()
}

pub const NODE_FEATURES: usize = 4;

/// One graph-convolution layer over the cluster graph, flattened per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnEncoder {
    pub w: ParamId,
    pub op: Vec<f64>,
    pub k: usize,
    pub hidden: usize,
}

impl GcnEncoder {
    /// Fully connected graph on `k` clusters with uniform `edge_weight`.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        k: usize,
        hidden: usize,
        edge_weight: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let adjacency: Vec<f64> = complete_graph(k).into_iter().map(|a| a * edge_weight).collect();
        Ok(GcnEncoder {
            w: store.add("gcn.w", Tensor::glorot(NODE_FEATURES, hidden, rng)),
            op: normalized_adjacency(&adjacency, k)?,
            k,
            hidden,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.k * self.hidden
    }

    /// Encodes a `batch × (2K+2)` block of scaled states to `batch × K·H`.
    pub fn apply<'a>(&'a self, tape: &mut Tape<'a>, store: &'a ParamStore, x: &[f64], batch: usize) -> Result<Var> {
        let dim = 2 * self.k + 2;
        if x.len() != batch * dim {
            return Err(Error::Contract(format!(
                "GCN encoder for {} clusters expects states of length {dim}",
                self.k
            )));
        }
        let nodes: Vec<f64> = x.chunks(dim).flat_map(|s| node_features(s, self.k)).collect();
        let xv = tape.input(batch * self.k, NODE_FEATURES, nodes)?;
        let w = tape.param(store, self.w);
        let h = gcn_apply(tape, xv, Cow::Borrowed(&self.op), self.k, w, Activation::Relu)?;
        tape.reshape(h, batch, self.output_dim())
    }
}

/// Node-level embedding `K × H` of one state (before flattening).
pub fn gcn_encode(encoder: &GcnEncoder, store: &ParamStore, state: &MarketState) -> Result<Vec<f64>> {
    if state.clusters() != encoder.k {
        return Err(Error::Contract(format!(
            "state has {} clusters, encoder graph has {}",
            state.clusters(),
            encoder.k
        )));
    }
    let mut tape = Tape::new();
    let scaled = scale_state(state.as_slice());
    let h = encoder.apply(&mut tape, store, &scaled, 1)?;
    Ok(tape.value(h).to_vec())
}

#[derive(Debug, Clone, PartialEq)]
pub enum Encoder {
    Raw { dim: usize },
    Gcn(GcnEncoder),
}

impl Encoder {
    pub fn build<R: Rng + ?Sized>(
        store: &mut ParamStore,
        clusters: usize,
        gcn: Option<(usize, f64)>,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(match gcn {
            None => Encoder::Raw { dim: 2 * clusters + 2 },
            Some((hidden, w)) => Encoder::Gcn(GcnEncoder::new(store, clusters, hidden, w, rng)?),
        })
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Encoder::Raw { dim } => *dim,
            Encoder::Gcn(g) => 2 * g.k + 2,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Encoder::Raw { dim } => *dim,
            Encoder::Gcn(g) => g.output_dim(),
        }
    }

    /// `x` holds `batch` scaled states back to back.
    pub fn apply<'a>(&'a self, tape: &mut Tape<'a>, store: &'a ParamStore, x: Vec<f64>, batch: usize) -> Result<Var> {
        match self {
            Encoder::Raw { dim } => tape.input(batch, *dim, x),
            Encoder::Gcn(g) => g.apply(tape, store, &x, batch),
        }
    }
}

/// Encoder followed by dense layers; the last layer is linear.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub encoder: Encoder,
    pub layers: Vec<Dense>,
}

impl Mlp {
    pub fn build<R: Rng + ?Sized>(
        store: &mut ParamStore,
        encoder: Encoder,
        hidden: &[usize],
        outputs: usize,
        rng: &mut R,
    ) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut width = encoder.output_dim();
        for (i, &h) in hidden.iter().enumerate() {
            layers.push(Dense::new(store, &format!("fc{i}"), width, h, Activation::Relu, rng));
            width = h;
        }
        layers.push(Dense::new(store, "head", width, outputs, Activation::None, rng));
        Mlp { encoder, layers }
    }

    pub fn forward<'a>(&'a self, tape: &mut Tape<'a>, store: &'a ParamStore, x: Vec<f64>, batch: usize) -> Result<Var> {
        let mut h = self.encoder.apply(tape, store, x, batch)?;
        for l in &self.layers {
            h = l.apply(tape, store, h)?;
        }
        Ok(h)
    }

    pub fn head(&self) -> &Dense {
        self.layers.last().expect("an MLP has a head layer")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QArch {
    Feedforward,
    Recurrent,
    Bidirectional,
}

/// Action-value network: feedforward, LSTM or bidirectional-LSTM trunk.
#[derive(Debug, Clone, PartialEq)]
pub struct QNet {
    pub arch: QArch,
    pub encoder: Encoder,
    pub input: Dense,
    /// Second hidden layer of the feedforward trunk.
    pub hidden2: Option<Dense>,
    pub fwd: Option<LstmCell>,
    pub bwd: Option<LstmCell>,
    pub head: Dense,
    pub actions: usize,
}

/// Recurrent carry `(h, c)` per batch row.
pub type Carry = Option<(Var, Var)>;

impl QNet {
    pub fn build<R: Rng + ?Sized>(
        store: &mut ParamStore,
        arch: QArch,
        encoder: Encoder,
        hidden: usize,
        actions: usize,
        rng: &mut R,
    ) -> Self {
        let input = Dense::new(store, "fc0", encoder.output_dim(), hidden, Activation::Relu, rng);
        let (hidden2, fwd, bwd, head_in) = match arch {
            QArch::Feedforward => (Some(Dense::new(store, "fc1", hidden, hidden, Activation::Relu, rng)), None, None, hidden),
            QArch::Recurrent => (None, Some(LstmCell::new(store, "lstm", hidden, hidden, rng)), None, hidden),
            QArch::Bidirectional => {
                let half = (hidden / 2).max(1);
                (
                    None,
                    Some(LstmCell::new(store, "lstm_fwd", hidden, half, rng)),
                    Some(LstmCell::new(store, "lstm_bwd", hidden, half, rng)),
                    2 * half,
                )
            }
        };
        let head = Dense::new(store, "head", head_in, actions, Activation::None, rng);
        QNet {
            arch,
            encoder,
            input,
            hidden2,
            fwd,
            bwd,
            head,
            actions,
        }
    }

    pub fn recurrent_width(&self) -> usize {
        self.fwd.map_or(0, |c| c.hidden)
    }

    /// Q-values of one time step for a batch of scaled states. Recurrent nets
    /// advance `carry` (zero state when `None`). The bidirectional trunk's
    /// reverse direction sees only the newest element, which is what a
    /// reverse pass over any window ending at this step produces there.
    pub fn step<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        store: &'a ParamStore,
        x: Vec<f64>,
        batch: usize,
        carry: Carry,
    ) -> Result<(Var, Carry)> {
        let e = self.encoder.apply(tape, store, x, batch)?;
        let f = self.input.apply(tape, store, e)?;
        match self.arch {
            QArch::Feedforward => {
                let h = self.hidden2.expect("feedforward trunk").apply(tape, store, f)?;
                Ok((self.head.apply(tape, store, h)?, None))
            }
            QArch::Recurrent | QArch::Bidirectional => {
                let cell = self.fwd.expect("recurrent trunk");
                let (h0, c0) = match carry {
                    Some(hc) => hc,
                    None => (tape.zeros(batch, cell.hidden), tape.zeros(batch, cell.hidden)),
                };
                let pv = cell.bind(tape, store);
                let (h, c) = lstm_step(tape, f, h0, c0, &pv)?;
                let out = match self.bwd {
                    None => h,
                    Some(bcell) => {
                        let w = tape.param(store, bcell.wx);
                        let b = tape.param(store, bcell.b);
                        let z = tape.matmul(f, w)?;
                        let z = tape.add_row(z, b)?;
                        let (hb, _) = lstm_gates(tape, z, None, bcell.hidden)?;
                        tape.concat_cols(&[h, hb])?
                    }
                };
                Ok((self.head.apply(tape, store, out)?, Some((h, c))))
            }
        }
    }

    /// Q-values at every step of a batch of sequences, unrolled from zero state.
    /// `steps[t]` holds the scaled states of all sequences at time `t`.
    /// Input projections of all steps are computed in one pass; only the
    /// hidden-to-hidden product runs step by step.
    pub fn unroll<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        store: &'a ParamStore,
        steps: Vec<Vec<f64>>,
        batch: usize,
    ) -> Result<Vec<Var>> {
        let len = steps.len();
        if len == 0 {
            return Err(Error::Contract("empty sequence".into()));
        }
        let e = self.encoder.apply(tape, store, steps.concat(), len * batch)?;
        let f = self.input.apply(tape, store, e)?;
        let project = |tape: &mut Tape<'a>, cell: &LstmCell| -> Result<Var> {
            let w = tape.param(store, cell.wx);
            let b = tape.param(store, cell.b);
            let z = tape.matmul(f, w)?;
            tape.add_row(z, b)
        };
        let mut out = Vec::with_capacity(len);
        match self.arch {
            QArch::Feedforward => {
                let h = self.hidden2.expect("feedforward trunk").apply(tape, store, f)?;
                let q = self.head.apply(tape, store, h)?;
                for t in 0..len {
                    out.push(tape.slice_rows(q, t * batch, batch)?);
                }
            }
            QArch::Recurrent | QArch::Bidirectional => {
                let cell = self.fwd.expect("recurrent trunk");
                let zx = project(tape, &cell)?;
                let wh = tape.param(store, cell.wh);
                let zb = match self.bwd {
                    Some(bcell) => Some((project(tape, &bcell)?, bcell.hidden)),
                    None => None,
                };
                let mut state: Option<(Var, Var)> = None;
                for t in 0..len {
                    let zt = tape.slice_rows(zx, t * batch, batch)?;
                    let (h, c) = match state {
                        None => lstm_gates(tape, zt, None, cell.hidden)?,
                        Some((h, c)) => {
                            let zh = tape.matmul(h, wh)?;
                            let z = tape.add(zt, zh)?;
                            lstm_gates(tape, z, Some(c), cell.hidden)?
                        }
                    };
                    state = Some((h, c));
                    let trunk = match zb {
                        None => h,
                        Some((zb, hb)) => {
                            let zbt = tape.slice_rows(zb, t * batch, batch)?;
                            let (hb, _) = lstm_gates(tape, zbt, None, hb)?;
                            tape.concat_cols(&[h, hb])?
                        }
                    };
                    out.push(self.head.apply(tape, store, trunk)?);
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{bilstm_apply, grad_check};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn state(k: usize, seed: u64) -> MarketState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d: Vec<f64> = (0..k).map(|_| rng.gen_range(0.0..8.0)).collect();
        let s: Vec<f64> = (0..k).map(|_| rng.gen_range(0.0..8.0)).collect();
        MarketState::new(&d, &s, 0.12, 0.09)
    }

    #[test]
    fn scaling() {
        let s = scale_state(&[5.0, 10.0, 0.1, 0.05]);
        assert_eq!(s, vec![0.5, 1.0, 1.0, 0.5]);
        assert_eq!(node_features(&s, 1), vec![0.5, 1.0, 1.0, 0.5]);
    }

    #[test]
    fn gcn_single_cluster_is_dense() {
        let mut store = ParamStore::new();
        let enc = GcnEncoder::new(&mut store, 1, 3, 0.25, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let st = state(1, 2);
        let emb = gcn_encode(&enc, &store, &st).unwrap();
        let x = node_features(&scale_state(st.as_slice()), 1);
        let w = store.get(enc.w).data();
        for j in 0..3 {
            let direct: f64 = (0..4).map(|f| x[f] * w[f * 3 + j]).sum::<f64>().max(0.0);
            assert!((emb[j] - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn gcn_is_permutation_equivariant() {
        let k = 5;
        let mut store = ParamStore::new();
        let enc = GcnEncoder::new(&mut store, k, 4, 1.0 / (k - 1) as f64, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let st = state(k, 4);
        let perm = [3, 0, 4, 1, 2];
        let v = st.as_slice();
        let d: Vec<f64> = perm.iter().map(|&p| v[p]).collect();
        let s: Vec<f64> = perm.iter().map(|&p| v[k + p]).collect();
        let permuted = MarketState::new(&d, &s, st.dr(), st.smp());
        let a = gcn_encode(&enc, &store, &st).unwrap();
        let b = gcn_encode(&enc, &store, &permuted).unwrap();
        for (i, &p) in perm.iter().enumerate() {
            for j in 0..4 {
                assert!((b[i * 4 + j] - a[p * 4 + j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gcn_zero_weights_and_size_mismatch() {
        let mut store = ParamStore::new();
        let enc = GcnEncoder::new(&mut store, 3, 2, 0.5, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        store.get_mut(enc.w).data_mut().iter_mut().for_each(|w| *w = 0.0);
        assert!(gcn_encode(&enc, &store, &state(3, 6)).unwrap().iter().all(|&v| v == 0.0));
        assert!(matches!(gcn_encode(&enc, &store, &state(4, 6)), Err(Error::Contract(_))));
    }

    #[test]
    fn weighted_complete_graph_keeps_own_node_weight() {
        let mut store = ParamStore::new();
        let enc = GcnEncoder::new(&mut store, 10, 2, 1.0 / 9.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!((enc.op[0] - 0.5).abs() < 1e-12);
        assert!((enc.op[1] - 0.5 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn bidirectional_step_matches_window_pass() {
        // The last output of a BiLSTM over a window equals the stateful step.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut store = ParamStore::new();
        let net = QNet::build(&mut store, QArch::Bidirectional, Encoder::Raw { dim: 4 }, 6, 3, &mut rng);
        let xs: Vec<Vec<f64>> = (0..4).map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let mut t = Tape::new();
        let feats: Vec<Var> = xs
            .iter()
            .map(|x| {
                let v = t.input(1, 4, x.clone()).unwrap();
                net.input.apply(&mut t, &store, v).unwrap()
            })
            .collect();
        let fv = net.fwd.unwrap().bind(&mut t, &store);
        let bv = net.bwd.unwrap().bind(&mut t, &store);
        let out = bilstm_apply(&mut t, &feats, &fv, &bv).unwrap();
        let q_window = net.head.apply(&mut t, &store, *out.last().unwrap()).unwrap();
        let expect = t.value(q_window).to_vec();

        let mut t2 = Tape::new();
        let qs = net.unroll(&mut t2, &store, xs, 1).unwrap();
        let got = t2.value(*qs.last().unwrap());
        for (a, b) in expect.iter().zip(got) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn recurrent_unroll_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut store = ParamStore::new();
        let net = QNet::build(&mut store, QArch::Recurrent, Encoder::Raw { dim: 4 }, 5, 3, &mut rng);
        let xs: Vec<Vec<f64>> = (0..8).map(|_| (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let report = grad_check(
            |p| {
                let mut s = store.clone();
                s.assign_flat(p).unwrap();
                let mut t = Tape::new();
                let qs = net.unroll(&mut t, &s, xs.clone(), 2).unwrap();
                let all = t.concat_cols(&qs).unwrap();
                let sq = t.mul(all, all).unwrap();
                let loss = t.mean(sq);
                let v = t.scalar(loss);
                let g = t.backward(loss).unwrap();
                (v, g.for_store(&s).concat())
            },
            &store.flatten(),
            1e-5,
        );
        assert!(report.max_rel_err < 1e-4, "{report:?}");
    }
}
