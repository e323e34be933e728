use std::borrow::Cow;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use super::tensor::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    None,
    Relu,
    Tanh,
}

fn activate(tape: &mut Tape<'_>, x: Var, act: Activation) -> Var {
    match act {
        Activation::None => x,
        Activation::Relu => tape.relu(x),
        Activation::Tanh => tape.tanh(x),
    }
}

/// `y = act(x·W + b)` for a batch of row vectors `x` (`B × in`), `W` is `in × out`.
pub fn dense_apply(tape: &mut Tape<'_>, x: Var, w: Var, b: Var, act: Activation) -> Result<Var> {
    let xw = tape.matmul(x, w)?;
    let y = tape.add_row(xw, b)?;
    Ok(activate(tape, y, act))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub act: Activation,
    pub inputs: usize,
    pub outputs: usize,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        outputs: usize,
        act: Activation,
        rng: &mut R,
    ) -> Self {
        Dense {
            w: store.add(format!("{name}.w"), Tensor::glorot(inputs, outputs, rng)),
            b: store.add(format!("{name}.b"), Tensor::zeros(&[1, outputs])),
            act,
            inputs,
            outputs,
        }
    }

    pub fn apply<'a>(&self, tape: &mut Tape<'a>, store: &'a ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        dense_apply(tape, x, w, b, self.act)
    }
}

/// LSTM weights; gates are packed in the order input, forget, cell, output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LstmCell {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
    pub inputs: usize,
    pub hidden: usize,
}

/// An [`LstmCell`]'s parameters bound to one tape.
#[derive(Debug, Clone, Copy)]
pub struct LstmVars {
    pub wx: Var,
    pub wh: Var,
    pub b: Var,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, inputs: usize, hidden: usize, rng: &mut R) -> Self {
        let mut b = Tensor::zeros(&[1, 4 * hidden]);
        // Forget-gate bias of one keeps early gradients flowing through time.
        b.data_mut()[hidden..2 * hidden].iter_mut().for_each(|x| *x = 1.0);
        LstmCell {
            wx: store.add(format!("{name}.wx"), Tensor::glorot(inputs, 4 * hidden, rng)),
            wh: store.add(format!("{name}.wh"), Tensor::glorot(hidden, 4 * hidden, rng)),
            b: store.add(format!("{name}.b"), b),
            inputs,
            hidden,
        }
    }

    pub fn bind<'a>(&self, tape: &mut Tape<'a>, store: &'a ParamStore) -> LstmVars {
        LstmVars {
            wx: tape.param(store, self.wx),
            wh: tape.param(store, self.wh),
            b: tape.param(store, self.b),
            hidden: self.hidden,
        }
    }
}

/// One LSTM step on a batch: returns `(h_t, c_t)`.
pub fn lstm_step(tape: &mut Tape<'_>, x: Var, h_prev: Var, c_prev: Var, p: &LstmVars) -> Result<(Var, Var)> {
    let hd = p.hidden;
    if tape.shape(h_prev).1 != hd || tape.shape(c_prev) != tape.shape(h_prev) {
        return Err(Error::shape(
            "lstm_step",
            format!("state {:?}/{:?} for hidden size {hd}", tape.shape(h_prev), tape.shape(c_prev)),
        ));
    }
    let zx = tape.matmul(x, p.wx)?;
    let zh = tape.matmul(h_prev, p.wh)?;
    let z = tape.add(zx, zh)?;
    let z = tape.add_row(z, p.b)?;
    lstm_gates(tape, z, Some(c_prev), hd)
}

/// Gate nonlinearities and state update from packed pre-activations `z`
/// (`batch × 4H`). A missing `c_prev` stands for the zero cell state.
pub fn lstm_gates(tape: &mut Tape<'_>, z: Var, c_prev: Option<Var>, hd: usize) -> Result<(Var, Var)> {
    if tape.shape(z).1 != 4 * hd {
        return Err(Error::shape("lstm_gates", format!("{:?} pre-activations for hidden size {hd}", tape.shape(z))));
    }
    let zi = tape.slice_cols(z, 0, hd)?;
    let zg = tape.slice_cols(z, 2 * hd, hd)?;
    let zo = tape.slice_cols(z, 3 * hd, hd)?;
    let i = tape.sigmoid(zi);
    let g = tape.tanh(zg);
    let o = tape.sigmoid(zo);
    let write = tape.mul(i, g)?;
    let c = match c_prev {
        Some(cp) => {
            let zf = tape.slice_cols(z, hd, hd)?;
            let f = tape.sigmoid(zf);
            let keep = tape.mul(f, cp)?;
            tape.add(keep, write)?
        }
        None => write,
    };
    let tc = tape.tanh(c);
    let h = tape.mul(o, tc)?;
    Ok((h, c))
}

/// Runs an LSTM over `seq` from zero state and returns every hidden output.
pub fn lstm_unroll(tape: &mut Tape<'_>, seq: &[Var], p: &LstmVars) -> Result<Vec<Var>> {
    let Some(&first) = seq.first() else {
        return Err(Error::Contract("empty sequence".into()));
    };
    let batch = tape.shape(first).0;
    let mut h = tape.zeros(batch, p.hidden);
    let mut c = tape.zeros(batch, p.hidden);
    let mut out = Vec::with_capacity(seq.len());
    for &x in seq {
        (h, c) = lstm_step(tape, x, h, c, p)?;
        out.push(h);
    }
    Ok(out)
}

/// Forward pass left to right, backward pass right to left; step `t` of the
/// result is `[h_fwd(t), h_bwd(t)]`.
pub fn bilstm_apply(tape: &mut Tape<'_>, seq: &[Var], fwd: &LstmVars, bwd: &LstmVars) -> Result<Vec<Var>> {
    if seq.is_empty() {
        return Err(Error::Contract("bidirectional LSTM needs a non-empty sequence".into()));
    }
    let hf = lstm_unroll(tape, seq, fwd)?;
    let reversed: Vec<Var> = seq.iter().rev().copied().collect();
    let mut hb = lstm_unroll(tape, &reversed, bwd)?;
    hb.reverse();
    hf.iter().zip(&hb).map(|(&a, &b)| tape.concat_cols(&[a, b])).collect()
}

/// Symmetric renormalised operator `D̂^{-1/2} (A + I) D̂^{-1/2}` of a `k × k` adjacency.
pub fn normalized_adjacency(adjacency: &[f64], k: usize) -> Result<Vec<f64>> {
    if adjacency.len() != k * k {
        return Err(Error::shape("normalized_adjacency", format!("{} entries for k={k}", adjacency.len())));
    }
    if adjacency.iter().any(|&a| !(a >= 0.0)) {
        return Err(Error::Contract("adjacency weights must be >= 0".into()));
    }
    let mut a_hat = adjacency.to_vec();
    for i in 0..k {
        a_hat[i * k + i] += 1.0;
    }
    let d: Vec<f64> = (0..k).map(|i| a_hat[i * k..(i + 1) * k].iter().sum::<f64>().powf(-0.5)).collect();
    for i in 0..k {
        for j in 0..k {
            a_hat[i * k + j] *= d[i] * d[j];
        }
    }
    Ok(a_hat)
}

/// Adjacency of the complete graph on `k` nodes without self-loops.
pub fn complete_graph(k: usize) -> Vec<f64> {
    (0..k * k).map(|i| if i / k == i % k { 0.0 } else { 1.0 }).collect()
}

/// `H = act(Â X W)` where `x` stacks one or more graphs as blocks of `k` rows
/// and `op` is the normalised operator `Â`.
pub fn gcn_apply<'a>(tape: &mut Tape<'a>, x: Var, op: Cow<'a, [f64]>, k: usize, w: Var, act: Activation) -> Result<Var> {
    let (rows, _) = tape.shape(x);
    if k == 0 || rows % k != 0 || op.len() != k * k {
        return Err(Error::shape("gcn_apply", format!("{rows} node rows, k={k}, operator of {} values", op.len())));
    }
    let xw = tape.matmul(x, w)?;
    let h = tape.propagate(xw, op, k)?;
    Ok(activate(tape, h, act))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_input(r: usize, c: usize, seed: u64) -> Vec<f64> {
        let mut g = rng(seed);
        (0..r * c).map(|_| g.gen_range(-1.0..1.0)).collect()
    }

    /// Loss and flattened parameter gradient for the store after `assign_flat`.
    fn flat_grad(store: &ParamStore, flat: &[f64], build: &dyn for<'a> Fn(&mut Tape<'a>, &'a ParamStore) -> Var) -> (f64, Vec<f64>) {
        let mut s = store.clone();
        s.assign_flat(flat).unwrap();
        let mut t = Tape::new();
        let loss = build(&mut t, &s);
        let v = t.scalar(loss);
        let g = t.backward(loss).unwrap();
        (v, g.for_store(&s).concat())
    }

    #[test]
    fn dense_identity_and_bias_only() {
        let mut store = ParamStore::new();
        let d = Dense::new(&mut store, "d", 3, 3, Activation::None, &mut rng(0));
        let eye = Tensor::matrix(3, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        *store.get_mut(d.w) = eye;
        let mut t = Tape::new();
        let x = t.input(1, 3, vec![1.5, -2.0, 0.25]).unwrap();
        let y = d.apply(&mut t, &store, x).unwrap();
        assert_eq!(t.value(y), &[1.5, -2.0, 0.25]);

        let mut store = ParamStore::new();
        let d = Dense::new(&mut store, "d", 2, 3, Activation::Relu, &mut rng(1));
        store.get_mut(d.b).data_mut().copy_from_slice(&[0.5, -0.5, 2.0]);
        let mut t = Tape::new();
        let x = t.zeros(1, 2);
        let y = d.apply(&mut t, &store, x).unwrap();
        assert_eq!(t.value(y), &[0.5, 0.0, 2.0]);
    }

    #[test]
    fn dense_shape_mismatch_is_an_error() {
        let mut store = ParamStore::new();
        let d = Dense::new(&mut store, "d", 3, 2, Activation::None, &mut rng(0));
        let mut t = Tape::new();
        let x = t.zeros(1, 4);
        assert!(matches!(d.apply(&mut t, &store, x), Err(Error::Shape { .. })));
    }

    #[test]
    fn dense_gradient_matches_finite_differences() {
        let mut store = ParamStore::new();
        let d = Dense::new(&mut store, "d", 4, 4, Activation::Tanh, &mut rng(2));
        let x = random_input(1, 4, 3);
        let report = grad_check(|p| flat_grad(&store, p, &|t, s| {
            let xi = t.input(1, 4, x.clone()).unwrap();
            let y = d.apply(t, s, xi).unwrap();
            t.sum(y)
        }), &store.flatten(), 1e-5);
        assert!(report.max_rel_err < 1e-6, "{report:?}");
    }

    #[test]
    fn lstm_zero_parameters_give_zero_state() {
        let mut store = ParamStore::new();
        let cell = LstmCell::new(&mut store, "l", 3, 4, &mut rng(0));
        store.assign_flat(&vec![0.0; store.num_scalars()]).unwrap();
        let mut t = Tape::new();
        let p = cell.bind(&mut t, &store);
        let x = t.input(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        let h0 = t.zeros(1, 4);
        let c0 = t.zeros(1, 4);
        let (h, c) = lstm_step(&mut t, x, h0, c0, &p).unwrap();
        assert!(t.value(h).iter().all(|&v| v == 0.0));
        assert!(t.value(c).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lstm_memory_pass_through() {
        // Forget gate saturated open, input gate saturated shut.
        let mut store = ParamStore::new();
        let cell = LstmCell::new(&mut store, "l", 2, 3, &mut rng(0));
        store.assign_flat(&vec![0.0; store.num_scalars()]).unwrap();
        let b = store.get_mut(cell.b).data_mut();
        b[0..3].iter_mut().for_each(|v| *v = -800.0);
        b[3..6].iter_mut().for_each(|v| *v = 800.0);
        let mut t = Tape::new();
        let p = cell.bind(&mut t, &store);
        let x = t.input(1, 2, vec![0.3, -0.7]).unwrap();
        let h0 = t.zeros(1, 3);
        let c0 = t.input(1, 3, vec![0.5, -1.25, 2.0]).unwrap();
        let (_, c) = lstm_step(&mut t, x, h0, c0, &p).unwrap();
        assert_eq!(t.value(c), &[0.5, -1.25, 2.0]);
    }

    #[test]
    fn lstm_bptt_matches_finite_differences() {
        let mut store = ParamStore::new();
        let cell = LstmCell::new(&mut store, "l", 3, 4, &mut rng(4));
        let xs = random_input(5, 3, 5);
        let report = grad_check(
            |p| {
                flat_grad(&store, p, &|t, s| {
                    let pv = cell.bind(t, s);
                    let seq: Vec<Var> = (0..5).map(|i| t.input(1, 3, xs[i * 3..i * 3 + 3].to_vec()).unwrap()).collect();
                    let hs = lstm_unroll(t, &seq, &pv).unwrap();
                    let last = *hs.last().unwrap();
                    let sq = t.mul(last, last).unwrap();
                    t.sum(sq)
                })
            },
            &store.flatten(),
            1e-5,
        );
        assert!(report.max_rel_err < 1e-5, "{report:?}");
    }

    #[test]
    fn bilstm_shapes_and_errors() {
        let mut store = ParamStore::new();
        let f = LstmCell::new(&mut store, "f", 2, 3, &mut rng(0));
        let b = LstmCell::new(&mut store, "b", 2, 3, &mut rng(1));
        let mut t = Tape::new();
        let (fv, bv) = (f.bind(&mut t, &store), b.bind(&mut t, &store));
        let seq: Vec<Var> = (0..4).map(|i| t.input(1, 2, vec![i as f64, 1.0]).unwrap()).collect();
        let out = bilstm_apply(&mut t, &seq, &fv, &bv).unwrap();
        assert_eq!(out.len(), 4);
        assert!(out.iter().all(|&o| t.shape(o) == (1, 6)));
        assert!(matches!(bilstm_apply(&mut t, &[], &fv, &bv), Err(Error::Contract(_))));
    }

    #[test]
    fn bilstm_palindrome_symmetry() {
        let mut store = ParamStore::new();
        let f = LstmCell::new(&mut store, "f", 2, 3, &mut rng(7));
        let mut t = Tape::new();
        let fv = f.bind(&mut t, &store);
        let xs = [[0.1, 0.5], [-0.3, 0.2], [0.9, -0.4], [-0.3, 0.2], [0.1, 0.5]];
        let seq: Vec<Var> = xs.iter().map(|x| t.input(1, 2, x.to_vec()).unwrap()).collect();
        let out = bilstm_apply(&mut t, &seq, &fv, &fv).unwrap();
        let n = out.len();
        for i in 0..n {
            let a = t.value(out[i]);
            let b = t.value(out[n - 1 - i]);
            assert_eq!(&a[..3], &b[3..]);
            assert_eq!(&a[3..], &b[..3]);
        }
    }

    #[test]
    fn bilstm_single_step() {
        let mut store = ParamStore::new();
        let f = LstmCell::new(&mut store, "f", 2, 3, &mut rng(8));
        let b = LstmCell::new(&mut store, "b", 2, 3, &mut rng(9));
        let mut t = Tape::new();
        let (fv, bv) = (f.bind(&mut t, &store), b.bind(&mut t, &store));
        let x = t.input(1, 2, vec![0.4, -0.6]).unwrap();
        let out = bilstm_apply(&mut t, &[x], &fv, &bv).unwrap();
        let z = t.zeros(1, 3);
        let (hf, _) = lstm_step(&mut t, x, z, z, &fv).unwrap();
        let (hb, _) = lstm_step(&mut t, x, z, z, &bv).unwrap();
        let mut expect = t.value(hf).to_vec();
        expect.extend_from_slice(t.value(hb));
        assert_eq!(t.value(out[0]), expect.as_slice());
    }

    #[test]
    fn gcn_without_edges_is_a_shared_dense_map() {
        let op = normalized_adjacency(&[0.0; 9], 3).unwrap();
        assert_eq!(op, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let mut t = Tape::new();
        let x = t.input(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let w = t.input(2, 2, vec![1.0, -1.0, 0.5, 2.0]).unwrap();
        let h = gcn_apply(&mut t, x, Cow::Owned(op), 3, w, Activation::None).unwrap();
        let direct = t.matmul(x, w).unwrap();
        assert_eq!(t.value(h), t.value(direct));
    }

    #[test]
    fn gcn_single_node() {
        let op = normalized_adjacency(&[0.0], 1).unwrap();
        assert_eq!(op, vec![1.0]);
        let mut t = Tape::new();
        let x = t.input(1, 2, vec![-1.0, 2.0]).unwrap();
        let w = t.input(2, 1, vec![3.0, 1.0]).unwrap();
        let h = gcn_apply(&mut t, x, Cow::Owned(op), 1, w, Activation::Relu).unwrap();
        assert_eq!(t.value(h), &[0.0]);
    }

    #[test]
    fn gcn_operator_properties() {
        // Complete graph is regular: operator is doubly stochastic and non-negative.
        let op = normalized_adjacency(&complete_graph(5), 5).unwrap();
        for i in 0..5 {
            let row: f64 = op[i * 5..i * 5 + 5].iter().sum();
            let col: f64 = (0..5).map(|r| op[r * 5 + i]).sum();
            assert!((row - 1.0).abs() < 1e-12 && (col - 1.0).abs() < 1e-12);
        }
        assert!(op.iter().all(|&v| v >= 0.0));
        // A 4-cycle is 2-regular.
        let cycle = [0., 1., 0., 1., 1., 0., 1., 0., 0., 1., 0., 1., 1., 0., 1., 0.];
        let op = normalized_adjacency(&cycle, 4).unwrap();
        for i in 0..4 {
            assert!((op[i * 4..i * 4 + 4].iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(normalized_adjacency(&[0.0; 3], 2).is_err());
    }

    #[test]
    fn gcn_gradient_matches_finite_differences() {
        let op = normalized_adjacency(&[0., 1., 0., 1., 1., 0., 1., 1., 0., 1., 0., 0., 1., 1., 0., 0.], 4).unwrap();
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::glorot(3, 2, &mut rng(12)));
        let x = random_input(4, 3, 13);
        let report = grad_check(
            |p| {
                flat_grad(&store, p, &|t, s| {
                    let xi = t.input(4, 3, x.clone()).unwrap();
                    let wv = t.param(s, w);
                    let h = gcn_apply(t, xi, Cow::Owned(op.clone()), 4, wv, Activation::Tanh).unwrap();
                    t.sum(h)
                })
            },
            &store.flatten(),
            1e-5,
        );
        assert!(report.max_rel_err < 1e-6, "{report:?}");
    }
}
