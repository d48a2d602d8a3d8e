//! Building blocks recorded on a [`Tape`]: attention pooling, GRUs, the
//! sentence interaction layer and the enrichment concatenation.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::params::{InitKind, Partition, SpecList};
use crate::tape::{Tape, Var};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DenseIdx {
    pub w: usize,
    pub b: usize,
}

impl DenseIdx {
    pub fn register(specs: &mut SpecList, name: &str, part: Partition, d_in: usize, d_out: usize) -> Self {
        DenseIdx {
            w: specs.add(format!("{name}.w"), part, (d_in, d_out), InitKind::Xavier),
            b: specs.add(format!("{name}.b"), part, (1, d_out), InitKind::Zeros),
        }
    }
}

pub fn dense(t: &mut Tape, pv: &[Var], idx: &DenseIdx, x: Var) -> Var {
    let xw = t.matmul(x, pv[idx.w]);
    t.add_row(xw, pv[idx.b])
}

/// Additive attention parameters `(W, b, u)`: `u_t = tanh(W x_t + b)`,
/// weights `softmax(u_t . u)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionIdx {
    pub w: usize,
    pub b: usize,
    pub u: usize,
}

impl AttentionIdx {
    pub fn register(specs: &mut SpecList, name: &str, part: Partition, d_in: usize, d_att: usize) -> Self {
        AttentionIdx {
            w: specs.add(format!("{name}.w"), part, (d_in, d_att), InitKind::Xavier),
            b: specs.add(format!("{name}.b"), part, (1, d_att), InitKind::Zeros),
            u: specs.add(format!("{name}.u"), part, (d_att, 1), InitKind::UnitVector),
        }
    }
}

/// Pools the rows of `x` (`[n x d]`) into `[1 x d]`. Returns the pooled row
/// and the `[1 x n]` attention weights.
pub fn attention_pool(t: &mut Tape, pv: &[Var], idx: &AttentionIdx, x: Var) -> (Var, Var) {
    let xw = t.matmul(x, pv[idx.w]);
    let pre = t.add_row(xw, pv[idx.b]);
    let u = t.tanh(pre);
    let scores = t.matmul(u, pv[idx.u]);
    let row = t.transpose(scores);
    let weights = t.softmax_rows(row);
    let pooled = t.matmul(weights, x);
    (pooled, weights)
}

/// Gated recurrent unit with update gate `z`, reset gate `r` and tanh
/// candidate `n`:
///
/// ```text
/// z = sigmoid(x Wz + h Uz + bz)
/// r = sigmoid(x Wr + h Ur + br)
/// n = tanh(x Wn + r * (h Un) + bn)
/// h' = (1 - z) * n + z * h
/// ```
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GruIdx {
    pub wz: usize,
    pub uz: usize,
    pub bz: usize,
    pub wr: usize,
    pub ur: usize,
    pub br: usize,
    pub wn: usize,
    pub un: usize,
    pub bn: usize,
}

impl GruIdx {
    pub fn register(specs: &mut SpecList, name: &str, part: Partition, d_in: usize, h: usize) -> Self {
        let mut w = |gate: &str| specs.add(format!("{name}.w{gate}"), part, (d_in, h), InitKind::Xavier);
        let (wz, wr, wn) = (w("z"), w("r"), w("n"));
        let mut u = |gate: &str| specs.add(format!("{name}.u{gate}"), part, (h, h), InitKind::Xavier);
        let (uz, ur, un) = (u("z"), u("r"), u("n"));
        let mut b = |gate: &str| specs.add(format!("{name}.b{gate}"), part, (1, h), InitKind::Zeros);
        let (bz, br, bn) = (b("z"), b("r"), b("n"));
        GruIdx {
            wz,
            uz,
            bz,
            wr,
            ur,
            br,
            wn,
            un,
            bn,
        }
    }
}

/// Runs a GRU over the rows of `xs` and returns one `[1 x h]` state per
/// position, in position order regardless of direction.
pub fn gru(t: &mut Tape, pv: &[Var], g: &GruIdx, xs: Var, h0: Var, reverse: bool) -> Vec<Var> {
    let m = t.value(xs).nrows();
    let xz = dense(t, pv, &DenseIdx { w: g.wz, b: g.bz }, xs);
    let xr = dense(t, pv, &DenseIdx { w: g.wr, b: g.br }, xs);
    let xn = dense(t, pv, &DenseIdx { w: g.wn, b: g.bn }, xs);
    let mut states = vec![h0; m];
    let mut h = h0;
    let order: Vec<usize> = if reverse {
        (0..m).rev().collect()
    } else {
        (0..m).collect()
    };
    for pos in order {
        let xz_t = t.row(xz, pos);
        let xr_t = t.row(xr, pos);
        let xn_t = t.row(xn, pos);
        let hz = t.matmul(h, pv[g.uz]);
        let z_pre = t.add(xz_t, hz);
        let z = t.sigmoid(z_pre);
        let hr = t.matmul(h, pv[g.ur]);
        let r_pre = t.add(xr_t, hr);
        let r = t.sigmoid(r_pre);
        let hn = t.matmul(h, pv[g.un]);
        let gated = t.mul(r, hn);
        let n_pre = t.add(xn_t, gated);
        let n = t.tanh(n_pre);
        let diff = t.sub(h, n);
        let keep = t.mul(z, diff);
        h = t.add(n, keep);
        states[pos] = h;
    }
    states
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BiGruIdx {
    pub fwd: GruIdx,
    pub bwd: GruIdx,
    pub hidden: usize,
}

impl BiGruIdx {
    pub fn register(specs: &mut SpecList, name: &str, part: Partition, d_in: usize, h: usize) -> Self {
        BiGruIdx {
            fwd: GruIdx::register(specs, &format!("{name}.fwd"), part, d_in, h),
            bwd: GruIdx::register(specs, &format!("{name}.bwd"), part, d_in, h),
            hidden: h,
        }
    }
}

/// Bidirectional GRU: `[m x d_in] -> [m x 2h]`, forward states in the first
/// half of each row. `init` supplies the initial state per direction; zeros
/// otherwise.
pub fn bi_gru(t: &mut Tape, pv: &[Var], idx: &BiGruIdx, xs: Var, init: Option<(Var, Var)>) -> Var {
    let (h0f, h0b) = match init {
        Some(pair) => pair,
        None => {
            let zf = t.leaf(Array2::zeros((1, idx.hidden)));
            (zf, zf)
        }
    };
    let f = gru(t, pv, &idx.fwd, xs, h0f, false);
    let b = gru(t, pv, &idx.bwd, xs, h0b, true);
    let fs = t.concat_rows(&f);
    let bs = t.concat_rows(&b);
    t.concat_cols(&[fs, bs])
}

pub struct Interaction {
    pub scores: Var,
    /// Article-aware fact sentences, `[m x D]`.
    pub fact: Var,
    /// Fact-aware article sentences, `[k x D]`.
    pub article: Var,
}

/// Dot-product interaction between fact sentences `h` (`[m x D]`) and article
/// sentences `s` (`[k x D]`).
pub fn interaction(t: &mut Tape, h: Var, s: Var) -> Interaction {
    let st = t.transpose(s);
    let scores = t.matmul(h, st);
    let row_w = t.softmax_rows(scores);
    let fact = t.matmul(row_w, s);
    let et = t.transpose(scores);
    let col_w = t.softmax_rows(et);
    let article = t.matmul(col_w, h);
    Interaction { scores, fact, article }
}

/// `[v, v', v - v', v * v']` row-wise.
pub fn enrich(t: &mut Tape, v: Var, v_int: Var) -> Var {
    let diff = t.sub(v, v_int);
    let prod = t.mul(v, v_int);
    t.concat_cols(&[v, v_int, diff, prod])
}

/// Inverted dropout. Inactive without an RNG or at rate zero.
pub struct Dropout<'r> {
    rate: f64,
    rng: Option<&'r mut ChaCha8Rng>,
}

impl<'r> Dropout<'r> {
    pub fn new(rate: f64, rng: Option<&'r mut ChaCha8Rng>) -> Self {
        Dropout { rate, rng }
    }

    pub fn off() -> Self {
        Dropout { rate: 0.0, rng: None }
    }

    pub fn apply(&mut self, t: &mut Tape, x: Var) -> Var {
        let Some(rng) = self.rng.as_deref_mut() else { return x };
        if self.rate <= 0.0 {
            return x;
        }
        let keep = 1.0 - self.rate;
        let shape = t.value(x).raw_dim();
        let mask = Array2::from_shape_simple_fn(shape, || if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 });
        t.mul_const(x, mask)
    }
}
