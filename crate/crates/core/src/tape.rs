//! A small reverse-mode differentiation tape over dense f64 matrices.
//!
//! Row vectors are `1 x n` matrices and scalars are `1 x 1`. Parameter leaves
//! borrow their values, so binding a parameter set to a tape does not copy it.

use std::borrow::Cow;

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};

pub type Mat = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    /// `[n x k] + [1 x k]`, broadcast over rows.
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Mat),
    Scale(Var, f64),
    /// Identity forward, gradient multiplied by the factor.
    GradScale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Abs(Var),
    Transpose(Var),
    SoftmaxRows(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SelectRows(Var, Vec<usize>),
    Mean(Var),
    Sum(Var),
    /// Mean binary cross entropy of probabilities against 0/1 targets.
    Bce {
        probs: Var,
        targets: Vec<f64>,
        floor: f64,
    },
    /// Mean softmax cross entropy of row logits against class ids.
    SoftmaxXent {
        logits: Var,
        classes: Vec<usize>,
    },
}

struct Node<'a> {
    value: Cow<'a, Mat>,
    op: Op,
}

#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

fn softmax_rows(x: &Mat) -> Mat {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'a, Mat>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    pub fn leaf(&mut self, value: Mat) -> Var {
        self.push(Cow::Owned(value), Op::Leaf)
    }

    pub fn borrowed(&mut self, value: &'a Mat) -> Var {
        self.push(Cow::Borrowed(value), Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(Cow::Owned(v), Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(Cow::Owned(v), Op::Add(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        debug_assert_eq!(self.value(row).nrows(), 1);
        let v = self.value(a) + self.value(row);
        self.push(Cow::Owned(v), Op::AddRow(a, row))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(Cow::Owned(v), Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(Cow::Owned(v), Op::Mul(a, b))
    }

    pub fn mul_const(&mut self, a: Var, c: Mat) -> Var {
        let v = self.value(a) * &c;
        self.push(Cow::Owned(v), Op::MulConst(a, c))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) * c;
        self.push(Cow::Owned(v), Op::Scale(a, c))
    }

    /// Forward copy, backward gradient times `factor`.
    pub fn grad_scale(&mut self, a: Var, factor: f64) -> Var {
        let v = self.value(a).clone();
        self.push(Cow::Owned(v), Op::GradScale(a, factor))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.push(Cow::Owned(v), Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid);
        self.push(Cow::Owned(v), Op::Sigmoid(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::abs);
        self.push(Cow::Owned(v), Op::Abs(a))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).t().to_owned();
        self.push(Cow::Owned(v), Op::Transpose(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let v = softmax_rows(self.value(a));
        self.push(Cow::Owned(v), Op::SoftmaxRows(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = concatenate(Axis(1), &views).expect("concat_cols row counts agree");
        self.push(Cow::Owned(v), Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = concatenate(Axis(0), &views).expect("concat_rows column counts agree");
        self.push(Cow::Owned(v), Op::ConcatRows(parts.to_vec()))
    }

    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Var {
        let v = self.value(a).select(Axis(0), rows);
        self.push(Cow::Owned(v), Op::SelectRows(a, rows.to_vec()))
    }

    pub fn row(&mut self, a: Var, i: usize) -> Var {
        self.select_rows(a, &[i])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let v = Mat::from_elem((1, 1), x.sum() / x.len() as f64);
        self.push(Cow::Owned(v), Op::Mean(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Mat::from_elem((1, 1), self.value(a).sum());
        self.push(Cow::Owned(v), Op::Sum(a))
    }

    pub fn bce(&mut self, probs: Var, targets: &[f64], floor: f64) -> Var {
        let p = self.value(probs);
        assert_eq!(p.len(), targets.len(), "bce target count");
        let total: f64 = p
            .iter()
            .zip(targets)
            .map(|(&p, &y)| {
                let p = p.clamp(floor, 1.0 - floor);
                -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
            })
            .sum();
        let v = Mat::from_elem((1, 1), total / targets.len() as f64);
        self.push(
            Cow::Owned(v),
            Op::Bce {
                probs,
                targets: targets.to_vec(),
                floor,
            },
        )
    }

    pub fn softmax_xent(&mut self, logits: Var, classes: &[usize]) -> Var {
        let x = self.value(logits);
        assert_eq!(x.nrows(), classes.len(), "xent class count");
        let total: f64 = x
            .rows()
            .into_iter()
            .zip(classes)
            .map(|(row, &c)| {
                let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                let lse = max + row.mapv(|v| (v - max).exp()).sum().ln();
                lse - row[c]
            })
            .sum();
        let v = Mat::from_elem((1, 1), total / classes.len() as f64);
        self.push(
            Cow::Owned(v),
            Op::SoftmaxXent {
                logits,
                classes: classes.to_vec(),
            },
        )
    }

    /// Reverse pass from a scalar root. Returns one optional gradient per node.
    pub fn backward(&self, root: Var) -> Grads {
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Mat::ones(self.value(root).raw_dim()));

        fn acc(grads: &mut [Option<Mat>], v: Var, g: Mat) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.clone());
                }
                Op::AddRow(a, r) => {
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *r, gr);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, -&g);
                    acc(&mut grads, *a, g.clone());
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::MulConst(a, c) => acc(&mut grads, *a, &g * c),
                Op::Scale(a, c) => acc(&mut grads, *a, &g * *c),
                Op::GradScale(a, c) => acc(&mut grads, *a, &g * *c),
                Op::Tanh(a) => {
                    let y = &node.value;
                    acc(&mut grads, *a, &g * &y.mapv(|t| 1.0 - t * t));
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    acc(&mut grads, *a, &g * &y.mapv(|s| s * (1.0 - s)));
                }
                Op::Abs(a) => {
                    let x = self.value(*a);
                    acc(
                        &mut grads,
                        *a,
                        &g * &x.mapv(|v| {
                            if v > 0.0 {
                                1.0
                            } else if v < 0.0 {
                                -1.0
                            } else {
                                0.0
                            }
                        }),
                    );
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.t().to_owned()),
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let gy = &g * &**y;
                    let dots = gy.sum_axis(Axis(1)).insert_axis(Axis(1));
                    acc(&mut grads, *a, &gy - &(&**y * &dots));
                }
                Op::ConcatCols(parts) => {
                    let mut col = 0;
                    for p in parts {
                        let w = self.value(*p).ncols();
                        acc(&mut grads, *p, g.slice(s![.., col..col + w]).to_owned());
                        col += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut row = 0;
                    for p in parts {
                        let h = self.value(*p).nrows();
                        acc(&mut grads, *p, g.slice(s![row..row + h, ..]).to_owned());
                        row += h;
                    }
                }
                Op::SelectRows(a, rows) => {
                    let mut ga = Mat::zeros(self.value(*a).raw_dim());
                    for (i, &r) in rows.iter().enumerate() {
                        let mut dst = ga.row_mut(r);
                        dst += &g.row(i);
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Mean(a) => {
                    let x = self.value(*a);
                    let c = g[[0, 0]] / x.len() as f64;
                    acc(&mut grads, *a, Mat::from_elem(x.raw_dim(), c));
                }
                Op::Sum(a) => {
                    let x = self.value(*a);
                    acc(&mut grads, *a, Mat::from_elem(x.raw_dim(), g[[0, 0]]));
                }
                Op::Bce { probs, targets, floor } => {
                    let p = self.value(*probs);
                    let n = targets.len() as f64;
                    let scale = g[[0, 0]] / n;
                    let mut gp = Mat::zeros(p.raw_dim());
                    for ((gv, &pv), &y) in gp.iter_mut().zip(p.iter()).zip(targets) {
                        // Zero gradient where the floor clamps.
                        if pv > *floor && pv < 1.0 - *floor {
                            *gv = scale * (-(y / pv) + (1.0 - y) / (1.0 - pv));
                        }
                    }
                    acc(&mut grads, *probs, gp);
                }
                Op::SoftmaxXent { logits, classes } => {
                    let x = self.value(*logits);
                    let mut gx = softmax_rows(x);
                    for (i, &c) in classes.iter().enumerate() {
                        gx[[i, c]] -= 1.0;
                    }
                    gx *= g[[0, 0]] / classes.len() as f64;
                    acc(&mut grads, *logits, gx);
                }
            }
            grads[idx] = Some(g);
        }
        Grads { grads }
    }
}

pub struct Grads {
    grads: Vec<Option<Mat>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Mat> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn fd_check(build: impl Fn(&mut Tape, Var) -> Var, x0: Mat) {
        let mut tape = Tape::new();
        let x = tape.leaf(x0.clone());
        let y = build(&mut tape, x);
        let g = tape.backward(y).get(x).cloned().unwrap();
        let h = 1e-6;
        for i in 0..x0.len() {
            let mut xp = x0.clone();
            let mut xm = x0.clone();
            xp.as_slice_mut().unwrap()[i] += h;
            xm.as_slice_mut().unwrap()[i] -= h;
            let eval = |m: Mat| {
                let mut t = Tape::new();
                let v = t.leaf(m);
                let out = build(&mut t, v);
                t.scalar(out)
            };
            let fd = (eval(xp) - eval(xm)) / (2.0 * h);
            let an = g.as_slice().unwrap()[i];
            assert!((fd - an).abs() < 1e-6 * (1.0 + fd.abs()), "elem {i}: fd {fd} vs {an}");
        }
    }

    #[test]
    fn softmax_matmul_chain() {
        let w = array![[0.3, -0.2], [0.1, 0.5], [-0.4, 0.2]];
        fd_check(
            move |t, x| {
                let wv = t.leaf(w.clone());
                let y = t.matmul(x, wv);
                let s = t.softmax_rows(y);
                let tt = t.tanh(s);
                let tr = t.transpose(tt);
                let sel = t.select_rows(tr, &[1, 1, 0]);
                t.sum(sel)
            },
            array![[0.5, -1.0, 2.0], [0.1, 0.2, -0.3]],
        );
    }

    #[test]
    fn concat_and_elementwise() {
        fd_check(
            |t, x| {
                let a = t.sigmoid(x);
                let b = t.mul(a, x);
                let c = t.concat_cols(&[a, b]);
                let d = t.concat_rows(&[c, c]);
                let e = t.abs(d);
                let f = t.scale(e, 0.7);
                t.mean(f)
            },
            array![[0.5, -1.0], [0.1, 0.2]],
        );
    }

    #[test]
    fn losses() {
        fd_check(
            |t, x| {
                let p = t.sigmoid(x);
                t.bce(p, &[1.0, 0.0, 1.0, 0.0], 1e-7)
            },
            array![[0.5, -1.0], [0.1, 2.2]],
        );
        fd_check(
            |t, x| t.softmax_xent(x, &[2, 0]),
            array![[0.5, -1.0, 0.3], [0.1, 0.2, 0.9]],
        );
    }

    #[test]
    fn grad_scale_is_identity_forward() {
        let mut t = Tape::new();
        let x = t.leaf(array![[1.5, -2.0]]);
        let y = t.grad_scale(x, -0.5);
        assert_eq!(t.value(y), t.value(x));
        let s = t.sum(y);
        let g = t.backward(s);
        assert_eq!(g.get(x).unwrap(), &array![[-0.5, -0.5]]);
    }

    #[test]
    fn uniform_xent_is_ln_classes() {
        let mut t = Tape::new();
        let x = t.leaf(Mat::zeros((1, 10)));
        let l = t.softmax_xent(x, &[3]);
        assert!((t.scalar(l) - 10f64.ln()).abs() < 1e-12);
    }
}
