use super::*;
use ndarray::array;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

type V = Vec<f64>;
type M = Vec<Vec<f64>>;

/// Loop-based reimplementation of the network, reading parameters by name.
struct Reference<'a> {
    p: &'a ParameterSet,
}

fn to_m(x: &Mat) -> M {
    x.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn softmax(x: &[f64]) -> V {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: V = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl<'a> Reference<'a> {
    fn m(&self, name: &str) -> M {
        to_m(&self.p.get(name).unwrap_or_else(|| panic!("no param {name}")).value)
    }

    /// `x W + b` for a single row.
    fn affine(&self, x: &[f64], w: &str, b: Option<&str>) -> V {
        let w = self.m(w);
        let cols = w[0].len();
        let mut out: V = match b {
            Some(b) => self.m(b)[0].clone(),
            None => vec![0.0; cols],
        };
        for (i, xi) in x.iter().enumerate() {
            for j in 0..cols {
                out[j] += xi * w[i][j];
            }
        }
        out
    }

    fn attention(&self, name: &str, x: &M) -> (V, V) {
        let u = self.m(&format!("{name}.u"));
        let scores: V = x
            .iter()
            .map(|row| {
                let h: V = self
                    .affine(row, &format!("{name}.w"), Some(&format!("{name}.b")))
                    .into_iter()
                    .map(f64::tanh)
                    .collect();
                h.iter().zip(&u).map(|(a, b)| a * b[0]).sum()
            })
            .collect();
        let w = softmax(&scores);
        let mut pooled = vec![0.0; x[0].len()];
        for (row, a) in x.iter().zip(&w) {
            for (p, v) in pooled.iter_mut().zip(row) {
                *p += a * v;
            }
        }
        (pooled, w)
    }

    fn gru_step(&self, name: &str, x: &[f64], h: &[f64]) -> V {
        let g = |gate: &str, inp: &[f64], which: &str| self.affine(inp, &format!("{name}.{which}{gate}"), None);
        let b = |gate: &str| self.m(&format!("{name}.b{gate}"))[0].clone();
        let (xz, hz, bz) = (g("z", x, "w"), g("z", h, "u"), b("z"));
        let (xr, hr, br) = (g("r", x, "w"), g("r", h, "u"), b("r"));
        let (xn, hn, bn) = (g("n", x, "w"), g("n", h, "u"), b("n"));
        (0..h.len())
            .map(|j| {
                let z = sig(xz[j] + hz[j] + bz[j]);
                let r = sig(xr[j] + hr[j] + br[j]);
                let n = (xn[j] + r * hn[j] + bn[j]).tanh();
                (1.0 - z) * n + z * h[j]
            })
            .collect()
    }

    fn bi_gru(&self, name: &str, xs: &M, h: usize, init: Option<(V, V)>) -> M {
        let (mut hf, mut hb) = init.unwrap_or((vec![0.0; h], vec![0.0; h]));
        let mut fwd = vec![];
        for x in xs {
            hf = self.gru_step(&format!("{name}.fwd"), x, &hf);
            fwd.push(hf.clone());
        }
        let mut bwd = vec![vec![]; xs.len()];
        for (i, x) in xs.iter().enumerate().rev() {
            hb = self.gru_step(&format!("{name}.bwd"), x, &hb);
            bwd[i] = hb.clone();
        }
        fwd.into_iter()
            .zip(bwd)
            .map(|(mut f, b)| {
                f.extend(b);
                f
            })
            .collect()
    }

    fn interact(h: &M, s: &M) -> (M, M, M) {
        let e: M = h.iter().map(|hi| s.iter().map(|sj| dot(hi, sj)).collect()).collect();
        let h_int = e
            .iter()
            .map(|row| {
                let w = softmax(row);
                (0..s[0].len())
                    .map(|d| w.iter().zip(s).map(|(a, sj)| a * sj[d]).sum())
                    .collect()
            })
            .collect();
        let s_int = (0..s.len())
            .map(|j| {
                let col: V = e.iter().map(|r| r[j]).collect();
                let w = softmax(&col);
                (0..h[0].len())
                    .map(|d| w.iter().zip(h).map(|(a, hi)| a * hi[d]).sum())
                    .collect()
            })
            .collect();
        (e, h_int, s_int)
    }

    fn enrich(v: &M, vi: &M) -> M {
        v.iter()
            .zip(vi)
            .map(|(a, b)| {
                let mut out = a.clone();
                out.extend(b);
                out.extend(a.iter().zip(b).map(|(x, y)| x - y));
                out.extend(a.iter().zip(b).map(|(x, y)| x * y));
                out
            })
            .collect()
    }

    fn sentences(&self, text: &EncodedText) -> M {
        text.sentences
            .iter()
            .map(|s| self.attention("token_att", &to_m(s)).0)
            .collect()
    }

    fn side(&self, side: &str, v: &M, vi: &M, h: usize, init: Option<(V, V)>) -> V {
        let enriched = Self::enrich(v, vi);
        let proj: M = enriched
            .iter()
            .map(|r| {
                self.affine(r, &format!("{side}_proj.w"), Some(&format!("{side}_proj.b")))
                    .into_iter()
                    .map(f64::tanh)
                    .collect()
            })
            .collect();
        let post = self.bi_gru(&format!("{side}_post_gru"), &proj, h, init);
        self.attention(&format!("{side}_sent_att"), &post).0
    }

    fn classify(&self, r: &[f64]) -> V {
        let hidden: V = self
            .affine(r, "cls_hidden.w", Some("cls_hidden.b"))
            .into_iter()
            .map(f64::tanh)
            .collect();
        self.affine(&hidden, "cls_out.w", Some("cls_out.b"))
            .into_iter()
            .map(sig)
            .collect()
    }

    fn pair(&self, fact: &EncodedText, article: &EncodedText, h: usize) -> (f64, V, V) {
        let hs = self.bi_gru("fact_pre_gru", &self.sentences(fact), h, None);
        let ss = self.bi_gru("article_pre_gru", &self.sentences(article), h, None);
        let (_, h_int, s_int) = Self::interact(&hs, &ss);
        let a = self.side("article", &ss, &s_int, h, None);
        let init = (self.affine(&a, "cond.fwd", None), self.affine(&a, "cond.bwd", None));
        let r = self.side("fact", &hs, &h_int, h, Some(init));
        (self.classify(&r)[0], r, a)
    }

    fn fact_only(&self, fact: &EncodedText, h: usize) -> V {
        let hs = self.bi_gru("fact_gru", &self.sentences(fact), h, None);
        let r = self.attention("fact_sent_att", &hs).0;
        self.classify(&r)
    }
}

fn random_text(rng: &mut ChaCha8Rng, d: usize, sentences: usize, max_tokens: usize) -> EncodedText {
    EncodedText::from_sentences(
        (0..sentences)
            .map(|_| {
                let n = rng.random_range(1..=max_tokens);
                Array2::from_shape_simple_fn((n, d), || rng.random_range(-1.0..1.0))
            })
            .collect(),
    )
}

fn toy_net(variant: Variant, seed: u64) -> Network {
    let mut cfg = ModelConfig::toy(6, 3);
    cfg.dropout = 0.0;
    Network::new(cfg, variant, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

fn att_params(d: usize, d_att: usize, seed: u64) -> (ParameterSet, AttentionIdx) {
    let mut s = SpecList::default();
    let idx = AttentionIdx::register(&mut s, "att", Partition::Feature, d, d_att);
    (ParameterSet::init_seeded(&s.specs, seed), idx)
}

#[test]
fn pair_matches_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for seed in 0..4 {
        let net = toy_net(Variant::ArticleAware, seed);
        let fact = random_text(&mut rng, 6, 4, 5);
        let article = random_text(&mut rng, 6, 3, 4);
        let (prob, r, trace) = forward_pair(&net, &fact, &article, false, None).unwrap();
        let reference = Reference { p: &net.params };
        let (p_ref, r_ref, a_ref) = reference.pair(&fact, &article, 3);
        assert!((prob - p_ref).abs() < 1e-12, "{prob} vs {p_ref}");
        assert!(close(r.as_slice().unwrap(), &r_ref, 1e-12));
        assert!(close(trace.article_repr.as_slice().unwrap(), &a_ref, 1e-12));
        assert!(prob > 0.0 && prob < 1.0);
    }
}

#[test]
fn fact_only_matches_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let net = toy_net(Variant::FactOnly, 2);
    let fact = random_text(&mut rng, 6, 3, 6);
    let probs = forward_fact_only(&net, &fact).unwrap();
    assert_eq!(probs.len(), 10);
    let expected = Reference { p: &net.params }.fact_only(&fact, 3);
    assert!(close(&probs, &expected, 1e-12));
}

#[test]
fn variant_mismatch_and_dim_errors() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let aa = toy_net(Variant::ArticleAware, 1);
    let fo = toy_net(Variant::FactOnly, 1);
    let x = random_text(&mut rng, 6, 2, 3);
    assert!(aa.predict_labels(&x).is_err());
    assert!(fo.predict_pair(&x, &x).is_err());
    let wrong = random_text(&mut rng, 5, 2, 3);
    assert!(matches!(aa.predict_pair(&wrong, &x), Err(Error::Shape(_))));
}

#[test]
fn token_attention_single_token_is_identity() {
    let (p, idx) = att_params(4, 3, 1);
    let z = array![[0.3, -0.2, 0.9, 1.5]];
    let (pooled, w) = token_attention(&z, 1, &p, &idx).unwrap();
    assert_eq!(w, array![[1.0]]);
    assert_eq!(pooled, z);
}

#[test]
fn token_attention_zero_projection_is_mean() {
    let (mut p, idx) = att_params(2, 3, 1);
    p.params[idx.w].value.fill(0.0);
    let z = array![[1.0, 2.0], [3.0, 4.0], [5.0, 0.0]];
    let (pooled, w) = token_attention(&z, 3, &p, &idx).unwrap();
    assert!(close(w.as_slice().unwrap(), &[1.0 / 3.0; 3], 1e-15));
    assert!(close(pooled.as_slice().unwrap(), &[3.0, 2.0], 1e-12));
}

#[test]
fn token_attention_masks_padding() {
    let (p, idx) = att_params(3, 4, 7);
    let z = array![[0.1, 0.2, 0.3], [-0.5, 0.4, 0.0], [9.0, 9.0, 9.0], [-7.0, 3.0, 1.0]];
    let (pooled, w) = token_attention(&z, 2, &p, &idx).unwrap();
    assert_eq!(w[[0, 2]], 0.0);
    assert_eq!(w[[0, 3]], 0.0);
    let (unpadded, w2) = token_attention(&z.slice(ndarray::s![..2, ..]).to_owned(), 2, &p, &idx).unwrap();
    assert_eq!(pooled, unpadded);
    assert_eq!(w.slice(ndarray::s![.., ..2]), w2);
    assert!(token_attention(&z, 0, &p, &idx).is_err());
    assert!(token_attention(&z, 5, &p, &idx).is_err());
}

fn bigru_params(d: usize, h: usize, seed: u64) -> (ParameterSet, BiGruIdx) {
    let mut s = SpecList::default();
    let idx = BiGruIdx::register(&mut s, "g", Partition::Feature, d, h);
    (ParameterSet::init_seeded(&s.specs, seed), idx)
}

fn run_bigru(p: &ParameterSet, idx: &BiGruIdx, xs: &Mat) -> Mat {
    let mut t = Tape::new();
    let pv = p.bind(&mut t);
    let x = t.leaf(xs.clone());
    let out = bi_gru(&mut t, &pv, idx, x, None);
    t.value(out).clone()
}

#[test]
fn bigru_zero_input_zero_bias_stays_zero() {
    let (p, idx) = bigru_params(3, 4, 2);
    let out = run_bigru(&p, &idx, &Mat::zeros((5, 3)));
    assert_eq!(out.dim(), (5, 8));
    assert!(out.iter().all(|v| *v == 0.0));
}

#[test]
fn bigru_tied_directions_mirror_under_reversal() {
    let (mut p, idx) = bigru_params(3, 2, 9);
    for (f, b) in [
        (idx.fwd.wz, idx.bwd.wz),
        (idx.fwd.uz, idx.bwd.uz),
        (idx.fwd.wr, idx.bwd.wr),
        (idx.fwd.ur, idx.bwd.ur),
        (idx.fwd.wn, idx.bwd.wn),
        (idx.fwd.un, idx.bwd.un),
    ] {
        p.params[b].value = p.params[f].value.clone();
    }
    let xs = array![[0.1, 0.5, -0.3], [0.7, -0.2, 0.0], [-0.4, 0.9, 0.2], [0.3, 0.3, 0.3]];
    let mut rev = xs.clone();
    rev.invert_axis(ndarray::Axis(0));
    let a = run_bigru(&p, &idx, &xs);
    let b = run_bigru(&p, &idx, &rev);
    let m = xs.nrows();
    for i in 0..m {
        for j in 0..2 {
            assert!((a[[i, j]] - b[[m - 1 - i, 2 + j]]).abs() < 1e-14);
            assert!((a[[i, 2 + j]] - b[[m - 1 - i, j]]).abs() < 1e-14);
        }
    }
}

fn run_interaction(h: &Mat, s: &Mat) -> (Mat, Mat, Mat) {
    let mut t = Tape::new();
    let hv = t.leaf(h.clone());
    let sv = t.leaf(s.clone());
    let i = interaction(&mut t, hv, sv);
    (
        t.value(i.scores).clone(),
        t.value(i.fact).clone(),
        t.value(i.article).clone(),
    )
}

#[test]
fn interaction_single_article_sentence() {
    let h = array![[1.0, 0.0], [0.0, 2.0], [3.0, -1.0]];
    let s = array![[0.5, 0.25]];
    let (_, h_int, _) = run_interaction(&h, &s);
    for row in h_int.rows() {
        assert_eq!(row.to_vec(), vec![0.5, 0.25]);
    }
}

#[test]
fn interaction_single_fact_sentence() {
    let h = array![[0.5, -1.0]];
    let s = array![[1.0, 0.0], [0.0, 2.0]];
    let (_, _, s_int) = run_interaction(&h, &s);
    for row in s_int.rows() {
        assert_eq!(row.to_vec(), vec![0.5, -1.0]);
    }
}

#[test]
fn interaction_matches_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = Array2::from_shape_simple_fn((4, 3), || rng.random_range(-1.0..1.0));
    let s = Array2::from_shape_simple_fn((2, 3), || rng.random_range(-1.0..1.0));
    let (e, hi, si) = run_interaction(&h, &s);
    let (e_ref, hi_ref, si_ref) = Reference::interact(&to_m(&h), &to_m(&s));
    assert!(close(e.as_slice().unwrap(), &e_ref.concat(), 1e-14));
    assert!(close(hi.as_slice().unwrap(), &hi_ref.concat(), 1e-14));
    assert!(close(si.as_slice().unwrap(), &si_ref.concat(), 1e-14));
}

fn run_enrich(v: &Mat, vi: &Mat) -> Mat {
    let mut t = Tape::new();
    let a = t.leaf(v.clone());
    let b = t.leaf(vi.clone());
    let e = enrich(&mut t, a, b);
    t.value(e).clone()
}

#[test]
fn enrich_examples() {
    assert_eq!(
        run_enrich(&array![[1.0, 2.0]], &array![[3.0, 5.0]]),
        array![[1.0, 2.0, 3.0, 5.0, -2.0, -3.0, 3.0, 10.0]]
    );
    assert_eq!(run_enrich(&array![[0.0, 0.0]], &array![[0.0, 0.0]]), Mat::zeros((1, 8)));
    let same = run_enrich(&array![[2.0, -1.0]], &array![[2.0, -1.0]]);
    assert_eq!(same.slice(ndarray::s![.., 4..6]), array![[0.0, 0.0]]);
    assert_eq!(same.slice(ndarray::s![.., 6..8]), array![[4.0, 1.0]]);
}

#[test]
fn single_sentence_article_weight_is_one() {
    let net = toy_net(Variant::ArticleAware, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let fact = random_text(&mut rng, 6, 3, 4);
    let article = random_text(&mut rng, 6, 1, 4);
    let (_, _, trace) = forward_pair(&net, &fact, &article, false, None).unwrap();
    assert_eq!(trace.article_sent_weights, array![[1.0]]);
}

#[test]
fn conditioning_map() {
    let mut net = toy_net(Variant::ArticleAware, 4);
    let l = net.article_aware().unwrap().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let fact = random_text(&mut rng, 6, 3, 4);
    let article = random_text(&mut rng, 6, 2, 4);

    let r_of = |net: &Network, a: &Mat| -> Mat {
        let mut t = Tape::new();
        let pv = net.params.bind(&mut t);
        let vars = forward_pair_on(&mut t, &pv, &l, &fact, &article, &mut Dropout::off());
        let av = t.leaf(a.clone());
        let (_, r, _) = fact_representation_on(&mut t, &pv, &l, vars.h, vars.interaction.fact, av, &mut Dropout::off());
        t.value(r).clone()
    };
    let (_, _, trace) = forward_pair(&net, &fact, &article, false, None).unwrap();
    let a = trace.article_repr.clone();
    assert_eq!(r_of(&net, &a), trace.fact_repr);
    assert_ne!(r_of(&net, &a), r_of(&net, &(&a * 2.0)));

    // A zero conditioning map makes the article representation irrelevant.
    net.params.params[l.cond_fwd].value.fill(0.0);
    net.params.params[l.cond_bwd].value.fill(0.0);
    let base = r_of(&net, &Mat::zeros(a.raw_dim()));
    assert_eq!(r_of(&net, &a), base);
    assert_eq!(r_of(&net, &(&a * 5.0)), base);
}

#[test]
fn inference_is_deterministic_and_dropout_is_seeded() {
    let mut cfg = ModelConfig::toy(6, 3);
    cfg.dropout = 0.5;
    let net = Network::new(cfg, Variant::ArticleAware, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let fact = random_text(&mut rng, 6, 3, 4);
    let article = random_text(&mut rng, 6, 2, 4);
    let a = forward_pair(&net, &fact, &article, false, None).unwrap();
    let b = forward_pair(&net, &fact, &article, false, None).unwrap();
    assert_eq!(a, b);
    let c = forward_pair(&net, &fact, &article, true, Some(&mut ChaCha8Rng::seed_from_u64(9))).unwrap();
    let d = forward_pair(&net, &fact, &article, true, Some(&mut ChaCha8Rng::seed_from_u64(9))).unwrap();
    assert_eq!(c, d);
    assert_ne!(a.0, c.0);
}

#[test]
fn default_widths() {
    let net = Network::new(
        ModelConfig::new(16),
        Variant::ArticleAware,
        &mut ChaCha8Rng::seed_from_u64(0),
    )
    .unwrap();
    let l = net.article_aware().unwrap();
    assert_eq!(net.params.params[l.token_att.w].value.dim(), (16, 300));
    assert_eq!(net.params.params[l.fact_proj.w].value.dim(), (1600, 400));
    assert_eq!(net.params.params[l.cond_fwd].value.dim(), (400, 200));
    assert_eq!(net.params.params[l.cls_hidden.w].value.dim(), (400, 200));
    assert!(net.params.params.iter().any(|p| p.partition == Partition::Classifier));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn attention_weights_form_a_distribution(seed in 0u64..1000, n in 1usize..8, scale in 0.1f64..20.0) {
        let (p, idx) = att_params(4, 3, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 7);
        let z = Array2::from_shape_simple_fn((n, 4), || scale * rng.random_range(-1.0..1.0));
        let (pooled, w) = token_attention(&z, n, &p, &idx).unwrap();
        prop_assert!((w.sum() - 1.0).abs() < 1e-12);
        prop_assert!(w.iter().all(|v| *v >= 0.0));
        // The pooled vector lies in the convex hull: every linear functional
        // of it is bounded by the functional's extremes over the rows.
        for _ in 0..8 {
            let f: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let val = dot(pooled.as_slice().unwrap(), &f);
            let vals: Vec<f64> = z.rows().into_iter().map(|r| dot(r.as_slice().unwrap(), &f)).collect();
            let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(val >= lo - 1e-9 && val <= hi + 1e-9);
        }
    }

    #[test]
    fn token_attention_is_permutation_invariant(seed in 0u64..1000, n in 2usize..7) {
        let (p, idx) = att_params(3, 4, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 3);
        let z = Array2::from_shape_simple_fn((n, 3), || rng.random_range(-2.0..2.0));
        let perm: Vec<usize> = rand::seq::index::sample(&mut rng, n, n).into_vec();
        let zp = z.select(ndarray::Axis(0), &perm);
        let (a, wa) = token_attention(&z, n, &p, &idx).unwrap();
        let (b, wb) = token_attention(&zp, n, &p, &idx).unwrap();
        prop_assert!(close(a.as_slice().unwrap(), b.as_slice().unwrap(), 1e-12));
        for (i, &src) in perm.iter().enumerate() {
            prop_assert!((wb[[0, i]] - wa[[0, src]]).abs() < 1e-12);
        }
    }

    #[test]
    fn interaction_is_permutation_equivariant(seed in 0u64..1000, m in 1usize..6, k in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = Array2::from_shape_simple_fn((m, 3), || rng.random_range(-1.5..1.5));
        let s = Array2::from_shape_simple_fn((k, 3), || rng.random_range(-1.5..1.5));
        let pm: Vec<usize> = rand::seq::index::sample(&mut rng, m, m).into_vec();
        let pk: Vec<usize> = rand::seq::index::sample(&mut rng, k, k).into_vec();
        let (_, hi, si) = run_interaction(&h, &s);
        let (_, hip, sip) = run_interaction(&h.select(ndarray::Axis(0), &pm), &s.select(ndarray::Axis(0), &pk));
        let hi_perm = hi.select(ndarray::Axis(0), &pm);
        let si_perm = si.select(ndarray::Axis(0), &pk);
        prop_assert!(close(hip.as_slice().unwrap(), hi_perm.as_slice().unwrap(), 1e-12));
        prop_assert!(close(sip.as_slice().unwrap(), si_perm.as_slice().unwrap(), 1e-12));
    }

    #[test]
    fn pair_probability_in_open_interval(seed in 0u64..200) {
        let net = toy_net(Variant::ArticleAware, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        let fact = random_text(&mut rng, 6, 1 + (seed as usize % 4), 5);
        let article = random_text(&mut rng, 6, 1 + (seed as usize % 3), 5);
        let p = net.predict_pair(&fact, &article).unwrap();
        prop_assert!(p > 0.0 && p < 1.0);
    }
}
