use proptest::prelude::*;
use rand::SeedableRng;
use specbpp::data::{apply_permutation, Patch};
use specbpp::model::encoder::{self, AttentionVars, DualAttentionVars, MultiScaleVars, SCALES};
use specbpp::model::{argmax_decode, greedy_decode, Model, ModelConfig, Params, TargetScale};
use specbpp::permutation::uniform_sample;
use specbpp::tensor::gradcheck::check_gradients;
use specbpp::tensor::{Array, Tape};
use specbpp::{train, SeededRng};

fn tiny_config() -> ModelConfig {
    ModelConfig {
        bands: 12,
        height: 3,
        width: 3,
        attn_dim: 4,
        attn_heads: 2,
        ms_channels: 3,
        embed_dim: 4,
        ca_ratio: 2,
        sa_kernel: 3,
        ms_activation: true,
        input_norm: true,
    }
}

fn random_patch(cfg: &ModelConfig, rng: &mut SeededRng) -> Patch {
    let a = Array::<f32>::uniform(&[cfg.height * cfg.width * cfg.bands], 0.5, rng);
    let cube = a.data().iter().map(|v| v + 0.5).collect();
    Patch::new(cfg.height, cfg.width, cfg.bands, cube).unwrap()
}

fn attention_params(bands: usize, width: usize, rng: &mut SeededRng) -> Params<f64> {
    let mut p = Params::default();
    for n in ["q", "k", "v"] {
        p.insert(format!("attn.w_{n}"), Array::uniform(&[1, width], 1.0, rng));
        p.insert(format!("attn.pos_{n}"), Array::uniform(&[bands, width], 1.0, rng));
    }
    p.insert("attn.w_o", Array::uniform(&[width, 1], 1.0, rng));
    p
}

fn run_attention(p: &Params<f64>, x: &Array<f64>, heads: usize) -> Array<f64> {
    let mut tape = Tape::new();
    let b = p.bind(&mut tape);
    let xv = tape.leaf(x.clone());
    let vars = AttentionVars::from_bound(&b, heads).unwrap();
    let y = encoder::spectral_attention(&mut tape, xv, &vars).unwrap();
    tape.value(y).clone()
}

#[test]
fn attention_with_zero_scores_averages_values() {
    let mut rng = SeededRng::seed_from_u64(1);
    let mut p = attention_params(5, 1, &mut rng);
    for n in ["attn.w_q", "attn.w_k", "attn.pos_q", "attn.pos_k", "attn.pos_v"] {
        let shape = p.get(n).unwrap().shape().to_vec();
        p.insert(n, Array::zeros(&shape));
    }
    p.insert("attn.w_v", Array::ones(&[1, 1]));
    p.insert("attn.w_o", Array::ones(&[1, 1]));
    let x = Array::uniform(&[3, 5], 1.0, &mut rng);
    let y = run_attention(&p, &x, 1);
    for r in 0..3 {
        let mean = x.row(r).iter().sum::<f64>() / 5.0;
        for &v in y.row(r) {
            assert!((v - mean).abs() < 1e-12);
        }
    }
}

#[test]
fn attention_over_one_band_is_the_value_projection() {
    let mut rng = SeededRng::seed_from_u64(2);
    let p = attention_params(1, 4, &mut rng);
    let x = Array::uniform(&[6, 1], 1.0, &mut rng);
    let y = run_attention(&p, &x, 2);
    let (wv, pv, wo) = (p.get("attn.w_v").unwrap(), p.get("attn.pos_v").unwrap(), p.get("attn.w_o").unwrap());
    for r in 0..6 {
        let expect: f64 = (0..4).map(|d| (x.at(r, 0) * wv.at(0, d) + pv.at(0, d)) * wo.at(d, 0)).sum();
        assert!((y.at(r, 0) - expect).abs() < 1e-12);
    }
}

/// Direct evaluation: lift, score, normalize, mix, project.
fn dense_attention(p: &Params<f64>, x: &[f64], heads: usize) -> Vec<f64> {
    let b = x.len();
    let a = p.get("attn.w_o").unwrap().rows();
    let dk = a / heads;
    let lift = |w: &str, pos: &str| -> Vec<Vec<f64>> {
        let (w, pos) = (p.get(w).unwrap(), p.get(pos).unwrap());
        (0..b).map(|t| (0..a).map(|d| x[t] * w.at(0, d) + pos.at(t, d)).collect()).collect()
    };
    let (q, k, v) = (lift("attn.w_q", "attn.pos_q"), lift("attn.w_k", "attn.pos_k"), lift("attn.w_v", "attn.pos_v"));
    let wo = p.get("attn.w_o").unwrap();
    let mut out = vec![0.0; b];
    for h in 0..heads {
        let cols = h * dk..(h + 1) * dk;
        for i in 0..b {
            let scores: Vec<f64> = (0..b)
                .map(|j| cols.clone().map(|d| q[i][d] * k[j][d]).sum::<f64>() / (dk as f64).sqrt())
                .collect();
            let m = scores.iter().cloned().fold(f64::MIN, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let z: f64 = e.iter().sum();
            for d in cols.clone() {
                let ctx: f64 = (0..b).map(|j| e[j] / z * v[j][d]).sum();
                out[i] += ctx * wo.at(d, 0);
            }
        }
    }
    out
}

#[test]
fn attention_matches_dense_oracle() {
    let mut rng = SeededRng::seed_from_u64(3);
    for heads in [1, 2] {
        let p = attention_params(4, 4, &mut rng);
        let x = Array::uniform(&[3, 4], 1.0, &mut rng);
        let y = run_attention(&p, &x, heads);
        for r in 0..3 {
            let expect = dense_attention(&p, x.row(r), heads);
            for (a, e) in y.row(r).iter().zip(&expect) {
                assert!((a - e).abs() < 1e-12, "{a} vs {e}");
            }
        }
    }
}

#[test]
fn indivisible_attention_width_is_rejected() {
    let cfg = ModelConfig { attn_dim: 6, attn_heads: 4, ..tiny_config() };
    let mut rng = SeededRng::seed_from_u64(0);
    assert!(Model::<f32>::new(cfg, &mut rng).is_err());
}

#[test]
fn band_weighting_examples() {
    let mut rng = SeededRng::seed_from_u64(4);
    let f = Array::<f64>::uniform(&[6, 4], 1.0, &mut rng);
    let weigh = |alpha: Array<f64>| {
        let mut t = Tape::new();
        let (fv, av) = (t.leaf(f.clone()), t.leaf(alpha));
        let y = encoder::band_weighting(&mut t, fv, av).unwrap();
        t.value(y).clone()
    };
    assert_eq!(weigh(Array::ones(&[1, 4])), f);
    let y = weigh(Array::from_rows(&[&[1.0, 0.0, 1.0, 1.0]]));
    for r in 0..6 {
        assert_eq!(y.at(r, 1), 0.0);
        assert_eq!(y.at(r, 2), f.at(r, 2));
    }
    // linear in α
    let y = weigh(Array::filled(&[1, 4], 2.5));
    assert_eq!(y, f.map(|v| v * 2.5));

    let alpha = Array::uniform(&[1, 4], 1.0, &mut rng);
    let r = check_gradients(&[f.clone(), alpha], 1e-5, |t, v| {
        let y = encoder::band_weighting(t, v[0], v[1])?;
        let y = t.mul(y, y)?;
        t.sum_all(y)
    })
    .unwrap();
    assert!(r.max_rel_error() < 1e-4, "{r:?}");
}

fn multiscale_params(c: usize, m: usize, d: usize, rng: &mut SeededRng) -> Params<f64> {
    let mut p = Params::default();
    for s in SCALES {
        p.insert(format!("ms.dw{s}"), Array::uniform(&[c, s * s], 1.0, rng));
        p.insert(format!("ms.pw_w{s}"), Array::uniform(&[c, m], 1.0, rng));
        p.insert(format!("ms.pw_b{s}"), Array::uniform(&[1, m], 1.0, rng));
    }
    p.insert("ms.fuse_w", Array::uniform(&[3 * m, d], 1.0, rng));
    p.insert("ms.fuse_b", Array::uniform(&[1, d], 1.0, rng));
    p
}

fn run_multiscale(p: &Params<f64>, x: &Array<f64>, h: usize, w: usize, act: bool) -> Array<f64> {
    let mut tape = Tape::new();
    let b = p.bind(&mut tape);
    let xv = tape.leaf(x.clone());
    let vars = MultiScaleVars::from_bound(&b).unwrap();
    let y = encoder::multiscale_block(&mut tape, xv, &vars, h, w, act).unwrap();
    tape.value(y).clone()
}

#[test]
fn multiscale_identity_composition() {
    let (h, w, c) = (4, 5, 3);
    let mut rng = SeededRng::seed_from_u64(5);
    let mut p = multiscale_params(c, c, c, &mut rng);
    for s in SCALES {
        let mut k = Array::zeros(&[c, s * s]);
        for ch in 0..c {
            k.data_mut()[ch * s * s + s * s / 2] = 1.0;
        }
        p.insert(format!("ms.dw{s}"), k);
        p.insert(format!("ms.pw_w{s}"), Array::identity(c));
        p.insert(format!("ms.pw_b{s}"), Array::zeros(&[1, c]));
    }
    let mut fuse = Array::zeros(&[3 * c, c]);
    for blk in 0..3 {
        for ch in 0..c {
            fuse.data_mut()[(blk * c + ch) * c + ch] = 1.0 / 3.0;
        }
    }
    p.insert("ms.fuse_w", fuse);
    p.insert("ms.fuse_b", Array::zeros(&[1, c]));
    let x = Array::uniform(&[h * w, c], 1.0, &mut rng);
    assert!(run_multiscale(&p, &x, h, w, false).max_abs_diff(&x) < 1e-12);
}

#[test]
fn multiscale_zero_input_gives_bias() {
    let mut rng = SeededRng::seed_from_u64(6);
    let mut p = multiscale_params(3, 2, 4, &mut rng);
    for s in SCALES {
        p.insert(format!("ms.pw_b{s}"), Array::zeros(&[1, 2]));
    }
    let y = run_multiscale(&p, &Array::zeros(&[9, 3]), 3, 3, true);
    let b = p.get("ms.fuse_b").unwrap();
    for r in 0..9 {
        assert_eq!(y.row(r), b.row(0));
    }
}

/// Same-padded depthwise convolution by definition.
fn naive_dw(x: &Array<f64>, k: &Array<f64>, h: usize, w: usize, s: usize) -> Array<f64> {
    let c = x.cols();
    let pad = (s / 2) as isize;
    let mut out = Array::zeros(&[h * w, c]);
    for y in 0..h as isize {
        for xx in 0..w as isize {
            for ch in 0..c {
                let mut acc = 0.0;
                for dy in 0..s as isize {
                    for dx in 0..s as isize {
                        let (sy, sx) = (y + dy - pad, xx + dx - pad);
                        if sy >= 0 && sx >= 0 && sy < h as isize && sx < w as isize {
                            acc += x.at((sy * w as isize + sx) as usize, ch) * k.at(ch, (dy * s as isize + dx) as usize);
                        }
                    }
                }
                out.data_mut()[(y * w as isize + xx) as usize * c + ch] = acc;
            }
        }
    }
    out
}

fn naive_linear(x: &Array<f64>, w: &Array<f64>, b: &Array<f64>) -> Array<f64> {
    let (rows, cin) = (x.rows(), x.cols());
    let cout = w.cols();
    let mut out = Array::zeros(&[rows, cout]);
    for r in 0..rows {
        for o in 0..cout {
            out.data_mut()[r * cout + o] = b.at(0, o) + (0..cin).map(|i| x.at(r, i) * w.at(i, o)).sum::<f64>();
        }
    }
    out
}

#[test]
fn multiscale_matches_composed_oracles() {
    let (h, w, c, m, d) = (4, 3, 3, 2, 5);
    let mut rng = SeededRng::seed_from_u64(7);
    let p = multiscale_params(c, m, d, &mut rng);
    let x = Array::uniform(&[h * w, c], 1.0, &mut rng);
    for act in [false, true] {
        let mut cat = Array::zeros(&[h * w, 3 * m]);
        for (i, s) in SCALES.into_iter().enumerate() {
            let dw = naive_dw(&x, p.get(&format!("ms.dw{s}")).unwrap(), h, w, s);
            let mut f = naive_linear(&dw, p.get(&format!("ms.pw_w{s}")).unwrap(), p.get(&format!("ms.pw_b{s}")).unwrap());
            if act {
                f = f.map(|v| v.max(0.0));
            }
            for r in 0..h * w {
                for j in 0..m {
                    cat.data_mut()[r * 3 * m + i * m + j] = f.at(r, j);
                }
            }
        }
        let expect = naive_linear(&cat, p.get("ms.fuse_w").unwrap(), p.get("ms.fuse_b").unwrap());
        assert!(run_multiscale(&p, &x, h, w, act).max_abs_diff(&expect) < 1e-12);
    }
}

fn dual_params(d: usize, hidden: usize, k: usize, rng: &mut SeededRng) -> Params<f64> {
    let mut p = Params::default();
    p.insert("da.ca_w1", Array::uniform(&[d, hidden], 1.0, rng));
    p.insert("da.ca_w2", Array::uniform(&[hidden, d], 1.0, rng));
    p.insert("da.sa_kernel", Array::uniform(&[1, 2 * k * k], 1.0, rng));
    p
}

#[test]
fn dual_attention_gates_and_pooling() {
    let (h, w, d) = (4, 4, 6);
    let mut rng = SeededRng::seed_from_u64(8);
    let f = Array::<f64>::uniform(&[h * w, d], 2.0, &mut rng);
    let p = dual_params(d, 3, 7, &mut rng);
    let mut tape = Tape::new();
    let b = p.bind(&mut tape);
    let fv = tape.leaf(f.clone());
    let vars = DualAttentionVars::from_bound(&b, 7).unwrap();
    let ac = encoder::channel_gate(&mut tape, fv, &vars).unwrap();
    let as_ = encoder::spatial_gate(&mut tape, fv, &vars, h, w).unwrap();
    for &g in tape.value(ac).data().iter().chain(tape.value(as_).data()) {
        assert!(g > 0.0 && g < 1.0);
    }
    // gates forced open pool to the plain average
    let ones_c = tape.leaf(Array::ones(&[1, d]));
    let ones_s = tape.leaf(Array::ones(&[h * w, 1]));
    let z = encoder::gated_pool(&mut tape, fv, ones_c, ones_s).unwrap();
    let gap: Vec<f64> = (0..d).map(|c| (0..h * w).map(|r| f.at(r, c)).sum::<f64>() / (h * w) as f64).collect();
    assert_eq!(tape.value(z).data(), &gap[..]);

    let mut zero = Params::default();
    zero.insert("da.ca_w1", Array::zeros(&[d, 3]));
    zero.insert("da.ca_w2", Array::zeros(&[3, d]));
    zero.insert("da.sa_kernel", Array::zeros(&[1, 98]));
    let mut tape = Tape::new();
    let b = zero.bind(&mut tape);
    let fv = tape.leaf(f.clone());
    let vars = DualAttentionVars::from_bound(&b, 7).unwrap();
    let z = encoder::dual_attention(&mut tape, fv, &vars, h, w).unwrap();
    for (a, g) in tape.value(z).data().iter().zip(&gap) {
        assert!((a - g / 4.0).abs() < 1e-12);
    }
}

#[test]
fn dual_attention_gradients_flow_through_both_gates() {
    let (h, w, d) = (3, 4, 4);
    let mut rng = SeededRng::seed_from_u64(9);
    for _ in 0..5 {
        let f = Array::<f64>::uniform(&[h * w, d], 1.0, &mut rng);
        let p = dual_params(d, 2, 3, &mut rng);
        let inputs = [f, p.get("da.ca_w1").unwrap().clone(), p.get("da.ca_w2").unwrap().clone(), p.get("da.sa_kernel").unwrap().clone()];
        let r = check_gradients(&inputs, 1e-5, |t, v| {
            let vars = DualAttentionVars { ca_w1: v[1], ca_w2: v[2], sa_kernel: v[3], sa_kernel_size: 3 };
            let z = encoder::dual_attention(t, v[0], &vars, h, w)?;
            let z = t.mul(z, z)?;
            t.sum_all(z)
        })
        .unwrap();
        assert!(r.max_rel_error() < 1e-4, "{r:?}");
        assert!(r.per_input.len() == 4);
    }
}

#[test]
fn perm_head_rows_are_distributions() {
    let mut rng = SeededRng::seed_from_u64(10);
    let cfg = tiny_config();
    let mut m = Model::<f64>::new(cfg.clone(), &mut rng).unwrap();
    m.init_perm_head(4, &mut rng);
    m.params.insert("perm.w", Array::zeros(&[cfg.embed_dim, 16]));
    let p = m.predict_perm(&random_patch(&cfg, &mut rng)).unwrap();
    assert!(p.data().iter().all(|&v| (v - 0.25).abs() < 1e-12));

    m.init_perm_head(5, &mut rng);
    m.params.insert("perm.b", Array::uniform(&[1, 25], 3.0, &mut rng));
    for _ in 0..10 {
        let p = m.predict_perm(&random_patch(&cfg, &mut rng)).unwrap();
        for r in 0..5 {
            assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn perm_head_size_mismatch_is_an_error() {
    let mut tape = Tape::<f64>::new();
    let z = tape.leaf(Array::ones(&[1, 4]));
    let w = tape.leaf(Array::zeros(&[4, 9]));
    let b = tape.leaf(Array::zeros(&[1, 9]));
    assert!(specbpp::model::heads::perm_logits(&mut tape, z, w, b, 4).is_err());
}

#[test]
fn argmax_decode_of_distinct_maxima() {
    let p = Array::<f64>::from_rows(&[&[0.1, 0.2, 0.7], &[0.6, 0.3, 0.1], &[0.2, 0.5, 0.3]]);
    assert_eq!(argmax_decode(&p).unwrap(), vec![2, 0, 1]);
    assert_eq!(greedy_decode(&p).unwrap().as_slice(), &[2, 0, 1]);
}

proptest! {
    #[test]
    fn greedy_agrees_with_bijective_argmax(n in 3usize..7, seed in any::<u64>()) {
        let mut rng = SeededRng::seed_from_u64(seed);
        let mut p = Array::<f64>::uniform(&[n, n], 1.0, &mut rng).map(|v| v.exp());
        for r in 0..n {
            let s: f64 = p.row(r).iter().sum();
            for c in 0..n { p.data_mut()[r * n + c] /= s; }
        }
        let a = argmax_decode(&p).unwrap();
        let g = greedy_decode(&p).unwrap();
        let mut seen = vec![false; n];
        let bijective = a.iter().all(|&j| !std::mem::replace(&mut seen[j], true));
        if bijective {
            prop_assert_eq!(g.as_slice(), &a[..]);
        }
    }
}

#[test]
fn regression_head_zero_weights_predict_zero() {
    let mut rng = SeededRng::seed_from_u64(12);
    let cfg = tiny_config();
    let mut m = Model::<f64>::new(cfg.clone(), &mut rng).unwrap();
    m.init_regression_head(TargetScale { mean: 0.0, std: 1.0 }, &mut rng);
    m.params.insert("reg.w2", Array::zeros(&[2, 1]));
    assert_eq!(m.predict_target(&random_patch(&cfg, &mut rng)).unwrap(), 0.0);
}

#[test]
fn regression_overfits_a_single_point() {
    let mut rng = SeededRng::seed_from_u64(13);
    let cfg = tiny_config();
    let mut m = Model::<f32>::new(cfg.clone(), &mut rng).unwrap();
    m.init_regression_head(TargetScale { mean: 0.0, std: 1.0 }, &mut rng);
    let x = random_patch(&cfg, &mut rng);
    let target = 1.7;
    let mut opt = train::Sgd::new(0.01, 0.9, 0);
    let mut reached = None;
    for step in 0..2000 {
        let (loss, g) = m.regression_gradients(&x, target).unwrap();
        if loss.sqrt() < 1e-3 {
            reached = Some(step);
            break;
        }
        opt.apply(&mut m.params, &g);
    }
    assert!(reached.is_some());
    assert!((m.predict_target(&x).unwrap() - target).abs() < 1e-3);
}

/// Parameter arrays as gradcheck inputs, in name order.
fn param_inputs(m: &Model<f64>) -> (Vec<String>, Vec<Array<f64>>) {
    m.params.iter().map(|(k, v)| (k.clone(), v.clone())).unzip()
}

#[test]
fn regression_head_gradients() {
    let mut rng = SeededRng::seed_from_u64(14);
    let cfg = tiny_config();
    let mut m = Model::<f64>::new(cfg.clone(), &mut rng).unwrap();
    m.init_regression_head(TargetScale { mean: 1.0, std: 2.0 }, &mut rng);
    for n in ["reg.b1", "reg.b2"] {
        let shape = m.params.get(n).unwrap().shape().to_vec();
        m.params.insert(n, Array::uniform(&shape, 0.5, &mut rng));
    }
    let x = random_patch(&cfg, &mut rng);
    let (names, inputs) = param_inputs(&m);
    let r = check_gradients(&inputs, 1e-5, |t, v| {
        let b = probe_bound(&names, v);
        let xi = m.input(t, &x)?;
        let z = m.encode(t, &b, xi)?;
        let y = m.regression(t, &b, z)?;
        specbpp::model::heads::squared_error(t, y, 0.3)
    })
    .unwrap();
    assert!(r.max_rel_error() < 1e-3, "{r:?}");
}

fn probe_bound(names: &[String], vars: &[specbpp::tensor::Var]) -> specbpp::model::Bound {
    specbpp::model::Bound::from_vars(names.iter().cloned().zip(vars.iter().copied()))
}

#[test]
fn pretext_gradients_match_finite_differences_end_to_end() {
    let cfg = tiny_config();
    let mut rng = SeededRng::seed_from_u64(15);
    let mut worst = 0.0f64;
    for trial in 0..4 {
        let mut m = Model::<f64>::new(cfg.clone(), &mut rng).unwrap();
        m.init_perm_head(3 + trial % 2, &mut rng);
        let n = m.perm_segments().unwrap();
        let x = random_patch(&cfg, &mut rng);
        let p = uniform_sample(n, &mut rng);
        let shuffled = apply_permutation(&x, &p).unwrap();
        let inv = p.inverse();
        let (names, inputs) = param_inputs(&m);
        let r = check_gradients(&inputs, 1e-5, |t, v| {
            let b = probe_bound(&names, v);
            let xi = m.input(t, &shuffled)?;
            let z = m.encode(t, &b, xi)?;
            let logits = m.perm_logits(t, &b, z)?;
            specbpp::model::heads::perm_loss(t, logits, &inv)
        })
        .unwrap();
        worst = worst.max(r.max_rel_error());

        // the analytic path used in training agrees with the tape path
        let (_, g) = m.pretext_gradients(&shuffled, &inv).unwrap();
        assert_eq!(g.len(), m.params.len());
    }
    assert!(worst < 1e-3, "worst relative error {worst}");
}
