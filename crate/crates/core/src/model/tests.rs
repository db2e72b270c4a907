use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::attention::{AffinityParams, HeadProjections, MhaParams};
use crate::autodiff::{gradcheck, ParamSet, Tape, Tensor, Var};
use crate::data::{generate_synthetic, synthetic_lexicon, SyntheticSpec, UtteranceSample};
use crate::dcgcn::{GcnLayer, GcnStack, Linear};
use crate::error::Error;

// Plain f64 row-major helpers used as independent oracles.
type M = Vec<Vec<f64>>;

fn mm(a: &M, b: &M) -> M {
    a.iter()
        .map(|row| {
            (0..b[0].len())
                .map(|j| row.iter().zip(b).map(|(x, br)| x * br[j]).sum())
                .collect()
        })
        .collect()
}

fn tr(a: &M) -> M {
    (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

fn softmax(a: &M) -> M {
    a.iter()
        .map(|r| {
            let m = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = r.iter().map(|x| (x - m).exp()).collect();
            let s: f64 = e.iter().sum();
            e.iter().map(|x| x / s).collect()
        })
        .collect()
}

fn scale(a: &M, s: f64) -> M {
    a.iter().map(|r| r.iter().map(|x| x * s).collect()).collect()
}

fn relu_bias(a: &M, b: &[f64]) -> M {
    a.iter()
        .map(|r| r.iter().zip(b).map(|(x, y)| (x + y).max(0.0)).collect())
        .collect()
}

fn add_bias(a: &M, b: &[f64]) -> M {
    a.iter()
        .map(|r| r.iter().zip(b).map(|(x, y)| x + y).collect())
        .collect()
}

fn hcat(a: &M, b: &M) -> M {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().chain(y).cloned().collect())
        .collect()
}

fn t(rows: &M) -> Tensor {
    Tensor::from_rows(rows).unwrap()
}

fn close(a: &Tensor, b: &M, tol: f64) {
    let b = t(b);
    assert_eq!(a.shape(), b.shape());
    assert!(a.max_abs_diff(&b) < tol, "{a:?} vs {b:?}");
}

fn tiny_config() -> MagcnConfig {
    MagcnConfig {
        d: 8,
        sublayers: 2,
        heads: 2,
        blocks: 1,
        sentiment_dim: 2,
        language_dim: 3,
        vision_dim: 2,
        acoustic_dim: 2,
        ..Default::default()
    }
}

fn sample_for(cfg: &MagcnConfig, n: usize, seed: u64) -> UtteranceSample {
    let ds = generate_synthetic(&SyntheticSpec {
        n_samples: 2,
        seq_len: n,
        language_dim: cfg.language_dim,
        vision_dim: cfg.vision_dim,
        acoustic_dim: cfg.acoustic_dim,
        num_classes: cfg.num_classes,
        seed,
        ..Default::default()
    })
    .unwrap();
    ds.samples.into_iter().next().unwrap()
}

fn run_full(cfg: &MagcnConfig, params: &ParamSet, sample: &UtteranceSample) -> (Tape, ForwardTrace) {
    let mut tape = Tape::new();
    let b = params.bind(&mut tape);
    let mb = ModelBindings::bind(&b, cfg).unwrap();
    let flags = token_flags(cfg, &sample.tokens, &synthetic_lexicon());
    let trace = magcn_forward(&mut tape, &mb, cfg, sample, &flags).unwrap();
    (tape, trace)
}

#[test]
fn tower_without_sentiment_is_attention_over_fused() {
    let cfg = MagcnConfig {
        use_sentiment_embedding: false,
        ..tiny_config()
    };
    let params = init_params(&cfg, 4).unwrap();
    let mut tape = Tape::new();
    let b = params.bind(&mut tape);
    let mb = ModelBindings::bind(&b, &cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let h_l = tape.constant(Tensor::new(vec![3, 8], (0..24).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap());
    let h_v = tape.constant(Tensor::new(vec![3, 8], (0..24).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap());
    let empty = tape.constant(Tensor::zeros(&[3, 0]));
    let p = &mb.towers[0].1;
    let trace = inter_modality_forward(&mut tape, h_l, h_v, Some(empty), Modality::Vision, p).unwrap();
    assert_eq!(trace.with_sentiment, trace.fused);
    let direct = crate::attention::mha_self(&mut tape, trace.fused, &p.mha).unwrap();
    assert_eq!(tape.value(direct), tape.value(trace.out));
}

#[test]
fn tower_with_zero_weights_outputs_zero() {
    let cfg = tiny_config();
    let params = init_params(&cfg, 4).unwrap().zeros_like();
    let mut tape = Tape::new();
    let b = params.bind(&mut tape);
    let mb = ModelBindings::bind(&b, &cfg).unwrap();
    let h = tape.constant(Tensor::full(&[3, 8], 0.7));
    let s = tape.constant(Tensor::full(&[3, 2], -0.3));
    let trace = inter_modality_forward(&mut tape, h, h, Some(s), Modality::Vision, &mb.towers[0].1).unwrap();
    assert_eq!(tape.value(trace.out).max_abs(), 0.0);
    assert_eq!(tape.value(trace.out).shape(), &[3, 10]);
}

#[test]
fn tower_length_mismatch_is_an_alignment_error() {
    let cfg = tiny_config();
    let params = init_params(&cfg, 4).unwrap();
    let mut tape = Tape::new();
    let b = params.bind(&mut tape);
    let mb = ModelBindings::bind(&b, &cfg).unwrap();
    let h_l = tape.constant(Tensor::zeros(&[3, 8]));
    let h_v = tape.constant(Tensor::zeros(&[4, 8]));
    let err = inter_modality_forward(&mut tape, h_l, h_v, None, Modality::Vision, &mb.towers[0].1).unwrap_err();
    assert!(matches!(err, Error::Alignment { left: 3, right: 4 }));
}

#[test]
fn tower_hand_case_matches_composed_oracle() {
    // n = 2, d = 2, d_s = 1, two dense sublayers of width 1, one MHA head.
    let h_l: M = vec![vec![0.5, -1.0], vec![1.5, 0.25]];
    let h_v: M = vec![vec![-0.5, 2.0], vec![1.0, 0.5]];
    let s: M = vec![vec![0.3], vec![-0.2]];
    let wq: M = vec![vec![1.0, 0.5], vec![-0.5, 1.0]];
    let wk: M = vec![vec![0.2, 0.0], vec![0.3, -1.0]];
    let w1: M = vec![vec![0.7], vec![0.4]];
    let b1 = [0.1];
    let w2: M = vec![vec![0.3], vec![-0.6], vec![0.9]];
    let b2 = [0.2];
    let wl: M = vec![vec![1.0, -0.5], vec![0.5, 2.0]];
    let bl = [0.05, -0.1];
    let mq: M = vec![vec![0.4, 0.1, 0.0], vec![-0.3, 0.8, 0.2], vec![0.5, 0.0, 1.0]];
    let mk: M = vec![vec![1.0, 0.0, 0.3], vec![0.2, -0.4, 0.0], vec![0.0, 0.6, 0.7]];
    let mv: M = vec![vec![0.9, -0.2, 0.1], vec![0.0, 0.5, 0.3], vec![-0.4, 0.2, 1.1]];
    let mo: M = vec![vec![1.0, 0.2, 0.0], vec![0.0, 0.7, -0.3], vec![0.4, 0.0, 0.6]];

    let a = softmax(&scale(&mm(&mm(&h_l, &wq), &tr(&mm(&h_v, &wk))), 1.0 / 2f64.sqrt()));
    let h1 = relu_bias(&mm(&mm(&a, &h_v), &w1), &b1);
    let h2 = relu_bias(&mm(&mm(&a, &hcat(&h_v, &h1)), &w2), &b2);
    let fused = add_bias(&mm(&hcat(&h1, &h2), &wl), &bl);
    let hs = hcat(&fused, &s);
    let g = softmax(&scale(&mm(&mm(&hs, &mq), &tr(&mm(&hs, &mk))), 1.0 / 3f64.sqrt()));
    let expected = mm(&mm(&mm(&g, &hs), &mv), &mo);

    let mut tape = Tape::new();
    let leaf = |tape: &mut Tape, m: &M| tape.leaf(t(m));
    let vec_leaf = |tape: &mut Tape, v: &[f64]| tape.leaf(Tensor::vector(v.to_vec()));
    let p = TowerParams {
        affinity: AffinityParams {
            w_q: leaf(&mut tape, &wq),
            w_k: leaf(&mut tape, &wk),
        },
        gcn: GcnStack {
            dense: true,
            layers: vec![
                GcnLayer {
                    weight: leaf(&mut tape, &w1),
                    bias: vec_leaf(&mut tape, &b1),
                },
                GcnLayer {
                    weight: leaf(&mut tape, &w2),
                    bias: vec_leaf(&mut tape, &b2),
                },
            ],
        },
        gcn_out: Linear {
            weight: leaf(&mut tape, &wl),
            bias: vec_leaf(&mut tape, &bl),
        },
        mha: MhaParams {
            heads: HeadProjections {
                query: vec![leaf(&mut tape, &mq)],
                key: vec![leaf(&mut tape, &mk)],
            },
            value: vec![leaf(&mut tape, &mv)],
            output: leaf(&mut tape, &mo),
        },
        projection: None,
    };
    let hl = tape.constant(t(&h_l));
    let hv = tape.constant(t(&h_v));
    let sv = tape.constant(t(&s));
    let trace = inter_modality_forward(&mut tape, hl, hv, Some(sv), Modality::Vision, &p).unwrap();
    close(tape.value(trace.affinity), &a, 1e-12);
    close(tape.value(trace.fused), &fused, 1e-12);
    close(tape.value(trace.out), &expected, 1e-12);
}

fn language_blocks(cfg: &MagcnConfig, params: &ParamSet, tape: &mut Tape) -> Vec<LanguageBlock> {
    let b = params.bind(tape);
    ModelBindings::bind(&b, cfg).unwrap().blocks
}

#[test]
fn two_blocks_compose() {
    let cfg = MagcnConfig {
        blocks: 2,
        ..tiny_config()
    };
    let params = init_params(&cfg, 8).unwrap();
    let mut tape = Tape::new();
    let blocks = language_blocks(&cfg, &params, &mut tape);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let h = tape.constant(Tensor::new(vec![4, 8], (0..32).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap());
    let (both, graphs) = unimodal_language_forward(&mut tape, h, &blocks).unwrap();
    assert_eq!(graphs.len(), 2 * cfg.heads);
    let (first, _) = unimodal_language_forward(&mut tape, h, &blocks[..1]).unwrap();
    let (second, _) = unimodal_language_forward(&mut tape, first, &blocks[1..]).unwrap();
    assert_eq!(tape.value(both), tape.value(second));
}

#[test]
fn zero_language_input_is_driven_by_biases() {
    let cfg = tiny_config();
    let mut params = init_params(&cfg, 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (name, value) in params.iter_mut() {
        if name.ends_with("bias") {
            value.data_mut().iter_mut().for_each(|x| *x = rng.gen_range(-1.0..1.0));
        }
    }
    let mut tape = Tape::new();
    let blocks = language_blocks(&cfg, &params, &mut tape);
    let h = tape.constant(Tensor::zeros(&[3, 8]));
    let (out, graphs) = unimodal_language_forward(&mut tape, h, &blocks).unwrap();
    for g in graphs {
        assert!(tape.value(g).data().iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-15));
    }

    // Each stack sees a zero input, so each sublayer reduces to one row.
    let get = |n: &str| params.get(n).unwrap();
    let as_m = |t: &Tensor| -> M { (0..t.rows()).map(|r| t.row(r).to_vec()).collect() };
    let mut joined: Vec<f64> = Vec::new();
    for head in 0..cfg.heads {
        let prefix = format!("language.block0.gcn{head}");
        let b1 = get(&format!("{prefix}.l1.bias")).data().to_vec();
        let h1: Vec<f64> = b1.iter().map(|x| x.max(0.0)).collect();
        let mut g: Vec<f64> = vec![0.0; 8];
        g.extend(&h1);
        let w2 = as_m(get(&format!("{prefix}.l2.weight")));
        let b2 = get(&format!("{prefix}.l2.bias")).data().to_vec();
        let h2 = relu_bias(&mm(&vec![g], &w2), &b2);
        joined.extend(&h1);
        joined.extend(&h2[0]);
    }
    let w_out = as_m(get("language.block0.out.weight"));
    let b_out = get("language.block0.out.bias").data().to_vec();
    let row = add_bias(&mm(&vec![joined], &w_out), &b_out).remove(0);
    close(tape.value(out), &vec![row.clone(), row.clone(), row], 1e-12);
}

#[test]
fn consistency_hand_case() {
    let mut tape = Tape::new();
    let l = tape.constant(Tensor::from_rows(&[vec![2.0]]).unwrap());
    let v = tape.constant(Tensor::from_rows(&[vec![3.0]]).unwrap());
    let a = tape.constant(Tensor::from_rows(&[vec![-0.5]]).unwrap());
    let lc = consistency_loss(&mut tape, l, v, a).unwrap();
    assert!((tape.value(lc).item() - 4.0).abs() < 1e-12);
}

#[test]
fn consistency_is_zero_for_coinciding_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut tape = Tape::new();
    let l = tape.constant(Tensor::new(vec![4, 5], (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap());
    let v = tape.constant(Tensor::new(vec![4, 5], (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap());
    let lc = consistency_loss(&mut tape, l, v, v).unwrap();
    assert_eq!(tape.value(lc).item(), 0.0);
}

#[test]
fn consistency_shape_mismatch_is_rejected() {
    let mut tape = Tape::new();
    let l = tape.constant(Tensor::zeros(&[2, 3]));
    let v = tape.constant(Tensor::zeros(&[2, 3]));
    let a = tape.constant(Tensor::zeros(&[2, 4]));
    assert!(matches!(
        consistency_loss(&mut tape, l, v, a),
        Err(Error::Dimension { .. })
    ));
}

proptest! {
    #[test]
    fn consistency_is_nonnegative_and_scale_invariant(
        seed in any::<u64>(),
        n in 1usize..5,
        w in 1usize..5,
        lambdas in prop::collection::vec(0.01f64..100.0, 12),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = || Tensor::new(vec![n, w], (0..n * w).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
        let inputs = [draw(), draw(), draw()];
        let eval = |xs: &[Tensor; 3]| {
            let mut tape = Tape::new();
            let v: Vec<Var> = xs.iter().map(|x| tape.constant(x.clone())).collect();
            let lc = consistency_loss(&mut tape, v[0], v[1], v[2]).unwrap();
            tape.value(lc).item()
        };
        let base = eval(&inputs);
        prop_assert!(base >= 0.0);
        let mut scaled = inputs.clone();
        for (k, x) in scaled.iter_mut().enumerate() {
            let cols = x.cols();
            for (i, v) in x.data_mut().iter_mut().enumerate() {
                *v *= lambdas[(k * 4 + i / cols) % 12];
            }
        }
        prop_assert!((eval(&scaled) - base).abs() <= 1e-9 * base.max(1.0));
    }
}

#[test]
fn zero_head_predicts_uniform() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0]]).unwrap());
    let head = Linear {
        weight: tape.leaf(Tensor::zeros(&[2, 3])),
        bias: tape.leaf(Tensor::zeros(&[3])),
    };
    let p = predict(&mut tape, &[x], &head).unwrap();
    assert!(tape.value(p.probs).data().iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
}

#[test]
fn single_row_pooling_is_identity() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::from_rows(&[vec![1.0, -2.0]]).unwrap());
    let y = tape.constant(Tensor::from_rows(&[vec![0.25]]).unwrap());
    let head = Linear {
        weight: tape.leaf(Tensor::zeros(&[3, 2])),
        bias: tape.leaf(Tensor::zeros(&[2])),
    };
    let p = predict(&mut tape, &[x, y], &head).unwrap();
    assert_eq!(tape.value(p.pooled).data(), &[1.0, -2.0, 0.25]);
}

#[test]
fn two_class_head_hand_case() {
    // Pooled row = [1, 0]; logits = [1·2 + 0.5, 1·(-1) + 0] = [2.5, -1].
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::from_rows(&[vec![2.0, 1.0], vec![0.0, -1.0]]).unwrap());
    let head = Linear {
        weight: tape.leaf(Tensor::from_rows(&[vec![2.0, -1.0], vec![3.0, 7.0]]).unwrap()),
        bias: tape.leaf(Tensor::vector(vec![0.5, 0.0])),
    };
    let p = predict(&mut tape, &[x], &head).unwrap();
    let z = (2.5f64).exp() + (-1.0f64).exp();
    let probs = tape.value(p.probs).data();
    assert!((probs[0] - 2.5f64.exp() / z).abs() < 1e-15);
    assert!((probs[1] - (-1.0f64).exp() / z).abs() < 1e-15);
}

#[test]
fn total_loss_examples() {
    assert_eq!(total_loss(&[1.0, 0.0], &[1.0, 0.0], 0.7, 1.0, 0.0).unwrap(), 0.0);
    assert_eq!(total_loss(&[1.0, 0.0], &[0.0, 1.0], 0.7, 0.0, 2.0).unwrap(), 1.4);
    let v = total_loss(&[0.5, 0.0], &[0.0, 1.5], 0.25, 1.0, 2.0).unwrap();
    assert!((v - 1.5).abs() < 1e-15);
    assert!(matches!(total_loss(&[], &[], 0.0, 1.0, 1.0), Err(Error::Contract(_))));
}

#[test]
fn zero_parameters_give_uniform_probs_and_no_consistency() {
    let cfg = tiny_config();
    let params = init_params(&cfg, 1).unwrap().zeros_like();
    let sample = sample_for(&cfg, 4, 2);
    let (tape, trace) = run_full(&cfg, &params, &sample);
    assert!(tape.value(trace.probs).data().iter().all(|p| (p - 0.5).abs() < 1e-15));
    assert_eq!(tape.value(trace.consistency.unwrap()).item(), 0.0);
}

#[test]
fn language_only_skips_towers() {
    let cfg = MagcnConfig {
        modalities: "L".parse().unwrap(),
        ..tiny_config()
    };
    let params = init_params(&cfg, 1).unwrap();
    assert!(!params.iter().any(|(n, _)| n.starts_with("tower.")));
    let (tape, trace) = run_full(&cfg, &params, &sample_for(&cfg, 4, 2));
    assert!(trace.tower_v.is_none() && trace.tower_a.is_none() && trace.consistency.is_none());
    assert_eq!(tape.value(trace.pooled).shape(), &[1, cfg.d]);
}

#[test]
fn acoustic_vision_pair_routes_vision_as_primary() {
    let cfg = MagcnConfig {
        modalities: "A+V".parse().unwrap(),
        ..tiny_config()
    };
    let params = init_params(&cfg, 1).unwrap();
    let (tape, trace) = run_full(&cfg, &params, &sample_for(&cfg, 4, 2));
    assert_eq!(trace.primary, Modality::Vision);
    assert!(trace.tower_v.is_none());
    assert_eq!(trace.tower_a.unwrap().partner, Modality::Acoustic);
    assert!(trace.sentiment.is_none() && trace.h_l.is_none());
    assert_eq!(tape.value(trace.pooled).shape(), &[1, 2 * cfg.d]);
}

#[test]
fn disabled_sentiment_leaves_table_without_gradient() {
    let cfg = MagcnConfig {
        use_sentiment_embedding: false,
        ..tiny_config()
    };
    let params = init_params(&cfg, 1).unwrap();
    assert!(params.contains(SENTIMENT_TABLE));
    let sample = sample_for(&cfg, 4, 2);
    let mut tape = Tape::new();
    let b = params.bind(&mut tape);
    let mb = ModelBindings::bind(&b, &cfg).unwrap();
    let flags = token_flags(&cfg, &sample.tokens, &synthetic_lexicon());
    let trace = magcn_forward(&mut tape, &mb, &cfg, &sample, &flags).unwrap();
    let obj = sample_objective(&mut tape, &cfg, &trace, sample.label).unwrap();
    tape.backward(obj.total).unwrap();
    let grads = params.gradients(&tape, &b);
    assert_eq!(grads.get(SENTIMENT_TABLE).unwrap().max_abs(), 0.0);
    assert!(grads.get("head.weight").unwrap().max_abs() > 0.0);
}

#[test]
fn vanilla_gcn_keeps_every_shape() {
    for dense in [true, false] {
        let cfg = MagcnConfig {
            use_dense_gcn: dense,
            ..tiny_config()
        };
        let params = init_params(&cfg, 6).unwrap();
        let (tape, trace) = run_full(&cfg, &params, &sample_for(&cfg, 5, 1));
        assert_eq!(tape.value(trace.h_l_out).shape(), &[5, 8]);
        for tower in trace.towers() {
            assert_eq!(tape.value(tower.fused).shape(), &[5, 8]);
            assert_eq!(tape.value(tower.out).shape(), &[5, 10]);
            assert_eq!(tape.value(tower.projected.unwrap()).shape(), &[5, 8]);
        }
        assert_eq!(tape.value(trace.probs).shape(), &[1, 2]);
        assert!((tape.value(trace.probs).data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn encoder_rejects_wrong_width() {
    let cfg = tiny_config();
    let params = init_params(&cfg, 1).unwrap();
    let mut sample = sample_for(&cfg, 3, 1);
    sample.vision = Tensor::zeros(&[3, 5]);
    let mut tape = Tape::new();
    let b = params.bind(&mut tape);
    let mb = ModelBindings::bind(&b, &cfg).unwrap();
    let flags = token_flags(&cfg, &sample.tokens, &synthetic_lexicon());
    assert!(matches!(
        magcn_forward(&mut tape, &mb, &cfg, &sample, &flags),
        Err(Error::Validation(_))
    ));
}

fn probs_with_encoded(cfg: &MagcnConfig, params: &ParamSet, hs: &[Tensor; 4]) -> Tensor {
    let mut tape = Tape::new();
    let b = params.bind(&mut tape);
    let mb = ModelBindings::bind(&b, cfg).unwrap();
    let enc = Encoded {
        language: Some(tape.constant(hs[0].clone())),
        vision: Some(tape.constant(hs[1].clone())),
        acoustic: Some(tape.constant(hs[2].clone())),
        sentiment: Some(tape.constant(hs[3].clone())),
    };
    let trace = forward_encoded(&mut tape, &mb, cfg, &enc).unwrap();
    tape.value(trace.probs).clone()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn probs_are_a_distribution(seed in any::<u64>(), gain in 0.1f64..20.0) {
        let cfg = tiny_config();
        let mut params = init_params(&cfg, seed).unwrap();
        for (_, v) in params.iter_mut() {
            v.data_mut().iter_mut().for_each(|x| *x *= gain);
        }
        let (tape, trace) = run_full(&cfg, &params, &sample_for(&cfg, 3, seed));
        let probs = tape.value(trace.probs).data();
        prop_assert!(probs.iter().all(|p| *p >= 0.0));
        prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn joint_row_permutation_leaves_probs_unchanged(seed in any::<u64>(), perm in Just((0..5).collect::<Vec<usize>>()).prop_shuffle()) {
        let cfg = tiny_config();
        let params = init_params(&cfg, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |w: usize| Tensor::new(vec![5, w], (0..5 * w).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let hs = [draw(8), draw(8), draw(8), draw(2)];
        let permuted = hs.clone().map(|h| h.permute_rows(&perm).unwrap());
        let a = probs_with_encoded(&cfg, &params, &hs);
        let b = probs_with_encoded(&cfg, &params, &permuted);
        prop_assert!(a.max_abs_diff(&b) < 1e-12);
    }
}

#[test]
fn full_model_gradcheck() {
    let cfg = tiny_config();
    let params = init_params(&cfg, 11).unwrap();
    let sample = sample_for(&cfg, 4, 5);
    let flags = token_flags(&cfg, &sample.tokens, &synthetic_lexicon());
    let report = gradcheck(
        |tape, b| {
            let mb = ModelBindings::bind(b, &cfg)?;
            let trace = magcn_forward(tape, &mb, &cfg, &sample, &flags)?;
            Ok(sample_objective(tape, &cfg, &trace, sample.label)?.total)
        },
        &params,
        1e-5,
        1e-4,
    )
    .unwrap();
    assert!(report.passed(), "worst {:?}", report.failures().collect::<Vec<_>>());
}

#[test]
fn cross_entropy_objective_gradcheck() {
    let cfg = MagcnConfig {
        loss: LossKind::CrossEntropy,
        ..tiny_config()
    };
    let params = init_params(&cfg, 12).unwrap();
    let sample = sample_for(&cfg, 3, 6);
    let flags = token_flags(&cfg, &sample.tokens, &synthetic_lexicon());
    let report = gradcheck(
        |tape, b| {
            let mb = ModelBindings::bind(b, &cfg)?;
            let trace = magcn_forward(tape, &mb, &cfg, &sample, &flags)?;
            Ok(sample_objective(tape, &cfg, &trace, sample.label)?.total)
        },
        &params,
        1e-5,
        1e-4,
    )
    .unwrap();
    assert!(report.passed(), "worst {:?}", report.failures().collect::<Vec<_>>());
}
