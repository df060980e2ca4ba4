use nmt_core::model::layers::{
    AverageAttn, Builder, CrossAttn, Ctx, Linear, MultiHeadAttn, PositionwiseFF, ResidueCombiner, SelfAttn,
};
use nmt_core::model::{Model, ModelConfig, TokenBatch, Variant};
use nmt_tensor::{ParamStore, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn small_cfg(variant: Variant) -> ModelConfig {
    ModelConfig::new(13, 11, 8, 3, 12, 2).with_variant(variant)
}

fn random_batch(rows: usize, cols: usize, vocab: u32, rng: &mut ChaCha8Rng, first: Option<u32>) -> TokenBatch {
    let data = (0..rows * cols)
        .map(|i| match first {
            Some(f) if i % cols == 0 => f,
            _ => rng.random_range(4..vocab),
        })
        .collect();
    TokenBatch::new(data, rows, cols).unwrap()
}

/// Per-head attention computed with explicit loops.
fn naive_mha(store: &ParamStore<f64>, m: &MultiHeadAttn, q: &Tensor<f64>, kv: &Tensor<f64>) -> Vec<f64> {
    let lin = |l: &Linear, x: &[f64]| -> Vec<f64> {
        let w = store.get(l.w).data();
        let b = store.get(l.b.unwrap()).data();
        (0..l.fan_out)
            .map(|j| b[j] + (0..l.fan_in).map(|i| x[i] * w[i * l.fan_out + j]).sum::<f64>())
            .collect()
    };
    let (bsz, tq, d) = (q.shape()[0], q.shape()[1], q.shape()[2]);
    let tk = kv.shape()[1];
    let hs = m.q.fan_out;
    let dh = hs / m.nhead;
    let row = |t: &Tensor<f64>, b: usize, i: usize, n: usize| t.data()[(b * n + i) * d..(b * n + i + 1) * d].to_vec();
    let mut out = Vec::new();
    for b in 0..bsz {
        let ks: Vec<Vec<f64>> = (0..tk).map(|j| lin(&m.k, &row(kv, b, j, tk))).collect();
        let vs: Vec<Vec<f64>> = (0..tk).map(|j| lin(&m.v, &row(kv, b, j, tk))).collect();
        for i in 0..tq {
            let qi = lin(&m.q, &row(q, b, i, tq));
            let mut concat = vec![0.0; hs];
            for h in 0..m.nhead {
                let r = h * dh..(h + 1) * dh;
                let scores: Vec<f64> = ks
                    .iter()
                    .map(|k| qi[r.clone()].iter().zip(&k[r.clone()]).map(|(a, b)| a * b).sum::<f64>() / (dh as f64).sqrt())
                    .collect();
                let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
                let z: f64 = e.iter().sum();
                for (j, v) in vs.iter().enumerate() {
                    for c in r.clone() {
                        concat[c] += e[j] / z * v[c];
                    }
                }
            }
            out.extend(lin(&m.o, &concat));
        }
    }
    out
}

#[test]
fn multi_head_matches_naive_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::<f64>::new();
    let m = MultiHeadAttn::new(&mut Builder::new(&mut store, 4), "mha", 6, 8, 2, 0.0).unwrap();
    let q = rand_tensor(&[2, 3, 6], &mut rng);
    let kv = rand_tensor(&[2, 5, 6], &mut rng);
    let tape = Tape::new(false, 0);
    let cx = Ctx::new(&tape, &store);
    let got = m
        .forward(&cx, tape.constant(q.clone()), tape.constant(kv.clone()), tape.constant(kv.clone()), None)
        .unwrap();
    let want = naive_mha(&store, &m, &q, &kv);
    for (a, b) in got.value().data().iter().zip(&want) {
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }
}

#[test]
fn single_key_returns_value_and_mask_zeroes_weight() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let tape = Tape::<f64>::new(false, 0);
    let q = tape.constant(rand_tensor(&[1, 2, 4], &mut rng));
    let v = rand_tensor(&[1, 1, 4], &mut rng);
    let out = nmt_core::model::layers::attend(q, tape.constant(v.clone()), tape.constant(v.clone()), 1, None, 0.0).unwrap();
    assert_eq!(&out.value().data()[..4], v.data());
    assert_eq!(&out.value().data()[4..], v.data());

    // hiding key 1 makes the output independent of value 1
    let k = tape.constant(rand_tensor(&[1, 2, 4], &mut rng));
    let mut v2 = rand_tensor(&[1, 2, 4], &mut rng);
    let mask = Tensor::from_vec(vec![0.0, f64::NEG_INFINITY]).reshape(&[1, 2]).unwrap();
    let a = nmt_core::model::layers::attend(q, k, tape.constant(v2.clone()), 2, Some(tape.constant(mask.clone())), 0.0)
        .unwrap();
    v2.data_mut()[4..].iter_mut().for_each(|x| *x += 10.0);
    let b = nmt_core::model::layers::attend(q, k, tape.constant(v2), 2, Some(tape.constant(mask)), 0.0).unwrap();
    assert_eq!(a.value().data(), b.value().data());
}

#[test]
fn fused_self_attention_equals_separate_projections() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::<f64>::new();
    let (sa, mha) = {
        let mut bd = Builder::new(&mut store, 9);
        (
            SelfAttn::new(&mut bd, "sa", 6, 8, 2, 0.0).unwrap(),
            MultiHeadAttn::new(&mut bd, "mha", 6, 8, 2, 0.0).unwrap(),
        )
    };
    // copy the fused weights into the separate projections
    let w = store.get(sa.qkv.w).clone();
    let b = store.get(sa.qkv.b.unwrap()).clone();
    for (i, lin) in [&mha.q, &mha.k, &mha.v].into_iter().enumerate() {
        store.set(lin.w, w.narrow(1, 8 * i, 8).unwrap()).unwrap();
        store.set(lin.b.unwrap(), b.narrow(0, 8 * i, 8).unwrap()).unwrap();
    }
    store.set(mha.o.w, store.get(sa.o.w).clone()).unwrap();
    store.set(mha.o.b.unwrap(), store.get(sa.o.b.unwrap()).clone()).unwrap();
    let x = rand_tensor(&[2, 4, 6], &mut rng);
    let tape = Tape::new(false, 0);
    let cx = Ctx::new(&tape, &store);
    let xv = tape.constant(x);
    let a = sa.forward(&cx, xv, None).unwrap().value();
    let m = mha.forward(&cx, xv, xv, xv, None).unwrap().value();
    assert!(a.max_abs_diff(&m) < 1e-6);
}

#[test]
fn cross_attention_cached_memory_matches() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::<f64>::new();
    let ca = CrossAttn::new(&mut Builder::new(&mut store, 1), "ca", 6, 6, 3, 0.0).unwrap();
    let tape = Tape::new(false, 0);
    let cx = Ctx::new(&tape, &store);
    let mem = tape.constant(rand_tensor(&[1, 5, 6], &mut rng));
    let x = tape.constant(rand_tensor(&[1, 2, 6], &mut rng));
    let (k, v) = ca.memory(&cx, mem).unwrap();
    let full = ca.forward(&cx, x, k, v, None).unwrap().value();
    let (kc, vc) = ((*k.value()).clone(), (*v.value()).clone());
    let cached = ca.forward(&cx, x, tape.constant(kc), tape.constant(vc), None).unwrap().value();
    assert!(full.max_abs_diff(&cached) < 1e-6);
}

#[test]
fn feed_forward_with_zero_output_weights_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::<f64>::new();
    let ff = PositionwiseFF::new(&mut Builder::new(&mut store, 1), "ff", 4, 7, 0.0).unwrap();
    store.set(ff.w2.w, Tensor::zeros(&[7, 4])).unwrap();
    let tape = Tape::new(false, 0);
    let cx = Ctx::new(&tape, &store);
    let x = rand_tensor(&[2, 3, 4], &mut rng);
    let y = ff.forward(&cx, tape.constant(x.clone())).unwrap();
    assert_eq!(y.value().shape(), x.shape());
    assert_eq!(y.value().data(), x.data());
}

#[test]
fn average_attention_incremental_matches_full() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut store = ParamStore::<f64>::new();
    let avg = AverageAttn::new(&mut Builder::new(&mut store, 3), "avg", 4, 6).unwrap();
    let y = rand_tensor(&[2, 5, 4], &mut rng);
    let tape = Tape::new(false, 0);
    let cx = Ctx::new(&tape, &store);
    let full = avg.forward(&cx, tape.constant(y.clone())).unwrap().value();
    let mut sum = None;
    for t in 0..5 {
        let yt = y.narrow(1, t, 1).unwrap();
        let (out, s) = avg.step(&cx, tape.constant(yt), sum.as_ref(), t + 1).unwrap();
        sum = Some(s);
        assert!(out.value().max_abs_diff(&full.narrow(1, t, 1).unwrap()) < 1e-6);
    }
    assert!(avg.step(&cx, tape.constant(Tensor::zeros(&[1, 1, 4])), None, 0).is_err());
}

#[test]
fn combiner_residual_path_and_order_sensitivity() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut store = ParamStore::<f64>::new();
    let c = ResidueCombiner::new(&mut Builder::new(&mut store, 2), "c", 3, 4, 5).unwrap();
    let xs: Vec<Tensor<f64>> = (0..3).map(|_| rand_tensor(&[2, 4], &mut rng)).collect();
    let tape = Tape::new(false, 0);
    {
        let cx = Ctx::new(&tape, &store);
        let vs: Vec<_> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        let out = c.forward(&cx, &vs).unwrap();
        assert_eq!(out.value().shape(), &[2, 4]);
        let rev: Vec<_> = vs.iter().rev().copied().collect();
        assert!(c.forward(&cx, &rev).unwrap().value().max_abs_diff(&out.value()) > 1e-6);
        assert!(c.forward(&cx, &vs[..2]).is_err());
    }
    store.set(c.w2.w, Tensor::zeros(&[5, 4])).unwrap();
    let cx = Ctx::new(&tape, &store);
    let vs: Vec<_> = xs.iter().map(|x| tape.constant(x.clone())).collect();
    let out = c.forward(&cx, &vs).unwrap().value();
    let sum = xs[0].add(&xs[1]).unwrap().add(&xs[2]).unwrap();
    let (g, b) = (tape.constant(Tensor::ones(&[4])), tape.constant(Tensor::zeros(&[4])));
    let ln = tape.constant(sum).layer_norm(g, b, nmt_core::model::layers::LN_EPS).unwrap().value();
    assert!(out.max_abs_diff(&ln) < 1e-12);
}

#[test]
fn noise_statistics() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = rand_tensor(&[100_000], &mut rng);
    let rms = (x.data().iter().map(|v| v * v).sum::<f64>() / x.numel() as f64).sqrt();
    let tape = Tape::new(true, 11);
    let y = tape.constant(x.clone()).noise(0.1).unwrap().value();
    let d: Vec<f64> = y.data().iter().zip(x.data()).map(|(a, b)| a - b).collect();
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    let std = (d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d.len() as f64).sqrt();
    assert!((std - 0.1 * rms).abs() < 0.05 * 0.1 * rms);
    let eval = Tape::new(false, 11);
    assert_eq!(eval.constant(x.clone()).noise(0.1).unwrap().value().data(), x.data());
}

#[test]
fn encoder_shapes_masking_and_layers() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for variant in Variant::ALL {
        let model = Model::<f64>::new(small_cfg(variant), 5).unwrap();
        let mut src = random_batch(2, 5, 13, &mut rng, None);
        src.data[4] = 0;
        src.data[3] = 0;
        let tape = Tape::new(false, 0);
        let cx = Ctx::new(&tape, model.store());
        let enc = model.encode(&cx, &src).unwrap();
        assert_eq!(enc.final_out.shape(), vec![2, 5, 8]);
        assert!(enc.final_out.value().all_finite());
        assert_eq!(enc.per_layer.as_ref().map(Vec::len), (variant == Variant::Transparent).then_some(4));

        // perturbing the pad row of the embedding leaves unmasked positions unchanged
        let mut perturbed = Model::<f64>::new(small_cfg(variant), 5).unwrap();
        let (emb, _, _) = perturbed.embedding_ids();
        perturbed.store_mut().get_mut(emb).data_mut()[..8].iter_mut().for_each(|v| *v += 3.0);
        let tape2 = Tape::new(false, 0);
        let cx2 = Ctx::new(&tape2, perturbed.store());
        let enc2 = perturbed.encode(&cx2, &src).unwrap();
        let (a, b) = (enc.final_out.value(), enc2.final_out.value());
        for pos in [0usize, 1, 2, 5, 6, 7, 8, 9] {
            let r = pos * 8..(pos + 1) * 8;
            for (x, y) in a.data()[r.clone()].iter().zip(&b.data()[r]) {
                assert!((x - y).abs() < 1e-12, "{variant:?} position {pos}");
            }
        }
        assert!(model.encode(&cx, &TokenBatch::new(vec![], 1, 0).unwrap()).is_err());
    }
}

#[test]
fn decoder_is_causal_for_every_variant() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for variant in Variant::ALL {
        let model = Model::<f64>::new(small_cfg(variant), 6).unwrap();
        let src = random_batch(2, 4, 13, &mut rng, None);
        let tgt = random_batch(2, 5, 11, &mut rng, Some(1));
        let mut tgt2 = tgt.clone();
        tgt2.data[3] = if tgt2.data[3] == 4 { 5 } else { 4 };
        tgt2.data[8] = if tgt2.data[8] == 4 { 5 } else { 4 };
        let tape = Tape::new(false, 0);
        let cx = Ctx::new(&tape, model.store());
        let a = model.forward(&cx, &src, &tgt).unwrap().value();
        let b = model.forward(&cx, &src, &tgt2).unwrap().value();
        assert_eq!(a.shape(), &[2, 5, 11]);
        assert!(a.all_finite());
        // row 0 changed at position 3, row 1 at position 3 as well (8 = 5 + 3)
        for row in 0..2 {
            for p in 0..5 {
                let r = (row * 5 + p) * 11..(row * 5 + p + 1) * 11;
                let same = a.data()[r.clone()] == b.data()[r];
                assert_eq!(same, p < 3, "{variant:?} row {row} position {p}");
            }
        }
    }
}

#[test]
fn incremental_decoding_matches_forward_for_every_variant() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for variant in Variant::ALL {
        let model = Model::<f32>::new(small_cfg(variant), 7).unwrap();
        let mut src = random_batch(3, 6, 13, &mut rng, None);
        src.data[5] = 0;
        let tgt = random_batch(3, 7, 11, &mut rng, Some(1));
        let tape = Tape::inference();
        let cx = Ctx::new(&tape, model.store());
        let full = model.forward(&cx, &src, &tgt).unwrap().value();
        let mut state = model.start(&src).unwrap();
        for t in 0..7 {
            let last: Vec<u32> = (0..3).map(|r| tgt.row(r)[t]).collect();
            let step = model.decode_step(&mut state, &last).unwrap();
            for r in 0..3 {
                let want = full.narrow(0, r, 1).unwrap().narrow(1, t, 1).unwrap();
                let got = step.narrow(0, r, 1).unwrap();
                assert!(
                    got.data().iter().zip(want.data()).all(|(a, b)| (a - b).abs() <= 1e-5),
                    "{variant:?} step {t}"
                );
            }
        }
        assert!(model.decode_step(&mut state, &[1]).is_err());
    }
}

#[test]
fn average_attention_state_is_constant_size() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let src = random_batch(1, 4, 13, &mut rng, None);
    let size_at = |variant: Variant, steps: usize| {
        let mut cfg = small_cfg(variant);
        cfg.cache_len = 8;
        let model = Model::<f32>::new(cfg, 1).unwrap();
        let mut st = model.start(&src).unwrap();
        for _ in 0..steps {
            model.decode_step(&mut st, &[5]).unwrap();
        }
        st.byte_size()
    };
    assert_eq!(size_at(Variant::AvgAttn, 1), size_at(Variant::AvgAttn, 128));
    let (s1, s2, s128) = (size_at(Variant::Standard, 1), size_at(Variant::Standard, 2), size_at(Variant::Standard, 128));
    assert_eq!(s128 - s1, 127 * (s2 - s1));
    assert!(s2 > s1);
}

#[test]
fn tying_shares_storage_and_reduces_parameters() {
    let mut cfg = ModelConfig::new(12, 12, 8, 1, 8, 2);
    let tied = Model::<f32>::new(cfg.clone(), 1).unwrap();
    cfg.bind_decoder_emb = false;
    let untied = Model::<f32>::new(cfg.clone(), 1).unwrap();
    assert_eq!(untied.param_count() - tied.param_count(), 12 * 8);
    cfg.bind_decoder_emb = true;
    cfg.share_emb = true;
    let shared = Model::<f32>::new(cfg.clone(), 1).unwrap();
    assert_eq!(tied.param_count() - shared.param_count(), 12 * 8);
    assert_eq!(Model::<f32>::new(cfg, 1).unwrap().param_count(), shared.param_count());

    // mutating the decoder embedding changes the classifier
    let mut m = Model::<f32>::new(ModelConfig::new(12, 12, 8, 1, 8, 2), 1).unwrap();
    let (_, tgt, cls) = m.embedding_ids();
    assert_eq!(tgt, cls);
    m.store_mut().get_mut(tgt).data_mut()[0] = 42.0;
    assert_eq!(m.store().get(cls).data()[0], 42.0);

    let (src, tgt, _) = shared.embedding_ids();
    assert_eq!(src, tgt);
}

#[test]
fn initialization_is_deterministic() {
    let a = Model::<f32>::new(small_cfg(Variant::Standard), 3).unwrap();
    let b = Model::<f32>::new(small_cfg(Variant::Standard), 3).unwrap();
    let c = Model::<f32>::new(small_cfg(Variant::Standard), 4).unwrap();
    let same = |x: &Model<f32>, y: &Model<f32>| x.store().named().zip(y.store().named()).all(|(p, q)| p == q);
    assert!(same(&a, &b));
    assert!(!same(&a, &c));
}
