//! Central finite differences against autodiff over every parameter of each
//! full model variant, in f64.

use nmt_core::model::layers::Ctx;
use nmt_core::model::{Model, ModelConfig, TokenBatch, Variant};
use nmt_core::train::label_smoothing_loss;
use nmt_tensor::Tape;

const H: f64 = 1e-5;

fn loss(model: &Model<f64>, src: &TokenBatch, tgt_in: &TokenBatch, tgt_out: &TokenBatch) -> f64 {
    let tape = Tape::new(true, 3);
    let cx = Ctx::new(&tape, model.store());
    let logits = model.forward(&cx, src, tgt_in).unwrap();
    label_smoothing_loss(logits, tgt_out, 0.1, &[0, 1]).unwrap().sum.value().item()
}

fn worst_relative_error(variant: Variant) -> (f64, usize) {
    let cfg = ModelConfig::new(9, 8, 8, 3, 10, 2).with_variant(variant);
    let mut model = Model::<f64>::new(cfg, 41).unwrap();
    let src = TokenBatch::new(vec![4, 5, 6, 7, 8, 4, 6, 0], 2, 4).unwrap();
    let tgt_in = TokenBatch::new(vec![1, 4, 5, 1, 7, 0], 2, 3).unwrap();
    let tgt_out = TokenBatch::new(vec![4, 5, 2, 7, 2, 0], 2, 3).unwrap();

    let tape = Tape::new(true, 3);
    let sum = {
        let cx = Ctx::new(&tape, model.store());
        let logits = model.forward(&cx, &src, &tgt_in).unwrap();
        label_smoothing_loss(logits, &tgt_out, 0.1, &[0, 1]).unwrap().sum
    };
    model.store_mut().zero_grad();
    tape.backward_into(sum, model.store_mut()).unwrap();

    let ids: Vec<_> = model.store().ids().collect();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for id in ids {
        let n = model.store().get(id).numel();
        let analytic = model.store().grad(id).map(|g| g.data().to_vec()).unwrap_or_else(|| vec![0.0; n]);
        for (i, &a) in analytic.iter().enumerate() {
            let orig = model.store().get(id).data()[i];
            model.store_mut().get_mut(id).data_mut()[i] = orig + H;
            let up = loss(&model, &src, &tgt_in, &tgt_out);
            model.store_mut().get_mut(id).data_mut()[i] = orig - H;
            let down = loss(&model, &src, &tgt_in, &tgt_out);
            model.store_mut().get_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * H);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
            checked += 1;
        }
    }
    (worst, checked)
}

#[test]
fn full_model_gradients_match_finite_differences() {
    for v in Variant::ALL {
        let (err, n) = worst_relative_error(v);
        assert!(n > 500, "{} checked only {n} entries", v.name());
        assert!(err < 1e-3, "{}: max relative error {err}", v.name());
    }
}
