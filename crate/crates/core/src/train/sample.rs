use nmt_corpus::epoch_order;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Batch-unit schedule for one epoch.
///
/// Without sampling (`dss_ws == dss_rm == 0`), or in the first epoch, this
/// is [`epoch_order`]. Otherwise a `dss_ws` share of the `n` slots is drawn
/// without replacement with probability proportional to each unit's last
/// loss, the remaining slots are drawn uniformly without replacement from
/// all units, and the main part is shuffled. Finally the `dss_rm` share of
/// units with the highest loss is appended again for review.
pub fn dynamic_sample(unit_losses: &[f64], dss_ws: f64, dss_rm: f64, epoch: usize, seed: u64) -> Vec<usize> {
    let n = unit_losses.len();
    if epoch <= 1 || (dss_ws == 0.0 && dss_rm == 0.0) {
        return epoch_order(epoch, n, seed);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5a5a_5a5a_5a5a_5a5a);
    rng.set_stream(epoch as u64);

    let n_weighted = ((dss_ws * n as f64).round() as usize).min(n);
    let all_zero = unit_losses.iter().all(|&l| l <= 0.0 || !l.is_finite());
    // weighted sampling without replacement: keep the largest ln(u) / w
    let mut keyed: Vec<(f64, usize)> = unit_losses
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            let w = if all_zero { 1.0 } else if l > 0.0 && l.is_finite() { l } else { 0.0 };
            let key = if w > 0.0 { u.ln() / w } else { f64::NEG_INFINITY };
            (key, i)
        })
        .collect();
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut main: Vec<usize> = keyed[..n_weighted].iter().map(|&(_, i)| i).collect();

    let mut pool: Vec<usize> = (0..n).collect();
    pool.shuffle(&mut rng);
    main.extend_from_slice(&pool[..n - n_weighted]);
    main.shuffle(&mut rng);

    let n_review = ((dss_rm * n as f64).round() as usize).min(n);
    let mut by_loss: Vec<usize> = (0..n).collect();
    by_loss.sort_by(|&a, &b| unit_losses[b].total_cmp(&unit_losses[a]).then(a.cmp(&b)));
    main.extend_from_slice(&by_loss[..n_review]);
    main
}
