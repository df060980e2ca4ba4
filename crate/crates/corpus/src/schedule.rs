use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Batch visiting order for a 1-based `epoch`. The first epoch walks the
/// length-sorted batches in order; later epochs shuffle deterministically
/// from `(seed, epoch)`.
pub fn epoch_order(epoch: usize, n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if epoch > 1 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
    }
    order
}
