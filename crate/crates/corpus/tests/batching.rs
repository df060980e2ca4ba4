use nmt_corpus::{epoch_order, read_dataset, sort_and_batch, write_dataset, DatasetReader, EncodedPair, EOS, PAD, SOS};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_pairs(n: usize, seed: u64) -> Vec<EncodedPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let s = rng.random_range(1..40);
            let t = rng.random_range(1..40);
            EncodedPair::new(
                (0..s).map(|_| rng.random_range(4..500)).collect(),
                (0..t).map(|_| rng.random_range(4..500)).collect(),
            )
        })
        .collect()
}

#[test]
fn thousand_pairs_batching_invariants() {
    let pairs = random_pairs(1000, 5);
    let (budget, max_len) = (512, 32);
    let batches = sort_and_batch(&pairs, budget, max_len).unwrap();
    let survivors: Vec<&EncodedPair> = pairs
        .iter()
        .filter(|p| p.src.len() <= max_len && p.tgt.len() <= max_len)
        .collect();
    assert_eq!(batches.iter().map(|b| b.rows).sum::<usize>(), survivors.len());
    for b in &batches {
        b.validate().unwrap();
        assert!(b.rows * b.src_cols <= budget && b.rows * b.tgt_cols <= budget);
    }
    // epoch 1 walks batches in the stored order, which is ascending by length
    let order = epoch_order(1, batches.len(), 3);
    let keys: Vec<(usize, usize)> = order
        .iter()
        .flat_map(|&i| batches[i].pairs())
        .map(|p| (p.total_len(), p.tgt.len()))
        .collect();
    assert!(keys.windows(2).all(|w| w[0] <= w[1]));
    // same multiset of pairs
    let mut got: Vec<EncodedPair> = batches.iter().flat_map(|b| b.pairs()).collect();
    let mut want: Vec<EncodedPair> = survivors.into_iter().cloned().collect();
    got.sort_by(|a, b| (&a.src, &a.tgt).cmp(&(&b.src, &b.tgt)));
    want.sort_by(|a, b| (&a.src, &a.tgt).cmp(&(&b.src, &b.tgt)));
    assert_eq!(got, want);
}

#[test]
fn dataset_roundtrip_and_random_access() {
    let batches = sort_and_batch(&random_pairs(1000, 9), 400, 40).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.ntrn");
    write_dataset(&batches, 500, 500, &path).unwrap();
    let file = read_dataset(&path).unwrap();
    assert_eq!(file.batches, batches);
    assert_eq!(file.header.batch_count as usize, file.offsets.len());
    let mut reader = DatasetReader::open(&path).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let i = rng.random_range(0..batches.len());
        assert_eq!(reader.read_batch(i).unwrap(), file.batches[i]);
    }
}

#[test]
fn target_rows_are_framed() {
    for b in sort_and_batch(&random_pairs(200, 2), 256, 30).unwrap() {
        for r in 0..b.rows {
            let row = b.tgt_row(r);
            assert_eq!(row[0], SOS);
            assert_eq!(row.iter().filter(|&&t| t == EOS).count(), 1);
            let e = row.iter().position(|&t| t == EOS).unwrap();
            assert!(row[e + 1..].iter().all(|&t| t == PAD));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn batching_never_loses_pairs(seed in any::<u64>(), n in 0usize..300, budget in 1usize..300, max_len in 1usize..50) {
        let pairs = random_pairs(n, seed);
        let batches = sort_and_batch(&pairs, budget, max_len).unwrap();
        let survivors = pairs.iter().filter(|p| p.src.len() <= max_len && p.tgt.len() <= max_len).count();
        prop_assert_eq!(batches.iter().map(|b| b.rows).sum::<usize>(), survivors);
        for b in &batches {
            // only a lone oversize pair may break the budget
            prop_assert!(b.rows == 1 || (b.rows * b.src_cols <= budget && b.rows * b.tgt_cols <= budget));
        }
    }

    #[test]
    fn epoch_order_is_permutation(epoch in 1usize..20, n in 1usize..200, seed in any::<u64>()) {
        let mut o = epoch_order(epoch, n, seed);
        prop_assert_eq!(&o, &epoch_order(epoch, n, seed));
        o.sort();
        prop_assert_eq!(o, (0..n).collect::<Vec<_>>());
    }
}
