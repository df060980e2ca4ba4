use std::sync::RwLock;

use nmt_tensor::{Scalar, Tensor};

/// Sinusoidal position table, memoized and grown on demand. Readers share
/// the cache; growth takes the write lock once and keeps existing rows.
#[derive(Debug)]
pub struct PositionalCache {
    dim: usize,
    rows: RwLock<Vec<f64>>,
}

fn fill_rows(dim: usize, from: usize, to: usize, out: &mut Vec<f64>) {
    for p in from..to {
        for i in 0..dim / 2 {
            let angle = p as f64 / 10000f64.powf(2.0 * i as f64 / dim as f64);
            out.push(angle.sin());
            out.push(angle.cos());
        }
    }
}

impl PositionalCache {
    pub fn new(dim: usize, cache_len: usize) -> Self {
        let mut rows = Vec::with_capacity(dim * cache_len);
        fill_rows(dim, 0, cache_len, &mut rows);
        Self {
            dim,
            rows: RwLock::new(rows),
        }
    }

    pub fn cached_len(&self) -> usize {
        self.rows.read().expect("positional cache lock").len() / self.dim
    }

    fn ensure(&self, len: usize) {
        if self.cached_len() >= len {
            return;
        }
        let mut rows = self.rows.write().expect("positional cache lock");
        let have = rows.len() / self.dim;
        if have < len {
            let target = len.max(2 * have);
            fill_rows(self.dim, have, target, &mut rows);
        }
    }

    /// Rows `start..start + len` as a `[len, dim]` tensor.
    pub fn rows<T: Scalar>(&self, start: usize, len: usize) -> Tensor<T> {
        self.ensure(start + len);
        let rows = self.rows.read().expect("positional cache lock");
        let data = rows[start * self.dim..(start + len) * self.dim]
            .iter()
            .map(|&v| T::cast(v))
            .collect();
        Tensor::new(vec![len, self.dim], data).expect("row slice matches shape")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_values() {
        let pe = PositionalCache::new(4, 8);
        let r0 = pe.rows::<f64>(0, 1);
        assert_eq!(r0.data(), &[0.0, 1.0, 0.0, 1.0]);
        let r1 = pe.rows::<f64>(1, 1);
        let want = [1f64.sin(), 1f64.cos(), 0.01f64.sin(), 0.01f64.cos()];
        for (a, b) in r1.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn growth_keeps_prefix() {
        let pe = PositionalCache::new(6, 4);
        let before = pe.rows::<f64>(0, 4);
        let all = pe.rows::<f64>(0, 8);
        assert!(pe.cached_len() >= 8);
        assert_eq!(&all.data()[..before.numel()], before.data());
        assert_eq!(pe.rows::<f64>(5, 1).data(), &all.data()[30..36]);
    }
}
