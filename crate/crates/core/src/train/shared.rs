use std::sync::atomic::{AtomicU32, Ordering};

/// A row-major `f32` matrix that worker threads update without locks.
///
/// Elements are stored as relaxed atomics: concurrent updates to the same
/// element may overwrite each other (last write wins), which is the usual
/// Hogwild trade-off. With a single worker the results are exact and
/// deterministic.
pub(crate) struct SharedMatrix {
    cols: usize,
    data: Vec<AtomicU32>,
}

impl SharedMatrix {
    pub fn from_vec(cols: usize, values: Vec<f32>) -> Self {
        debug_assert_eq!(values.len() % cols, 0);
        SharedMatrix {
            cols,
            data: values.into_iter().map(|v| AtomicU32::new(v.to_bits())).collect(),
        }
    }

    pub fn read_row(&self, row: usize, out: &mut [f32]) {
        let src = &self.data[row * self.cols..(row + 1) * self.cols];
        for (o, v) in out.iter_mut().zip(src) {
            *o = f32::from_bits(v.load(Ordering::Relaxed));
        }
    }

    pub fn write_row(&self, row: usize, values: &[f32]) {
        let dst = &self.data[row * self.cols..(row + 1) * self.cols];
        for (d, &v) in dst.iter().zip(values) {
            d.store(v.to_bits(), Ordering::Relaxed);
        }
    }

    /// `row += scale * delta`.
    pub fn add_to_row(&self, row: usize, delta: &[f32], scale: f32) {
        let dst = &self.data[row * self.cols..(row + 1) * self.cols];
        for (d, &v) in dst.iter().zip(delta) {
            let old = f32::from_bits(d.load(Ordering::Relaxed));
            d.store((old + scale * v).to_bits(), Ordering::Relaxed);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data
            .iter()
            .all(|v| f32::from_bits(v.load(Ordering::Relaxed)).is_finite())
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
            .into_iter()
            .map(|v| f32::from_bits(v.into_inner()))
            .collect()
    }
}

/// Split `0..n` into `parts` contiguous, nearly equal ranges.
pub(crate) fn shard_ranges(n: usize, parts: usize) -> Vec<std::ops::Range<usize>> {
    let parts = parts.max(1);
    (0..parts)
        .map(|p| (p * n / parts)..((p + 1) * n / parts))
        .collect()
}
