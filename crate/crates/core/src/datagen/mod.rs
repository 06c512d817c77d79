//! Deterministic synthetic benchmarks: far-OOD, near-OOD and covariate shift
//! built from isotropic Gaussian blobs.

mod benchmarks;
mod dataset;

pub use benchmarks::{
    corrupt, gen_covariate_shift, gen_near_ood, gen_standard_ood, plane_rotation, resplit,
    BenchmarkKind, BenchmarkSpec, DetectionSplits, ShiftSplits,
};
pub use dataset::{Domain, LabeledDataset};

/// Class means as realized by the generators, useful for oracle classifiers.
pub fn empirical_class_means(data: &LabeledDataset) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; data.dim()]; data.n_classes()];
    let mut counts = vec![0usize; data.n_classes()];
    for (row, &y) in data.features().row_iter().zip(data.labels()) {
        counts[y] += 1;
        for (s, v) in sums[y].iter_mut().zip(row) {
            *s += v;
        }
    }
    for (s, &n) in sums.iter_mut().zip(&counts) {
        if n > 0 {
            s.iter_mut().for_each(|v| *v /= n as f64);
        }
    }
    sums
}
