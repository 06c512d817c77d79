use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::dataset::{Domain, LabeledDataset};
use crate::error::{DcmError, Result};
use crate::netcore::Matrix;
use crate::rng::{rng_for, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchmarkKind {
    StandardOod,
    NearOod,
    CovariateShift,
}

/// Parameters of a synthetic benchmark. `alpha_u` and `alpha_test` are the
/// in-distribution fractions of the uncertainty and test sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkSpec {
    pub kind: BenchmarkKind,
    pub n_classes: usize,
    pub dim: usize,
    pub class_separation: f64,
    pub ood_offset: f64,
    pub alpha_u: f64,
    pub alpha_test: f64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_uncertainty: usize,
    pub n_test: usize,
    pub corruption_severity: f64,
    /// Angle in radians of the fixed plane rotation applied by the corruption.
    pub rotation_angle: f64,
    /// Use the whole training set as the uncertainty set's ID portion instead
    /// of fresh draws. The OOD portion keeps its size, so the uncertainty set
    /// holds `n_train` plus the OOD count examples.
    pub uncertainty_id_from_train: bool,
    pub seed: u64,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        BenchmarkSpec {
            kind: BenchmarkKind::StandardOod,
            n_classes: 4,
            dim: 8,
            class_separation: 6.0,
            ood_offset: 12.0,
            alpha_u: 0.5,
            alpha_test: 0.5,
            n_train: 800,
            n_val: 400,
            n_uncertainty: 400,
            n_test: 400,
            corruption_severity: 1.0,
            rotation_angle: 0.6,
            uncertainty_id_from_train: false,
            seed: 0,
        }
    }
}

impl BenchmarkSpec {
    pub fn with_kind(kind: BenchmarkKind) -> Self {
        BenchmarkSpec {
            kind,
            ..Default::default()
        }
    }

    /// Reference setting of each task. Detection tasks use the defaults; the
    /// shift task trains on few points with overlapping classes, so the
    /// pretrained model is overconfident and makes enough validation errors
    /// to fine-tune on.
    pub fn canonical(kind: BenchmarkKind) -> Self {
        match kind {
            BenchmarkKind::CovariateShift => BenchmarkSpec {
                kind,
                class_separation: 4.0,
                n_train: 50,
                n_val: 800,
                corruption_severity: 1.5,
                ..Default::default()
            },
            _ => Self::with_kind(kind),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(DcmError::config(m));
        if self.n_classes < 2 {
            return err(format!("n_classes must be >= 2, got {}", self.n_classes));
        }
        let needed = match self.kind {
            BenchmarkKind::NearOod => 2 * self.n_classes,
            _ => self.n_classes,
        };
        if self.dim < needed {
            return err(format!(
                "dim {} too small to hold {needed} orthogonal class means",
                self.dim
            ));
        }
        if !(self.class_separation > 0.0 && self.class_separation.is_finite()) {
            return err("class_separation must be positive".into());
        }
        if !(self.ood_offset > 0.0 && self.ood_offset.is_finite()) {
            return err("ood_offset must be positive".into());
        }
        for (name, a) in [("alpha_u", self.alpha_u), ("alpha_test", self.alpha_test)] {
            if !(0.0..=1.0).contains(&a) {
                return err(format!("{name} must lie in [0, 1], got {a}"));
            }
        }
        for (name, n) in [
            ("n_train", self.n_train),
            ("n_val", self.n_val),
            ("n_uncertainty", self.n_uncertainty),
            ("n_test", self.n_test),
        ] {
            if n == 0 {
                return err(format!("{name} must be positive"));
            }
        }
        if !(self.corruption_severity >= 0.0 && self.corruption_severity.is_finite()) {
            return err("corruption_severity must be >= 0".into());
        }
        if !self.rotation_angle.is_finite() {
            return err("rotation_angle must be finite".into());
        }
        Ok(())
    }

    /// Number of in-distribution examples in a mixed set of size `n`.
    pub fn id_count(&self, n: usize, alpha: f64) -> usize {
        (alpha * n as f64).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionSplits {
    pub train: LabeledDataset,
    pub val: LabeledDataset,
    pub uncertainty: LabeledDataset,
    pub test: LabeledDataset,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftSplits {
    pub train: LabeledDataset,
    pub val: LabeledDataset,
    pub test_id: LabeledDataset,
    pub test_ood: LabeledDataset,
    pub test_mixed: LabeledDataset,
}

/// `k` mutually orthogonal means with pairwise distance `sep`, centred on
/// the centroid of the first `centre_on` of them.
fn simplex_means(k: usize, dim: usize, sep: f64, centre_on: usize) -> Vec<Vec<f64>> {
    let scale = sep / std::f64::consts::SQRT_2;
    let mut means: Vec<Vec<f64>> = (0..k)
        .map(|i| {
            let mut m = vec![0.0; dim];
            m[i] = scale;
            m
        })
        .collect();
    let mut centroid = vec![0.0; dim];
    for m in &means[..centre_on] {
        for (c, v) in centroid.iter_mut().zip(m) {
            *c += v / centre_on as f64;
        }
    }
    for m in &mut means {
        for (v, c) in m.iter_mut().zip(&centroid) {
            *v -= c;
        }
    }
    means
}

/// Unit vector normal to the ID simplex: equal weight on the first `c` axes.
fn simplex_normal(c: usize, dim: usize) -> Vec<f64> {
    let mut u = vec![0.0; dim];
    for v in &mut u[..c] {
        *v = 1.0 / (c as f64).sqrt();
    }
    u
}

fn sample_blob(rng: &mut Rng, mean: &[f64], out: &mut Vec<f64>) {
    for &m in mean {
        let z: f64 = rng.sample(StandardNormal);
        out.push(m + z);
    }
}

/// `n` class-balanced draws (label `i % C`) from the given blobs.
fn draw_classes(rng: &mut Rng, means: &[Vec<f64>], n: usize) -> (Vec<f64>, Vec<usize>) {
    let mut data = Vec::with_capacity(n * means[0].len());
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = i % means.len();
        sample_blob(rng, &means[y], &mut data);
        labels.push(y);
    }
    (data, labels)
}

/// Assembles a shuffled mixture of already-drawn ID and OOD parts.
fn mix(rng: &mut Rng, id: &LabeledDataset, ood: &LabeledDataset) -> Result<LabeledDataset> {
    let all = id.concat(ood)?;
    let mut order: Vec<usize> = (0..all.len()).collect();
    order.shuffle(rng);
    Ok(all.subset(&order))
}

fn id_dataset(rng: &mut Rng, means: &[Vec<f64>], n: usize, dim: usize) -> Result<LabeledDataset> {
    let (data, labels) = draw_classes(rng, means, n);
    LabeledDataset::in_distribution(Matrix::new(n, dim, data)?, labels, means.len())
}

/// Draws ID and OOD examples for the uncertainty and test sets from shared
/// pools, so the two sets are disjoint index ranges of the same draw.
fn mixed_sets(
    spec: &BenchmarkSpec,
    rng: &mut Rng,
    id_means: &[Vec<f64>],
    ood_means: &[Vec<f64>],
    train: &LabeledDataset,
) -> Result<(LabeledDataset, LabeledDataset)> {
    let c = spec.n_classes;
    let d = spec.dim;
    let u_id = spec.id_count(spec.n_uncertainty, spec.alpha_u);
    let u_ood = spec.n_uncertainty - u_id;
    let t_id = spec.id_count(spec.n_test, spec.alpha_test);
    let t_ood = spec.n_test - t_id;

    let id_pool = id_dataset(rng, id_means, u_id + t_id, d)?;
    // a single OOD blob gives label 0 throughout; a family gives its index
    let (ood_data, ood_labels) = draw_classes(rng, ood_means, u_ood + t_ood);
    let ood_pool = LabeledDataset::new(
        Matrix::new(u_ood + t_ood, d, ood_data)?,
        ood_labels,
        vec![Domain::Ood; u_ood + t_ood],
        c,
    )?;
    let range = |a: usize, b: usize| (a..b).collect::<Vec<_>>();

    let unc_id = if spec.uncertainty_id_from_train {
        train.clone()
    } else {
        id_pool.subset(&range(0, u_id))
    };
    let uncertainty = mix(rng, &unc_id, &ood_pool.subset(&range(0, u_ood)))?;
    let test = mix(
        rng,
        &id_pool.subset(&range(u_id, u_id + t_id)),
        &ood_pool.subset(&range(u_ood, u_ood + t_ood)),
    )?;
    Ok((uncertainty, test))
}

/// Far-OOD task: `C` ID blobs on a simplex, one OOD blob displaced from the
/// ID centroid by `ood_offset` along the simplex normal.
pub fn gen_standard_ood(spec: &BenchmarkSpec) -> Result<DetectionSplits> {
    if spec.kind != BenchmarkKind::StandardOod {
        return Err(DcmError::config(
            "gen_standard_ood needs kind = standard_ood",
        ));
    }
    spec.validate()?;
    let (c, d) = (spec.n_classes, spec.dim);
    let id_means = simplex_means(c, d, spec.class_separation, c);
    let ood_mean: Vec<f64> = simplex_normal(c, d)
        .into_iter()
        .map(|v| v * spec.ood_offset)
        .collect();
    let mut rng = rng_for(spec.seed, "datagen/standard");
    let train = id_dataset(&mut rng, &id_means, spec.n_train, d)?;
    let val = id_dataset(&mut rng, &id_means, spec.n_val, d)?;
    let (uncertainty, test) = mixed_sets(spec, &mut rng, &id_means, &[ood_mean], &train)?;
    Ok(DetectionSplits {
        train,
        val,
        uncertainty,
        test,
    })
}

/// Near-OOD task: `2C` blobs of one family. The first `C` are the ID
/// classes of the standard task; OOD class `i` is ID class `i` moved by
/// `class_separation` along an axis of its own, so its nearest ID mean is at
/// `class_separation` and the others at `sqrt(2)` times that.
pub fn gen_near_ood(spec: &BenchmarkSpec) -> Result<DetectionSplits> {
    if spec.kind != BenchmarkKind::NearOod {
        return Err(DcmError::config("gen_near_ood needs kind = near_ood"));
    }
    spec.validate()?;
    let (c, d) = (spec.n_classes, spec.dim);
    let id_means = simplex_means(c, d, spec.class_separation, c);
    let id_means = &id_means[..];
    // OOD class i is ID class i pushed along its own fresh axis
    let ood_means: Vec<Vec<f64>> = id_means
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let mut o = m.clone();
            o[c + i] = spec.class_separation;
            o
        })
        .collect();
    let ood_means = &ood_means[..];
    let mut rng = rng_for(spec.seed, "datagen/near");
    let train = id_dataset(&mut rng, id_means, spec.n_train, d)?;
    let val = id_dataset(&mut rng, id_means, spec.n_val, d)?;
    let (uncertainty, test) = mixed_sets(spec, &mut rng, id_means, ood_means, &train)?;
    Ok(DetectionSplits {
        train,
        val,
        uncertainty,
        test,
    })
}

/// Rotation by `angle` in the plane spanned by two random orthonormal vectors.
pub fn plane_rotation(dim: usize, angle: f64, rng: &mut Rng) -> Matrix {
    let mut u: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let norm = |x: &[f64]| x.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nu = norm(&u);
    u.iter_mut().for_each(|a| *a /= nu);
    let proj: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
    v.iter_mut().zip(&u).for_each(|(b, a)| *b -= proj * a);
    let nv = norm(&v);
    v.iter_mut().for_each(|a| *a /= nv);

    let (s, c) = angle.sin_cos();
    let mut r = Matrix::identity(dim);
    for i in 0..dim {
        for j in 0..dim {
            let delta = (c - 1.0) * (u[i] * u[j] + v[i] * v[j]) + s * (v[i] * u[j] - u[i] * v[j]);
            r.set(i, j, r.get(i, j) + delta);
        }
    }
    r
}

/// Applies `x -> R x + severity * noise` to every row, keeping labels and
/// tagging the result OOD. `noise_seed` fixes the noise draw so that only
/// its scale depends on `severity`.
pub fn corrupt(
    data: &LabeledDataset,
    rotation: &Matrix,
    severity: f64,
    noise_seed: u64,
) -> Result<LabeledDataset> {
    let mut rng = rng_for(noise_seed, "datagen/corruption-noise");
    let rotated = data.features().mul_transpose(rotation)?;
    let features = rotated.map_rows(|src, dst| {
        for (o, &x) in dst.iter_mut().zip(src) {
            let z: f64 = rng.sample(StandardNormal);
            *o = x + severity * z;
        }
    });
    LabeledDataset::new(
        features,
        data.labels().to_vec(),
        vec![Domain::Ood; data.len()],
        data.n_classes(),
    )
}

/// Covariate-shift task: ID blobs as in the standard task; `test_ood` is
/// `test_id` pushed through the fixed corruption; `test_mixed` takes the
/// first half of `test_id` and the corrupted second half.
pub fn gen_covariate_shift(spec: &BenchmarkSpec) -> Result<ShiftSplits> {
    if spec.kind != BenchmarkKind::CovariateShift {
        return Err(DcmError::config(
            "gen_covariate_shift needs kind = covariate_shift",
        ));
    }
    spec.validate()?;
    let (c, d) = (spec.n_classes, spec.dim);
    let id_means = simplex_means(c, d, spec.class_separation, c);
    let mut rng = rng_for(spec.seed, "datagen/shift");
    let train = id_dataset(&mut rng, &id_means, spec.n_train, d)?;
    let val = id_dataset(&mut rng, &id_means, spec.n_val, d)?;
    let test_id = id_dataset(&mut rng, &id_means, spec.n_test, d)?;
    let rotation = plane_rotation(
        d,
        spec.rotation_angle,
        &mut rng_for(spec.seed, "datagen/rotation"),
    );
    let test_ood = corrupt(&test_id, &rotation, spec.corruption_severity, spec.seed)?;
    let half = spec.n_test / 2;
    let first: Vec<usize> = (0..half).collect();
    let second: Vec<usize> = (half..spec.n_test).collect();
    let test_mixed = test_id.subset(&first).concat(&test_ood.subset(&second))?;
    Ok(ShiftSplits {
        train,
        val,
        test_id,
        test_ood,
        test_mixed,
    })
}

/// Splits a target total across fractions by largest remainder.
fn apportion(total: f64, fractions: &[f64], cap: usize) -> Vec<usize> {
    let want = (total * fractions.iter().sum::<f64>())
        .round()
        .min(cap as f64) as usize;
    let raw: Vec<f64> = fractions.iter().map(|f| f * total).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = raw[a] - raw[a].floor();
        let rb = raw[b] - raw[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut have: usize = counts.iter().sum();
    for &k in order.iter().cycle().take(fractions.len() * 2) {
        if have >= want {
            break;
        }
        counts[k] += 1;
        have += 1;
    }
    while have > want {
        let k = (0..counts.len())
            .max_by_key(|&k| counts[k])
            .expect("nonempty");
        counts[k] -= 1;
        have -= 1;
    }
    counts
}

/// Stratified, seed-deterministic partition into disjoint splits.
///
/// Split `k` receives about `fractions[k] * n` examples and each class is
/// represented within one example of its proportional share.
pub fn resplit(data: &LabeledDataset, fractions: &[f64], seed: u64) -> Result<Vec<LabeledDataset>> {
    if fractions.is_empty() || fractions.iter().any(|&f| !(f > 0.0 && f.is_finite())) {
        return Err(DcmError::config("split fractions must be positive"));
    }
    let total: f64 = fractions.iter().sum();
    if total > 1.0 + 1e-12 {
        return Err(DcmError::config(format!(
            "split fractions sum to {total} > 1"
        )));
    }
    let mut rng = rng_for(seed, "datagen/resplit");
    let k = fractions.len();
    let n = data.len();
    let targets = apportion(n as f64, fractions, n);

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); data.n_classes()];
    for (i, &y) in data.labels().iter().enumerate() {
        by_class[y].push(i);
    }
    for members in &mut by_class {
        members.shuffle(&mut rng);
    }

    // floor allocation per class, then top up each split from classes with
    // the largest fractional share that still have unassigned members
    let mut alloc: Vec<Vec<usize>> = by_class
        .iter()
        .map(|m| {
            fractions
                .iter()
                .map(|f| (f * m.len() as f64).floor() as usize)
                .collect()
        })
        .collect();
    let spare =
        |alloc: &Vec<Vec<usize>>, c: usize| by_class[c].len() - alloc[c].iter().sum::<usize>();
    for s in 0..k {
        let mut have: usize = alloc.iter().map(|a| a[s]).sum();
        let mut classes: Vec<usize> = (0..by_class.len()).collect();
        classes.sort_by(|&a, &b| {
            let fa = fractions[s] * by_class[a].len() as f64;
            let fb = fractions[s] * by_class[b].len() as f64;
            (fb - fb.floor())
                .total_cmp(&(fa - fa.floor()))
                .then(a.cmp(&b))
        });
        for pass in 0..2 {
            for &c in &classes {
                if have >= targets[s] {
                    break;
                }
                let share = fractions[s] * by_class[c].len() as f64;
                let ceiling = share.ceil() as usize;
                if spare(&alloc, c) > 0 && (pass == 1 || alloc[c][s] < ceiling) {
                    alloc[c][s] += 1;
                    have += 1;
                }
            }
        }
    }

    let mut splits: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (c, members) in by_class.iter().enumerate() {
        let mut pos = 0;
        for s in 0..k {
            splits[s].extend_from_slice(&members[pos..pos + alloc[c][s]]);
            pos += alloc[c][s];
        }
    }
    Ok(splits
        .into_iter()
        .map(|mut idx| {
            idx.shuffle(&mut rng);
            data.subset(&idx)
        })
        .collect())
}
