//! Closed-form optimum of the confidence-regularized objective, Pinsker's
//! inequality, and an empirical certificate of MSP separation between ID and
//! OOD examples.

use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::LabeledDataset;
use crate::error::{DcmError, Result};
use crate::netcore::{Matrix, MlpModel};
use crate::rng::{derive_seed, rng_for};
use crate::scoring::msp_of_probs;

const DIST_TOL: f64 = 1e-9;

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.len() < 2 {
        return Err(DcmError::Numeric(format!(
            "{what} needs at least two entries"
        )));
    }
    let sum: f64 = p.iter().sum();
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) || (sum - 1.0).abs() > DIST_TOL {
        return Err(DcmError::Numeric(format!(
            "{what} is not a probability vector"
        )));
    }
    Ok(())
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda >= 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(DcmError::config(format!(
            "lambda must be >= 0, got {lambda}"
        )))
    }
}

/// Minimizer of `xent(s, p) + lambda * conf(s)` over distributions `s`:
/// `(p + lambda / C) / (1 + lambda)`.
pub fn optimal_distribution(p: &[f64], lambda: f64) -> Result<Vec<f64>> {
    check_distribution(p, "p")?;
    check_lambda(lambda)?;
    let c = p.len() as f64;
    Ok(p.iter()
        .map(|v| (v + lambda / c) / (1.0 + lambda))
        .collect())
}

/// MSP of the optimum for a one-hot target.
pub fn optimal_msp_id(lambda: f64, n_classes: usize) -> f64 {
    1.0 / (1.0 + lambda) + lambda / ((1.0 + lambda) * n_classes as f64)
}

pub fn msp_uniform(n_classes: usize) -> f64 {
    1.0 / n_classes as f64
}

/// Largest objective gap that still forces separation of `n` examples over
/// `m` classes: `(1 / 2n) * ((m - 1) / ((1 + lambda) m))^2`.
pub fn separation_epsilon(n: usize, m: usize, lambda: f64) -> Result<f64> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(DcmError::config(format!(
            "separation needs lambda > 0, got {lambda}"
        )));
    }
    if n == 0 || m < 2 {
        return Err(DcmError::config(format!(
            "separation needs n >= 1 and m >= 2, got n={n}, m={m}"
        )));
    }
    let m = m as f64;
    let r = (m - 1.0) / ((1.0 + lambda) * m);
    Ok(r * r / (2.0 * n as f64))
}

/// Both sides of Pinsker's inequality for one pair of distributions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PinskerCheck {
    pub tv: f64,
    pub kl: f64,
    /// `sqrt(kl / 2)`.
    pub bound: f64,
    pub holds: bool,
    /// `q` has a zero where `p` does not, so `kl` is infinite.
    pub infinite_kl: bool,
}

/// Total variation distance between two distributions of equal length.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// `KL(p || q)`, infinite when `q` misses mass of `p`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    let mut kl = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        if a > 0.0 {
            if b <= 0.0 {
                return f64::INFINITY;
            }
            kl += a * (a / b).ln();
        }
    }
    // rounding can leave a tiny negative value for near-identical inputs
    kl.max(0.0)
}

pub fn pinsker_check(p: &[f64], q: &[f64]) -> Result<PinskerCheck> {
    check_distribution(p, "p")?;
    check_distribution(q, "q")?;
    if p.len() != q.len() {
        return Err(DcmError::shape(format!(
            "distributions of length {} and {}",
            p.len(),
            q.len()
        )));
    }
    let tv = total_variation(p, q);
    let kl = kl_divergence(p, q);
    let bound = (kl / 2.0).sqrt();
    Ok(PinskerCheck {
        tv,
        kl,
        bound,
        holds: tv <= bound + 1e-12,
        infinite_kl: kl.is_infinite(),
    })
}

/// Random perturbations used to probe MSP separation around each example.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeighborhoodSpec {
    /// Norm of every perturbation.
    pub delta: f64,
    /// Directions drawn per example.
    pub directions: usize,
    pub seed: u64,
}

impl Default for NeighborhoodSpec {
    fn default() -> Self {
        NeighborhoodSpec {
            delta: 0.1,
            directions: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeighborhoodResult {
    pub delta: f64,
    pub directions: usize,
    pub min_id_msp: f64,
    pub max_ood_msp: f64,
    pub separated: bool,
}

/// Measured separation of a model together with the Pinsker bounds implied
/// by its objective gap.
///
/// `epsilon_hat` is the mean over all `n_total` examples of
/// `KL(p_lambda || f(x))` for ID examples and `KL(U || f(x))` for OOD
/// examples. Every single term is then at most `n_total * epsilon_hat`, which
/// makes both bounds hold unconditionally; they only certify separation once
/// `epsilon_hat < epsilon_threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationCertificate {
    pub lambda: f64,
    pub n_total: usize,
    pub n_id: usize,
    pub n_ood: usize,
    pub n_classes: usize,
    pub epsilon_threshold: f64,
    pub epsilon_hat: f64,
    /// Gap of the objective itself, `(1 + lambda)` times the ID KL terms plus
    /// `lambda` times the OOD terms, averaged over all examples.
    pub objective_gap: f64,
    pub id_msp_lower_bound: f64,
    pub ood_msp_upper_bound: f64,
    pub min_id_msp: f64,
    pub max_ood_msp: f64,
    /// `min_id_msp - max_ood_msp`; positive means strict separation.
    pub achieved_gap: f64,
    pub separated: bool,
    /// Measured MSPs respect both Pinsker bounds.
    pub bounds_hold: bool,
    pub neighborhood: Option<NeighborhoodResult>,
}

impl SeparationCertificate {
    /// The loss is low enough for the bounds to force separation.
    pub fn within_threshold(&self) -> bool {
        self.epsilon_hat < self.epsilon_threshold
    }

    /// The deterministic check: if the gap is below threshold, the bounds
    /// hold and the examples are separated.
    pub fn consistent(&self) -> bool {
        self.bounds_hold && (!self.within_threshold() || self.separated)
    }
}

fn smoothed_one_hot(label: usize, n_classes: usize, lambda: f64) -> Vec<f64> {
    let base = lambda / (n_classes as f64 * (1.0 + lambda));
    let mut p = vec![base; n_classes];
    p[label] += 1.0 / (1.0 + lambda);
    p
}

fn perturbed_msp_extreme(
    model: &MlpModel,
    points: &Matrix,
    spec: &NeighborhoodSpec,
    stream: &str,
    take_min: bool,
) -> Result<f64> {
    let dim = points.cols();
    let per_point: Vec<Result<f64>> = (0..points.rows())
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(derive_seed(spec.seed, stream), &i.to_string());
            let mut data = Vec::with_capacity(spec.directions * dim);
            for _ in 0..spec.directions {
                let dir: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
                let norm = dir
                    .iter()
                    .map(|v| v * v)
                    .sum::<f64>()
                    .sqrt()
                    .max(f64::MIN_POSITIVE);
                data.extend(
                    points
                        .row(i)
                        .iter()
                        .zip(&dir)
                        .map(|(x, d)| x + spec.delta * d / norm),
                );
            }
            let probs = model.predict_proba(&Matrix::new(spec.directions, dim, data)?)?;
            let msp = msp_of_probs(&probs);
            Ok(if take_min {
                msp.into_iter().fold(f64::INFINITY, f64::min)
            } else {
                msp.into_iter().fold(f64::NEG_INFINITY, f64::max)
            })
        })
        .collect();
    let mut out = if take_min {
        f64::INFINITY
    } else {
        f64::NEG_INFINITY
    };
    for v in per_point {
        let v = v?;
        out = if take_min { out.min(v) } else { out.max(v) };
    }
    Ok(out)
}

/// Certifies MSP separation of `model` between the labeled ID examples and
/// the OOD inputs at confidence weight `lambda`. With `neighborhood` set,
/// the ordering is also checked on random perturbations of every example.
pub fn certify_separation(
    model: &MlpModel,
    id: &LabeledDataset,
    ood: &Matrix,
    lambda: f64,
    neighborhood: Option<&NeighborhoodSpec>,
) -> Result<SeparationCertificate> {
    if id.is_empty() {
        return Err(DcmError::EmptyInput("ID examples"));
    }
    if ood.is_empty() {
        return Err(DcmError::EmptyInput("OOD examples"));
    }
    let m = model.n_classes();
    if id.n_classes() != m {
        return Err(DcmError::shape(format!(
            "dataset declares {} classes, model has {m}",
            id.n_classes()
        )));
    }
    let n_total = id.len() + ood.rows();
    let epsilon_threshold = separation_epsilon(n_total, m, lambda)?;

    let id_probs = model.predict_proba(id.features())?;
    let ood_probs = model.predict_proba(ood)?;
    let uniform = vec![msp_uniform(m); m];
    let mut kl_id = 0.0;
    for (row, &y) in id_probs.row_iter().zip(id.labels()) {
        if y >= m {
            return Err(DcmError::Index { index: y, bound: m });
        }
        kl_id += kl_divergence(&smoothed_one_hot(y, m, lambda), row);
    }
    let kl_ood: f64 = ood_probs
        .row_iter()
        .map(|row| kl_divergence(&uniform, row))
        .sum();
    let n = n_total as f64;
    let epsilon_hat = (kl_id + kl_ood) / n;
    let objective_gap = ((1.0 + lambda) * kl_id + lambda * kl_ood) / n;

    let slack = (n * epsilon_hat / 2.0).sqrt();
    let id_msp_lower_bound = (optimal_msp_id(lambda, m) - slack).clamp(0.0, 1.0);
    let ood_msp_upper_bound = (msp_uniform(m) + slack).clamp(0.0, 1.0);
    let min_id_msp = msp_of_probs(&id_probs)
        .into_iter()
        .fold(f64::INFINITY, f64::min);
    let max_ood_msp = msp_of_probs(&ood_probs)
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max);
    let bounds_hold =
        min_id_msp >= id_msp_lower_bound - 1e-12 && max_ood_msp <= ood_msp_upper_bound + 1e-12;

    let neighborhood = match neighborhood {
        None => None,
        Some(spec) => {
            if !(spec.delta >= 0.0 && spec.delta.is_finite()) || spec.directions == 0 {
                return Err(DcmError::config(
                    "neighborhood check needs delta >= 0 and at least one direction",
                ));
            }
            let lo = perturbed_msp_extreme(model, id.features(), spec, "theory/id", true)?
                .min(min_id_msp);
            let hi = perturbed_msp_extreme(model, ood, spec, "theory/ood", false)?.max(max_ood_msp);
            Some(NeighborhoodResult {
                delta: spec.delta,
                directions: spec.directions,
                min_id_msp: lo,
                max_ood_msp: hi,
                separated: lo > hi,
            })
        }
    };

    Ok(SeparationCertificate {
        lambda,
        n_total,
        n_id: id.len(),
        n_ood: ood.rows(),
        n_classes: m,
        epsilon_threshold,
        epsilon_hat,
        objective_gap,
        id_msp_lower_bound,
        ood_msp_upper_bound,
        min_id_msp,
        max_ood_msp,
        achieved_gap: min_id_msp - max_ood_msp,
        separated: min_id_msp > max_ood_msp,
        bounds_hold,
        neighborhood,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{Domain, LabeledDataset};
    use crate::netcore::{softmax, Activation};
    use proptest::prelude::*;
    use rand::Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn optimal_distribution_examples() {
        let p = [0.2, 0.3, 0.5];
        assert_eq!(optimal_distribution(&p, 0.0).unwrap(), p.to_vec());
        let u = optimal_distribution(&[0.25; 4], 1.7).unwrap();
        assert!(u.iter().all(|v| close(*v, 0.25, 1e-15)));

        let mut one_hot = vec![0.0; 10];
        one_hot[3] = 1.0;
        let s = optimal_distribution(&one_hot, 0.5).unwrap();
        assert!(close(s[3], 0.7, 1e-12));
        for (i, v) in s.iter().enumerate() {
            if i != 3 {
                assert!(close(*v, 1.0 / 30.0, 1e-12));
            }
        }
        assert!(close(s.iter().sum(), 1.0, 1e-12));
    }

    #[test]
    fn optimal_distribution_rejects_bad_input() {
        assert!(matches!(
            optimal_distribution(&[0.5, 0.6], 0.5),
            Err(DcmError::Numeric(_))
        ));
        assert!(matches!(
            optimal_distribution(&[0.5, 0.5], -1.0),
            Err(DcmError::Config(_))
        ));
    }

    // Plain gradient descent on the single-example objective; the logit
    // gradient is (1 + lambda) * s - p - lambda / C.
    fn descend(p: &[f64], lambda: f64) -> Vec<f64> {
        let c = p.len() as f64;
        let mut z = vec![0.0; p.len()];
        for _ in 0..20_000 {
            let s = softmax(&z).unwrap();
            for i in 0..z.len() {
                z[i] -= 0.5 * ((1.0 + lambda) * s[i] - p[i] - lambda / c);
            }
        }
        softmax(&z).unwrap()
    }

    #[test]
    fn one_hot_optimum_matches_gradient_descent() {
        let mut p = vec![0.0; 10];
        p[0] = 1.0;
        let s = descend(&p, 0.5);
        let closed = optimal_distribution(&p, 0.5).unwrap();
        assert!(total_variation(&s, &closed) < 1e-6);
    }

    #[test]
    fn msp_closed_forms() {
        assert!(close(optimal_msp_id(0.5, 10), 0.7, 1e-12));
        assert_eq!(optimal_msp_id(0.0, 7), 1.0);
        assert!(close(msp_uniform(10), 0.1, 1e-15));
    }

    #[test]
    fn separation_epsilon_examples() {
        assert!(close(
            separation_epsilon(100, 10, 0.5).unwrap(),
            0.0018,
            1e-15
        ));
        let a = separation_epsilon(50, 4, 1.0).unwrap();
        let b = separation_epsilon(100, 4, 1.0).unwrap();
        assert!(close(b, a / 2.0, 1e-18));
        let limit = 1.0 / 200.0 * (1.0 / 1.5f64).powi(2);
        assert!(close(
            separation_epsilon(100, 1_000_000, 0.5).unwrap(),
            limit,
            1e-8
        ));
        assert!(matches!(
            separation_epsilon(100, 10, 0.0),
            Err(DcmError::Config(_))
        ));
    }

    #[test]
    fn pinsker_examples() {
        let same = pinsker_check(&[0.3, 0.7], &[0.3, 0.7]).unwrap();
        assert_eq!((same.tv, same.kl), (0.0, 0.0));
        assert!(same.holds);

        let r = pinsker_check(&[1.0, 0.0], &[0.5, 0.5]).unwrap();
        assert!(close(r.tv, 0.5, 1e-15));
        assert!(close(r.kl, std::f64::consts::LN_2, 1e-15));
        assert!(close(r.bound, 0.5887, 1e-4));
        assert!(r.holds && !r.infinite_kl);

        let inf = pinsker_check(&[0.5, 0.5], &[1.0, 0.0]).unwrap();
        assert!(inf.infinite_kl && inf.holds);
    }

    // Linear model over one-hot inputs: input j selects logit row j.
    fn table_model(rows: &[Vec<f64>]) -> MlpModel {
        let c = rows[0].len();
        let mut w = Vec::new();
        for k in 0..c {
            for r in rows {
                w.push(r[k]);
            }
        }
        MlpModel::from_parts(
            vec![rows.len(), c],
            vec![Matrix::new(c, rows.len(), w).unwrap()],
            vec![vec![0.0; c]],
            Activation::Relu,
        )
        .unwrap()
    }

    fn one_hot_inputs(idx: &[usize], dim: usize) -> Matrix {
        let mut m = Matrix::zeros(idx.len(), dim);
        for (r, &j) in idx.iter().enumerate() {
            m.set(r, j, 1.0);
        }
        m
    }

    #[test]
    fn optimal_model_certifies_with_zero_gap() {
        let (c, lambda) = (4, 0.5);
        let mut rows: Vec<Vec<f64>> = (0..c)
            .map(|y| {
                smoothed_one_hot(y, c, lambda)
                    .iter()
                    .map(|p| p.ln())
                    .collect()
            })
            .collect();
        rows.push(vec![0.0; c]);
        let model = table_model(&rows);
        let labels = vec![0, 1, 2, 3, 1, 2];
        let id =
            LabeledDataset::in_distribution(one_hot_inputs(&labels, c + 1), labels, c).unwrap();
        let ood = one_hot_inputs(&[c, c, c], c + 1);
        let cert = certify_separation(
            &model,
            &id,
            &ood,
            lambda,
            Some(&NeighborhoodSpec::default()),
        )
        .unwrap();
        assert!(cert.epsilon_hat < 1e-12);
        assert!(close(
            cert.achieved_gap,
            optimal_msp_id(lambda, c) - msp_uniform(c),
            1e-12
        ));
        assert!(cert.separated && cert.bounds_hold && cert.within_threshold() && cert.consistent());
        assert_eq!(cert.n_total, 9);
        assert!(cert.neighborhood.unwrap().separated);
    }

    #[test]
    fn uniform_model_does_not_separate() {
        let c = 3;
        let model = table_model(&vec![vec![0.0; c]; c + 1]);
        let labels = vec![0, 1, 2];
        let id =
            LabeledDataset::in_distribution(one_hot_inputs(&labels, c + 1), labels, c).unwrap();
        let ood = one_hot_inputs(&[c], c + 1);
        let cert = certify_separation(&model, &id, &ood, 0.5, None).unwrap();
        assert_eq!(cert.min_id_msp, cert.max_ood_msp);
        assert!(!cert.separated);
        assert!(cert.bounds_hold);
        assert!(!cert.within_threshold());
    }

    #[test]
    fn certificate_rejects_empty_sets() {
        let model = table_model(&[vec![0.0, 0.0], vec![0.0, 0.0]]);
        let id = LabeledDataset::empty(2, 2);
        let ood = one_hot_inputs(&[0], 2);
        assert!(matches!(
            certify_separation(&model, &id, &ood, 0.5, None),
            Err(DcmError::EmptyInput(_))
        ));
        let id =
            LabeledDataset::new(one_hot_inputs(&[0], 2), vec![0], vec![Domain::Id], 2).unwrap();
        assert!(matches!(
            certify_separation(&model, &id, &Matrix::empty(2), 0.5, None),
            Err(DcmError::EmptyInput(_))
        ));
    }

    fn distribution(len: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, len).prop_filter_map("zero mass", |v| {
            let s: f64 = v.iter().sum();
            (s > 1e-6).then(|| v.iter().map(|x| x / s).collect())
        })
    }

    proptest! {
        #[test]
        fn pinsker_holds(c in 2usize..=10, seed in any::<u64>()) {
            let mut rng = rng_for(seed, "pinsker");
            let mut draw = || {
                let v: Vec<f64> = (0..c).map(|_| rng.random::<f64>() + 1e-9).collect();
                let s: f64 = v.iter().sum();
                v.into_iter().map(|x| x / s).collect::<Vec<f64>>()
            };
            let (p, q) = (draw(), draw());
            prop_assert!(pinsker_check(&p, &q).unwrap().holds);
        }

        #[test]
        fn smoothing_never_raises_msp(p in distribution(5), lambda in 0.0f64..5.0) {
            let s = optimal_distribution(&p, lambda).unwrap();
            let msp = |v: &[f64]| v.iter().cloned().fold(0.0, f64::max);
            prop_assert!(msp(&s) <= msp(&p) + 1e-15);
            prop_assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
