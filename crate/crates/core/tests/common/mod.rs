//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use dcm::netcore::{Matrix, MlpModel};

/// Log-softmax of one logit row.
pub fn log_softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

/// `mean xent(ft) + lambda * mean conf(unc)`, from the forward pass alone.
/// `targets` holds one distribution per fine-tuning row.
pub fn objective(
    model: &MlpModel,
    ft: &Matrix,
    targets: &[Vec<f64>],
    unc: &Matrix,
    lambda: f64,
) -> f64 {
    let z = model.forward_logits(ft).unwrap();
    let xent = z
        .row_iter()
        .zip(targets)
        .map(|(row, t)| {
            -log_softmax(row)
                .iter()
                .zip(t)
                .map(|(l, p)| p * l)
                .sum::<f64>()
        })
        .sum::<f64>()
        / ft.rows() as f64;
    if unc.is_empty() {
        return xent;
    }
    let zu = model.forward_logits(unc).unwrap();
    let c = model.n_classes() as f64;
    let conf = zu
        .row_iter()
        .map(|row| -log_softmax(row).iter().sum::<f64>() / c)
        .sum::<f64>()
        / unc.rows() as f64;
    xent + lambda * conf
}

/// Central finite differences of `f` over every parameter of `model`.
pub fn fd_gradient(model: &MlpModel, h: f64, f: impl Fn(&MlpModel) -> f64) -> Vec<f64> {
    let n = model.n_params();
    (0..n)
        .map(|idx| {
            let mut plus = model.clone();
            plus.for_each_param_mut(|i, p| {
                if i == idx {
                    *p += h
                }
            });
            let mut minus = model.clone();
            minus.for_each_param_mut(|i, p| {
                if i == idx {
                    *p -= h
                }
            });
            (f(&plus) - f(&minus)) / (2.0 * h)
        })
        .collect()
}

/// `||a - b|| / (||a|| + ||b||)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let denom = norm(a) + norm(b);
    if denom == 0.0 {
        0.0
    } else {
        norm(&diff) / denom
    }
}

/// Minimizer of `xent(p) + lambda * conf` over distributions, by hand.
pub fn smoothed(p: &[f64], lambda: f64) -> Vec<f64> {
    let c = p.len() as f64;
    p.iter()
        .map(|v| (v + lambda / c) / (1.0 + lambda))
        .collect()
}

pub fn tv(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>() / 2.0
}

/// Natural-log KL divergence; terms with `p_i = 0` vanish.
pub fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| {
            if *b == 0.0 {
                f64::INFINITY
            } else {
                a * (a / b).ln()
            }
        })
        .sum()
}

/// AUROC as the fraction of (ID, OOD) pairs ordered correctly, ties half.
pub fn pairwise_auroc(id: &[f64], ood: &[f64]) -> f64 {
    let mut wins = 0.0;
    for &o in ood {
        for &i in id {
            wins += if o > i {
                1.0
            } else if o == i {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / (id.len() * ood.len()) as f64
}

/// Area under the explicit ROC polyline over all distinct thresholds.
pub fn trapezoid_auroc(id: &[f64], ood: &[f64]) -> f64 {
    let mut thresholds: Vec<f64> = id.iter().chain(ood).copied().collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut pts = vec![(0.0, 0.0)];
    for t in thresholds {
        let fpr = id.iter().filter(|&&s| s >= t).count() as f64 / id.len() as f64;
        let tpr = ood.iter().filter(|&&s| s >= t).count() as f64 / ood.len() as f64;
        pts.push((fpr, tpr));
    }
    pts.windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation over `sqrt(n)`.
pub fn stderr(v: &[f64]) -> f64 {
    let m = mean(v);
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
    (var / v.len() as f64).sqrt()
}
