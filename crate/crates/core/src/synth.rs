//! Synthetic transductive zero-shot instances with known labels.
//!
//! Class `k` is centred at `(separation / √2) e_k`, so every pair of class
//! means is `separation` apart while within-class noise is standard normal.
//! The semantic distribution imitates a zero-shot text classifier: each row is
//! a softmax over logits that put `1.0` on a favoured class and `U[0, 0.5)` on
//! the others, where the favoured class is the true one except, with
//! probability `y_noise`, a uniformly chosen wrong class.
//!
//! Draw order from [`SplitMix64`] seeded with `seed`:
//! 1. labels: Fisher-Yates shuffle of the sorted balanced label vector, for
//!    `i = N-1 ..= 1` swap `i` with `next_below(i + 1)`;
//! 2. features: for each sample, `D` normals in column order;
//! 3. semantics: for each sample, one uniform for the noise coin, then one
//!    `next_below(K - 1)` only if the coin lands below `y_noise`, then `K`
//!    uniforms for the logits in column order.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::prob::{row_softmax, FeatureMatrix, ProbMatrix};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n_samples: usize,
    pub n_classes: usize,
    pub dim: usize,
    /// Distance between class means, in within-class standard deviations.
    pub separation: f64,
    /// Probability that a sample's semantic evidence favours a wrong class.
    pub y_noise: f64,
    pub y_temperature: f64,
    pub seed: u64,
    /// L2-normalize every feature row after sampling.
    pub normalize: bool,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_samples: 300,
            n_classes: 3,
            dim: 8,
            separation: 8.0,
            y_noise: 0.0,
            y_temperature: 5.0,
            seed: 0,
            normalize: false,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::invalid(format!("need at least 2 classes, got {}", self.n_classes)));
        }
        if self.n_samples < self.n_classes {
            return Err(Error::invalid(format!(
                "{} samples cannot cover {} classes",
                self.n_samples, self.n_classes
            )));
        }
        if self.dim < 2 {
            return Err(Error::invalid(format!("need at least 2 dimensions, got {}", self.dim)));
        }
        if self.dim < self.n_classes {
            return Err(Error::invalid(format!(
                "class means live on the first K axes: dim {} < classes {}",
                self.dim, self.n_classes
            )));
        }
        if !(self.separation > 0.0) || !self.separation.is_finite() {
            return Err(Error::invalid("separation must be positive"));
        }
        if !(0.0..=1.0).contains(&self.y_noise) {
            return Err(Error::invalid("y_noise must lie in [0, 1]"));
        }
        if !(self.y_temperature > 0.0) || !self.y_temperature.is_finite() {
            return Err(Error::invalid("y_temperature must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub features: FeatureMatrix<f64>,
    pub semantic: ProbMatrix<f64>,
    pub labels: Vec<usize>,
}

/// Balanced labels: `⌊N/K⌋` per class, the remainder to the lowest indices.
pub fn balanced_labels(n: usize, k: usize) -> Vec<usize> {
    let base = n / k;
    let extra = n % k;
    (0..k).flat_map(|c| std::iter::repeat_n(c, base + usize::from(c < extra))).collect()
}

pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let (n, k, d) = (spec.n_samples, spec.n_classes, spec.dim);
    let mut rng = SplitMix64::new(spec.seed);

    let mut labels = balanced_labels(n, k);
    for i in (1..n).rev() {
        let j = rng.next_below(i as u64 + 1) as usize;
        labels.swap(i, j);
    }

    let scale = spec.separation / std::f64::consts::SQRT_2;
    let mut x = Matrix::zeros(n, d);
    for (i, &label) in labels.iter().enumerate() {
        let row = x.row_mut(i);
        for (j, v) in row.iter_mut().enumerate() {
            *v = rng.next_normal() + if j == label { scale } else { 0.0 };
        }
    }
    let mut features = FeatureMatrix::new(x)?;
    if spec.normalize {
        features = features.l2_normalized();
    }

    let mut logits = Matrix::zeros(n, k);
    for (i, &label) in labels.iter().enumerate() {
        let favoured = if rng.next_f64() < spec.y_noise {
            (label + 1 + rng.next_below(k as u64 - 1) as usize) % k
        } else {
            label
        };
        let row = logits.row_mut(i);
        for v in row.iter_mut() {
            *v = 0.5 * rng.next_f64();
        }
        row[favoured] = 1.0;
    }
    let semantic = row_softmax(&logits, spec.y_temperature)?;

    Ok(SynthData { features, semantic, labels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prob::argmax_rows;

    fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
        pred.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / truth.len() as f64
    }

    #[test]
    fn clean_semantics_are_exact() {
        let data = generate(&SynthSpec { separation: 12.0, ..SynthSpec::default() }).unwrap();
        assert_eq!(accuracy(&argmax_rows(&data.semantic), &data.labels), 1.0);
    }

    #[test]
    fn fully_noisy_semantics_are_wrong() {
        let mut total = 0.0;
        for seed in 0..20 {
            let spec = SynthSpec { n_samples: 200, n_classes: 4, dim: 4, y_noise: 1.0, seed, ..SynthSpec::default() };
            let data = generate(&spec).unwrap();
            total += accuracy(&argmax_rows(&data.semantic), &data.labels);
        }
        assert!(total / 20.0 < 2.0 / 4.0);
    }

    #[test]
    fn same_seed_same_bits() {
        let spec = SynthSpec { y_noise: 0.3, seed: 42, ..SynthSpec::default() };
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a, b);
        let c = generate(&SynthSpec { seed: 43, ..spec }).unwrap();
        assert_ne!(a.features, c.features);
    }

    #[test]
    fn labels_are_balanced() {
        assert_eq!(balanced_labels(7, 3), vec![0, 0, 0, 1, 1, 2, 2]);
        let data = generate(&SynthSpec { n_samples: 301, ..SynthSpec::default() }).unwrap();
        let mut counts = [0; 3];
        data.labels.iter().for_each(|&l| counts[l] += 1);
        assert_eq!(counts, [101, 100, 100]);
    }

    #[test]
    fn rows_and_spread() {
        let spec = SynthSpec { n_samples: 600, n_classes: 3, dim: 5, ..SynthSpec::default() };
        let data = generate(&spec).unwrap();
        assert!(data.features.is_finite());
        for s in data.semantic.row_sums() {
            assert!((s - 1.0).abs() < 1e-12);
        }
        // Pooled over dimensions, per class.
        for c in 0..3 {
            let members: Vec<usize> = (0..600).filter(|&i| data.labels[i] == c).collect();
            let mut ss = 0.0;
            for j in 0..5 {
                let vals: Vec<f64> = members.iter().map(|&i| data.features.get(i, j)).collect();
                let m = vals.iter().sum::<f64>() / vals.len() as f64;
                ss += vals.iter().map(|v| (v - m).powi(2)).sum::<f64>();
            }
            let sd = (ss / (5 * members.len()) as f64).sqrt();
            assert!((sd - 1.0).abs() < 0.1, "class {c} sd {sd}");
        }
    }

    #[test]
    fn mean_separation_matches_spec() {
        let spec = SynthSpec { n_samples: 3000, separation: 6.0, ..SynthSpec::default() };
        let data = generate(&spec).unwrap();
        let mut means = vec![vec![0.0; 8]; 3];
        let mut counts = [0.0; 3];
        for i in 0..3000 {
            let l = data.labels[i];
            counts[l] += 1.0;
            for j in 0..8 {
                means[l][j] += data.features.get(i, j);
            }
        }
        for c in 0..3 {
            means[c].iter_mut().for_each(|v| *v /= counts[c]);
        }
        let dist: f64 = means[0].iter().zip(&means[1]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!((dist - 6.0).abs() < 0.2, "{dist}");
    }

    #[test]
    fn invalid_specs_rejected() {
        let bad = [
            SynthSpec { n_samples: 2, n_classes: 3, ..SynthSpec::default() },
            SynthSpec { n_classes: 1, ..SynthSpec::default() },
            SynthSpec { dim: 1, ..SynthSpec::default() },
            SynthSpec { dim: 2, n_classes: 3, ..SynthSpec::default() },
            SynthSpec { separation: 0.0, ..SynthSpec::default() },
            SynthSpec { y_noise: 1.5, ..SynthSpec::default() },
        ];
        for spec in bad {
            assert!(matches!(generate(&spec), Err(Error::InvalidInput(_))), "{spec:?}");
        }
    }

    #[test]
    fn normalized_rows_are_unit() {
        let data = generate(&SynthSpec { normalize: true, ..SynthSpec::default() }).unwrap();
        for row in data.features.iter_rows() {
            let n: f64 = row.iter().map(|v| v * v).sum();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }
}
