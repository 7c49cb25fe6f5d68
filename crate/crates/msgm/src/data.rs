//! Shared domain types: source labels, source weights, labeled datasets,
//! and the small aggregation helpers the sweep runner needs.

use crate::error::{Error, Result};
use crate::rng::RngStream;
use rand::Rng;

/// 1-indexed source label in `[1, K]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SourceLabel(usize);

impl SourceLabel {
    pub fn new(value: usize, k: usize) -> Result<Self> {
        if value == 0 || value > k {
            return Err(Error::invalid(format!(
                "source label {value} outside [1, {k}]"
            )));
        }
        Ok(SourceLabel(value))
    }

    /// The 1-indexed value.
    pub fn get(self) -> usize {
        self.0
    }

    /// 0-indexed position for internal storage.
    pub fn index(self) -> usize {
        self.0 - 1
    }
}

/// Known distribution of the source label: K positive weights summing to 1.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceWeights {
    weights: Vec<f64>,
}

impl SourceWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::invalid("source weights must be nonempty"));
        }
        if weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(Error::invalid(
                "every source weight must be finite and > 0",
            ));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!(
                "source weights sum to {sum}, expected 1 within 1e-12"
            )));
        }
        Ok(SourceWeights { weights })
    }

    pub fn uniform(k: usize) -> Self {
        // k equal entries; rescale so the sum is exactly 1 in floating point.
        let mut w = vec![1.0 / k as f64; k];
        let sum: f64 = w.iter().sum();
        for wi in &mut w {
            *wi /= sum;
        }
        SourceWeights { weights: w }
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn weight(&self, label: SourceLabel) -> f64 {
        self.weights[label.index()]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }
}

/// Ordered list of (observation, label) pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset<T> {
    k: usize,
    samples: Vec<(T, SourceLabel)>,
}

impl<T> LabeledDataset<T> {
    pub fn new(k: usize, samples: Vec<(T, SourceLabel)>) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("K must be >= 1"));
        }
        if let Some((_, l)) = samples.iter().find(|(_, l)| l.get() > k) {
            return Err(Error::invalid(format!(
                "label {} invalid for K={k}",
                l.get()
            )));
        }
        Ok(LabeledDataset { k, samples })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[(T, SourceLabel)] {
        &self.samples
    }

    /// Per-source sample counts, indexed 0-based.
    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0usize; self.k];
        for (_, l) in &self.samples {
            c[l.index()] += 1;
        }
        c
    }
}

impl<T: Clone> LabeledDataset<T> {
    /// Group observations by source, preserving within-source order.
    /// Sources with no samples map to empty lists.
    pub fn split_by_source(&self) -> Vec<Vec<T>> {
        let mut groups: Vec<Vec<T>> = vec![Vec::new(); self.k];
        for (x, l) in &self.samples {
            groups[l.index()].push(x.clone());
        }
        groups
    }
}

/// Draw `n` labels i.i.d. from `weights`; deterministic given the stream.
pub fn sample_labels(
    weights: &SourceWeights,
    n: usize,
    stream: &RngStream,
) -> Vec<SourceLabel> {
    let mut rng = stream.rng();
    let k = weights.k();
    // Inverse-CDF draw; cumulative sums are fixed per call so results do not
    // depend on sampling order.
    let mut cdf = Vec::with_capacity(k);
    let mut acc = 0.0;
    for &w in weights.as_slice() {
        acc += w;
        cdf.push(acc);
    }
    (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            let idx = cdf.partition_point(|&c| c < u).min(k - 1);
            SourceLabel(idx + 1)
        })
        .collect()
}

/// Sample mean and sample standard deviation (divisor n-1; 0 for a singleton).
pub fn mean_and_std(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::invalid("mean_and_std of an empty list"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Ok((mean, 0.0));
    }
    let ss = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    Ok((mean, (ss / (n - 1.0)).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn label(v: usize, k: usize) -> SourceLabel {
        SourceLabel::new(v, k).unwrap()
    }

    #[test]
    fn label_range_checked() {
        assert!(SourceLabel::new(0, 3).is_err());
        assert!(SourceLabel::new(4, 3).is_err());
        assert_eq!(SourceLabel::new(3, 3).unwrap().get(), 3);
    }

    #[test]
    fn weights_validated() {
        assert!(SourceWeights::new(vec![]).is_err());
        assert!(SourceWeights::new(vec![0.5, 0.5001]).is_err());
        assert!(SourceWeights::new(vec![1.0, 0.0]).is_err());
        assert!(SourceWeights::new(vec![0.25; 4]).is_ok());
        let u = SourceWeights::uniform(7);
        assert!((u.as_slice().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn single_source_labels_degenerate() {
        let w = SourceWeights::new(vec![1.0]).unwrap();
        let labels = sample_labels(&w, 5, &RngStream::new(1));
        assert_eq!(labels.iter().map(|l| l.get()).collect::<Vec<_>>(), [1; 5]);
    }

    #[test]
    fn label_frequencies_match_uniform_weights() {
        let w = SourceWeights::uniform(5);
        let n = 1_000_000;
        let labels = sample_labels(&w, n, &RngStream::new(7).child(1));
        let mut counts = [0usize; 5];
        for l in &labels {
            counts[l.index()] += 1;
        }
        for c in counts {
            let freq = c as f64 / n as f64;
            assert!((freq - 0.2).abs() < 0.005, "freq {freq}");
        }
    }

    #[test]
    fn labels_deterministic() {
        let w = SourceWeights::uniform(3);
        let s = RngStream::new(99).child(4);
        assert_eq!(sample_labels(&w, 100, &s), sample_labels(&w, 100, &s));
    }

    #[test]
    fn split_groups_and_preserves_order() {
        let ds = LabeledDataset::new(
            2,
            vec![
                ("a", label(1, 2)),
                ("b", label(2, 2)),
                ("c", label(1, 2)),
            ],
        )
        .unwrap();
        let groups = ds.split_by_source();
        assert_eq!(groups[0], vec!["a", "c"]);
        assert_eq!(groups[1], vec!["b"]);
    }

    #[test]
    fn split_of_empty_dataset_is_all_empty() {
        let ds: LabeledDataset<f64> = LabeledDataset::new(3, vec![]).unwrap();
        assert!(ds.split_by_source().iter().all(|g| g.is_empty()));
    }

    #[test]
    fn split_is_a_partition() {
        let w = SourceWeights::uniform(4);
        let labels = sample_labels(&w, 500, &RngStream::new(3));
        let samples: Vec<(usize, SourceLabel)> =
            labels.into_iter().enumerate().collect();
        let ds = LabeledDataset::new(4, samples).unwrap();
        let groups = ds.split_by_source();
        assert_eq!(groups.iter().map(|g| g.len()).sum::<usize>(), ds.len());
        // Concatenating groups in label order is a permutation of the input.
        let mut seen: Vec<usize> = groups.concat();
        seen.sort_unstable();
        assert_eq!(seen, (0..500).collect::<Vec<_>>());
    }

    #[test]
    fn mean_and_std_examples() {
        assert_eq!(mean_and_std(&[3.0]).unwrap(), (3.0, 0.0));
        let (m, s) = mean_and_std(&[1.0, 2.0, 3.0]).unwrap();
        assert!((m - 2.0).abs() < 1e-15);
        assert!((s - 1.0).abs() < 1e-15);
        let (m, s) = mean_and_std(&[0.1212, 0.1212]).unwrap();
        assert!((m - 0.1212).abs() < 1e-15);
        assert_eq!(s, 0.0);
        assert!(mean_and_std(&[]).is_err());
    }
}
