//! Flattened view of a dataset used by the inference engines: every event of
//! every sequence, and for each event the admissible parents (earlier events
//! of the same sequence no more than `T_φ` before it), stored sparsely.

use crate::dataset::Dataset;

/// CSR-style parent lists; pair `k` in row `i` links event `i` to
/// `parents[k]` at lag `lags[k]`.
#[derive(Debug, Clone, Default)]
pub struct PairIndex {
    starts: Vec<usize>,
    parents: Vec<usize>,
    lags: Vec<f64>,
}

impl PairIndex {
    pub fn row(&self, i: usize) -> std::ops::Range<usize> {
        self.starts[i]..self.starts[i + 1]
    }

    pub fn parents(&self) -> &[usize] {
        &self.parents
    }

    pub fn lags(&self) -> &[f64] {
        &self.lags
    }

    pub fn len(&self) -> usize {
        self.lags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lags.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Layout {
    pub window: f64,
    pub support: f64,
    pub n_sequences: usize,
    pub times: Vec<f64>,
    pub pairs: PairIndex,
}

impl Layout {
    pub fn new(data: &Dataset) -> Self {
        let support = data.support();
        let mut times = Vec::with_capacity(data.total_events());
        let mut starts = vec![0usize];
        let mut parents = Vec::new();
        let mut lags = Vec::new();
        for seq in data.sequences() {
            let offset = times.len();
            let ts = seq.times();
            let mut first = 0usize;
            for (i, &t) in ts.iter().enumerate() {
                while t - ts[first] > support {
                    first += 1;
                }
                for (j, &s) in ts.iter().enumerate().take(i).skip(first) {
                    parents.push(offset + j);
                    lags.push(t - s);
                }
                starts.push(parents.len());
            }
            times.extend_from_slice(ts);
        }
        Self {
            window: data.window(),
            support,
            n_sequences: data.sequences().len(),
            times,
            pairs: PairIndex { starts, parents, lags },
        }
    }

    pub fn n_events(&self) -> usize {
        self.times.len()
    }
}

/// Per-event responsibilities over "background" and each admissible parent.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchingPosterior {
    pub background: Vec<f64>,
    /// Aligned with [`PairIndex`].
    pub parent: Vec<f64>,
}

impl BranchingPosterior {
    /// Normalize unnormalized background and trigger weights row by row.
    pub fn from_weights(pairs: &PairIndex, background: &[f64], trigger: &[f64]) -> Self {
        let n = background.len();
        let mut bg = vec![0.0; n];
        let mut parent = vec![0.0; trigger.len()];
        for i in 0..n {
            let row = pairs.row(i);
            let z = background[i] + trigger[row.clone()].iter().sum::<f64>();
            assert!(z > 0.0 && z.is_finite(), "branching row {i} has normalizer {z}");
            bg[i] = background[i] / z;
            for k in row {
                parent[k] = trigger[k] / z;
            }
        }
        Self { background: bg, parent }
    }

    /// Same as [`from_weights`](Self::from_weights) but from log-weights, for
    /// weights that may underflow.
    pub fn from_log_weights(pairs: &PairIndex, background: &[f64], trigger: &[f64]) -> Self {
        let n = background.len();
        let mut bg = vec![0.0; n];
        let mut parent = vec![0.0; trigger.len()];
        for i in 0..n {
            let row = pairs.row(i);
            let m = trigger[row.clone()].iter().copied().fold(background[i], f64::max);
            let z = (background[i] - m).exp()
                + trigger[row.clone()].iter().map(|l| (l - m).exp()).sum::<f64>();
            bg[i] = (background[i] - m).exp() / z;
            for k in row {
                parent[k] = (trigger[k] - m).exp() / z;
            }
        }
        Self { background: bg, parent }
    }

    pub fn expected_background(&self) -> f64 {
        self.background.iter().sum()
    }

    pub fn expected_triggered(&self) -> f64 {
        self.parent.iter().sum()
    }

    /// `-Σ p log p` over all rows.
    pub fn entropy(&self) -> f64 {
        self.background
            .iter()
            .chain(&self.parent)
            .filter(|&&p| p > 0.0)
            .map(|p| -p * p.ln())
            .sum()
    }

    /// Largest `|row sum - 1|`.
    pub fn max_row_error(&self, pairs: &PairIndex) -> f64 {
        (0..self.background.len())
            .map(|i| {
                let s = self.background[i] + self.parent[pairs.row(i)].iter().sum::<f64>();
                (s - 1.0).abs()
            })
            .fold(0.0, f64::max)
    }
}
