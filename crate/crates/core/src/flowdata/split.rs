use std::ops::Range;

use ndarray::{s, Array1, Array2};
use serde::{Deserialize, Serialize};

use super::FlowMatrix;
use crate::error::{Error, Result};

/// Chronological train/validation/test partition of bin indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

impl DatasetSplit {
    /// Cuts `[0, n_bins)` at `floor(r0·n)` and `floor((r0+r1)·n)`.
    pub fn chronological(n_bins: usize, ratios: (f64, f64, f64)) -> Result<Self> {
        let (r0, r1, r2) = ratios;
        if [r0, r1, r2].iter().any(|r| !(0.0..=1.0).contains(r))
            || (r0 + r1 + r2 - 1.0).abs() > 1e-9
        {
            return Err(Error::config(format!(
                "split ratios {ratios:?} must be in [0,1] and sum to 1"
            )));
        }
        // The epsilon keeps 0.7 + 0.1 from flooring 80 down to 79.
        let cut = |r: f64| ((r * n_bins as f64 + 1e-9).floor() as usize).min(n_bins);
        let b1 = cut(r0);
        let b2 = cut(r0 + r1).max(b1);
        Ok(Self {
            train: 0..b1,
            val: b1..b2,
            test: b2..n_bins,
        })
    }

    pub fn n_bins(&self) -> usize {
        self.test.end
    }

    /// Target bins of the train segment for a window of length `seq_len`.
    pub fn train_targets(&self, seq_len: usize) -> Range<usize> {
        self.train.start.max(seq_len)..self.train.end
    }

    /// Target bins of each segment, in train/val/test order.
    pub fn target_ranges(&self, seq_len: usize) -> [Range<usize>; 3] {
        [
            self.train_targets(seq_len),
            self.val.start.max(seq_len)..self.val.end,
            self.test.start.max(seq_len)..self.test.end,
        ]
    }
}

/// One supervised sample: `seq_len` consecutive input rows and the next bin.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    /// `seq_len × n_inputs`, rows are bins `target_bin − seq_len .. target_bin`.
    pub inputs: Array2<f64>,
    pub target: Array1<f64>,
    pub target_bin: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowSet {
    pub seq_len: usize,
    pub samples: Vec<Window>,
}

impl WindowSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn input_dim(&self) -> Option<usize> {
        self.samples.first().map(|w| w.inputs.ncols())
    }

    pub fn output_dim(&self) -> Option<usize> {
        self.samples.first().map(|w| w.target.len())
    }

    pub fn target_bins(&self) -> Vec<usize> {
        self.samples.iter().map(|w| w.target_bin).collect()
    }

    /// Targets stacked as `n_samples × n_outputs`.
    pub fn targets(&self) -> Array2<f64> {
        let n_out = self.output_dim().unwrap_or(0);
        let mut out = Array2::zeros((self.len(), n_out));
        for (mut row, w) in out.outer_iter_mut().zip(&self.samples) {
            row.assign(&w.target);
        }
        out
    }

    /// Keeps samples whose target bin lies in `range`.
    pub fn restrict(&self, range: &Range<usize>) -> WindowSet {
        WindowSet {
            seq_len: self.seq_len,
            samples: self
                .samples
                .iter()
                .filter(|w| range.contains(&w.target_bin))
                .cloned()
                .collect(),
        }
    }

    /// Assigns each sample to the segment containing its target bin.
    pub fn partition(&self, split: &DatasetSplit) -> WindowSplits {
        WindowSplits {
            train: self.restrict(&split.train),
            val: self.restrict(&split.val),
            test: self.restrict(&split.test),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowSplits {
    pub train: WindowSet,
    pub val: WindowSet,
    pub test: WindowSet,
}

/// Builds windows whose inputs come from `inputs` and targets from `targets`.
///
/// Both matrices are indexed by the same bins. Every target bin must have
/// `seq_len` predecessors.
pub fn build_windows(
    inputs: &Array2<f64>,
    targets: &Array2<f64>,
    target_bins: Range<usize>,
    seq_len: usize,
) -> Result<WindowSet> {
    if seq_len == 0 {
        return Err(Error::config("window length must be at least 1"));
    }
    if inputs.nrows() != targets.nrows() {
        return Err(Error::contract(
            "input and target matrices cover different bin counts",
        ));
    }
    if target_bins.start < seq_len || target_bins.end > targets.nrows() {
        return Err(Error::contract(format!(
            "target bins {target_bins:?} need {seq_len} predecessors within 0..{}",
            targets.nrows()
        )));
    }
    let samples = target_bins
        .map(|t| Window {
            inputs: inputs.slice(s![t - seq_len..t, ..]).to_owned(),
            target: targets.row(t).to_owned(),
            target_bin: t,
        })
        .collect();
    Ok(WindowSet { seq_len, samples })
}

/// Chronological split plus train/val/test windows over one flow matrix.
///
/// Windows belong to the segment of their target bin; inputs may reach back
/// across a segment boundary.
pub fn split_and_window(
    flow: &FlowMatrix,
    ratios: (f64, f64, f64),
    seq_len: usize,
) -> Result<(DatasetSplit, WindowSplits)> {
    let n = flow.n_bins();
    if n < seq_len + 3 {
        return Err(Error::data(format!(
            "{n} bins is too few for windows of length {seq_len}"
        )));
    }
    let split = DatasetSplit::chronological(n, ratios)?;
    for (name, range) in ["train", "val", "test"]
        .iter()
        .zip(split.target_ranges(seq_len))
    {
        if range.is_empty() {
            return Err(Error::data(format!(
                "{name} segment holds no window targets ({n} bins)"
            )));
        }
    }
    let values = flow.to_f64();
    let all = build_windows(&values, &values, seq_len..n, seq_len)?;
    let windows = all.partition(&split);
    Ok((split, windows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowdata::{Direction, Mode};
    use chrono::{TimeZone, Utc};
    use proptest::prelude::*;

    fn flow(n_bins: usize) -> FlowMatrix {
        FlowMatrix::new(
            Mode::Bike,
            15,
            Utc.with_ymd_and_hms(2019, 3, 1, 0, 0, 0).unwrap(),
            Direction::Arrivals,
            vec!["a".into(), "b".into()],
            Array2::from_shape_fn((n_bins, 2), |(t, j)| (t * 10 + j) as u32),
        )
        .unwrap()
    }

    const RATIOS: (f64, f64, f64) = (0.7, 0.1, 0.2);

    #[test]
    fn hundred_bins() {
        let (split, w) = split_and_window(&flow(100), RATIOS, 4).unwrap();
        assert_eq!(split.train, 0..70);
        assert_eq!(split.val, 70..80);
        assert_eq!(split.test, 80..100);
        assert_eq!(w.train.target_bins(), (4..70).collect::<Vec<_>>());
        assert_eq!(w.val.target_bins(), (70..80).collect::<Vec<_>>());
        assert_eq!(w.test.target_bins(), (80..100).collect::<Vec<_>>());

        let first = &w.test.samples[0];
        assert_eq!(first.target_bin, 80);
        assert_eq!(
            first.inputs.column(0).to_vec(),
            vec![760.0, 770.0, 780.0, 790.0]
        );
        assert_eq!(first.target.to_vec(), vec![800.0, 801.0]);
    }

    #[test]
    fn ten_bins_three_train_windows() {
        let (_, w) = split_and_window(&flow(10), RATIOS, 4).unwrap();
        assert_eq!(w.train.target_bins(), vec![4, 5, 6]);
        assert_eq!(w.val.target_bins(), vec![7]);
        assert_eq!(w.test.target_bins(), vec![8, 9]);
    }

    #[test]
    fn too_few_bins() {
        assert!(split_and_window(&flow(6), RATIOS, 4).is_err());
        // Seven bins: the train cut at floor(4.9) = 4 leaves no train target.
        assert!(split_and_window(&flow(7), RATIOS, 4).is_err());
    }

    #[test]
    fn bad_ratios() {
        assert!(DatasetSplit::chronological(100, (0.7, 0.2, 0.2)).is_err());
    }

    proptest! {
        #[test]
        fn split_partitions_bins(n in 1usize..5000, a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let (r0, r1) = (a.min(b), (a - b).abs());
            let split = DatasetSplit::chronological(n, (r0, r1, 1.0 - r0 - r1)).unwrap();
            prop_assert_eq!(split.train.start, 0);
            prop_assert_eq!(split.train.end, split.val.start);
            prop_assert_eq!(split.val.end, split.test.start);
            prop_assert_eq!(split.test.end, n);
        }

        #[test]
        fn windows_hold_preceding_rows(n in 7usize..80, l in 1usize..4) {
            let f = flow(n);
            let values = f.to_f64();
            let all = build_windows(&values, &values, l..n, l).unwrap();
            for w in &all.samples {
                for (k, row) in w.inputs.outer_iter().enumerate() {
                    prop_assert_eq!(row, values.row(w.target_bin - l + k));
                }
            }
        }
    }
}
