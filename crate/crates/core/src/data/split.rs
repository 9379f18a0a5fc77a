use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::Table;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    /// Train, validation and test fractions.
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(ratios: [f64; 3], seed: u64) -> Result<Self> {
        let spec = SplitSpec { ratios, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.ratios.iter().any(|&r| !(0.0..=1.0).contains(&r)) {
            return Err(Error::InvalidArgument(format!(
                "split ratios must lie in [0, 1]: {:?}",
                self.ratios
            )));
        }
        let sum: f64 = self.ratios.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "split ratios must sum to 1, got {sum}"
            )));
        }
        Ok(())
    }

    /// Partition sizes for `n` rows: train and validation are
    /// `floor(ratio * n)`, the test split takes the remainder.
    pub fn sizes(&self, n: usize) -> [usize; 3] {
        let train = (self.ratios[0] * n as f64 + 1e-9).floor() as usize;
        let valid = ((self.ratios[1] * n as f64 + 1e-9).floor() as usize).min(n - train);
        [train, valid, n - train - valid]
    }
}

/// Shuffles row indices under `spec.seed` and cuts them into train,
/// validation and test tables.
pub fn split(table: &Table, spec: &SplitSpec) -> Result<(Table, Table, Table)> {
    spec.validate()?;
    if table.is_empty() {
        return Err(Error::Empty("cannot split an empty table".into()));
    }
    let mut order: Vec<usize> = (0..table.len()).collect();
    order.shuffle(&mut seed::rng(spec.seed));
    let [train, valid, _] = spec.sizes(table.len());
    let (train_idx, rest) = order.split_at(train);
    let (valid_idx, test_idx) = rest.split_at(valid);
    Ok((
        table.select(train_idx),
        table.select(valid_idx),
        table.select(test_idx),
    ))
}
