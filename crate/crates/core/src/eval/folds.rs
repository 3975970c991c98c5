use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{KtmError, Result};
use crate::trainers::{rng_for, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    ByRow,
    ByStudent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSpec {
    pub k: usize,
    pub seed: u64,
    pub mode: SplitMode,
}

impl Default for FoldSpec {
    fn default() -> Self {
        Self {
            k: 5,
            seed: 42,
            mode: SplitMode::ByRow,
        }
    }
}

/// Sorted row indices of one train/test split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffles rows (or students) with the fold stream of `spec.seed` and deals
/// them round-robin into `k` test sets.
pub fn make_folds(n_rows: usize, spec: &FoldSpec, student_of_row: Option<&[usize]>) -> Result<Vec<Fold>> {
    if spec.k < 2 {
        return Err(KtmError::InvalidFolds(format!("k = {} must be at least 2", spec.k)));
    }
    let mut rng = rng_for(spec.seed, Stream::Folds);
    let mut fold_of_row = vec![0usize; n_rows];
    match spec.mode {
        SplitMode::ByRow => {
            if n_rows < spec.k {
                return Err(KtmError::InvalidFolds(format!(
                    "{n_rows} rows cannot fill {} folds",
                    spec.k
                )));
            }
            let mut order: Vec<usize> = (0..n_rows).collect();
            order.shuffle(&mut rng);
            for (pos, &r) in order.iter().enumerate() {
                fold_of_row[r] = pos % spec.k;
            }
        }
        SplitMode::ByStudent => {
            let students = student_of_row.ok_or_else(|| {
                KtmError::InvalidFolds("by-student split needs the row to student map".into())
            })?;
            if students.len() != n_rows {
                return Err(KtmError::LengthMismatch {
                    expected: n_rows,
                    actual: students.len(),
                });
            }
            let mut ids: Vec<usize> = students.to_vec();
            ids.sort_unstable();
            ids.dedup();
            if ids.len() < spec.k {
                return Err(KtmError::InvalidFolds(format!(
                    "{} students cannot fill {} folds",
                    ids.len(),
                    spec.k
                )));
            }
            ids.shuffle(&mut rng);
            let max_id = ids.iter().copied().max().unwrap_or(0);
            let mut fold_of_student = vec![0usize; max_id + 1];
            for (pos, &s) in ids.iter().enumerate() {
                fold_of_student[s] = pos % spec.k;
            }
            for (r, &s) in students.iter().enumerate() {
                fold_of_row[r] = fold_of_student[s];
            }
        }
    }
    Ok((0..spec.k)
        .map(|f| {
            let (test, train): (Vec<usize>, Vec<usize>) =
                (0..n_rows).partition(|&r| fold_of_row[r] == f);
            Fold { train, test }
        })
        .collect())
}
