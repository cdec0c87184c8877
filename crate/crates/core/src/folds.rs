//! Cross-validation fold construction: plain shuffled, target-stratified,
//! and group-integral splits, all deterministic under a seed.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::table::Table;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FoldStrategy {
    Plain,
    StratifiedTarget,
    GroupColumn(String),
}

impl std::fmt::Display for FoldStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FoldStrategy::Plain => write!(f, "plain"),
            FoldStrategy::StratifiedTarget => write!(f, "stratified_target"),
            FoldStrategy::GroupColumn(c) => write!(f, "group_column({c})"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldAssignment {
    /// Fold id per train row.
    pub fold_of: Vec<u32>,
    pub n_folds: usize,
    pub strategy: FoldStrategy,
    pub seed: u64,
}

impl FoldAssignment {
    pub fn n_rows(&self) -> usize {
        self.fold_of.len()
    }

    /// Row indices belonging to fold `f`, ascending.
    pub fn fold_rows(&self, f: usize) -> Vec<usize> {
        self.fold_of
            .iter()
            .enumerate()
            .filter(|(_, &g)| g as usize == f)
            .map(|(i, _)| i)
            .collect()
    }

    /// Row indices outside fold `f`, ascending.
    pub fn out_of_fold_rows(&self, f: usize) -> Vec<usize> {
        self.fold_of
            .iter()
            .enumerate()
            .filter(|(_, &g)| g as usize != f)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Builds the fold assignment for `train`.
///
/// Plain: seeded shuffle, round-robin deal (fold sizes differ by ≤1).
/// StratifiedTarget: per-class shuffle, then one continuous round-robin deal
/// across classes, so both the per-class and the total fold-size imbalance
/// are ≤1. Classification tasks only.
/// GroupColumn: groups sorted by size (desc, ties by first appearance) are
/// greedily placed on the smallest fold; a group never spans folds. The seed
/// does not influence this strategy.
pub fn make_folds(
    train: &Table,
    strategy: &FoldStrategy,
    n_folds: usize,
    seed: u64,
) -> Result<FoldAssignment> {
    let n = train.n_rows();
    if n_folds < 2 || n < n_folds {
        return Err(Error::TooFewRows {
            rows: n,
            folds: n_folds.max(2),
        });
    }
    let mut fold_of = vec![0u32; n];
    match strategy {
        FoldStrategy::Plain => {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            for (i, &row) in order.iter().enumerate() {
                fold_of[row] = (i % n_folds) as u32;
            }
        }
        FoldStrategy::StratifiedTarget => {
            let task = train
                .target_spec
                .map(|s| s.task)
                .ok_or_else(|| Error::WrongTaskForStrategy {
                    strategy: "stratified_target".into(),
                    expected: "classification".into(),
                })?;
            if !task.is_classification() {
                return Err(Error::WrongTaskForStrategy {
                    strategy: "stratified_target".into(),
                    expected: "classification".into(),
                });
            }
            let y = train.target_values()?;
            let k = task.n_classes();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut dealt = 0usize;
            for class in 0..k {
                let mut rows: Vec<usize> =
                    (0..n).filter(|&i| y[i] as usize == class).collect();
                rows.shuffle(&mut rng);
                for row in rows {
                    fold_of[row] = (dealt % n_folds) as u32;
                    dealt += 1;
                }
            }
        }
        FoldStrategy::GroupColumn(name) => {
            let col = train.column(name)?;
            // group key by cell text; missing cells form their own group
            let mut group_rows: Vec<(Option<String>, Vec<usize>)> = Vec::new();
            for r in 0..n {
                let key = col.cell_text(r);
                match group_rows.iter_mut().find(|(k, _)| *k == key) {
                    Some((_, rows)) => rows.push(r),
                    None => group_rows.push((key, vec![r])),
                }
            }
            if group_rows.len() < n_folds {
                return Err(Error::TooFewGroups {
                    groups: group_rows.len(),
                    folds: n_folds,
                });
            }
            // size desc, ties keep first-appearance order (stable sort)
            group_rows.sort_by_key(|(_, rows)| std::cmp::Reverse(rows.len()));
            let mut fold_sizes = vec![0usize; n_folds];
            for (_, rows) in group_rows {
                let f = fold_sizes
                    .iter()
                    .enumerate()
                    .min_by_key(|&(i, &s)| (s, i))
                    .map(|(i, _)| i)
                    .expect("n_folds >= 2");
                fold_sizes[f] += rows.len();
                for r in rows {
                    fold_of[r] = f as u32;
                }
            }
        }
    }
    Ok(FoldAssignment {
        fold_of,
        n_folds,
        strategy: strategy.clone(),
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::{Column, Role, TargetSpec, Task};

    fn binary_table(n_pos: usize, n_neg: usize) -> Table {
        let mut y = vec![1.0; n_pos];
        y.extend(vec![0.0; n_neg]);
        let x: Vec<f64> = (0..y.len()).map(|i| i as f64).collect();
        Table::new(vec![
            Column::numeric("x", x),
            Column::numeric("y", y).with_role(Role::Target),
        ])
        .unwrap()
        .with_target_spec(TargetSpec::new(Task::Binary))
    }

    #[test]
    fn plain_fold_sizes_balanced() {
        let t = binary_table(7, 6);
        let fa = make_folds(&t, &FoldStrategy::Plain, 4, 3).unwrap();
        let sizes: Vec<usize> = (0..4).map(|f| fa.fold_rows(f).len()).collect();
        assert_eq!(sizes.iter().sum::<usize>(), 13);
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn plain_deterministic_and_seed_sensitive() {
        let t = binary_table(20, 20);
        let a = make_folds(&t, &FoldStrategy::Plain, 5, 1).unwrap();
        let b = make_folds(&t, &FoldStrategy::Plain, 5, 1).unwrap();
        let c = make_folds(&t, &FoldStrategy::Plain, 5, 2).unwrap();
        assert_eq!(a.fold_of, b.fold_of);
        assert_ne!(a.fold_of, c.fold_of);
    }

    #[test]
    fn stratified_per_class_deviation_at_most_one() {
        let t = binary_table(600, 400);
        let fa = make_folds(&t, &FoldStrategy::StratifiedTarget, 10, 42).unwrap();
        let y = t.target_values().unwrap();
        for class in [0.0, 1.0] {
            let per_fold: Vec<usize> = (0..10)
                .map(|f| {
                    fa.fold_rows(f)
                        .iter()
                        .filter(|&&r| y[r] == class)
                        .count()
                })
                .collect();
            let lo = per_fold.iter().min().unwrap();
            let hi = per_fold.iter().max().unwrap();
            assert!(hi - lo <= 1, "class {class}: {per_fold:?}");
        }
        // 600/400 split 10 ways is exact
        assert!((0..10).all(|f| fa.fold_rows(f).len() == 100));
    }

    #[test]
    fn stratified_requires_classification() {
        let mut t = binary_table(5, 5);
        t.target_spec = Some(TargetSpec::new(Task::Regression));
        assert!(matches!(
            make_folds(&t, &FoldStrategy::StratifiedTarget, 2, 0),
            Err(Error::WrongTaskForStrategy { .. })
        ));
    }

    #[test]
    fn group_folds_never_split_groups() {
        // six "months" of unequal size
        let months: Vec<Option<String>> = (0..60)
            .map(|i| Some(format!("m{}", i % 6)))
            .collect();
        let t = Table::new(vec![
            Column::categorical_from_texts("month", &months),
            Column::numeric("x", (0..60).map(|i| i as f64).collect()),
        ])
        .unwrap();
        let fa =
            make_folds(&t, &FoldStrategy::GroupColumn("month".into()), 6, 0).unwrap();
        let col = t.column("month").unwrap();
        for f in 0..6 {
            let rows = fa.fold_rows(f);
            assert!(!rows.is_empty());
            let first = col.text(rows[0]).unwrap();
            assert!(rows.iter().all(|&r| col.text(r) == Some(first)));
        }
    }

    #[test]
    fn group_folds_too_few_groups() {
        let g: Vec<Option<String>> =
            (0..10).map(|i| Some(format!("g{}", i % 2))).collect();
        let t = Table::new(vec![Column::categorical_from_texts("g", &g)]).unwrap();
        assert!(matches!(
            make_folds(&t, &FoldStrategy::GroupColumn("g".into()), 3, 0),
            Err(Error::TooFewGroups { groups: 2, folds: 3 })
        ));
    }

    #[test]
    fn too_few_rows() {
        let t = binary_table(3, 2);
        assert!(matches!(
            make_folds(&t, &FoldStrategy::Plain, 10, 0),
            Err(Error::TooFewRows { .. })
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn folds_partition_rows(
                n_pos in 5usize..40,
                n_neg in 5usize..40,
                n_folds in 2usize..6,
                seed in 0u64..1000,
            ) {
                let t = binary_table(n_pos, n_neg);
                for strategy in [FoldStrategy::Plain, FoldStrategy::StratifiedTarget] {
                    let fa = make_folds(&t, &strategy, n_folds, seed).unwrap();
                    let mut seen = vec![false; t.n_rows()];
                    for f in 0..n_folds {
                        for r in fa.fold_rows(f) {
                            prop_assert!(!seen[r]);
                            seen[r] = true;
                        }
                    }
                    prop_assert!(seen.iter().all(|&s| s));
                    let sizes: Vec<usize> =
                        (0..n_folds).map(|f| fa.fold_rows(f).len()).collect();
                    let lo = *sizes.iter().min().unwrap();
                    let hi = *sizes.iter().max().unwrap();
                    prop_assert!(hi - lo <= 1);
                }
            }
        }
    }
}
