//! Weighted F1, session-rotating cross-validation plans and multi-run averaging.

use std::collections::BTreeMap;
use std::fmt::{Display, Write as _};

use thiserror::Error;

#[derive(Error, Debug, PartialEq)]
pub enum EvalError {
    #[error("{refs} references but {hyps} hypotheses")]
    LengthMismatch { refs: usize, hyps: usize },
    #[error("nothing to score")]
    Empty,
    #[error("cross-validation needs exactly {expected} sessions, got {got}")]
    SessionCount { expected: usize, got: usize },
}

pub type Result<T> = std::result::Result<T, EvalError>;

pub const NUM_FOLDS: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport<L> {
    pub weighted_f1: f64,
    /// Classes in sorted order; indexes the confusion matrix.
    pub classes: Vec<L>,
    pub per_class_f1: BTreeMap<L, f64>,
    /// Rows are references, columns hypotheses.
    pub confusion: Vec<Vec<u64>>,
    pub n_items: usize,
}

/// Support-weighted mean of per-class F1. Undefined precision or recall counts as 0.
pub fn weighted_f1<L: Ord + Clone>(refs: &[L], hyps: &[L]) -> Result<EvalReport<L>> {
    if refs.len() != hyps.len() {
        return Err(EvalError::LengthMismatch {
            refs: refs.len(),
            hyps: hyps.len(),
        });
    }
    if refs.is_empty() {
        return Err(EvalError::Empty);
    }
    let index: BTreeMap<&L, usize> = refs
        .iter()
        .chain(hyps)
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .enumerate()
        .map(|(i, l)| (l, i))
        .collect();
    let c = index.len();
    let mut confusion = vec![vec![0u64; c]; c];
    for (r, h) in refs.iter().zip(hyps) {
        confusion[index[r]][index[h]] += 1;
    }
    let n = refs.len() as f64;
    let mut weighted = 0.0;
    let mut per_class = BTreeMap::new();
    for (label, &i) in &index {
        let tp = confusion[i][i] as f64;
        let support: f64 = confusion[i].iter().sum::<u64>() as f64;
        let predicted: f64 = confusion.iter().map(|row| row[i]).sum::<u64>() as f64;
        let precision = if predicted > 0.0 { tp / predicted } else { 0.0 };
        let recall = if support > 0.0 { tp / support } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        weighted += support / n * f1;
        per_class.insert((*label).clone(), f1);
    }
    Ok(EvalReport {
        weighted_f1: weighted,
        classes: index.keys().map(|l| (*l).clone()).collect(),
        per_class_f1: per_class,
        confusion,
        n_items: refs.len(),
    })
}

impl<L: Ord + Display> EvalReport<L> {
    /// Human-readable summary with the confusion matrix.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "weighted F1: {:.4} over {} items\n",
            self.weighted_f1, self.n_items
        );
        for (label, f1) in &self.per_class_f1 {
            let _ = writeln!(out, "  {label:<12} F1 {f1:.4}");
        }
        out.push_str("confusion (rows = reference, columns = hypothesis):\n");
        let _ = write!(out, "  {:<12}", "");
        for l in &self.classes {
            let _ = write!(out, " {:>8}", l.to_string());
        }
        out.push('\n');
        for (l, row) in self.classes.iter().zip(&self.confusion) {
            let _ = write!(out, "  {:<12}", l.to_string());
            for v in row {
                let _ = write!(out, " {v:>8}");
            }
            out.push('\n');
        }
        out
    }

    /// One `metric<TAB>value` per line.
    pub fn to_kv(&self) -> String {
        let mut out = format!(
            "weighted_f1\t{}\nn_items\t{}\n",
            self.weighted_f1, self.n_items
        );
        for (label, f1) in &self.per_class_f1 {
            let _ = writeln!(out, "f1.{label}\t{f1}");
        }
        for (r, row) in self.classes.iter().zip(&self.confusion) {
            for (h, v) in self.classes.iter().zip(row) {
                let _ = writeln!(out, "confusion.{r}.{h}\t{v}");
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fold<S> {
    pub train: Vec<S>,
    pub dev: S,
    pub test: S,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvPlan<S> {
    pub folds: Vec<Fold<S>>,
}

/// Fold i tests session i, develops on session i+1 (cyclically) and trains on the rest.
pub fn kfold_plan<S: Clone>(sessions: &[S]) -> Result<CvPlan<S>> {
    if sessions.len() != NUM_FOLDS {
        return Err(EvalError::SessionCount {
            expected: NUM_FOLDS,
            got: sessions.len(),
        });
    }
    let k = sessions.len();
    let folds = (0..k)
        .map(|i| {
            let dev = (i + 1) % k;
            Fold {
                train: (0..k)
                    .filter(|&j| j != i && j != dev)
                    .map(|j| sessions[j].clone())
                    .collect(),
                dev: sessions[dev].clone(),
                test: sessions[i].clone(),
            }
        })
        .collect();
    Ok(CvPlan { folds })
}

/// Mean and population standard deviation.
pub fn average_runs(scores: &[f64]) -> Result<(f64, f64)> {
    if scores.is_empty() {
        return Err(EvalError::Empty);
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, proptest, ProptestConfig};
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Per-class tallies straight from the definition, no confusion matrix.
    fn tally_oracle(refs: &[u8], hyps: &[u8]) -> f64 {
        let mut classes: Vec<u8> = refs.iter().chain(hyps).copied().collect();
        classes.sort_unstable();
        classes.dedup();
        let mut total = 0.0;
        for c in classes {
            let (mut tp, mut fp, mut fneg) = (0.0, 0.0, 0.0);
            for (r, h) in refs.iter().zip(hyps) {
                match (*r == c, *h == c) {
                    (true, true) => tp += 1.0,
                    (false, true) => fp += 1.0,
                    (true, false) => fneg += 1.0,
                    _ => {}
                }
            }
            let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
            let r = if tp + fneg > 0.0 {
                tp / (tp + fneg)
            } else {
                0.0
            };
            let f = if p + r > 0.0 {
                2.0 * p * r / (p + r)
            } else {
                0.0
            };
            total += (tp + fneg) * f;
        }
        total / refs.len() as f64
    }

    #[test]
    fn perfect_score() {
        let refs = ["a", "b", "c", "a"];
        let rep = weighted_f1(&refs, &refs).unwrap();
        assert_eq!(rep.weighted_f1, 1.0);
        assert_eq!(
            rep.confusion,
            vec![vec![2, 0, 0], vec![0, 1, 0], vec![0, 0, 1]]
        );
    }

    #[test]
    fn hand_case_scores_one_third() {
        let rep = weighted_f1(&["A", "A", "B", "B"], &["A", "A", "A", "A"]).unwrap();
        assert!((rep.per_class_f1["A"] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(rep.per_class_f1["B"], 0.0);
        assert!((rep.weighted_f1 - 1.0 / 3.0).abs() < 1e-15);
        let total: u64 = rep.confusion.iter().flatten().sum();
        assert_eq!(total as usize, rep.n_items);
    }

    #[test]
    fn errors() {
        assert_eq!(weighted_f1::<u8>(&[], &[]), Err(EvalError::Empty));
        assert!(matches!(
            weighted_f1(&[1], &[1, 2]),
            Err(EvalError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn matches_tally_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let refs: Vec<u8> = (0..1000).map(|_| rng.gen_range(0..5)).collect();
            let hyps: Vec<u8> = refs
                .iter()
                .map(|&r| {
                    if rng.gen_bool(0.6) {
                        r
                    } else {
                        rng.gen_range(0..5)
                    }
                })
                .collect();
            let rep = weighted_f1(&refs, &hyps).unwrap();
            assert!((rep.weighted_f1 - tally_oracle(&refs, &hyps)).abs() < 1e-12);
        }
    }

    #[test]
    fn kv_and_text_output() {
        let rep = weighted_f1(&["A", "A", "B", "B"], &["A", "A", "A", "A"]).unwrap();
        let kv = rep.to_kv();
        assert!(kv.lines().all(|l| l.split('\t').count() == 2));
        assert!(kv.contains("confusion.B.A\t2"));
        assert!(rep.to_text().contains("weighted F1: 0.3333"));
    }

    #[test]
    fn kfold_rotation() {
        let plan = kfold_plan(&[1, 2, 3, 4, 5]).unwrap();
        assert_eq!(
            plan.folds[0],
            Fold {
                train: vec![3, 4, 5],
                dev: 2,
                test: 1
            }
        );
        assert_eq!(plan.folds[4].dev, 1);
        let mut tests: Vec<i32> = plan.folds.iter().map(|f| f.test).collect();
        tests.sort_unstable();
        assert_eq!(tests, vec![1, 2, 3, 4, 5]);
        for f in &plan.folds {
            assert!(!f.train.contains(&f.dev) && !f.train.contains(&f.test) && f.dev != f.test);
        }
        assert!(kfold_plan(&[1, 2, 3]).is_err());
    }

    #[test]
    fn folds_inherit_speaker_disjointness() {
        // two speakers per session, as in a dyadic corpus
        let speakers = |s: usize| [2 * s, 2 * s + 1];
        let plan = kfold_plan(&[0usize, 1, 2, 3, 4]).unwrap();
        for f in &plan.folds {
            let train: Vec<usize> = f.train.iter().flat_map(|&s| speakers(s)).collect();
            for spk in speakers(f.test).iter().chain(&speakers(f.dev)) {
                assert!(!train.contains(spk));
            }
        }
    }

    #[test]
    fn run_averages() {
        assert_eq!(average_runs(&[0.5, 0.5, 0.5]).unwrap(), (0.5, 0.0));
        let (m, s) = average_runs(&[0.4, 0.6]).unwrap();
        assert!((m - 0.5).abs() < 1e-15 && (s - 0.1).abs() < 1e-15);
        assert_eq!(average_runs(&[0.7]).unwrap(), (0.7, 0.0));
        assert_eq!(average_runs(&[]), Err(EvalError::Empty));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn invariant_under_joint_shuffle_and_relabel(seed in any::<u64>(), n in 1usize..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let refs: Vec<u8> = (0..n).map(|_| rng.gen_range(0..5)).collect();
            let hyps: Vec<u8> = (0..n).map(|_| rng.gen_range(0..5)).collect();
            let base = weighted_f1(&refs, &hyps).unwrap();

            let mut pairs: Vec<(u8, u8)> = refs.iter().copied().zip(hyps.iter().copied()).collect();
            pairs.shuffle(&mut rng);
            let (r2, h2): (Vec<u8>, Vec<u8>) = pairs.into_iter().unzip();
            let shuffled = weighted_f1(&r2, &h2).unwrap();
            prop_assert!(shuffled == base);

            let mut perm: Vec<u8> = (0..5).collect();
            perm.shuffle(&mut rng);
            let r3: Vec<u8> = refs.iter().map(|&l| perm[l as usize]).collect();
            let h3: Vec<u8> = hyps.iter().map(|&l| perm[l as usize]).collect();
            let relabeled = weighted_f1(&r3, &h3).unwrap();
            prop_assert!((relabeled.weighted_f1 - base.weighted_f1).abs() < 1e-12);
            for (l, f) in &base.per_class_f1 {
                prop_assert!((relabeled.per_class_f1[&perm[*l as usize]] - f).abs() < 1e-12);
            }
        }
    }
}
