//! Classification metrics: micro/macro F1, accuracy, ROC AUC.

/// Per-class confusion counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ClassCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl ClassCounts {
    fn f1(self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            0.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }

    fn present(self) -> bool {
        self.tp + self.fp + self.fn_ > 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct F1Scores {
    pub micro: f64,
    pub macro_: f64,
    pub accuracy: f64,
}

fn summarise(counts: &[ClassCounts], correct_rows: usize, rows: usize) -> F1Scores {
    let pooled = counts.iter().fold(ClassCounts::default(), |a, c| ClassCounts {
        tp: a.tp + c.tp,
        fp: a.fp + c.fp,
        fn_: a.fn_ + c.fn_,
    });
    let present: Vec<f64> = counts.iter().filter(|c| c.present()).map(|c| c.f1()).collect();
    let macro_ = if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    F1Scores {
        micro: pooled.f1(),
        macro_,
        accuracy: if rows == 0 { 0.0 } else { correct_rows as f64 / rows as f64 },
    }
}

/// Single-label scores. Macro-F1 averages over classes that occur in either
/// the truth or the predictions.
pub fn single_label_scores(pred: &[usize], truth: &[usize], num_classes: usize) -> F1Scores {
    assert_eq!(pred.len(), truth.len());
    let mut counts = vec![ClassCounts::default(); num_classes];
    let mut correct = 0;
    for (&p, &t) in pred.iter().zip(truth) {
        if p == t {
            counts[t].tp += 1;
            correct += 1;
        } else {
            counts[p].fp += 1;
            counts[t].fn_ += 1;
        }
    }
    summarise(&counts, correct, pred.len())
}

/// Multi-label scores over per-class decisions. Accuracy is the exact-match
/// ratio.
pub fn multi_label_scores(pred: &[Vec<bool>], truth: &[Vec<bool>], num_classes: usize) -> F1Scores {
    assert_eq!(pred.len(), truth.len());
    let mut counts = vec![ClassCounts::default(); num_classes];
    let mut correct = 0;
    for (p, t) in pred.iter().zip(truth) {
        if p == t {
            correct += 1;
        }
        for c in 0..num_classes {
            match (p[c], t[c]) {
                (true, true) => counts[c].tp += 1,
                (true, false) => counts[c].fp += 1,
                (false, true) => counts[c].fn_ += 1,
                (false, false) => {}
            }
        }
    }
    summarise(&counts, correct, pred.len())
}

/// Area under the ROC curve as the Mann–Whitney rank statistic; tied scores
/// get average ranks. `None` when either class is absent.
pub fn roc_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), positive.len());
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += avg_rank * order[i..=j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    pub threshold: f64,
}

/// ROC points at every distinct score threshold, from the highest threshold
/// down; the first point is `(0, 0)` at `+inf`.
pub fn roc_curve(scores: &[f64], positive: &[bool]) -> Vec<RocPoint> {
    let n_pos = positive.iter().filter(|&&p| p).count().max(1) as f64;
    let n_neg = positive.iter().filter(|&&p| !p).count().max(1) as f64;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if positive[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / n_neg,
            tpr: tp as f64 / n_pos,
            threshold: s,
        });
    }
    points
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let t = [0, 1, 2, 2, 1];
        let s = single_label_scores(&t, &t, 3);
        assert_eq!((s.micro, s.macro_, s.accuracy), (1.0, 1.0, 1.0));
    }

    #[test]
    fn six_example_confusion() {
        // TP=2, FP=1, FN=1, TN=2 with class 1 as positive.
        let truth = [1, 1, 1, 0, 0, 0];
        let pred = [1, 1, 0, 1, 0, 0];
        let s = single_label_scores(&pred, &truth, 2);
        assert!((s.micro - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.accuracy - 2.0 / 3.0).abs() < 1e-15);
        // class 1: 2·2/(4+1+1); class 0: 2·2/(4+1+1)
        assert!((s.macro_ - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn macro_differs_from_micro_on_imbalance() {
        let truth = [0, 0, 0, 0, 1];
        let pred = [0, 0, 0, 0, 0];
        let s = single_label_scores(&pred, &truth, 2);
        assert!((s.micro - 0.8).abs() < 1e-15);
        // class 0 F1 = 8/9, class 1 F1 = 0
        assert!((s.macro_ - 4.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn auc_perfect_and_ties() {
        let pos = [true, false, true, false];
        assert_eq!(roc_auc(&[1.0, 0.0, 1.0, 0.0], &pos), Some(1.0));
        assert_eq!(roc_auc(&[0.5; 4], &pos), Some(0.5));
        assert_eq!(roc_auc(&[0.0, 1.0, 0.0, 1.0], &pos), Some(0.0));
        assert_eq!(roc_auc(&[0.3, 0.2], &[true, true]), None);
    }

    #[test]
    fn auc_matches_pair_counting() {
        let scores = [0.1, 0.4, 0.35, 0.8, 0.4, 0.9, 0.05];
        let pos = [false, true, false, true, false, true, false];
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if pos[i] && !pos[j] {
                    pairs += 1.0;
                    wins += if scores[i] > scores[j] {
                        1.0
                    } else if scores[i] == scores[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        assert!((roc_auc(&scores, &pos).unwrap() - wins / pairs).abs() < 1e-15);
    }

    #[test]
    fn roc_curve_ends_at_one_one() {
        let pts = roc_curve(&[0.9, 0.1, 0.5, 0.5], &[true, false, true, false]);
        let last = pts.last().unwrap();
        assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
        assert_eq!(pts.len(), 4);
        assert!(pts.windows(2).all(|w| w[0].fpr <= w[1].fpr && w[0].tpr <= w[1].tpr));
    }

    #[test]
    fn multi_label_pooling() {
        let truth = vec![vec![true, false], vec![true, true]];
        let pred = vec![vec![true, false], vec![false, true]];
        let s = multi_label_scores(&pred, &truth, 2);
        // pooled: tp=2, fp=0, fn=1
        assert!((s.micro - 0.8).abs() < 1e-15);
        assert!((s.accuracy - 0.5).abs() < 1e-15);
    }
}
