use serde::{Deserialize, Serialize};

use crate::classifier::ConfusionMatrix;
use crate::error::{Error, Result};
use crate::skeleton::BranchLabel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointScore {
    /// Classes Trunk, LB1..LBn, SB, Rest; rows reference, columns predicted.
    pub matrix: ConfusionMatrix,
    /// Over reference points that are not Rest.
    pub overall_accuracy: f64,
    pub producers_accuracy: Vec<Option<f64>>,
    pub users_accuracy: Vec<Option<f64>>,
    /// Share of all points predicted Rest.
    pub rest_fraction: f64,
    /// Predicted leading-branch index → reference index it was aligned to.
    pub lb_alignment: Vec<(usize, usize)>,
}

fn max_lb(labels: &[BranchLabel]) -> usize {
    labels
        .iter()
        .filter_map(|l| match l {
            BranchLabel::Leading(i) => Some(*i),
            _ => None,
        })
        .max()
        .unwrap_or(0)
}

/// Compares per-point branch labels. Predicted leading branches are
/// renumbered to the reference branch they overlap most (greedy on the
/// overlap matrix, largest overlap first); unpaired ones get fresh indices.
pub fn score_point_assignment(pred: &[BranchLabel], reference: &[BranchLabel]) -> Result<PointScore> {
    if pred.len() != reference.len() {
        return Err(Error::data(format!(
            "labelings cover different point sets ({} vs {} points)",
            pred.len(),
            reference.len()
        )));
    }
    let (np, nr) = (max_lb(pred), max_lb(reference));
    let mut overlap = vec![vec![0u64; nr + 1]; np + 1];
    for (p, r) in pred.iter().zip(reference) {
        if let (BranchLabel::Leading(i), BranchLabel::Leading(j)) = (p, r) {
            overlap[*i][*j] += 1;
        }
    }
    let mut pairs: Vec<(u64, usize, usize)> = Vec::new();
    for i in 1..=np {
        for j in 1..=nr {
            if overlap[i][j] > 0 {
                pairs.push((overlap[i][j], i, j));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.cmp(&a.0).then(a.2.cmp(&b.2)).then(a.1.cmp(&b.1)));
    let mut map = vec![0usize; np + 1];
    let mut ref_used = vec![false; nr + 1];
    let mut lb_alignment = Vec::new();
    for (_, i, j) in pairs {
        if map[i] == 0 && !ref_used[j] {
            map[i] = j;
            ref_used[j] = true;
            lb_alignment.push((i, j));
        }
    }
    let mut next = nr;
    for m in map.iter_mut().skip(1) {
        if *m == 0 {
            next += 1;
            *m = next;
        }
    }
    lb_alignment.sort_unstable();
    let n_lb = next;
    let mut classes = vec!["Trunk".to_string()];
    classes.extend((1..=n_lb).map(|i| format!("LB{i}")));
    classes.push("SB".into());
    classes.push("Rest".into());
    let index = |l: BranchLabel, remap: bool| match l {
        BranchLabel::Trunk => 0,
        BranchLabel::Leading(i) => {
            if remap {
                map[i]
            } else {
                i
            }
        }
        BranchLabel::Small => n_lb + 1,
        BranchLabel::Rest => n_lb + 2,
    };
    let matrix = ConfusionMatrix::from_pairs(classes, pred.iter().zip(reference).map(|(&p, &r)| (index(r, false), index(p, true))));
    let rest = n_lb + 2;
    let scored: u64 = (0..rest).map(|c| matrix.row_sum(c)).sum();
    let correct: u64 = (0..rest).map(|c| matrix.counts[c][c]).sum();
    let overall_accuracy = if scored > 0 { correct as f64 / scored as f64 } else { 0.0 };
    let k = matrix.n_classes();
    let producers_accuracy = (0..k).map(|c| matrix.producers_accuracy(c)).collect();
    let users_accuracy = (0..k).map(|c| matrix.users_accuracy(c)).collect();
    let n = pred.len().max(1) as f64;
    let rest_fraction = pred.iter().filter(|&&l| l == BranchLabel::Rest).count() as f64 / n;
    Ok(PointScore { matrix, overall_accuracy, producers_accuracy, users_accuracy, rest_fraction, lb_alignment })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use BranchLabel::*;

    fn sample() -> Vec<BranchLabel> {
        let mut v = vec![Trunk; 30];
        v.extend([Leading(1); 20]);
        v.extend([Leading(2); 15]);
        v.extend([Leading(3); 10]);
        v.extend([Small; 4]);
        v.extend([Rest; 6]);
        v
    }

    #[test]
    fn identical() {
        let s = score_point_assignment(&sample(), &sample()).unwrap();
        assert_eq!(s.overall_accuracy, 1.0);
        assert_eq!(s.matrix.classes, ["Trunk", "LB1", "LB2", "LB3", "SB", "Rest"]);
        assert!((s.rest_fraction - 6.0 / 85.0).abs() < 1e-15);
    }

    #[test]
    fn permuted_numbering() {
        let perm = |l: BranchLabel| match l {
            Leading(1) => Leading(3),
            Leading(2) => Leading(1),
            Leading(3) => Leading(2),
            o => o,
        };
        let pred: Vec<_> = sample().into_iter().map(perm).collect();
        let s = score_point_assignment(&pred, &sample()).unwrap();
        assert_eq!(s.overall_accuracy, 1.0);
        assert_eq!(s.lb_alignment, vec![(1, 2), (2, 3), (3, 1)]);
    }

    #[test]
    fn rest_reference_points_excluded() {
        let r = vec![Trunk, Trunk, Rest, Rest];
        let p = vec![Trunk, Leading(1), Trunk, Trunk];
        let s = score_point_assignment(&p, &r).unwrap();
        assert_eq!(s.overall_accuracy, 0.5);
        assert_eq!(s.rest_fraction, 0.0);
        assert_eq!(s.matrix.classes, ["Trunk", "LB1", "SB", "Rest"]);
    }

    #[test]
    fn size_mismatch() {
        assert!(score_point_assignment(&[Trunk], &[Trunk, Rest]).is_err());
    }

    proptest! {
        #[test]
        fn oa_matches_recount(codes in proptest::collection::vec((0i64..6, 0i64..6), 1..300)) {
            let lab = |c: i64| match c { 0 => Trunk, 5 => Rest, 4 => Small, i => Leading(i as usize) };
            let p: Vec<_> = codes.iter().map(|c| lab(c.0)).collect();
            let r: Vec<_> = codes.iter().map(|c| lab(c.1)).collect();
            let s = score_point_assignment(&p, &r).unwrap();
            // Recount with the reported alignment.
            let map = |l: BranchLabel| match l {
                Leading(i) => s.lb_alignment.iter().find(|a| a.0 == i).map(|a| Leading(a.1)),
                o => Some(o),
            };
            let scored: Vec<usize> = (0..p.len()).filter(|&i| r[i] != Rest).collect();
            let ok = scored.iter().filter(|&&i| map(p[i]) == Some(r[i])).count();
            let expect = if scored.is_empty() { 0.0 } else { ok as f64 / scored.len() as f64 };
            prop_assert!((s.overall_accuracy - expect).abs() < 1e-12);
            prop_assert_eq!(s.matrix.total() as usize, p.len());
        }
    }
}
