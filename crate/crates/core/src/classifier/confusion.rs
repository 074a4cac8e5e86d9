use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

/// Square count matrix, rows are reference classes and columns predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: Vec<String>) -> Self {
        let c = classes.len();
        ConfusionMatrix { classes, counts: vec![vec![0; c]; c] }
    }

    pub fn from_pairs(classes: Vec<String>, pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut m = ConfusionMatrix::new(classes);
        for (r, p) in pairs {
            m.add(r, p);
        }
        m
    }

    pub fn add(&mut self, reference: usize, predicted: usize) {
        self.counts[reference][predicted] += 1;
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.n_classes()).map(|c| self.counts[c][c]).sum()
    }

    pub fn row_sum(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    pub fn col_sum(&self, c: usize) -> u64 {
        self.counts.iter().map(|r| r[c]).sum()
    }

    /// Overall accuracy, trace over total. `None` for an empty matrix.
    pub fn overall_accuracy(&self) -> Option<f64> {
        let t = self.total();
        (t > 0).then(|| self.correct() as f64 / t as f64)
    }

    /// Producer's accuracy (recall) of class `c`.
    pub fn producers_accuracy(&self, c: usize) -> Option<f64> {
        let r = self.row_sum(c);
        (r > 0).then(|| self.counts[c][c] as f64 / r as f64)
    }

    /// User's accuracy (precision) of class `c`.
    pub fn users_accuracy(&self, c: usize) -> Option<f64> {
        let s = self.col_sum(c);
        (s > 0).then(|| self.counts[c][c] as f64 / s as f64)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("reference\\predicted");
        for c in &self.classes {
            let _ = write!(s, ",{c}");
        }
        s.push('\n');
        for (name, row) in self.classes.iter().zip(&self.counts) {
            s.push_str(name);
            for v in row {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }

    /// Matrix followed by OA and per-class PA / UA lines, percentages.
    pub fn summary_table(&self) -> String {
        self.summary_table_with("OA [%]", self.overall_accuracy())
    }

    /// Like [`summary_table`](Self::summary_table) with a caller-defined OA row.
    pub fn summary_table_with(&self, oa_label: &str, oa: Option<f64>) -> String {
        let w = self.classes.iter().map(|c| c.len()).max().unwrap_or(4).max(7);
        let mut s = format!("{:>w$}", "ref\\pred");
        for c in &self.classes {
            let _ = write!(s, " {c:>w$}");
        }
        s.push('\n');
        for (name, row) in self.classes.iter().zip(&self.counts) {
            let _ = write!(s, "{name:>w$}");
            for v in row {
                let _ = write!(s, " {v:>w$}");
            }
            s.push('\n');
        }
        let pct = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{:.2}", 100.0 * x));
        let _ = writeln!(s, "{oa_label}: {}", pct(oa));
        let _ = write!(s, "{:>w$}", "PA [%]");
        for c in 0..self.n_classes() {
            let _ = write!(s, " {:>w$}", pct(self.producers_accuracy(c)));
        }
        s.push('\n');
        let _ = write!(s, "{:>w$}", "UA [%]");
        for c in 0..self.n_classes() {
            let _ = write!(s, " {:>w$}", pct(self.users_accuracy(c)));
        }
        s.push('\n');
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn perfect_diagonal() {
        let m = ConfusionMatrix { classes: names(2), counts: vec![vec![50, 0], vec![0, 50]] };
        assert_eq!(m.overall_accuracy(), Some(1.0));
        for c in 0..2 {
            assert_eq!(m.producers_accuracy(c), Some(1.0));
            assert_eq!(m.users_accuracy(c), Some(1.0));
        }
    }

    #[test]
    fn symmetric_errors() {
        let m = ConfusionMatrix { classes: names(2), counts: vec![vec![45, 5], vec![5, 45]] };
        assert!((m.overall_accuracy().unwrap() - 0.9).abs() < 1e-12);
        for c in 0..2 {
            assert!((m.producers_accuracy(c).unwrap() - 0.9).abs() < 1e-12);
            assert!((m.users_accuracy(c).unwrap() - 0.9).abs() < 1e-12);
        }
    }

    #[test]
    fn undefined_ratios_are_absent() {
        let m = ConfusionMatrix { classes: names(3), counts: vec![vec![3, 0, 0], vec![1, 0, 0], vec![0, 0, 0]] };
        assert_eq!(m.producers_accuracy(2), None);
        assert_eq!(m.users_accuracy(1), None);
        assert!(m.summary_table().contains("OA [%]: 75.00"));
    }
}
