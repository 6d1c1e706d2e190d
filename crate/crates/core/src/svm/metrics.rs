use std::io::Write;

use serde::{Deserialize, Serialize};

use super::MODULE;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionMetrics {
    pub mape: f64,
    pub nrmse: f64,
    pub n: usize,
}

/// MAPE in percent and `sqrt(Σ(y−ŷ)² / Σy²)`.
pub fn evaluate_regressor(y: &[f64], predicted: &[f64]) -> Result<RegressionMetrics> {
    if y.is_empty() || y.len() != predicted.len() {
        return Err(Error::data(MODULE, format!("{} labels vs {} predictions", y.len(), predicted.len())));
    }
    if y.iter().any(|v| *v == 0.0) {
        return Err(Error::data(MODULE, "MAPE is undefined for zero labels"));
    }
    let n = y.len() as f64;
    let mape = y.iter().zip(predicted).map(|(a, b)| ((a - b) / a).abs()).sum::<f64>() / n * 100.0;
    let sse: f64 = y.iter().zip(predicted).map(|(a, b)| (a - b) * (a - b)).sum();
    let ss: f64 = y.iter().map(|a| a * a).sum();
    Ok(RegressionMetrics { mape, nrmse: (sse / ss).sqrt(), n: y.len() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    /// `counts[true][predicted]`.
    pub counts: Vec<Vec<usize>>,
    pub class_names: Vec<String>,
}

impl ClassificationMetrics {
    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    /// Counts as percentages of all cases.
    pub fn percentages(&self) -> Vec<Vec<f64>> {
        let total = self.total().max(1) as f64;
        self.counts.iter().map(|r| r.iter().map(|&c| c as f64 / total * 100.0).collect()).collect()
    }

    /// Largest off-diagonal cell as `(true, predicted, count)`.
    pub fn dominant_confusion(&self) -> Option<(usize, usize, usize)> {
        let mut best: Option<(usize, usize, usize)> = None;
        for (i, row) in self.counts.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                if i != j && c > 0 && best.is_none_or(|b| c > b.2) {
                    best = Some((i, j, c));
                }
            }
        }
        best
    }

    /// Two blocks, counts then percentages, rows are true labels.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let err = |e: csv::Error| Error::data(MODULE, format!("writing confusion matrix: {e}"));
        let pct = self.percentages();
        for (unit, rows) in [("count", None), ("percent", Some(&pct))] {
            let mut header = vec!["unit".to_string(), "true".to_string()];
            header.extend(self.class_names.iter().cloned());
            header.push("sum".into());
            out.write_record(&header).map_err(err)?;
            for (i, name) in self.class_names.iter().enumerate() {
                let mut rec = vec![unit.to_string(), name.clone()];
                match rows {
                    None => {
                        rec.extend(self.counts[i].iter().map(|c| c.to_string()));
                        rec.push(self.counts[i].iter().sum::<usize>().to_string());
                    }
                    Some(p) => {
                        rec.extend(p[i].iter().map(|c| format!("{c:.2}")));
                        rec.push(format!("{:.2}", p[i].iter().sum::<f64>()));
                    }
                }
                out.write_record(&rec).map_err(err)?;
            }
        }
        out.flush().map_err(|e| Error::data(MODULE, format!("writing confusion matrix: {e}")))
    }
}

pub fn evaluate_classifier(truth: &[usize], predicted: &[usize], class_names: &[&str]) -> Result<ClassificationMetrics> {
    let g = class_names.len();
    if truth.is_empty() || truth.len() != predicted.len() {
        return Err(Error::data(MODULE, format!("{} labels vs {} predictions", truth.len(), predicted.len())));
    }
    let mut counts = vec![vec![0usize; g]; g];
    for (&t, &p) in truth.iter().zip(predicted) {
        if t >= g || p >= g {
            return Err(Error::data(MODULE, format!("label outside 0..{g}")));
        }
        counts[t][p] += 1;
    }
    let correct: usize = (0..g).map(|i| counts[i][i]).sum();
    Ok(ClassificationMetrics {
        accuracy: correct as f64 / truth.len() as f64 * 100.0,
        counts,
        class_names: class_names.iter().map(|s| s.to_string()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regression_arithmetic() {
        let r = evaluate_regressor(&[2.0, 4.0], &[1.0, 5.0]).unwrap();
        assert!((r.mape - 37.5).abs() < 1e-12);
        assert!((r.nrmse - (0.1f64).sqrt()).abs() < 1e-12);
        let p = evaluate_regressor(&[1.0, -3.0], &[1.0, -3.0]).unwrap();
        assert_eq!((p.mape, p.nrmse), (0.0, 0.0));
    }

    #[test]
    fn confusion_rows_are_true_labels() {
        let truth = [0, 0, 0, 1, 1, 2];
        let pred = [0, 2, 2, 1, 0, 2];
        let m = evaluate_classifier(&truth, &pred, &["a", "b", "c"]).unwrap();
        assert_eq!(m.counts, vec![vec![1, 0, 2], vec![1, 1, 0], vec![0, 0, 1]]);
        assert_eq!(m.dominant_confusion(), Some((0, 2, 2)));
        let trace: usize = (0..3).map(|i| m.counts[i][i]).sum();
        assert!((m.accuracy - trace as f64 / 6.0 * 100.0).abs() < 1e-12);
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("unit,true,a,b,c,sum\ncount,a,1,0,2,3\n"));
    }

    #[test]
    fn rows_sum_to_class_counts() {
        // One true class spread 3546 / 164 / 490 over the predictions.
        let truth = vec![0; 4200];
        let predicted: Vec<usize> = [(0, 3546), (1, 164), (2, 490)].iter().flat_map(|&(c, n)| vec![c; n]).collect();
        let m = evaluate_classifier(&truth, &predicted, &["jump", "trend", "oscillation"]).unwrap();
        assert_eq!(m.counts[0].iter().sum::<usize>(), 4200);
        assert_eq!(m.dominant_confusion(), Some((0, 2, 490)));
        assert!((m.accuracy - 3546.0 / 42.0).abs() < 1e-12);
    }
}
