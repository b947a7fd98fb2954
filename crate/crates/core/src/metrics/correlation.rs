use serde::Serialize;

use super::MisalignmentReport;
use crate::error::{Error, Result};
use crate::perm::DecisionKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorrelationTarget {
    Q(DecisionKind),
    Wasserstein,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Correlation {
    /// (question_id, entropy, y)
    pub points: Vec<(String, f64, f64)>,
    pub pearson: f64,
    pub spearman: f64,
}

fn check_series(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::UndefinedCorrelation("series lengths differ".into()));
    }
    if x.len() < 3 {
        return Err(Error::UndefinedCorrelation(format!("need at least 3 points, got {}", x.len())));
    }
    Ok(())
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_series(x, y)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("constant series".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Ranks starting at 1, ties share the average rank.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

/// Pearson correlation of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    check_series(x, y)?;
    pearson(&ranks(x), &ranks(y))
}

/// Entropy of each question against its Q score (or Wasserstein distance).
pub fn entropy_correlation(report: &MisalignmentReport, target: CorrelationTarget) -> Result<Correlation> {
    let mut points = Vec::new();
    for (qid, &h) in &report.entropy_by_question {
        let y = match target {
            CorrelationTarget::Q(kind) => report
                .q_by_question
                .iter()
                .find(|r| r.statistic == kind && &r.question == qid)
                .and_then(|r| r.q),
            CorrelationTarget::Wasserstein => report
                .wasserstein_by_question
                .as_ref()
                .and_then(|w| w.get(qid).copied()),
        };
        if let Some(y) = y {
            points.push((qid.clone(), h, y));
        }
    }
    let x: Vec<f64> = points.iter().map(|p| p.1).collect();
    let y: Vec<f64> = points.iter().map(|p| p.2).collect();
    Ok(Correlation {
        pearson: pearson(&x, &y)?,
        spearman: spearman(&x, &y)?,
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line() {
        let x = [0.1, 0.5, 0.9, 1.3, 2.0];
        let y: Vec<f64> = x.iter().map(|v| 0.3 + 2.5 * v).collect();
        assert!((pearson(&x, &y).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&x, &y).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_is_undefined() {
        assert!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
        assert!(spearman(&[1.0, 2.0, 3.0], &[4.0, 4.0, 4.0]).is_err());
        assert!(pearson(&[1.0, 2.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn five_point_hand_fixture() {
        // x = 1..5, y = [2, 4, 5, 4, 5]: mean y 4, sxy = 6, sxx = 10, syy = 6,
        // r = 6 / sqrt(60) = 0.7745966692...
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let y = [2.0, 4.0, 5.0, 4.0, 5.0];
        assert!((pearson(&x, &y).unwrap() - 0.7745966692414834).abs() < 1e-12);
        // y ranks [1, 2.5, 4.5, 2.5, 4.5]: sxy = 7, syy = 9, rho = 7 / sqrt(90)
        assert!((spearman(&x, &y).unwrap() - 7.0 / 90f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn tie_ranks() {
        assert_eq!(ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }
}
