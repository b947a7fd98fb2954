//! Critical values for the two-sample KS statistic: the large-sample formula
//! and the bundled small-sample table.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bundled table: `n1,n2,alpha,critical_d` with `critical_d` an exact
/// fraction or `untestable`. Generated by `scripts/gen_ks_table.py` from the
/// exact no-ties null distribution.
pub const KS_TABLE_CSV: &str = include_str!("../../data/ks_critical.csv");

/// Largest n1 / n2 covered by the bundled table.
pub const KS_TABLE_MAX_N: u64 = 12;

/// Significance levels covered by the bundled table.
pub const KS_TABLE_ALPHAS: [f64; 2] = [0.05, 0.01];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CriticalMethod {
    AsymptoticFormula,
    Table,
}

/// A tabulated critical D as the exact fraction `num / den`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fraction {
    pub num: u64,
    pub den: u64,
}

impl Fraction {
    pub fn value(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KsCritical {
    /// Large samples: reject when `D > threshold`.
    Formula { threshold: f64 },
    /// Small samples: reject when `D >= critical_d`.
    Table { critical_d: Fraction },
    /// Table cell where no observed D can reach significance.
    Untestable,
}

impl KsCritical {
    pub fn method(&self) -> CriticalMethod {
        match self {
            KsCritical::Formula { .. } => CriticalMethod::AsymptoticFormula,
            _ => CriticalMethod::Table,
        }
    }

    pub fn threshold(&self) -> Option<f64> {
        match *self {
            KsCritical::Formula { threshold } => Some(threshold),
            KsCritical::Table { critical_d } => Some(critical_d.value()),
            KsCritical::Untestable => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct TableKey {
    pub n1: u64,
    pub n2: u64,
    /// alpha in units of 1e-4 (500 = 0.05).
    pub alpha_bp: u32,
}

pub type KsTable = BTreeMap<TableKey, Option<Fraction>>;

fn alpha_bp(alpha: f64) -> Option<u32> {
    KS_TABLE_ALPHAS
        .iter()
        .find(|&&a| (a - alpha).abs() < 1e-12)
        .map(|&a| (a * 1e4).round() as u32)
}

fn parse_fraction(s: &str) -> Option<Fraction> {
    let (n, d) = s.split_once('/')?;
    let f = Fraction {
        num: n.trim().parse().ok()?,
        den: d.trim().parse().ok()?,
    };
    (f.den > 0 && f.num <= f.den).then_some(f)
}

/// Parses a table in the bundled CSV layout.
pub fn parse_ks_table(csv_text: &str) -> Result<KsTable> {
    let mut rdr = csv::Reader::from_reader(csv_text.as_bytes());
    let mut table = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let bad = |msg: &str| Error::Malformed {
            path: "ks_critical.csv".into(),
            line,
            msg: msg.to_string(),
        };
        if rec.len() != 4 {
            return Err(bad("expected n1,n2,alpha,critical_d"));
        }
        let n1: u64 = rec[0].parse().map_err(|_| bad("bad n1"))?;
        let n2: u64 = rec[1].parse().map_err(|_| bad("bad n2"))?;
        let alpha: f64 = rec[2].parse().map_err(|_| bad("bad alpha"))?;
        let alpha_bp = alpha_bp(alpha).ok_or_else(|| bad("alpha must be 0.05 or 0.01"))?;
        let cell = match &rec[3] {
            "untestable" => None,
            s => Some(parse_fraction(s).ok_or_else(|| bad("critical_d must be a fraction or untestable"))?),
        };
        table.insert(TableKey { n1, n2, alpha_bp }, cell);
    }
    Ok(table)
}

/// The bundled table, parsed once.
pub fn ks_table() -> &'static KsTable {
    static TABLE: OnceLock<KsTable> = OnceLock::new();
    TABLE.get_or_init(|| parse_ks_table(KS_TABLE_CSV).expect("bundled KS table parses"))
}

/// `c(alpha) * sqrt((n1 + n2) / (n1 n2))` with `c(alpha) = sqrt(-ln(alpha/2) / 2)`.
pub fn ks_asymptotic_threshold(n1: u64, n2: u64, alpha: f64) -> f64 {
    let c = (-0.5 * (alpha / 2.0).ln()).sqrt();
    let (n1, n2) = (n1 as f64, n2 as f64);
    c * ((n1 + n2) / (n1 * n2)).sqrt()
}

pub fn uses_table(n1: u64, n2: u64) -> bool {
    n1 <= KS_TABLE_MAX_N && n2 <= KS_TABLE_MAX_N
}

/// Rejection threshold for the KS statistic at sample sizes `(n1, n2)`.
/// Small samples go through the table, which only covers alpha 0.05 / 0.01.
pub fn ks_critical_value(n1: u64, n2: u64, alpha: f64) -> Result<KsCritical> {
    if n1 == 0 || n2 == 0 {
        return Err(Error::EmptyCounts);
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("alpha must be in (0, 1), got {alpha}")));
    }
    if !uses_table(n1, n2) {
        return Ok(KsCritical::Formula {
            threshold: ks_asymptotic_threshold(n1, n2, alpha),
        });
    }
    let alpha_bp = alpha_bp(alpha).ok_or(Error::AlphaNotTabulated(alpha))?;
    match ks_table().get(&TableKey { n1, n2, alpha_bp }) {
        Some(Some(f)) => Ok(KsCritical::Table { critical_d: *f }),
        Some(None) => Ok(KsCritical::Untestable),
        None => Err(Error::AlphaNotTabulated(alpha)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formula_values() {
        assert!((ks_asymptotic_threshold(100, 100, 0.05) - 0.192065).abs() < 1e-6);
        assert!((ks_asymptotic_threshold(100, 100, 0.01) - 0.230181).abs() < 1e-6);
        assert!(((-0.5f64 * 0.025f64.ln()).sqrt() - 1.358102).abs() < 1e-6);
        assert!(((-0.5f64 * 0.005f64.ln()).sqrt() - 1.627624).abs() < 1e-6);
    }

    #[test]
    fn table_covers_grid() {
        let t = ks_table();
        assert_eq!(t.len(), 2 * 12 * 12);
        assert_eq!(
            t[&TableKey { n1: 10, n2: 10, alpha_bp: 500 }],
            Some(Fraction { num: 7, den: 10 })
        );
        assert_eq!(t[&TableKey { n1: 3, n2: 3, alpha_bp: 100 }], None);
    }

    #[test]
    fn small_sizes_use_table() {
        assert_eq!(ks_critical_value(3, 3, 0.01).unwrap(), KsCritical::Untestable);
        assert_eq!(ks_critical_value(10, 10, 0.05).unwrap().method(), CriticalMethod::Table);
        assert_eq!(
            ks_critical_value(13, 10, 0.05).unwrap().method(),
            CriticalMethod::AsymptoticFormula
        );
        assert!(matches!(ks_critical_value(5, 5, 0.1), Err(Error::AlphaNotTabulated(_))));
        assert!(ks_critical_value(50, 50, 0.1).is_ok());
        assert!(ks_critical_value(0, 5, 0.05).is_err());
    }

    #[test]
    fn smaller_alpha_larger_threshold() {
        for (n1, n2) in [(20, 30), (100, 100), (500, 40)] {
            let a = ks_critical_value(n1, n2, 0.05).unwrap().threshold().unwrap();
            let b = ks_critical_value(n1, n2, 0.01).unwrap().threshold().unwrap();
            assert!(b > a);
        }
        for n1 in 1..=12 {
            for n2 in 1..=12 {
                match (ks_critical_value(n1, n2, 0.05).unwrap(), ks_critical_value(n1, n2, 0.01).unwrap()) {
                    (KsCritical::Untestable, b) => assert_eq!(b, KsCritical::Untestable),
                    (a, KsCritical::Untestable) => assert!(a.threshold().is_some()),
                    (a, b) => assert!(b.threshold() >= a.threshold(), "{n1},{n2}"),
                }
            }
        }
    }

    #[test]
    fn rejects_bad_table_rows() {
        assert!(parse_ks_table("n1,n2,alpha,critical_d\n3,3,0.1,1/1\n").is_err());
        assert!(parse_ks_table("n1,n2,alpha,critical_d\n3,3,0.05,3/2\n").is_err());
        assert!(parse_ks_table("n1,n2,alpha,critical_d\n3,3,0.05,x\n").is_err());
    }
}
