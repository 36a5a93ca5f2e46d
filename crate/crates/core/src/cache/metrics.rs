use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::ArchSpec;
use crate::textfmt::{self, Provenance};
use crate::{Error, Result};

/// Selector/predictor outcome counts on a measurement set.
///
/// Positive = the selector fires; true = the predictor agrees with the base model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn hits(&self) -> u64 {
        self.tp + self.fp
    }

    pub fn hit_rate(&self) -> f64 {
        if self.total() == 0 {
            0.0
        } else {
            self.hits() as f64 / self.total() as f64
        }
    }

    /// Agreement among hits, `TP / (TP + FP)`; 1 when nothing hits.
    pub fn accuracy(&self) -> f64 {
        if self.hits() == 0 {
            1.0
        } else {
            self.tp as f64 / self.hits() as f64
        }
    }

    /// Fraction of lookups that do not serve a wrong prediction, `1 - FP / total`.
    pub fn unconditional_accuracy(&self) -> f64 {
        if self.total() == 0 {
            1.0
        } else {
            1.0 - self.fp as f64 / self.total() as f64
        }
    }

    pub fn record(&mut self, hit: bool, agrees: bool) {
        match (hit, agrees) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }
}

/// Analytic lookup cost: latency from MAC counts, memory from parameter counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostModel {
    pub ms_per_mac: f64,
    pub bytes_per_param: f64,
    pub overhead_ms: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            ms_per_mac: 2.0e-7,
            bytes_per_param: 4.0,
            overhead_ms: 0.05,
        }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.ms_per_mac > 0.0) || !(self.bytes_per_param > 0.0) || !(self.overhead_ms >= 0.0) {
            return Err(Error::invalid("cost model", "ms_per_mac and bytes_per_param must be > 0"));
        }
        Ok(())
    }

    pub fn lookup_ms(&self, macs: usize) -> f64 {
        self.ms_per_mac * macs as f64 + self.overhead_ms
    }

    pub fn memory_mb(&self, params: usize) -> f64 {
        self.bytes_per_param * params as f64 / (1u64 << 20) as f64
    }
}

/// Measured `(H, A, T, M)` of one cache variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantMetrics {
    pub layer: usize,
    pub variant: usize,
    pub arch: ArchSpec,
    pub hit_rate: f64,
    pub accuracy: f64,
    pub lookup_ms: f64,
    pub memory_mb: f64,
    pub confusion: Option<Confusion>,
}

impl VariantMetrics {
    pub fn from_confusion(
        layer: usize,
        variant: usize,
        arch: ArchSpec,
        confusion: Confusion,
        lookup_ms: f64,
        memory_mb: f64,
    ) -> Self {
        Self {
            layer,
            variant,
            arch,
            hit_rate: confusion.hit_rate(),
            accuracy: confusion.accuracy(),
            lookup_ms,
            memory_mb,
            confusion: Some(confusion),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |r: String| Err(Error::invalid("variant metrics", r));
        if self.layer == 0 || self.variant == 0 {
            return bad("layer and variant ids are 1-based".into());
        }
        if !(0.0..=1.0).contains(&self.hit_rate) || !(0.0..=1.0).contains(&self.accuracy) {
            return bad(format!("H={} A={} outside [0,1]", self.hit_rate, self.accuracy));
        }
        if !(self.lookup_ms >= 0.0) || !(self.memory_mb >= 0.0) {
            return bad("negative lookup latency or memory".into());
        }
        if let Some(c) = self.confusion {
            if c.total() == 0 {
                return bad("empty confusion counts".into());
            }
            if c.hit_rate() != self.hit_rate || c.accuracy() != self.accuracy {
                return bad(format!(
                    "H/A do not match confusion counts for layer {} variant {}",
                    self.layer, self.variant
                ));
            }
        }
        Ok(())
    }
}

const METRICS_FORMAT: &str = "metrics";
const METRICS_COLUMNS: &str = "layer\tvariant\tarch\thit_rate\taccuracy\tlookup_ms\tmemory_mb\ttp\tfp\ttn\tfn";

/// Tab-separated metrics file:
///
/// ```text
/// # cachenet-metrics v1
/// # config-hash=<hex> tool-version=<semver>      (optional)
/// layer variant arch hit_rate accuracy lookup_ms memory_mb tp fp tn fn
/// 3     2       Pool(8192) 0.341 0.967 1.32 33 - - - -
/// ```
///
/// Columns are tab-separated; reals use the shortest representation that
/// round-trips; unknown confusion counts are written as `-`.
pub fn write_metrics(rows: &[VariantMetrics], prov: Option<&Provenance>) -> String {
    let mut out = String::new();
    textfmt::write_header(&mut out, "metrics", 1, prov);
    out.push_str(METRICS_COLUMNS);
    out.push('\n');
    for m in rows {
        let _ = write!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            m.layer, m.variant, m.arch, m.hit_rate, m.accuracy, m.lookup_ms, m.memory_mb
        );
        match m.confusion {
            Some(c) => {
                let _ = writeln!(out, "\t{}\t{}\t{}\t{}", c.tp, c.fp, c.tn, c.fn_);
            }
            None => out.push_str("\t-\t-\t-\t-\n"),
        }
    }
    out
}

pub fn parse_metrics(text: &str) -> Result<Vec<VariantMetrics>> {
    let mut lines = textfmt::numbered(text);
    textfmt::read_header(&mut lines, METRICS_FORMAT, "metrics", 1)?;
    match lines.next() {
        Some((_, l)) if l.trim_end() == METRICS_COLUMNS => {}
        Some((n, _)) => return Err(Error::parse(METRICS_FORMAT, n, "missing column header")),
        None => return Err(Error::parse(METRICS_FORMAT, 1, "missing column header")),
    }
    let mut rows: Vec<VariantMetrics> = Vec::new();
    for (n, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 11 {
            return Err(Error::parse(METRICS_FORMAT, n, format!("expected 11 columns, found {}", f.len())));
        }
        let layer = textfmt::parse_usize(f[0], METRICS_FORMAT, n, "layer")?;
        let variant = textfmt::parse_usize(f[1], METRICS_FORMAT, n, "variant")?;
        let arch: ArchSpec = f[2]
            .parse()
            .map_err(|e: Error| Error::parse(METRICS_FORMAT, n, e.to_string()))?;
        let counts = &f[7..11];
        let confusion = if counts.iter().all(|c| *c == "-") {
            None
        } else {
            let mut c = [0u64; 4];
            for (slot, s) in c.iter_mut().zip(counts) {
                *slot = s
                    .parse()
                    .map_err(|_| Error::parse(METRICS_FORMAT, n, "confusion counts must be integers or `-`"))?;
            }
            if c.iter().try_fold(0u64, |a, &b| a.checked_add(b)).is_none() {
                return Err(Error::parse(METRICS_FORMAT, n, "confusion counts overflow"));
            }
            Some(Confusion {
                tp: c[0],
                fp: c[1],
                tn: c[2],
                fn_: c[3],
            })
        };
        let m = VariantMetrics {
            layer,
            variant,
            arch,
            hit_rate: textfmt::parse_f64(f[3], METRICS_FORMAT, n, "hit_rate")?,
            accuracy: textfmt::parse_f64(f[4], METRICS_FORMAT, n, "accuracy")?,
            lookup_ms: textfmt::parse_f64(f[5], METRICS_FORMAT, n, "lookup_ms")?,
            memory_mb: textfmt::parse_f64(f[6], METRICS_FORMAT, n, "memory_mb")?,
            confusion,
        };
        m.validate()
            .map_err(|e| Error::parse(METRICS_FORMAT, n, e.to_string()))?;
        if rows.iter().any(|r| r.layer == layer && r.variant == variant) {
            return Err(Error::parse(
                METRICS_FORMAT,
                n,
                format!("duplicate row for layer {layer} variant {variant}"),
            ));
        }
        rows.push(m);
    }
    Ok(rows)
}

/// Published CPU trade-off measurements for blocks 3 and 6 of an 8-block
/// ResNet-18 (variant 1 = FC(1024), 2 = Pool(8192), 3 = Conv(3,1)).
///
/// FC(1024) at block 3 carries the unrounded 38.75% hit rate.
pub fn reference_fixture() -> Vec<VariantMetrics> {
    let row = |layer, variant, arch, accuracy, hit_rate, lookup_ms, memory_mb| VariantMetrics {
        layer,
        variant,
        arch,
        hit_rate,
        accuracy,
        lookup_ms,
        memory_mb,
        confusion: None,
    };
    let fc = ArchSpec::Fc { hidden: 1024 };
    let pool = ArchSpec::Pool { size: 8192 };
    let conv = ArchSpec::Conv { kernel: 3, stride: 1 };
    vec![
        row(3, 1, fc, 0.973, 0.3875, 6.08, 268.0),
        row(3, 2, pool, 0.967, 0.341, 1.32, 33.0),
        row(3, 3, conv, 0.962, 0.204, 1.66, 2.0),
        row(6, 1, fc, 0.995, 0.629, 2.94, 134.0),
        row(6, 2, pool, 0.962, 0.544, 0.64, 33.0),
        row(6, 3, conv, 0.993, 0.494, 0.68, 0.8),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confusion_arithmetic() {
        let c = Confusion {
            tp: 5,
            fp: 0,
            tn: 3,
            fn_: 2,
        };
        assert_eq!(c.hit_rate(), 0.5);
        assert_eq!(c.accuracy(), 1.0);
        let none = Confusion {
            tp: 0,
            fp: 0,
            tn: 4,
            fn_: 6,
        };
        assert_eq!(none.hit_rate(), 0.0);
        assert_eq!(none.accuracy(), 1.0);
    }

    #[test]
    fn fixture_round_trips_bit_exactly() {
        let rows = reference_fixture();
        let text = write_metrics(&rows, Some(&Provenance::new("feed")));
        let back = parse_metrics(&text).unwrap();
        assert_eq!(back, rows);
        let fc3 = &back[0];
        assert_eq!(fc3.accuracy.to_bits(), 0.973f64.to_bits());
        assert_eq!(fc3.lookup_ms.to_bits(), 6.08f64.to_bits());
        assert_eq!(fc3.memory_mb, 268.0);
    }

    #[test]
    fn mismatched_counts_rejected() {
        let text = format!(
            "# cachenet-metrics v1\n{METRICS_COLUMNS}\n1\t1\tFC(8)\t0.5\t1\t0.1\t0.2\t5\t0\t3\t2\n"
        );
        assert!(parse_metrics(&text).is_ok());
        let bad = text.replace("\t0.5\t", "\t0.6\t");
        assert!(parse_metrics(&bad).is_err());
    }

    #[test]
    fn malformed_rows_rejected() {
        let head = format!("# cachenet-metrics v1\n{METRICS_COLUMNS}\n");
        for row in [
            "1\t1\tFC(8)\t0.5\t1\t0.1\t0.2\t-\t-\t-",
            "1\t1\tFC(8)\t1.5\t1\t0.1\t0.2\t-\t-\t-\t-",
            "1\t1\tXX(8)\t0.5\t1\t0.1\t0.2\t-\t-\t-\t-",
            "0\t1\tFC(8)\t0.5\t1\t0.1\t0.2\t-\t-\t-\t-",
            "1\t1\tFC(8)\tNaN\t1\t0.1\t0.2\t-\t-\t-\t-",
        ] {
            assert!(parse_metrics(&format!("{head}{row}\n")).is_err(), "{row}");
        }
        let dup = format!("{head}1\t1\tFC(8)\t0.5\t1\t0.1\t0.2\t-\t-\t-\t-\n1\t1\tFC(8)\t0.5\t1\t0.1\t0.2\t-\t-\t-\t-\n");
        assert!(parse_metrics(&dup).is_err());
    }
}
