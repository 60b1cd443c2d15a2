//! Trial rows, CSV persistence and report rendering.
//!
//! Reports are built from trial rows alone, so regenerating them from a
//! saved `trials.csv` reproduces the original files byte for byte.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ReportOptions;
use crate::error::{Error, Result};
use crate::stats::{bin_counts, pooled_std, summarize, DetectionReport, Label, Summary};

/// Reports with more failed rows than this fraction are marked unreliable.
pub const UNRELIABLE_FAILURE_RATE: f64 = 0.10;

/// One row of `trials.csv`. Failed rows carry empty metric fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub arm: Label,
    pub attack: String,
    pub guidance: String,
    pub mean_l1: Option<f64>,
    pub nmae: Option<f64>,
    pub nmse: Option<f64>,
    pub roundtrip_nmse: Option<f64>,
    pub fp_converged: bool,
}

impl TrialRecord {
    pub fn failed(&self) -> bool {
        self.mean_l1.is_none()
    }
}

pub fn write_trials(path: &Path, records: &[TrialRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trials(path: &Path) -> Result<Vec<TrialRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows = r.deserialize().collect::<Result<Vec<TrialRecord>, _>>()?;
    if rows.is_empty() {
        return Err(Error::Format(format!("{} holds no trial rows", path.display())));
    }
    Ok(rows)
}

#[derive(Serialize, Deserialize)]
struct DistanceRow {
    distance: f64,
}

/// One-column CSV with header `distance`.
pub fn read_distances(path: &Path) -> Result<Vec<f64>> {
    let mut r = csv::Reader::from_path(path)?;
    let values = r
        .deserialize()
        .map(|row| row.map(|d: DistanceRow| d.distance))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::Format(format!("{}: bad distance {v}", path.display())));
    }
    Ok(values)
}

pub fn write_distances(path: &Path, values: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for &distance in values {
        w.serialize(DistanceRow { distance })?;
    }
    w.flush()?;
    Ok(())
}

/// Watermarked-arm extraction metrics of one configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractionSummary {
    pub nmae: Summary,
    pub nmse: Summary,
    pub mean_l1: Summary,
    pub roundtrip_nmse: Summary,
}

/// One `(attack, guidance)` pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigReport {
    pub attack: String,
    pub guidance: String,
    pub rows: usize,
    pub failed: usize,
    pub unconverged: usize,
    pub extraction: Option<ExtractionSummary>,
    pub detection: Option<DetectionReport>,
    /// `(mean_clean − mean_wm) / pooled std` of the distances.
    pub separation: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub trials: usize,
    pub rows: usize,
    pub failed_rows: usize,
    pub unreliable: bool,
    pub configs: Vec<ConfigReport>,
}

/// `(attack, guidance)` pairs in order of first appearance.
fn config_keys(records: &[TrialRecord]) -> Vec<(String, String)> {
    let mut keys: Vec<(String, String)> = Vec::new();
    for r in records {
        if !keys.iter().any(|(a, g)| *a == r.attack && *g == r.guidance) {
            keys.push((r.attack.clone(), r.guidance.clone()));
        }
    }
    keys
}

fn distances<'a>(rows: &[&'a TrialRecord], arm: Label) -> Vec<f64> {
    rows.iter()
        .filter(|r| r.arm == arm)
        .filter_map(|r| r.mean_l1)
        .collect()
}

fn summary_of(rows: &[&TrialRecord], f: impl Fn(&TrialRecord) -> Option<f64>) -> Result<Summary> {
    let v: Vec<f64> = rows.iter().filter_map(|r| f(r)).collect();
    summarize(&v)
}

impl ExperimentReport {
    pub fn from_records(records: &[TrialRecord], opts: &ReportOptions) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::invalid("no trial rows"));
        }
        opts.validate()?;
        let mut trials: Vec<usize> = records.iter().map(|r| r.trial).collect();
        trials.sort_unstable();
        trials.dedup();
        let failed_rows = records.iter().filter(|r| r.failed()).count();
        let mut configs = Vec::new();
        for (attack, guidance) in config_keys(records) {
            let rows: Vec<&TrialRecord> = records
                .iter()
                .filter(|r| r.attack == attack && r.guidance == guidance)
                .collect();
            let wm_rows: Vec<&TrialRecord> = rows
                .iter()
                .copied()
                .filter(|r| r.arm == Label::Watermarked && !r.failed())
                .collect();
            let extraction = if wm_rows.is_empty() {
                None
            } else {
                Some(ExtractionSummary {
                    nmae: summary_of(&wm_rows, |r| r.nmae)?,
                    nmse: summary_of(&wm_rows, |r| r.nmse)?,
                    mean_l1: summary_of(&wm_rows, |r| r.mean_l1)?,
                    roundtrip_nmse: summary_of(&wm_rows, |r| r.roundtrip_nmse)?,
                })
            };
            let wm = distances(&rows, Label::Watermarked);
            let clean = distances(&rows, Label::Clean);
            let detection = if wm.is_empty() || clean.is_empty() {
                None
            } else {
                Some(DetectionReport::compute(&wm, &clean, &opts.fpr_levels, opts.kld_bins)?)
            };
            let separation = detection.as_ref().and_then(|d| {
                let s = pooled_std(&d.watermarked, &d.clean);
                (s > 0.0).then(|| (d.clean.mean - d.watermarked.mean) / s)
            });
            configs.push(ConfigReport {
                rows: rows.len(),
                failed: rows.iter().filter(|r| r.failed()).count(),
                unconverged: rows.iter().filter(|r| !r.failed() && !r.fp_converged).count(),
                attack,
                guidance,
                extraction,
                detection,
                separation,
            });
        }
        Ok(Self {
            trials: trials.len(),
            rows: records.len(),
            failed_rows,
            unreliable: failed_rows as f64 > UNRELIABLE_FAILURE_RATE * records.len() as f64,
            configs,
        })
    }

    pub fn config(&self, attack: &str, guidance: &str) -> Option<&ConfigReport> {
        self.configs
            .iter()
            .find(|c| c.attack == attack && c.guidance == guidance)
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# Watermark detection report\n");
        let _ = writeln!(
            s,
            "Trials: {}. Rows: {}. Failed rows: {}.{}\n",
            self.trials,
            self.rows,
            self.failed_rows,
            if self.unreliable {
                " **Unreliable: more than 10% of rows failed.**"
            } else {
                ""
            }
        );

        let _ = writeln!(s, "## Watermark extraction (watermarked arm)\n");
        let _ = writeln!(s, "| attack | guidance | NMAE | NMSE | mean L1 | roundtrip NMSE | failed | unconverged |");
        let _ = writeln!(s, "|---|---|---|---|---|---|---|---|");
        for c in &self.configs {
            let (a, b, d, r) = match &c.extraction {
                Some(e) => (pm(&e.nmae), pm(&e.nmse), pm(&e.mean_l1), pm(&e.roundtrip_nmse)),
                None => na4(),
            };
            let _ = writeln!(
                s,
                "| {} | {} | {a} | {b} | {d} | {r} | {} | {} |",
                c.attack, c.guidance, c.failed, c.unconverged
            );
        }

        let _ = writeln!(s, "\n## Detection AUC\n");
        let _ = writeln!(s, "| attack | guidance | AUC |");
        let _ = writeln!(s, "|---|---|---|");
        for c in &self.configs {
            let auc = c.detection.as_ref().map_or("n/a".to_string(), |d| num(d.auc));
            let _ = writeln!(s, "| {} | {} | {auc} |", c.attack, c.guidance);
        }

        let levels: Vec<f64> = self
            .configs
            .iter()
            .find_map(|c| c.detection.as_ref())
            .map(|d| d.tpr_at.iter().map(|p| p.fpr).collect())
            .unwrap_or_default();
        let _ = writeln!(s, "\n## Operating points\n");
        let mut head = String::from("| attack | guidance |");
        let mut rule = String::from("|---|---|");
        for f in &levels {
            let _ = write!(head, " TPR@{}%FPR | threshold@{}% |", pct(*f), pct(*f));
            rule.push_str("---|---|");
        }
        let _ = writeln!(s, "{head}\n{rule}");
        for c in &self.configs {
            let _ = write!(s, "| {} | {} |", c.attack, c.guidance);
            match &c.detection {
                Some(d) => {
                    for p in &d.tpr_at {
                        let flag = if p.degenerate { "*" } else { "" };
                        let _ = write!(s, " {}{flag} | {} |", num(p.tpr), num(p.threshold));
                    }
                }
                None => {
                    for _ in &levels {
                        s.push_str(" n/a | n/a |");
                    }
                }
            }
            s.push('\n');
        }
        if self
            .configs
            .iter()
            .filter_map(|c| c.detection.as_ref())
            .any(|d| d.tpr_at.iter().any(|p| p.degenerate))
        {
            let _ = writeln!(s, "\n\\* fewer clean samples than 1/FPR; the quantile is coarse.");
        }

        let _ = writeln!(s, "\n## Distance distributions\n");
        let _ = writeln!(s, "| attack | guidance | watermarked | clean | separation (pooled SD) | symmetric KLD |");
        let _ = writeln!(s, "|---|---|---|---|---|---|");
        for c in &self.configs {
            match &c.detection {
                Some(d) => {
                    let sep = c.separation.map_or("n/a".to_string(), num);
                    let _ = writeln!(
                        s,
                        "| {} | {} | {} | {} | {sep} | {} |",
                        c.attack,
                        c.guidance,
                        pm(&d.watermarked),
                        pm(&d.clean),
                        num(d.skld)
                    );
                }
                None => {
                    let _ = writeln!(s, "| {} | {} | n/a | n/a | n/a | n/a |", c.attack, c.guidance);
                }
            }
        }
        s
    }
}

fn na4() -> (String, String, String, String) {
    let n = || "n/a".to_string();
    (n(), n(), n(), n())
}

fn pct(f: f64) -> String {
    let p = f * 100.0;
    if p == p.round() {
        format!("{p:.0}")
    } else {
        format!("{p}")
    }
}

/// Fixed four decimals, or scientific for tiny nonzero values.
fn num(v: f64) -> String {
    if v != 0.0 && v.abs() < 1e-3 {
        format!("{v:.3e}")
    } else {
        format!("{v:.4}")
    }
}

fn pm(s: &Summary) -> String {
    format!("{} ± {}", num(s.mean), num(s.std))
}

/// Distance histogram per `(attack, guidance)` pair on the pair's shared
/// range: `attack,guidance,bin,lower,upper,watermarked,clean`.
pub fn render_histogram(records: &[TrialRecord], bins: usize) -> Result<String> {
    if bins == 0 {
        return Err(Error::invalid("histogram needs at least one bin"));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["attack", "guidance", "bin", "lower", "upper", "watermarked", "clean"])?;
    for (attack, guidance) in config_keys(records) {
        let rows: Vec<&TrialRecord> = records
            .iter()
            .filter(|r| r.attack == attack && r.guidance == guidance)
            .collect();
        let wm = distances(&rows, Label::Watermarked);
        let clean = distances(&rows, Label::Clean);
        let all: Vec<f64> = wm.iter().chain(&clean).copied().collect();
        if all.is_empty() {
            continue;
        }
        let lo = all.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = all.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let cw = bin_counts(&wm, lo, hi, bins);
        let cc = bin_counts(&clean, lo, hi, bins);
        let width = (hi - lo) / bins as f64;
        for b in 0..bins {
            let lower = lo + width * b as f64;
            let upper = if b + 1 == bins { hi } else { lo + width * (b + 1) as f64 };
            w.write_record([
                attack.clone(),
                guidance.clone(),
                b.to_string(),
                lower.to_string(),
                upper.to_string(),
                cw[b].to_string(),
                cc[b].to_string(),
            ])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}
