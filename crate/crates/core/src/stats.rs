//! Detection statistics over Fourier-distance samples.
//!
//! Scores are `−distance`, so a higher score means "watermarked".

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_FPR_LEVELS: [f64; 3] = [0.01, 0.05, 0.10];
pub const DEFAULT_BINS: usize = 32;
/// Probability mass added to every histogram bin.
pub const KLD_EPSILON: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Watermarked,
    Clean,
}

/// Distances of one population.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceSample {
    pub label: Label,
    pub tag: String,
    pub values: Vec<f64>,
}

impl DistanceSample {
    pub fn new(label: Label, tag: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::invalid(format!("distance {v} is not finite and nonnegative")));
        }
        Ok(Self {
            label,
            tag: tag.into(),
            values,
        })
    }
}

fn nonempty(name: &str, v: &[f64]) -> Result<()> {
    if v.is_empty() {
        Err(Error::invalid(format!("{name} sample is empty")))
    } else {
        Ok(())
    }
}

/// `P(d_wm < d_clean) + ½·P(d_wm = d_clean)` over all pairs, from integer
/// pair counts.
pub fn roc_auc(watermarked: &[f64], clean: &[f64]) -> Result<f64> {
    nonempty("watermarked", watermarked)?;
    nonempty("clean", clean)?;
    let mut sorted = clean.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut twice_wins: u128 = 0;
    for &d in watermarked {
        let below = sorted.partition_point(|&c| c < d);
        let upto = sorted.partition_point(|&c| c <= d);
        let above = sorted.len() - upto;
        twice_wins += 2 * above as u128 + (upto - below) as u128;
    }
    let pairs = 2 * watermarked.len() as u128 * clean.len() as u128;
    Ok(twice_wins as f64 / pairs as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Flag as watermarked when `distance < threshold`.
    pub threshold: f64,
    /// Fewer than `1/fpr` clean samples, so the quantile is coarse.
    pub degenerate: bool,
}

/// Operating points at fixed false-positive rates.
///
/// With `k = ⌊fpr·n⌋` the threshold is the `(k+1)`-th smallest clean
/// distance; at most `k` clean distances fall strictly below it, so the
/// realized rate never exceeds `fpr` on this sample.
pub fn tpr_at_fpr(watermarked: &[f64], clean: &[f64], levels: &[f64]) -> Result<Vec<OperatingPoint>> {
    nonempty("watermarked", watermarked)?;
    nonempty("clean", clean)?;
    let mut sorted = clean.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    levels
        .iter()
        .map(|&fpr| {
            if !(0.0..1.0).contains(&fpr) {
                return Err(Error::invalid(format!("fpr level {fpr} outside [0, 1)")));
            }
            let k = ((fpr * n as f64).floor() as usize).min(n - 1);
            let threshold = sorted[k];
            let hits = watermarked.iter().filter(|&&d| d < threshold).count();
            Ok(OperatingPoint {
                fpr,
                tpr: hits as f64 / watermarked.len() as f64,
                threshold,
                degenerate: fpr > 0.0 && (n as f64) < 1.0 / fpr,
            })
        })
        .collect()
}

/// Normalized, ε-smoothed histogram on `[lo, hi]` with equal-width bins.
fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let counts = bin_counts(values, lo, hi, bins);
    let n = values.len() as f64;
    let z = 1.0 + bins as f64 * KLD_EPSILON;
    counts.into_iter().map(|c| (c as f64 / n + KLD_EPSILON) / z).collect()
}

/// Counts per bin; the top edge belongs to the last bin.
pub fn bin_counts(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<u64> {
    let mut counts = vec![0u64; bins];
    let width = hi - lo;
    for &v in values {
        let b = if width > 0.0 {
            (((v - lo) / width * bins as f64).floor() as usize).min(bins - 1)
        } else {
            0
        };
        counts[b] += 1;
    }
    counts
}

/// `½[KL(P‖Q) + KL(Q‖P)]` between histograms on the shared range.
pub fn symmetric_kld(p: &[f64], q: &[f64], bins: usize) -> Result<f64> {
    nonempty("p", p)?;
    nonempty("q", q)?;
    if bins < 2 {
        return Err(Error::invalid("need at least 2 bins"));
    }
    let (lo, hi) = p
        .iter()
        .chain(q)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(Error::invalid("values must be finite"));
    }
    if hi == lo {
        return Ok(0.0);
    }
    let hp = histogram(p, lo, hi, bins);
    let hq = histogram(q, lo, hi, bins);
    // (P − Q)(ln P − ln Q) is unchanged bit for bit when P and Q swap.
    let s: f64 = hp
        .iter()
        .zip(&hq)
        .map(|(a, b)| (a - b) * (a.ln() - b.ln()))
        .sum();
    Ok(0.5 * s)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation; 0 when `n = 1`.
    pub std: f64,
    pub std_defined: bool,
}

impl Summary {
    /// Standard error of the mean.
    pub fn sem(&self) -> f64 {
        self.std / (self.n as f64).sqrt()
    }
}

pub fn summarize(values: &[f64]) -> Result<Summary> {
    nonempty("summary", values)?;
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return Ok(Summary {
            n,
            mean,
            std: 0.0,
            std_defined: false,
        });
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    Ok(Summary {
        n,
        mean,
        std: (ss / (n - 1) as f64).sqrt(),
        std_defined: true,
    })
}

/// √((s₁² + s₂²)/2).
pub fn pooled_std(a: &Summary, b: &Summary) -> f64 {
    ((a.std * a.std + b.std * b.std) / 2.0).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub auc: f64,
    pub tpr_at: Vec<OperatingPoint>,
    pub watermarked: Summary,
    pub clean: Summary,
    pub skld: f64,
    pub bins: usize,
}

impl DetectionReport {
    pub fn compute(watermarked: &[f64], clean: &[f64], levels: &[f64], bins: usize) -> Result<Self> {
        Ok(Self {
            auc: roc_auc(watermarked, clean)?,
            tpr_at: tpr_at_fpr(watermarked, clean, levels)?,
            watermarked: summarize(watermarked)?,
            clean: summarize(clean)?,
            skld: symmetric_kld(watermarked, clean, bins)?,
            bins,
        })
    }

    pub fn with_defaults(watermarked: &[f64], clean: &[f64]) -> Result<Self> {
        Self::compute(watermarked, clean, &DEFAULT_FPR_LEVELS, DEFAULT_BINS)
    }

    pub fn at(&self, fpr: f64) -> Option<&OperatingPoint> {
        self.tpr_at.iter().find(|p| p.fpr == fpr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_auc(w: &[f64], c: &[f64]) -> f64 {
        let mut twice = 0u64;
        for a in w {
            for b in c {
                twice += if a < b {
                    2
                } else if a == b {
                    1
                } else {
                    0
                };
            }
        }
        twice as f64 / (2 * w.len() * c.len()) as f64
    }

    #[test]
    fn auc_fixtures() {
        assert_eq!(roc_auc(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.5);
        let (w, c) = ([1.0, 2.0, 3.0], [2.5, 4.0, 5.0]);
        assert_eq!(roc_auc(&w, &c).unwrap(), brute_auc(&w, &c));
        assert_eq!(roc_auc(&w, &c).unwrap(), 8.0 / 9.0);
        assert!(roc_auc(&[], &[1.0]).is_err());
    }

    #[test]
    fn threshold_sweep_oracle() {
        let clean: Vec<f64> = (1..=100).map(f64::from).collect();
        let wm: Vec<f64> = (0..40).map(|i| 0.5 + 2.5 * i as f64).collect();
        let pts = tpr_at_fpr(&wm, &clean, &[0.05]).unwrap();
        let p = pts[0];
        let admitted = clean.iter().filter(|&&d| d < p.threshold).count();
        assert!(admitted <= 5);
        // best TPR over every threshold that admits at most 5 clean scores
        let mut cands: Vec<f64> = clean.iter().chain(&wm).copied().collect();
        cands.push(f64::INFINITY);
        let best = cands
            .iter()
            .filter(|&&t| clean.iter().filter(|&&d| d < t).count() <= 5)
            .map(|&t| wm.iter().filter(|&&d| d < t).count())
            .max()
            .unwrap();
        assert_eq!(p.tpr, best as f64 / wm.len() as f64);
        assert!(!p.degenerate);
    }

    #[test]
    fn separated_samples_detect_everything() {
        let pts = tpr_at_fpr(&[1.0, 2.0, 3.0], &[10.0, 11.0, 12.0], &DEFAULT_FPR_LEVELS).unwrap();
        assert!(pts.iter().all(|p| p.tpr == 1.0 && p.degenerate));
    }

    #[test]
    fn identical_distributions_give_tpr_near_fpr() {
        use crate::grid::RngStream;
        let mut rng = RngStream::new(1, 0);
        let w: Vec<f64> = (0..20000).map(|_| rng.uniform()).collect();
        let c: Vec<f64> = (0..20000).map(|_| rng.uniform()).collect();
        for p in tpr_at_fpr(&w, &c, &DEFAULT_FPR_LEVELS).unwrap() {
            assert!((p.tpr - p.fpr).abs() < 0.01, "{p:?}");
        }
    }

    #[test]
    fn two_bin_kld() {
        let mut p = vec![0.0; 8];
        p.extend([1.0; 2]);
        let mut q = vec![0.0; 2];
        q.extend([1.0; 8]);
        let got = symmetric_kld(&p, &q, 2).unwrap();
        let direct = 0.5 * ((0.8 * (0.8f64 / 0.2).ln() + 0.2 * (0.2f64 / 0.8).ln()) * 2.0);
        assert!((got - 0.8318).abs() < 1e-4);
        assert!((got - direct).abs() < 1e-8);
        assert_eq!(symmetric_kld(&p, &p, 2).unwrap(), 0.0);
        assert_eq!(symmetric_kld(&[3.0], &[3.0, 3.0], 4).unwrap(), 0.0);
        assert!(symmetric_kld(&p, &q, 1).is_err());
    }

    #[test]
    fn summaries() {
        let s = summarize(&[5.0]).unwrap();
        assert_eq!((s.mean, s.std, s.std_defined), (5.0, 0.0, false));
        let s = summarize(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((s.mean, s.std), (2.0, 1.0));
        assert!(summarize(&[]).is_err());
    }

    #[test]
    fn report_json_roundtrip() {
        let r = DetectionReport::with_defaults(&[1.0, 2.0, 2.5], &[2.0, 5.0, 6.0]).unwrap();
        let text = serde_json::to_string(&r).unwrap();
        assert_eq!(serde_json::from_str::<DetectionReport>(&text).unwrap(), r);
        assert!(r.at(0.05).is_some());
    }

    #[test]
    fn distance_samples_validate() {
        assert!(DistanceSample::new(Label::Clean, "x", vec![0.0, 1.0]).is_ok());
        assert!(DistanceSample::new(Label::Clean, "x", vec![-1.0]).is_err());
        assert!(DistanceSample::new(Label::Clean, "x", vec![f64::NAN]).is_err());
    }

    fn sample() -> impl Strategy<Value = Vec<f64>> {
        // few distinct values so ties are common
        prop::collection::vec((0u8..20).prop_map(|v| v as f64 * 0.5), 1..60)
    }

    proptest! {
        #[test]
        fn auc_matches_enumeration(w in sample(), c in sample()) {
            prop_assert_eq!(roc_auc(&w, &c).unwrap(), brute_auc(&w, &c));
        }

        #[test]
        fn auc_complements(w in sample(), c in sample()) {
            prop_assert_eq!(roc_auc(&w, &c).unwrap() + roc_auc(&c, &w).unwrap(), 1.0);
        }

        #[test]
        fn kld_symmetric_nonnegative(p in sample(), q in sample(), bins in 2usize..40) {
            let a = symmetric_kld(&p, &q, bins).unwrap();
            prop_assert!(a >= 0.0);
            prop_assert_eq!(a, symmetric_kld(&q, &p, bins).unwrap());
            prop_assert_eq!(symmetric_kld(&p, &p, bins).unwrap(), 0.0);
        }

        #[test]
        fn tpr_monotone(w in sample(), c in sample()) {
            let pts = tpr_at_fpr(&w, &c, &DEFAULT_FPR_LEVELS).unwrap();
            prop_assert!(pts[0].tpr <= pts[1].tpr && pts[1].tpr <= pts[2].tpr);
            prop_assert!(pts[0].threshold <= pts[1].threshold && pts[1].threshold <= pts[2].threshold);
            for p in &pts {
                let fp = c.iter().filter(|&&d| d < p.threshold).count() as f64 / c.len() as f64;
                prop_assert!(fp <= p.fpr);
            }
        }

        #[test]
        fn summary_matches_two_pass(v in prop::collection::vec(-1e3f64..1e3, 2..50)) {
            let s = summarize(&v).unwrap();
            let mut acc = 0.0;
            for x in &v { acc += x; }
            let mean = acc / v.len() as f64;
            let mut ss = 0.0;
            for x in &v { ss += (x - mean) * (x - mean); }
            prop_assert_eq!(s.mean, mean);
            prop_assert_eq!(s.std, (ss / (v.len() - 1) as f64).sqrt());
        }
    }
}
