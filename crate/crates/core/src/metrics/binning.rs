use super::PredictionLog;
use crate::error::{Error, Result};

/// Statistics of one reliability bin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinStats {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// Fraction correct; 0 for an empty bin.
    pub acc: f64,
    /// Mean confidence; 0 for an empty bin.
    pub conf: f64,
}

impl BinStats {
    pub fn gap(&self) -> f64 {
        (self.acc - self.conf).abs()
    }
}

/// Bin `b` (zero-based) covers `(b/M, (b+1)/M]`; a confidence of exactly 0
/// joins the first bin.
pub fn bin_index(conf: f64, bins: usize) -> usize {
    let m = bins as f64;
    let last = bins - 1;
    let mut b = ((conf * m).ceil() as isize - 1).clamp(0, last as isize) as usize;
    // the product can round across an edge; settle against the exact edges
    while b > 0 && conf <= b as f64 / m {
        b -= 1;
    }
    while b < last && conf > (b + 1) as f64 / m {
        b += 1;
    }
    b
}

fn equal_width(conf: &[f64], hits: impl Iterator<Item = bool>, bins: usize) -> Vec<BinStats> {
    let m = bins as f64;
    let mut count = vec![0usize; bins];
    let mut conf_sum = vec![0.0; bins];
    let mut hit_sum = vec![0usize; bins];
    for (&c, hit) in conf.iter().zip(hits) {
        let b = bin_index(c, bins);
        count[b] += 1;
        conf_sum[b] += c;
        hit_sum[b] += usize::from(hit);
    }
    (0..bins)
        .map(|b| {
            let (acc, conf) = if count[b] == 0 {
                (0.0, 0.0)
            } else {
                (hit_sum[b] as f64 / count[b] as f64, conf_sum[b] / count[b] as f64)
            };
            BinStats {
                lo: b as f64 / m,
                hi: (b + 1) as f64 / m,
                count: count[b],
                acc,
                conf,
            }
        })
        .collect()
}

fn weighted_gap(bins: &[BinStats], n: usize) -> f64 {
    bins.iter().map(|b| b.count as f64 / n as f64 * b.gap()).sum()
}

fn check(log: &PredictionLog, bins: usize) -> Result<()> {
    if log.is_empty() {
        return Err(Error::EmptyLog);
    }
    if bins == 0 {
        return Err(Error::bad_config("metrics.bins", "must be >= 1"));
    }
    Ok(())
}

/// Equal-width reliability bins over top-label confidence.
pub fn bin_equal_width(log: &PredictionLog, bins: usize) -> Result<Vec<BinStats>> {
    check(log, bins)?;
    Ok(equal_width(log.confidences(), log.correct().iter().copied(), bins))
}

/// Expected calibration error.
pub fn ece(log: &PredictionLog, bins: usize) -> Result<f64> {
    Ok(weighted_gap(&bin_equal_width(log, bins)?, log.len()))
}

/// Maximum calibration error over non-empty bins.
pub fn mce(log: &PredictionLog, bins: usize) -> Result<f64> {
    Ok(bin_equal_width(log, bins)?.iter().filter(|b| b.count > 0).map(BinStats::gap).fold(0.0, f64::max))
}

/// Equal-mass bins: samples sorted by confidence (ties by index) and split
/// into `bins` contiguous groups whose sizes differ by at most one, the
/// larger groups first.
pub fn adaptive_bins(log: &PredictionLog, bins: usize) -> Result<Vec<BinStats>> {
    check(log, bins)?;
    let n = log.len();
    if n < bins {
        return Err(Error::TooFewSamples { n, bins });
    }
    let conf = log.confidences();
    let correct = log.correct();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| conf[a].total_cmp(&conf[b]).then(a.cmp(&b)));
    let (base, extra) = (n / bins, n % bins);
    let mut out = Vec::with_capacity(bins);
    let mut start = 0;
    for b in 0..bins {
        let size = base + usize::from(b < extra);
        let group = &order[start..start + size];
        let conf_sum: f64 = group.iter().map(|&i| conf[i]).sum();
        let hits = group.iter().filter(|&&i| correct[i]).count();
        out.push(BinStats {
            lo: conf[group[0]],
            hi: conf[group[size - 1]],
            count: size,
            acc: hits as f64 / size as f64,
            conf: conf_sum / size as f64,
        });
        start += size;
    }
    Ok(out)
}

/// Adaptive (equal-mass) ECE.
pub fn ada_ece(log: &PredictionLog, bins: usize) -> Result<f64> {
    Ok(weighted_gap(&adaptive_bins(log, bins)?, log.len()))
}

/// Classwise ECE averaged over the real classes. Each sample contributes its
/// probability of class `k` as confidence and `label == k` as outcome.
pub fn cw_ece(log: &PredictionLog, bins: usize) -> Result<f64> {
    check(log, bins)?;
    let probs = log.probs();
    let labels = log.labels();
    let total: f64 = (0..log.classes())
        .map(|k| {
            let col = probs.column(k).to_vec();
            let stats = equal_width(&col, labels.iter().map(|&y| y == k), bins);
            weighted_gap(&stats, log.len())
        })
        .sum();
    Ok(total / log.classes() as f64)
}
