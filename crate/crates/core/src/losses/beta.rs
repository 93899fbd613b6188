use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::ProbVector;

/// How the dynamic uncertainty penalty is computed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "value")]
pub enum BetaVariant {
    /// `max_{k != gt} p_k - p_idk`, clamped to `[0, 1]`.
    #[default]
    ExcludeGt,
    /// As above but the max also skips the unknown class.
    ExcludeGtAndIdk,
    /// The given constant when `p_gt` does not beat the best real competitor, else 0.
    Fixed(f64),
    /// Constant 1.
    Disabled,
}

impl fmt::Display for BetaVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BetaVariant::ExcludeGt => write!(f, "beta-exclude-gt"),
            BetaVariant::ExcludeGtAndIdk => write!(f, "beta-exclude-gt-idk"),
            BetaVariant::Fixed(v) => write!(f, "beta-fixed-{v}"),
            BetaVariant::Disabled => write!(f, "no-beta"),
        }
    }
}

impl BetaVariant {
    pub fn validate(&self) -> Result<()> {
        match self {
            BetaVariant::Fixed(v) if !(0.0..=1.0).contains(v) => Err(Error::bad_config("loss.beta.value", format!("{v} is outside [0, 1]"))),
            _ => Ok(()),
        }
    }
}

/// Largest probability over classes other than `gt` (and, optionally, `idk`),
/// with its index.
fn max_excluding(p: &[f64], gt: usize, skip_idk: Option<usize>) -> Option<(usize, f64)> {
    p.iter()
        .copied()
        .enumerate()
        .filter(|&(k, _)| k != gt && Some(k) != skip_idk)
        .fold(None, |best, (k, v)| match best {
            Some((_, b)) if b >= v => best,
            _ => Some((k, v)),
        })
}

/// Penalty value and, when it lies strictly inside `(0, 1)` for the
/// difference-based variants, the competitor index it depends on.
pub(crate) fn penalty_with_argmax(p: &[f64], gt: usize, variant: BetaVariant) -> Result<(f64, Option<usize>)> {
    let idk = p.len() - 1;
    if gt == idk {
        return Err(Error::GroundTruthIsUnknownClass(gt));
    }
    if gt > idk {
        return Err(Error::DimensionMismatch { expected: idk, got: gt });
    }
    let diff = |skip: Option<usize>| match max_excluding(p, gt, skip) {
        Some((j, m)) => {
            let raw = m - p[idk];
            let beta = raw.clamp(0.0, 1.0);
            let interior = raw > 0.0 && raw < 1.0 && j != idk;
            (beta, interior.then_some(j))
        }
        None => (0.0, None),
    };
    Ok(match variant {
        BetaVariant::ExcludeGt => diff(None),
        BetaVariant::ExcludeGtAndIdk => diff(Some(idk)),
        BetaVariant::Fixed(v) => {
            let competitor = max_excluding(p, gt, Some(idk)).map_or(0.0, |(_, m)| m);
            (if p[gt] <= competitor { v } else { 0.0 }, None)
        }
        BetaVariant::Disabled => (1.0, None),
    })
}

/// Dynamic uncertainty penalty for one sample. The unknown class is the last
/// slot of `p`.
pub fn dynamic_uncertainty_penalty(p: &ProbVector, gt: usize, variant: BetaVariant) -> Result<f64> {
    penalty_with_argmax(p.probs(), gt, variant).map(|(b, _)| b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pv(v: &[f64]) -> ProbVector {
        ProbVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn worked_scenarios() {
        // unknown class is the most likely competitor: no penalty
        assert_eq!(dynamic_uncertainty_penalty(&pv(&[0.9, 0.02, 0.08]), 0, BetaVariant::ExcludeGt).unwrap(), 0.0);
        let b = dynamic_uncertainty_penalty(&pv(&[0.5, 0.3, 0.2]), 0, BetaVariant::ExcludeGt).unwrap();
        assert!((b - 0.1).abs() < 1e-15);
        assert_eq!(dynamic_uncertainty_penalty(&pv(&[0.5, 0.2, 0.3]), 0, BetaVariant::ExcludeGt).unwrap(), 0.0);
    }

    #[test]
    fn exclude_gt_and_idk() {
        let b = dynamic_uncertainty_penalty(&pv(&[0.1, 0.85, 0.05]), 0, BetaVariant::ExcludeGtAndIdk).unwrap();
        assert!((b - 0.8).abs() < 1e-15);
        // negative difference clamps to zero
        let b = dynamic_uncertainty_penalty(&pv(&[0.1, 0.3, 0.2, 0.4]), 0, BetaVariant::ExcludeGtAndIdk).unwrap();
        assert_eq!(b, 0.0);
    }

    #[test]
    fn fixed_and_disabled() {
        let fixed = BetaVariant::Fixed(0.25);
        assert_eq!(dynamic_uncertainty_penalty(&pv(&[0.3, 0.4, 0.3]), 0, fixed).unwrap(), 0.25);
        assert_eq!(dynamic_uncertainty_penalty(&pv(&[0.6, 0.1, 0.3]), 0, fixed).unwrap(), 0.0);
        // the unknown class does not trigger the fixed penalty
        assert_eq!(dynamic_uncertainty_penalty(&pv(&[0.4, 0.1, 0.5]), 0, fixed).unwrap(), 0.0);
        assert_eq!(dynamic_uncertainty_penalty(&pv(&[0.9, 0.05, 0.05]), 0, BetaVariant::Disabled).unwrap(), 1.0);
    }

    #[test]
    fn unknown_class_label_rejected() {
        let err = dynamic_uncertainty_penalty(&pv(&[0.3, 0.3, 0.4]), 2, BetaVariant::ExcludeGt).unwrap_err();
        assert!(matches!(err, Error::GroundTruthIsUnknownClass(2)));
    }

    fn simplex(k: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, k).prop_filter_map("nonzero", |v| {
            let s: f64 = v.iter().sum();
            (s > 1e-6).then(|| v.iter().map(|x| x / s).collect())
        })
    }

    proptest! {
        #[test]
        fn beta_in_unit_interval(p in (3usize..8).prop_flat_map(simplex), gt_raw in 0usize..100, fixed in 0.0f64..=1.0) {
            let gt = gt_raw % (p.len() - 1);
            for variant in [BetaVariant::ExcludeGt, BetaVariant::ExcludeGtAndIdk, BetaVariant::Fixed(fixed), BetaVariant::Disabled] {
                let (b, _) = penalty_with_argmax(&p, gt, variant).unwrap();
                prop_assert!((0.0..=1.0).contains(&b));
            }
        }

        #[test]
        fn zero_when_unknown_dominates_competitors(p in (3usize..8).prop_flat_map(simplex), gt_raw in 0usize..100) {
            let gt = gt_raw % (p.len() - 1);
            let idk = p.len() - 1;
            let aware = (0..p.len()).filter(|&k| k != gt).all(|k| p[idk] >= p[k]);
            if aware {
                prop_assert_eq!(penalty_with_argmax(&p, gt, BetaVariant::ExcludeGt).unwrap().0, 0.0);
            }
        }
    }
}
