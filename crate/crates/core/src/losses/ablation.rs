use std::fmt;
use std::str::FromStr;

use super::{BetaVariant, SocratesConfig, SocratesLoss};
use crate::error::{Error, Result};

/// The ten component ablations of the Socrates objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AblationVariant {
    Full,
    NoBeta,
    NoFocal,
    NoFocalIdk,
    NoFocalGt,
    /// Equivalent to SAT.
    NoFocalNoBeta,
    NoFocalIdkNoBeta,
    NoFocalGtNoBeta,
    /// Equivalent to Focal loss over `c + 1` outputs.
    NoTarget,
    /// Equivalent to cross-entropy over `c + 1` outputs.
    NoTargetNoFocal,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 10] = [
        AblationVariant::Full,
        AblationVariant::NoBeta,
        AblationVariant::NoFocal,
        AblationVariant::NoFocalIdk,
        AblationVariant::NoFocalGt,
        AblationVariant::NoFocalNoBeta,
        AblationVariant::NoFocalIdkNoBeta,
        AblationVariant::NoFocalGtNoBeta,
        AblationVariant::NoTarget,
        AblationVariant::NoTargetNoFocal,
    ];

    pub fn id(self) -> &'static str {
        match self {
            AblationVariant::Full => "soc",
            AblationVariant::NoBeta => "soc-no-beta",
            AblationVariant::NoFocal => "soc-no-ft",
            AblationVariant::NoFocalIdk => "soc-no-ft-idk",
            AblationVariant::NoFocalGt => "soc-no-ft-gt",
            AblationVariant::NoFocalNoBeta => "soc-no-ft-beta",
            AblationVariant::NoFocalIdkNoBeta => "soc-no-ft-idk-beta",
            AblationVariant::NoFocalGtNoBeta => "soc-no-ft-gt-beta",
            AblationVariant::NoTarget => "soc-no-ta",
            AblationVariant::NoTargetNoFocal => "soc-no-ta-ft",
        }
    }

    /// `(drop_focal_gt, drop_focal_idk, beta_disabled, drop_adaptive_target)`
    fn flags(self) -> (bool, bool, bool, bool) {
        match self {
            AblationVariant::Full => (false, false, false, false),
            AblationVariant::NoBeta => (false, false, true, false),
            AblationVariant::NoFocal => (true, true, false, false),
            AblationVariant::NoFocalIdk => (false, true, false, false),
            AblationVariant::NoFocalGt => (true, false, false, false),
            AblationVariant::NoFocalNoBeta => (true, true, true, false),
            AblationVariant::NoFocalIdkNoBeta => (false, true, true, false),
            AblationVariant::NoFocalGtNoBeta => (true, false, true, false),
            AblationVariant::NoTarget => (false, false, false, true),
            AblationVariant::NoTargetNoFocal => (true, true, false, true),
        }
    }

    /// Applies this variant's switches to `base` (which supplies gamma, alpha
    /// and the warm-up length).
    pub fn configure(self, base: &SocratesConfig) -> SocratesConfig {
        let (gt, idk, no_beta, no_target) = self.flags();
        SocratesConfig {
            drop_focal_gt: gt,
            drop_focal_idk: idk,
            drop_adaptive_target: no_target,
            beta_variant: if no_beta { BetaVariant::Disabled } else { BetaVariant::ExcludeGt },
            ..base.clone()
        }
    }

    /// Identifies which variant a configuration's switches describe.
    pub fn from_config(cfg: &SocratesConfig) -> Result<Self> {
        let no_beta = match cfg.beta_variant {
            BetaVariant::ExcludeGt => false,
            BetaVariant::Disabled => true,
            other => return Err(Error::UnknownVariant(format!("beta variant {other} is not part of the ablation family"))),
        };
        let key = (cfg.drop_focal_gt, cfg.drop_focal_idk, no_beta, cfg.drop_adaptive_target);
        Self::ALL
            .into_iter()
            .find(|v| v.flags() == key)
            .ok_or_else(|| Error::UnknownVariant(format!("drop_focal_gt={}, drop_focal_idk={}, no_beta={}, drop_adaptive_target={}", key.0, key.1, key.2, key.3)))
    }

    /// Configured evaluator for this variant.
    pub fn evaluator(self, base: &SocratesConfig) -> Result<SocratesLoss> {
        SocratesLoss::new(self.configure(base))
    }
}

/// Evaluator for an arbitrary flag combination; fails unless it is one of the
/// ten variants.
pub fn ablation_variant(cfg: &SocratesConfig) -> Result<SocratesLoss> {
    AblationVariant::from_config(cfg)?;
    SocratesLoss::new(cfg.clone())
}

impl fmt::Display for AblationVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for AblationVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|v| v.id() == s).ok_or_else(|| Error::UnknownVariant(s.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::ProbVector;
    use crate::par::Backend;
    use ndarray::array;

    #[test]
    fn ids_roundtrip_and_flags_unique() {
        for v in AblationVariant::ALL {
            assert_eq!(v.id().parse::<AblationVariant>().unwrap(), v);
            assert_eq!(AblationVariant::from_config(&v.configure(&SocratesConfig::default())).unwrap(), v);
        }
        assert!("soc-bogus".parse::<AblationVariant>().is_err());
    }

    #[test]
    fn unlisted_combination_rejected() {
        let cfg = SocratesConfig {
            drop_adaptive_target: true,
            beta_variant: BetaVariant::Disabled,
            ..SocratesConfig::default()
        };
        assert!(matches!(ablation_variant(&cfg), Err(Error::UnknownVariant(_))));
        let cfg = SocratesConfig {
            beta_variant: BetaVariant::Fixed(0.25),
            ..SocratesConfig::default()
        };
        assert!(matches!(AblationVariant::from_config(&cfg), Err(Error::UnknownVariant(_))));
    }

    #[test]
    fn no_beta_on_second_scenario() {
        // probabilities [0.5, 0.3, 0.2] are softmax of their logs
        let logits = array![[0.5f64.ln(), 0.3f64.ln(), 0.2f64.ln()]];
        let eval = AblationVariant::NoBeta.evaluator(&SocratesConfig::new(2.0, 0.9)).unwrap();
        let loss = eval.forward_detached(logits.view(), &[0], &[0.5], &[1.0]).unwrap();
        let expected = -0.25 * (0.5 * 0.5f64.ln() + 0.5 * 0.2f64.ln());
        assert!((loss - expected).abs() < 1e-12);
        assert!((loss - 0.2878).abs() < 1e-4);
        let out = eval.loss_and_grad_with_targets(logits.view(), &[0], Some(&[0.5]), Backend::Sequential).unwrap();
        assert!((out.loss - expected).abs() < 1e-12);
        let _ = ProbVector::new(vec![0.5, 0.3, 0.2]).unwrap();
    }
}
