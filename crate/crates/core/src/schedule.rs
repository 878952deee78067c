//! Progressive constraining: staggered linear warm-ups for the regularizer
//! scales and the head blend, the sticky freeze rule for the traditional
//! head, and the filter reset applied at each era boundary.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netcore::ModelState;
use crate::objective::LossWeights;

/// Linear ramp from 0 to `target`, starting at `start_epoch`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RampSpec {
    pub start_epoch: usize,
    pub growth_rate: f64,
    pub target: f64,
}

impl RampSpec {
    /// A ramp that starts at `start` and reaches `target` at `full`.
    pub fn spanning(start: usize, full: usize, target: f64) -> Self {
        let span = full.saturating_sub(start).max(1) as f64;
        RampSpec {
            start_epoch: start,
            growth_rate: target / span,
            target,
        }
    }

    pub fn value_at(&self, epoch: usize) -> f64 {
        if epoch < self.start_epoch {
            0.0
        } else {
            (self.growth_rate * (epoch - self.start_epoch) as f64).min(self.target)
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        if self.growth_rate > 0.0 && self.target >= 0.0 && self.target.is_finite() {
            Ok(())
        } else {
            Err(Error::Config(format!("ramp `{name}` needs growth_rate > 0 and target >= 0")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSchedule {
    /// Runs on the global epoch count and is never reset.
    pub alpha: RampSpec,
    pub poss: RampSpec,
    pub sub: RampSpec,
    pub min: RampSpec,
    pub bin: RampSpec,
    pub freeze_alpha_threshold: f64,
    pub eras: usize,
    pub epochs_per_era: usize,
    pub reinit_precision_threshold: f64,
}

impl Default for ConstraintSchedule {
    fn default() -> Self {
        ConstraintSchedule::scaled(200, 50)
    }
}

impl ConstraintSchedule {
    /// Default stagger expressed as fractions of the era length: the
    /// possible-combination term at 10%, single submission at 20%, step mass
    /// at 30%, binarization at 45%, all at target by 90%. The blend reaches 1
    /// by 90% of the first era.
    pub fn scaled(epochs_per_era: usize, eras: usize) -> Self {
        let at = |frac: f64| (epochs_per_era as f64 * frac).round() as usize;
        let full = at(0.9);
        ConstraintSchedule {
            alpha: RampSpec::spanning(0, full, 1.0),
            poss: RampSpec::spanning(at(0.10), full, 1.0),
            sub: RampSpec::spanning(at(0.20), full, 1.0),
            min: RampSpec::spanning(at(0.30), full, 0.5),
            bin: RampSpec::spanning(at(0.45), full, 2.0),
            freeze_alpha_threshold: 0.1,
            eras,
            epochs_per_era,
            reinit_precision_threshold: 0.3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, r) in [
            ("alpha", &self.alpha),
            ("poss", &self.poss),
            ("sub", &self.sub),
            ("min", &self.min),
            ("bin", &self.bin),
        ] {
            r.validate(name)?;
        }
        let starts = [
            self.alpha.start_epoch,
            self.poss.start_epoch,
            self.sub.start_epoch,
            self.min.start_epoch,
            self.bin.start_epoch,
        ];
        if starts.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Config(
                "ramp starts must follow alpha <= poss <= sub <= min <= bin".into(),
            ));
        }
        if self.alpha.target > 1.0 {
            return Err(Error::Config("alpha target must not exceed 1".into()));
        }
        if self.eras == 0 || self.epochs_per_era == 0 {
            return Err(Error::Config("eras and epochs_per_era must be at least 1".into()));
        }
        Ok(())
    }

    /// Regularizer scales (restarting every era), the blend (on the global
    /// epoch), and whether the blend has passed the freeze threshold.
    pub fn weights_at(&self, epoch_in_era: usize, era: usize) -> ScheduledWeights {
        let global = era * self.epochs_per_era + epoch_in_era;
        let alpha = self.alpha.value_at(global);
        ScheduledWeights {
            weights: LossWeights {
                bin: self.bin.value_at(epoch_in_era),
                min: self.min.value_at(epoch_in_era),
                sub: self.sub.value_at(epoch_in_era),
                poss: self.poss.value_at(epoch_in_era),
            },
            alpha,
            freeze_trad: alpha > self.freeze_alpha_threshold,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduledWeights {
    pub weights: LossWeights,
    pub alpha: f64,
    pub freeze_trad: bool,
}

/// Walks a schedule, latching the freeze decision once it triggers.
#[derive(Debug, Clone)]
pub struct ScheduleCursor {
    schedule: ConstraintSchedule,
    frozen: bool,
}

impl ScheduleCursor {
    pub fn new(schedule: ConstraintSchedule) -> Self {
        ScheduleCursor {
            schedule,
            frozen: false,
        }
    }

    pub fn at(&mut self, epoch_in_era: usize, era: usize) -> ScheduledWeights {
        let mut w = self.schedule.weights_at(epoch_in_era, era);
        self.frozen |= w.freeze_trad;
        w.freeze_trad = self.frozen;
        w
    }

    /// Applies an observed blend value to the latch directly.
    pub fn observe_alpha(&mut self, alpha: f64) -> bool {
        self.frozen |= alpha > self.schedule.freeze_alpha_threshold;
        self.frozen
    }

    pub fn frozen(&self) -> bool {
        self.frozen
    }
}

/// Redraws every filter that is all zero, never matched (`None`), or whose
/// precision is strictly below `threshold`. Returns the redrawn indices.
/// The traditional head and the blend are untouched.
pub fn era_reset(
    state: &mut ModelState,
    precision: &[Option<f64>],
    threshold: f64,
    rng: &mut impl Rng,
) -> Result<Vec<usize>> {
    if precision.len() != state.m() {
        return Err(Error::Shape(format!(
            "{} precisions for {} filters",
            precision.len(),
            state.m()
        )));
    }
    let reset: Vec<usize> = (0..state.m())
        .filter(|&p| {
            let empty = state.conv().filter(p).iter().all(|&w| w == 0.0);
            empty || precision[p].is_none_or(|prec| prec < threshold)
        })
        .collect();
    if !reset.is_empty() {
        let conv = state.conv_mut();
        for &p in &reset {
            for w in conv.filter_mut(p) {
                *w = rng.gen::<f64>();
            }
        }
    }
    Ok(reset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ramp_values() {
        let r = RampSpec {
            start_epoch: 10,
            growth_rate: 0.1,
            target: 1.0,
        };
        assert_eq!(r.value_at(5), 0.0);
        assert!((r.value_at(15) - 0.5).abs() < 1e-12);
        assert_eq!(r.value_at(200), 1.0);
    }

    #[test]
    fn default_stagger_for_two_hundred_epochs() {
        let s = ConstraintSchedule::default();
        s.validate().unwrap();
        assert_eq!(
            [s.poss.start_epoch, s.sub.start_epoch, s.min.start_epoch, s.bin.start_epoch],
            [20, 40, 60, 90]
        );
        assert_eq!(s.bin.value_at(180), 2.0);
        assert!(s.bin.value_at(179) < 2.0);
    }

    #[test]
    fn era_start_and_alpha_carry() {
        let s = ConstraintSchedule::scaled(50, 3);
        let w = s.weights_at(0, 0);
        assert!(w.weights.is_zero());
        assert_eq!(w.alpha, 0.0);
        assert!(!w.freeze_trad);
        let end = s.weights_at(49, 0);
        let next = s.weights_at(0, 1);
        assert!(next.weights.is_zero());
        assert!(next.alpha >= end.alpha);
        assert!(next.alpha > 0.0);
    }

    #[test]
    fn freeze_latch_is_sticky() {
        let s = ConstraintSchedule {
            alpha: RampSpec {
                start_epoch: 0,
                growth_rate: 0.04,
                target: 1.0,
            },
            ..ConstraintSchedule::scaled(50, 1)
        };
        let mut cur = ScheduleCursor::new(s);
        assert!(!cur.at(2, 0).freeze_trad);
        assert!(cur.observe_alpha(0.12));
        assert!(cur.observe_alpha(0.05));
        assert!(cur.at(0, 0).freeze_trad);
    }

    #[test]
    fn nonzero_scales_form_a_prefix() {
        let s = ConstraintSchedule::scaled(200, 2);
        for era in 0..2 {
            for e in 0..200 {
                let w = s.weights_at(e, era).weights;
                let on = [w.poss > 0.0, w.sub > 0.0, w.min > 0.0, w.bin > 0.0];
                assert!(on.windows(2).all(|p| p[0] || !p[1]), "epoch {e}: {on:?}");
            }
        }
    }

    #[test]
    fn rejects_out_of_order_starts() {
        let mut s = ConstraintSchedule::default();
        s.bin.start_epoch = 5;
        assert!(s.validate().is_err());
    }

    #[test]
    fn reset_rules() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut state = ModelState::init(4, 3, 13, 1, &mut rng);
        let before = state.clone();
        let none = era_reset(&mut state, &[Some(0.9); 4], 0.3, &mut rng).unwrap();
        assert!(none.is_empty());
        assert_eq!(state.conv(), before.conv());

        state.conv_mut().filter_mut(2).iter_mut().for_each(|w| *w = 0.0);
        let out = era_reset(&mut state, &[Some(0.9); 4], 0.3, &mut rng).unwrap();
        assert_eq!(out, vec![2]);
        for p in [0, 1, 3] {
            assert_eq!(state.conv().filter(p), before.conv().filter(p));
        }

        let mut s3 = ModelState::init(3, 3, 13, 1, &mut rng);
        let out = era_reset(&mut s3, &[Some(0.29), Some(0.30), Some(0.31)], 0.3, &mut rng).unwrap();
        assert_eq!(out, vec![0]);
        let out = era_reset(&mut s3, &[Some(0.5), None, Some(0.5)], 0.3, &mut rng).unwrap();
        assert_eq!(out, vec![1]);
        assert!(era_reset(&mut s3, &[Some(0.5)], 0.3, &mut rng).is_err());
    }
}
