//! Coarse-to-fine resolution schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Longest-side resolutions of the optimization stages, coarse to fine.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolutionSchedule {
    resolutions: Vec<usize>,
}

impl ResolutionSchedule {
    /// Stage `s` (1-based) runs at `min(final, round(initial * factor^(s-1)))`.
    ///
    /// Stages stop at the first value that reaches `final_res`; that capped
    /// value appears exactly once. Rounded duplicates (possible for factors
    /// very close to 1) are collapsed.
    pub fn new(initial_res: usize, final_res: usize, factor: f64) -> Result<Self> {
        if initial_res == 0 {
            return Err(Error::InvalidArgument("initial resolution must be positive".into()));
        }
        if initial_res > final_res {
            return Err(Error::InvalidArgument(format!(
                "initial resolution {initial_res} exceeds final resolution {final_res}"
            )));
        }
        if !factor.is_finite() || factor <= 1.0 {
            return Err(Error::InvalidArgument(format!(
                "scale factor must be a finite value > 1, got {factor}"
            )));
        }
        let mut resolutions: Vec<usize> = Vec::new();
        let mut stage = 0i32;
        loop {
            let raw = initial_res as f64 * factor.powi(stage);
            let r = (raw.round() as usize).min(final_res);
            if resolutions.last() != Some(&r) {
                resolutions.push(r);
            }
            if r >= final_res {
                break;
            }
            stage += 1;
        }
        Ok(Self { resolutions })
    }

    pub fn resolutions(&self) -> &[usize] {
        &self.resolutions
    }

    pub fn len(&self) -> usize {
        self.resolutions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.resolutions.is_empty()
    }

    /// `(stage index starting at 1, resolution)` pairs.
    pub fn stages(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.resolutions.iter().enumerate().map(|(i, &r)| (i + 1, r))
    }
}

pub fn resolution_schedule(initial_res: usize, final_res: usize, factor: f64) -> Result<ResolutionSchedule> {
    ResolutionSchedule::new(initial_res, final_res, factor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn collapses_to_single_stage() {
        let s = resolution_schedule(500, 500, 2f64.sqrt()).unwrap();
        assert_eq!(s.resolutions(), &[500]);
    }

    #[test]
    fn frozen_examples() {
        // Values computed independently: round(r_i * sqrt(2)^(s-1)), capped.
        let s = resolution_schedule(256, 1080, 2f64.sqrt()).unwrap();
        assert_eq!(s.resolutions(), &[256, 362, 512, 724, 1024, 1080]);
        let s = resolution_schedule(500, 1080, 2f64.sqrt()).unwrap();
        assert_eq!(s.resolutions(), &[500, 707, 1000, 1080]);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(resolution_schedule(600, 500, 2.0).is_err());
        assert!(resolution_schedule(100, 500, 1.0).is_err());
        assert!(resolution_schedule(100, 500, 0.5).is_err());
        assert!(resolution_schedule(0, 500, 2.0).is_err());
        assert!(resolution_schedule(100, 500, f64::NAN).is_err());
    }

    proptest! {
        #[test]
        fn schedule_properties(ri in 20usize..600, extra in 0usize..2000, k in 1.05f64..4.0) {
            let rf = ri + extra;
            let sched = resolution_schedule(ri, rf, k).unwrap();
            let r = sched.resolutions();
            prop_assert_eq!(*r.last().unwrap(), rf);
            prop_assert_eq!(r[0], ri);
            prop_assert!(r.windows(2).all(|w| w[0] < w[1]));
            prop_assert_eq!(r.iter().filter(|&&v| v == rf).count(), 1);
            for (i, &v) in r.iter().enumerate() {
                if v != rf {
                    let exact = ri as f64 * k.powi(i as i32);
                    prop_assert!((v as f64 - exact).abs() <= 0.5 + 1e-9);
                }
            }
        }
    }
}
