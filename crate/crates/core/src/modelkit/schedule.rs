use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantity {
    Lr,
    Gamma,
    LambdaU,
}

/// Epoch-indexed training schedules.
///
/// The learning rate follows a cosine decay over all epochs. The consistency
/// weight `gamma` and the unlabelled weight `lambda_u` ramp linearly from 0
/// to their maxima over `ramp_epochs` epochs after warm-up, then hold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub total_epochs: usize,
    pub warmup_epochs: usize,
    pub lr0: f64,
    pub gamma_max: f64,
    pub lambda_u_max: f64,
    pub ramp_epochs: usize,
    /// First epoch at which label guessing by agreement runs.
    pub lga_start: usize,
}

impl ScheduleSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.warmup_epochs < self.lga_start && self.lga_start <= self.total_epochs) {
            return Err(Error::Config(format!(
                "need warmup_epochs < lga_start <= total_epochs, got {} / {} / {}",
                self.warmup_epochs, self.lga_start, self.total_epochs
            )));
        }
        if !(self.lr0 > 0.0) || self.gamma_max < 0.0 || self.lambda_u_max < 0.0 {
            return Err(Error::Config("lr0 must be positive and ramp maxima non-negative".into()));
        }
        Ok(())
    }

    fn ramp(&self, epoch: usize, max: f64) -> f64 {
        if epoch <= self.warmup_epochs {
            return 0.0;
        }
        if self.ramp_epochs == 0 {
            return max;
        }
        let t = (epoch - self.warmup_epochs) as f64 / self.ramp_epochs as f64;
        max * t.clamp(0.0, 1.0)
    }

    pub fn value(&self, epoch: usize, which: Quantity) -> Result<f64> {
        if epoch > self.total_epochs {
            return Err(Error::invalid(
                "epoch",
                format!("{epoch} beyond the {} scheduled epochs", self.total_epochs),
            ));
        }
        Ok(match which {
            Quantity::Lr => {
                let t = epoch as f64 / self.total_epochs.max(1) as f64;
                self.lr0 * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
            }
            Quantity::Gamma => self.ramp(epoch, self.gamma_max),
            Quantity::LambdaU => self.ramp(epoch, self.lambda_u_max),
        })
    }

    pub fn lga_active(&self, epoch: usize) -> bool {
        epoch >= self.lga_start
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> ScheduleSpec {
        ScheduleSpec {
            total_epochs: 200,
            warmup_epochs: 0,
            lr0: 0.05,
            gamma_max: 1.0,
            lambda_u_max: 0.1,
            ramp_epochs: 100,
            lga_start: 150,
        }
    }

    #[test]
    fn ramp_endpoints_and_midpoint() {
        let s = spec();
        assert_eq!(s.value(0, Quantity::Gamma).unwrap(), 0.0);
        assert_eq!(s.value(0, Quantity::LambdaU).unwrap(), 0.0);
        assert!((s.value(50, Quantity::Gamma).unwrap() - 0.5).abs() < 1e-12);
        assert!((s.value(50, Quantity::LambdaU).unwrap() - 0.05).abs() < 1e-12);
        assert_eq!(s.value(180, Quantity::Gamma).unwrap(), 1.0);
    }

    #[test]
    fn ramp_starts_after_warmup() {
        let s = ScheduleSpec { warmup_epochs: 10, lga_start: 20, ..spec() };
        assert_eq!(s.value(10, Quantity::Gamma).unwrap(), 0.0);
        assert!((s.value(60, Quantity::Gamma).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn cosine_ends_at_zero_and_never_increases() {
        let s = spec();
        assert_eq!(s.value(0, Quantity::Lr).unwrap(), 0.05);
        assert!(s.value(200, Quantity::Lr).unwrap().abs() < 1e-15);
        let lrs: Vec<f64> = (0..=200).map(|e| s.value(e, Quantity::Lr).unwrap()).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
        assert!(s.value(201, Quantity::Lr).is_err());
    }

    #[test]
    fn validates_ordering() {
        assert!(spec().validate().is_ok());
        assert!(ScheduleSpec { lga_start: 0, ..spec() }.validate().is_err());
        assert!(ScheduleSpec { lga_start: 201, ..spec() }.validate().is_err());
    }
}
