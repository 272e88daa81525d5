//! Mean-teacher parameter averaging.

use crate::error::{Error, Result};

use super::model::ModelParams;

/// `θ′ ← λ·θ′ + (1−λ)·θ` when `t mod period == 0`; returns whether the
/// update ran.
pub fn teacher_ema_update(
    teacher: &mut ModelParams,
    student: &ModelParams,
    momentum: f64,
    period: u64,
    t: u64,
) -> Result<bool> {
    teacher.check_same_shape(student)?;
    if !(0.0..=1.0).contains(&momentum) {
        return Err(Error::invalid(format!("teacher momentum {momentum} outside [0, 1]")));
    }
    if period == 0 {
        return Err(Error::invalid("teacher update period must be positive"));
    }
    if t % period != 0 {
        return Ok(false);
    }
    for (a, &b) in teacher.as_mut_slice().iter_mut().zip(student.as_slice()) {
        *a = momentum * *a + (1.0 - momentum) * b;
    }
    Ok(true)
}
