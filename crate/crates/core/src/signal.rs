//! Piecewise-constant disturbance signals.

use serde::Serialize;

/// A piecewise-constant disturbance signal on right-open intervals
/// `[breakpoints[k], breakpoints[k+1])`; the last value extends to the end
/// of whatever horizon the signal is used on.
#[derive(Debug, Clone, Serialize)]
pub struct DisturbanceSignal {
    breakpoints: Vec<f64>,
    values: Vec<Vec<f64>>,
}

impl DisturbanceSignal {
    /// Builds a signal from interval start times and per-interval values.
    /// `breakpoints[0]` must be 0 and the sequence must strictly increase.
    pub fn new(breakpoints: Vec<f64>, values: Vec<Vec<f64>>) -> Self {
        assert_eq!(breakpoints.len(), values.len(), "one value per interval");
        assert!(!breakpoints.is_empty());
        assert_eq!(breakpoints[0], 0.0, "signals start at t = 0");
        assert!(
            breakpoints.windows(2).all(|w| w[1] > w[0]),
            "breakpoints must strictly increase"
        );
        Self {
            breakpoints,
            values,
        }
    }

    /// The constant signal with a single value on all of `[0, inf)`.
    pub fn constant(value: Vec<f64>) -> Self {
        Self::new(vec![0.0], vec![value])
    }

    pub fn value_at(&self, t: f64) -> &[f64] {
        let idx = self.breakpoints.partition_point(|&b| b <= t);
        &self.values[idx.saturating_sub(1)]
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup_is_right_open() {
        let sig = DisturbanceSignal::new(
            vec![0.0, 1.0, 2.0],
            vec![vec![0.1], vec![0.2], vec![0.3]],
        );
        assert_eq!(sig.value_at(0.0), &[0.1]);
        assert_eq!(sig.value_at(0.999), &[0.1]);
        assert_eq!(sig.value_at(1.0), &[0.2]);
        assert_eq!(sig.value_at(5.0), &[0.3]);
    }
}
