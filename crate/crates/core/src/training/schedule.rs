use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::Error;

/// Mask-scale schedule within one unit of training time (one epoch).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScheduleKind {
    /// Rises linearly from `1/s_max` to `s_max` over the epoch.
    Linear,
    /// Starts and ends at `s_max`, dipping to the floor mid-epoch.
    Cosine,
}

impl FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "linear" => Ok(ScheduleKind::Linear),
            "cosine" => Ok(ScheduleKind::Cosine),
            other => Err(Error::Validation(format!("unknown schedule `{other}`"))),
        }
    }
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScheduleKind::Linear => "linear",
            ScheduleKind::Cosine => "cosine",
        })
    }
}

/// `s = 1/s_max + (s_max - 1/s_max)(b - 1)/(B - 1)` for batch `b` of `B`
/// (1-based). A single-batch epoch runs at `s_max`.
pub fn scale_linear(b: usize, total: usize, s_max: f64) -> f64 {
    if total < 2 {
        return s_max;
    }
    let b = b.clamp(1, total);
    let lo = 1.0 / s_max;
    lo + (s_max - lo) * (b - 1) as f64 / (total - 1) as f64
}

/// `s = max(s_min, s_max/2 (1 + cos 2πp))` for progress `p` in `[0, 1]`.
pub fn scale_cosine(p: f64, s_max: f64, s_min: f64) -> f64 {
    let p = p.clamp(0.0, 1.0);
    (s_max / 2.0 * (1.0 + (2.0 * PI * p).cos())).max(s_min)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScheduleState {
    pub kind: ScheduleKind,
    pub s_max: f64,
    pub s_min: f64,
}

impl ScheduleState {
    /// Floor defaults to `1/s_max`.
    pub fn new(kind: ScheduleKind, s_max: f64) -> Self {
        ScheduleState {
            kind,
            s_max,
            s_min: 1.0 / s_max,
        }
    }

    /// Scale for batch `b` (1-based) of an epoch of `total` batches. The
    /// cosine schedule uses progress `p = (b - 1)/total`.
    pub fn scale(&self, b: usize, total: usize) -> f64 {
        match self.kind {
            ScheduleKind::Linear => scale_linear(b, total, self.s_max),
            ScheduleKind::Cosine => {
                let p = b.saturating_sub(1) as f64 / total.max(1) as f64;
                scale_cosine(p, self.s_max, self.s_min)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn linear_endpoints_and_midpoint() {
        assert_eq!(scale_linear(1, 11, 400.0), 1.0 / 400.0);
        assert_eq!(scale_linear(11, 11, 400.0), 400.0);
        let mid = scale_linear(6, 11, 400.0);
        assert!((mid - 200.00125).abs() < 1e-9);
        assert_eq!(scale_linear(1, 1, 400.0), 400.0);
    }

    #[test]
    fn cosine_landmarks() {
        let s_max = 400.0;
        let s_min = 1.0 / s_max;
        assert_eq!(scale_cosine(0.0, s_max, s_min), s_max);
        assert!((scale_cosine(0.25, s_max, s_min) - s_max / 2.0).abs() < 1e-12);
        assert_eq!(scale_cosine(0.5, s_max, s_min), s_min);
        assert!((scale_cosine(1.0, s_max, s_min) - s_max).abs() < 1e-12);
    }

    #[test]
    fn parse_round_trip() {
        for k in [ScheduleKind::Linear, ScheduleKind::Cosine] {
            assert_eq!(k.to_string().parse::<ScheduleKind>().unwrap(), k);
        }
        assert!("step".parse::<ScheduleKind>().is_err());
    }

    proptest! {
        #[test]
        fn linear_bounded_and_monotone(total in 2usize..500, s_max in 1.5f64..1000.0) {
            let mut prev = 0.0;
            for b in 1..=total {
                let s = scale_linear(b, total, s_max);
                prop_assert!(s >= 1.0 / s_max - 1e-12 && s <= s_max + 1e-9);
                prop_assert!(s >= prev);
                prev = s;
            }
        }

        #[test]
        fn cosine_bounded(p in 0.0f64..=1.0, s_max in 1.5f64..1000.0) {
            let s = scale_cosine(p, s_max, 1.0 / s_max);
            prop_assert!(s >= 1.0 / s_max && s <= s_max);
        }

        #[test]
        fn cosine_three_phases(p in 0.001f64..0.499, dp in 1e-4f64..1e-3) {
            let (s_max, s_min) = (400.0, 1.0 / 400.0);
            let a = scale_cosine(p, s_max, s_min);
            let b = scale_cosine((p + dp).min(0.5), s_max, s_min);
            prop_assert!(b <= a);
            let c = scale_cosine(1.0 - p, s_max, s_min);
            let d = scale_cosine((1.0 - p + dp).min(1.0), s_max, s_min);
            prop_assert!(d >= c);
        }
    }
}
