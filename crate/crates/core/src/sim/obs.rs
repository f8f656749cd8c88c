use serde::{Deserialize, Serialize};

use super::Range;

pub const OBS_DIM: usize = 5;

/// Raw (unclamped) EGO-centric observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub v_ego: f64,
    pub a_ego: f64,
    pub jerk_ego: f64,
    /// Bumper-to-bumper gap to the lead vehicle (m).
    pub d_mio: f64,
    /// `v_mio - v_ego` (m/s).
    pub dv_mio: f64,
}

impl Observation {
    pub fn to_array(&self) -> [f64; OBS_DIM] {
        [self.v_ego, self.a_ego, self.jerk_ego, self.d_mio, self.dv_mio]
    }
}

/// Per-field ranges used to normalize observations into `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservationRanges(pub [Range; OBS_DIM]);

impl Default for ObservationRanges {
    fn default() -> Self {
        Self([
            Range::new(10.0, 40.0),
            Range::new(-4.0, 4.0),
            Range::new(-8.0, 8.0),
            Range::new(10.0, 120.0),
            Range::new(-40.0, 40.0),
        ])
    }
}

/// Clamp each field to its range and map it affinely onto `[-1, 1]`.
pub fn normalize_obs(raw: &Observation) -> [f64; OBS_DIM] {
    normalize_with(raw, &ObservationRanges::default())
}

pub fn normalize_with(raw: &Observation, ranges: &ObservationRanges) -> [f64; OBS_DIM] {
    let mut out = raw.to_array();
    for (x, r) in out.iter_mut().zip(ranges.0.iter()) {
        let c = r.clamp(*x);
        *x = 2.0 * (c - r.lo) / r.width() - 1.0;
    }
    out
}
