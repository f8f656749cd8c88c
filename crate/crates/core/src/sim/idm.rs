use super::IdmParams;
use crate::error::{Error, Result};

/// Desired dynamic gap `d*(v, Δv)`, with `dv = v - v_lead` the approaching rate.
///
/// Falls below `min_gap` when the lead vehicle is pulling away.
pub fn idm_desired_gap(v: f64, dv: f64, p: &IdmParams) -> f64 {
    let b = p.comfort_decel.abs();
    p.min_gap + v * p.time_headway + v * dv / (2.0 * (b * p.accel_max).sqrt())
}

/// IDM acceleration towards desired speed `v_d` behind a lead vehicle at gap `d`.
///
/// The result is clamped to `[decel_limit, accel_max]`.
pub fn idm_acceleration(v: f64, v_d: f64, d: f64, dv: f64, p: &IdmParams) -> Result<f64> {
    if d <= 0.0 {
        return Err(Error::DegenerateGap(d));
    }
    let interaction = (idm_desired_gap(v, dv, p) / d).powi(2);
    let raw = p.accel_max * (1.0 - (v / v_d).powf(p.exponent) - interaction);
    Ok(raw.clamp(p.decel_limit, p.accel_max))
}

/// Free-road IDM acceleration (no vehicle ahead).
pub fn idm_free_road_acceleration(v: f64, v_d: f64, p: &IdmParams) -> f64 {
    let raw = p.accel_max * (1.0 - (v / v_d).powf(p.exponent));
    raw.clamp(p.decel_limit, p.accel_max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn desired_gap_values() {
        let p = IdmParams::default();
        assert_eq!(idm_desired_gap(0.0, 0.0, &p), 3.0);
        assert_abs_diff_eq!(idm_desired_gap(20.0, 0.0, &p), 33.0, epsilon = 1e-12);
        // 3 + 30 + 100 / (2 sqrt 8)
        assert_abs_diff_eq!(idm_desired_gap(20.0, 5.0, &p), 50.6777, epsilon = 0.01);
        assert!(idm_desired_gap(20.0, -5.0, &p) < 33.0);
    }

    #[test]
    fn acceleration_values() {
        let p = IdmParams::default();
        let a = idm_acceleration(20.0, 30.0, 50.0, 5.0, &p).unwrap();
        assert_abs_diff_eq!(a, -0.90, epsilon = 0.01);

        let free = idm_acceleration(30.0, 30.0, 1e9, 0.0, &p).unwrap();
        assert!(free <= 0.0 && free > -1e-9);

        let standstill = idm_acceleration(0.0, 30.0, 1000.0, 0.0, &p).unwrap();
        assert!(standstill <= 4.0);
        assert_abs_diff_eq!(standstill, 4.0 * (1.0 - (3.0f64 / 1000.0).powi(2)), epsilon = 1e-12);
    }

    #[test]
    fn acceleration_rejects_non_positive_gap() {
        let p = IdmParams::default();
        assert!(matches!(
            idm_acceleration(10.0, 30.0, 0.0, 0.0, &p),
            Err(Error::DegenerateGap(_))
        ));
    }

    #[test]
    fn acceleration_is_clamped() {
        let p = IdmParams::default();
        assert_eq!(idm_acceleration(30.0, 30.0, 1.0, 20.0, &p).unwrap(), -4.0);
        assert_eq!(idm_free_road_acceleration(40.0, 10.0, &p), -4.0);
    }

    #[test]
    fn monotone_in_gap_and_approach_rate() {
        let p = IdmParams::default();
        let speeds = [0.0, 5.0, 12.0, 25.0, 40.0];
        let gaps: Vec<f64> = (1..=60).map(|i| i as f64 * 2.5).collect();
        let rates: Vec<f64> = (-20..=20).map(|i| i as f64 * 1.5).collect();
        for &v in &speeds {
            for &dv in &rates {
                let mut prev = f64::NEG_INFINITY;
                for &d in &gaps {
                    let a = idm_acceleration(v, 30.0, d, dv, &p).unwrap();
                    assert!(a >= prev - 1e-12, "not non-decreasing in d at v={v} dv={dv} d={d}");
                    prev = a;
                }
            }
            for &d in &gaps {
                let mut prev = f64::INFINITY;
                for &dv in &rates {
                    let a = idm_acceleration(v, 30.0, d, dv, &p).unwrap();
                    // the interaction term is a square, so monotonicity in dv
                    // only holds while the desired gap stays non-negative
                    if idm_desired_gap(v, dv, &p) < 0.0 {
                        continue;
                    }
                    assert!(a <= prev + 1e-12, "not non-increasing in dv at v={v} d={d} dv={dv}");
                    prev = a;
                }
            }
        }
    }
}
