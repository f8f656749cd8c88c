use super::{RewardConfig, SimConfig};

/// Time gap `d / v_ego` (s). A stationary EGO yields `ttc_cap`.
pub fn time_gap(d: f64, v_ego: f64, cfg: &SimConfig) -> f64 {
    if v_ego <= 0.0 {
        cfg.ttc_cap
    } else {
        d / v_ego
    }
}

/// Time to collision (s). Defined only while EGO closes in on the MIO;
/// otherwise `ttc_cap`. A gap that is already non-positive gives `0`.
pub fn ttc(d: f64, v_ego: f64, v_mio: f64, cfg: &SimConfig) -> f64 {
    let closing = v_ego - v_mio;
    if d <= 0.0 {
        0.0
    } else if closing > 0.0 {
        (d / closing).min(cfg.ttc_cap)
    } else {
        cfg.ttc_cap
    }
}

/// Time-gap shaping term: `-1/t` below the band, `+t` inside, `-t` above.
pub fn gap_reward(tgap: f64, r: &RewardConfig) -> f64 {
    if tgap < r.band_lo {
        -1.0 / tgap
    } else if tgap <= r.band_hi {
        tgap
    } else {
        -tgap
    }
}

/// Per-step reward. The jerk penalty acts on the jerk magnitude.
pub fn reward(tgap: f64, jerk: f64, v_ego: f64, collided: bool, cfg: &SimConfig) -> f64 {
    let r = &cfg.reward;
    if collided {
        return r.collision_penalty;
    }
    let tgap = tgap.max(cfg.tgap_floor);
    gap_reward(tgap, r) + r.jerk_coeff * jerk.abs() + r.speed_coeff * v_ego / r.v_max
}
