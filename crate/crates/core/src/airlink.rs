//! Air-to-air link budgets for exchanging generated samples.
//!
//! Links are free-space, LOS at altitude. A link `i -> j` is usable when some
//! transmit power `P <= P_max` reaches the SNR threshold and moves the
//! per-iteration payload of `eta * S_i` samples within the deadline. Both the
//! SNR and the rate grow with `P`, so the smallest usable power is the larger
//! of the two per-constraint thresholds.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::{distance, linear_to_db, watts_to_dbm, Point};

/// Relative slack used when re-checking constraints that hold with equality.
const CONSTRAINT_SLACK: f64 = 1e-9;

/// Radio parameters shared by every A2A link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct A2AConfig {
    pub bandwidth_hz: f64,
    pub noise_w: f64,
    /// Linear SNR threshold.
    pub snr_threshold: f64,
    pub max_power_w: f64,
    pub deadline_s: f64,
    pub share_ratio: f64,
    pub sample_bits: f64,
    pub wavelength_m: f64,
}

impl A2AConfig {
    /// Bits that UAV `i` must deliver per iteration: `eta * S_i * sample_bits`.
    pub fn payload_bits(&self, dataset_size: usize) -> f64 {
        self.share_ratio * dataset_size as f64 * self.sample_bits
    }

    pub fn validate(&self) -> Result<()> {
        let all_positive = [
            self.bandwidth_hz,
            self.noise_w,
            self.snr_threshold,
            self.max_power_w,
            self.deadline_s,
            self.share_ratio,
            self.sample_bits,
            self.wavelength_m,
        ]
        .iter()
        .all(|v| v.is_finite() && *v > 0.0);
        if all_positive {
            Ok(())
        } else {
            Err(crate::error::config("A2A parameters must all be positive and finite"))
        }
    }
}

/// Free-space power gain `(lambda / (4 pi d))^2`.
pub fn a2a_pathloss(a: Point, b: Point, wavelength: f64) -> Result<f64> {
    let d = distance(a, b);
    if d == 0.0 {
        return Err(domain("A2A endpoints coincide"));
    }
    Ok((wavelength / (4.0 * PI * d)).powi(2))
}

/// Shannon rate `w_b log2(1 + P h / sigma^2)` in bits per second.
pub fn link_rate(power: f64, gain: f64, cfg: &A2AConfig) -> f64 {
    cfg.bandwidth_hz * (1.0 + power * gain / cfg.noise_w).log2()
}

/// Smallest power meeting the SNR, deadline and power-cap constraints, or
/// `None` when the link cannot be used.
pub fn min_power_for_link(gain: f64, cfg: &A2AConfig, dataset_size: usize) -> Option<f64> {
    if !(gain > 0.0) || !gain.is_finite() {
        return None;
    }
    let snr_power = cfg.snr_threshold * cfg.noise_w / gain;
    let required_rate = cfg.payload_bits(dataset_size) / cfg.deadline_s;
    let required_snr = (required_rate / cfg.bandwidth_hz).exp2() - 1.0;
    let time_power = required_snr * cfg.noise_w / gain;
    let power = snr_power.max(time_power);
    (power.is_finite() && power <= cfg.max_power_w).then_some(power)
}

/// Re-checks the three per-link constraints for an assigned power.
pub fn link_satisfies(power: f64, gain: f64, cfg: &A2AConfig, dataset_size: usize) -> bool {
    let snr = power * gain / cfg.noise_w;
    let rate = link_rate(power, gain, cfg);
    let time = cfg.payload_bits(dataset_size) / rate;
    power <= cfg.max_power_w * (1.0 + CONSTRAINT_SLACK)
        && snr >= cfg.snr_threshold * (1.0 - CONSTRAINT_SLACK)
        && time <= cfg.deadline_s * (1.0 + CONSTRAINT_SLACK)
}

/// Budget of one directed link at its assigned power.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkBudget {
    pub from: usize,
    pub to: usize,
    pub distance_m: f64,
    pub pathloss: f64,
    pub tx_power_w: f64,
    pub snr: f64,
    pub rate_bps: f64,
    pub tx_time_s: f64,
}

impl LinkBudget {
    pub fn at_power(
        from: usize,
        to: usize,
        positions: &[Point],
        power: f64,
        cfg: &A2AConfig,
        dataset_size: usize,
    ) -> Result<Self> {
        let gain = a2a_pathloss(positions[from], positions[to], cfg.wavelength_m)?;
        let rate = link_rate(power, gain, cfg);
        Ok(Self {
            from,
            to,
            distance_m: distance(positions[from], positions[to]),
            pathloss: gain,
            tx_power_w: power,
            snr: power * gain / cfg.noise_w,
            rate_bps: rate,
            tx_time_s: cfg.payload_bits(dataset_size) / rate,
        })
    }
}

/// Feasible receivers of UAV `i`, each with its minimal power, sorted by id.
pub fn feasible_set(i: usize, positions: &[Point], cfg: &A2AConfig, dataset_size: usize) -> Vec<(usize, f64)> {
    positions
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .filter_map(|(j, &pj)| {
            let gain = a2a_pathloss(positions[i], pj, cfg.wavelength_m).ok()?;
            min_power_for_link(gain, cfg, dataset_size).map(|p| (j, p))
        })
        .collect()
}

/// CSV table of every ordered pair:
/// `from,to,distance_m,pathloss_db,min_power_dbm,rate_bps,feasible`.
/// Infeasible rows carry `inf` power and zero rate.
pub fn link_budget_csv(positions: &[Point], cfg: &A2AConfig, dataset_size: usize) -> String {
    let mut out = String::from("from,to,distance_m,pathloss_db,min_power_dbm,rate_bps,feasible\n");
    for (i, &pi) in positions.iter().enumerate() {
        for (j, &pj) in positions.iter().enumerate() {
            if i == j {
                continue;
            }
            let d = distance(pi, pj);
            let gain = a2a_pathloss(pi, pj, cfg.wavelength_m).unwrap_or(0.0);
            let (power, rate, ok) = match min_power_for_link(gain, cfg, dataset_size) {
                Some(p) => (watts_to_dbm(p), link_rate(p, gain, cfg), true),
                None => (f64::INFINITY, 0.0, false),
            };
            out.push_str(&format!(
                "{i},{j},{d},{},{power},{rate},{ok}\n",
                linear_to_db(gain)
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{db_to_linear, dbm_to_watts};

    fn default_cfg() -> A2AConfig {
        A2AConfig {
            bandwidth_hz: 2e6,
            noise_w: dbm_to_watts(-174.0) * 2e6,
            snr_threshold: db_to_linear(10.0),
            max_power_w: dbm_to_watts(40.0),
            deadline_s: 0.1,
            share_ratio: 1.4,
            sample_bits: 320.0,
            wavelength_m: crate::channel::SPEED_OF_LIGHT / 2.4e9,
        }
    }

    #[test]
    fn pathloss_cases() {
        let lambda = 0.125;
        let g1 = a2a_pathloss([0.0; 3], [10.0, 0.0, 0.0], lambda).unwrap();
        let g2 = a2a_pathloss([0.0; 3], [20.0, 0.0, 0.0], lambda).unwrap();
        assert!((g1 / g2 - 4.0).abs() < 1e-12);
        let r0 = lambda / (4.0 * PI);
        assert!((a2a_pathloss([0.0; 3], [0.0, r0, 0.0], lambda).unwrap() - 1.0).abs() < 1e-12);
        // 2.4 GHz at 100 m: -80.05 dB
        let lambda24 = crate::channel::SPEED_OF_LIGHT / 2.4e9;
        let g = a2a_pathloss([0.0; 3], [100.0, 0.0, 0.0], lambda24).unwrap();
        assert!((linear_to_db(g) + 80.05).abs() < 0.01, "{}", linear_to_db(g));
        assert!((g - 9.9e-9).abs() < 0.05e-9);
        assert!(a2a_pathloss([1.0; 3], [1.0; 3], lambda).is_err());
    }

    #[test]
    fn rate_cases() {
        let cfg = default_cfg();
        assert_eq!(link_rate(0.0, 1e-9, &cfg), 0.0);
        let unit = A2AConfig { noise_w: 1.0, ..cfg };
        assert!((link_rate(1.0, 1.0, &unit) - 2e6).abs() < 1e-6);
        let ten_db = link_rate(10.0, 1.0, &unit);
        assert!((ten_db - 2e6 * 11f64.log2()).abs() < 1e-6);
        assert!((ten_db - 6.919e6).abs() < 1e3);
    }

    #[test]
    fn snr_constraint_binds_at_default_parameters() {
        let cfg = default_cfg();
        let required_rate = cfg.payload_bits(1000) / cfg.deadline_s;
        assert!((required_rate - 4.48e6).abs() < 1e-6);
        let required_snr = (required_rate / cfg.bandwidth_hz).exp2() - 1.0;
        assert!((required_snr - 3.7241).abs() < 1e-3);
        let h = 1e-10;
        let p = min_power_for_link(h, &cfg, 1000).unwrap();
        assert!((p - cfg.snr_threshold * cfg.noise_w / h).abs() <= 1e-12 * p);
    }

    #[test]
    fn deadline_binds_with_large_payload() {
        let cfg = A2AConfig {
            share_ratio: 10.0,
            ..default_cfg()
        };
        let h = 1e-10;
        let p = min_power_for_link(h, &cfg, 1000).unwrap();
        let time = cfg.payload_bits(1000) / link_rate(p, h, &cfg);
        assert!((time - cfg.deadline_s).abs() < 1e-9);
        assert!(p > cfg.snr_threshold * cfg.noise_w / h);
    }

    #[test]
    fn vanishing_gain_is_infeasible() {
        let cfg = default_cfg();
        assert_eq!(min_power_for_link(0.0, &cfg, 1000), None);
        assert_eq!(min_power_for_link(1e-40, &cfg, 1000), None);
    }

    #[test]
    fn min_power_is_tight() {
        let cfg = default_cfg();
        for &h in &[1e-6, 1e-9, 1e-12, 1e-14] {
            for &eta in &[0.2, 1.4, 6.0] {
                let cfg = A2AConfig { share_ratio: eta, ..cfg };
                if let Some(p) = min_power_for_link(h, &cfg, 1000) {
                    assert!(link_satisfies(p, h, &cfg, 1000));
                    let below = p * (1.0 - 1e-6);
                    let snr_ok = below * h / cfg.noise_w >= cfg.snr_threshold;
                    let time_ok = cfg.payload_bits(1000) / link_rate(below, h, &cfg) <= cfg.deadline_s;
                    assert!(!(snr_ok && time_ok), "h={h} eta={eta}");
                }
            }
        }
    }

    #[test]
    fn feasible_set_cases() {
        let cfg = default_cfg();
        let close: Vec<Point> = vec![[0.0, 0.0, 50.0], [3.0, 0.0, 50.0], [0.0, 3.0, 50.0], [3.0, 3.0, 50.0]];
        for i in 0..4 {
            let ids: Vec<usize> = feasible_set(i, &close, &cfg, 1000).iter().map(|x| x.0).collect();
            let expected: Vec<usize> = (0..4).filter(|&j| j != i).collect();
            assert_eq!(ids, expected);
        }
        let mut far = close.clone();
        far.push([1e9, 0.0, 50.0]);
        for i in 0..4 {
            assert!(feasible_set(i, &far, &cfg, 1000).iter().all(|x| x.0 != 4));
        }
        assert!(feasible_set(4, &far, &cfg, 1000).is_empty());
        assert!(feasible_set(0, &[[0.0; 3]], &cfg, 1000).is_empty());
    }

    #[test]
    fn budget_table_shape() {
        let cfg = default_cfg();
        let pos = vec![[0.0, 0.0, 50.0], [30.0, 0.0, 50.0], [1e9, 0.0, 50.0]];
        let csv = link_budget_csv(&pos, &cfg, 1000);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "from,to,distance_m,pathloss_db,min_power_dbm,rate_bps,feasible");
        assert_eq!(lines.len(), 7);
        assert!(lines[1].ends_with(",true"));
        assert!(lines[2].ends_with(",false"));
    }
}
