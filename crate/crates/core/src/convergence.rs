//! Convergence analytics for sample sharing over a homogeneous network.
//!
//! Coverage of the global distribution is modelled as an absorbing chain: it
//! cannot happen before iteration `l_max`, and at iteration `i >= l_max` it
//! happens (if not already) with hazard `eta^l_max / (1 + N eta)^(i - 1)`.
//! The coverage probability after `T` iterations is the closed-form sum
//! [`coverage_probability`]; [`coverage_probability_product`] is the same
//! quantity as `1 - prod (1 - h_i)`, and [`mc_coverage_oracle`] simulates the
//! chain directly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{config, domain, Error, Result};
use crate::graph::{MaxPath, NetGraph};

/// Hazards below this no longer move a double-precision probability.
const NEGLIGIBLE_HAZARD: f64 = 1e-18;
const MC_BLOCK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceParams {
    pub share_ratio: f64,
    /// Homogeneous in-degree `N`.
    pub in_degree: usize,
    pub l_max: usize,
    pub local_train_time_s: f64,
    pub deadline_s: f64,
    pub confidence: f64,
}

impl ConvergenceParams {
    /// Ring of `uavs` nodes: `N = 1`, `l_max = I - 1`.
    pub fn for_ring(uavs: usize, share_ratio: f64, local_train_time_s: f64, deadline_s: f64, confidence: f64) -> Result<Self> {
        if uavs < 2 {
            return Err(config("a ring needs at least two UAVs"));
        }
        Ok(Self {
            share_ratio,
            in_degree: 1,
            l_max: uavs - 1,
            local_train_time_s,
            deadline_s,
            confidence,
        })
    }

    /// Reads `N` and `l_max` off a strongly connected graph with equal
    /// in-degrees.
    pub fn from_graph(g: &NetGraph, share_ratio: f64, local_train_time_s: f64, deadline_s: f64, confidence: f64) -> Result<Self> {
        let l_max = match g.max_shortest_path() {
            MaxPath::Finite { overall, .. } if overall > 0 => overall,
            _ => return Err(domain("convergence analytics need a strongly connected graph")),
        };
        let in_degree = g.in_degree(0);
        if (1..g.nodes()).any(|i| g.in_degree(i) != in_degree) {
            return Err(domain("convergence analytics assume equal in-degrees"));
        }
        Ok(Self {
            share_ratio,
            in_degree,
            l_max,
            local_train_time_s,
            deadline_s,
            confidence,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.share_ratio > 0.0 && self.share_ratio.is_finite()) {
            return Err(config("share ratio must be positive"));
        }
        if self.in_degree == 0 || self.l_max == 0 {
            return Err(config("in-degree and l_max must be positive"));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(config(format!("confidence {} outside (0, 1)", self.confidence)));
        }
        if !(self.local_train_time_s >= 0.0 && self.deadline_s >= 0.0) {
            return Err(config("iteration times must be non-negative"));
        }
        // The hazard is largest at i = l_max.
        hazard(self.l_max, self).map(|_| ())
    }

    fn raw_hazard(&self, i: usize) -> f64 {
        let eta = self.share_ratio;
        let growth = 1.0 + self.in_degree as f64 * eta;
        // exp/ln keeps large exponents from overflowing to inf/inf.
        (self.l_max as f64 * eta.ln() - (i as f64 - 1.0) * growth.ln()).exp()
    }
}

/// Per-iteration coverage hazard `eta^l_max / (1 + N eta)^(i - 1)`.
pub fn hazard(i: usize, params: &ConvergenceParams) -> Result<f64> {
    if i < params.l_max {
        return Err(domain(format!("hazard defined for i >= l_max = {}, got {i}", params.l_max)));
    }
    let value = params.raw_hazard(i);
    if value > 1.0 + 1e-12 {
        return Err(Error::Regime { iteration: i, value });
    }
    Ok(value.min(1.0))
}

/// Coverage probability after `T` iterations, evaluated term by term:
/// `h(l) + sum_{i = l+1}^{T} [prod_{j = l}^{i-1} (1 - h(j))] h(i)`.
pub fn coverage_probability(t: usize, params: &ConvergenceParams) -> Result<f64> {
    params.validate()?;
    let l = params.l_max;
    if t < l {
        return Ok(0.0);
    }
    let mut p = hazard(l, params)?;
    for i in l + 1..=t {
        let mut survive = 1.0;
        for j in l..i {
            survive *= 1.0 - hazard(j, params)?;
        }
        p += survive * hazard(i, params)?;
    }
    Ok(p)
}

/// `1 - prod_{i = l_max}^{T} (1 - h(i))`, zero before `l_max`.
pub fn coverage_probability_product(t: usize, params: &ConvergenceParams) -> Result<f64> {
    params.validate()?;
    if t < params.l_max {
        return Ok(0.0);
    }
    let mut survive = 1.0;
    for i in params.l_max..=t {
        survive *= 1.0 - hazard(i, params)?;
    }
    Ok(1.0 - survive)
}

/// `lim_{T -> inf} p(T)`.
pub fn coverage_supremum(params: &ConvergenceParams) -> Result<f64> {
    params.validate()?;
    let mut survive = 1.0;
    let mut i = params.l_max;
    loop {
        let h = hazard(i, params)?;
        survive *= 1.0 - h;
        if h < NEGLIGIBLE_HAZARD || survive == 0.0 {
            return Ok(1.0 - survive);
        }
        i += 1;
    }
}

/// Iteration count `T_G` at which coverage first reaches the confidence level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConfidenceIteration {
    Reached(usize),
    /// The confidence level exceeds `sup_T p(T)`.
    Unattainable { supremum: f64 },
}

impl ConfidenceIteration {
    pub fn iterations(&self) -> Option<usize> {
        match self {
            ConfidenceIteration::Reached(t) => Some(*t),
            ConfidenceIteration::Unattainable { .. } => None,
        }
    }

    /// Orders `Reached(a) < Reached(b)` for `a < b`, and every reached count
    /// below `Unattainable`.
    pub fn not_after(&self, other: &ConfidenceIteration) -> bool {
        match (self.iterations(), other.iterations()) {
            (Some(a), Some(b)) => a <= b,
            (Some(_), None) | (None, None) => true,
            (None, Some(_)) => false,
        }
    }
}

/// Smallest `T` with `p(T - 1) < p_tau <= p(T)`.
pub fn confidence_iteration(params: &ConvergenceParams) -> Result<ConfidenceIteration> {
    params.validate()?;
    let target = params.confidence;
    let mut survive = 1.0;
    let mut t = params.l_max;
    loop {
        let h = hazard(t, params)?;
        survive *= 1.0 - h;
        if 1.0 - survive >= target {
            return Ok(ConfidenceIteration::Reached(t));
        }
        if h < NEGLIGIBLE_HAZARD || survive == 0.0 {
            return Ok(ConfidenceIteration::Unattainable {
                supremum: 1.0 - survive,
            });
        }
        t += 1;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConvergenceTime {
    Seconds { iterations: usize, seconds: f64 },
    Unattainable { supremum: f64 },
}

/// `C = (t_tau + t_c) T_G`.
pub fn convergence_time(params: &ConvergenceParams) -> Result<ConvergenceTime> {
    Ok(match confidence_iteration(params)? {
        ConfidenceIteration::Reached(t) => ConvergenceTime::Seconds {
            iterations: t,
            seconds: (params.deadline_s + params.local_train_time_s) * t as f64,
        },
        ConfidenceIteration::Unattainable { supremum } => ConvergenceTime::Unattainable { supremum },
    })
}

fn block_seed(seed: u64, block: usize) -> u64 {
    // splitmix64 finaliser over the block index
    let mut z = seed ^ (block as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Monte Carlo estimate of `p(T)` by simulating the hazard chain. Trials are
/// split into fixed blocks with their own seed streams, so the estimate does
/// not depend on the worker count.
pub fn mc_coverage_oracle(params: &ConvergenceParams, t: usize, trials: usize, seed: u64) -> Result<f64> {
    params.validate()?;
    if trials < 10_000 {
        return Err(config(format!("Monte Carlo oracle needs at least 10^4 trials, got {trials}")));
    }
    if t < params.l_max {
        return Ok(0.0);
    }
    let hazards = (params.l_max..=t)
        .map(|i| hazard(i, params))
        .collect::<Result<Vec<_>>>()?;
    let blocks = trials.div_ceil(MC_BLOCK);
    let hits: usize = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(block_seed(seed, b));
            let n = MC_BLOCK.min(trials - b * MC_BLOCK);
            (0..n)
                .filter(|_| hazards.iter().any(|&h| rng.random::<f64>() < h))
                .count()
        })
        .sum();
    Ok(hits as f64 / trials as f64)
}

/// Coverage curve plus the confidence iteration and convergence time.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    /// `(T, p_formula, p_mc)` for `T = 1..=horizon`.
    pub curve: Vec<(usize, f64, f64)>,
    pub iteration: ConfidenceIteration,
    pub time: ConvergenceTime,
}

pub fn convergence_report(params: &ConvergenceParams, horizon: usize, trials: usize, seed: u64) -> Result<ConvergenceReport> {
    let curve = (1..=horizon)
        .map(|t| {
            Ok((
                t,
                coverage_probability(t, params)?,
                mc_coverage_oracle(params, t, trials, seed)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConvergenceReport {
        curve,
        iteration: confidence_iteration(params)?,
        time: convergence_time(params)?,
    })
}

/// `T,p_formula,p_mc` rows and a closing `summary` row.
pub fn report_csv(report: &ConvergenceReport) -> String {
    let mut out = String::from("T,p_formula,p_mc\n");
    for (t, p, mc) in &report.curve {
        out.push_str(&format!("{t},{p},{mc}\n"));
    }
    match report.time {
        ConvergenceTime::Seconds { iterations, seconds } => {
            out.push_str(&format!("summary,T_G={iterations},C_s={seconds}\n"))
        }
        ConvergenceTime::Unattainable { supremum } => {
            out.push_str(&format!("summary,T_G=unattainable,p_sup={supremum}\n"))
        }
    }
    out
}
