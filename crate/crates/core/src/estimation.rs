//! Pilot-based gain estimation and per-UAV dataset collection.
//!
//! The UAV sends one pilot of power `P` through a unit-norm beam `w`; the UE
//! combines with `q` and observes `r = beta * alpha + q^H n` where
//! `beta = sqrt(P) (w^T kron q^H)(a_t^* kron a_r)`. The Kronecker product
//! factors as `(w^T a_t^*)(q^H a_r)`, so the `M N`-long vector is never built.
//! The UE reports `r` back over an ideal feedback link and the UAV forms
//! `alpha~ = r / beta`, whose error variance is `sigma^2 / |beta|^2`.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::channel::{link_angles, steering_vector, true_gain, ArrayGeometry, ChannelSample, Rect, Scene};
use crate::error::{domain, parse, Error, Result};
use crate::textfmt::{join, read_f64s, split_header};
use crate::Point;

/// Beamforming (`w`, length `M`) and combining (`q`, length `N`) vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamPair {
    pub w: Vec<Complex64>,
    pub q: Vec<Complex64>,
}

/// Maximum-ratio beams toward the geometric link angles:
/// `w = a_t / sqrt(M)` and `q = a_r / sqrt(N)`.
pub fn design_beams(uav: Point, ue: Point, geometry: &ArrayGeometry) -> Result<BeamPair> {
    let (phi_t, phi_r) = link_angles(uav, ue)?;
    let m = geometry.tx_antennas();
    let n = geometry.rx_antennas();
    let w_scale = 1.0 / (m as f64).sqrt();
    let q_scale = 1.0 / (n as f64).sqrt();
    Ok(BeamPair {
        w: steering_vector(phi_t, m, geometry)?
            .into_iter()
            .map(|c| c * w_scale)
            .collect(),
        q: steering_vector(phi_r, n, geometry)?
            .into_iter()
            .map(|c| c * q_scale)
            .collect(),
    })
}

/// `beta = sqrt(P) (w^T a_t^*)(q^H a_r)`.
pub fn pilot_beta(
    uav: Point,
    ue: Point,
    beams: &BeamPair,
    geometry: &ArrayGeometry,
    pilot_power: f64,
) -> Result<Complex64> {
    let (phi_t, phi_r) = link_angles(uav, ue)?;
    let a_t = steering_vector(phi_t, geometry.tx_antennas(), geometry)?;
    let a_r = steering_vector(phi_r, geometry.rx_antennas(), geometry)?;
    if beams.w.len() != a_t.len() || beams.q.len() != a_r.len() {
        return Err(Error::Shape(format!(
            "beams ({}, {}) do not match arrays ({}, {})",
            beams.w.len(),
            beams.q.len(),
            a_t.len(),
            a_r.len()
        )));
    }
    let tx: Complex64 = beams.w.iter().zip(&a_t).map(|(w, a)| w * a.conj()).sum();
    let rx: Complex64 = beams.q.iter().zip(&a_r).map(|(q, a)| q.conj() * a).sum();
    Ok(pilot_power.sqrt() * tx * rx)
}

/// One received pilot and the quantities needed to invert it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PilotObservation {
    pub r: Complex64,
    pub beta: Complex64,
    pub pilot_power: f64,
    pub noise_variance: f64,
}

/// Draws `q^H n` with `n ~ CN(0, sigma^2 I_N)`.
fn combined_noise<R: Rng>(q: &[Complex64], noise_variance: f64, rng: &mut R) -> Complex64 {
    if noise_variance == 0.0 {
        return Complex64::new(0.0, 0.0);
    }
    let sd = (noise_variance / 2.0).sqrt();
    q.iter()
        .map(|qk| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            qk.conj() * Complex64::new(sd * re, sd * im)
        })
        .sum()
}

#[allow(clippy::too_many_arguments)]
fn observe_with<R: Rng>(
    scene: &Scene,
    geometry: &ArrayGeometry,
    uav: Point,
    ue: Point,
    t: f64,
    beams: &BeamPair,
    pilot_power: f64,
    noise_variance: f64,
    rng: &mut R,
) -> Result<(PilotObservation, Complex64, bool)> {
    if !(pilot_power > 0.0) {
        return Err(domain(format!("pilot power must be positive, got {pilot_power}")));
    }
    if !(noise_variance >= 0.0) {
        return Err(domain("noise variance must be non-negative"));
    }
    let (alpha, los) = true_gain(scene, uav, ue, t)?;
    let beta = pilot_beta(uav, ue, beams, geometry, pilot_power)?;
    let r = beta * alpha + combined_noise(&beams.q, noise_variance, rng);
    Ok((
        PilotObservation {
            r,
            beta,
            pilot_power,
            noise_variance,
        },
        alpha,
        los,
    ))
}

/// Received pilot `r = beta alpha(x, y, t) + q^H n`, with the noise drawn
/// from a stream seeded by `noise_seed`.
#[allow(clippy::too_many_arguments)]
pub fn pilot_observe(
    scene: &Scene,
    geometry: &ArrayGeometry,
    uav: Point,
    ue: Point,
    t: f64,
    beams: &BeamPair,
    pilot_power: f64,
    noise_variance: f64,
    noise_seed: u64,
) -> Result<PilotObservation> {
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    observe_with(scene, geometry, uav, ue, t, beams, pilot_power, noise_variance, &mut rng)
        .map(|(obs, _, _)| obs)
}

pub const DEFAULT_BETA_FLOOR: f64 = 1e-9;

/// `alpha~ = r / beta`; fails when `|beta| <= beta_floor`.
pub fn estimate_gain(obs: &PilotObservation, beta_floor: f64) -> Result<Complex64> {
    let magnitude = obs.beta.norm();
    if !(magnitude > beta_floor) {
        return Err(Error::SingularBeam {
            magnitude,
            threshold: beta_floor,
        });
    }
    Ok(obs.r / obs.beta)
}

/// Variance of `alpha~ - alpha` for an observation: `sigma^2 / |beta|^2`.
pub fn estimation_error_variance(obs: &PilotObservation) -> f64 {
    obs.noise_variance / obs.beta.norm_sqr()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimationParams {
    pub geometry: ArrayGeometry,
    pub pilot_power: f64,
    pub noise_variance: f64,
    pub beta_floor: f64,
}

/// Half-open time interval `[start, end)` in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeWindow {
    pub start: f64,
    pub end: f64,
}

impl TimeWindow {
    pub fn new(start: f64, end: f64) -> Result<Self> {
        if !(start >= 0.0 && end > start && end.is_finite()) {
            return Err(domain(format!("bad time window [{start}, {end})")));
        }
        Ok(Self { start, end })
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.start && t <= self.end
    }

    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

/// Channel dataset gathered by one UAV (or generated by one generator when
/// `synthetic` is set).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub owner: usize,
    pub region: Rect,
    pub window: TimeWindow,
    pub seed: u64,
    pub synthetic: bool,
    pub samples: Vec<ChannelSample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Collects `count` pilot-estimated samples at uniformly drawn UE positions
/// and times inside `region x window`, for the UAV hovering at `uav`.
#[allow(clippy::too_many_arguments)]
pub fn collect_dataset(
    scene: &Scene,
    uav_id: usize,
    uav: Point,
    region: Rect,
    window: TimeWindow,
    count: usize,
    params: &EstimationParams,
    seed: u64,
) -> Result<Dataset> {
    if count == 0 {
        return Err(domain("dataset size must be positive"));
    }
    if !scene.bounds.contains_rect(&region) {
        return Err(domain(format!("region {region:?} is outside the scene")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        let ue = [
            rng.random_range(region.x_min..region.x_max),
            rng.random_range(region.y_min..region.y_max),
            scene.ue_height,
        ];
        let t = rng.random_range(window.start..window.end);
        let beams = design_beams(uav, ue, &params.geometry)?;
        let (obs, _, los) = observe_with(
            scene,
            &params.geometry,
            uav,
            ue,
            t,
            &beams,
            params.pilot_power,
            params.noise_variance,
            &mut rng,
        )?;
        samples.push(ChannelSample {
            x: uav,
            y: ue,
            t,
            gain: estimate_gain(&obs, params.beta_floor)?,
            los,
        });
    }
    Ok(Dataset {
        owner: uav_id,
        region,
        window,
        seed,
        synthetic: false,
        samples,
    })
}

pub const DATASET_COLUMNS: [&str; 10] = [
    "uav_x", "uav_y", "uav_z", "ue_x", "ue_y", "ue_z", "t", "gain_re", "gain_im", "los",
];
const DATASET_MAGIC: &str = "uavchan-dataset v1";

fn column(s: &ChannelSample, c: usize) -> f64 {
    match c {
        0..=2 => s.x[c],
        3..=5 => s.y[c - 3],
        6 => s.t,
        7 => s.gain.re,
        8 => s.gain.im,
        _ => f64::from(u8::from(s.los)),
    }
}

/// Binary dataset file: an ASCII header (`key = value` lines closed by
/// `end_header`), then the ten columns of [`DATASET_COLUMNS`] one after the
/// other, each as `samples` little-endian IEEE-754 doubles.
pub fn write_dataset(ds: &Dataset) -> Vec<u8> {
    let r = &ds.region;
    let mut out = format!(
        "{DATASET_MAGIC}\nowner = {}\nseed = {}\nsynthetic = {}\nregion = {}\nwindow = {}\nsamples = {}\ncolumns = {}\nend_header\n",
        ds.owner,
        ds.seed,
        ds.synthetic,
        join(&[r.x_min, r.x_max, r.y_min, r.y_max]),
        join(&[ds.window.start, ds.window.end]),
        ds.samples.len(),
        DATASET_COLUMNS.join(" "),
    )
    .into_bytes();
    for c in 0..DATASET_COLUMNS.len() {
        for s in &ds.samples {
            out.extend_from_slice(&column(s, c).to_le_bytes());
        }
    }
    out
}

pub fn read_dataset(bytes: &[u8]) -> Result<Dataset> {
    let (h, body) = split_header(bytes, DATASET_MAGIC)?;
    let n: usize = h.get("samples")?;
    let region: Vec<f64> = h.get_list("region")?;
    let window: Vec<f64> = h.get_list("window")?;
    if region.len() != 4 || window.len() != 2 {
        return Err(parse("region/window have the wrong arity"));
    }
    let body = read_f64s(body, n * DATASET_COLUMNS.len())?;
    let value = |c: usize, i: usize| body[c * n + i];
    let samples = (0..n)
        .map(|i| ChannelSample {
            x: [value(0, i), value(1, i), value(2, i)],
            y: [value(3, i), value(4, i), value(5, i)],
            t: value(6, i),
            gain: Complex64::new(value(7, i), value(8, i)),
            los: value(9, i) != 0.0,
        })
        .collect();
    Ok(Dataset {
        owner: h.get("owner")?,
        region: Rect::new(region[0], region[1], region[2], region[3])?,
        window: TimeWindow::new(window[0], window[1])?,
        seed: h.get("seed")?,
        synthetic: h.get("synthetic")?,
        samples,
    })
}

/// CSV export with the same column names as the binary file.
pub fn dataset_csv(ds: &Dataset) -> String {
    let mut out = DATASET_COLUMNS.join(",");
    out.push('\n');
    for s in &ds.samples {
        let row: Vec<String> = (0..DATASET_COLUMNS.len())
            .map(|c| {
                if c == 9 {
                    u8::from(s.los).to_string()
                } else {
                    column(s, c).to_string()
                }
            })
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}
