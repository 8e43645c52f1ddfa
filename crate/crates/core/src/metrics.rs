//! Distribution accuracy (histogram Jensen-Shannon divergence) and the
//! downlink rate of the model-based, pilot-baseline and perfect-CSI schemes.

use ndarray::ArrayView2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::f64::consts::LN_2;

use crate::channel::{true_gain, ArrayGeometry, Scene};
use crate::error::{config, domain, Error, Result};
use crate::estimation::TimeWindow;
use crate::gan::{NormalizationSpec, SAMPLE_WIDTH};
use crate::Point;

/// Axis-aligned histogram grid over sample space.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramBinning {
    bins: Vec<usize>,
    ranges: Vec<(f64, f64)>,
    smoothing: f64,
}

impl HistogramBinning {
    pub fn new(bins: Vec<usize>, ranges: Vec<(f64, f64)>, smoothing: f64) -> Result<Self> {
        if bins.is_empty() || bins.len() != ranges.len() {
            return Err(config("one bin count and range per dimension required"));
        }
        if bins.iter().any(|&b| b < 2) {
            return Err(config("every dimension needs at least two bins"));
        }
        if ranges.iter().any(|&(lo, hi)| !(lo < hi && lo.is_finite() && hi.is_finite())) {
            return Err(config("histogram ranges must be finite and non-empty"));
        }
        if !(smoothing >= 0.0 && smoothing.is_finite()) {
            return Err(config("smoothing must be non-negative"));
        }
        Ok(Self { bins, ranges, smoothing })
    }

    /// Bins over `[-1, 1]` in every dimension.
    pub fn unit_cube(bins: Vec<usize>, smoothing: f64) -> Result<Self> {
        let ranges = vec![(-1.0, 1.0); bins.len()];
        Self::new(bins, ranges, smoothing)
    }

    pub fn dims(&self) -> usize {
        self.bins.len()
    }

    pub fn bins(&self) -> &[usize] {
        &self.bins
    }

    pub fn smoothing(&self) -> f64 {
        self.smoothing
    }

    pub fn cells(&self) -> usize {
        self.bins.iter().product()
    }

    /// Flat cell index; values outside a range fall in its edge bin.
    pub fn cell_of(&self, row: &[f64]) -> usize {
        let mut index = 0;
        for ((&v, &n), &(lo, hi)) in row.iter().zip(&self.bins).zip(&self.ranges) {
            let k = ((v - lo) / (hi - lo) * n as f64).floor();
            let k = if k.is_nan() { 0 } else { (k.max(0.0) as usize).min(n - 1) };
            index = index * n + k;
        }
        index
    }

    pub fn histogram(&self, samples: ArrayView2<f64>) -> Result<Vec<f64>> {
        if samples.ncols() != self.dims() {
            return Err(Error::Shape(format!(
                "samples have {} columns, binning has {}",
                samples.ncols(),
                self.dims()
            )));
        }
        let mut counts = vec![0.0; self.cells()];
        for row in samples.rows() {
            let row: Vec<f64> = row.iter().copied().collect();
            counts[self.cell_of(&row)] += 1.0;
        }
        Ok(counts)
    }
}

/// Default estimator over normalised channel samples: 8 x 8 spatial bins,
/// 2 time bins, 8 gain bins, 2 phase bins, smoothing 1e-9.
pub fn default_binning() -> HistogramBinning {
    HistogramBinning::unit_cube(vec![8, 8, 2, 8, 2], 1e-9).expect("valid default binning")
}

fn smoothed(counts: &[f64], eps: f64) -> Result<Vec<f64>> {
    let total: f64 = counts.iter().sum::<f64>() + eps * counts.len() as f64;
    if total <= 0.0 {
        return Err(domain("cannot normalise an empty histogram"));
    }
    Ok(counts.iter().map(|c| (c + eps) / total).collect())
}

fn kl(p: &[f64], m: &[f64]) -> f64 {
    p.iter()
        .zip(m)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &mi)| pi * (pi / mi).ln())
        .sum()
}

/// JSD in nats between two count histograms after adding `smoothing` to
/// every cell.
pub fn jsd_counts(p: &[f64], q: &[f64], smoothing: f64) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Shape("histograms differ in length".into()));
    }
    let p = smoothed(p, smoothing)?;
    let q = smoothed(q, smoothing)?;
    let m: Vec<f64> = p.iter().zip(&q).map(|(a, b)| 0.5 * (a + b)).collect();
    let value = 0.5 * (kl(&p, &m) + kl(&q, &m));
    Ok(value.clamp(0.0, LN_2))
}

/// JSD in nats between two sample sets under `binning`.
pub fn jsd(p: ArrayView2<f64>, q: ArrayView2<f64>, binning: &HistogramBinning) -> Result<f64> {
    if p.nrows() == 0 || q.nrows() == 0 {
        return Err(domain("JSD needs two non-empty sample sets"));
    }
    jsd_counts(&binning.histogram(p)?, &binning.histogram(q)?, binning.smoothing)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateEvalConfig {
    pub bandwidth_hz: f64,
    pub tx_power_w: f64,
    pub noise_w: f64,
    pub coherence_s: f64,
    /// Pilot time spent per coherence block.
    pub pilot_overhead_s: f64,
    /// Evaluated UEs per square metre of scene.
    pub ue_density_per_m2: f64,
    /// Evaluation instants per UE.
    pub times_per_ue: usize,
    /// Generated samples per gain predictor.
    pub pool_size: usize,
}

impl RateEvalConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.bandwidth_hz, self.tx_power_w, self.noise_w, self.coherence_s, self.ue_density_per_m2];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(config("rate evaluation settings must be positive"));
        }
        if !(self.pilot_overhead_s >= 0.0 && self.pilot_overhead_s < self.coherence_s) {
            return Err(config("pilot overhead must lie in [0, coherence block)"));
        }
        if self.times_per_ue == 0 || self.pool_size == 0 {
            return Err(config("times per UE and pool size must be positive"));
        }
        Ok(())
    }

    /// `w log2(1 + P g^2 M N / sigma^2)` for gain magnitude `g`.
    pub fn shannon_rate(&self, magnitude: f64, geometry: &ArrayGeometry) -> f64 {
        let beam = (geometry.tx_antennas() * geometry.rx_antennas()) as f64;
        self.bandwidth_hz * (1.0 + self.tx_power_w * magnitude * magnitude * beam / self.noise_w).log2()
    }
}

/// One evaluated UE position and time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalPoint {
    pub ue: Point,
    pub t: f64,
}

/// UE positions drawn uniformly over the scene at the configured density,
/// each evaluated at `times_per_ue` uniform instants in `window`.
pub fn sample_placements(scene: &Scene, window: TimeWindow, cfg: &RateEvalConfig, seed: u64) -> Result<Vec<EvalPoint>> {
    cfg.validate()?;
    let b = scene.bounds;
    let ues = ((cfg.ue_density_per_m2 * b.width() * b.depth()).round() as usize).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(ues * cfg.times_per_ue);
    for _ in 0..ues {
        let ue = [
            rng.random_range(b.x_min..b.x_max),
            rng.random_range(b.y_min..b.y_max),
            scene.ue_height,
        ];
        for _ in 0..cfg.times_per_ue {
            out.push(EvalPoint {
                ue,
                t: rng.random_range(window.start..window.end),
            });
        }
    }
    Ok(out)
}

/// Order-fixed pairwise summation.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        n => pairwise_sum(&values[..n / 2]) + pairwise_sum(&values[n / 2..]),
    }
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        pairwise_sum(values) / values.len() as f64
    }
}

fn serving_uav(scene: &Scene, p: &EvalPoint) -> Point {
    scene.uav_position(scene.serving_region(p.ue[0], p.ue[1]))
}

/// Per-point rate with the true gain and full beamforming gain.
pub fn perfect_csi_rates(scene: &Scene, points: &[EvalPoint], cfg: &RateEvalConfig, geometry: &ArrayGeometry) -> Result<Vec<f64>> {
    points
        .par_iter()
        .map(|p| {
            let (alpha, _) = true_gain(scene, serving_uav(scene, p), p.ue, p.t)?;
            Ok(cfg.shannon_rate(alpha.norm(), geometry))
        })
        .collect()
}

/// Per-point perfect-CSI rate scaled by the payload fraction of each
/// coherence block.
pub fn pilot_baseline_rates(scene: &Scene, points: &[EvalPoint], cfg: &RateEvalConfig, geometry: &ArrayGeometry) -> Result<Vec<f64>> {
    let payload = 1.0 - cfg.pilot_overhead_s / cfg.coherence_s;
    Ok(perfect_csi_rates(scene, points, cfg, geometry)?
        .into_iter()
        .map(|r| payload * r)
        .collect())
}

pub fn rate_perfect_csi(scene: &Scene, points: &[EvalPoint], cfg: &RateEvalConfig, geometry: &ArrayGeometry) -> Result<f64> {
    cfg.validate()?;
    Ok(mean(&perfect_csi_rates(scene, points, cfg, geometry)?))
}

pub fn rate_pilot_baseline(scene: &Scene, points: &[EvalPoint], cfg: &RateEvalConfig, geometry: &ArrayGeometry) -> Result<f64> {
    cfg.validate()?;
    Ok(mean(&pilot_baseline_rates(scene, points, cfg, geometry)?))
}

/// Gain lookup backed by a pool of generated samples: a query returns the
/// gain of the nearest pool sample in normalised `(x, y, t)`, or `None` when
/// that sample decodes as NLOS.
#[derive(Debug, Clone, PartialEq)]
pub struct GainPredictor {
    keys: Vec<[f64; 3]>,
    magnitudes: Vec<Option<f64>>,
    spec: NormalizationSpec,
}

impl GainPredictor {
    /// Builds a predictor from normalised samples (one per row).
    pub fn from_pool(pool: ArrayView2<f64>, spec: &NormalizationSpec) -> Result<Self> {
        if pool.nrows() == 0 {
            return Err(domain("gain predictor needs a non-empty generated pool"));
        }
        if pool.ncols() != SAMPLE_WIDTH {
            return Err(Error::Shape(format!("pool width {} != {SAMPLE_WIDTH}", pool.ncols())));
        }
        let mut keys = Vec::with_capacity(pool.nrows());
        let mut magnitudes = Vec::with_capacity(pool.nrows());
        for row in pool.rows() {
            let v: Vec<f64> = row.iter().copied().collect();
            let s = spec.denormalize(&v, [0.0; 3], 0.0)?;
            keys.push([v[0].clamp(-1.0, 1.0), v[1].clamp(-1.0, 1.0), v[2].clamp(-1.0, 1.0)]);
            magnitudes.push(s.los.then(|| s.gain.norm()));
        }
        Ok(Self {
            keys,
            magnitudes,
            spec: *spec,
        })
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn predict(&self, ue: Point, t: f64) -> Option<f64> {
        let b = &self.spec.bounds;
        let w = &self.spec.window;
        let q = [
            2.0 * (ue[0] - b.x_min) / b.width() - 1.0,
            2.0 * (ue[1] - b.y_min) / b.depth() - 1.0,
            2.0 * (t - w.start) / w.duration() - 1.0,
        ];
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, k) in self.keys.iter().enumerate() {
            let d = (k[0] - q[0]).powi(2) + (k[1] - q[1]).powi(2) + (k[2] - q[2]).powi(2);
            if d < best_d {
                best = i;
                best_d = d;
            }
        }
        self.magnitudes[best]
    }
}

/// Anything that predicts the link gain magnitude for a UE, `None` meaning
/// NLOS.
pub trait GainOracle: Sync {
    fn predict_gain(&self, ue: Point, t: f64) -> Option<f64>;
}

impl GainOracle for GainPredictor {
    fn predict_gain(&self, ue: Point, t: f64) -> Option<f64> {
        self.predict(ue, t)
    }
}

/// Per-point model-based rate: `min(R(predicted), R(true))` when the link is
/// both predicted and truly LOS, zero otherwise. No pilot overhead.
pub fn model_based_rates<P: GainOracle>(
    scene: &Scene,
    predictors: &[P],
    points: &[EvalPoint],
    cfg: &RateEvalConfig,
    geometry: &ArrayGeometry,
) -> Result<Vec<f64>> {
    if predictors.len() != scene.regions.len() {
        return Err(domain(format!(
            "{} predictors for {} service regions",
            predictors.len(),
            scene.regions.len()
        )));
    }
    points
        .par_iter()
        .map(|p| {
            let region = scene.serving_region(p.ue[0], p.ue[1]);
            let (alpha, los) = true_gain(scene, scene.uav_position(region), p.ue, p.t)?;
            Ok(match predictors[region].predict_gain(p.ue, p.t) {
                Some(g) if los => cfg
                    .shannon_rate(g, geometry)
                    .min(cfg.shannon_rate(alpha.norm(), geometry)),
                _ => 0.0,
            })
        })
        .collect()
}

pub fn rate_model_based<P: GainOracle>(
    scene: &Scene,
    predictors: &[P],
    points: &[EvalPoint],
    cfg: &RateEvalConfig,
    geometry: &ArrayGeometry,
) -> Result<f64> {
    cfg.validate()?;
    Ok(mean(&model_based_rates(scene, predictors, points, cfg, geometry)?))
}

/// One row of the evaluation CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub scheme: String,
    pub network_size: usize,
    pub avg_rate_bps: Option<f64>,
    pub jsd: Option<f64>,
    pub seed: u64,
}

/// `scheme,network_size,avg_rate_bps,jsd,seed`; missing values are empty.
pub fn evaluation_csv(rows: &[EvalRow]) -> String {
    let cell = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    let mut out = String::from("scheme,network_size,avg_rate_bps,jsd,seed\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.scheme,
            r.network_size,
            cell(r.avg_rate_bps),
            cell(r.jsd),
            r.seed
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{generate_scene, Rect, SceneConfig, SPEED_OF_LIGHT};
    use ndarray::Array2;

    fn column(values: &[f64]) -> Array2<f64> {
        Array2::from_shape_vec((values.len(), 1), values.to_vec()).unwrap()
    }

    #[test]
    fn jsd_identical_and_disjoint() {
        let b = HistogramBinning::unit_cube(vec![4], 1e-9).unwrap();
        let a = column(&[-0.9, -0.4, 0.1, 0.6, 0.6]);
        assert!(jsd(a.view(), a.view(), &b).unwrap() < 1e-6);
        let left = column(&[-0.9, -0.8, -0.7]);
        let right = column(&[0.7, 0.8, 0.9]);
        assert!((jsd(left.view(), right.view(), &b).unwrap() - LN_2).abs() < 1e-6);
        assert!(jsd(left.view(), column(&[]).view(), &b).is_err());
    }

    #[test]
    fn jsd_half_shared_mass() {
        // P uniform on bins {0, 1}, Q uniform on bins {1, 2}:
        // M = (1/4, 1/2, 1/4, 0), KL(P||M) = 1/2 ln 2 + 1/2 ln 1 = ln2 / 2
        let p = [1.0, 1.0, 0.0, 0.0];
        let q = [0.0, 1.0, 1.0, 0.0];
        let value = jsd_counts(&p, &q, 0.0).unwrap();
        assert!((value - 0.5 * LN_2).abs() < 1e-15);
        let smoothed = jsd_counts(&p, &q, 1e-9).unwrap();
        assert!((smoothed - 0.5 * LN_2).abs() < 1e-6);
    }

    #[test]
    fn binning_validation() {
        assert!(HistogramBinning::unit_cube(vec![1, 4], 0.0).is_err());
        assert!(HistogramBinning::new(vec![4], vec![(1.0, 1.0)], 0.0).is_err());
        let b = HistogramBinning::unit_cube(vec![2, 3], 0.0).unwrap();
        assert_eq!(b.cells(), 6);
        assert_eq!(b.cell_of(&[1.0, 1.0]), 5);
        assert_eq!(b.cell_of(&[-5.0, -5.0]), 0);
        assert!(b.histogram(Array2::zeros((2, 3)).view()).is_err());
    }

    #[test]
    fn pairwise_sum_matches() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(pairwise_sum(&v), 5050.0);
        assert_eq!(pairwise_sum(&[]), 0.0);
    }

    fn rate_cfg() -> RateEvalConfig {
        RateEvalConfig {
            bandwidth_hz: 50e6,
            tx_power_w: 1.0,
            noise_w: crate::dbm_to_watts(-174.0 + 10.0 * 50e6f64.log10()),
            coherence_s: 0.01,
            pilot_overhead_s: 0.0,
            ue_density_per_m2: 0.005,
            times_per_ue: 2,
            pool_size: 100,
        }
    }

    fn geometry() -> ArrayGeometry {
        ArrayGeometry::half_wavelength(256, 64, SPEED_OF_LIGHT / 30e9).unwrap()
    }

    struct Truth<'a>(&'a Scene);

    impl GainOracle for Truth<'_> {
        fn predict_gain(&self, ue: Point, t: f64) -> Option<f64> {
            let uav = self.0.uav_position(self.0.serving_region(ue[0], ue[1]));
            let (g, los) = true_gain(self.0, uav, ue, t).ok()?;
            los.then(|| g.norm())
        }
    }

    struct Never;

    impl GainOracle for Never {
        fn predict_gain(&self, _: Point, _: f64) -> Option<f64> {
            None
        }
    }

    #[test]
    fn rate_scheme_relations() {
        let scene = generate_scene(&SceneConfig::default(), 3).unwrap();
        let window = TimeWindow::new(0.0, 10.0).unwrap();
        let mut cfg = rate_cfg();
        let pts = sample_placements(&scene, window, &cfg, 1).unwrap();
        assert_eq!(pts.len(), 100);
        let g = geometry();
        let perfect = rate_perfect_csi(&scene, &pts, &cfg, &g).unwrap();
        assert!(perfect > 0.0);
        assert_eq!(rate_pilot_baseline(&scene, &pts, &cfg, &g).unwrap(), perfect);
        cfg.pilot_overhead_s = 0.005;
        let half = rate_pilot_baseline(&scene, &pts, &cfg, &g).unwrap();
        assert!((half - 0.5 * perfect).abs() < 1e-9 * perfect);

        let truth: Vec<Truth> = (0..4).map(|_| Truth(&scene)).collect();
        assert_eq!(rate_model_based(&scene, &truth, &pts, &cfg, &g).unwrap(), perfect);
        let never = [Never, Never, Never, Never];
        assert_eq!(rate_model_based(&scene, &never, &pts, &cfg, &g).unwrap(), 0.0);
        assert!(rate_model_based(&scene, &never[..2], &pts, &cfg, &g).is_err());
    }

    #[test]
    fn closed_form_single_link() {
        let cfg = SceneConfig {
            shadowing_stddev_db: 0.0,
            blockage_coverage: 0.0,
            regions: 1,
            ..SceneConfig::default()
        };
        let scene = generate_scene(&cfg, 0).unwrap();
        let pts = [EvalPoint {
            ue: [80.0, 50.0, 1.5],
            t: 0.0,
        }];
        let rc = rate_cfg();
        let g = geometry();
        let d = crate::distance([50.0, 50.0, 50.0], pts[0].ue);
        let alpha2 = 10f64.powf((-62.0 - 20.0 * d.log10()) / 10.0);
        let expect = 50e6 * (1.0 + rc.tx_power_w * alpha2 * 256.0 * 64.0 / rc.noise_w).log2();
        let got = rate_perfect_csi(&scene, &pts, &rc, &g).unwrap();
        assert!((got - expect).abs() < 1e-9 * expect);
    }

    #[test]
    fn all_blocked_scene_has_zero_rate() {
        let mut scene = generate_scene(&SceneConfig::default(), 0).unwrap();
        for c in 0..scene.blockage.cols() {
            for r in 0..scene.blockage.rows() {
                scene.blockage.set(c, r, true);
            }
        }
        let pts = sample_placements(&scene, TimeWindow::new(0.0, 1.0).unwrap(), &rate_cfg(), 2).unwrap();
        assert_eq!(rate_perfect_csi(&scene, &pts, &rate_cfg(), &geometry()).unwrap(), 0.0);
    }

    #[test]
    fn predictor_lookup() {
        let spec = NormalizationSpec::new(
            Rect::new(0.0, 100.0, 0.0, 100.0).unwrap(),
            TimeWindow::new(0.0, 10.0).unwrap(),
            -120.0,
            -80.0,
            -110.0,
        )
        .unwrap();
        let pool = ndarray::array![[-0.5, -0.5, 0.0, 0.0, 0.1], [0.5, 0.5, 0.0, -1.0, 0.0]];
        let p = GainPredictor::from_pool(pool.view(), &spec).unwrap();
        let g = p.predict([20.0, 20.0, 1.5], 5.0).unwrap();
        assert!((20.0 * g.log10() + 100.0).abs() < 1e-9);
        assert_eq!(p.predict([80.0, 80.0, 1.5], 5.0), None);
        assert!(GainPredictor::from_pool(Array2::zeros((0, 5)).view(), &spec).is_err());
    }

    #[test]
    fn csv_layout() {
        let rows = [EvalRow {
            scheme: "perfect_csi".into(),
            network_size: 4,
            avg_rate_bps: Some(1.5),
            jsd: None,
            seed: 7,
        }];
        assert_eq!(evaluation_csv(&rows), "scheme,network_size,avg_rate_bps,jsd,seed\nperfect_csi,4,1.5,,7\n");
    }
}
