//! Ground-truth mmWave air-to-ground channel.
//!
//! A line-of-sight link has a single path, so the `N x M` MIMO response is the
//! rank-one outer product `alpha * a_r * a_t^H` of two uniform-linear-array
//! steering vectors. The complex gain `alpha` comes from a synthetic [`Scene`]:
//! log-distance path loss, a seeded smooth shadowing field, and a grid of
//! blocked cells that zeroes the gain when the UAV-UE ray passes through an
//! obstacle.
//!
//! Both arrays are laid out along the scene x axis. The departure angle is the
//! arctangent of the displacement along that axis over the perpendicular
//! range, and the arrival angle is its mirror image.

use std::f64::consts::{FRAC_PI_2, PI};

use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, domain, parse, Result};
use crate::textfmt::{join, Header};
use crate::{distance, Point};

/// Complex path gain. Exactly zero for a blocked (NLOS) link.
pub type ComplexGain = Complex64;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Uniform linear arrays at the UAV (transmit) and UE (receive) ends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrayGeometry {
    tx_antennas: usize,
    rx_antennas: usize,
    wavelength: f64,
    spacing: f64,
}

impl ArrayGeometry {
    pub fn new(tx_antennas: usize, rx_antennas: usize, wavelength: f64, spacing: f64) -> Result<Self> {
        if tx_antennas == 0 || rx_antennas == 0 {
            return Err(config("antenna counts must be positive"));
        }
        if !(wavelength.is_finite() && wavelength > 0.0) {
            return Err(config(format!("wavelength must be positive, got {wavelength}")));
        }
        if !(spacing > 0.0 && spacing <= wavelength) {
            return Err(config(format!(
                "element spacing {spacing} must lie in (0, wavelength = {wavelength}]"
            )));
        }
        Ok(Self {
            tx_antennas,
            rx_antennas,
            wavelength,
            spacing,
        })
    }

    /// Arrays with the usual half-wavelength element spacing.
    pub fn half_wavelength(tx_antennas: usize, rx_antennas: usize, wavelength: f64) -> Result<Self> {
        Self::new(tx_antennas, rx_antennas, wavelength, wavelength / 2.0)
    }

    pub fn tx_antennas(&self) -> usize {
        self.tx_antennas
    }

    pub fn rx_antennas(&self) -> usize {
        self.rx_antennas
    }

    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }
}

/// Steering vector of a ULA: element `k` is `exp(j k 2 pi (d / lambda) sin(angle))`.
pub fn steering_vector(angle: f64, count: usize, geometry: &ArrayGeometry) -> Result<Vec<Complex64>> {
    if !angle.is_finite() {
        return Err(domain(format!("steering angle must be finite, got {angle}")));
    }
    if angle.abs() > FRAC_PI_2 + 1e-12 {
        return Err(domain(format!("steering angle {angle} outside [-pi/2, pi/2]")));
    }
    let step = 2.0 * PI * geometry.spacing / geometry.wavelength * angle.sin();
    Ok((0..count)
        .map(|k| Complex64::from_polar(1.0, k as f64 * step))
        .collect())
}

/// Departure and arrival angles `(phi_t, phi_r)` for a UAV-UE pair.
pub fn link_angles(uav: Point, ue: Point) -> Result<(f64, f64)> {
    let dx = ue[0] - uav[0];
    let transverse = (ue[1] - uav[1]).hypot(ue[2] - uav[2]);
    if dx == 0.0 && transverse == 0.0 {
        return Err(domain("UAV and UE positions coincide"));
    }
    let departure = dx.atan2(transverse);
    Ok((departure, -departure))
}

/// Rank-one channel matrix `H = alpha a_r(phi_r) a_t(phi_t)^H`, shape `N x M`.
pub fn channel_matrix(
    uav: Point,
    ue: Point,
    gain: ComplexGain,
    geometry: &ArrayGeometry,
) -> Result<Array2<Complex64>> {
    let (phi_t, phi_r) = link_angles(uav, ue)?;
    let a_t = steering_vector(phi_t, geometry.tx_antennas, geometry)?;
    let a_r = steering_vector(phi_r, geometry.rx_antennas, geometry)?;
    Ok(Array2::from_shape_fn(
        (geometry.rx_antennas, geometry.tx_antennas),
        |(r, c)| gain * a_r[r] * a_t[c].conj(),
    ))
}

/// Axis-aligned rectangle on the ground plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Rect {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Result<Self> {
        let ok = [x_min, x_max, y_min, y_max].iter().all(|v| v.is_finite())
            && x_max > x_min
            && y_max > y_min;
        if !ok {
            return Err(config(format!(
                "degenerate rectangle [{x_min}, {x_max}] x [{y_min}, {y_max}]"
            )));
        }
        Ok(Self {
            x_min,
            x_max,
            y_min,
            y_max,
        })
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn depth(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.y_min + self.y_max),
        )
    }

    /// Closed containment test on the horizontal coordinates.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }

    pub fn contains_rect(&self, other: &Rect) -> bool {
        self.contains(other.x_min, other.y_min) && self.contains(other.x_max, other.y_max)
    }

    /// Squared distance from a point to the rectangle (zero inside).
    pub fn distance_sq(&self, x: f64, y: f64) -> f64 {
        let dx = (self.x_min - x).max(0.0).max(x - self.x_max);
        let dy = (self.y_min - y).max(0.0).max(y - self.y_max);
        dx * dx + dy * dy
    }
}

/// Row-major grid of blocked cells covering the scene bounds exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockageMap {
    cols: usize,
    rows: usize,
    cells: Vec<bool>,
}

impl BlockageMap {
    pub fn new(cols: usize, rows: usize, cells: Vec<bool>) -> Result<Self> {
        if cols == 0 || rows == 0 || cells.len() != cols * rows {
            return Err(config(format!(
                "blockage grid {cols}x{rows} does not match {} cells",
                cells.len()
            )));
        }
        Ok(Self { cols, rows, cells })
    }

    pub fn clear(cols: usize, rows: usize) -> Result<Self> {
        Self::new(cols, rows, vec![false; cols * rows])
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn is_blocked(&self, col: usize, row: usize) -> bool {
        self.cells[row * self.cols + col]
    }

    pub fn set(&mut self, col: usize, row: usize, blocked: bool) {
        self.cells[row * self.cols + col] = blocked;
    }

    pub fn coverage(&self) -> f64 {
        self.cells.iter().filter(|&&b| b).count() as f64 / self.cells.len() as f64
    }
}

/// Parameters for [`generate_scene`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub width_m: f64,
    pub depth_m: f64,
    pub uav_altitude_m: f64,
    pub ue_height_m: f64,
    pub carrier_hz: f64,
    pub pathloss_exponent: f64,
    pub reference_gain_db: f64,
    pub shadowing_stddev_db: f64,
    pub shadowing_corr_m: f64,
    pub temporal_drift_rad_per_s: f64,
    pub obstacle_height_m: f64,
    pub grid_cols: usize,
    pub grid_rows: usize,
    pub blockage_coverage: f64,
    pub regions: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            width_m: 100.0,
            depth_m: 100.0,
            uav_altitude_m: 50.0,
            ue_height_m: 1.5,
            carrier_hz: 30e9,
            pathloss_exponent: 2.0,
            reference_gain_db: -62.0,
            shadowing_stddev_db: 3.0,
            shadowing_corr_m: 25.0,
            temporal_drift_rad_per_s: 0.5,
            obstacle_height_m: 20.0,
            grid_cols: 40,
            grid_rows: 40,
            blockage_coverage: 0.08,
            regions: 4,
        }
    }
}

const SHADOW_WAVES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
struct ShadowWave {
    kx: f64,
    ky: f64,
    phase: f64,
}

/// One channel measurement: UAV position `x`, UE position `y`, time `t`,
/// the (estimated or true) gain, and the LOS state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelSample {
    pub x: Point,
    pub y: Point,
    pub t: f64,
    pub gain: ComplexGain,
    pub los: bool,
}

/// Synthetic ground-truth field for `alpha(x, y, t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub bounds: Rect,
    pub uav_altitude: f64,
    pub ue_height: f64,
    pub carrier_wavelength: f64,
    pub pathloss_exponent: f64,
    pub reference_gain_db: f64,
    pub shadowing_stddev_db: f64,
    pub shadowing_corr_m: f64,
    pub temporal_drift_rate: f64,
    pub obstacle_height: f64,
    pub blockage: BlockageMap,
    pub regions: Vec<Rect>,
    pub seed: u64,
    shadow: Vec<ShadowWave>,
}

impl Scene {
    /// Assembles a scene from explicit parts; the shadowing field is derived
    /// from `seed`.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        bounds: Rect,
        uav_altitude: f64,
        ue_height: f64,
        carrier_wavelength: f64,
        pathloss_exponent: f64,
        reference_gain_db: f64,
        shadowing_stddev_db: f64,
        shadowing_corr_m: f64,
        temporal_drift_rate: f64,
        obstacle_height: f64,
        blockage: BlockageMap,
        regions: Vec<Rect>,
        seed: u64,
    ) -> Result<Self> {
        if !(1.5..=4.0).contains(&pathloss_exponent) {
            return Err(config(format!(
                "pathloss exponent {pathloss_exponent} outside [1.5, 4]"
            )));
        }
        if !(carrier_wavelength > 0.0) || !(shadowing_stddev_db >= 0.0) || !(shadowing_corr_m > 0.0) {
            return Err(config("wavelength and shadowing correlation must be positive"));
        }
        if !(uav_altitude > ue_height) || ue_height < 0.0 {
            return Err(config("UAV altitude must exceed the UE height"));
        }
        if regions.iter().any(|r| !bounds.contains_rect(r)) {
            return Err(config("service regions must lie inside the scene bounds"));
        }
        let shadow = shadow_waves(seed, shadowing_corr_m);
        Ok(Self {
            bounds,
            uav_altitude,
            ue_height,
            carrier_wavelength,
            pathloss_exponent,
            reference_gain_db,
            shadowing_stddev_db,
            shadowing_corr_m,
            temporal_drift_rate,
            obstacle_height,
            blockage,
            regions,
            seed,
            shadow,
        })
    }

    /// Hovering position of the UAV serving region `i`: above the region centre.
    pub fn uav_position(&self, region: usize) -> Point {
        let (cx, cy) = self.regions[region].center();
        [cx, cy, self.uav_altitude]
    }

    /// Index of the service region nearest to a ground point.
    pub fn serving_region(&self, x: f64, y: f64) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, r) in self.regions.iter().enumerate() {
            let d = r.distance_sq(x, y);
            if d < best_d {
                best = i;
                best_d = d;
            }
        }
        best
    }

    /// Shadowing in dB at a ground point; zero-mean with the configured
    /// standard deviation.
    pub fn shadowing_db(&self, x: f64, y: f64) -> f64 {
        if self.shadowing_stddev_db == 0.0 {
            return 0.0;
        }
        let scale = self.shadowing_stddev_db * (2.0 / SHADOW_WAVES as f64).sqrt();
        scale
            * self
                .shadow
                .iter()
                .map(|w| (w.kx * x + w.ky * y + w.phase).cos())
                .sum::<f64>()
    }

    fn cell_of(&self, x: f64, y: f64) -> (usize, usize) {
        let cw = self.bounds.width() / self.blockage.cols as f64;
        let ch = self.bounds.depth() / self.blockage.rows as f64;
        let c = ((x - self.bounds.x_min) / cw).floor().max(0.0) as usize;
        let r = ((y - self.bounds.y_min) / ch).floor().max(0.0) as usize;
        (c.min(self.blockage.cols - 1), r.min(self.blockage.rows - 1))
    }

    /// Whether the straight segment `a -> b` passes through a blocked cell
    /// below the obstacle height.
    pub fn ray_blocked(&self, a: Point, b: Point) -> bool {
        let cw = self.bounds.width() / self.blockage.cols as f64;
        let ch = self.bounds.depth() / self.blockage.rows as f64;
        let dx = b[0] - a[0];
        let dy = b[1] - a[1];
        let height = |s: f64| a[2] + s * (b[2] - a[2]);

        let (mut cx, mut cy) = self.cell_of(a[0], a[1]);
        let end = self.cell_of(b[0], b[1]);
        let step_x: isize = if dx > 0.0 { 1 } else { -1 };
        let step_y: isize = if dy > 0.0 { 1 } else { -1 };
        let boundary = |origin: f64, size: f64, idx: usize, d: f64, start: f64| {
            if d > 0.0 {
                (origin + (idx + 1) as f64 * size - start) / d
            } else if d < 0.0 {
                (origin + idx as f64 * size - start) / d
            } else {
                f64::INFINITY
            }
        };
        let mut t_max_x = boundary(self.bounds.x_min, cw, cx, dx, a[0]);
        let mut t_max_y = boundary(self.bounds.y_min, ch, cy, dy, a[1]);
        let t_dx = if dx != 0.0 { cw / dx.abs() } else { f64::INFINITY };
        let t_dy = if dy != 0.0 { ch / dy.abs() } else { f64::INFINITY };

        let mut s0 = 0.0;
        for _ in 0..(self.blockage.cols + self.blockage.rows + 2) {
            let s1 = t_max_x.min(t_max_y).min(1.0);
            if self.blockage.is_blocked(cx, cy) && height(s0).min(height(s1)) < self.obstacle_height {
                return true;
            }
            if s1 >= 1.0 || (cx, cy) == end {
                break;
            }
            if t_max_x < t_max_y {
                let next = cx as isize + step_x;
                if next < 0 || next as usize >= self.blockage.cols {
                    break;
                }
                cx = next as usize;
                t_max_x += t_dx;
            } else {
                let next = cy as isize + step_y;
                if next < 0 || next as usize >= self.blockage.rows {
                    break;
                }
                cy = next as usize;
                t_max_y += t_dy;
            }
            s0 = s1;
        }
        false
    }

    fn check_position(&self, p: Point, what: &str) -> Result<()> {
        if !p.iter().all(|v| v.is_finite()) || !self.bounds.contains(p[0], p[1]) || p[2] < 0.0 {
            return Err(domain(format!("{what} position {p:?} outside the scene")));
        }
        Ok(())
    }
}

fn shadow_waves(seed: u64, corr_m: f64) -> Vec<ShadowWave> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5AD0_5AD0_5AD0_5AD0);
    (0..SHADOW_WAVES)
        .map(|_| {
            let wavelength = corr_m * rng.random_range(1.0..3.0);
            let dir = rng.random_range(0.0..2.0 * PI);
            let k = 2.0 * PI / wavelength;
            ShadowWave {
                kx: k * dir.cos(),
                ky: k * dir.sin(),
                phase: rng.random_range(0.0..2.0 * PI),
            }
        })
        .collect()
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_phase(phase: f64) -> f64 {
    let w = (phase + PI).rem_euclid(2.0 * PI) - PI;
    if w == -PI {
        PI
    } else {
        w
    }
}

/// Ground-truth gain and LOS state of the link from UAV `x` to UE `y` at time `t`.
pub fn true_gain(scene: &Scene, x: Point, y: Point, t: f64) -> Result<(ComplexGain, bool)> {
    scene.check_position(x, "UAV")?;
    scene.check_position(y, "UE")?;
    if !(t.is_finite() && t >= 0.0) {
        return Err(domain(format!("query time {t} must be finite and non-negative")));
    }
    let d = distance(x, y);
    if d == 0.0 {
        return Err(domain("UAV and UE positions coincide"));
    }
    if scene.ray_blocked(x, y) {
        return Ok((Complex64::new(0.0, 0.0), false));
    }
    let gain_db = scene.reference_gain_db - 10.0 * scene.pathloss_exponent * d.log10()
        + scene.shadowing_db(y[0], y[1]);
    let magnitude = 10f64.powf(gain_db / 20.0);
    let phase = wrap_phase(2.0 * PI * d / scene.carrier_wavelength + scene.temporal_drift_rate * t);
    Ok((Complex64::from_polar(magnitude, phase), true))
}

/// Splits `bounds` into `count` equal, disjoint rectangles on a `rows x cols`
/// grid, picking the most square factorisation of `count`.
pub fn partition_regions(bounds: &Rect, count: usize) -> Result<Vec<Rect>> {
    if count == 0 {
        return Err(config("region count must be positive"));
    }
    let rows = (1..=count)
        .filter(|r| count % r == 0 && r * r <= count)
        .max()
        .unwrap_or(1);
    let cols = count / rows;
    let w = bounds.width() / cols as f64;
    let h = bounds.depth() / rows as f64;
    let mut out = Vec::with_capacity(count);
    for r in 0..rows {
        for c in 0..cols {
            let x_max = if c + 1 == cols { bounds.x_max } else { bounds.x_min + (c + 1) as f64 * w };
            let y_max = if r + 1 == rows { bounds.y_max } else { bounds.y_min + (r + 1) as f64 * h };
            out.push(Rect::new(
                bounds.x_min + c as f64 * w,
                x_max,
                bounds.y_min + r as f64 * h,
                y_max,
            )?);
        }
    }
    Ok(out)
}

/// Builds a reproducible scene from `cfg` and `seed`.
pub fn generate_scene(cfg: &SceneConfig, seed: u64) -> Result<Scene> {
    if !(0.0..1.0).contains(&cfg.blockage_coverage) {
        return Err(config(format!(
            "blockage coverage {} outside [0, 1)",
            cfg.blockage_coverage
        )));
    }
    if !(cfg.carrier_hz > 0.0) {
        return Err(config("carrier frequency must be positive"));
    }
    let bounds = Rect::new(0.0, cfg.width_m, 0.0, cfg.depth_m)?;
    let mut blockage = BlockageMap::clear(cfg.grid_cols, cfg.grid_rows)?;
    let total = cfg.grid_cols * cfg.grid_rows;
    let target = (cfg.blockage_coverage * total as f64).round() as usize;

    // Rectangular footprints, filled cell by cell until the target count.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut blocked = 0;
    while blocked < target {
        let w = rng.random_range(2..=5).min(cfg.grid_cols);
        let h = rng.random_range(2..=5).min(cfg.grid_rows);
        let c0 = rng.random_range(0..=cfg.grid_cols - w);
        let r0 = rng.random_range(0..=cfg.grid_rows - h);
        'fill: for r in r0..r0 + h {
            for c in c0..c0 + w {
                if blocked == target {
                    break 'fill;
                }
                if !blockage.is_blocked(c, r) {
                    blockage.set(c, r, true);
                    blocked += 1;
                }
            }
        }
    }

    let regions = partition_regions(&bounds, cfg.regions)?;
    Scene::from_parts(
        bounds,
        cfg.uav_altitude_m,
        cfg.ue_height_m,
        SPEED_OF_LIGHT / cfg.carrier_hz,
        cfg.pathloss_exponent,
        cfg.reference_gain_db,
        cfg.shadowing_stddev_db,
        cfg.shadowing_corr_m,
        cfg.temporal_drift_rad_per_s,
        cfg.obstacle_height_m,
        blockage,
        regions,
        seed,
    )
}

const SCENE_MAGIC: &str = "uavchan-scene v1";

/// Serialises a scene: a `key = value` header, one `region = ...` line per
/// service region, then `blockage = COLS ROWS` followed by `ROWS` lines of
/// `0`/`1` characters (row 0 first, column 0 leftmost). Floats use the
/// shortest representation that parses back to the same bits.
pub fn write_scene(scene: &Scene) -> String {
    let b = &scene.bounds;
    let mut out = String::new();
    out.push_str(SCENE_MAGIC);
    out.push('\n');
    let fields: [(&str, String); 12] = [
        ("seed", scene.seed.to_string()),
        ("bounds", join(&[b.x_min, b.x_max, b.y_min, b.y_max])),
        ("uav_altitude_m", scene.uav_altitude.to_string()),
        ("ue_height_m", scene.ue_height.to_string()),
        ("carrier_wavelength_m", scene.carrier_wavelength.to_string()),
        ("pathloss_exponent", scene.pathloss_exponent.to_string()),
        ("reference_gain_db", scene.reference_gain_db.to_string()),
        ("shadowing_stddev_db", scene.shadowing_stddev_db.to_string()),
        ("shadowing_corr_m", scene.shadowing_corr_m.to_string()),
        ("temporal_drift_rad_per_s", scene.temporal_drift_rate.to_string()),
        ("obstacle_height_m", scene.obstacle_height.to_string()),
        ("regions", scene.regions.len().to_string()),
    ];
    for (k, v) in fields {
        out.push_str(&format!("{k} = {v}\n"));
    }
    for r in &scene.regions {
        out.push_str(&format!("region = {}\n", join(&[r.x_min, r.x_max, r.y_min, r.y_max])));
    }
    out.push_str(&format!(
        "blockage = {} {}\n",
        scene.blockage.cols, scene.blockage.rows
    ));
    for row in scene.blockage.cells.chunks(scene.blockage.cols) {
        out.extend(row.iter().map(|&c| if c { '1' } else { '0' }));
        out.push('\n');
    }
    out
}

pub fn parse_scene(text: &str) -> Result<Scene> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(SCENE_MAGIC) {
        return Err(parse("missing scene magic line"));
    }
    let mut header_lines = Vec::new();
    let mut regions = Vec::new();
    let mut grid = None;
    for line in lines.by_ref() {
        if let Some(rest) = line.strip_prefix("region =") {
            let v = Header::parse([format!("r = {rest}").as_str()])?.get_list::<f64>("r")?;
            if v.len() != 4 {
                return Err(parse("region needs four coordinates"));
            }
            regions.push(Rect::new(v[0], v[1], v[2], v[3])?);
        } else if let Some(rest) = line.strip_prefix("blockage =") {
            let dims: Vec<usize> = Header::parse([format!("b = {rest}").as_str()])?.get_list("b")?;
            if dims.len() != 2 {
                return Err(parse("blockage needs COLS ROWS"));
            }
            grid = Some((dims[0], dims[1]));
            break;
        } else {
            header_lines.push(line);
        }
    }
    let (cols, rows) = grid.ok_or_else(|| parse("missing blockage section"))?;
    let mut cells = Vec::with_capacity(cols * rows);
    for _ in 0..rows {
        let row = lines.next().ok_or_else(|| parse("truncated blockage bitmap"))?.trim();
        if row.len() != cols {
            return Err(parse(format!("bitmap row has {} cells, expected {cols}", row.len())));
        }
        for ch in row.chars() {
            cells.push(match ch {
                '0' => false,
                '1' => true,
                other => return Err(parse(format!("bad bitmap character `{other}`"))),
            });
        }
    }
    let h = Header::parse(header_lines)?;
    let b: Vec<f64> = h.get_list("bounds")?;
    if b.len() != 4 {
        return Err(parse("bounds needs four values"));
    }
    let declared: usize = h.get("regions")?;
    if declared != regions.len() {
        return Err(parse(format!(
            "header declares {declared} regions, found {}",
            regions.len()
        )));
    }
    Scene::from_parts(
        Rect::new(b[0], b[1], b[2], b[3])?,
        h.get("uav_altitude_m")?,
        h.get("ue_height_m")?,
        h.get("carrier_wavelength_m")?,
        h.get("pathloss_exponent")?,
        h.get("reference_gain_db")?,
        h.get("shadowing_stddev_db")?,
        h.get("shadowing_corr_m")?,
        h.get("temporal_drift_rad_per_s")?,
        h.get("obstacle_height_m")?,
        BlockageMap::new(cols, rows, cells)?,
        regions,
        h.get("seed")?,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn geom(m: usize, n: usize) -> ArrayGeometry {
        ArrayGeometry::half_wavelength(m, n, 0.01).unwrap()
    }

    fn flat_scene(exponent: f64, reference_db: f64) -> Scene {
        Scene::from_parts(
            Rect::new(0.0, 100.0, 0.0, 100.0).unwrap(),
            50.0,
            1.5,
            0.01,
            exponent,
            reference_db,
            0.0,
            25.0,
            0.0,
            20.0,
            BlockageMap::clear(10, 10).unwrap(),
            vec![Rect::new(0.0, 100.0, 0.0, 100.0).unwrap()],
            7,
        )
        .unwrap()
    }

    #[test]
    fn steering_broadside_is_all_ones() {
        let v = steering_vector(0.0, 4, &geom(4, 4)).unwrap();
        assert!(v.iter().all(|c| close(c.re, 1.0, 1e-15) && close(c.im, 0.0, 1e-15)));
    }

    #[test]
    fn steering_endfire_half_wavelength() {
        let v = steering_vector(FRAC_PI_2, 2, &geom(2, 2)).unwrap();
        assert!(close(v[0].re, 1.0, 1e-15));
        assert!(close(v[1].re, -1.0, 1e-12) && close(v[1].im, 0.0, 1e-12));
    }

    #[test]
    fn steering_thirty_degrees() {
        // phases 0, pi/2, pi
        let v = steering_vector(PI / 6.0, 3, &geom(3, 3)).unwrap();
        let expected = [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0)];
        for (c, (re, im)) in v.iter().zip(expected) {
            assert!(close(c.re, re, 1e-12) && close(c.im, im, 1e-12), "{c}");
        }
    }

    #[test]
    fn steering_rejects_non_finite() {
        assert!(steering_vector(f64::NAN, 3, &geom(3, 3)).is_err());
        assert!(steering_vector(2.0, 3, &geom(3, 3)).is_err());
    }

    #[test]
    fn geometry_validation() {
        assert!(ArrayGeometry::new(0, 1, 0.01, 0.005).is_err());
        assert!(ArrayGeometry::new(1, 1, 0.01, 0.02).is_err());
        assert!(ArrayGeometry::new(1, 1, -1.0, 0.005).is_err());
    }

    #[test]
    fn channel_matrix_cases() {
        let uav = [0.0, 0.0, 50.0];
        let ue = [10.0, 5.0, 1.5];
        let zero = channel_matrix(uav, ue, Complex64::new(0.0, 0.0), &geom(4, 2)).unwrap();
        assert!(zero.iter().all(|c| c.norm() == 0.0));

        let alpha = Complex64::from_polar(1.0, 0.3);
        let scalar = channel_matrix(uav, ue, alpha, &geom(1, 1)).unwrap();
        assert_eq!(scalar.dim(), (1, 1));
        assert!((scalar[[0, 0]] - alpha).norm() < 1e-15);

        let h = channel_matrix(uav, ue, Complex64::new(2.0, 0.0), &geom(4, 2)).unwrap();
        let fro = h.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        assert!(close(fro, 2.0 * 8f64.sqrt(), 1e-12));
        assert!(channel_matrix(uav, uav, alpha, &geom(4, 2)).is_err());
    }

    #[test]
    fn free_space_gain_at_ten_metres() {
        let scene = flat_scene(2.0, 0.0);
        let (g, los) = true_gain(&scene, [50.0, 50.0, 11.5], [50.0, 50.0, 1.5], 0.0).unwrap();
        assert!(los);
        assert!(close(g.norm(), 0.1, 1e-12));
    }

    #[test]
    fn blocked_cell_zeroes_gain() {
        let mut scene = flat_scene(2.0, -60.0);
        // UE sits inside a blocked cell: the ray starts below the obstacle top.
        scene.blockage.set(2, 2, true);
        let (g, los) = true_gain(&scene, [50.0, 50.0, 50.0], [25.0, 25.0, 1.5], 3.0).unwrap();
        assert!(!los);
        assert_eq!(g, Complex64::new(0.0, 0.0));
        // A UE elsewhere is unaffected.
        let (_, los) = true_gain(&scene, [50.0, 50.0, 50.0], [75.0, 75.0, 1.5], 3.0).unwrap();
        assert!(los);
    }

    #[test]
    fn out_of_bounds_query_fails() {
        let scene = flat_scene(2.0, 0.0);
        assert!(true_gain(&scene, [50.0, 50.0, 50.0], [150.0, 50.0, 1.5], 0.0).is_err());
        assert!(true_gain(&scene, [50.0, 50.0, 50.0], [10.0, 50.0, 1.5], -1.0).is_err());
    }

    #[test]
    fn regions_are_quadrants() {
        let cfg = SceneConfig::default();
        let scene = generate_scene(&cfg, 3).unwrap();
        let quads: Vec<_> = scene.regions.iter().map(|r| (r.x_min, r.x_max, r.y_min, r.y_max)).collect();
        assert_eq!(
            quads,
            vec![
                (0.0, 50.0, 0.0, 50.0),
                (50.0, 100.0, 0.0, 50.0),
                (0.0, 50.0, 50.0, 100.0),
                (50.0, 100.0, 50.0, 100.0)
            ]
        );
        assert_eq!(scene.serving_region(10.0, 90.0), 2);
    }

    #[test]
    fn scene_generation_contract() {
        let mut cfg = SceneConfig::default();
        cfg.blockage_coverage = 0.0;
        let clear = generate_scene(&cfg, 1).unwrap();
        assert_eq!(clear.blockage.coverage(), 0.0);

        cfg.blockage_coverage = 0.2;
        let a = generate_scene(&cfg, 11).unwrap();
        let b = generate_scene(&cfg, 11).unwrap();
        assert_eq!(a, b);
        assert!(close(a.blockage.coverage(), 0.2, 1e-12));

        cfg.blockage_coverage = 1.0;
        assert!(generate_scene(&cfg, 1).is_err());
        cfg.blockage_coverage = -0.1;
        assert!(generate_scene(&cfg, 1).is_err());
    }

    #[test]
    fn scene_file_round_trip() {
        let scene = generate_scene(&SceneConfig::default(), 99).unwrap();
        let text = write_scene(&scene);
        let back = parse_scene(&text).unwrap();
        assert_eq!(scene, back);
        assert_eq!(text, write_scene(&back));
    }

    #[test]
    fn wrap_phase_range() {
        for k in -20..20 {
            let p = wrap_phase(k as f64 * 0.77);
            assert!(p > -PI && p <= PI);
        }
        assert_eq!(wrap_phase(-PI), PI);
    }
}
