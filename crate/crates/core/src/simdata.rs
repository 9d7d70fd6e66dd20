//! Deterministic synthetic data sets for the two demos.

use crate::error::{Error, Result};
use crate::geom::{Location, LocationSet};
use crate::kriging::{ObservationModel, Observations};
use crate::linalg;
use crate::posterior::sample_prior_path;
use crate::variogram::VariogramModel;
use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

/// Configuration of the seven-point 1-d demonstration.
#[derive(Debug, Clone)]
pub struct DemoConfig1D {
    pub seed: u64,
    pub n_obs: usize,
    pub domain: (f64, f64),
    /// Stationary variance (both stationary variants).
    pub sigma2: f64,
    /// Stationary decay rate (both variants).
    pub theta: f64,
    /// Separation at which the intrinsic variograms are calibrated to the
    /// stationary ones (they already agree at zero).
    pub match_separation: f64,
    /// Kernel standard deviation of the smooth intrinsic variant.
    pub smooth_r: f64,
}

impl Default for DemoConfig1D {
    fn default() -> Self {
        DemoConfig1D {
            seed: 20240 * 97,
            n_obs: 7,
            domain: (0.0, 1.0),
            sigma2: 1.0,
            theta: 1.0,
            match_separation: 0.05,
            smooth_r: 0.05,
        }
    }
}

/// The four model variants of the 1-d demo.
#[derive(Debug, Clone)]
pub struct DemoModels {
    /// Exponential covariance (rough stationary row).
    pub stationary_rough: VariogramModel,
    /// Brownian, calibrated to the exponential at the match separation.
    pub intrinsic_rough: VariogramModel,
    /// Gaussian covariance (smooth stationary row).
    pub stationary_smooth: VariogramModel,
    /// Convolved Brownian, calibrated to the Gaussian at the match separation.
    pub intrinsic_smooth: VariogramModel,
}

/// Seven-point demo data: observations plus the calibrated model family.
#[derive(Debug, Clone)]
pub struct Demo1D {
    pub obs: Observations,
    pub models: DemoModels,
    /// |γ_int(h) − γ_sta(h)| at the match separation, per intrinsic variant.
    pub calibration_residuals: [f64; 2],
}

/// Solve `γ_model(σ_z²; sep) = target` for `σ_z²` by bisection to 1e-12.
///
/// `make_model` must produce a variogram that is increasing in `σ_z²` at
/// fixed separation (true for every family here, where σ_z² is an overall
/// scale).
pub fn calibrate_sigma2<F>(make_model: F, sep: f64, target: f64) -> Result<f64>
where
    F: Fn(f64) -> VariogramModel,
{
    if !(target > 0.0) {
        return Err(Error::Domain("calibration target must be positive".into()));
    }
    let eval = |s2: f64| -> Result<f64> { make_model(s2).eval_dist(sep) };
    let mut lo = 1e-12;
    let mut hi = 1.0;
    let mut tries = 0;
    while eval(hi)? < target {
        hi *= 2.0;
        tries += 1;
        if tries > 200 {
            return Err(Error::Numeric("calibration bracket expansion failed".into()));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if eval(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * hi.max(1.0) {
            break;
        }
    }
    let s2 = 0.5 * (lo + hi);
    let resid = (eval(s2)? - target).abs();
    if resid > 1e-10 * target.max(1e-300) {
        return Err(Error::Numeric(format!("calibration bisection residual {resid:e} too large")));
    }
    Ok(s2)
}

/// Build the seven-point demo: locations and values drawn from the seed,
/// intrinsic variants calibrated to the stationary ones at `{0, match_sep}`.
pub fn make_demo_1d(cfg: &DemoConfig1D) -> Result<Demo1D> {
    if cfg.n_obs < 2 {
        return Err(Error::Config("demo needs at least two observations".into()));
    }
    let stationary_rough =
        VariogramModel::StationaryExp { sigma2: cfg.sigma2, theta: cfg.theta };
    let stationary_smooth =
        VariogramModel::StationaryGauss { sigma2: cfg.sigma2, theta: cfg.theta };

    let sep = cfg.match_separation;
    let target_rough = stationary_rough.eval_dist(sep)?;
    let target_smooth = stationary_smooth.eval_dist(sep)?;
    let s2_brown = calibrate_sigma2(|s2| VariogramModel::Brownian { sigma2: s2 }, sep, target_rough)?;
    let r = cfg.smooth_r;
    let s2_conv = calibrate_sigma2(
        |s2| VariogramModel::ConvolvedBrownian { sigma2: s2, r, dim: 1 },
        sep,
        target_smooth,
    )?;
    let intrinsic_rough = VariogramModel::Brownian { sigma2: s2_brown };
    let intrinsic_smooth = VariogramModel::ConvolvedBrownian { sigma2: s2_conv, r, dim: 1 };
    let calibration_residuals = [
        (intrinsic_rough.eval_dist(sep)? - target_rough).abs(),
        (intrinsic_smooth.eval_dist(sep)? - target_smooth).abs(),
    ];

    // locations: sorted draws with a minimum gap so the kernel matrices of
    // the smooth variants stay usable
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let (lo, hi) = cfg.domain;
    let width = hi - lo;
    let min_gap = 0.08 * width;
    let locs = loop {
        let mut xs: Vec<f64> =
            (0..cfg.n_obs).map(|_| lo + width * rng.random_range(0.03..0.97)).collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if xs.windows(2).all(|w| w[1] - w[0] >= min_gap) {
            break LocationSet::from_scalars(&xs)?;
        }
    };
    // values: a draw from the smooth stationary GP at the chosen sites
    // (every model variant then interpolates the same data without the wild
    // overshoot Gaussian-kernel interpolation shows on incompatible data)
    let n = cfg.n_obs;
    let c = DMatrix::from_fn(n, n, |i, j| {
        let d = locs.get(i).distance(locs.get(j));
        cfg.sigma2 * (-cfg.theta * d * d).exp()
    });
    let f = linalg::cholesky_lower_bumped(&c, 1e-12 * c.amax());
    let v = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let y = &f.l * v;
    let obs = Observations::new(locs, y)?;

    Ok(Demo1D {
        obs,
        models: DemoModels { stationary_rough, intrinsic_rough, stationary_smooth, intrinsic_smooth },
        calibration_residuals,
    })
}

/// Configuration of the synthetic satellite-altimetry scene.
#[derive(Debug, Clone)]
pub struct SwotConfig {
    pub seed: u64,
    /// Region extent in km (width, height).
    pub region: (f64, f64),
    /// Prediction grid resolution (nx, ny) of cell centers.
    pub grid: (usize, usize),
    /// Swath center positions as fractions of the region width.
    pub track_x_fractions: Vec<f64>,
    /// Observation count per swath line.
    pub track_points_per_line: usize,
    /// Field variance scale in m² (paper value 0.00008).
    pub sigma2_z: f64,
    /// Smoothing kernel standard deviation in km (paper value 50).
    pub r: f64,
    /// White observation-noise amplitude in m.
    pub sigma_w: f64,
    /// Along-track correlated error amplitude in m.
    pub sigma_c: f64,
    /// Along-track correlation length in km.
    pub ell_c: f64,
}

impl Default for SwotConfig {
    fn default() -> Self {
        SwotConfig {
            seed: 3632 * 11,
            region: (512.0, 512.0),
            grid: (64, 64),
            track_x_fractions: vec![0.4, 0.6],
            track_points_per_line: 128,
            sigma2_z: 0.00008,
            r: 50.0,
            sigma_w: 0.01,
            sigma_c: 0.005,
            ell_c: 25.0,
        }
    }
}

impl SwotConfig {
    pub fn variogram(&self) -> VariogramModel {
        VariogramModel::ConvolvedBrownian { sigma2: self.sigma2_z, r: self.r, dim: 2 }
    }

    /// Echo of the generating parameters, embedded in exported artifacts.
    pub fn echo_json(&self) -> serde_json::Value {
        serde_json::json!({
            "seed": self.seed,
            "region_km": [self.region.0, self.region.1],
            "grid": [self.grid.0, self.grid.1],
            "track_x_fractions": self.track_x_fractions,
            "track_points_per_line": self.track_points_per_line,
            "sigma2_z": self.sigma2_z,
            "r": self.r,
            "sigma_w": self.sigma_w,
            "sigma_c": self.sigma_c,
            "ell_c": self.ell_c,
            "variogram": self.variogram().to_json(),
        })
    }
}

/// Synthetic scene: the true field on the grid plus noisy track observations.
#[derive(Debug, Clone)]
pub struct SwotData {
    pub cfg: SwotConfig,
    /// Prediction grid (cell centers, row-major over y then x).
    pub grid: LocationSet,
    /// True field values on the grid.
    pub truth: DVector<f64>,
    /// True field values at the track points.
    pub truth_at_track: DVector<f64>,
    pub obs: Observations,
    pub om: ObservationModel,
}

/// Grid cell centers, x varying fastest.
pub fn grid_centers(region: (f64, f64), grid: (usize, usize)) -> Result<LocationSet> {
    let (w, h) = region;
    let (nx, ny) = grid;
    if nx == 0 || ny == 0 {
        return Err(Error::Config("grid must be nonempty".into()));
    }
    let mut rows = Vec::with_capacity(nx * ny);
    for iy in 0..ny {
        for ix in 0..nx {
            let x = (ix as f64 + 0.5) * w / nx as f64;
            let y = (iy as f64 + 0.5) * h / ny as f64;
            rows.push(vec![x, y]);
        }
    }
    LocationSet::from_rows(rows)
}

fn track_points(cfg: &SwotConfig) -> Result<LocationSet> {
    let (w, h) = cfg.region;
    let m = cfg.track_points_per_line;
    if m == 0 || cfg.track_x_fractions.is_empty() {
        return Err(Error::Config("track must contain points".into()));
    }
    let mut rows = Vec::with_capacity(cfg.track_x_fractions.len() * m);
    for &fx in &cfg.track_x_fractions {
        let x = fx * w;
        if !(0.0..=1.0).contains(&fx) {
            return Err(Error::Config(format!("track line at fraction {fx} is outside the region")));
        }
        for j in 0..m {
            let y = (j as f64 + 0.5) * h / m as f64;
            rows.push(vec![x, y]);
        }
    }
    LocationSet::from_rows(rows)
}

/// Along-track correlated error profile matrix: squared-exponential rows
/// within each swath line, zero across lines.
fn track_profile_matrix(cfg: &SwotConfig, track: &LocationSet) -> DMatrix<f64> {
    let n = track.len();
    let per = cfg.track_points_per_line;
    DMatrix::from_fn(n, n, |i, j| {
        if i / per != j / per {
            return 0.0;
        }
        let d = track.get(i).distance(track.get(j));
        (-d * d / (2.0 * cfg.ell_c * cfg.ell_c)).exp()
    })
}

/// Generate the scene: an anchored prior draw of the 2-d convolved-Brownian
/// field over grid ∪ track, observed along the track with noise
/// `σ_w²I + σ_c²KK⊤` (factored as `F = [σ_w·I | σ_c·K]`, σ = 1).
pub fn make_swot(cfg: &SwotConfig) -> Result<SwotData> {
    let model = cfg.variogram();
    let grid = grid_centers(cfg.region, cfg.grid)?;
    let track = track_points(cfg)?;
    let n_grid = grid.len();
    let n_track = track.len();

    // one joint anchored draw covers both the grid and the track
    let mut joint_rows: Vec<Vec<f64>> = grid.iter().map(|p| p.coords().to_vec()).collect();
    joint_rows.extend(track.iter().map(|p| p.coords().to_vec()));
    let joint = LocationSet::from_rows(joint_rows).map_err(|_| {
        Error::Config("track points must not coincide with grid cell centers".into())
    })?;
    let anchor = Location::xy(-0.5 * cfg.region.0 / cfg.grid.0 as f64, -0.5 * cfg.region.1 / cfg.grid.1 as f64);
    let path = sample_prior_path(&model, &anchor, &joint, cfg.seed)?;
    let truth = DVector::from_fn(n_grid, |i, _| path.values[i]);
    let truth_at_track = DVector::from_fn(n_track, |i, _| path.values[n_grid + i]);

    // noise factor F = [σ_w I | σ_c K]
    let k = track_profile_matrix(cfg, &track);
    let mut f = DMatrix::zeros(n_track, 2 * n_track);
    for i in 0..n_track {
        f[(i, i)] = cfg.sigma_w;
        for j in 0..n_track {
            f[(i, n_track + j)] = cfg.sigma_c * k[(i, j)];
        }
    }
    let om = ObservationModel::new(1.0, f)?;

    // separate stream from the field draw
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed ^ 0x5eed_0b53);
    let u = DVector::from_fn(2 * n_track, |_, _| rng.sample::<f64, _>(StandardNormal));
    let y = &truth_at_track + om.f() * u;
    let obs = Observations::new(track, y)?;

    Ok(SwotData { cfg: cfg.clone(), grid, truth, truth_at_track, obs, om })
}
