//! Demo, benchmark, and table drivers shared by the CLI.
//!
//! Everything here is deterministic given its inputs and seed; the demo
//! commands emit byte-identical files on reruns within one build.

use crate::error::{Error, Result};
use crate::geom::{Location, LocationSet};
use crate::io;
use crate::kriging::{
    self, CSource, IgpEngine, KrigingWeights, ObservationModel, Observations, RationalConfig,
};
use crate::posterior::{
    posterior_moments, posterior_moments_with_delta, sample_prior_path, stationary_posterior,
    PosteriorGaussian, PredictionLattice,
};
use crate::simdata::{make_demo_1d, make_swot, DemoConfig1D, SwotConfig};
use crate::structmat::{
    self, build_gamma, direct_increment_factor, increment_factor, twisted_factor, ShiftedCholesky,
};
use crate::variogram::VariogramModel;
use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use std::path::{Path, PathBuf};
use std::time::Instant;

// ---------------------------------------------------------------------------
// Method strings
// ---------------------------------------------------------------------------

/// Parsed form of a CLI method string.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodSpec {
    Igp,
    Igp0,
    Limit,
    Rational(CSource),
    Shepard,
    GammaShepard,
    JosephKang(usize),
}

impl MethodSpec {
    /// Parse `igp`, `igp0`, `limit`, `rational:perron|ones|rinv`, `shepard`,
    /// `gshepard`, or `jk:<degree>`.
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "igp" => Ok(MethodSpec::Igp),
            "igp0" => Ok(MethodSpec::Igp0),
            "limit" => Ok(MethodSpec::Limit),
            "rational:perron" => Ok(MethodSpec::Rational(CSource::Perron)),
            "rational:ones" => Ok(MethodSpec::Rational(CSource::Ones)),
            "rational:rinv" => Ok(MethodSpec::Rational(CSource::RInvE)),
            "shepard" => Ok(MethodSpec::Shepard),
            "gshepard" => Ok(MethodSpec::GammaShepard),
            other => {
                if let Some(deg) = other.strip_prefix("jk:") {
                    let d = deg.parse::<usize>().map_err(|_| {
                        Error::Config(format!("bad polynomial degree in method \"{other}\""))
                    })?;
                    Ok(MethodSpec::JosephKang(d))
                } else {
                    Err(Error::Config(format!(
                        "unknown method \"{other}\" (expected igp, igp0, limit, rational:perron, \
                         rational:ones, rational:rinv, shepard, gshepard, or jk:<degree>)"
                    )))
                }
            }
        }
    }
}

impl std::fmt::Display for MethodSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MethodSpec::Igp => write!(f, "igp"),
            MethodSpec::Igp0 => write!(f, "igp0"),
            MethodSpec::Limit => write!(f, "limit"),
            MethodSpec::Rational(CSource::Perron) => write!(f, "rational:perron"),
            MethodSpec::Rational(CSource::Ones) => write!(f, "rational:ones"),
            MethodSpec::Rational(CSource::RInvE) => write!(f, "rational:rinv"),
            MethodSpec::Rational(CSource::User) => write!(f, "rational:user"),
            MethodSpec::Shepard => write!(f, "shepard"),
            MethodSpec::GammaShepard => write!(f, "gshepard"),
            MethodSpec::JosephKang(d) => write!(f, "jk:{d}"),
        }
    }
}

// ---------------------------------------------------------------------------
// Prediction tables
// ---------------------------------------------------------------------------

/// Shared, immutable per-method state reused across targets.
enum MethodState {
    Igp { engine: IgpEngine, model: VariogramModel },
    Igp0 { gm: structmat::VariogramMatrix, model: VariogramModel },
    Limit { gm: structmat::VariogramMatrix, sill: crate::SillSpec, model: VariogramModel },
    Rational {
        gm: structmat::VariogramMatrix,
        sill: crate::SillSpec,
        cfg: RationalConfig,
        model: VariogramModel,
    },
    Shepard,
    GammaShepard { model: VariogramModel },
    JosephKang { degree: usize },
}

fn method_state(
    method: MethodSpec,
    obs: &Observations,
    model: &VariogramModel,
    om: &ObservationModel,
    delta: Option<f64>,
) -> Result<MethodState> {
    Ok(match method {
        MethodSpec::Igp => {
            let gm = build_gamma(model, obs.locs())?;
            MethodState::Igp { engine: IgpEngine::new(&gm, om, delta)?, model: model.clone() }
        }
        MethodSpec::Igp0 => {
            MethodState::Igp0 { gm: build_gamma(model, obs.locs())?, model: model.clone() }
        }
        MethodSpec::Limit => {
            let (gm, sill) = kriging::bounded_gamma_matrix(model, obs.locs())?;
            MethodState::Limit { gm, sill, model: model.clone() }
        }
        MethodSpec::Rational(source) => {
            let (gm, sill) = kriging::bounded_gamma_matrix(model, obs.locs())?;
            let cfg = match source {
                CSource::Perron => RationalConfig::perron(&gm, &sill)?,
                CSource::Ones => RationalConfig::ones(obs.len()),
                CSource::RInvE => RationalConfig::r_inv_e(&gm, &sill)?,
                CSource::User => {
                    return Err(Error::Config("user c vector not available via CLI".into()))
                }
            };
            MethodState::Rational { gm, sill, cfg, model: model.clone() }
        }
        MethodSpec::Shepard => MethodState::Shepard,
        MethodSpec::GammaShepard => MethodState::GammaShepard { model: model.clone() },
        MethodSpec::JosephKang(degree) => MethodState::JosephKang { degree },
    })
}

/// Weights (and prediction) for one target under a prepared method state.
fn eval_target(
    state: &MethodState,
    obs: &Observations,
    om: &ObservationModel,
    t: &Location,
) -> Result<(f64, KrigingWeights)> {
    let ones = DVector::from_element(obs.len(), 1.0);
    let w = match state {
        MethodState::Igp { engine, model } => {
            if om.sigma() == 0.0 {
                if let Some(_ell) = obs.locs().coincident_index(t) {
                    // exact-data coincidence: interpolation weights
                    let gm = build_gamma(model, obs.locs())?;
                    let gt = structmat::gamma_vector(model, obs.locs(), t)?;
                    kriging::igp_weights_noise_free(&gm, &gt, t.clone())?
                } else {
                    let gt = structmat::gamma_vector(model, obs.locs(), t)?;
                    engine.weights_from_gamma(&gt, t.clone())?
                }
            } else {
                let gt = structmat::gamma_vector(model, obs.locs(), t)?;
                engine.weights_from_gamma(&gt, t.clone())?
            }
        }
        MethodState::Igp0 { gm, model } => {
            let gt = structmat::gamma_vector(model, obs.locs(), t)?;
            kriging::igp_weights_noise_free(gm, &gt, t.clone())?
        }
        MethodState::Limit { gm, sill, model } => {
            let gt = kriging::bounded_gamma_vector(model, obs.locs(), t)?;
            kriging::limit_weights(gm, &gt, sill, t.clone())?
        }
        MethodState::Rational { gm, sill, cfg, model } => {
            let gt = kriging::bounded_gamma_vector(model, obs.locs(), t)?;
            kriging::rational_weights(gm, &gt, sill, cfg, t.clone())?
        }
        MethodState::Shepard => {
            kriging::shepard_weights(obs.locs(), t, |a, b| a.distance(b), &ones)?
        }
        MethodState::GammaShepard { model } => {
            kriging::gamma_shepard_weights(model, obs.locs(), t, &ones)?
        }
        MethodState::JosephKang { degree } => {
            let z = kriging::joseph_kang_predict(obs, t, *degree, |a, b| a.distance(b), &ones)?;
            let w = kriging::shepard_weights(obs.locs(), t, |a, b| a.distance(b), &ones)?;
            return Ok((z, w));
        }
    };
    Ok((kriging::predict(&w, obs.y()), w))
}

/// One prediction table row per target: coordinates, `Ẑ`, `Σλ`, weights.
pub fn predict_table(
    obs: &Observations,
    model: &VariogramModel,
    method: MethodSpec,
    targets: &LocationSet,
    sigma: f64,
    delta: Option<f64>,
    threads: usize,
) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    if obs.len() < 2 {
        return Err(Error::Config("prediction needs at least two observations".into()));
    }
    if targets.dim() != obs.locs().dim() {
        return Err(Error::DimensionMismatch(
            "targets and observations must share a dimension".into(),
        ));
    }
    let om = ObservationModel::white(sigma, obs.len());
    let state = method_state(method, obs, model, &om, delta)?;

    let mut header: Vec<String> =
        io::coord_headers(targets.dim())?.iter().map(|s| s.to_string()).collect();
    header.push("zhat".into());
    header.push("sum_lambda".into());
    for k in 0..obs.len() {
        header.push(format!("lambda_{k}"));
    }

    let points = targets.points();
    let workers = threads.max(1).min(points.len().max(1));
    let mut results: Vec<Option<Result<(f64, KrigingWeights)>>> = Vec::new();
    results.resize_with(points.len(), || None);
    if workers <= 1 {
        for (i, t) in points.iter().enumerate() {
            results[i] = Some(eval_target(&state, obs, &om, t));
        }
    } else {
        let chunk = points.len().div_ceil(workers);
        let state_ref = &state;
        let om_ref = &om;
        std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for (ci, part) in points.chunks(chunk).enumerate() {
                handles.push((
                    ci * chunk,
                    scope.spawn(move || {
                        part.iter()
                            .map(|t| eval_target(state_ref, obs, om_ref, t))
                            .collect::<Vec<_>>()
                    }),
                ));
            }
            for (offset, h) in handles {
                for (j, r) in h.join().expect("worker panicked").into_iter().enumerate() {
                    results[offset + j] = Some(r);
                }
            }
        });
    }

    let mut rows = Vec::with_capacity(points.len());
    for (t, res) in points.iter().zip(results.into_iter()) {
        let (zhat, w) = res.expect("every target evaluated")?;
        let mut row = t.coords().to_vec();
        row.push(zhat);
        row.push(w.sum_check);
        row.extend(w.lambda.iter().copied());
        rows.push(row);
    }
    Ok((header, rows))
}

/// Variogram curve table: `(d, γ(d))` on a monotone grid.
pub fn variogram_table(
    model: &VariogramModel,
    dmin: f64,
    dmax: f64,
    steps: usize,
) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    if !(dmax > dmin) || dmin < 0.0 || steps < 2 {
        return Err(Error::Config("need 0 ≤ dmin < dmax and at least 2 steps".into()));
    }
    model.validate()?;
    let mut rows = Vec::with_capacity(steps);
    for i in 0..steps {
        let d = dmin + (dmax - dmin) * i as f64 / (steps - 1) as f64;
        rows.push(vec![d, model.eval_dist(d)?]);
    }
    Ok((vec!["d".into(), "gamma".into()], rows))
}

/// Posterior export: coordinates, mean, standard deviation.
pub fn posterior_table(pg: &PosteriorGaussian) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let dim = pg.lattice().points().dim();
    let mut header: Vec<String> = io::coord_headers(dim)?.iter().map(|s| s.to_string()).collect();
    header.push("mu".into());
    header.push("sd".into());
    let sd = pg.sd();
    let rows = pg
        .lattice()
        .points()
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut row = p.coords().to_vec();
            row.push(pg.mu()[i]);
            row.push(sd[i]);
            row
        })
        .collect();
    Ok((header, rows))
}

/// Realization export: coordinates, then one column per draw.
pub fn sample_table(
    pg: &PosteriorGaussian,
    seed: u64,
    draws: usize,
) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let dim = pg.lattice().points().dim();
    let mut header: Vec<String> = io::coord_headers(dim)?.iter().map(|s| s.to_string()).collect();
    for k in 0..draws {
        header.push(format!("draw_{k}"));
    }
    let samples = pg.sample(seed, draws);
    let rows = pg
        .lattice()
        .points()
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut row = p.coords().to_vec();
            for s in &samples {
                row.push(s[i]);
            }
            row
        })
        .collect();
    Ok((header, rows))
}

// ---------------------------------------------------------------------------
// Figure-1 style demo
// ---------------------------------------------------------------------------

fn grid_1d(lo: f64, step: f64, count: usize) -> Result<LocationSet> {
    LocationSet::from_scalars(&(0..count).map(|i| lo + step * i as f64).collect::<Vec<_>>())
}

fn median_shift(values: &DVector<f64>) -> DVector<f64> {
    let mut sorted: Vec<f64> = values.iter().copied().collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = sorted.len();
    let med = if m % 2 == 1 { sorted[m / 2] } else { 0.5 * (sorted[m / 2 - 1] + sorted[m / 2]) };
    values.map(|v| v - med)
}

/// Emit the 1-d seven-point demo artifacts into `outdir`:
/// `obs.csv`, `variograms.csv`, `prior_draws.csv`, `post_mean.csv`,
/// `post_draws.csv`, `config.json`. Returns the written paths.
pub fn run_demo_fig1(outdir: &Path, seed: u64) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(outdir)?;
    let cfg = DemoConfig1D { seed, ..DemoConfig1D::default() };
    let demo = make_demo_1d(&cfg)?;
    let models = [
        ("sta_rough", demo.models.stationary_rough.clone(), false),
        ("int_rough", demo.models.intrinsic_rough.clone(), true),
        ("sta_smooth", demo.models.stationary_smooth.clone(), false),
        ("int_smooth", demo.models.intrinsic_smooth.clone(), true),
    ];
    let mut written = Vec::new();

    let obs_path = outdir.join("obs.csv");
    io::write_observations(&obs_path, &demo.obs)?;
    written.push(obs_path);

    // variogram curves
    {
        let mut rows = Vec::new();
        for i in 0..151 {
            let d = 0.01 * i as f64;
            let mut row = vec![d];
            for (_, m, _) in &models {
                row.push(m.eval_dist(d)?);
            }
            rows.push(row);
        }
        let path = outdir.join("variograms.csv");
        io::write_csv(
            &path,
            &["d", "sta_rough", "int_rough", "sta_smooth", "int_smooth"],
            &rows,
        )?;
        written.push(path);
    }

    // prior draws on [0, 1]: stationary ones unconstrained, intrinsic ones
    // pinned to zero at the anchor and median-shifted for display
    {
        let n_grid = 101usize;
        let step = 0.01;
        let grid_all = grid_1d(0.0, step, n_grid)?;
        let anchor = Location::scalar(0.0);
        let grid_tail = grid_1d(step, step, n_grid - 1)?;
        let n_draws = 3;
        let mut columns: Vec<(String, Vec<f64>)> = Vec::new();
        for (vi, (name, model, intrinsic)) in models.iter().enumerate() {
            for k in 0..n_draws {
                let draw_seed = seed ^ (0x9e37 + 1000 * vi as u64 + k as u64);
                let values: DVector<f64> = if *intrinsic {
                    let path = sample_prior_path(model, &anchor, &grid_tail, draw_seed)?;
                    let mut full = DVector::zeros(n_grid);
                    for i in 0..n_grid - 1 {
                        full[i + 1] = path.values[i];
                    }
                    median_shift(&full)
                } else {
                    let sill = model.sill().expect("stationary");
                    let c = DMatrix::from_fn(n_grid, n_grid, |i, j| {
                        sill - model
                            .eval(grid_all.get(i), grid_all.get(j))
                            .expect("same dims")
                    });
                    let f = crate::linalg::cholesky_lower_bumped(&c, 1e-12 * c.amax());
                    let mut rng = ChaCha12Rng::seed_from_u64(draw_seed);
                    let v = DVector::from_fn(n_grid, |_, _| {
                        rng.sample::<f64, _>(rand_distr::StandardNormal)
                    });
                    &f.l * v
                };
                columns.push((format!("{name}_{k}"), values.iter().copied().collect()));
            }
        }
        let mut header: Vec<&str> = vec!["x"];
        for (name, _) in &columns {
            header.push(name);
        }
        let rows: Vec<Vec<f64>> = (0..n_grid)
            .map(|i| {
                let mut row = vec![grid_all.get(i).coords()[0]];
                for (_, col) in &columns {
                    row.push(col[i]);
                }
                row
            })
            .collect();
        let path = outdir.join("prior_draws.csv");
        io::write_csv(&path, &header, &rows)?;
        written.push(path);
    }

    // posterior means/draws on a lattice that extends far beyond the data
    {
        let lattice = PredictionLattice::new(grid_1d(-10.0, 0.05, 421)?);
        let om = ObservationModel::noise_free(demo.obs.len());
        let mut mean_cols: Vec<(String, Vec<f64>, Vec<f64>)> = Vec::new();
        let mut draw_cols: Vec<(String, Vec<Vec<f64>>)> = Vec::new();
        for (vi, (name, model, intrinsic)) in models.iter().enumerate() {
            let pg = if *intrinsic {
                posterior_moments(&demo.obs, &om, model, &lattice)?
            } else {
                stationary_posterior(&demo.obs, &om, model, &lattice)?
            };
            mean_cols.push((
                name.to_string(),
                pg.mu().iter().copied().collect(),
                pg.sd().iter().copied().collect(),
            ));
            let draws = pg.sample(seed ^ (0x51ab + 77 * vi as u64), 3);
            draw_cols.push((
                name.to_string(),
                draws.iter().map(|d| d.iter().copied().collect()).collect(),
            ));
        }
        let mut header: Vec<String> = vec!["x".into()];
        for (name, _, _) in &mean_cols {
            header.push(format!("mu_{name}"));
            header.push(format!("sd_{name}"));
        }
        let href: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
        let rows: Vec<Vec<f64>> = (0..lattice.len())
            .map(|i| {
                let mut row = vec![lattice.points().get(i).coords()[0]];
                for (_, mu, sd) in &mean_cols {
                    row.push(mu[i]);
                    row.push(sd[i]);
                }
                row
            })
            .collect();
        let path = outdir.join("post_mean.csv");
        io::write_csv(&path, &href, &rows)?;
        written.push(path);

        let mut dheader: Vec<String> = vec!["x".into()];
        for (name, draws) in &draw_cols {
            for k in 0..draws.len() {
                dheader.push(format!("{name}_draw{k}"));
            }
        }
        let dhref: Vec<&str> = dheader.iter().map(|s| s.as_str()).collect();
        let drows: Vec<Vec<f64>> = (0..lattice.len())
            .map(|i| {
                let mut row = vec![lattice.points().get(i).coords()[0]];
                for (_, draws) in &draw_cols {
                    for d in draws {
                        row.push(d[i]);
                    }
                }
                row
            })
            .collect();
        let dpath = outdir.join("post_draws.csv");
        io::write_csv(&dpath, &dhref, &drows)?;
        written.push(dpath);
    }

    // config echo with the calibrated models
    {
        let echo = serde_json::json!({
            "seed": seed,
            "n_obs": cfg.n_obs,
            "domain": [cfg.domain.0, cfg.domain.1],
            "match_separation": cfg.match_separation,
            "calibration_residuals": demo.calibration_residuals,
            "models": {
                "sta_rough": demo.models.stationary_rough.to_json(),
                "int_rough": demo.models.intrinsic_rough.to_json(),
                "sta_smooth": demo.models.stationary_smooth.to_json(),
                "int_smooth": demo.models.intrinsic_smooth.to_json(),
            },
        });
        let path = outdir.join("config.json");
        let mut text = serde_json::to_string_pretty(&echo)
            .map_err(|e| Error::Config(format!("config echo: {e}")))?;
        text.push('\n');
        std::fs::write(&path, text)?;
        written.push(path);
    }
    Ok(written)
}

// ---------------------------------------------------------------------------
// Satellite-track demo
// ---------------------------------------------------------------------------

/// Emit the synthetic altimetry demo into `outdir`: `truth.csv`, `obs.csv`,
/// `post_mean.csv`, `draws_0.csv` … `draws_2.csv`, `config.json`.
pub fn run_demo_swot(outdir: &Path, cfg: &SwotConfig) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(outdir)?;
    let data = make_swot(cfg)?;
    let model = cfg.variogram();
    let mut written = Vec::new();

    let truth_rows: Vec<Vec<f64>> = data
        .grid
        .iter()
        .zip(data.truth.iter())
        .map(|(p, &z)| vec![p.coords()[0], p.coords()[1], z])
        .collect();
    let truth_path = outdir.join("truth.csv");
    io::write_csv(&truth_path, &["x", "y_coord", "z"], &truth_rows)?;
    written.push(truth_path);

    let obs_path = outdir.join("obs.csv");
    io::write_observations(&obs_path, &data.obs)?;
    written.push(obs_path);

    let lattice = PredictionLattice::new(data.grid.clone());
    let pg = posterior_moments(&data.obs, &data.om, &model, &lattice)?;
    let (ph, prows) = posterior_table(&pg)?;
    let phref: Vec<&str> = ph.iter().map(|s| s.as_str()).collect();
    let post_path = outdir.join("post_mean.csv");
    io::write_csv(&post_path, &phref, &prows)?;
    written.push(post_path);

    let draws = pg.sample(cfg.seed ^ 0xd4a3, 3);
    for (k, d) in draws.iter().enumerate() {
        let rows: Vec<Vec<f64>> = data
            .grid
            .iter()
            .zip(d.iter())
            .map(|(p, &z)| vec![p.coords()[0], p.coords()[1], z])
            .collect();
        let path = outdir.join(format!("draws_{k}.csv"));
        io::write_csv(&path, &["x", "y_coord", "z"], &rows)?;
        written.push(path);
    }

    let cfg_path = outdir.join("config.json");
    let mut text = serde_json::to_string_pretty(&cfg.echo_json())
        .map_err(|e| Error::Config(format!("config echo: {e}")))?;
    text.push('\n');
    std::fs::write(&cfg_path, text)?;
    written.push(cfg_path);
    Ok(written)
}

// ---------------------------------------------------------------------------
// Factorization benchmark
// ---------------------------------------------------------------------------

/// One benchmark measurement.
#[derive(Debug, Clone)]
pub struct BenchRow {
    pub n: usize,
    pub method: &'static str,
    pub seconds: f64,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = xs.len();
    if m % 2 == 1 {
        xs[m / 2]
    } else {
        0.5 * (xs[m / 2 - 1] + xs[m / 2])
    }
}

/// Median per-target factorization timings, twisted vs direct, for each `n`.
///
/// The one-time `L₀` factorization is excluded from both timings: the
/// comparison is the marginal per-target cost (`O(n²)` Givens sweeps against
/// an `O(n³)` dense Cholesky of the assembled increment covariance).
/// `threads > 1` spreads repetitions across worker threads; the target
/// draws stay deterministic per repetition index.
pub fn run_bench(n_list: &[usize], reps: usize, threads: usize) -> Result<Vec<BenchRow>> {
    if n_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("benchmark sizes must be strictly ascending".into()));
    }
    if reps == 0 {
        return Err(Error::Config("benchmark needs at least one repetition".into()));
    }
    let model = VariogramModel::Brownian { sigma2: 1.0 };
    let mut rows = Vec::new();
    for &n in n_list {
        let mut rng = ChaCha12Rng::seed_from_u64(0xbe9c4 + n as u64);
        let xs: Vec<f64> = (0..n)
            .map(|i| i as f64 / n as f64 + rng.random_range(0.0..0.4 / n as f64))
            .collect();
        let locs = LocationSet::from_scalars(&xs)?;
        let gm = build_gamma(&model, &locs)?;
        let sc = ShiftedCholesky::auto(&gm);
        let targets: Vec<Location> =
            (0..reps).map(|_| Location::scalar(rng.random_range(0.0..1.0))).collect();
        let time_rep = |t: &Location| -> Result<(f64, f64)> {
            let gt = structmat::gamma_vector(&model, &locs, t)?;
            let start = Instant::now();
            let tf = twisted_factor(&sc, &gt)?;
            let g = increment_factor(&sc, &tf);
            let twisted = start.elapsed().as_secs_f64();
            std::hint::black_box(g.g()[(n - 1, n - 1)]);
            let start = Instant::now();
            let gd = direct_increment_factor(&gm, &gt);
            let direct = start.elapsed().as_secs_f64();
            std::hint::black_box(gd.g()[(n - 1, n - 1)]);
            Ok((twisted, direct))
        };
        let workers = threads.max(1).min(reps);
        let timings: Vec<Result<(f64, f64)>> = if workers <= 1 {
            targets.iter().map(time_rep).collect()
        } else {
            let chunk = reps.div_ceil(workers);
            let time_ref = &time_rep;
            let mut out: Vec<Option<Result<(f64, f64)>>> = Vec::new();
            out.resize_with(reps, || None);
            std::thread::scope(|scope| {
                let mut handles = Vec::new();
                for (ci, part) in targets.chunks(chunk).enumerate() {
                    handles.push((
                        ci * chunk,
                        scope.spawn(move || part.iter().map(time_ref).collect::<Vec<_>>()),
                    ));
                }
                for (offset, h) in handles {
                    for (j, r) in h.join().expect("bench worker panicked").into_iter().enumerate()
                    {
                        out[offset + j] = Some(r);
                    }
                }
            });
            out.into_iter().map(|r| r.expect("all reps timed")).collect()
        };
        let mut twisted_times = Vec::with_capacity(reps);
        let mut direct_times = Vec::with_capacity(reps);
        for t in timings {
            let (tw, di) = t?;
            twisted_times.push(tw);
            direct_times.push(di);
        }
        rows.push(BenchRow { n, method: "twisted", seconds: median(twisted_times) });
        rows.push(BenchRow { n, method: "direct", seconds: median(direct_times) });
    }
    Ok(rows)
}

/// Least-squares slope of `log t` against `log n` for one method.
pub fn bench_slope(rows: &[BenchRow], method: &str) -> Option<f64> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.method == method && r.seconds > 0.0)
        .map(|r| ((r.n as f64).ln(), r.seconds.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    Some((n * sxy - sx * sy) / (n * sxx - sx * sx))
}

/// Benchmark CSV: `n,method,seconds`.
pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from("n,method,seconds\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.n, r.method, r.seconds));
    }
    out
}

/// Posterior selector used by the `posterior`/`sample` commands.
pub fn posterior_for(
    obs: &Observations,
    model: &VariogramModel,
    sigma: f64,
    delta: Option<f64>,
    lattice: &PredictionLattice,
    stationary_baseline: bool,
) -> Result<PosteriorGaussian> {
    let om = ObservationModel::white(sigma, obs.len());
    if stationary_baseline {
        stationary_posterior(obs, &om, model, lattice)
    } else {
        match delta {
            Some(_) => posterior_moments_with_delta(obs, &om, model, lattice, delta),
            None => posterior_moments(obs, &om, model, lattice),
        }
    }
}
