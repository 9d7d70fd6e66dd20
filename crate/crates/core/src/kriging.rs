//! Kriging weight families and predictors.
//!
//! Every family here produces affine weights (`Σλ = 1`), so all predictors
//! are invariant under constant shifts of the data:
//!
//! - IGP weights come out of the increment-based data/process model, with
//!   observation noise `σ²FF⊤`; noise-free weights are their `σ → 0` limit
//!   and interpolate exactly.
//! - Limit and rational kriging are the stationary-correlation predictors,
//!   recast in variogram form with a working sill `ϑ²`.
//! - Shepard/IDW and the variogram-Shepard variant are barycentric in the
//!   chosen distance; the Joseph–Kang predictor interpolates residuals of a
//!   polynomial fit with Shepard weights.

use crate::error::{Error, Result};
use crate::geom::{Location, LocationSet};
use crate::linalg;
use crate::structmat::{self, ShiftedCholesky, VariogramMatrix};
use crate::variogram::{SillSpec, VariogramModel};
use nalgebra::{DMatrix, DVector};

/// Sum-to-one tolerance declared by the affine families.
pub const AFFINE_TOL: f64 = 1e-10;

/// Observation noise model: covariance `σ²FF⊤` in factored form.
#[derive(Debug, Clone)]
pub struct ObservationModel {
    sigma: f64,
    f: DMatrix<f64>,
}

impl ObservationModel {
    pub fn new(sigma: f64, f: DMatrix<f64>) -> Result<Self> {
        if !(sigma >= 0.0) {
            return Err(Error::Domain("noise scale σ must be nonnegative".into()));
        }
        Ok(ObservationModel { sigma, f })
    }

    /// White noise: `F = I`.
    pub fn white(sigma: f64, n: usize) -> Self {
        ObservationModel { sigma: sigma.max(0.0), f: DMatrix::identity(n, n) }
    }

    /// Exact observations.
    pub fn noise_free(n: usize) -> Self {
        ObservationModel { sigma: 0.0, f: DMatrix::identity(n, n) }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn f(&self) -> &DMatrix<f64> {
        &self.f
    }

    /// Assemble `σ²FF⊤` densely.
    pub fn covariance(&self) -> DMatrix<f64> {
        &self.f * self.f.transpose() * (self.sigma * self.sigma)
    }
}

/// Observed data: locations plus one value per location.
#[derive(Debug, Clone)]
pub struct Observations {
    locs: LocationSet,
    y: DVector<f64>,
}

impl Observations {
    pub fn new(locs: LocationSet, y: DVector<f64>) -> Result<Self> {
        if locs.len() != y.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} locations but {} values",
                locs.len(),
                y.len()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("observation values must be finite".into()));
        }
        Ok(Observations { locs, y })
    }

    pub fn locs(&self) -> &LocationSet {
        &self.locs
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.len() == 0
    }
}

/// Which family produced a weight vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightMethod {
    Igp,
    IgpNoiseFree,
    Limit,
    Rational,
    Shepard,
    GammaShepard,
    JosephKangResidual,
}

/// Affine weight vector `λ(t)` with its provenance.
#[derive(Debug, Clone)]
pub struct KrigingWeights {
    pub lambda: DVector<f64>,
    pub method: WeightMethod,
    pub target: Location,
    /// `Σλ`, recorded at construction for cheap auditing.
    pub sum_check: f64,
}

impl KrigingWeights {
    fn new(lambda: DVector<f64>, method: WeightMethod, target: Location) -> Self {
        let sum_check = lambda.sum();
        KrigingWeights { lambda, method, target, sum_check }
    }

    fn unit(n: usize, ell: usize, method: WeightMethod, target: Location) -> Self {
        let mut lambda = DVector::zeros(n);
        lambda[ell] = 1.0;
        KrigingWeights::new(lambda, method, target)
    }
}

/// `Ẑ(t) = Σ λ_k y_k`.
pub fn predict(w: &KrigingWeights, y: &DVector<f64>) -> f64 {
    assert_eq!(w.lambda.len(), y.len(), "weight/data length mismatch");
    w.lambda.dot(y)
}

// ---------------------------------------------------------------------------
// IGP weights
// ---------------------------------------------------------------------------

/// Shared per-observation-set state for IGP weight evaluation.
///
/// The solves behind the explicit weight expression
/// `λ_k = (1 + γ(t)⊤Ne)·(e⊤Ne_k)/(e⊤Ne) − γ(t)⊤Ne_k`, `N = (σ²FF⊤ − Γ)⁻¹`,
/// are carried out against the positive-definite `σ²FF⊤ + δee⊤ − Γ` with a
/// rank-one correction for the `δee⊤` shift, since `σ²FF⊤ − Γ` itself may be
/// singular. The resulting weights are independent of δ, which the test
/// suites assert rather than assume.
#[derive(Debug, Clone)]
pub struct IgpEngine {
    l_s: DMatrix<f64>,
    delta: f64,
    /// `A⁻¹e` for `A = σ²FF⊤ + δee⊤ − Γ`.
    a_e: DVector<f64>,
    /// `1 − δ·e⊤A⁻¹e`, the Sherman–Morrison denominator.
    sm_den: f64,
    /// `w = Ne`.
    w: DVector<f64>,
    /// `e⊤Ne`.
    e_ne: f64,
}

impl IgpEngine {
    pub fn new(gm: &VariogramMatrix, om: &ObservationModel, delta: Option<f64>) -> Result<Self> {
        let n = gm.n();
        if n < 2 {
            return Err(Error::Degenerate("IGP weights need at least 2 observations".into()));
        }
        let sc = match delta {
            Some(d) => ShiftedCholesky::factor(gm, d)?,
            None => ShiftedCholesky::auto(gm),
        };
        let l_s = structmat::noisy_shifted_factor(&sc, om.sigma, &om.f)?;
        let e = DVector::from_element(n, 1.0);
        let mut a_e = e.clone_owned();
        linalg::solve_lower_inplace(&l_s, a_e.as_mut_slice());
        linalg::solve_lower_transpose_inplace(&l_s, a_e.as_mut_slice());
        let s_e = a_e.sum();
        let sm_den = 1.0 - sc.delta() * s_e;
        if !sm_den.is_finite() || sm_den == 0.0 {
            return Err(Error::Degenerate(
                "σ²FF⊤ − Γ is singular along the constant direction".into(),
            ));
        }
        let w = &a_e / sm_den;
        let e_ne = w.sum();
        if e_ne.abs() <= 1e-14 * w.amax().max(1e-300) * n as f64 {
            return Err(Error::Degenerate("e⊤Ne vanished; weights are undefined".into()));
        }
        Ok(IgpEngine { l_s, delta: sc.delta(), a_e, sm_den, w, e_ne })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Weights from a precomputed target variogram vector.
    pub fn weights_from_gamma(
        &self,
        gamma_t: &DVector<f64>,
        target: Location,
    ) -> Result<KrigingWeights> {
        let n = self.w.len();
        if gamma_t.len() != n {
            return Err(Error::DimensionMismatch("γ(t) length must match".into()));
        }
        let mut a_g = gamma_t.clone_owned();
        linalg::solve_lower_inplace(&self.l_s, a_g.as_mut_slice());
        linalg::solve_lower_transpose_inplace(&self.l_s, a_g.as_mut_slice());
        // z = Nγ(t) through the rank-one shift correction
        let z = &a_g + &self.a_e * (self.delta * a_g.sum() / self.sm_den);
        let g_w = gamma_t.dot(&self.w);
        let lambda = &self.w * ((1.0 + g_w) / self.e_ne) - z;
        Ok(KrigingWeights::new(lambda, WeightMethod::Igp, target))
    }
}

/// IGP kriging weights for a single target.
///
/// When `σ = 0` and the target coincides with observation `ℓ`, the weights
/// short-circuit to the interpolation vector `e_ℓ`.
pub fn igp_weights(
    obs: &Observations,
    model: &VariogramModel,
    om: &ObservationModel,
    t: &Location,
) -> Result<KrigingWeights> {
    igp_weights_with_delta(obs, model, om, t, None)
}

/// [`igp_weights`] with an explicit shift δ (the result must not depend on
/// it; the acceptance suite checks this).
pub fn igp_weights_with_delta(
    obs: &Observations,
    model: &VariogramModel,
    om: &ObservationModel,
    t: &Location,
    delta: Option<f64>,
) -> Result<KrigingWeights> {
    if om.sigma == 0.0 {
        if let Some(ell) = obs.locs.coincident_index(t) {
            return Ok(KrigingWeights::unit(obs.len(), ell, WeightMethod::Igp, t.clone()));
        }
    }
    let gm = structmat::build_gamma(model, &obs.locs)?;
    let engine = IgpEngine::new(&gm, om, delta)?;
    let gt = structmat::gamma_vector(model, &obs.locs, t)?;
    engine.weights_from_gamma(&gt, t.clone())
}

/// Noise-free IGP weights
/// `λ⁰_k = γ(t)⊤Γ⁻¹e_k + (1 − e⊤Γ⁻¹γ(t))·(e⊤Γ⁻¹e_k)/(e⊤Γ⁻¹e)`.
pub fn igp_weights_noise_free(
    gm: &VariogramMatrix,
    gamma_t: &DVector<f64>,
    target: Location,
) -> Result<KrigingWeights> {
    let n = gm.n();
    if gamma_t.len() != n {
        return Err(Error::DimensionMismatch("γ(t) length must match".into()));
    }
    if let Some(ell) = gm.locs().coincident_index(&target) {
        return Ok(KrigingWeights::unit(n, ell, WeightMethod::IgpNoiseFree, target));
    }
    let lu = gm.matrix().clone().lu();
    let e = DVector::from_element(n, 1.0);
    let ginv_e = lu.solve(&e).ok_or_else(|| Error::Singular("Γ is singular".into()))?;
    let ginv_g = lu.solve(gamma_t).ok_or_else(|| Error::Singular("Γ is singular".into()))?;
    let e_ginv_e = e.dot(&ginv_e);
    if e_ginv_e.abs() < 1e-300 {
        return Err(Error::Degenerate("e⊤Γ⁻¹e vanished".into()));
    }
    let lambda = &ginv_g + &ginv_e * ((1.0 - gamma_t.dot(&ginv_e)) / e_ginv_e);
    Ok(KrigingWeights::new(lambda, WeightMethod::IgpNoiseFree, target))
}

// ---------------------------------------------------------------------------
// Limit and rational kriging (variogram form, working sill ϑ²)
// ---------------------------------------------------------------------------

fn check_sill(gm: &VariogramMatrix, sill: &SillSpec) -> Result<()> {
    let max_entry = gm.matrix().amax();
    if sill.vartheta2 < max_entry {
        return Err(Error::Domain(format!(
            "sill ϑ² = {} is below the largest variogram entry {max_entry}; \
             ϑ²ee⊤ − Γ would not be a covariance",
            sill.vartheta2
        )));
    }
    Ok(())
}

/// Factor `K = ϑ²ee⊤ − Γ` (the implied covariance matrix).
fn sill_shifted_factor(gm: &VariogramMatrix, sill: &SillSpec) -> Result<DMatrix<f64>> {
    check_sill(gm, sill)?;
    let n = gm.n();
    let k = DMatrix::from_fn(n, n, |i, j| sill.vartheta2 - gm.matrix()[(i, j)]);
    let tol = 1e-14 * k.amax();
    let f = linalg::cholesky_lower_bumped(&k, tol);
    if f.bump.amax() > 1e-8 * k.amax() {
        return Err(Error::Singular(
            "ϑ²ee⊤ − Γ is numerically singular; limit/rational weights are undefined".into(),
        ));
    }
    Ok(f.l)
}

/// Limit-kriging weights
/// `λ^lim_k = (ϑ²e − γ(t))⊤(ϑ²ee⊤ − Γ)⁻¹e_k / (ϑ²e − γ(t))⊤(ϑ²ee⊤ − Γ)⁻¹e`.
pub fn limit_weights(
    gm: &VariogramMatrix,
    gamma_t: &DVector<f64>,
    sill: &SillSpec,
    target: Location,
) -> Result<KrigingWeights> {
    let l = sill_shifted_factor(gm, sill)?;
    let u = DVector::from_fn(gm.n(), |i, _| sill.vartheta2 - gamma_t[i]);
    let x = linalg::solve_spd(&l, &u);
    let den = x.sum();
    if den.abs() <= 1e-14 * x.amax().max(1e-300) {
        return Err(Error::Degenerate("limit-kriging denominator vanished".into()));
    }
    Ok(KrigingWeights::new(&x / den, WeightMethod::Limit, target))
}

/// Source of the rational-kriging weight vector `c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CSource {
    Perron,
    Ones,
    /// `c = R⁻¹e`; recovers limit kriging but may have negative entries.
    RInvE,
    User,
}

/// Weight vector for rational kriging, positive except for the flagged
/// `RInvE` source.
#[derive(Debug, Clone)]
pub struct RationalConfig {
    pub c: DVector<f64>,
    pub c_source: CSource,
}

impl RationalConfig {
    pub fn ones(n: usize) -> Self {
        RationalConfig { c: DVector::from_element(n, 1.0), c_source: CSource::Ones }
    }

    pub fn user(c: DVector<f64>) -> Result<Self> {
        if c.iter().any(|&v| v <= 0.0) {
            return Err(Error::Domain("rational weight vector c must be positive".into()));
        }
        Ok(RationalConfig { c, c_source: CSource::User })
    }

    /// Perron eigenvector of the implied correlation matrix.
    pub fn perron(gm: &VariogramMatrix, sill: &SillSpec) -> Result<Self> {
        check_sill(gm, sill)?;
        let n = gm.n();
        let r =
            DMatrix::from_fn(n, n, |i, j| (sill.vartheta2 - gm.matrix()[(i, j)]) / sill.vartheta2);
        let c = perron_vector(&r)?;
        Ok(RationalConfig { c, c_source: CSource::Perron })
    }

    /// `c = (ϑ²ee⊤ − Γ)⁻¹e`, the limit-kriging choice. Carries the `RInvE`
    /// tag because positivity cannot be guaranteed in advance.
    pub fn r_inv_e(gm: &VariogramMatrix, sill: &SillSpec) -> Result<Self> {
        let l = sill_shifted_factor(gm, sill)?;
        let e = DVector::from_element(gm.n(), 1.0);
        let c = linalg::solve_spd(&l, &e);
        Ok(RationalConfig { c, c_source: CSource::RInvE })
    }

    pub fn allows_negative(&self) -> bool {
        self.c_source == CSource::RInvE
    }
}

/// Rational-kriging weights
/// `λ^rat_k = (ϑ²e − γ(s_k))⊤c / (ϑ²e − γ(t))⊤c · (ϑ²e − γ(t))⊤(ϑ²ee⊤ − Γ)⁻¹e_k`.
pub fn rational_weights(
    gm: &VariogramMatrix,
    gamma_t: &DVector<f64>,
    sill: &SillSpec,
    cfg: &RationalConfig,
    target: Location,
) -> Result<KrigingWeights> {
    let n = gm.n();
    if cfg.c.len() != n {
        return Err(Error::DimensionMismatch("c length must match observation count".into()));
    }
    if !cfg.allows_negative() && cfg.c.iter().any(|&v| v <= 0.0) {
        return Err(Error::Domain(format!(
            "rational weight vector c must be positive for source {:?}",
            cfg.c_source
        )));
    }
    let l = sill_shifted_factor(gm, sill)?;
    let u = DVector::from_fn(n, |i, _| sill.vartheta2 - gamma_t[i]);
    let x = linalg::solve_spd(&l, &u);
    let uc = u.dot(&cfg.c);
    if uc.abs() <= 1e-14 * (u.amax() * cfg.c.amax()).max(1e-300) {
        return Err(Error::Degenerate("rational-kriging denominator r(t)⊤c vanished".into()));
    }
    // (Kc)_k = (ϑ²e − γ(s_k))⊤c, the k-th column of K against c
    let kc = DVector::from_fn(n, |k, _| {
        let mut acc = 0.0;
        for i in 0..n {
            acc += (sill.vartheta2 - gm.matrix()[(i, k)]) * cfg.c[i];
        }
        acc
    });
    let lambda = DVector::from_fn(n, |k, _| kc[k] / uc * x[k]);
    Ok(KrigingWeights::new(lambda, WeightMethod::Rational, target))
}

// ---------------------------------------------------------------------------
// Shepard / IDW
// ---------------------------------------------------------------------------

/// Per-axis scaled Euclidean distance (missing scales default to one).
pub fn scaled_euclidean(scales: Vec<f64>) -> impl Fn(&Location, &Location) -> f64 {
    move |a, b| {
        a.coords()
            .iter()
            .zip(b.coords())
            .enumerate()
            .map(|(k, (x, y))| {
                let s = scales.get(k).copied().unwrap_or(1.0);
                let d = (x - y) * s;
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }
}

fn shepard_from_distances(
    dists: &[f64],
    c: &DVector<f64>,
    method: WeightMethod,
    target: Location,
) -> Result<KrigingWeights> {
    let n = dists.len();
    if c.len() != n {
        return Err(Error::DimensionMismatch("c length must match observation count".into()));
    }
    if c.iter().any(|&v| v <= 0.0) {
        return Err(Error::Domain("Shepard weight vector c must be positive".into()));
    }
    let zero: Vec<usize> = (0..n).filter(|&k| dists[k] <= 0.0).collect();
    match zero.len() {
        0 => {}
        1 => return Ok(KrigingWeights::unit(n, zero[0], method, target)),
        _ => {
            return Err(Error::Degenerate(format!(
                "target is at zero distance from observations {zero:?}; interpolant is ambiguous"
            )))
        }
    }
    let raw = DVector::from_fn(n, |k, _| c[k] / dists[k]);
    let total = raw.sum();
    if !total.is_finite() || total <= 0.0 {
        return Err(Error::Numeric("Shepard normalization failed".into()));
    }
    Ok(KrigingWeights::new(raw / total, method, target))
}

/// Shepard/IDW weights `λ_k = (c_k/𝕕(t,s_k)) / Σ_j (c_j/𝕕(t,s_j))`.
///
/// A target coinciding with exactly one observation returns that unit
/// vector (the continuity limit).
pub fn shepard_weights<D>(
    locs: &LocationSet,
    t: &Location,
    distance: D,
    c: &DVector<f64>,
) -> Result<KrigingWeights>
where
    D: Fn(&Location, &Location) -> f64,
{
    let dists: Vec<f64> =
        locs.iter().map(|s| if s.coincides_with(t) { 0.0 } else { distance(t, s) }).collect();
    shepard_from_distances(&dists, c, WeightMethod::Shepard, t.clone())
}

/// Shepard weights with the variogram as the distance measure.
pub fn gamma_shepard_weights(
    model: &VariogramModel,
    locs: &LocationSet,
    t: &Location,
    c: &DVector<f64>,
) -> Result<KrigingWeights> {
    let mut dists = Vec::with_capacity(locs.len());
    for s in locs.iter() {
        dists.push(if s.coincides_with(t) { 0.0 } else { model.eval(s, t)? });
    }
    shepard_from_distances(&dists, c, WeightMethod::GammaShepard, t.clone())
}

// ---------------------------------------------------------------------------
// Joseph–Kang regression + Shepard residual predictor
// ---------------------------------------------------------------------------

/// Total-degree multi-indices for `dim` variables, graded order.
fn monomial_exponents(dim: usize, degree: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![0; dim]];
    for total in 1..=degree {
        let mut stack = vec![(Vec::<usize>::new(), total)];
        while let Some((prefix, rem)) = stack.pop() {
            if prefix.len() == dim - 1 {
                let mut m = prefix.clone();
                m.push(rem);
                out.push(m);
            } else {
                for k in (0..=rem).rev() {
                    let mut p = prefix.clone();
                    p.push(k);
                    stack.push((p, rem - k));
                }
            }
        }
    }
    out
}

/// Polynomial trend plus Shepard-interpolated residuals:
/// `Ẑ(t) = p(t) + Σ λ^shep_k(t)(y_k − p(s_k))`.
///
/// The basis is total-degree monomials, centered and scaled to the
/// observation bounding box to keep the least-squares system conditioned.
pub fn joseph_kang_predict<D>(
    obs: &Observations,
    t: &Location,
    poly_degree: usize,
    distance: D,
    c: &DVector<f64>,
) -> Result<f64>
where
    D: Fn(&Location, &Location) -> f64,
{
    let n = obs.len();
    let dim = obs.locs.dim();
    let exps = monomial_exponents(dim, poly_degree);
    let m = exps.len();
    if m > n {
        return Err(Error::Degenerate(format!(
            "degree-{poly_degree} basis has {m} monomials but only {n} observations"
        )));
    }
    let mut mid = vec![0.0; dim];
    let mut half = vec![1.0; dim];
    for k in 0..dim {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for s in obs.locs.iter() {
            lo = lo.min(s.coords()[k]);
            hi = hi.max(s.coords()[k]);
        }
        mid[k] = 0.5 * (lo + hi);
        let h = 0.5 * (hi - lo);
        half[k] = if h > 0.0 { h } else { 1.0 };
    }
    let feature = |loc: &Location, e: &[usize]| -> f64 {
        e.iter()
            .enumerate()
            .map(|(k, &p)| ((loc.coords()[k] - mid[k]) / half[k]).powi(p as i32))
            .product()
    };
    let design = DMatrix::from_fn(n, m, |i, j| feature(obs.locs.get(i), &exps[j]));
    let svd = nalgebra::SVD::new(design.clone(), true, true);
    let smax = svd.singular_values.max();
    if smax == 0.0 || svd.singular_values.iter().any(|&s| s <= 1e-10 * smax) {
        return Err(Error::Degenerate(
            "polynomial basis is rank deficient on these locations".into(),
        ));
    }
    let beta = svd
        .solve(&obs.y, 1e-12 * smax)
        .map_err(|e| Error::Numeric(format!("least-squares solve failed: {e}")))?;
    let fitted = &design * &beta;
    let residuals = &obs.y - fitted;
    let w = shepard_weights(&obs.locs, t, distance, c)?;
    let p_t: f64 = exps.iter().zip(beta.iter()).map(|(e, &b)| b * feature(t, e)).sum();
    Ok(p_t + w.lambda.dot(&residuals))
}

// ---------------------------------------------------------------------------
// DFP connection and Perron vectors
// ---------------------------------------------------------------------------

/// Result of the limit-kriging prior-covariance reconstruction.
#[derive(Debug, Clone)]
pub struct GLimMatrix {
    /// `f(t) = e⊤(ϑ²ee⊤ − Γ)⁻¹(ϑ²e − γ(t))`; feasible only when positive.
    pub f: f64,
    /// `G_lim G_lim⊤`, present when `f > 0`.
    pub matrix: Option<DMatrix<f64>>,
    /// `‖G_limG_lim⊤(ϑ²ee⊤−Γ)⁻¹(ϑ²e−γ(t)) − e‖∞` (the secant identity).
    pub secant_residual: Option<f64>,
}

/// Build the quasi-Newton-style matrix that makes limit kriging look like an
/// increment-covariance model:
///
/// ```text
/// G_limG_lim⊤ = ϑ²ee⊤ − Γ + h·ee⊤ − (1/f)(ue⊤ + eu⊤),  u = ϑ²e − γ(t),
/// f = e⊤K⁻¹u,  g = u⊤K⁻¹u,  h = (f + g)/f²,  K = ϑ²ee⊤ − Γ.
/// ```
///
/// When `f(t) ≤ 0` no such matrix exists; the result carries the
/// infeasibility flag instead of failing.
pub fn g_lim_matrix(
    gm: &VariogramMatrix,
    gamma_t: &DVector<f64>,
    sill: &SillSpec,
) -> Result<GLimMatrix> {
    let n = gm.n();
    let l = sill_shifted_factor(gm, sill)?;
    let u = DVector::from_fn(n, |i, _| sill.vartheta2 - gamma_t[i]);
    let x = linalg::solve_spd(&l, &u);
    let f = x.sum();
    if f <= 0.0 {
        return Ok(GLimMatrix { f, matrix: None, secant_residual: None });
    }
    let g = u.dot(&x);
    let h = (f + g) / (f * f);
    let e = DVector::from_element(n, 1.0);
    let k = DMatrix::from_fn(n, n, |i, j| sill.vartheta2 - gm.matrix()[(i, j)]);
    let m = k + &e * e.transpose() * h - (&u * e.transpose() + &e * u.transpose()) / f;
    let resid = (&m * &x - &e).amax();
    let tol_scale = (m.amax() * x.amax()).max(1.0);
    if resid > 1e-8 * tol_scale {
        return Err(Error::Numeric(format!("DFP secant identity violated: residual {resid:e}")));
    }
    Ok(GLimMatrix { f, matrix: Some(m), secant_residual: Some(resid) })
}

/// Perron eigenvector of an elementwise-positive symmetric matrix by power
/// iteration, normalized to unit sum.
pub fn perron_vector(r: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = r.nrows();
    if r.ncols() != n || n == 0 {
        return Err(Error::DimensionMismatch("Perron vector needs a square matrix".into()));
    }
    if r.iter().any(|&v| v <= 0.0) {
        return Err(Error::Domain("Perron iteration needs an elementwise-positive matrix".into()));
    }
    let mut v = DVector::from_element(n, 1.0 / n as f64);
    for _ in 0..10_000 {
        let rv = r * &v;
        let lambda = v.dot(&rv) / v.norm_squared();
        let resid = (&rv - &v * lambda).norm() / (lambda.abs() * v.norm()).max(1e-300);
        let norm = rv.norm();
        v = rv / norm;
        if resid <= 1e-10 {
            let total = v.sum();
            return Ok(v / total);
        }
    }
    Err(Error::Numeric("Perron power iteration did not converge in 10⁴ steps".into()))
}

// ---------------------------------------------------------------------------
// Bounded (sill-normalized) views for limit/rational kriging
// ---------------------------------------------------------------------------

/// Bounded variogram value and sill usable under the working stationarity
/// assumption.
///
/// Stationary models pass through with their own sill. A `Surrogate{base, ϱ}`
/// model stands for the ϱ-family of §-style correlations
/// `R = 1/(1 + γ̂₁/ϱ)` with `γ̂₁ = γ_b/(1 − γ_b)` the unit-scale surrogate
/// transform of the base, i.e. `γ_eff = (γ̂₁/ϱ)/(1 + γ̂₁/ϱ)` with sill 1; as
/// ϱ → 0 rational kriging on this family degenerates to Shepard
/// interpolation in the surrogate distance. Unbounded intrinsic models are
/// rejected.
pub fn bounded_gamma_dist(model: &VariogramModel, d: f64) -> Result<(f64, f64)> {
    match model {
        VariogramModel::StationaryExp { sigma2, .. }
        | VariogramModel::StationaryGauss { sigma2, .. } => Ok((model.eval_dist(d)?, *sigma2)),
        VariogramModel::Surrogate { base, rho } => {
            let gb = base.eval_dist(d)?;
            if gb >= 1.0 {
                return Err(Error::Domain("surrogate base saturated".into()));
            }
            let h = gb / (1.0 - gb);
            let x = h / rho;
            Ok((x / (1.0 + x), 1.0))
        }
        _ => Err(Error::Domain(
            "limit/rational kriging needs a stationary or surrogate-bounded model".into(),
        )),
    }
}

/// Variogram matrix + sill pair for limit/rational kriging.
pub fn bounded_gamma_matrix(
    model: &VariogramModel,
    locs: &LocationSet,
) -> Result<(VariogramMatrix, SillSpec)> {
    let n = locs.len();
    let mut m = DMatrix::zeros(n, n);
    let (_, mut sill) = bounded_gamma_dist(model, 0.0)?;
    for i in 0..n {
        for j in (i + 1)..n {
            let (g, s) = bounded_gamma_dist(model, locs.get(i).distance(locs.get(j)))?;
            m[(i, j)] = g;
            m[(j, i)] = g;
            sill = s;
        }
    }
    Ok((VariogramMatrix::from_matrix(m, locs.clone())?, SillSpec::new(sill)?))
}

/// Per-target bounded variogram vector matching [`bounded_gamma_matrix`].
pub fn bounded_gamma_vector(
    model: &VariogramModel,
    locs: &LocationSet,
    t: &Location,
) -> Result<DVector<f64>> {
    let mut v = DVector::zeros(locs.len());
    for (i, s) in locs.iter().enumerate() {
        let (g, _) = bounded_gamma_dist(model, s.distance(t))?;
        v[i] = g;
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structmat::build_gamma;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn brownian() -> VariogramModel {
        VariogramModel::Brownian { sigma2: 1.0 }
    }

    fn gauss_unit() -> VariogramModel {
        VariogramModel::StationaryGauss { sigma2: 1.0, theta: 1.0 }
    }

    fn random_obs(n: usize, seed: u64) -> Observations {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let locs = loop {
            let xs: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            if let Ok(s) = LocationSet::from_scalars(&xs) {
                break s;
            }
        };
        let y = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
        Observations::new(locs, y).unwrap()
    }

    #[test]
    fn brownian_bridge_midpoint() {
        // two observations at unit separation, noise ≈ 0, target midway:
        // conditional mean of Brownian motion averages the endpoints
        let obs = Observations::new(
            LocationSet::from_scalars(&[0.0, 1.0]).unwrap(),
            DVector::from_vec(vec![1.0, 3.0]),
        )
        .unwrap();
        let om = ObservationModel::white(1e-12, 2);
        let w = igp_weights(&obs, &brownian(), &om, &Location::scalar(0.5)).unwrap();
        assert!((w.lambda[0] - 0.5).abs() < 1e-6);
        assert!((w.lambda[1] - 0.5).abs() < 1e-6);
        assert!((w.sum_check - 1.0).abs() < AFFINE_TOL);
        assert!((predict(&w, obs.y()) - 2.0).abs() < 1e-6);
    }

    #[test]
    fn igp_weights_delta_independent() {
        let obs = random_obs(6, 5);
        let om = ObservationModel::white(0.3, 6);
        let gm = build_gamma(&brownian(), obs.locs()).unwrap();
        let base = crate::structmat::choose_delta(&gm);
        let t = Location::scalar(0.37);
        let w1 = igp_weights_with_delta(&obs, &brownian(), &om, &t, Some(base)).unwrap();
        let w2 = igp_weights_with_delta(&obs, &brownian(), &om, &t, Some(3.0 * base)).unwrap();
        let w3 = igp_weights_with_delta(&obs, &brownian(), &om, &t, Some(10.0 * base)).unwrap();
        assert!((&w1.lambda - &w2.lambda).amax() < 1e-8);
        assert!((&w1.lambda - &w3.lambda).amax() < 1e-8);
        assert!((w1.sum_check - 1.0).abs() < AFFINE_TOL);
    }

    #[test]
    fn igp_matches_precision_form_brute_force() {
        // oracle: λ_k = e₁⊤W⁻¹X⊤(σ²FF⊤)⁻¹e_k on the augmented (t, s) system
        let obs = random_obs(5, 9);
        let n = obs.len();
        let om = ObservationModel::white(0.4, n);
        let model = brownian();
        let t = Location::scalar(0.44);
        let w = igp_weights(&obs, &model, &om, &t).unwrap();

        let gm = build_gamma(&model, obs.locs()).unwrap();
        let gt = crate::structmat::gamma_vector(&model, obs.locs(), &t).unwrap();
        let m = crate::structmat::assemble_increment_cov(&gm, &gt);
        let m_inv = m.lu().try_inverse().unwrap();
        let d =
            crate::structmat::increment_map(crate::structmat::IncrementKind::TargetRelative, n).d;
        let noise_inv = om.covariance().lu().try_inverse().unwrap();
        let mut x = DMatrix::zeros(n, n + 1);
        for i in 0..n {
            x[(i, i + 1)] = 1.0;
        }
        let w_mat = x.transpose() * &noise_inv * &x + d.transpose() * m_inv * &d;
        let rhs = x.transpose() * &noise_inv;
        let sol = w_mat.lu().solve(&rhs).unwrap();
        let brute = sol.row(0).transpose();
        assert!((&w.lambda - &brute).amax() < 1e-8);
    }

    #[test]
    fn noise_free_interpolates() {
        let obs = random_obs(7, 13);
        let gm = build_gamma(&brownian(), obs.locs()).unwrap();
        for ell in [0usize, 3, 6] {
            let t = obs.locs().get(ell).clone();
            let gt = gm.matrix().column(ell).clone_owned();
            let w = igp_weights_noise_free(&gm, &gt, t).unwrap();
            for k in 0..7 {
                let expect = if k == ell { 1.0 } else { 0.0 };
                assert!((w.lambda[k] - expect).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn noise_free_midpoint_hand_case() {
        let locs = LocationSet::from_scalars(&[0.0, 1.0]).unwrap();
        let gm = build_gamma(&brownian(), &locs).unwrap();
        let gt = DVector::from_vec(vec![0.5, 0.5]);
        let w = igp_weights_noise_free(&gm, &gt, Location::scalar(0.5)).unwrap();
        assert!((w.lambda[0] - 0.5).abs() < 1e-12);
        assert!((w.lambda[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn igp_sigma_to_zero_approaches_noise_free() {
        let obs = random_obs(5, 21);
        let model = brownian();
        let gm = build_gamma(&model, obs.locs()).unwrap();
        let t = Location::scalar(0.61);
        let gt = crate::structmat::gamma_vector(&model, obs.locs(), &t).unwrap();
        let w0 = igp_weights_noise_free(&gm, &gt, t.clone()).unwrap();
        let mut prev = f64::INFINITY;
        for sigma in [1e-2, 1e-4, 1e-6] {
            let om = ObservationModel::white(sigma, 5);
            let w = igp_weights(&obs, &model, &om, &t).unwrap();
            let dev = (&w.lambda - &w0.lambda).amax();
            assert!(dev < prev, "deviation must shrink with σ");
            prev = dev;
        }
        assert!(prev < 1e-6);
    }

    #[test]
    fn limit_weights_interpolate_and_sum_to_one() {
        let obs = random_obs(6, 31);
        let model = gauss_unit();
        let (gm, sill) = bounded_gamma_matrix(&model, obs.locs()).unwrap();
        let ell = 2;
        let t = obs.locs().get(ell).clone();
        let gt = bounded_gamma_vector(&model, obs.locs(), &t).unwrap();
        let w = limit_weights(&gm, &gt, &sill, t).unwrap();
        for k in 0..6 {
            let expect = if k == ell { 1.0 } else { 0.0 };
            assert!((w.lambda[k] - expect).abs() < 1e-10);
        }
        let t2 = Location::scalar(0.43);
        let gt2 = bounded_gamma_vector(&model, obs.locs(), &t2).unwrap();
        let w2 = limit_weights(&gm, &gt2, &sill, t2).unwrap();
        assert!((w2.sum_check - 1.0).abs() < AFFINE_TOL);
    }

    #[test]
    fn limit_symmetric_two_point() {
        let locs = LocationSet::from_scalars(&[-0.5, 0.5]).unwrap();
        let model = gauss_unit();
        let (gm, sill) = bounded_gamma_matrix(&model, &locs).unwrap();
        let t = Location::scalar(0.0);
        let gt = bounded_gamma_vector(&model, &locs, &t).unwrap();
        let w = limit_weights(&gm, &gt, &sill, t).unwrap();
        assert!((w.lambda[0] - 0.5).abs() < 1e-12);
        assert!((w.lambda[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn rational_with_r_inv_e_recovers_limit() {
        let obs = random_obs(6, 41);
        let model = gauss_unit();
        let (gm, sill) = bounded_gamma_matrix(&model, obs.locs()).unwrap();
        let t = Location::scalar(0.352);
        let gt = bounded_gamma_vector(&model, obs.locs(), &t).unwrap();
        let cfg = RationalConfig::r_inv_e(&gm, &sill).unwrap();
        let wr = rational_weights(&gm, &gt, &sill, &cfg, t.clone()).unwrap();
        let wl = limit_weights(&gm, &gt, &sill, t).unwrap();
        assert!((&wr.lambda - &wl.lambda).amax() < 1e-10);
    }

    #[test]
    fn rational_collapses_at_observation() {
        let obs = random_obs(5, 43);
        let model = gauss_unit();
        let (gm, sill) = bounded_gamma_matrix(&model, obs.locs()).unwrap();
        let ell = 3;
        let t = obs.locs().get(ell).clone();
        let gt = bounded_gamma_vector(&model, obs.locs(), &t).unwrap();
        let cfg = RationalConfig::perron(&gm, &sill).unwrap();
        let w = rational_weights(&gm, &gt, &sill, &cfg, t).unwrap();
        for k in 0..5 {
            let expect = if k == ell { 1.0 } else { 0.0 };
            assert!((w.lambda[k] - expect).abs() < 1e-9, "k={k}: {}", w.lambda[k]);
        }
    }

    #[test]
    fn rational_nonnegative_with_positive_c() {
        // nonnegativity holds on the exponential-correlation family (its
        // simple-kriging row weights are screened and nonnegative in 1-d);
        // Gaussian correlations violate it and are excluded here
        let model = VariogramModel::StationaryExp { sigma2: 1.0, theta: 1.0 };
        for seed in [47u64, 48, 49, 50] {
            let obs = random_obs(7, seed);
            let (gm, sill) = bounded_gamma_matrix(&model, obs.locs()).unwrap();
            let t = Location::scalar(0.29 + 0.07 * seed as f64 % 0.9);
            let gt = bounded_gamma_vector(&model, obs.locs(), &t).unwrap();
            for cfg in [RationalConfig::ones(7), RationalConfig::perron(&gm, &sill).unwrap()] {
                let w = rational_weights(&gm, &gt, &sill, &cfg, t.clone()).unwrap();
                assert!(
                    w.lambda.iter().all(|&l| l >= -1e-12),
                    "seed {seed}: min λ = {}",
                    w.lambda.min()
                );
                assert!((w.sum_check - 1.0).abs() < AFFINE_TOL);
            }
        }
    }

    #[test]
    fn surrogate_rational_approaches_shepard() {
        let obs = random_obs(6, 53);
        let base = gauss_unit();
        let t = Location::scalar(0.31);
        let c = DVector::from_element(6, 1.0);
        // Shepard side: distance = surrogate transform (its scale drops out)
        let ghat = VariogramModel::Surrogate { base: Box::new(base.clone()), rho: 1.0 };
        let shep = gamma_shepard_weights(&ghat, obs.locs(), &t, &c).unwrap();
        let mut prev = f64::INFINITY;
        for rho in [1e-1, 1e-2, 1e-3] {
            let model = VariogramModel::Surrogate { base: Box::new(base.clone()), rho };
            let (gm, sill) = bounded_gamma_matrix(&model, obs.locs()).unwrap();
            let gt = bounded_gamma_vector(&model, obs.locs(), &t).unwrap();
            let cfg = RationalConfig::ones(6);
            let w = rational_weights(&gm, &gt, &sill, &cfg, t.clone()).unwrap();
            let dev = (&w.lambda - &shep.lambda).amax();
            assert!(dev < prev, "rho={rho}: deviation {dev} did not shrink (prev {prev})");
            prev = dev;
        }
        assert!(prev < 1e-2);
    }

    #[test]
    fn shepard_formula_and_coincidence() {
        let locs = LocationSet::from_scalars(&[0.0, 4.0]).unwrap();
        let c = DVector::from_element(2, 1.0);
        let w = shepard_weights(&locs, &Location::scalar(1.0), |a, b| a.distance(b), &c).unwrap();
        assert!((w.lambda[0] - 0.75).abs() < 1e-14);
        assert!((w.lambda[1] - 0.25).abs() < 1e-14);
        let w0 = shepard_weights(&locs, &Location::scalar(4.0), |a, b| a.distance(b), &c).unwrap();
        assert_eq!(w0.lambda[1], 1.0);
        let w_eq = shepard_weights(&locs, &Location::scalar(2.0), |a, b| a.distance(b), &c).unwrap();
        assert!((w_eq.lambda[0] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn shepard_ambiguous_zero_distances() {
        let locs = LocationSet::from_scalars(&[0.0, 1.0]).unwrap();
        let c = DVector::from_element(2, 1.0);
        let res = shepard_weights(&locs, &Location::scalar(0.5), |_, _| 0.0, &c);
        assert!(matches!(res, Err(Error::Degenerate(_))));
    }

    #[test]
    fn gamma_shepard_matches_idw_for_brownian() {
        // γ = σ²·d is a positive multiple of distance, so weights coincide
        let locs = LocationSet::from_scalars(&[0.1, 0.5, 0.9]).unwrap();
        let c = DVector::from_element(3, 1.0);
        let t = Location::scalar(0.33);
        let w_gamma =
            gamma_shepard_weights(&VariogramModel::Brownian { sigma2: 2.5 }, &locs, &t, &c)
                .unwrap();
        let w_idw = shepard_weights(&locs, &t, |a, b| a.distance(b), &c).unwrap();
        assert!((&w_gamma.lambda - &w_idw.lambda).amax() < 1e-14);
    }

    #[test]
    fn shift_equivariance_of_affine_predictors() {
        let obs = random_obs(5, 61);
        let om = ObservationModel::white(0.2, 5);
        let t = Location::scalar(0.42);
        let w = igp_weights(&obs, &brownian(), &om, &t).unwrap();
        let base = predict(&w, obs.y());
        let shifted = predict(&w, &(obs.y() + DVector::from_element(5, 7.5)));
        assert!((shifted - (base + 7.5)).abs() < 1e-9);
    }

    #[test]
    fn joseph_kang_reproduces_polynomials_and_interpolates() {
        let locs = LocationSet::from_scalars(&[0.0, 0.25, 0.5, 0.75, 1.0]).unwrap();
        let y = DVector::from_fn(5, |i, _| {
            let x = locs.get(i).coords()[0];
            2.0 - 3.0 * x + 0.5 * x * x
        });
        let obs = Observations::new(locs, y).unwrap();
        let c = DVector::from_element(5, 1.0);
        for tx in [0.1, 0.6, 1.4] {
            let z = joseph_kang_predict(&obs, &Location::scalar(tx), 2, |a, b| a.distance(b), &c)
                .unwrap();
            let expect = 2.0 - 3.0 * tx + 0.5 * tx * tx;
            assert!((z - expect).abs() < 1e-9, "t={tx}: {z} vs {expect}");
        }
        let z = joseph_kang_predict(&obs, &Location::scalar(0.5), 1, |a, b| a.distance(b), &c)
            .unwrap();
        assert!((z - obs.y()[2]).abs() < 1e-12);
    }

    #[test]
    fn joseph_kang_degree_zero_is_centered_shepard() {
        let obs = random_obs(6, 71);
        let c = DVector::from_element(6, 1.0);
        let t = Location::scalar(0.37);
        let z = joseph_kang_predict(&obs, &t, 0, |a, b| a.distance(b), &c).unwrap();
        let w = shepard_weights(obs.locs(), &t, |a, b| a.distance(b), &c).unwrap();
        let ybar = obs.y().mean();
        let expect = ybar + w.lambda.dot(&(obs.y() - DVector::from_element(6, ybar)));
        assert!((z - expect).abs() < 1e-12);
    }

    #[test]
    fn g_lim_secant_identity_and_definiteness() {
        let obs = random_obs(6, 83);
        let model = gauss_unit();
        let (gm, sill) = bounded_gamma_matrix(&model, obs.locs()).unwrap();
        let t = Location::scalar(0.52);
        let gt = bounded_gamma_vector(&model, obs.locs(), &t).unwrap();
        let r = g_lim_matrix(&gm, &gt, &sill).unwrap();
        assert!(r.f > 0.0);
        let m = r.matrix.unwrap();
        assert!(r.secant_residual.unwrap() <= 1e-8);
        let eig = nalgebra::SymmetricEigen::new(m.clone());
        assert!(eig.eigenvalues.min() > 0.0, "DFP matrix must be positive definite");
        // and it differs from the increment covariance M(t)
        let m_inc = crate::structmat::assemble_increment_cov(&gm, &gt);
        assert!((m - m_inc).norm() > 1e-6);
    }

    #[test]
    fn perron_vector_cases() {
        let n = 4;
        let r = DMatrix::from_fn(n, n, |i, j| if i == j { 2.0 } else { 1.0 });
        let v = perron_vector(&r).unwrap();
        for k in 0..n {
            assert!((v[k] - 0.25).abs() < 1e-10);
        }
        let r2 = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.0]);
        let v2 = perron_vector(&r2).unwrap();
        assert!((v2[0] - 0.5).abs() < 1e-10);
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let base = DMatrix::from_fn(6, 6, |_, _| rng.random_range(0.1..1.0));
        let sym = (&base + base.transpose()) * 0.5;
        let v6 = perron_vector(&sym).unwrap();
        let eig = nalgebra::SymmetricEigen::new(sym.clone());
        let lmax = eig.eigenvalues.max();
        let resid = (&sym * &v6 - &v6 * lmax).norm() / v6.norm();
        assert!(resid / lmax < 1e-8);
        assert!(v6.iter().all(|&x| x > 0.0));
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        assert!(perron_vector(&bad).is_err());
    }

    #[test]
    fn igp_weights_affine_linearity_in_gamma_vector() {
        // λ(αγ₁ + (1−α)γ₂) = αλ(γ₁) + (1−α)λ(γ₂): the weight map is affine
        // in the target variogram vector
        let obs = random_obs(5, 91);
        let om = ObservationModel::white(0.3, 5);
        let gm = build_gamma(&brownian(), obs.locs()).unwrap();
        let engine = IgpEngine::new(&gm, &om, None).unwrap();
        let g1 = DVector::from_vec(vec![0.1, 0.5, 0.2, 0.8, 0.3]);
        let g2 = DVector::from_vec(vec![0.6, 0.1, 0.9, 0.2, 0.4]);
        let alpha = 0.37;
        let gmix = &g1 * alpha + &g2 * (1.0 - alpha);
        let t = Location::scalar(0.5);
        let w1 = engine.weights_from_gamma(&g1, t.clone()).unwrap();
        let w2 = engine.weights_from_gamma(&g2, t.clone()).unwrap();
        let wm = engine.weights_from_gamma(&gmix, t).unwrap();
        let expect = &w1.lambda * alpha + &w2.lambda * (1.0 - alpha);
        assert!((&wm.lambda - expect).amax() < 1e-10);
    }

    #[test]
    fn sill_below_entries_is_rejected() {
        let obs = random_obs(4, 97);
        let gm =
            build_gamma(&VariogramModel::StationaryExp { sigma2: 2.0, theta: 5.0 }, obs.locs())
                .unwrap();
        let bad = SillSpec::new(0.1).unwrap();
        let gt = DVector::zeros(4);
        assert!(limit_weights(&gm, &gt, &bad, Location::scalar(0.5)).is_err());
    }
}
