//! Variogram matrices and their structured factorizations.
//!
//! The variogram matrix `Γ` of distinct locations is conditionally negative
//! definite: it has exactly one positive eigenvalue, and `δee⊤ − Γ` is
//! positive definite for large enough `δ`. That shift is the workhorse here.
//! A single Cholesky factorization `δee⊤ − Γ = L₀L₀⊤` is computed once; each
//! prediction target then costs `O(n²)`:
//!
//! - a *twisted* factor extends `L₀` to the target-augmented shifted matrix
//!   through one triangular solve (`L₀ r = δe − γ(t)`, `ρ = √(δ − ‖r‖²)`),
//! - Givens sweeps turn `[−ρe⊤; L₀⊤ − re⊤]` into a triangular factor of the
//!   increment covariance `M(t) = γ(t)e⊤ + eγ(t)⊤ − Γ` without assembling it.
//!
//! Noise enters by folding rows of `σF⊤` into `L₀` (QR update), and posterior
//! covariance factors come out of Cholesky downdating.

use crate::error::{Error, Result};
use crate::geom::LocationSet;
use crate::linalg;
use crate::variogram::VariogramModel;
use nalgebra::{DMatrix, DVector};

/// Relative pivot tolerance for the modified-Cholesky bump.
const BUMP_PIVOT_REL: f64 = 1e-12;
/// Total bump above this fraction of `‖Γ‖∞` raises the warning flag.
const BUMP_WARN_REL: f64 = 1e-6;
/// Acceptable negative slack in `ρ(t)² = δ − ‖r‖²`, relative to `δ`.
const RHO_CLAMP_REL: f64 = 1e-10;
/// Relative indefiniteness tolerance for downdating.
const DOWNDATE_TOL_REL: f64 = 1e-8;

/// Symmetric zero-diagonal matrix of pairwise variogram values.
#[derive(Debug, Clone)]
pub struct VariogramMatrix {
    gamma: DMatrix<f64>,
    locs: LocationSet,
}

impl VariogramMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.gamma
    }

    pub fn locs(&self) -> &LocationSet {
        &self.locs
    }

    pub fn n(&self) -> usize {
        self.gamma.nrows()
    }

    /// Wrap a precomputed matrix, checking the structural invariants.
    pub fn from_matrix(gamma: DMatrix<f64>, locs: LocationSet) -> Result<Self> {
        let n = gamma.nrows();
        if gamma.ncols() != n || locs.len() != n {
            return Err(Error::DimensionMismatch(
                "variogram matrix must be square and match the location count".into(),
            ));
        }
        let scale = gamma.amax().max(1e-300);
        for i in 0..n {
            if gamma[(i, i)] != 0.0 {
                return Err(Error::Domain("variogram matrix must have a zero diagonal".into()));
            }
            for j in 0..i {
                if (gamma[(i, j)] - gamma[(j, i)]).abs() > 1e-14 * scale {
                    return Err(Error::Domain("variogram matrix must be symmetric".into()));
                }
                if gamma[(i, j)] < 0.0 {
                    return Err(Error::Domain("variogram entries must be nonnegative".into()));
                }
            }
        }
        Ok(VariogramMatrix { gamma, locs })
    }
}

/// `Γ_ij = γ(s_i, s_j)` over a location set.
pub fn build_gamma(model: &VariogramModel, locs: &LocationSet) -> Result<VariogramMatrix> {
    model.validate()?;
    let n = locs.len();
    let mut gamma = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = model.eval(locs.get(i), locs.get(j))?;
            gamma[(i, j)] = v;
            gamma[(j, i)] = v;
        }
    }
    Ok(VariogramMatrix { gamma, locs: locs.clone() })
}

/// Rectangular cross block `γ(a_i, b_j)`; rows may coincide with columns.
pub fn build_gamma_cross(
    model: &VariogramModel,
    rows: &LocationSet,
    cols: &LocationSet,
) -> Result<DMatrix<f64>> {
    let mut out = DMatrix::zeros(rows.len(), cols.len());
    for i in 0..rows.len() {
        for j in 0..cols.len() {
            out[(i, j)] = model.eval(rows.get(i), cols.get(j))?;
        }
    }
    Ok(out)
}

/// Per-target variogram vector `γ(t) = (γ(s_1,t), …, γ(s_n,t))⊤`.
pub fn gamma_vector(
    model: &VariogramModel,
    locs: &LocationSet,
    t: &crate::geom::Location,
) -> Result<DVector<f64>> {
    let mut g = DVector::zeros(locs.len());
    for (i, s) in locs.iter().enumerate() {
        g[i] = model.eval(s, t)?;
    }
    Ok(g)
}

/// Eigenstructure report for a variogram matrix.
#[derive(Debug, Clone)]
pub enum CndDiagnostics {
    /// `Γ` is numerically singular; no diagnostics are meaningful.
    Singular,
    Regular {
        /// Number of strictly positive eigenvalues (Theorem: exactly one).
        n_pos_eig: usize,
        /// Eigenvector of the largest eigenvalue, sign-normalized to be
        /// elementwise positive.
        perron: DVector<f64>,
        /// `e⊤Γ⁻¹e`, positive for every nonsingular variogram matrix.
        e_ginv_e: f64,
    },
}

/// Full symmetric eigendecomposition diagnostics (`O(n³)`, inspection path).
pub fn cnd_diagnostics(gm: &VariogramMatrix) -> CndDiagnostics {
    let n = gm.n();
    let eig = nalgebra::SymmetricEigen::new(gm.gamma.clone());
    let max_abs = eig.eigenvalues.amax();
    if max_abs == 0.0 {
        return CndDiagnostics::Singular;
    }
    let min_abs = eig.eigenvalues.iter().fold(f64::INFINITY, |a, &l| a.min(l.abs()));
    if min_abs <= 1e-12 * max_abs {
        return CndDiagnostics::Singular;
    }
    let n_pos_eig = eig.eigenvalues.iter().filter(|&&l| l > 0.0).count();
    let mut idx_max = 0;
    for k in 1..n {
        if eig.eigenvalues[k] > eig.eigenvalues[idx_max] {
            idx_max = k;
        }
    }
    let mut perron = eig.eigenvectors.column(idx_max).clone_owned();
    // flip so the dominant component is positive
    let mut lead = 0;
    for k in 1..n {
        if perron[k].abs() > perron[lead].abs() {
            lead = k;
        }
    }
    if perron[lead] < 0.0 {
        perron.neg_mut();
    }
    let e = DVector::from_element(n, 1.0);
    let lu = gm.gamma.clone().lu();
    let Some(x) = lu.solve(&e) else {
        return CndDiagnostics::Singular;
    };
    CndDiagnostics::Regular { n_pos_eig, perron, e_ginv_e: e.dot(&x) }
}

/// Shift `δ = ‖Γe‖² / (e⊤Γe)`, generally enough to make `δee⊤ − Γ` positive
/// definite (the factorization bump covers the exceptions).
pub fn choose_delta(gm: &VariogramMatrix) -> f64 {
    choose_delta_raw(&gm.gamma)
}

/// Same as [`choose_delta`] for a raw symmetric matrix (used for joint
/// observation/prediction blocks where duplicates may be present).
pub fn choose_delta_raw(gamma: &DMatrix<f64>) -> f64 {
    let n = gamma.nrows();
    if n < 2 {
        return 1.0;
    }
    let e = DVector::from_element(n, 1.0);
    let ge = gamma * &e;
    let denom = e.dot(&ge);
    if denom <= 0.0 {
        return 1.0;
    }
    ge.norm_squared() / denom
}

/// One-time factor `L₀L₀⊤ = δee⊤ − Γ + diag(bump)`, target independent.
#[derive(Debug, Clone)]
pub struct ShiftedCholesky {
    delta: f64,
    l0: DMatrix<f64>,
    bump: DVector<f64>,
    bump_warning: bool,
}

impl ShiftedCholesky {
    /// Factor with an explicit shift. Never fails: pivots at or below
    /// `1e-12·‖δee⊤ − Γ‖∞` are bumped and recorded.
    pub fn factor(gm: &VariogramMatrix, delta: f64) -> Result<Self> {
        if !(delta > 0.0) {
            return Err(Error::Domain(format!("shift δ must be positive, got {delta}")));
        }
        Ok(Self::factor_raw(&gm.gamma, delta))
    }

    pub(crate) fn factor_raw(gamma: &DMatrix<f64>, delta: f64) -> Self {
        let n = gamma.nrows();
        let shifted = DMatrix::from_fn(n, n, |i, j| delta - gamma[(i, j)]);
        let tol = BUMP_PIVOT_REL * shifted.amax();
        let f = linalg::cholesky_lower_bumped(&shifted, tol);
        let bump_warning = f.bump.amax() > BUMP_WARN_REL * gamma.amax().max(1e-300);
        if bump_warning {
            log::warn!(
                "shifted Cholesky bump {:e} exceeds {:e} of the variogram scale",
                f.bump.amax(),
                BUMP_WARN_REL
            );
        }
        ShiftedCholesky { delta, l0: f.l, bump: f.bump, bump_warning }
    }

    /// Factor with the [`choose_delta`] shift, doubling δ (up to 6 times)
    /// while the bump reaches warning level, then accepting the bumped
    /// factor. Sub-warning bumps (the tiny ridge a numerically
    /// rank-deficient variogram needs regardless of δ) do not trigger a
    /// retry, since no shift can remove them.
    pub fn auto(gm: &VariogramMatrix) -> Self {
        Self::auto_raw(&gm.gamma)
    }

    pub(crate) fn auto_raw(gamma: &DMatrix<f64>) -> Self {
        let mut delta = choose_delta_raw(gamma);
        let mut fact = Self::factor_raw(gamma, delta);
        for _ in 0..6 {
            if !fact.bump_warning {
                return fact;
            }
            delta *= 2.0;
            fact = Self::factor_raw(gamma, delta);
        }
        fact
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn l0(&self) -> &DMatrix<f64> {
        &self.l0
    }

    pub fn bump(&self) -> &DVector<f64> {
        &self.bump
    }

    pub fn bump_warning(&self) -> bool {
        self.bump_warning
    }

    pub fn n(&self) -> usize {
        self.l0.nrows()
    }

    /// Solve `(δee⊤ − Γ) x = b` through the factor.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        linalg::solve_spd(&self.l0, b)
    }
}

/// Target extension of a [`ShiftedCholesky`]: `r(t)` solves
/// `L₀ r = δe − γ(t)` and `ρ(t) = √(δ − ‖r‖²)` borders the factor so that
///
/// ```text
/// δee⊤ − [0, γ(t)⊤; γ(t), Γ] = [ρ, r⊤; 0, L₀]·[ρ, 0; r, L₀⊤]
/// ```
#[derive(Debug, Clone)]
pub struct TwistedFactor {
    r: DVector<f64>,
    rho: f64,
    clamped: bool,
}

impl TwistedFactor {
    pub fn r(&self) -> &DVector<f64> {
        &self.r
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn clamped(&self) -> bool {
        self.clamped
    }
}

/// Extend the one-time factor to a target with variogram vector `γ(t)`.
pub fn twisted_factor(sc: &ShiftedCholesky, gamma_t: &DVector<f64>) -> Result<TwistedFactor> {
    let n = sc.n();
    if gamma_t.len() != n {
        return Err(Error::DimensionMismatch(
            "target variogram vector length must match the factor order".into(),
        ));
    }
    if gamma_t.iter().any(|&g| g < 0.0 || !g.is_finite()) {
        return Err(Error::Domain("target variogram entries must be finite and ≥ 0".into()));
    }
    let mut r = DVector::from_fn(n, |i, _| sc.delta - gamma_t[i]);
    linalg::solve_lower_inplace(&sc.l0, r.as_mut_slice());
    let rho2 = sc.delta - r.norm_squared();
    if rho2 < -RHO_CLAMP_REL * sc.delta {
        return Err(Error::Numeric(format!(
            "augmented shifted matrix lost positive semidefiniteness (ρ² = {rho2:e}); \
             δ = {} may be too small for this target",
            sc.delta
        )));
    }
    let clamped = rho2 < 0.0;
    if clamped {
        log::warn!("ρ² = {rho2:e} clamped to zero (target nearly coincident with data)");
    }
    Ok(TwistedFactor { r, rho: rho2.max(0.0).sqrt(), clamped })
}

/// Lower-triangular `G` with `G·G⊤ = γ(t)e⊤ + eγ(t)⊤ − Γ`.
#[derive(Debug, Clone)]
pub struct IncrementCovFactor {
    g: DMatrix<f64>,
}

impl IncrementCovFactor {
    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }

    /// `G·v` (used to draw increments).
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.g * v
    }
}

/// Factor the increment covariance `M(t)` from the twisted pieces by the
/// two-phase Givens scheme on `[−ρ(t)e⊤; L₀⊤ − r(t)e⊤]`:
///
/// 1. `n − 1` rotations on consecutive rows map `r(t) ↦ ‖r‖e₁`, making the
///    lower block upper Hessenberg;
/// 2. one sweep clears the subdiagonal, a second folds the `−ρe⊤` row in.
///
/// None of the `≈ 3n` rotations is retained; per-target cost is `O(n²)`.
pub fn increment_factor(sc: &ShiftedCholesky, tf: &TwistedFactor) -> IncrementCovFactor {
    let n = sc.n();
    // W stored row-major so each rotation streams two contiguous rows:
    // row 0 is -ρe⊤, rows 1..=n hold L0⊤; the rank-one -re⊤ piece rides
    // along as the tracked vector rr and is folded in as -‖r‖e₁e⊤ once the
    // rotations have aligned it.
    let mut w = vec![0.0; (n + 1) * n];
    for j in 0..n {
        w[j] = -tf.rho;
    }
    for bi in 0..n {
        let row = &mut w[(bi + 1) * n..(bi + 2) * n];
        for j in bi..n {
            row[j] = sc.l0[(j, bi)];
        }
    }
    let mut rr = tf.r.clone_owned();

    // phase 1: zero trailing entries of r, bottom pair upward; L0⊤ turns
    // upper Hessenberg
    for i in (0..n.saturating_sub(1)).rev() {
        let (c, s, h) = linalg::givens(rr[i], rr[i + 1]);
        rr[i] = h;
        rr[i + 1] = 0.0;
        if s != 0.0 {
            rotate_rows(&mut w, n, i + 1, i + 2, c, s, 0);
        }
    }
    // fold in the aligned rank-one term: first block row -= (Q₁r)₁ e⊤
    let rnorm = rr[0];
    for j in 0..n {
        w[n + j] -= rnorm;
    }
    // phase 2a: clear the Hessenberg subdiagonal
    for i in 0..n.saturating_sub(1) {
        let a = w[(i + 1) * n + i];
        let b = w[(i + 2) * n + i];
        let (c, s, _h) = linalg::givens(a, b);
        if s != 0.0 {
            rotate_rows(&mut w, n, i + 1, i + 2, c, s, i);
        }
        w[(i + 2) * n + i] = 0.0;
    }
    // phase 2b: fold the top row into the triangle
    for j in 0..n {
        let a = w[(j + 1) * n + j];
        let b = w[j];
        let (c, s, _h) = linalg::givens(a, b);
        if s != 0.0 {
            rotate_rows(&mut w, n, j + 1, 0, c, s, j);
        }
        w[j] = 0.0;
    }
    // G = R⊤ with rows of R sign-normalized to a nonnegative diagonal
    let mut g = DMatrix::zeros(n, n);
    for j in 0..n {
        let row = &w[(j + 1) * n..(j + 2) * n];
        let flip = row[j] < 0.0;
        for i in j..n {
            g[(i, j)] = if flip { -row[i] } else { row[i] };
        }
    }
    IncrementCovFactor { g }
}

/// Apply `[c s; -s c]` to W rows `ra` (combined into) and `rb` (zeroed
/// slot), both stored contiguously, across columns `from..n`.
#[inline]
fn rotate_rows(w: &mut [f64], n: usize, ra: usize, rb: usize, c: f64, s: f64, from: usize) {
    debug_assert_ne!(ra, rb);
    let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
    let (head, tail) = w.split_at_mut(hi * n);
    let row_lo = &mut head[lo * n + from..lo * n + n];
    let row_hi = &mut tail[from..n];
    if ra < rb {
        for (a, b) in row_lo.iter_mut().zip(row_hi.iter_mut()) {
            let x = *a;
            let y = *b;
            *a = c * x + s * y;
            *b = -s * x + c * y;
        }
    } else {
        for (b, a) in row_lo.iter_mut().zip(row_hi.iter_mut()) {
            let x = *a;
            let y = *b;
            *a = c * x + s * y;
            *b = -s * x + c * y;
        }
    }
}

/// Assemble `M(t) = γ(t)e⊤ + eγ(t)⊤ − Γ` densely (oracle/benchmark path).
pub fn assemble_increment_cov(gm: &VariogramMatrix, gamma_t: &DVector<f64>) -> DMatrix<f64> {
    let n = gm.n();
    DMatrix::from_fn(n, n, |i, j| gamma_t[i] + gamma_t[j] - gm.gamma[(i, j)])
}

/// Direct dense factorization of the assembled `M(t)` (O(n³); the twisted
/// path's correctness and cost reference).
pub fn direct_increment_factor(gm: &VariogramMatrix, gamma_t: &DVector<f64>) -> IncrementCovFactor {
    let m = assemble_increment_cov(gm, gamma_t);
    let tol = BUMP_PIVOT_REL * m.amax();
    let f = linalg::cholesky_lower_bumped(&m, tol);
    IncrementCovFactor { g: f.l }
}

/// Fold observation noise into the shifted factor: lower `L_s` with
/// `L_sL_s⊤ = σ²FF⊤ + δee⊤ − Γ`, computed as the QR of `[L₀⊤; σF⊤]` (the
/// orthogonal component is discarded).
pub fn noisy_shifted_factor(sc: &ShiftedCholesky, sigma: f64, f: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if sigma < 0.0 {
        return Err(Error::Domain("noise scale σ must be nonnegative".into()));
    }
    let n = sc.n();
    if f.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "noise factor has {} rows, expected {n}",
            f.nrows()
        )));
    }
    let mut l = sc.l0.clone();
    if sigma > 0.0 {
        let mut w = vec![0.0; n];
        for c in 0..f.ncols() {
            for i in 0..n {
                w[i] = sigma * f[(i, c)];
            }
            linalg::cholesky_update_row(&mut l, &mut w);
        }
    }
    Ok(l)
}

/// Log of pivot clamps performed during a downdate.
#[derive(Debug, Clone, Default)]
pub struct DowndateReport {
    pub clamped_pivots: Vec<usize>,
}

/// Cholesky downdate: from lower `L` with `A = LL⊤` and rows `B` (k×n),
/// produce the factor of `A − B⊤B` by hyperbolic rotations. Near-zero
/// pivots are clamped (and logged); indefiniteness beyond `1e-8·‖A‖`
/// fails.
pub fn cholesky_downdate(l: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<(DMatrix<f64>, DowndateReport)> {
    let (out, lg) = linalg::cholesky_downdate_rows(l, b, DOWNDATE_TOL_REL)
        .map_err(Error::Downdate)?;
    if !lg.clamped.is_empty() {
        log::warn!("cholesky downdate clamped pivots {:?}", lg.clamped);
    }
    Ok((out, DowndateReport { clamped_pivots: lg.clamped }))
}

/// Rank-one Cholesky update `LL⊤ += ww⊤` (always succeeds).
pub fn cholesky_update(l: &mut DMatrix<f64>, w: &DVector<f64>) {
    let mut buf = w.as_slice().to_vec();
    linalg::cholesky_update_row(l, &mut buf);
}

/// Which increments define the process model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IncrementKind {
    /// `D = [−e | I]`: every observation differenced against the target.
    TargetRelative,
    /// `D̂`: consecutive differences (first row still target-relative).
    Consecutive,
}

/// Increment matrix `D` with the congruence `J·D_target_relative = D`.
#[derive(Debug, Clone)]
pub struct IncrementMap {
    pub kind: IncrementKind,
    /// `n × (n+1)`, rows sum to zero, rank `n`.
    pub d: DMatrix<f64>,
    /// Lower-bidiagonal unit-diagonal congruence with `J·D_tr = D`.
    pub j: DMatrix<f64>,
}

impl IncrementMap {
    /// Inverse of the congruence map: lower triangle of ones for the
    /// consecutive kind, identity otherwise.
    pub fn j_inverse(&self) -> DMatrix<f64> {
        let n = self.j.nrows();
        match self.kind {
            IncrementKind::TargetRelative => DMatrix::identity(n, n),
            IncrementKind::Consecutive => {
                DMatrix::from_fn(n, n, |i, j| if j <= i { 1.0 } else { 0.0 })
            }
        }
    }
}

/// Build an increment matrix over `n` observations (plus the target slot).
pub fn increment_map(kind: IncrementKind, n: usize) -> IncrementMap {
    assert!(n >= 1, "increments need at least one observation");
    let mut d = DMatrix::zeros(n, n + 1);
    let mut j = DMatrix::identity(n, n);
    match kind {
        IncrementKind::TargetRelative => {
            for i in 0..n {
                d[(i, 0)] = -1.0;
                d[(i, i + 1)] = 1.0;
            }
        }
        IncrementKind::Consecutive => {
            for i in 0..n {
                d[(i, i)] = -1.0;
                d[(i, i + 1)] = 1.0;
            }
            for i in 1..n {
                j[(i, i - 1)] = -1.0;
            }
        }
    }
    IncrementMap { kind, d, j }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{Location, LocationSet};
    use crate::variogram::VariogramModel;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn brownian() -> VariogramModel {
        VariogramModel::Brownian { sigma2: 1.0 }
    }

    fn random_set(n: usize, seed: u64) -> LocationSet {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        loop {
            let xs: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            if let Ok(s) = LocationSet::from_scalars(&xs) {
                return s;
            }
        }
    }

    #[test]
    fn build_gamma_two_points() {
        let locs = LocationSet::from_scalars(&[0.0, 1.0]).unwrap();
        let gm = build_gamma(&brownian(), &locs).unwrap();
        assert_eq!(gm.matrix()[(0, 1)], 1.0);
        assert_eq!(gm.matrix()[(1, 0)], 1.0);
        assert_eq!(gm.matrix()[(0, 0)], 0.0);
    }

    #[test]
    fn build_gamma_single_point() {
        let locs = LocationSet::from_scalars(&[0.3]).unwrap();
        let gm = build_gamma(&brownian(), &locs).unwrap();
        assert_eq!(gm.n(), 1);
        assert_eq!(gm.matrix()[(0, 0)], 0.0);
    }

    #[test]
    fn diagnostics_on_hand_2x2() {
        let locs = LocationSet::from_scalars(&[0.0, 1.0]).unwrap();
        let gm = build_gamma(&brownian(), &locs).unwrap();
        match cnd_diagnostics(&gm) {
            CndDiagnostics::Regular { n_pos_eig, perron, e_ginv_e } => {
                assert_eq!(n_pos_eig, 1);
                assert!(perron[0] > 0.0 && perron[1] > 0.0);
                assert!((perron[0] - perron[1]).abs() < 1e-12);
                assert!((e_ginv_e - 2.0).abs() < 1e-12);
            }
            CndDiagnostics::Singular => panic!("2x2 instance is nonsingular"),
        }
    }

    #[test]
    fn choose_delta_hand_and_homogeneity() {
        let locs = LocationSet::from_scalars(&[0.0, 1.0]).unwrap();
        let gm = build_gamma(&brownian(), &locs).unwrap();
        let d = choose_delta(&gm);
        assert!((d - 1.0).abs() < 1e-15);
        // scaling Γ scales δ linearly
        let gm3 = VariogramMatrix::from_matrix(gm.matrix() * 3.0, locs).unwrap();
        assert!((choose_delta(&gm3) - 3.0).abs() < 1e-14);
    }

    #[test]
    fn choose_delta_gives_positive_definite_shift() {
        let locs = random_set(10, 42);
        let gm = build_gamma(&brownian(), &locs).unwrap();
        let delta = choose_delta(&gm);
        let n = gm.n();
        let shifted = DMatrix::from_fn(n, n, |i, j| delta - gm.matrix()[(i, j)]);
        let eig = nalgebra::SymmetricEigen::new(shifted);
        assert!(eig.eigenvalues.min() > 0.0);
    }

    #[test]
    fn shifted_cholesky_identity_case() {
        let locs = LocationSet::from_scalars(&[0.0, 1.0]).unwrap();
        let gm = build_gamma(&brownian(), &locs).unwrap();
        let sc = ShiftedCholesky::factor(&gm, 1.0).unwrap();
        assert!((sc.l0() - DMatrix::identity(2, 2)).amax() < 1e-14);
        assert_eq!(sc.bump().amax(), 0.0);
    }

    #[test]
    fn shifted_cholesky_n1() {
        let locs = LocationSet::from_scalars(&[0.7]).unwrap();
        let gm = build_gamma(&brownian(), &locs).unwrap();
        let sc = ShiftedCholesky::factor(&gm, 4.0).unwrap();
        assert!((sc.l0()[(0, 0)] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn shifted_cholesky_bump_path() {
        let locs = random_set(8, 7);
        let gm = build_gamma(&brownian(), &locs).unwrap();
        // deliberately small δ: largest eigenvalue over n, halved
        let eig = nalgebra::SymmetricEigen::new(gm.matrix().clone());
        let small = eig.eigenvalues.max() / (2.0 * 8.0);
        let sc = ShiftedCholesky::factor(&gm, small).unwrap();
        assert!(sc.bump().amax() > 0.0);
        let n = gm.n();
        let shifted = DMatrix::from_fn(n, n, |i, j| small - gm.matrix()[(i, j)]);
        let rebuilt = sc.l0() * sc.l0().transpose();
        let adjusted = shifted + DMatrix::from_diagonal(sc.bump());
        let scale = adjusted.amax();
        assert!((rebuilt - adjusted).amax() < 1e-10 * scale);
    }

    #[test]
    fn auto_retries_until_clean() {
        let locs = random_set(9, 3);
        let gm = build_gamma(&brownian(), &locs).unwrap();
        let sc = ShiftedCholesky::auto(&gm);
        assert_eq!(sc.bump().amax(), 0.0);
    }

    #[test]
    fn twisted_factor_reproduces_bordered_matrix() {
        let locs = random_set(8, 5);
        let gm = build_gamma(&brownian(), &locs).unwrap();
        let sc = ShiftedCholesky::auto(&gm);
        let t = Location::scalar(0.456);
        let gt = gamma_vector(&brownian(), gm.locs(), &t).unwrap();
        let tf = twisted_factor(&sc, &gt).unwrap();
        let n = gm.n();
        // bordered product [rho r^T; 0 L0][rho 0; r L0^T]
        let mut prod = DMatrix::zeros(n + 1, n + 1);
        prod[(0, 0)] = tf.rho() * tf.rho() + tf.r().norm_squared();
        for i in 0..n {
            let mut v = 0.0;
            for k in 0..=i {
                v += sc.l0()[(i, k)] * tf.r()[k];
            }
            prod[(0, i + 1)] = v;
            prod[(i + 1, 0)] = v;
        }
        let ll = sc.l0() * sc.l0().transpose();
        for i in 0..n {
            for j in 0..n {
                prod[(i + 1, j + 1)] = ll[(i, j)];
            }
        }
        let mut expect = DMatrix::from_element(n + 1, n + 1, sc.delta());
        expect[(0, 0)] = sc.delta();
        for i in 0..n {
            expect[(0, i + 1)] -= gt[i];
            expect[(i + 1, 0)] -= gt[i];
            for j in 0..n {
                expect[(i + 1, j + 1)] -= gm.matrix()[(i, j)];
            }
        }
        assert!((prod - expect).amax() < 1e-10 * sc.delta());
    }

    #[test]
    fn twisted_factor_at_observation_gives_zero_rho() {
        let locs = random_set(6, 11);
        let gm = build_gamma(&brownian(), &locs).unwrap();
        let sc = ShiftedCholesky::auto(&gm);
        let gt = gm.matrix().column(2).clone_owned();
        let tf = twisted_factor(&sc, &gt).unwrap();
        assert!(tf.rho().abs() < 1e-6 * sc.delta().sqrt());
    }

    #[test]
    fn twisted_factor_n1_hand_algebra() {
        let locs = LocationSet::from_scalars(&[0.0]).unwrap();
        let gm = build_gamma(&brownian(), &locs).unwrap();
        let sc = ShiftedCholesky::factor(&gm, 4.0).unwrap();
        let g = 1.3;
        let tf = twisted_factor(&sc, &DVector::from_element(1, g)).unwrap();
        let r_expect = (4.0 - g) / 2.0;
        assert!((tf.r()[0] - r_expect).abs() < 1e-14);
        assert!((tf.rho() * tf.rho() + tf.r().norm_squared() - 4.0).abs() < 1e-13);
    }

    #[test]
    fn increment_factor_matches_direct() {
        for seed in [1u64, 2, 3] {
            let locs = random_set(8, 100 + seed);
            let gm = build_gamma(&brownian(), &locs).unwrap();
            let sc = ShiftedCholesky::auto(&gm);
            let t = Location::scalar(0.123 + 0.1 * seed as f64);
            let gt = gamma_vector(&brownian(), gm.locs(), &t).unwrap();
            let tf = twisted_factor(&sc, &gt).unwrap();
            let g = increment_factor(&sc, &tf);
            let m = assemble_increment_cov(&gm, &gt);
            let rebuilt = g.g() * g.g().transpose();
            assert!((rebuilt - &m).amax() < 1e-10 * m.amax());
            // triangular with nonnegative diagonal
            for i in 0..gm.n() {
                assert!(g.g()[(i, i)] >= 0.0);
                for j in (i + 1)..gm.n() {
                    assert_eq!(g.g()[(i, j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn increment_factor_n1() {
        let locs = LocationSet::from_scalars(&[0.0]).unwrap();
        let gm = build_gamma(&brownian(), &locs).unwrap();
        let sc = ShiftedCholesky::factor(&gm, 4.0).unwrap();
        let g_t = 0.9;
        let tf = twisted_factor(&sc, &DVector::from_element(1, g_t)).unwrap();
        let g = increment_factor(&sc, &tf);
        assert!((g.g()[(0, 0)] - (2.0 * g_t).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn noisy_factor_matches_assembly() {
        let locs = random_set(7, 21);
        let gm = build_gamma(&brownian(), &locs).unwrap();
        let sc = ShiftedCholesky::auto(&gm);
        let n = gm.n();
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let f = DMatrix::from_fn(n, 4, |_, _| rng.random_range(-1.0..1.0));
        let sigma = 0.4;
        let ls = noisy_shifted_factor(&sc, sigma, &f).unwrap();
        let expect = DMatrix::from_fn(n, n, |i, j| sc.delta() - gm.matrix()[(i, j)])
            + &f * f.transpose() * sigma * sigma;
        assert!((&ls * ls.transpose() - expect).amax() < 1e-10 * sc.delta());
        // σ = 0 leaves L0 untouched
        let l0 = noisy_shifted_factor(&sc, 0.0, &f).unwrap();
        assert_eq!((l0 - sc.l0()).amax(), 0.0);
    }

    #[test]
    fn noisy_factor_hand_2x2() {
        let locs = LocationSet::from_scalars(&[0.0, 1.0]).unwrap();
        let gm = build_gamma(&brownian(), &locs).unwrap();
        let sc = ShiftedCholesky::factor(&gm, 1.0).unwrap();
        let ls = noisy_shifted_factor(&sc, 1.0, &DMatrix::identity(2, 2)).unwrap();
        let prod = &ls * ls.transpose();
        assert!((prod - DMatrix::identity(2, 2) * 2.0).amax() < 1e-14);
    }

    #[test]
    fn downdate_hand_case_and_noop() {
        // A = 2I, B = [1, 0] -> A - B^T B = diag(1, 2)
        let l = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0_f64.sqrt(), 2.0_f64.sqrt()]));
        let b = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let (post, rep) = cholesky_downdate(&l, &b).unwrap();
        assert!(rep.clamped_pivots.is_empty());
        let prod = &post * post.transpose();
        assert!((prod[(0, 0)] - 1.0).abs() < 1e-14);
        assert!((prod[(1, 1)] - 2.0).abs() < 1e-14);
        // B = 0 is the identity operation
        let z = DMatrix::zeros(1, 2);
        let (same, _) = cholesky_downdate(&l, &z).unwrap();
        assert_eq!((same - &l).amax(), 0.0);
    }

    #[test]
    fn downdate_random_psd_instance() {
        let mut rng = ChaCha12Rng::seed_from_u64(33);
        let n = 9;
        let base = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let b = DMatrix::from_fn(3, n, |_, _| rng.random_range(-0.3..0.3));
        let a = &base * base.transpose() + DMatrix::identity(n, n) * 2.0 + b.transpose() * &b;
        let f = crate::linalg::cholesky_lower_bumped(&a, 0.0);
        let (post, _) = cholesky_downdate(&f.l, &b).unwrap();
        let expect = &a - b.transpose() * &b;
        assert!((&post * post.transpose() - expect).amax() < 1e-8 * a.amax());
    }

    #[test]
    fn increment_maps_match_paper_displays() {
        let m = increment_map(IncrementKind::TargetRelative, 2);
        assert_eq!(m.d, DMatrix::from_row_slice(2, 3, &[-1.0, 1.0, 0.0, -1.0, 0.0, 1.0]));
        let mh = increment_map(IncrementKind::Consecutive, 2);
        assert_eq!(mh.d, DMatrix::from_row_slice(2, 3, &[-1.0, 1.0, 0.0, 0.0, -1.0, 1.0]));
        assert_eq!(mh.j, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -1.0, 1.0]));
        for n in [1usize, 2, 5, 9] {
            let tr = increment_map(IncrementKind::TargetRelative, n);
            let co = increment_map(IncrementKind::Consecutive, n);
            // J D = D̂ exactly
            assert_eq!(&co.j * &tr.d, co.d);
            // rows sum to zero
            for m in [&tr, &co] {
                let e = DVector::from_element(n + 1, 1.0);
                assert_eq!((&m.d * e).amax(), 0.0);
            }
            // J^{-1} is the lower triangle of ones
            let ji = co.j_inverse();
            assert_eq!((&co.j * &ji - DMatrix::identity(n, n)).amax(), 0.0);
            for i in 0..n {
                for j in 0..=i {
                    assert_eq!(ji[(i, j)], 1.0);
                }
            }
            // rank n
            let svd = nalgebra::SVD::new(co.d.clone(), false, false);
            assert!(svd.singular_values.iter().all(|&s| s > 1e-12));
        }
    }

    #[test]
    fn delta_shift_identity_in_increment_space() {
        // D(δ e e^T - Γ_aug)D^T is independent of δ because D e = 0
        let locs = random_set(5, 77);
        let gm = build_gamma(&brownian(), &locs).unwrap();
        let t = Location::scalar(0.77);
        let gt = gamma_vector(&brownian(), gm.locs(), &t).unwrap();
        let n = gm.n();
        let mut aug = DMatrix::zeros(n + 1, n + 1);
        for i in 0..n {
            aug[(0, i + 1)] = gt[i];
            aug[(i + 1, 0)] = gt[i];
            for j in 0..n {
                aug[(i + 1, j + 1)] = gm.matrix()[(i, j)];
            }
        }
        let d = increment_map(IncrementKind::TargetRelative, n).d;
        let base = -(&d * &aug * d.transpose());
        for delta in [0.5, 3.0, 42.0] {
            let m = n + 1;
            let shifted = DMatrix::from_fn(m, m, |i, j| delta - aug[(i, j)]);
            let conj = &d * shifted * d.transpose();
            assert!((&conj - &base).amax() < 1e-10 * base.amax().max(delta));
        }
    }
}
