//! Closed-form capacity and dispersion algebra.
//!
//! Everything is in nats. The kurtosis `xi = E[Z^4]` of the unit-power
//! noise is an explicit argument throughout.

use nalgebra::{DMatrix, SMatrix};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::noise::NoiseModel;

/// Eigenvalue floor below which a symmetric matrix is rejected as not PSD.
pub const PSD_TOLERANCE: f64 = 1e-10;

/// Per-user signal-to-noise ratios `(P1, P2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerPair {
    p1: f64,
    p2: f64,
}

impl PowerPair {
    pub fn new(p1: f64, p2: f64) -> Result<Self> {
        check_power("p1", p1)?;
        check_power("p2", p2)?;
        Ok(Self { p1, p2 })
    }

    pub fn p1(&self) -> f64 {
        self.p1
    }

    pub fn p2(&self) -> f64 {
        self.p2
    }

    /// The same pair with the users swapped.
    pub fn swapped(&self) -> Self {
        Self { p1: self.p2, p2: self.p1 }
    }

    pub fn sum(&self) -> f64 {
        self.p1 + self.p2
    }
}

fn check_power(name: &'static str, p: f64) -> Result<()> {
    if p.is_finite() && p > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("power must be positive and finite, got {p}")))
    }
}

pub(crate) fn check_xi(xi: f64) -> Result<()> {
    if xi.is_finite() && xi >= 1.0 {
        Ok(())
    } else {
        Err(Error::invalid("xi", format!("fourth moment must satisfy xi >= 1, got {xi}")))
    }
}

/// `C(P) = log(1 + P) / 2`, unchecked.
#[inline]
pub(crate) fn cap(p: f64) -> f64 {
    0.5 * p.ln_1p()
}

/// AWGN capacity `C(P) = log(1 + P) / 2` in nats.
pub fn capacity(p: f64) -> Result<f64> {
    check_power("p", p)?;
    Ok(cap(p))
}

/// `[C(P1), C(P2), C(P1 + P2)]`.
pub fn capacity_vector(pp: PowerPair) -> [f64; 3] {
    [cap(pp.p1), cap(pp.p2), cap(pp.sum())]
}

/// Single-user dispersion `V(P) = ((xi-1)P^2 + 4P) / (4(1+P)^2)`.
#[inline]
pub fn v_single(p: f64, xi: f64) -> f64 {
    ((xi - 1.0) * p * p + 4.0 * p) / (4.0 * (1.0 + p).powi(2))
}

/// The scalar dispersion functions of the two-user MAC.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DispersionSet {
    /// `V(P1)`
    pub v_p1: f64,
    /// `V(P2)`
    pub v_p2: f64,
    /// `V_{1,2}(P1, P2)`
    pub v_12cross: f64,
    /// `V_{1,12}(P1, P2)`
    pub v_1_12: f64,
    /// `V_{2,12}(P1, P2)`
    pub v_2_12: f64,
    /// `V_{12}(P1, P2) = V(P1 + P2) + P1 P2 / (1 + P1 + P2)^2`
    pub v_sum: f64,
    /// `V_1(P1, P2)`, dispersion of decoding user 1 while treating user 2 as noise.
    pub v_1: f64,
    /// `V_2(P1, P2)`
    pub v_2: f64,
}

pub fn dispersions(pp: PowerPair, xi: f64) -> Result<DispersionSet> {
    check_xi(xi)?;
    Ok(dispersions_unchecked(pp, xi))
}

fn dispersions_unchecked(pp: PowerPair, xi: f64) -> DispersionSet {
    let (p1, p2) = (pp.p1, pp.p2);
    let s = p1 + p2;
    let v_i_12 = |pi: f64| ((xi - 1.0) * pi * s + 4.0 * pi) / (4.0 * (1.0 + pi) * (1.0 + s));
    let v_i = |pi: f64, po: f64| {
        (pi * pi * (xi - 1.0 + 4.0 * po) + 4.0 * pi * (1.0 + po).powi(3)) / (4.0 * (1.0 + po).powi(2) * (1.0 + s).powi(2))
    };
    DispersionSet {
        v_p1: v_single(p1, xi),
        v_p2: v_single(p2, xi),
        v_12cross: (xi - 1.0) * p1 * p2 / (4.0 * (1.0 + p1) * (1.0 + p2)),
        v_1_12: v_i_12(p1),
        v_2_12: v_i_12(p2),
        v_sum: v_single(s, xi) + p1 * p2 / (1.0 + s).powi(2),
        v_1: v_i(p1, p2),
        v_2: v_i(p2, p1),
    }
}

/// Dispersions entering the random access rates for `k` active users.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RacDispersions {
    /// `V(kP)`
    pub v_kp: f64,
    /// `V_cr(k, P) = k(k-1)P^2 / (2(1+kP)^2)`
    pub v_cr: f64,
    /// `V_rs(k, r, P)`
    pub v_rs: f64,
}

pub fn rac_dispersions(k: u32, r: u32, p: f64, xi: f64) -> Result<RacDispersions> {
    if k < 1 {
        return Err(Error::invalid("k", "at least one active user is required"));
    }
    if r < 1 || r > k {
        return Err(Error::invalid("r", format!("decoding step must satisfy 1 <= r <= k = {k}, got {r}")));
    }
    check_power("p", p)?;
    check_xi(xi)?;
    let kf = f64::from(k);
    Ok(RacDispersions { v_kp: v_single(kf * p, xi), v_cr: v_cr(k, p), v_rs: v_rs(k, r, p, xi) })
}

pub(crate) fn v_cr(k: u32, p: f64) -> f64 {
    let kf = f64::from(k);
    kf * (kf - 1.0) * p * p / (2.0 * (1.0 + kf * p).powi(2))
}

pub(crate) fn v_rs(k: u32, r: u32, p: f64, xi: f64) -> f64 {
    let d = f64::from(k - r);
    let num = p * p * (xi - 1.0) + 4.0 * p * (1.0 + d * p).powi(3) + 4.0 * d * p.powi(3) + 2.0 * d * (d - 1.0) * p.powi(4);
    let den = 4.0 * (1.0 + (d + 1.0) * p).powi(2) * (1.0 + d * p).powi(2);
    num / den
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MatrixKind {
    /// `[[V(P2), V_{2,12}], [V_{2,12}, V_12]]`
    V1,
    /// `[[V(P1), V_{1,12}], [V_{1,12}, V_12]]`
    V2,
    /// Full 3x3 matrix over `(i_1, i_2, i_12)`.
    Vfull,
}

/// A symmetric positive semi-definite covariance matrix of dimension 2 or 3.
#[derive(Debug, Clone, PartialEq)]
pub struct DispersionMatrix {
    m: DMatrix<f64>,
}

impl DispersionMatrix {
    /// Validate and wrap a row-major square matrix.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let d = rows.len();
        if !(2..=3).contains(&d) {
            return Err(Error::invalid("matrix", format!("dimension must be 2 or 3, got {d}")));
        }
        for r in rows {
            if r.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: r.len() });
            }
        }
        let m = DMatrix::from_fn(d, d, |i, j| rows[i][j]);
        Self::from_matrix(m)
    }

    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("matrix", "entries must be finite"));
        }
        let scale = m.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        for i in 0..m.nrows() {
            for j in 0..i {
                if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 * scale {
                    return Err(Error::invalid("matrix", "not symmetric"));
                }
            }
        }
        let min_eig = m.clone().symmetric_eigenvalues().min();
        if min_eig < -PSD_TOLERANCE {
            return Err(Error::NotPsd { min_eigenvalue: min_eig });
        }
        Ok(Self { m })
    }

    pub fn identity(dim: usize) -> Self {
        Self { m: DMatrix::identity(dim, dim) }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m[(i, j)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.m.clone().symmetric_eigenvalues().min()
    }

    /// The 2x2 marginal covariance of coordinates `(i, j)`.
    pub fn marginal(&self, i: usize, j: usize) -> Self {
        let idx = [i, j];
        Self { m: DMatrix::from_fn(2, 2, |a, b| self.m[(idx[a], idx[b])]) }
    }
}

pub fn dispersion_matrix(which: MatrixKind, pp: PowerPair, xi: f64) -> Result<DispersionMatrix> {
    let d = dispersions(pp, xi)?;
    let rows: Vec<Vec<f64>> = match which {
        MatrixKind::V1 => vec![vec![d.v_p2, d.v_2_12], vec![d.v_2_12, d.v_sum]],
        MatrixKind::V2 => vec![vec![d.v_p1, d.v_1_12], vec![d.v_1_12, d.v_sum]],
        MatrixKind::Vfull => vec![
            vec![d.v_p1, d.v_12cross, d.v_1_12],
            vec![d.v_12cross, d.v_p2, d.v_2_12],
            vec![d.v_1_12, d.v_2_12, d.v_sum],
        ],
    };
    let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    DispersionMatrix::from_rows(&refs)
}

/// Jacobian of the map from the averaged A-vector to the normalized
/// information densities `(i_1, i_2, i_12) / n`, evaluated at zero.
pub fn jnn_jacobian(pp: PowerPair) -> SMatrix<f64, 3, 6> {
    let (p1, p2) = (pp.p1, pp.p2);
    let s = 1.0 + p1 + p2;
    SMatrix::<f64, 3, 6>::from_row_slice(&[
        p1 / (2.0 * (1.0 + p1)), 1.0 / (1.0 + p1), 0.0, 0.0, 0.0, 0.0,
        p2 / (2.0 * (1.0 + p2)), 0.0, 0.0, 1.0 / (1.0 + p2), 0.0, 0.0,
        (p1 + p2) / (2.0 * s), 1.0 / s, 0.0, 1.0 / s, 0.0, 1.0 / s,
    ])
}

/// Diagonal of `cov(A_1) = diag[xi-1, P1, 2, P2, 2, P1 P2]`.
pub fn a_vector_variances(pp: PowerPair, xi: f64) -> [f64; 6] {
    [xi - 1.0, pp.p1, 2.0, pp.p2, 2.0, pp.p1 * pp.p2]
}

/// Max entrywise gap between `J cov(A) J^T` and the full dispersion matrix.
pub fn jacobian_identity_error(pp: PowerPair, xi: f64) -> Result<f64> {
    jacobian_identity_error_with(pp, xi, |pp, xi| dispersion_matrix(MatrixKind::Vfull, pp, xi))
}

/// Same as [`jacobian_identity_error`], against a caller-supplied matrix formula.
pub fn jacobian_identity_error_with<F>(pp: PowerPair, xi: f64, vfull: F) -> Result<f64>
where
    F: Fn(PowerPair, f64) -> Result<DispersionMatrix>,
{
    check_xi(xi)?;
    let j = jnn_jacobian(pp);
    let cov = SMatrix::<f64, 6, 6>::from_diagonal(&a_vector_variances(pp, xi).into());
    let product = j * cov * j.transpose();
    let v = vfull(pp, xi)?;
    if v.dim() != 3 {
        return Err(Error::DimensionMismatch { expected: 3, got: v.dim() });
    }
    let mut worst = 0.0f64;
    for r in 0..3 {
        for c in 0..3 {
            worst = worst.max((product[(r, c)] - v.get(r, c)).abs());
        }
    }
    Ok(worst)
}

/// Empirical second moments of the A-vector with their standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceEstimate {
    pub cov: SMatrix<f64, 6, 6>,
    pub standard_error: SMatrix<f64, 6, 6>,
    pub samples: usize,
}

impl CovarianceEstimate {
    /// Largest `|cov - expected| / se` over all entries.
    pub fn max_z_score(&self, expected: &SMatrix<f64, 6, 6>) -> f64 {
        let mut worst = 0.0f64;
        for r in 0..6 {
            for c in 0..6 {
                let se = self.standard_error[(r, c)].max(1e-300);
                worst = worst.max((self.cov[(r, c)] - expected[(r, c)]).abs() / se);
            }
        }
        worst
    }
}

/// Sample the per-symbol A-vector under Gaussian surrogates `X~_j` and
/// the given noise, and estimate its covariance.
pub fn a_vector_covariance(pp: PowerPair, noise: &NoiseModel, n_mc: usize, seed: u64) -> Result<CovarianceEstimate> {
    if n_mc < 2 {
        return Err(Error::invalid("n_mc", "need at least two samples"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (sp1, sp2, sp12) = (pp.p1.sqrt(), pp.p2.sqrt(), (pp.p1 * pp.p2).sqrt());
    let mut s1 = [[0.0f64; 6]; 6];
    let mut s2 = [[0.0f64; 6]; 6];
    for _ in 0..n_mc {
        let z = noise.sample(&mut rng);
        let x1: f64 = StandardNormal.sample(&mut rng);
        let x2: f64 = StandardNormal.sample(&mut rng);
        let a = [1.0 - z * z, sp1 * x1 * z, x1 * x1 - 1.0, sp2 * x2 * z, x2 * x2 - 1.0, sp12 * x1 * x2];
        for r in 0..6 {
            for c in r..6 {
                let prod = a[r] * a[c];
                s1[r][c] += prod;
                s2[r][c] += prod * prod;
            }
        }
    }
    let n = n_mc as f64;
    let mut cov = SMatrix::<f64, 6, 6>::zeros();
    let mut se = SMatrix::<f64, 6, 6>::zeros();
    for r in 0..6 {
        for c in r..6 {
            let mean = s1[r][c] / n;
            let var = (s2[r][c] / n - mean * mean).max(0.0) * n / (n - 1.0);
            cov[(r, c)] = mean;
            cov[(c, r)] = mean;
            se[(r, c)] = (var / n).sqrt();
            se[(c, r)] = se[(r, c)];
        }
    }
    Ok(CovarianceEstimate { cov, standard_error: se, samples: n_mc })
}

/// Outcome of the exact and empirical checks of the dispersion identity.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianReport {
    pub max_abs_error: f64,
    pub empirical: CovarianceEstimate,
    /// Max z-score of the empirical covariance against `diag[xi-1, P1, 2, P2, 2, P1 P2]`.
    pub empirical_max_z: f64,
}

pub fn verify_jacobian_identity(pp: PowerPair, noise: &NoiseModel, n_mc: usize, seed: u64) -> Result<JacobianReport> {
    let max_abs_error = jacobian_identity_error(pp, noise.xi())?;
    let empirical = a_vector_covariance(pp, noise, n_mc, seed)?;
    let expected = SMatrix::<f64, 6, 6>::from_diagonal(&a_vector_variances(pp, noise.xi()).into());
    let empirical_max_z = empirical.max_z_score(&expected);
    Ok(JacobianReport { max_abs_error, empirical, empirical_max_z })
}
