//! Second-order achievable regions of the two-user MAC under JNN and SIC decoding.
//!
//! A region is a set of back-off pairs `(L1, L2)` such that
//! `log M_j >= n R_j* - sqrt(n) L_j` is achievable at error `eps`. Regions are
//! upward closed, so each one is summarized by `min_l2(l1)`.

use serde::{Deserialize, Serialize};

use crate::analytics::{cap, check_xi, dispersion_matrix, dispersions, DispersionMatrix, MatrixKind, PowerPair};
use crate::error::{Error, Result};
use crate::mvnormal::{self, boundary_a2, mvn_lower_prob, q_inv, q_inv_unchecked};
use crate::Decoder;

/// Tolerance on `L2` used when locating curved boundaries.
const CURVE_TOL: f64 = 1e-11;
/// Integration accuracy used when locating curved boundaries.
const CURVE_ACCURACY: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Case {
    I,
    Ii,
    Iii,
    Iv,
    V,
}

impl Case {
    pub const ALL: [Case; 5] = [Case::I, Case::Ii, Case::Iii, Case::Iv, Case::V];

    /// Cases (i), (iii) and (v) are time-sharing points parametrized by `alpha`.
    pub fn needs_alpha(self) -> bool {
        matches!(self, Case::I | Case::Iii | Case::V)
    }

    pub fn label(self) -> &'static str {
        match self {
            Case::I => "i",
            Case::Ii => "ii",
            Case::Iii => "iii",
            Case::Iv => "iv",
            Case::V => "v",
        }
    }
}

impl std::fmt::Display for Case {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

fn check_eps(eps: f64) -> Result<()> {
    q_inv(eps).map(|_| ())
}

fn check_alpha(case: Case, alpha: Option<f64>) -> Result<Option<f64>> {
    if !case.needs_alpha() {
        return Ok(None);
    }
    match alpha {
        None => Err(Error::invalid("alpha", format!("case ({case}) requires a time-sharing weight"))),
        Some(a) if a > 0.0 && a < 1.0 => Ok(Some(a)),
        Some(a) => Err(Error::invalid("alpha", format!("must lie in (0, 1), got {a}"))),
    }
}

/// A point on the boundary of the first-order region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundaryRatePair {
    pub case: Case,
    pub alpha: Option<f64>,
    pub r1_star: f64,
    pub r2_star: f64,
}

pub fn boundary_rate_pair(case: Case, alpha: Option<f64>, pp: PowerPair) -> Result<BoundaryRatePair> {
    let alpha = check_alpha(case, alpha)?;
    let (p1, p2) = (pp.p1(), pp.p2());
    let c1 = cap(p1);
    let c2 = cap(p2);
    let c1_given = cap(p1 / (1.0 + p2));
    let c2_given = cap(p2 / (1.0 + p1));
    let a = alpha.unwrap_or(1.0);
    let (r1_star, r2_star) = match case {
        Case::I => (a * c1_given, c2),
        Case::Ii => (c1_given, c2),
        Case::Iii => (a * c1 + (1.0 - a) * c1_given, a * c2_given + (1.0 - a) * c2),
        Case::Iv => (c1, c2_given),
        Case::V => (c1, a * c2_given),
    };
    Ok(BoundaryRatePair { case, alpha, r1_star, r2_star })
}

/// One SIC rectangle corner for the split `(eps1, eps - eps1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Corner {
    pub eps1: f64,
    pub l1: f64,
    pub l2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum RegionShape {
    /// `L1 >= min_l1`, `L2` free.
    HalfspaceL1 { min_l1: f64 },
    /// `L2 >= min_l2`, `L1` free.
    HalfspaceL2 { min_l2: f64 },
    /// `L1 + L2 >= min_sum`.
    HalfspaceSum { min_sum: f64 },
    /// `Pr{K1 <= u, K2 <= L1 + L2} >= 1 - eps` with `K ~ N(0, matrix)`, where
    /// `u = L2` when `first_is_l2` and `u = L1` otherwise.
    Curved { matrix: [[f64; 2]; 2], first_is_l2: bool, polyline: Vec<(f64, f64)> },
    /// Union of quadrants `[l1, inf) x [l2, inf)`; corners sorted by `l1`.
    Staircase { corners: Vec<Corner> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SecondOrderRegion {
    pub decoder: Decoder,
    pub case: Case,
    pub alpha: Option<f64>,
    pub eps: f64,
    pub rates: BoundaryRatePair,
    pub shape: RegionShape,
}

impl SecondOrderRegion {
    /// Smallest `L2` such that `(l1, L2)` is in the region.
    ///
    /// `+inf` marks an `l1` for which no `L2` works, `-inf` an unconstrained `L2`.
    pub fn min_l2(&self, l1: f64) -> f64 {
        match &self.shape {
            RegionShape::HalfspaceL1 { min_l1 } => {
                if l1 >= *min_l1 {
                    f64::NEG_INFINITY
                } else {
                    f64::INFINITY
                }
            }
            RegionShape::HalfspaceL2 { min_l2 } => *min_l2,
            RegionShape::HalfspaceSum { min_sum } => min_sum - l1,
            RegionShape::Curved { matrix, first_is_l2, .. } => curved_min_l2(matrix, *first_is_l2, self.eps, l1),
            RegionShape::Staircase { corners } => corners
                .iter()
                .filter(|c| c.l1 <= l1)
                .map(|c| c.l2)
                .fold(f64::INFINITY, f64::min),
        }
    }

    pub fn contains(&self, l1: f64, l2: f64) -> bool {
        l2 >= self.min_l2(l1)
    }

    /// `(L1, min L2)` over the grid, keeping unattainable points as `+inf`.
    pub fn sample(&self, l1_grid: &[f64]) -> Vec<(f64, f64)> {
        l1_grid.iter().map(|&l1| (l1, self.min_l2(l1))).collect()
    }
}

fn matrix_of(m: &[[f64; 2]; 2]) -> DispersionMatrix {
    DispersionMatrix::from_rows(&[&m[0], &m[1]]).expect("validated at construction")
}

fn curved_min_l2(m: &[[f64; 2]; 2], first_is_l2: bool, eps: f64, l1: f64) -> f64 {
    let v = matrix_of(m);
    if first_is_l2 {
        // Pr{K1 <= L2, K2 <= l1 + L2} increases from 0 to 1 in L2
        let target = 1.0 - eps;
        let prob = |l2: f64| mvn_lower_prob(&[l2, l1 + l2], &v, CURVE_ACCURACY).expect("valid 2x2");
        let scale = m[0][0].sqrt().max(m[1][1].sqrt());
        let mut hi = scale * q_inv_unchecked(eps).abs().max(1.0);
        while prob(hi) < target {
            hi = 2.0 * hi + scale;
        }
        let mut lo = hi - scale;
        while prob(lo) >= target {
            lo -= 2.0 * (hi - lo);
        }
        while hi - lo > CURVE_TOL * scale {
            let mid = 0.5 * (lo + hi);
            if prob(mid) >= target {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    } else {
        match boundary_a2(&v, eps, l1, CURVE_TOL, CURVE_ACCURACY).expect("valid 2x2") {
            Some(a2) => a2 - l1,
            None => f64::INFINITY,
        }
    }
}

/// Tuning for the polyline stored with curved JNN regions.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveOptions {
    /// Number of polyline points.
    pub points: usize,
    /// Extent of the first threshold beyond its asymptote, in units of its standard deviation.
    pub span_sd: f64,
    pub boundary_tol: f64,
    pub accuracy: f64,
}

impl Default for CurveOptions {
    fn default() -> Self {
        Self { points: 50, span_sd: 5.0, boundary_tol: mvnormal::DEFAULT_BOUNDARY_TOL, accuracy: 1e-9 }
    }
}

pub fn mac_jnn_region(case: Case, alpha: Option<f64>, pp: PowerPair, xi: f64, eps: f64) -> Result<SecondOrderRegion> {
    mac_jnn_region_with(case, alpha, pp, xi, eps, &CurveOptions::default())
}

pub fn mac_jnn_region_with(
    case: Case,
    alpha: Option<f64>,
    pp: PowerPair,
    xi: f64,
    eps: f64,
    opts: &CurveOptions,
) -> Result<SecondOrderRegion> {
    check_eps(eps)?;
    check_xi(xi)?;
    let rates = boundary_rate_pair(case, alpha, pp)?;
    let d = dispersions(pp, xi)?;
    let qe = q_inv_unchecked(eps);
    let shape = match case {
        Case::I => RegionShape::HalfspaceL2 { min_l2: d.v_p2.sqrt() * qe },
        Case::V => RegionShape::HalfspaceL1 { min_l1: d.v_p1.sqrt() * qe },
        Case::Iii => RegionShape::HalfspaceSum { min_sum: d.v_sum.sqrt() * qe },
        Case::Ii | Case::Iv => {
            let kind = if case == Case::Ii { MatrixKind::V1 } else { MatrixKind::V2 };
            let v = dispersion_matrix(kind, pp, xi)?;
            let matrix = [[v.get(0, 0), v.get(0, 1)], [v.get(1, 0), v.get(1, 1)]];
            let s = matrix[0][0].sqrt();
            let start = s * qe;
            let n = opts.points.max(2);
            let grid: Vec<f64> =
                (0..n).map(|i| start + opts.span_sd * s * (i as f64 + 1.0) / n as f64).collect();
            let b = mvnormal::qinv_boundary_with(&v, eps, &grid, opts.boundary_tol, opts.accuracy)?;
            let mut polyline: Vec<(f64, f64)> = b
                .points
                .iter()
                .filter_map(|p| p.a2.map(|a2| if case == Case::Ii { (a2 - p.a1, p.a1) } else { (p.a1, a2 - p.a1) }))
                .collect();
            polyline.sort_by(|x, y| x.0.total_cmp(&y.0));
            RegionShape::Curved { matrix, first_is_l2: case == Case::Ii, polyline }
        }
    };
    Ok(SecondOrderRegion { decoder: Decoder::Jnn, case, alpha: rates.alpha, eps, rates, shape })
}

/// Default split grid: 101 values of `eps1` mixing log spacing near both ends
/// of `(0, eps)` with linear spacing in the middle.
pub fn default_split_grid(eps: f64) -> Vec<f64> {
    let edge = 1e-6f64.min(eps / 1000.0);
    let knee = eps / 10.0;
    let mut g = Vec::with_capacity(101);
    let logs: Vec<f64> = (0..34).map(|i| edge * (knee / edge).powf(i as f64 / 33.0)).collect();
    g.extend(logs.iter().copied());
    g.extend(logs.iter().map(|x| eps - x));
    for i in 1..34 {
        g.push(knee + (eps - 2.0 * knee) * i as f64 / 34.0);
    }
    g.sort_by(f64::total_cmp);
    g.dedup();
    g
}

pub fn mac_sic_region(
    case: Case,
    alpha: Option<f64>,
    pp: PowerPair,
    xi: f64,
    eps: f64,
    split_grid: &[f64],
) -> Result<SecondOrderRegion> {
    check_eps(eps)?;
    check_xi(xi)?;
    if split_grid.is_empty() {
        return Err(Error::invalid("split_grid", "at least one split is required"));
    }
    if let Some(bad) = split_grid.iter().find(|&&e1| !(e1 > 0.0 && e1 < eps)) {
        return Err(Error::invalid("split_grid", format!("eps1 must lie in (0, {eps}), got {bad}")));
    }
    let rates = boundary_rate_pair(case, alpha, pp)?;
    let (s1, s2) = sic_scales(case, rates.alpha, pp, xi)?;
    let mut corners: Vec<Corner> = split_grid
        .iter()
        .map(|&eps1| Corner { eps1, l1: s1 * q_inv_unchecked(eps1), l2: s2 * q_inv_unchecked(eps - eps1) })
        .collect();
    corners.sort_by(|a, b| a.l1.total_cmp(&b.l1));
    Ok(SecondOrderRegion {
        decoder: Decoder::Sic,
        case,
        alpha: rates.alpha,
        eps,
        rates,
        shape: RegionShape::Staircase { corners },
    })
}

/// Standard deviations multiplying `Q^{-1}(eps1)` and `Q^{-1}(eps2)` for each SIC case.
pub fn sic_scales(case: Case, alpha: Option<f64>, pp: PowerPair, xi: f64) -> Result<(f64, f64)> {
    let alpha = check_alpha(case, alpha)?;
    let d = dispersions(pp, xi)?;
    let (sv1, sv2, sp1, sp2) = (d.v_1.sqrt(), d.v_2.sqrt(), d.v_p1.sqrt(), d.v_p2.sqrt());
    let a = alpha.unwrap_or(1.0);
    Ok(match case {
        Case::I => (a * sv1, sp2),
        Case::Ii => (sv1, sp2),
        Case::Iii => (a * sv1 + (1.0 - a) * sp1, a * sp2 + (1.0 - a) * sv2),
        Case::Iv => (sp1, sv2),
        Case::V => (sp1, a * sv2),
    })
}

/// Joint constraint on `(log M1, log M2, log M1 M2)` at blocklength `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnifiedRegion {
    pub n: u64,
    pub eps: f64,
    pub offset: f64,
    pub capacities: [f64; 3],
    v: DispersionMatrix,
    accuracy: f64,
}

pub fn jnn_unified_point(n: u64, pp: PowerPair, xi: f64, eps: f64, offset: f64) -> Result<UnifiedRegion> {
    if n < 1 {
        return Err(Error::invalid("n", "blocklength must be at least 1"));
    }
    check_eps(eps)?;
    if !offset.is_finite() {
        return Err(Error::invalid("offset", "must be finite"));
    }
    let v = dispersion_matrix(MatrixKind::Vfull, pp, xi)?;
    Ok(UnifiedRegion {
        n,
        eps,
        offset,
        capacities: crate::analytics::capacity_vector(pp),
        v,
        accuracy: 1e-9,
    })
}

impl UnifiedRegion {
    pub fn matrix(&self) -> &DispersionMatrix {
        &self.v
    }

    /// Normalized slack `(n C - [lm1, lm2, lm1 + lm2] + offset) / sqrt(n)`.
    pub fn thresholds(&self, log_m1: f64, log_m2: f64) -> [f64; 3] {
        let n = self.n as f64;
        let rn = n.sqrt();
        let c = self.capacities;
        [
            (n * c[0] - log_m1 + self.offset) / rn,
            (n * c[1] - log_m2 + self.offset) / rn,
            (n * c[2] - log_m1 - log_m2 + self.offset) / rn,
        ]
    }

    /// `Pr{S <= thresholds}` for `S ~ N(0, V)`.
    pub fn coverage(&self, log_m1: f64, log_m2: f64) -> f64 {
        mvn_lower_prob(&self.thresholds(log_m1, log_m2), &self.v, self.accuracy).expect("3x3 PSD")
    }

    pub fn contains(&self, log_m1: f64, log_m2: f64) -> bool {
        self.coverage(log_m1, log_m2) >= 1.0 - self.eps
    }

    /// Largest `s` such that `(s d1, s d2)` is in the region, for a direction with
    /// nonnegative components not both zero.
    pub fn boundary_along(&self, d1: f64, d2: f64) -> Result<(f64, f64)> {
        if !(d1 >= 0.0 && d2 >= 0.0 && d1 + d2 > 0.0) {
            return Err(Error::invalid("direction", "components must be nonnegative and not both zero"));
        }
        if !self.contains(0.0, 0.0) {
            return Ok((0.0, 0.0));
        }
        let n = self.n as f64;
        let mut lo = 0.0;
        let mut hi = (n * self.capacities[2] + self.offset.abs() + 10.0 * n.sqrt()) / (d1 + d2).min(d1.max(d2));
        while self.contains(hi * d1, hi * d2) {
            lo = hi;
            hi *= 2.0;
        }
        for _ in 0..200 {
            if hi - lo <= 1e-10 * hi.max(1.0) {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if self.contains(mid * d1, mid * d2) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok((lo * d1, lo * d2))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComparePoint {
    pub l1: f64,
    pub l2_jnn: f64,
    pub l2_sic: f64,
    /// `l2_sic - l2_jnn`; nonnegative where the SIC region is inside the JNN region.
    pub gap: f64,
}

impl ComparePoint {
    pub fn both_finite(&self) -> bool {
        self.l2_jnn.is_finite() && self.l2_sic.is_finite()
    }
}

pub fn compare_regions(jnn: &SecondOrderRegion, sic: &SecondOrderRegion, l1_grid: &[f64]) -> Result<Vec<ComparePoint>> {
    if jnn.decoder != Decoder::Jnn || sic.decoder != Decoder::Sic {
        return Err(Error::invalid("regions", "expected one JNN and one SIC region"));
    }
    if jnn.case != sic.case || jnn.eps != sic.eps || jnn.alpha != sic.alpha {
        return Err(Error::invalid("regions", "case, eps and alpha must agree"));
    }
    Ok(l1_grid
        .iter()
        .map(|&l1| {
            let l2_jnn = jnn.min_l2(l1);
            let l2_sic = sic.min_l2(l1);
            let gap = if l2_sic == l2_jnn { 0.0 } else { l2_sic - l2_jnn };
            ComparePoint { l1, l2_jnn, l2_sic, gap }
        })
        .collect())
}

/// Evenly spaced grid of `points` values over `[lo, hi]`.
pub fn linear_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect(),
    }
}
