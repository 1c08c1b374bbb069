//! Scalar and low-dimensional Gaussian tail probabilities.
//!
//! Region tests use the lower orientation `Pr{S <= a} >= 1 - eps`. The upper
//! orientation `Pr{S >= a}` is the same quantity at `-a`, see [`mvn_upper_prob`].

use serde::Serialize;
use statrs::function::erf::{erfc, erfc_inv};

use crate::analytics::DispersionMatrix;
use crate::error::{Error, Result};

pub const DEFAULT_ACCURACY: f64 = 1e-7;
pub const DEFAULT_BOUNDARY_TOL: f64 = 1e-6;

/// Whitened coordinates are truncated to `[-WHITE_RANGE, WHITE_RANGE]`.
const WHITE_RANGE: f64 = 10.0;

/// Standard normal upper tail `Q(x)`.
pub fn q(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// Standard normal CDF.
pub fn phi(x: f64) -> f64 {
    q(-x)
}

fn density(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Inverse of [`q`] on `(0, 1)`.
pub fn q_inv(eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::invalid("eps", format!("must lie in (0, 1), got {eps}")));
    }
    Ok(q_inv_unchecked(eps))
}

pub(crate) fn q_inv_unchecked(eps: f64) -> f64 {
    let mut x = std::f64::consts::SQRT_2 * erfc_inv(2.0 * eps);
    for _ in 0..2 {
        let d = density(x);
        if d <= 0.0 || !x.is_finite() {
            break;
        }
        // Halley step on q(x) - eps = 0
        let f = q(x) - eps;
        let u = f / -d;
        x -= u / (1.0 + 0.5 * x * u);
    }
    x
}

/// Constraint `coef * w_level <= rhs(w_<level)` on one whitened coordinate.
#[derive(Debug, Clone)]
struct Constraint {
    level: usize,
    coef: f64,
    row: usize,
}

struct Whitened<'a> {
    l: [[f64; 3]; 3],
    a: &'a [f64],
    constraints: Vec<Constraint>,
    depth: usize,
}

impl Whitened<'_> {
    /// Integration limits of level `lvl` given the outer coordinates.
    fn limits(&self, lvl: usize, w: &[f64; 3]) -> (f64, f64) {
        let mut lo = f64::NEG_INFINITY;
        let mut hi = f64::INFINITY;
        for c in self.constraints.iter().filter(|c| c.level == lvl) {
            let mut rhs = self.a[c.row];
            for (j, wj) in w.iter().enumerate().take(lvl) {
                rhs -= self.l[c.row][j] * wj;
            }
            let b = rhs / c.coef;
            if c.coef > 0.0 {
                hi = hi.min(b);
            } else {
                lo = lo.max(b);
            }
        }
        (lo, hi)
    }

    fn integrate(&self, lvl: usize, w: &mut [f64; 3], tol: f64) -> f64 {
        let (lo, hi) = self.limits(lvl, w);
        if lo >= hi {
            return 0.0;
        }
        if lvl + 1 == self.depth {
            return (phi(hi) - phi(lo)).max(0.0);
        }
        let lo = lo.max(-WHITE_RANGE);
        let hi = hi.min(WHITE_RANGE);
        if lo >= hi {
            return 0.0;
        }
        let mut inner = *w;
        let f = |x: f64| {
            inner[lvl] = x;
            density(x) * self.integrate(lvl + 1, &mut inner, tol)
        };
        adaptive_gk15(f, lo, hi, tol)
    }
}

/// Lower-triangular factor of a PSD matrix with zero columns where the pivot vanishes.
fn semidefinite_cholesky(v: &DispersionMatrix) -> [[f64; 3]; 3] {
    let d = v.dim();
    let scale = (0..d).fold(0.0f64, |m, i| m.max(v.get(i, i)));
    let floor = 1e-12 * scale.max(f64::MIN_POSITIVE);
    let mut l = [[0.0; 3]; 3];
    for j in 0..d {
        let s = v.get(j, j) - (0..j).map(|k| l[j][k] * l[j][k]).sum::<f64>();
        if s <= floor {
            continue;
        }
        let ljj = s.sqrt();
        l[j][j] = ljj;
        for i in j + 1..d {
            l[i][j] = (v.get(i, j) - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>()) / ljj;
        }
    }
    l
}

/// `Pr{S <= a}` componentwise for `S ~ N(0, V)` with `dim(V)` in {2, 3}.
///
/// Components of `a` may be infinite.
pub fn mvn_lower_prob(a: &[f64], v: &DispersionMatrix, accuracy: f64) -> Result<f64> {
    let d = v.dim();
    if a.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: a.len() });
    }
    if accuracy.is_nan() || accuracy <= 0.0 {
        return Err(Error::invalid("accuracy", "must be positive"));
    }
    if a.iter().any(|x| x.is_nan()) {
        return Err(Error::invalid("a", "threshold is NaN"));
    }
    if a.contains(&f64::NEG_INFINITY) {
        return Ok(0.0);
    }
    let l = semidefinite_cholesky(v);
    let mut constraints = Vec::new();
    for (row, &ai) in a.iter().enumerate() {
        if ai == f64::INFINITY {
            continue;
        }
        let row_scale = v.get(row, row).sqrt();
        let last = (0..d).rev().find(|&j| l[row][j].abs() > 1e-9 * row_scale.max(f64::MIN_POSITIVE));
        match last {
            Some(level) => constraints.push(Constraint { level, coef: l[row][level], row }),
            None if ai < 0.0 => return Ok(0.0),
            None => {}
        }
    }
    let Some(depth) = constraints.iter().map(|c| c.level + 1).max() else {
        return Ok(1.0);
    };
    let wh = Whitened { l, a, constraints, depth };
    let mut w = [0.0; 3];
    let tol = accuracy / depth as f64;
    Ok(wh.integrate(0, &mut w, tol).clamp(0.0, 1.0))
}

/// `Pr{S >= a}` componentwise, equal to `mvn_lower_prob(-a, V)` by symmetry of `S`.
pub fn mvn_upper_prob(a: &[f64], v: &DispersionMatrix, accuracy: f64) -> Result<f64> {
    let neg: Vec<f64> = a.iter().map(|x| -x).collect();
    mvn_lower_prob(&neg, v, accuracy)
}

const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const GK_WK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const GK_WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = GK_WK[7] * fc;
    let mut gauss = GK_WG[3] * fc;
    for i in 0..7 {
        let x = h * GK_NODES[i];
        let s = f(c - x) + f(c + x);
        kronrod += GK_WK[i] * s;
        if i % 2 == 1 {
            gauss += GK_WG[i / 2] * s;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

/// Globally adaptive Gauss-Kronrod 7-15 to absolute tolerance `tol`.
pub(crate) fn adaptive_gk15<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, tol: f64) -> f64 {
    let (v, e) = gk15(&mut f, a, b);
    let mut pieces = vec![(a, b, v, e)];
    for _ in 0..2000 {
        let total_err: f64 = pieces.iter().map(|p| p.3).sum();
        if total_err <= tol {
            break;
        }
        let (idx, _) = pieces
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .expect("nonempty");
        let (lo, hi, _, _) = pieces.swap_remove(idx);
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let (v1, e1) = gk15(&mut f, lo, mid);
        let (v2, e2) = gk15(&mut f, mid, hi);
        pieces.push((lo, mid, v1, e1));
        pieces.push((mid, hi, v2, e2));
    }
    pieces.iter().map(|p| p.2).sum()
}

/// One point of a Q_inv boundary; `a2` is `None` where no threshold reaches `1 - eps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundaryPoint {
    pub a1: f64,
    pub a2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionBoundary2D {
    pub eps: f64,
    pub boundary_tol: f64,
    pub points: Vec<BoundaryPoint>,
}

impl RegionBoundary2D {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("a1,a2\n");
        for p in &self.points {
            match p.a2 {
                Some(a2) => out.push_str(&format!("{},{}\n", p.a1, a2)),
                None => out.push_str(&format!("{},inf\n", p.a1)),
            }
        }
        out
    }
}

fn check_boundary_matrix(v: &DispersionMatrix, eps: f64) -> Result<()> {
    if v.dim() != 2 {
        return Err(Error::DimensionMismatch { expected: 2, got: v.dim() });
    }
    if !(v.get(0, 0) > 0.0 && v.get(1, 1) > 0.0) {
        return Err(Error::invalid("V", "diagonal must be strictly positive"));
    }
    q_inv(eps).map(|_| ())
}

/// Smallest `a2` with `Pr{S1 <= a1, S2 <= a2} >= 1 - eps`, by bisection.
///
/// Returns `None` when `Pr{S1 <= a1} < 1 - eps`. The bracket width on exit is
/// at most `tol * sqrt(V22)`.
pub fn boundary_a2(v: &DispersionMatrix, eps: f64, a1: f64, tol: f64, accuracy: f64) -> Result<Option<f64>> {
    check_boundary_matrix(v, eps)?;
    let target = 1.0 - eps;
    if phi(a1 / v.get(0, 0).sqrt()) < target {
        return Ok(None);
    }
    let s2 = v.get(1, 1).sqrt();
    let prob = |a2: f64| mvn_lower_prob(&[a1, a2], v, accuracy);
    let mut lo = -10.0 * s2;
    let mut hi = 10.0 * s2;
    let mut grow = 0;
    while prob(hi)? < target {
        lo = hi;
        hi *= 2.0;
        grow += 1;
        if grow > 8 {
            return Ok(None);
        }
    }
    while hi - lo > tol * s2 {
        let mid = 0.5 * (lo + hi);
        if prob(mid)? >= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Some(0.5 * (lo + hi)))
}

/// Trace `{a : Pr{S <= a} = 1 - eps}` over the supplied first coordinates.
pub fn qinv_boundary(v: &DispersionMatrix, eps: f64, l1_grid: &[f64]) -> Result<RegionBoundary2D> {
    qinv_boundary_with(v, eps, l1_grid, DEFAULT_BOUNDARY_TOL, DEFAULT_ACCURACY.min(DEFAULT_BOUNDARY_TOL / 10.0))
}

pub fn qinv_boundary_with(
    v: &DispersionMatrix,
    eps: f64,
    l1_grid: &[f64],
    boundary_tol: f64,
    accuracy: f64,
) -> Result<RegionBoundary2D> {
    check_boundary_matrix(v, eps)?;
    let mut points = Vec::with_capacity(l1_grid.len());
    for &a1 in l1_grid {
        let a2 = boundary_a2(v, eps, a1, boundary_tol, accuracy)?;
        points.push(BoundaryPoint { a1, a2 });
    }
    Ok(RegionBoundary2D { eps, boundary_tol, points })
}
