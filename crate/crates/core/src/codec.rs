//! Spherical codebooks, nearest-neighbor decoders and mismatched information densities.
//!
//! Message indices are zero-based. All argmin searches break ties toward the
//! lowest index, lexicographically for tuples.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::analytics::{cap, PowerPair};
use crate::error::{Error, Result};

/// Default cap on the number of candidate tuples an exhaustive decoder may score.
pub const DEFAULT_ENUMERATION_BUDGET: u64 = 1 << 20;

/// Relative tolerance on codeword squared norms.
const NORM_RTOL: f64 = 1e-9;

fn check_power(p: f64) -> Result<()> {
    if p.is_finite() && p > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid("p", format!("power must be positive and finite, got {p}")))
    }
}

#[inline]
pub(crate) fn sq_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Overwrite `out` with a point drawn uniformly from the sphere of radius `sqrt(len * p)`.
pub(crate) fn fill_sphere<R: Rng + ?Sized>(out: &mut [f64], p: f64, rng: &mut R) {
    let radius = (out.len() as f64 * p).sqrt();
    loop {
        for v in out.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let norm = sq_norm(out).sqrt();
        if norm > 0.0 && norm.is_finite() {
            let s = radius / norm;
            out.iter_mut().for_each(|v| *v *= s);
            return;
        }
    }
}

/// `sqrt(n p) X / |X|` for standard normal `X` of length `n`.
pub fn sample_sphere<R: Rng + ?Sized>(n: usize, p: f64, rng: &mut R) -> Result<Vec<f64>> {
    if n < 1 {
        return Err(Error::invalid("n", "blocklength must be at least 1"));
    }
    check_power(p)?;
    let mut x = vec![0.0; n];
    fill_sphere(&mut x, p, rng);
    Ok(x)
}

/// `m` codewords of length `n`, each with squared norm `n p`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    m: usize,
    n: usize,
    p: f64,
    data: Vec<f64>,
}

impl Codebook {
    pub fn generate<R: Rng + ?Sized>(m: usize, n: usize, p: f64, rng: &mut R) -> Result<Self> {
        if m < 1 {
            return Err(Error::invalid("m", "codebook needs at least one codeword"));
        }
        if n < 1 {
            return Err(Error::invalid("n", "blocklength must be at least 1"));
        }
        check_power(p)?;
        let mut data = vec![0.0; m * n];
        for row in data.chunks_exact_mut(n) {
            fill_sphere(row, p, rng);
        }
        Ok(Self { m, n, p, data })
    }

    /// Wrap existing row-major data, checking every row's norm.
    pub fn from_rows(m: usize, n: usize, p: f64, data: Vec<f64>) -> Result<Self> {
        if m < 1 || n < 1 {
            return Err(Error::invalid("m", "codebook dimensions must be positive"));
        }
        check_power(p)?;
        if data.len() != m * n {
            return Err(Error::DimensionMismatch { expected: m * n, got: data.len() });
        }
        let target = n as f64 * p;
        for (i, row) in data.chunks_exact(n).enumerate() {
            let s = sq_norm(row);
            if (s - target).abs() > NORM_RTOL * target {
                return Err(Error::invalid("rows", format!("row {i} has squared norm {s}, expected {target}")));
            }
        }
        Ok(Self { m, n, p, data })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.n)
    }

    /// Flat little-endian dump: `m: u64, n: u64, p: f64`, then the rows.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&(self.m as u64).to_le_bytes())?;
        w.write_all(&(self.n as u64).to_le_bytes())?;
        w.write_all(&self.p.to_le_bytes())?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        let m = u64::from_le_bytes(b);
        r.read_exact(&mut b)?;
        let n = u64::from_le_bytes(b);
        r.read_exact(&mut b)?;
        let p = f64::from_le_bytes(b);
        let len = m.checked_mul(n).filter(|&l| l <= (1 << 34)).ok_or_else(|| Error::Io("codebook header too large".into()))?;
        let mut data = Vec::with_capacity(len as usize);
        for _ in 0..len {
            r.read_exact(&mut b)?;
            data.push(f64::from_le_bytes(b));
        }
        Self::from_rows(m as usize, n as usize, p, data)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

/// Shared RAC codebook: each codeword is a concatenation of independent
/// spherical sub-codewords, one per stage.
#[derive(Debug, Clone, PartialEq)]
pub struct RacCodebook {
    m: usize,
    segments: Vec<usize>,
    ends: Vec<usize>,
    p: f64,
    data: Vec<f64>,
}

/// Segment lengths `(n1, n2 - n1, ...)` from cumulative stage ends `(n1, n2, ...)`.
pub fn segments_from_ends(ends: &[usize]) -> Result<Vec<usize>> {
    let mut prev = 0;
    let mut out = Vec::with_capacity(ends.len());
    for &e in ends {
        if e <= prev {
            return Err(Error::invalid("layout", "stage ends must be strictly increasing and positive"));
        }
        out.push(e - prev);
        prev = e;
    }
    Ok(out)
}

pub fn build_rac_codebook<R: Rng + ?Sized>(m: usize, layout: &[usize], p: f64, rng: &mut R) -> Result<RacCodebook> {
    if m < 1 {
        return Err(Error::invalid("m", "codebook needs at least one codeword"));
    }
    if layout.is_empty() || layout.contains(&0) {
        return Err(Error::invalid("layout", "every stage needs a positive length"));
    }
    check_power(p)?;
    let ends: Vec<usize> = layout
        .iter()
        .scan(0, |acc, &l| {
            *acc += l;
            Some(*acc)
        })
        .collect();
    let total = *ends.last().expect("nonempty layout");
    let mut data = vec![0.0; m * total];
    for row in data.chunks_exact_mut(total) {
        let mut start = 0;
        for &len in layout {
            fill_sphere(&mut row[start..start + len], p, rng);
            start += len;
        }
    }
    Ok(RacCodebook { m, segments: layout.to_vec(), ends, p, data })
}

impl RacCodebook {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    /// Segment lengths per stage.
    pub fn layout(&self) -> &[usize] {
        &self.segments
    }

    /// Cumulative blocklengths `n_1 < n_2 < ... < n_K`.
    pub fn stage_ends(&self) -> &[usize] {
        &self.ends
    }

    pub fn total_len(&self) -> usize {
        *self.ends.last().expect("nonempty layout")
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.total_len();
        &self.data[i * n..(i + 1) * n]
    }

    /// First `len` symbols of codeword `i`.
    pub fn prefix(&self, i: usize, len: usize) -> &[f64] {
        &self.row(i)[..len]
    }
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

/// Index of the nearest candidate to `target`, lowest index on ties.
fn nearest<'a>(target: &[f64], candidates: impl Iterator<Item = &'a [f64]>) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (i, c) in candidates.enumerate() {
        let d = sq_dist(target, c);
        if d < best.0 {
            best = (d, i);
        }
    }
    best.1
}

/// Exhaustive joint nearest-neighbor decoding of both messages.
pub fn jnn_decode_mac(y: &[f64], cb1: &Codebook, cb2: &Codebook) -> Result<(usize, usize)> {
    check_len(cb1.n, y.len())?;
    check_len(cb2.n, y.len())?;
    let mut best = (f64::INFINITY, 0, 0);
    let mut resid = vec![0.0; y.len()];
    for (i, x1) in cb1.rows().enumerate() {
        for ((r, yv), xv) in resid.iter_mut().zip(y).zip(x1) {
            *r = yv - xv;
        }
        for (j, x2) in cb2.rows().enumerate() {
            let d = sq_dist(&resid, x2);
            if d < best.0 {
                best = (d, i, j);
            }
        }
    }
    Ok((best.1, best.2))
}

/// Decode user 1 treating user 2 as noise, then user 2 after cancellation.
pub fn sic_decode_mac(y: &[f64], cb1: &Codebook, cb2: &Codebook) -> Result<(usize, usize)> {
    check_len(cb1.n, y.len())?;
    check_len(cb2.n, y.len())?;
    let w1 = nearest(y, cb1.rows());
    let resid: Vec<f64> = y.iter().zip(cb1.row(w1)).map(|(a, b)| a - b).collect();
    let w2 = nearest(&resid, cb2.rows());
    Ok((w1, w2))
}

/// `C(m, t)` as a float, which is exact for the magnitudes compared against budgets.
pub fn binomial(m: usize, t: usize) -> f64 {
    if t > m {
        return 0.0;
    }
    let t = t.min(m - t);
    (0..t).fold(1.0, |acc, i| acc * (m - i) as f64 / (i + 1) as f64)
}

fn check_rac_input(y: &[f64], cb: &RacCodebook, t: usize) -> Result<()> {
    if t < 1 {
        return Err(Error::invalid("t", "at least one message must be decoded"));
    }
    if y.is_empty() || y.len() > cb.total_len() {
        return Err(Error::DimensionMismatch { expected: cb.total_len(), got: y.len() });
    }
    Ok(())
}

/// Joint nearest-neighbor decoding of `t` distinct messages from the prefix `y`.
///
/// Candidates are the `C(M, t)` distinct subsets in lexicographic order; the
/// result is sorted. Refuses with [`Error::BudgetExceeded`] above `budget`.
pub fn rac_jnn_decode(y: &[f64], cb: &RacCodebook, t: usize, budget: u64) -> Result<Vec<usize>> {
    check_rac_input(y, cb, t)?;
    if t > cb.m {
        return Err(Error::invalid("t", format!("cannot pick {t} distinct messages out of {}", cb.m)));
    }
    let required = binomial(cb.m, t);
    if required > budget as f64 {
        return Err(Error::BudgetExceeded { required, budget });
    }
    let n = y.len();
    let mut search = SubsetSearch {
        cb,
        n,
        t,
        resid: vec![y.to_vec(); t + 1],
        chosen: vec![0; t],
        best: f64::INFINITY,
        best_set: vec![0; t],
    };
    search.descend(0, 0);
    Ok(search.best_set)
}

struct SubsetSearch<'a> {
    cb: &'a RacCodebook,
    n: usize,
    t: usize,
    /// `resid[d]` is `y` minus the first `d` chosen codewords.
    resid: Vec<Vec<f64>>,
    chosen: Vec<usize>,
    best: f64,
    best_set: Vec<usize>,
}

impl SubsetSearch<'_> {
    fn descend(&mut self, depth: usize, start: usize) {
        let remaining = self.t - depth;
        for i in start..=self.cb.m - remaining {
            self.chosen[depth] = i;
            let x = self.cb.prefix(i, self.n);
            if remaining == 1 {
                let d = sq_dist(&self.resid[depth], x);
                if d < self.best {
                    self.best = d;
                    self.best_set.copy_from_slice(&self.chosen);
                }
            } else {
                let (head, tail) = self.resid.split_at_mut(depth + 1);
                for ((o, r), xv) in tail[0].iter_mut().zip(&head[depth]).zip(x) {
                    *o = r - xv;
                }
                self.descend(depth + 1, i + 1);
            }
        }
    }
}

/// Successive nearest-neighbor decoding of `t` messages, returned in decoding order.
pub fn rac_sic_decode(y: &[f64], cb: &RacCodebook, t: usize) -> Result<Vec<usize>> {
    check_rac_input(y, cb, t)?;
    let n = y.len();
    let mut resid = y.to_vec();
    let mut out = Vec::with_capacity(t);
    for _ in 0..t {
        let w = nearest(&resid, (0..cb.m).map(|i| cb.prefix(i, n)));
        for (r, xv) in resid.iter_mut().zip(cb.prefix(w, n)) {
            *r -= xv;
        }
        out.push(w);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InfoDensityKind {
    MacI1GivenX2,
    MacI2GivenX1,
    MacI12,
    SicI1TreatAsNoise,
    RacJointT,
    RacSicStepR,
}

/// Inputs of one mismatched information density evaluation.
#[derive(Debug, Clone, Copy)]
pub enum DensityQuery<'a> {
    /// `n C(P1) + |y - x2|^2 / (2(1+P1)) - |y - x1 - x2|^2 / 2`
    MacI1GivenX2 { y: &'a [f64], x1: &'a [f64], x2: &'a [f64], pp: PowerPair },
    /// `n C(P2) + |y - x1|^2 / (2(1+P2)) - |y - x1 - x2|^2 / 2`
    MacI2GivenX1 { y: &'a [f64], x1: &'a [f64], x2: &'a [f64], pp: PowerPair },
    /// `n C(P1+P2) + |y|^2 / (2(1+P1+P2)) - |y - x1 - x2|^2 / 2`
    MacI12 { y: &'a [f64], x1: &'a [f64], x2: &'a [f64], pp: PowerPair },
    /// `n C(P1/(1+P2)) + |y|^2 / (2(1+P1+P2)) - |y - x1|^2 / (2(1+P2))`
    SicI1TreatAsNoise { y: &'a [f64], x1: &'a [f64], pp: PowerPair },
    /// Joint density of the `t = decoded.len()` candidate codewords given the
    /// codewords of the remaining active users:
    /// `n C(tP) + |y - sum(known)|^2 / (2(1+tP)) - |y - sum(all)|^2 / 2`.
    RacJointT { y: &'a [f64], decoded: &'a [&'a [f64]], known: &'a [&'a [f64]], p: f64 },
    /// Step `r = previous.len() + 1` of SIC with `k` active users:
    /// `n C(P/(1+(k-r)P)) + |y - sum(prev)|^2 / (2(1+(k-r+1)P)) - |y - sum(prev) - x|^2 / (2(1+(k-r)P))`.
    RacSicStepR { y: &'a [f64], previous: &'a [&'a [f64]], candidate: &'a [f64], k: usize, p: f64 },
}

impl DensityQuery<'_> {
    pub fn kind(&self) -> InfoDensityKind {
        match self {
            DensityQuery::MacI1GivenX2 { .. } => InfoDensityKind::MacI1GivenX2,
            DensityQuery::MacI2GivenX1 { .. } => InfoDensityKind::MacI2GivenX1,
            DensityQuery::MacI12 { .. } => InfoDensityKind::MacI12,
            DensityQuery::SicI1TreatAsNoise { .. } => InfoDensityKind::SicI1TreatAsNoise,
            DensityQuery::RacJointT { .. } => InfoDensityKind::RacJointT,
            DensityQuery::RacSicStepR { .. } => InfoDensityKind::RacSicStepR,
        }
    }
}

/// `|y - sum(xs)|^2`.
fn resid_norm(y: &[f64], xs: &[&[f64]]) -> Result<f64> {
    for x in xs {
        check_len(y.len(), x.len())?;
    }
    Ok((0..y.len()).map(|i| {
        let r = y[i] - xs.iter().map(|x| x[i]).sum::<f64>();
        r * r
    }).sum())
}

pub fn info_density(query: &DensityQuery<'_>) -> Result<f64> {
    match *query {
        DensityQuery::MacI1GivenX2 { y, x1, x2, pp } => {
            let n = y.len() as f64;
            let p1 = pp.p1();
            Ok(n * cap(p1) + resid_norm(y, &[x2])? / (2.0 * (1.0 + p1)) - resid_norm(y, &[x1, x2])? / 2.0)
        }
        DensityQuery::MacI2GivenX1 { y, x1, x2, pp } => {
            let n = y.len() as f64;
            let p2 = pp.p2();
            Ok(n * cap(p2) + resid_norm(y, &[x1])? / (2.0 * (1.0 + p2)) - resid_norm(y, &[x1, x2])? / 2.0)
        }
        DensityQuery::MacI12 { y, x1, x2, pp } => {
            let n = y.len() as f64;
            let s = pp.sum();
            Ok(n * cap(s) + sq_norm(y) / (2.0 * (1.0 + s)) - resid_norm(y, &[x1, x2])? / 2.0)
        }
        DensityQuery::SicI1TreatAsNoise { y, x1, pp } => {
            let n = y.len() as f64;
            let (p1, p2) = (pp.p1(), pp.p2());
            Ok(n * cap(p1 / (1.0 + p2)) + sq_norm(y) / (2.0 * (1.0 + p1 + p2)) - resid_norm(y, &[x1])? / (2.0 * (1.0 + p2)))
        }
        DensityQuery::RacJointT { y, decoded, known, p } => {
            check_power(p)?;
            if decoded.is_empty() {
                return Err(Error::invalid("decoded", "at least one codeword is required"));
            }
            let n = y.len() as f64;
            let tp = decoded.len() as f64 * p;
            let all: Vec<&[f64]> = decoded.iter().chain(known.iter()).copied().collect();
            Ok(n * cap(tp) + resid_norm(y, known)? / (2.0 * (1.0 + tp)) - resid_norm(y, &all)? / 2.0)
        }
        DensityQuery::RacSicStepR { y, previous, candidate, k, p } => {
            check_power(p)?;
            let r = previous.len() + 1;
            if r > k {
                return Err(Error::invalid("k", format!("step {r} exceeds the {k} active users")));
            }
            let n = y.len() as f64;
            let rest = (k - r) as f64;
            let mut with: Vec<&[f64]> = previous.to_vec();
            with.push(candidate);
            Ok(n * cap(p / (1.0 + rest * p)) + resid_norm(y, previous)? / (2.0 * (1.0 + (rest + 1.0) * p))
                - resid_norm(y, &with)? / (2.0 * (1.0 + rest * p)))
        }
    }
}

/// `|(|y|^2 / n_t) - (1 + tP)|`, compared against `lambda_t` by the receiver.
pub fn stopping_stat(y_prefix: &[f64], t: usize, p: f64) -> Result<f64> {
    if y_prefix.is_empty() {
        return Err(Error::invalid("y_prefix", "empty prefix"));
    }
    if t < 1 {
        return Err(Error::invalid("t", "stage index must be at least 1"));
    }
    Ok((sq_norm(y_prefix) / y_prefix.len() as f64 - (1.0 + t as f64 * p)).abs())
}

/// Decoder whose nearest-neighbor rule is checked against its density.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AgreementKind {
    MacJnn,
    /// First SIC step, user 2 treated as noise.
    MacSicStep1,
    /// RAC joint decoding of two users.
    RacJnnT2,
    /// Full RAC SIC with three users.
    RacSic,
}

impl AgreementKind {
    pub const ALL: [AgreementKind; 4] =
        [AgreementKind::MacJnn, AgreementKind::MacSicStep1, AgreementKind::RacJnnT2, AgreementKind::RacSic];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct AgreementReport {
    pub kind: AgreementKind,
    pub instances: usize,
    pub mismatches: usize,
}

fn argmax<I: Iterator<Item = Result<f64>>>(values: I) -> Result<usize> {
    let mut best = (f64::NEG_INFINITY, 0);
    for (i, v) in values.enumerate() {
        let v = v?;
        if v > best.0 {
            best = (v, i);
        }
    }
    Ok(best.1)
}

/// Compare minimum-distance decoding against maximization of the matching
/// information density on `instances` random channel realizations.
pub fn decoder_density_agreement(kind: AgreementKind, instances: usize, m: usize, n: usize, seed: u64) -> Result<AgreementReport> {
    use rand::SeedableRng;
    if m < 2 || n < 1 {
        return Err(Error::invalid("m", "need at least two codewords and one symbol"));
    }
    let pp = PowerPair::new(1.0, 0.5)?;
    let p = 1.0;
    let mut mismatches = 0;
    for inst in 0..instances {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(inst as u64);
        let noise = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> { (0..n).map(|_| rng.sample(StandardNormal)).collect() };
        let agree = match kind {
            AgreementKind::MacJnn | AgreementKind::MacSicStep1 => {
                let cb1 = Codebook::generate(m, n, pp.p1(), &mut rng)?;
                let cb2 = Codebook::generate(m, n, pp.p2(), &mut rng)?;
                let (w1, w2) = (rng.random_range(0..m), rng.random_range(0..m));
                let mut y = noise(&mut rng);
                for ((yv, a), b) in y.iter_mut().zip(cb1.row(w1)).zip(cb2.row(w2)) {
                    *yv += a + b;
                }
                if kind == AgreementKind::MacJnn {
                    let pairs: Vec<(usize, usize)> = (0..m).flat_map(|i| (0..m).map(move |j| (i, j))).collect();
                    let best = argmax(pairs.iter().map(|&(i, j)| {
                        info_density(&DensityQuery::MacI12 { y: &y, x1: cb1.row(i), x2: cb2.row(j), pp })
                    }))?;
                    jnn_decode_mac(&y, &cb1, &cb2)? == pairs[best]
                } else {
                    let best = argmax(cb1.rows().map(|x1| info_density(&DensityQuery::SicI1TreatAsNoise { y: &y, x1, pp })))?;
                    sic_decode_mac(&y, &cb1, &cb2)?.0 == best
                }
            }
            AgreementKind::RacJnnT2 | AgreementKind::RacSic => {
                let t = if kind == AgreementKind::RacJnnT2 { 2 } else { 3 };
                let cb = build_rac_codebook(m, &[n], p, &mut rng)?;
                let mut y = noise(&mut rng);
                for _ in 0..t {
                    let w = rng.random_range(0..m);
                    for (yv, x) in y.iter_mut().zip(cb.row(w)) {
                        *yv += x;
                    }
                }
                if kind == AgreementKind::RacJnnT2 {
                    let pairs: Vec<(usize, usize)> = (0..m).flat_map(|i| (i + 1..m).map(move |j| (i, j))).collect();
                    let best = argmax(pairs.iter().map(|&(i, j)| {
                        info_density(&DensityQuery::RacJointT { y: &y, decoded: &[cb.row(i), cb.row(j)], known: &[], p })
                    }))?;
                    rac_jnn_decode(&y, &cb, 2, DEFAULT_ENUMERATION_BUDGET)? == vec![pairs[best].0, pairs[best].1]
                } else {
                    let mut chosen: Vec<usize> = Vec::with_capacity(t);
                    for _ in 0..t {
                        let previous: Vec<&[f64]> = chosen.iter().map(|&w| cb.row(w)).collect();
                        let best = argmax((0..m).map(|c| {
                            info_density(&DensityQuery::RacSicStepR { y: &y, previous: &previous, candidate: cb.row(c), k: t, p })
                        }))?;
                        chosen.push(best);
                    }
                    rac_sic_decode(&y, &cb, t)? == chosen
                }
            }
        };
        if !agree {
            mismatches += 1;
        }
    }
    Ok(AgreementReport { kind, instances, mismatches })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn sphere_norm() {
        let x = sample_sphere(3, 4.0, &mut rng(1)).unwrap();
        assert_abs_diff_eq!(sq_norm(&x), 12.0, epsilon = 1e-12);
        assert!(sample_sphere(0, 1.0, &mut rng(1)).is_err());
        assert!(sample_sphere(3, 0.0, &mut rng(1)).is_err());
    }

    #[test]
    fn sphere_coordinate_moments() {
        let mut r = rng(2);
        let (n, p, draws) = (5, 2.0, 100_000);
        let mut sum = [0.0; 5];
        let mut sum_sq = [0.0; 5];
        for _ in 0..draws {
            let x = sample_sphere(n, p, &mut r).unwrap();
            for i in 0..n {
                sum[i] += x[i];
                sum_sq[i] += x[i] * x[i];
            }
        }
        for i in 0..n {
            let mean = sum[i] / draws as f64;
            let m2 = sum_sq[i] / draws as f64;
            let se = (m2 / draws as f64).sqrt();
            assert!(mean.abs() < 5.0 * se, "coord {i} mean {mean}");
            assert!((m2 - p).abs() < 0.05 * p, "coord {i} second moment {m2}");
        }
    }

    #[test]
    fn codebook_rows_and_roundtrip() {
        let cb = Codebook::generate(7, 11, 1.5, &mut rng(3)).unwrap();
        for row in cb.rows() {
            assert_abs_diff_eq!(sq_norm(row), 16.5, epsilon = 16.5 * 1e-12);
        }
        let mut buf = Vec::new();
        cb.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 24 + 8 * 77);
        assert_eq!(&buf[..8], &7u64.to_le_bytes());
        let back = Codebook::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, cb);
        assert!(Codebook::read_from(&buf[..buf.len() - 3]).is_err());
        assert!(Codebook::generate(0, 3, 1.0, &mut rng(0)).is_err());
    }

    #[test]
    fn codebook_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cb.bin");
        let cb = Codebook::generate(3, 4, 2.0, &mut rng(4)).unwrap();
        cb.save(&path).unwrap();
        assert_eq!(Codebook::load(&path).unwrap(), cb);
    }

    #[test]
    fn from_rows_checks_norms() {
        assert!(Codebook::from_rows(1, 2, 1.0, vec![1.0, 0.5]).is_err());
        assert!(Codebook::from_rows(1, 2, 1.0, vec![1.0, -1.0]).is_ok());
        assert!(Codebook::from_rows(2, 2, 1.0, vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn rac_codebook_segments() {
        let p = 3.0;
        let cb = build_rac_codebook(20, &[2, 1], p, &mut rng(5)).unwrap();
        assert_eq!(cb.stage_ends(), &[2, 3]);
        for i in 0..20 {
            let row = cb.row(i);
            assert_abs_diff_eq!(sq_norm(&row[..2]), 2.0 * p, epsilon = 1e-12);
            assert_abs_diff_eq!(row[2].abs(), p.sqrt(), epsilon = 1e-12);
        }
        let single = build_rac_codebook(4, &[6], 1.0, &mut rng(6)).unwrap();
        let mut r = rng(6);
        for i in 0..4 {
            let x = sample_sphere(6, 1.0, &mut r).unwrap();
            assert_eq!(single.row(i), x.as_slice());
        }
        assert!(build_rac_codebook(0, &[2], 1.0, &mut rng(0)).is_err());
        assert!(build_rac_codebook(2, &[2, 0], 1.0, &mut rng(0)).is_err());
        assert_eq!(segments_from_ends(&[2, 3, 7]).unwrap(), vec![2, 1, 4]);
        assert!(segments_from_ends(&[2, 2]).is_err());
    }

    #[test]
    fn mac_decoders_noiseless() {
        let mut r = rng(7);
        let cb1 = Codebook::generate(8, 20, 5.0, &mut r).unwrap();
        let cb2 = Codebook::generate(8, 20, 2.0, &mut r).unwrap();
        let y: Vec<f64> = cb1.row(3).iter().zip(cb2.row(5)).map(|(a, b)| a + b).collect();
        assert_eq!(jnn_decode_mac(&y, &cb1, &cb2).unwrap(), (3, 5));
        let single = Codebook::generate(1, 20, 1.0, &mut r).unwrap();
        assert_eq!(jnn_decode_mac(&y, &single, &single).unwrap(), (0, 0));
        assert!(jnn_decode_mac(&y[..5], &cb1, &cb2).is_err());
    }

    #[test]
    fn sic_decoder_strong_first_user() {
        let mut r = rng(8);
        let cb1 = Codebook::generate(8, 40, 50.0, &mut r).unwrap();
        let cb2 = Codebook::generate(8, 40, 1.0, &mut r).unwrap();
        let y: Vec<f64> = cb1.row(6).iter().zip(cb2.row(1)).map(|(a, b)| a + b).collect();
        assert_eq!(sic_decode_mac(&y, &cb1, &cb2).unwrap(), (6, 1));
        let one = Codebook::generate(1, 40, 50.0, &mut r).unwrap();
        let y: Vec<f64> = one.row(0).iter().zip(cb2.row(4)).map(|(a, b)| a + b).collect();
        assert_eq!(sic_decode_mac(&y, &one, &cb2).unwrap(), (0, 4));
    }

    #[test]
    fn lowest_index_wins_ties() {
        let cb = Codebook::from_rows(3, 2, 1.0, vec![1.0, -1.0, 1.0, -1.0, -1.0, 1.0]).unwrap();
        assert_eq!(jnn_decode_mac(&[2.0, -2.0], &cb, &cb).unwrap(), (0, 0));
        assert_eq!(sic_decode_mac(&[1.0, -1.0], &cb, &cb).unwrap(), (0, 0));
    }

    #[test]
    fn rac_decoders_noiseless() {
        let cb = build_rac_codebook(16, &[30, 30], 1.0, &mut rng(9)).unwrap();
        let y: Vec<f64> = cb.row(2).iter().zip(cb.row(7)).map(|(a, b)| a + b).collect();
        assert_eq!(rac_jnn_decode(&y, &cb, 2, DEFAULT_ENUMERATION_BUDGET).unwrap(), vec![2, 7]);
        let y1 = cb.prefix(11, 30).to_vec();
        assert_eq!(rac_jnn_decode(&y1, &cb, 1, DEFAULT_ENUMERATION_BUDGET).unwrap(), vec![11]);
        assert_eq!(rac_sic_decode(&y1, &cb, 1).unwrap(), vec![11]);
        let mut got = rac_sic_decode(&y, &cb, 2).unwrap();
        got.sort_unstable();
        assert_eq!(got, vec![2, 7]);
    }

    #[test]
    fn rac_jnn_budget() {
        let cb = build_rac_codebook(64, &[4], 1.0, &mut rng(10)).unwrap();
        let y = vec![0.0; 4];
        assert!(matches!(rac_jnn_decode(&y, &cb, 3, 1000), Err(Error::BudgetExceeded { .. })));
        assert_eq!(rac_jnn_decode(&y, &cb, 2, 2016).unwrap().len(), 2);
        assert!(rac_jnn_decode(&y, &cb, 65, u64::MAX).is_err());
        assert!(rac_jnn_decode(&[], &cb, 1, 10).is_err());
    }

    #[test]
    fn binomial_values() {
        assert_eq!(binomial(32, 2), 496.0);
        assert_eq!(binomial(5, 0), 1.0);
        assert_eq!(binomial(3, 4), 0.0);
        assert_eq!(binomial(64, 3), 41664.0);
    }

    #[test]
    fn density_zero_noise_example() {
        let pp = PowerPair::new(1.0, 1.0).unwrap();
        let x1 = [1.0, -1.0];
        let x2 = [1.0, 1.0];
        let y = [2.0, 0.0];
        let v = info_density(&DensityQuery::MacI1GivenX2 { y: &y, x1: &x1, x2: &x2, pp }).unwrap();
        assert_abs_diff_eq!(v, 1.19315, epsilon = 1e-5);
        assert_abs_diff_eq!(v, 2.0f64.ln() + 0.5, epsilon = 1e-15);
    }

    #[test]
    fn density_kinds_and_errors() {
        let pp = PowerPair::new(1.0, 2.0).unwrap();
        let y = [0.5, 0.1, -0.3];
        let x = [1.0, 0.0, 0.0];
        let q = DensityQuery::MacI12 { y: &y, x1: &x, x2: &x[..2], pp };
        assert_eq!(q.kind(), InfoDensityKind::MacI12);
        assert!(matches!(info_density(&q), Err(Error::DimensionMismatch { .. })));
        let q = DensityQuery::RacSicStepR { y: &y, previous: &[&x, &x], candidate: &x, k: 2, p: 1.0 };
        assert!(info_density(&q).is_err());
    }

    #[test]
    fn i12_matches_expansion() {
        let mut r = rng(11);
        let pp = PowerPair::new(5.0, 2.0).unwrap();
        let n = 50;
        for _ in 0..100 {
            let x1 = sample_sphere(n, 5.0, &mut r).unwrap();
            let x2 = sample_sphere(n, 2.0, &mut r).unwrap();
            let z: Vec<f64> = (0..n).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
            let y: Vec<f64> = (0..n).map(|i| x1[i] + x2[i] + z[i]).collect();
            let direct = info_density(&DensityQuery::MacI12 { y: &y, x1: &x1, x2: &x2, pp }).unwrap() - n as f64 * cap(7.0);
            let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| u * v).sum::<f64>();
            let sum: Vec<f64> = (0..n).map(|i| x1[i] + x2[i]).collect();
            let expansion = ((n as f64 - sq_norm(&z)) * 7.0 + 2.0 * dot(&sum, &z) + 2.0 * dot(&x1, &x2)) / (2.0 * 8.0);
            assert_abs_diff_eq!(direct, expansion, epsilon = 1e-9);
        }
    }

    #[test]
    fn stopping_examples() {
        assert_eq!(stopping_stat(&[0.0; 4], 1, 1.0).unwrap(), 2.0);
        let y = [3f64.sqrt(); 5];
        assert_abs_diff_eq!(stopping_stat(&y, 2, 1.0).unwrap(), 0.0, epsilon = 1e-12);
        assert!(stopping_stat(&[], 1, 1.0).is_err());
        assert!(stopping_stat(&[1.0], 0, 1.0).is_err());
    }

    #[test]
    fn stopping_concentrates() {
        let mut r = rng(12);
        let (n, p, trials) = (10_000, 1.0, 200);
        let cb = build_rac_codebook(2, &[n], p, &mut r).unwrap();
        let mut ok = 0;
        for _ in 0..trials {
            let y: Vec<f64> = (0..n).map(|i| cb.row(0)[i] + cb.row(1)[i] + r.sample::<f64, _>(StandardNormal)).collect();
            if stopping_stat(&y, 2, p).unwrap() < p / 2.0 {
                ok += 1;
            }
        }
        assert!(ok as f64 / trials as f64 >= 0.99);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn densities_fall_as_residual_grows(seed in 0u64..1000) {
            let mut r = rng(seed);
            let n = 12;
            let pp = PowerPair::new(2.0, 1.0).unwrap();
            let x1 = sample_sphere(n, 2.0, &mut r).unwrap();
            let x2 = sample_sphere(n, 1.0, &mut r).unwrap();
            let a = sample_sphere(n, 2.0, &mut r).unwrap();
            let b = sample_sphere(n, 2.0, &mut r).unwrap();
            let y: Vec<f64> = (0..n).map(|i| x1[i] + x2[i] + r.sample::<f64, _>(StandardNormal)).collect();
            let (near, far) = if resid_norm(&y, &[&a, &x2]).unwrap() < resid_norm(&y, &[&b, &x2]).unwrap() { (&a, &b) } else { (&b, &a) };
            let ev = |c: &[f64]| {
                [
                    info_density(&DensityQuery::MacI1GivenX2 { y: &y, x1: c, x2: &x2, pp }).unwrap(),
                    info_density(&DensityQuery::MacI12 { y: &y, x1: c, x2: &x2, pp }).unwrap(),
                    info_density(&DensityQuery::RacJointT { y: &y, decoded: &[c], known: &[&x2], p: 2.0 }).unwrap(),
                    info_density(&DensityQuery::RacSicStepR { y: &y, previous: &[&x2], candidate: c, k: 3, p: 2.0 }).unwrap(),
                ]
            };
            let (hi, lo) = (ev(near), ev(far));
            for i in 0..4 {
                prop_assert!(lo[i] < hi[i]);
            }
            let (near, far) = if resid_norm(&y, &[&a]).unwrap() < resid_norm(&y, &[&b]).unwrap() { (&a, &b) } else { (&b, &a) };
            let sic = |c: &[f64]| info_density(&DensityQuery::SicI1TreatAsNoise { y: &y, x1: c, pp }).unwrap();
            prop_assert!(sic(far) < sic(near));
            let (near, far) = if resid_norm(&y, &[&x1, &a]).unwrap() < resid_norm(&y, &[&x1, &b]).unwrap() { (&a, &b) } else { (&b, &a) };
            let i2 = |c: &[f64]| info_density(&DensityQuery::MacI2GivenX1 { y: &y, x1: &x1, x2: c, pp }).unwrap();
            prop_assert!(i2(far) < i2(near));
        }
    }

    #[test]
    fn density_agreement_all_kinds() {
        for kind in AgreementKind::ALL {
            let r = decoder_density_agreement(kind, 50, 8, 20, 11).unwrap();
            assert_eq!(r.mismatches, 0, "{kind:?}");
        }
    }
}
