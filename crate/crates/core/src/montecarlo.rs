//! Ensemble-average error probability estimation by simulating the coding schemes.
//!
//! Trial `i` draws all of its randomness from a ChaCha stream keyed by
//! `(master_seed, i)`, so results do not depend on how trials are scheduled.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::analytics::PowerPair;
use crate::codec::{
    binomial, build_rac_codebook, info_density, jnn_decode_mac, rac_jnn_decode, rac_sic_decode, sample_sphere,
    segments_from_ends, sic_decode_mac, stopping_stat, Codebook, DensityQuery, DEFAULT_ENUMERATION_BUDGET,
};
use crate::error::{Error, Result};
use crate::noise::NoiseModel;
use crate::Decoder;

/// Environment variable capping the worker count.
pub const THREADS_ENV: &str = "MACRAN_THREADS";

/// RNG for trial `index` under `master_seed`.
pub fn trial_rng(master_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

fn env_threads() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|&t: &usize| t > 0)
}

/// Run `f` on a pool of `threads` workers, or on the environment-capped default pool.
fn run_in_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads.or_else(env_threads) {
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| Error::invalid("threads", e.to_string()))?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MacSimConfig {
    pub n: usize,
    pub m1: usize,
    pub m2: usize,
    pub pp: PowerPair,
    pub noise: NoiseModel,
    pub decoder: Decoder,
    pub trials: u64,
    pub master_seed: u64,
    /// Cap on `M1 * M2` for JNN decoding.
    pub budget: u64,
}

impl MacSimConfig {
    pub fn new(n: usize, m1: usize, m2: usize, pp: PowerPair, decoder: Decoder, trials: u64, master_seed: u64) -> Self {
        Self {
            n,
            m1,
            m2,
            pp,
            noise: NoiseModel::gaussian(),
            decoder,
            trials,
            master_seed,
            budget: DEFAULT_ENUMERATION_BUDGET,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(Error::invalid("n", "blocklength must be at least 1"));
        }
        if self.m1 < 1 || self.m2 < 1 {
            return Err(Error::invalid("m", "message sets must be nonempty"));
        }
        if self.trials < 1 {
            return Err(Error::invalid("trials", "at least one trial is required"));
        }
        if self.decoder == Decoder::Jnn {
            let required = self.m1 as f64 * self.m2 as f64;
            if required > self.budget as f64 {
                return Err(Error::BudgetExceeded { required, budget: self.budget });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RacSimConfig {
    /// Number of stages `K`, equal to `layout.len()`.
    pub cap_k: usize,
    pub k_active: usize,
    pub m: usize,
    pub p: f64,
    /// Cumulative stage blocklengths `n_1 < ... < n_K`.
    pub layout: Vec<usize>,
    /// Stopping thresholds `lambda_1..lambda_K`.
    pub lambdas: Vec<f64>,
    pub noise: NoiseModel,
    pub decoder: Decoder,
    pub trials: u64,
    pub master_seed: u64,
    /// Cap on `C(M, k)` for JNN decoding.
    pub budget: u64,
}

impl RacSimConfig {
    /// Configuration with `lambda_t = P / 2` at every stage and Gaussian noise.
    pub fn new(k_active: usize, m: usize, p: f64, layout: Vec<usize>, decoder: Decoder, trials: u64, master_seed: u64) -> Self {
        let cap_k = layout.len();
        Self {
            cap_k,
            k_active,
            m,
            p,
            lambdas: vec![p / 2.0; cap_k],
            layout,
            noise: NoiseModel::gaussian(),
            decoder,
            trials,
            master_seed,
            budget: DEFAULT_ENUMERATION_BUDGET,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p.is_finite() && self.p > 0.0) {
            return Err(Error::invalid("p", "power must be positive and finite"));
        }
        if self.cap_k < 1 || self.layout.len() != self.cap_k {
            return Err(Error::invalid("layout", format!("expected {} stage lengths, got {}", self.cap_k, self.layout.len())));
        }
        segments_from_ends(&self.layout)?;
        if self.lambdas.len() != self.cap_k {
            return Err(Error::invalid("lambdas", format!("expected {} thresholds, got {}", self.cap_k, self.lambdas.len())));
        }
        if let Some(l) = self.lambdas.iter().find(|&&l| !(l > 0.0 && l < self.p)) {
            return Err(Error::invalid("lambdas", format!("each threshold must lie in (0, P), got {l}")));
        }
        if self.k_active < 1 || self.k_active > self.cap_k {
            return Err(Error::invalid("k_active", format!("must lie in [1, {}]", self.cap_k)));
        }
        if self.m < 1 {
            return Err(Error::invalid("m", "message set must be nonempty"));
        }
        if self.trials < 1 {
            return Err(Error::invalid("trials", "at least one trial is required"));
        }
        if self.decoder == Decoder::Jnn {
            let required = binomial(self.m, self.k_active);
            if required > self.budget as f64 {
                return Err(Error::BudgetExceeded { required, budget: self.budget });
            }
        }
        Ok(())
    }
}

/// RAC error attribution, first matching event wins.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Breakdown {
    /// Two or more active users picked the same message.
    pub rep: u64,
    /// The receiver stopped at a stage other than `k_active`, or never stopped.
    pub time: u64,
    /// Wrong decoded message multiset.
    pub msg: u64,
}

impl Breakdown {
    fn add(self, o: Self) -> Self {
        Self { rep: self.rep + o.rep, time: self.time + o.time, msg: self.msg + o.msg }
    }

    pub fn total(&self) -> u64 {
        self.rep + self.time + self.msg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimResult {
    pub p_err_hat: f64,
    pub ci95_halfwidth: f64,
    pub trials: u64,
    pub errors: u64,
    pub breakdown: Option<Breakdown>,
}

/// Point estimate and Agresti-Coull 95% half-width for `errors` out of `trials`.
pub fn binomial_ci95(errors: u64, trials: u64) -> (f64, f64) {
    let n = trials as f64;
    let z = 1.959_963_984_540_054;
    let nt = n + z * z;
    let pt = (errors as f64 + z * z / 2.0) / nt;
    (errors as f64 / n, z * (pt * (1.0 - pt) / nt).sqrt())
}

impl SimResult {
    fn from_counts(errors: u64, trials: u64, breakdown: Option<Breakdown>) -> Self {
        let (p_err_hat, ci95_halfwidth) = binomial_ci95(errors, trials);
        Self { p_err_hat, ci95_halfwidth, trials, errors, breakdown }
    }
}

pub fn simulate_mac(cfg: &MacSimConfig) -> Result<SimResult> {
    simulate_mac_with_threads(cfg, None)
}

pub fn simulate_mac_with_threads(cfg: &MacSimConfig, threads: Option<usize>) -> Result<SimResult> {
    cfg.validate()?;
    let errors = run_in_pool(threads, || {
        (0..cfg.trials)
            .into_par_iter()
            .map(|i| mac_trial(cfg, i).map(u64::from))
            .try_reduce(|| 0, |a, b| Ok(a + b))
    })??;
    Ok(SimResult::from_counts(errors, cfg.trials, None))
}

fn mac_trial(cfg: &MacSimConfig, index: u64) -> Result<bool> {
    let mut rng = trial_rng(cfg.master_seed, index);
    let cb1 = Codebook::generate(cfg.m1, cfg.n, cfg.pp.p1(), &mut rng)?;
    let cb2 = Codebook::generate(cfg.m2, cfg.n, cfg.pp.p2(), &mut rng)?;
    let w1 = rng.random_range(0..cfg.m1);
    let w2 = rng.random_range(0..cfg.m2);
    let mut y = vec![0.0; cfg.n];
    cfg.noise.fill(&mut rng, &mut y);
    for ((yv, a), b) in y.iter_mut().zip(cb1.row(w1)).zip(cb2.row(w2)) {
        *yv += a + b;
    }
    let decoded = match cfg.decoder {
        Decoder::Jnn => jnn_decode_mac(&y, &cb1, &cb2)?,
        Decoder::Sic => sic_decode_mac(&y, &cb1, &cb2)?,
    };
    Ok(decoded != (w1, w2))
}

pub fn simulate_rac(cfg: &RacSimConfig) -> Result<SimResult> {
    simulate_rac_with_threads(cfg, None)
}

pub fn simulate_rac_with_threads(cfg: &RacSimConfig, threads: Option<usize>) -> Result<SimResult> {
    cfg.validate()?;
    let segments = segments_from_ends(&cfg.layout)?;
    let breakdown = run_in_pool(threads, || {
        (0..cfg.trials)
            .into_par_iter()
            .map(|i| rac_trial(cfg, &segments, i))
            .try_reduce(Breakdown::default, |a, b| Ok(a.add(b)))
    })??;
    Ok(SimResult::from_counts(breakdown.total(), cfg.trials, Some(breakdown)))
}

fn rac_trial(cfg: &RacSimConfig, segments: &[usize], index: u64) -> Result<Breakdown> {
    let mut rng = trial_rng(cfg.master_seed, index);
    let cb = build_rac_codebook(cfg.m, segments, cfg.p, &mut rng)?;
    let mut msgs: Vec<usize> = (0..cfg.k_active).map(|_| rng.random_range(0..cfg.m)).collect();
    let total = cb.total_len();
    let mut y = vec![0.0; total];
    cfg.noise.fill(&mut rng, &mut y);
    msgs.sort_unstable();
    if msgs.windows(2).any(|w| w[0] == w[1]) {
        return Ok(Breakdown { rep: 1, ..Breakdown::default() });
    }
    for &w in &msgs {
        for (yv, x) in y.iter_mut().zip(cb.row(w)) {
            *yv += x;
        }
    }
    let mut stop = None;
    for (t, (&n_t, &lambda)) in cfg.layout.iter().zip(&cfg.lambdas).enumerate() {
        if stopping_stat(&y[..n_t], t + 1, cfg.p)? <= lambda {
            stop = Some(t + 1);
            break;
        }
    }
    if stop != Some(cfg.k_active) {
        return Ok(Breakdown { time: 1, ..Breakdown::default() });
    }
    let prefix = &y[..cfg.layout[cfg.k_active - 1]];
    let mut decoded = match cfg.decoder {
        Decoder::Jnn => rac_jnn_decode(prefix, &cb, cfg.k_active, cfg.budget)?,
        Decoder::Sic => rac_sic_decode(prefix, &cb, cfg.k_active)?,
    };
    decoded.sort_unstable();
    if decoded != msgs {
        return Ok(Breakdown { msg: 1, ..Breakdown::default() });
    }
    Ok(Breakdown::default())
}

/// Nested Monte Carlo evaluation of the RCU bound for the configured decoder.
///
/// Each of `cfg.trials` outer samples draws `(X1, X2, Y)`; each conditional
/// pairwise probability is estimated from `inner_samples` fresh codewords.
pub fn rcu_bound_mc(cfg: &MacSimConfig, inner_samples: usize) -> Result<f64> {
    rcu_bound_mc_with_threads(cfg, inner_samples, None)
}

pub fn rcu_bound_mc_with_threads(cfg: &MacSimConfig, inner_samples: usize, threads: Option<usize>) -> Result<f64> {
    if inner_samples < 100 {
        return Err(Error::invalid("inner_samples", "at least 100 inner samples are required"));
    }
    if cfg.n < 1 || cfg.m1 < 1 || cfg.m2 < 1 || cfg.trials < 1 {
        return Err(Error::invalid("cfg", "n, m1, m2 and trials must be positive"));
    }
    let sum = run_in_pool(threads, || {
        (0..cfg.trials)
            .into_par_iter()
            .map(|i| rcu_outer(cfg, inner_samples, i))
            .try_reduce(|| 0.0, |a, b| Ok(a + b))
    })??;
    Ok(sum / cfg.trials as f64)
}

fn rcu_outer(cfg: &MacSimConfig, inner: usize, index: u64) -> Result<f64> {
    let mut rng = trial_rng(cfg.master_seed, index);
    let (n, pp) = (cfg.n, cfg.pp);
    let x1 = sample_sphere(n, pp.p1(), &mut rng)?;
    let x2 = sample_sphere(n, pp.p2(), &mut rng)?;
    let mut y = vec![0.0; n];
    cfg.noise.fill(&mut rng, &mut y);
    for i in 0..n {
        y[i] += x1[i] + x2[i];
    }
    let (m1, m2) = ((cfg.m1 - 1) as f64, (cfg.m2 - 1) as f64);
    let freq = |hits: usize| hits as f64 / inner as f64;
    match cfg.decoder {
        Decoder::Jnn => {
            let i1 = info_density(&DensityQuery::MacI1GivenX2 { y: &y, x1: &x1, x2: &x2, pp })?;
            let i2 = info_density(&DensityQuery::MacI2GivenX1 { y: &y, x1: &x1, x2: &x2, pp })?;
            let i12 = info_density(&DensityQuery::MacI12 { y: &y, x1: &x1, x2: &x2, pp })?;
            let (mut h1, mut h2, mut h12) = (0, 0, 0);
            for _ in 0..inner {
                let b1 = sample_sphere(n, pp.p1(), &mut rng)?;
                let b2 = sample_sphere(n, pp.p2(), &mut rng)?;
                if info_density(&DensityQuery::MacI1GivenX2 { y: &y, x1: &b1, x2: &x2, pp })? >= i1 {
                    h1 += 1;
                }
                if info_density(&DensityQuery::MacI2GivenX1 { y: &y, x1: &x1, x2: &b2, pp })? >= i2 {
                    h2 += 1;
                }
                if info_density(&DensityQuery::MacI12 { y: &y, x1: &b1, x2: &b2, pp })? >= i12 {
                    h12 += 1;
                }
            }
            Ok((m1 * freq(h1) + m2 * freq(h2) + m1 * m2 * freq(h12)).min(1.0))
        }
        Decoder::Sic => {
            let s1 = info_density(&DensityQuery::SicI1TreatAsNoise { y: &y, x1: &x1, pp })?;
            let i2 = info_density(&DensityQuery::MacI2GivenX1 { y: &y, x1: &x1, x2: &x2, pp })?;
            let (mut h1, mut h2) = (0, 0);
            for _ in 0..inner {
                let b1 = sample_sphere(n, pp.p1(), &mut rng)?;
                let b2 = sample_sphere(n, pp.p2(), &mut rng)?;
                if info_density(&DensityQuery::SicI1TreatAsNoise { y: &y, x1: &b1, pp })? >= s1 {
                    h1 += 1;
                }
                if info_density(&DensityQuery::MacI2GivenX1 { y: &y, x1: &x1, x2: &b2, pp })? >= i2 {
                    h2 += 1;
                }
            }
            Ok((m1 * freq(h1)).min(1.0) + (m2 * freq(h2)).min(1.0))
        }
    }
}

/// Received word and conditioning codewords for a g-function estimate.
#[derive(Debug, Clone, Copy)]
pub enum GContext<'a> {
    /// `Pr{i_1(X1bar; y | x2) >= t}`
    G1 { y: &'a [f64], x2: &'a [f64], pp: PowerPair },
    /// `Pr{i_2(X2bar; y | x1) >= t}`
    G2 { y: &'a [f64], x1: &'a [f64], pp: PowerPair },
    /// `Pr{i_12(X1bar, X2bar; y) >= t}`
    G12 { y: &'a [f64], pp: PowerPair },
    /// `Pr{i(X1bar; y) >= t}` with user 2 treated as noise.
    G { y: &'a [f64], pp: PowerPair },
}

impl GContext<'_> {
    fn y(&self) -> &[f64] {
        match *self {
            GContext::G1 { y, .. } | GContext::G2 { y, .. } | GContext::G12 { y, .. } | GContext::G { y, .. } => y,
        }
    }
}

/// Exceedance frequencies of the mismatched density of fresh spherical codewords.
///
/// The same draws serve every threshold, so the result is non-increasing in `t`.
pub fn estimate_g(t_grid: &[f64], context: &GContext<'_>, samples: usize, seed: u64) -> Result<Vec<f64>> {
    if samples < 1000 {
        return Err(Error::invalid("samples", "at least 1000 samples are required"));
    }
    let n = context.y().len();
    if n < 1 {
        return Err(Error::invalid("y", "empty received word"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(samples);
    for _ in 0..samples {
        let v = match *context {
            GContext::G1 { y, x2, pp } => {
                let b = sample_sphere(n, pp.p1(), &mut rng)?;
                info_density(&DensityQuery::MacI1GivenX2 { y, x1: &b, x2, pp })?
            }
            GContext::G2 { y, x1, pp } => {
                let b = sample_sphere(n, pp.p2(), &mut rng)?;
                info_density(&DensityQuery::MacI2GivenX1 { y, x1, x2: &b, pp })?
            }
            GContext::G12 { y, pp } => {
                let b1 = sample_sphere(n, pp.p1(), &mut rng)?;
                let b2 = sample_sphere(n, pp.p2(), &mut rng)?;
                info_density(&DensityQuery::MacI12 { y, x1: &b1, x2: &b2, pp })?
            }
            GContext::G { y, pp } => {
                let b = sample_sphere(n, pp.p1(), &mut rng)?;
                info_density(&DensityQuery::SicI1TreatAsNoise { y, x1: &b, pp })?
            }
        };
        values.push(v);
    }
    values.sort_by(f64::total_cmp);
    Ok(t_grid
        .iter()
        .map(|&t| {
            let below = values.partition_point(|&v| v < t);
            (samples - below) as f64 / samples as f64
        })
        .collect())
}
