//! Achievable message-set sizes of the rateless random access code.

use serde::Serialize;

use crate::analytics::{cap, check_xi, v_cr, v_rs, v_single};
use crate::error::{Error, Result};
use crate::mvnormal::q_inv;
use crate::Decoder;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RacRatePoint {
    pub k: u32,
    pub n_k: u64,
    pub p: f64,
    pub xi: f64,
    pub eps_k: f64,
    pub decoder: Decoder,
    /// Per-user `log M` in nats.
    pub log_m: f64,
}

fn validate(n_k: u64, k: u32, p: f64, xi: f64, eps_k: f64, offset: f64) -> Result<f64> {
    if k < 1 {
        return Err(Error::invalid("k", "at least one active user is required"));
    }
    if n_k < 1 {
        return Err(Error::invalid("n_k", "blocklength must be at least 1"));
    }
    if !(p.is_finite() && p > 0.0) {
        return Err(Error::invalid("p", format!("power must be positive and finite, got {p}")));
    }
    if !offset.is_finite() {
        return Err(Error::invalid("offset", "must be finite"));
    }
    check_xi(xi)?;
    q_inv(eps_k)
}

/// `(n_k C(kP) - sqrt(n_k (V(kP) + V_cr(k, P))) Q^{-1}(eps_k) + offset) / k`.
pub fn rac_jnn_log_m(n_k: u64, k: u32, p: f64, xi: f64, eps_k: f64, offset: f64) -> Result<f64> {
    let qe = validate(n_k, k, p, xi, eps_k, offset)?;
    let n = n_k as f64;
    let kf = f64::from(k);
    let v = v_single(kf * p, xi) + v_cr(k, p);
    Ok((n * cap(kf * p) - (n * v).sqrt() * qe + offset) / kf)
}

/// `n_k C(P / (1 + (k-1)P)) - sqrt(n_k V_rs(k, 1, P)) Q^{-1}(eps_k) + offset`.
pub fn rac_sic_log_m(n_k: u64, k: u32, p: f64, xi: f64, eps_k: f64, offset: f64) -> Result<f64> {
    let qe = validate(n_k, k, p, xi, eps_k, offset)?;
    let n = n_k as f64;
    let kf = f64::from(k);
    Ok(n * cap(p / (1.0 + (kf - 1.0) * p)) - (n * v_rs(k, 1, p, xi)).sqrt() * qe + offset)
}

pub fn rac_rate_point(decoder: Decoder, n_k: u64, k: u32, p: f64, xi: f64, eps_k: f64, offset: f64) -> Result<RacRatePoint> {
    let log_m = match decoder {
        Decoder::Jnn => rac_jnn_log_m(n_k, k, p, xi, eps_k, offset)?,
        Decoder::Sic => rac_sic_log_m(n_k, k, p, xi, eps_k, offset)?,
    };
    Ok(RacRatePoint { k, n_k, p, xi, eps_k, decoder, log_m })
}

/// `mu(k) = k C(P / (1 + (k-1)P)) - C(kP)`, the first-order SIC minus JNN sum rate.
pub fn first_order_gap(k: u32, p: f64) -> Result<f64> {
    if k < 1 {
        return Err(Error::invalid("k", "at least one active user is required"));
    }
    if !(p.is_finite() && p > 0.0) {
        return Err(Error::invalid("p", format!("power must be positive and finite, got {p}")));
    }
    if k == 1 {
        return Ok(0.0);
    }
    let kf = f64::from(k);
    Ok(kf * cap(p / (1.0 + (kf - 1.0) * p)) - cap(kf * p))
}

/// One row of the rate table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateRow {
    pub k: u32,
    pub n_k: u64,
    pub jnn: f64,
    pub sic: f64,
    pub mu_k: f64,
}

pub fn rate_table(ks: &[u32], n_k: u64, p: f64, xi: f64, eps: f64, offset: f64) -> Result<Vec<RateRow>> {
    ks.iter()
        .map(|&k| {
            Ok(RateRow {
                k,
                n_k,
                jnn: rac_jnn_log_m(n_k, k, p, xi, eps, offset)?,
                sic: rac_sic_log_m(n_k, k, p, xi, eps, offset)?,
                mu_k: first_order_gap(k, p)?,
            })
        })
        .collect()
}
