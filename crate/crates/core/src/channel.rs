//! Probabilistic ground-to-air (UGV→UAV) and air-to-ground (UAV→user) link
//! models: free-space loss plus LoS/NLoS excess, logistic LoS probability in
//! the elevation angle, SINR and Shannon rate.
//!
//! Every function here is pure.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{dist3, Point3};

pub const SPEED_OF_LIGHT: f64 = 3e8;

/// Logistic LoS-probability curve `1 / (1 + a·exp(−b(ψ − a)))`, ψ in degrees.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SCurve {
    pub a: f64,
    pub b: f64,
}

impl Default for SCurve {
    fn default() -> Self {
        Self { a: 9.61, b: 0.16 }
    }
}

/// How a UAV's bandwidth reaches the users it serves.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BandwidthPolicy {
    /// Every user link gets the full bandwidth.
    #[default]
    PerLink,
    /// A UAV's bandwidth is divided equally among its served users.
    EqualSplit,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelParams {
    pub carrier_hz: f64,
    pub beta_los_db: f64,
    pub beta_nlos_db: f64,
    /// η₁, η₂ of the UGV→UAV link.
    pub g2a: SCurve,
    /// β₁, β₂ of the UAV→user link.
    pub a2g: SCurve,
    pub bandwidth_hz: f64,
    pub p_uav_w: f64,
    pub p_ugv_w: f64,
    pub noise_w: f64,
    pub bandwidth_policy: BandwidthPolicy,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            carrier_hz: 2e9,
            beta_los_db: 1.0,
            beta_nlos_db: 20.0,
            g2a: SCurve::default(),
            a2g: SCurve::default(),
            bandwidth_hz: 1e6,
            p_uav_w: 1.0,
            p_ugv_w: 1.0,
            noise_w: 1e-12,
            bandwidth_policy: BandwidthPolicy::PerLink,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("channel.carrier_hz", self.carrier_hz),
            ("channel.g2a.b", self.g2a.b),
            ("channel.a2g.b", self.a2g.b),
            ("channel.g2a.a", self.g2a.a),
            ("channel.a2g.a", self.a2g.a),
            ("channel.bandwidth_hz", self.bandwidth_hz),
            ("channel.p_uav_w", self.p_uav_w),
            ("channel.p_ugv_w", self.p_ugv_w),
            ("channel.noise_w", self.noise_w),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(name, format!("must be positive, got {v}")));
            }
        }
        if !(self.beta_nlos_db >= self.beta_los_db) {
            return Err(Error::param("channel.beta_nlos_db", "must be >= beta_los_db"));
        }
        Ok(())
    }

    fn curve(&self, kind: LinkKind) -> SCurve {
        match kind {
            LinkKind::G2A => self.g2a,
            LinkKind::A2G => self.a2g,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LinkKind {
    /// UGV (ground transmitter) to UAV.
    G2A,
    /// UAV (airborne transmitter) to ground user.
    A2G,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkBudget {
    pub distance: f64,
    pub elevation_deg: f64,
    pub p_los: f64,
    pub loss_db: f64,
    pub gain_linear: f64,
}

#[inline]
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

#[inline]
pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// `20·log10(4π·f_c·d/c) + β`, with β the LoS or NLoS excess loss.
pub fn path_loss_component(params: &ChannelParams, distance_m: f64, los: bool) -> Result<f64> {
    if !(distance_m > 0.0) {
        return Err(Error::NonPositiveDistance(distance_m));
    }
    let fspl = 20.0 * (4.0 * std::f64::consts::PI * params.carrier_hz * distance_m / SPEED_OF_LIGHT).log10();
    Ok(fspl + if los { params.beta_los_db } else { params.beta_nlos_db })
}

/// Elevation of `air` as seen from `ground`, degrees in (0, 90].
pub fn elevation_angle(ground: Point3, air: Point3) -> Result<f64> {
    let d = dist3(ground, air);
    if d == 0.0 {
        return Err(Error::CoincidentPoints);
    }
    let dz = air[2] - ground[2];
    if !(dz > 0.0) {
        return Err(Error::NonPositiveAltitude(dz));
    }
    Ok((dz / d).min(1.0).asin().to_degrees())
}

pub fn p_los(curve: SCurve, elevation_deg: f64) -> f64 {
    1.0 / (1.0 + curve.a * (-curve.b * (elevation_deg - curve.a)).exp())
}

/// Expected loss `Γ·P^LoS + F·(1 − P^LoS)`. For `G2A` the transmitter is on
/// the ground; for `A2G` the transmitter is airborne.
pub fn expected_path_loss(params: &ChannelParams, kind: LinkKind, tx: Point3, rx: Point3) -> Result<LinkBudget> {
    let (ground, air) = match kind {
        LinkKind::G2A => (tx, rx),
        LinkKind::A2G => (rx, tx),
    };
    let elevation_deg = elevation_angle(ground, air)?;
    let distance = dist3(ground, air);
    let los = path_loss_component(params, distance, true)?;
    let nlos = path_loss_component(params, distance, false)?;
    let p = p_los(params.curve(kind), elevation_deg);
    let loss_db = los * p + nlos * (1.0 - p);
    Ok(LinkBudget { distance, elevation_deg, p_los: p, loss_db, gain_linear: db_to_linear(-loss_db) })
}

/// SINR at `user` from UAV `serving`, with every other UAV interfering.
pub fn sinr_user(params: &ChannelParams, serving: usize, uavs: &[Point3], powers: &[f64], user: Point3) -> Result<f64> {
    if powers.len() != uavs.len() {
        return Err(Error::DimensionMismatch { what: "UAV powers", expected: uavs.len(), got: powers.len() });
    }
    if serving >= uavs.len() {
        return Err(Error::DimensionMismatch { what: "serving UAV index", expected: uavs.len(), got: serving });
    }
    let mut signal = 0.0;
    let mut interference = 0.0;
    for (u, (&q, &p)) in uavs.iter().zip(powers).enumerate() {
        let received = p * expected_path_loss(params, LinkKind::A2G, q, user)?.gain_linear;
        if u == serving {
            signal = received;
        } else {
            interference += received;
        }
    }
    Ok(signal / (interference + params.noise_w))
}

/// Interference-free backhaul SNR; zero when the pair is not associated.
pub fn sinr_backhaul(params: &ChannelParams, ugv: Point3, uav: Point3, associated: bool) -> Result<f64> {
    if !associated {
        return Ok(0.0);
    }
    let budget = expected_path_loss(params, LinkKind::G2A, ugv, uav)?;
    Ok(params.p_ugv_w * budget.gain_linear / params.noise_w)
}

/// `α·𝓑·log2(1 + SINR)` with the configured full bandwidth.
pub fn rate(params: &ChannelParams, associated: bool, sinr: f64) -> f64 {
    rate_with_bandwidth(params.bandwidth_hz, associated, sinr)
}

pub fn rate_with_bandwidth(bandwidth_hz: f64, associated: bool, sinr: f64) -> f64 {
    if associated {
        bandwidth_hz * (1.0 + sinr).log2()
    } else {
        0.0
    }
}
