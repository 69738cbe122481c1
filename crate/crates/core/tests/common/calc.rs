//! Stand-alone link calculator used as a reference. Shares no code with the
//! library: elevation via atan2, free-space loss via squared-ratio form, rate
//! via natural logs.

pub const C: f64 = 3e8;

#[derive(Clone, Copy, Debug)]
pub struct Link {
    pub f_c: f64,
    pub beta_los: f64,
    pub beta_nlos: f64,
    pub a: f64,
    pub b: f64,
}

pub fn elevation_deg(ground: [f64; 3], air: [f64; 3]) -> f64 {
    let horiz = ((air[0] - ground[0]).powi(2) + (air[1] - ground[1]).powi(2)).sqrt();
    (air[2] - ground[2]).atan2(horiz) * 180.0 / std::f64::consts::PI
}

pub fn distance(p: [f64; 3], q: [f64; 3]) -> f64 {
    ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt()
}

pub fn fspl_db(f_c: f64, d: f64) -> f64 {
    let ratio = 4.0 * std::f64::consts::PI * f_c * d / C;
    10.0 * (ratio * ratio).log10()
}

pub fn p_los(a: f64, b: f64, psi: f64) -> f64 {
    1.0 / (1.0 + a * (b * (a - psi)).exp())
}

pub fn loss_db(l: &Link, ground: [f64; 3], air: [f64; 3]) -> f64 {
    let d = distance(ground, air);
    let fs = fspl_db(l.f_c, d);
    let p = p_los(l.a, l.b, elevation_deg(ground, air));
    (fs + l.beta_nlos) + p * (l.beta_los - l.beta_nlos)
}

pub fn gain(l: &Link, ground: [f64; 3], air: [f64; 3]) -> f64 {
    (-loss_db(l, ground, air) * std::f64::consts::LN_10 / 10.0).exp()
}

/// SINR at `user` from `uavs[serving]` with all other UAVs interfering.
pub fn sinr(l: &Link, uavs: &[[f64; 3]], serving: usize, p_w: f64, noise: f64, user: [f64; 3]) -> f64 {
    let rx: Vec<f64> = uavs.iter().map(|&q| p_w * gain(l, user, q)).collect();
    let interference: f64 = rx.iter().enumerate().filter(|&(i, _)| i != serving).map(|(_, x)| x).sum();
    rx[serving] / (noise + interference)
}

pub fn snr_backhaul(l: &Link, ugv: [f64; 3], uav: [f64; 3], p_w: f64, noise: f64) -> f64 {
    p_w * gain(l, ugv, uav) / noise
}

pub fn rate(bandwidth: f64, sinr: f64) -> f64 {
    bandwidth * (1.0 + sinr).ln() / std::f64::consts::LN_2
}
