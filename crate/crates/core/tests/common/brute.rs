//! Exhaustive association search for small instances.

use rand::Rng;
use uavnet::channel::{BandwidthPolicy, ChannelParams};
use uavnet::network::{self, AssociationState, Geometry};
use uavnet::scenario::QoSParams;

use super::calc;

pub struct Instance {
    pub uavs: Vec<[f64; 3]>,
    pub ugvs: Vec<[f64; 3]>,
    pub users: Vec<[f64; 3]>,
}

pub fn random_instance(r: &mut impl Rng, n_ugv: Option<usize>) -> Instance {
    let n_uav = r.gen_range(1..=2);
    let n_ugv = n_ugv.unwrap_or_else(|| r.gen_range(1..=2));
    let n_user = r.gen_range(1..=4);
    let g = |r: &mut dyn rand::RngCore| [r.gen_range(0.0..1500.0), r.gen_range(0.0..1500.0), 0.0];
    Instance {
        uavs: (0..n_uav)
            .map(|_| [r.gen_range(0.0..1500.0), r.gen_range(0.0..1500.0), r.gen_range(30.0..150.0)])
            .collect(),
        ugvs: (0..n_ugv).map(|_| g(r)).collect(),
        users: (0..n_user).map(|_| g(r)).collect(),
    }
}

/// Sum rate of an association, computed with the reference calculator.
/// Serving a user from a UAV without a feasible backhaul is infeasible.
pub fn oracle_sum_rate(
    inst: &Instance,
    p: &ChannelParams,
    qos: &QoSParams,
    pairing: &[Option<usize>],
    serve: &[Option<usize>],
) -> f64 {
    let link = super::a2g(p);
    let feasible: Vec<bool> = (0..inst.uavs.len())
        .map(|u| {
            pairing.iter().position(|&x| x == Some(u)).is_some_and(|m| {
                calc::snr_backhaul(&super::g2a(p), inst.ugvs[m], inst.uavs[u], p.p_ugv_w, p.noise_w)
                    >= qos.sinr_backhaul_min
            })
        })
        .collect();
    let load = |u: usize| serve.iter().filter(|&&s| s == Some(u)).count() as f64;
    serve
        .iter()
        .enumerate()
        .filter_map(|(k, s)| s.map(|u| (k, u)))
        .map(|(k, u)| {
            if !feasible[u] {
                return f64::NEG_INFINITY;
            }
            let bw = match p.bandwidth_policy {
                BandwidthPolicy::PerLink => p.bandwidth_hz,
                BandwidthPolicy::EqualSplit => p.bandwidth_hz / load(u),
            };
            calc::rate(bw, calc::sinr(&link, &inst.uavs, u, p.p_uav_w, p.noise_w, inst.users[k]))
        })
        .sum()
}

pub fn assignments(len: usize, options: usize) -> Vec<Vec<Option<usize>>> {
    // Each slot picks one of `options` targets or none.
    let mut out = vec![vec![]];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|v: Vec<Option<usize>>| {
                (0..=options).map(move |o| {
                    let mut w = v.clone();
                    w.push(if o == options { None } else { Some(o) });
                    w
                })
            })
            .collect();
    }
    out
}

/// Best sum rate over every feasible user association for a fixed pairing.
pub fn alpha_optimum(inst: &Instance, p: &ChannelParams, qos: &QoSParams, pairing: &[Option<usize>]) -> f64 {
    assignments(inst.users.len(), inst.uavs.len())
        .iter()
        .map(|serve| oracle_sum_rate(inst, p, qos, pairing, serve))
        .fold(0.0, f64::max)
}

/// Best sum rate over every pairing (each UAV fed by at most one UGV) as well.
pub fn joint_optimum(inst: &Instance, p: &ChannelParams, qos: &QoSParams) -> f64 {
    let u_n = inst.uavs.len();
    assignments(inst.ugvs.len(), u_n)
        .into_iter()
        .filter(|pairing| {
            let mut seen = vec![false; u_n];
            !pairing.iter().flatten().any(|&u| std::mem::replace(&mut seen[u], true))
        })
        .map(|pairing| alpha_optimum(inst, p, qos, &pairing))
        .fold(0.0, f64::max)
}

pub struct Greedy {
    pub assoc: AssociationState,
    pub pairing: Vec<Option<usize>>,
    pub rate: f64,
}

pub fn greedy(inst: &Instance, p: &ChannelParams, qos: &QoSParams) -> Greedy {
    let geom = Geometry { uavs: &inst.uavs, ugvs: &inst.ugvs, users: &inst.users };
    let assoc = network::associate(&geom, p, qos).unwrap();
    let pairing: Vec<Option<usize>> = assoc.x.iter().map(|row| row.iter().position(|&v| v == 1)).collect();
    let serve: Vec<Option<usize>> = (0..inst.users.len()).map(|k| assoc.serving_uav(k)).collect();
    let rate = oracle_sum_rate(inst, p, qos, &pairing, &serve);
    Greedy { assoc, pairing, rate }
}

pub fn ratio(got: f64, opt: f64) -> f64 {
    if opt == 0.0 {
        1.0
    } else {
        got / opt
    }
}
