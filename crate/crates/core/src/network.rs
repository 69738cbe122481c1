//! Associations, rates and the constraint checker.
//!
//! Associations are chosen greedily from geometry: UGVs pair with UAVs in
//! descending backhaul-SNR order, then each user attaches to the UAV with the
//! best SINR among those whose backhaul clears the threshold. All ties go to
//! the lowest index.

use serde::Serialize;

use crate::channel::{self, BandwidthPolicy, ChannelParams};
use crate::error::{Error, Result};
use crate::geom::{dist2, dist3, Point3};
use crate::scenario::{FleetParams, GraphPoint, QoSParams, RoadGraph};

/// Positions at one time slot. Ground entities carry z = 0.
#[derive(Clone, Copy, Debug)]
pub struct Geometry<'a> {
    pub uavs: &'a [Point3],
    pub ugvs: &'a [Point3],
    pub users: &'a [Point3],
}

/// α (K×U) and x (M×U). Stored as bytes so corrupted matrices stay representable.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct AssociationState {
    pub alpha: Vec<Vec<u8>>,
    pub x: Vec<Vec<u8>>,
}

impl AssociationState {
    pub fn empty(users: usize, ugvs: usize, uavs: usize) -> Self {
        Self { alpha: vec![vec![0; uavs]; users], x: vec![vec![0; uavs]; ugvs] }
    }

    pub fn serving_uav(&self, user: usize) -> Option<usize> {
        self.alpha[user].iter().position(|&a| a == 1)
    }

    pub fn paired_ugv(&self, uav: usize) -> Option<usize> {
        self.x.iter().position(|row| row[uav] == 1)
    }

    pub fn num_uavs(&self) -> usize {
        self.x.first().or(self.alpha.first()).map_or(0, Vec::len)
    }

    /// C9–C11 hold.
    pub fn is_valid(&self) -> bool {
        structural_violations(self) == [0, 0, 0]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateReport {
    /// R_k, bit/s.
    pub per_user_rate: Vec<f64>,
    /// SINR from the serving UAV, 0 when unassociated.
    pub per_user_sinr: Vec<f64>,
    pub per_uav_served: Vec<usize>,
    /// SINR_{m,u} of each UAV's paired UGV, 0 when unpaired.
    pub per_uav_backhaul_sinr: Vec<f64>,
    pub sum_rate: f64,
}

/// M×U backhaul SNRs assuming each pair were associated.
pub fn backhaul_matrix(geom: &Geometry<'_>, params: &ChannelParams) -> Result<Vec<Vec<f64>>> {
    geom.ugvs.iter().map(|&m| geom.uavs.iter().map(|&u| channel::sinr_backhaul(params, m, u, true)).collect()).collect()
}

/// K×U SINR of each user under each candidate serving UAV.
pub fn user_sinr_matrix(geom: &Geometry<'_>, params: &ChannelParams) -> Result<Vec<Vec<f64>>> {
    let powers = vec![params.p_uav_w; geom.uavs.len()];
    geom.users
        .iter()
        .map(|&k| (0..geom.uavs.len()).map(|u| channel::sinr_user(params, u, geom.uavs, &powers, k)).collect())
        .collect()
}

pub fn associate(geom: &Geometry<'_>, params: &ChannelParams, qos: &QoSParams) -> Result<AssociationState> {
    let (k_n, m_n, u_n) = (geom.users.len(), geom.ugvs.len(), geom.uavs.len());
    let mut state = AssociationState::empty(k_n, m_n, u_n);

    let snr = backhaul_matrix(geom, params)?;
    let mut pairs: Vec<(f64, usize, usize)> =
        (0..m_n).flat_map(|m| (0..u_n).map(move |u| (m, u))).map(|(m, u)| (snr[m][u], m, u)).collect();
    // Stable sort keeps (m, u) index order among equal SNRs.
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut ugv_used = vec![false; m_n];
    let mut backhaul = vec![0.0; u_n];
    let mut uav_used = vec![false; u_n];
    for (s, m, u) in pairs {
        if !ugv_used[m] && !uav_used[u] {
            ugv_used[m] = true;
            uav_used[u] = true;
            backhaul[u] = s;
            state.x[m][u] = 1;
        }
    }

    let feasible: Vec<bool> = backhaul.iter().map(|&s| s >= qos.sinr_backhaul_min).collect();
    if !feasible.iter().any(|&f| f) {
        return Ok(state);
    }
    let sinr = user_sinr_matrix(geom, params)?;
    for (k, row) in sinr.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (u, &s) in row.iter().enumerate() {
            if feasible[u] && best.is_none_or(|(_, b)| s > b) {
                best = Some((u, s));
            }
        }
        if let Some((u, _)) = best {
            state.alpha[k][u] = 1;
        }
    }
    Ok(state)
}

pub fn evaluate_rates(geom: &Geometry<'_>, assoc: &AssociationState, params: &ChannelParams) -> Result<RateReport> {
    let (k_n, m_n, u_n) = (geom.users.len(), geom.ugvs.len(), geom.uavs.len());
    if assoc.alpha.len() != k_n || assoc.x.len() != m_n {
        return Err(Error::DimensionMismatch {
            what: "association rows",
            expected: k_n + m_n,
            got: assoc.alpha.len() + assoc.x.len(),
        });
    }
    let mut per_uav_served = vec![0usize; u_n];
    let serving: Vec<Option<usize>> = (0..k_n).map(|k| assoc.serving_uav(k)).collect();
    for u in serving.iter().flatten() {
        per_uav_served[*u] += 1;
    }

    let powers = vec![params.p_uav_w; u_n];
    let mut per_user_rate = vec![0.0; k_n];
    let mut per_user_sinr = vec![0.0; k_n];
    for (k, s) in serving.iter().enumerate() {
        if let Some(u) = *s {
            let sinr = channel::sinr_user(params, u, geom.uavs, &powers, geom.users[k])?;
            let bandwidth = match params.bandwidth_policy {
                BandwidthPolicy::PerLink => params.bandwidth_hz,
                BandwidthPolicy::EqualSplit => params.bandwidth_hz / per_uav_served[u] as f64,
            };
            per_user_sinr[k] = sinr;
            per_user_rate[k] = channel::rate_with_bandwidth(bandwidth, true, sinr);
        }
    }

    let mut per_uav_backhaul_sinr = vec![0.0; u_n];
    for (u, b) in per_uav_backhaul_sinr.iter_mut().enumerate() {
        if let Some(m) = assoc.paired_ugv(u) {
            *b = channel::sinr_backhaul(params, geom.ugvs[m], geom.uavs[u], true)?;
        }
    }
    let sum_rate = per_user_rate.iter().sum();
    Ok(RateReport { per_user_rate, per_user_sinr, per_uav_served, per_uav_backhaul_sinr, sum_rate })
}

pub const NUM_CONSTRAINTS: usize = 11;

/// Numerical slack for the projection-enforced constraints (C3, C5, C6).
pub const NUMERIC_TOLERANCE: f64 = 1e-9;
/// Distance from the road graph below which a UGV counts as on-graph (C7).
pub const GRAPH_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct ConstraintStatus {
    pub satisfied: bool,
    pub violation: f64,
}

/// Violation units: C1 linear SINR shortfall summed over UAVs, C2 bit/s
/// summed over users, C3/C6 m/s, C4/C5/C7/C8 meters, C9–C11 offending-entry
/// counts.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConstraintReport {
    pub slot: usize,
    pub status: [ConstraintStatus; NUM_CONSTRAINTS],
}

impl ConstraintReport {
    pub fn from_violations(slot: usize, v: [f64; NUM_CONSTRAINTS]) -> Self {
        let status = v.map(|x| {
            let x = if x > 0.0 { x } else { 0.0 };
            ConstraintStatus { satisfied: x == 0.0, violation: x }
        });
        Self { slot, status }
    }

    /// Violation of constraint `c` (1-based, C1…C11).
    pub fn violation(&self, c: usize) -> f64 {
        self.status[c - 1].violation
    }

    pub fn satisfied(&self, c: usize) -> bool {
        self.status[c - 1].satisfied
    }

    pub fn violations(&self) -> [f64; NUM_CONSTRAINTS] {
        self.status.map(|s| s.violation)
    }
}

/// One slot's worth of data for the checker.
#[derive(Clone, Copy, Debug)]
pub struct SlotView<'a> {
    pub uavs: &'a [Point3],
    pub ugvs: &'a [GraphPoint],
    pub assoc: &'a AssociationState,
    pub rates: &'a RateReport,
}

#[derive(Clone, Debug, Default)]
pub struct EpisodeHistory {
    pub uavs: Vec<Vec<Point3>>,
    pub ugvs: Vec<Vec<GraphPoint>>,
    pub associations: Vec<AssociationState>,
    pub rates: Vec<RateReport>,
}

impl EpisodeHistory {
    pub fn len(&self) -> usize {
        self.uavs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.uavs.is_empty()
    }

    pub fn view(&self, n: usize) -> SlotView<'_> {
        SlotView { uavs: &self.uavs[n], ugvs: &self.ugvs[n], assoc: &self.associations[n], rates: &self.rates[n] }
    }
}

#[derive(Clone, Debug)]
pub struct EpisodeConstraints {
    pub per_slot: Vec<ConstraintReport>,
    /// Violations summed over slots, with C4/C8 from the terminal slot.
    pub summary: ConstraintReport,
}

fn snap(x: f64, tol: f64) -> f64 {
    if x > tol {
        x
    } else {
        0.0
    }
}

fn structural_violations(a: &AssociationState) -> [usize; 3] {
    let c9 = a.alpha.iter().filter(|r| r.iter().map(|&v| v as usize).sum::<usize>() > 1).count();
    let c10 = a.x.iter().filter(|r| r.iter().map(|&v| v as usize).sum::<usize>() > 1).count();
    let c11 = a.alpha.iter().chain(a.x.iter()).flatten().filter(|&&v| v > 1).count();
    [c9, c10, c11]
}

/// Constraint status at one slot. `prev` enables the speed checks, `start`
/// (given only for the terminal slot) enables the return-to-start checks.
pub fn check_slot(
    slot: usize,
    prev: Option<SlotView<'_>>,
    cur: SlotView<'_>,
    start: Option<SlotView<'_>>,
    qos: &QoSParams,
    fleet: &FleetParams,
    graph: &RoadGraph,
) -> ConstraintReport {
    let mut v = [0.0; NUM_CONSTRAINTS];

    v[0] = cur.rates.per_uav_backhaul_sinr.iter().map(|&s| (qos.sinr_backhaul_min - s).max(0.0)).sum();
    v[1] = cur.rates.per_user_rate.iter().map(|&r| (qos.r_min - r).max(0.0)).sum();

    if let Some(p) = prev {
        let dt = fleet.slot_duration;
        v[2] = p
            .uavs
            .iter()
            .zip(cur.uavs)
            .map(|(&a, &b)| snap(dist3(a, b) / dt - fleet.v_max_uav, NUMERIC_TOLERANCE))
            .sum();
        v[5] = p
            .ugvs
            .iter()
            .zip(cur.ugvs)
            .map(|(a, b)| {
                let edges = graph.edges();
                let road = edges[a.edge].speed_limit.max(edges[b.edge].speed_limit);
                let limit = fleet.v_max_ugv.min(road);
                snap(dist2(a.point, b.point) / dt - limit, NUMERIC_TOLERANCE)
            })
            .sum();
    }

    if let Some(s) = start {
        v[3] = s.uavs.iter().zip(cur.uavs).map(|(&a, &b)| dist3(a, b)).sum();
        v[7] = s.ugvs.iter().zip(cur.ugvs).map(|(a, b)| dist2(a.point, b.point)).sum();
    }

    let mut c5 = 0.0;
    for i in 0..cur.uavs.len() {
        for j in i + 1..cur.uavs.len() {
            c5 += snap(qos.d_safe - dist3(cur.uavs[i], cur.uavs[j]), NUMERIC_TOLERANCE);
        }
    }
    v[4] = c5;

    v[6] = cur.ugvs.iter().map(|g| snap(graph.distance_to(g.point), GRAPH_TOLERANCE)).sum();

    let [c9, c10, c11] = structural_violations(cur.assoc);
    v[8] = c9 as f64;
    v[9] = c10 as f64;
    v[10] = c11 as f64;

    ConstraintReport::from_violations(slot, v)
}

/// Checks C1–C11 over an episode whose history covers slots `0..=N`.
pub fn check_constraints(
    history: &EpisodeHistory,
    qos: &QoSParams,
    fleet: &FleetParams,
    graph: &RoadGraph,
) -> Result<EpisodeConstraints> {
    let n = history.uavs.len();
    for (what, len) in [
        ("UGV history", history.ugvs.len()),
        ("association history", history.associations.len()),
        ("rate history", history.rates.len()),
    ] {
        if len != n {
            return Err(Error::DimensionMismatch { what, expected: n, got: len });
        }
    }
    if n == 0 {
        return Err(Error::Empty("episode history"));
    }

    let mut per_slot = Vec::with_capacity(n);
    let mut total = [0.0; NUM_CONSTRAINTS];
    for slot in 0..n {
        let prev = (slot > 0).then(|| history.view(slot - 1));
        let start = (slot + 1 == n && n > 1).then(|| history.view(0));
        let r = check_slot(slot, prev, history.view(slot), start, qos, fleet, graph);
        for (t, x) in total.iter_mut().zip(r.violations()) {
            *t += x;
        }
        per_slot.push(r);
    }
    let summary = ConstraintReport::from_violations(n - 1, total);
    Ok(EpisodeConstraints { per_slot, summary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{EdgeSpec, GraphSpec};

    fn qos() -> QoSParams {
        QoSParams::default()
    }

    fn square() -> RoadGraph {
        RoadGraph::build(&GraphSpec {
            nodes: vec![[0.0, 0.0], [1000.0, 0.0], [1000.0, 1000.0], [0.0, 1000.0]],
            edges: (0..4).map(|i| EdgeSpec { from: i, to: (i + 1) % 4, speed_limit: 15.0 }).collect(),
        })
        .unwrap()
    }

    #[test]
    fn single_link_associates() {
        let p = ChannelParams::default();
        let uavs = [[100.0, 100.0, 100.0]];
        let ugvs = [[100.0, 50.0, 0.0]];
        let users = [[150.0, 100.0, 0.0]];
        let g = Geometry { uavs: &uavs, ugvs: &ugvs, users: &users };
        let a = associate(&g, &p, &qos()).unwrap();
        assert_eq!(a.alpha, vec![vec![1]]);
        assert_eq!(a.x, vec![vec![1]]);
    }

    #[test]
    fn infeasible_backhaul_leaves_users_unserved() {
        let p = ChannelParams::default();
        let uavs = [[0.0, 0.0, 100.0]];
        let ugvs = [[50_000.0, 0.0, 0.0]];
        let users = [[10.0, 0.0, 0.0], [20.0, 0.0, 0.0]];
        let g = Geometry { uavs: &uavs, ugvs: &ugvs, users: &users };
        let a = associate(&g, &p, &qos()).unwrap();
        assert!(a.alpha.iter().flatten().all(|&v| v == 0));
        let r = evaluate_rates(&g, &a, &p).unwrap();
        assert_eq!(r.sum_rate, 0.0);
        // x still records the pairing so C1 can report the shortfall.
        assert_eq!(a.x, vec![vec![1]]);
        let c = check_slot(
            0,
            None,
            SlotView { uavs: &uavs, ugvs: &[], assoc: &a, rates: &r },
            None,
            &qos(),
            &FleetParams::default(),
            &square(),
        );
        assert!(c.violation(1) > 0.0);
    }

    #[test]
    fn nearest_uav_wins_for_two_users() {
        let p = ChannelParams::default();
        let uavs = [[0.0, 0.0, 100.0], [1000.0, 0.0, 100.0]];
        let ugvs = [[0.0, 10.0, 0.0], [1000.0, 10.0, 0.0]];
        let users = [[50.0, 30.0, 0.0], [950.0, -20.0, 0.0]];
        let g = Geometry { uavs: &uavs, ugvs: &ugvs, users: &users };
        let a = associate(&g, &p, &qos()).unwrap();
        assert_eq!(a.alpha, vec![vec![1, 0], vec![0, 1]]);
        assert_eq!(a.x, vec![vec![1, 0], vec![0, 1]]);
    }

    #[test]
    fn single_user_unit_sinr_rate() {
        let mut p = ChannelParams::default();
        // Choose noise so the only link has SINR exactly 1.
        let uavs = [[0.0, 0.0, 100.0]];
        let users = [[0.0, 0.0, 0.0]];
        let gain = channel::expected_path_loss(&p, channel::LinkKind::A2G, uavs[0], users[0]).unwrap().gain_linear;
        p.noise_w = gain;
        let g = Geometry { uavs: &uavs, ugvs: &[], users: &users };
        let mut a = AssociationState::empty(1, 0, 1);
        a.alpha[0][0] = 1;
        let r = evaluate_rates(&g, &a, &p).unwrap();
        assert_eq!(r.sum_rate, 1e6);
    }

    #[test]
    fn equal_split_divides_bandwidth() {
        let mut p = ChannelParams { bandwidth_policy: BandwidthPolicy::EqualSplit, ..ChannelParams::default() };
        let uavs = [[0.0, 0.0, 100.0]];
        let users = [[10.0, 0.0, 0.0], [-10.0, 0.0, 0.0]];
        let g = Geometry { uavs: &uavs, ugvs: &[], users: &users };
        let mut a = AssociationState::empty(2, 0, 1);
        a.alpha[0][0] = 1;
        a.alpha[1][0] = 1;
        let split = evaluate_rates(&g, &a, &p).unwrap();
        p.bandwidth_policy = BandwidthPolicy::PerLink;
        let full = evaluate_rates(&g, &a, &p).unwrap();
        assert!((split.sum_rate * 2.0 - full.sum_rate).abs() < 1e-6);
    }

    fn static_history(n: usize, uavs: Vec<Point3>, graph: &RoadGraph) -> EpisodeHistory {
        let ugvs = vec![graph.at_node(0)];
        let a = AssociationState::empty(0, 1, uavs.len());
        let r = RateReport {
            per_user_rate: vec![],
            per_user_sinr: vec![],
            per_uav_served: vec![0; uavs.len()],
            per_uav_backhaul_sinr: vec![1e6; uavs.len()],
            sum_rate: 0.0,
        };
        EpisodeHistory { uavs: vec![uavs; n], ugvs: vec![ugvs; n], associations: vec![a; n], rates: vec![r; n] }
    }

    #[test]
    fn stationary_episode_satisfies_motion_constraints() {
        let g = square();
        let h = static_history(5, vec![[10.0, 10.0, 50.0], [500.0, 500.0, 60.0]], &g);
        let c = check_constraints(&h, &qos(), &FleetParams::default(), &g).unwrap();
        for k in 3..=8 {
            assert!(c.summary.satisfied(k), "C{k}");
            assert_eq!(c.summary.violation(k), 0.0);
        }
    }

    #[test]
    fn close_uavs_violate_separation() {
        let g = square();
        let h = static_history(1, vec![[10.0, 10.0, 50.0], [13.0, 14.0, 50.0]], &g);
        let c = check_constraints(&h, &qos(), &FleetParams::default(), &g).unwrap();
        assert!((c.per_slot[0].violation(5) - 5.0).abs() < 1e-12);
        assert!(!c.per_slot[0].satisfied(5));
    }

    #[test]
    fn corrupted_associations_flagged() {
        let g = square();
        let mut h = static_history(1, vec![[10.0, 10.0, 50.0], [500.0, 10.0, 50.0]], &g);
        h.associations[0] = AssociationState { alpha: vec![vec![1, 1], vec![2, 0]], x: vec![vec![1, 1]] };
        let c = check_constraints(&h, &qos(), &FleetParams::default(), &g).unwrap();
        assert_eq!(c.summary.violation(9), 2.0);
        assert_eq!(c.summary.violation(10), 1.0);
        assert_eq!(c.summary.violation(11), 1.0);
        assert!(!h.associations[0].is_valid());
    }

    #[test]
    fn mismatched_history_rejected() {
        let g = square();
        let mut h = static_history(3, vec![[10.0, 10.0, 50.0]], &g);
        h.rates.pop();
        assert!(matches!(
            check_constraints(&h, &qos(), &FleetParams::default(), &g),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn off_graph_ugv_flagged() {
        let g = square();
        let mut h = static_history(1, vec![[10.0, 10.0, 50.0]], &g);
        h.ugvs[0][0].point = [500.0, 3.0];
        let c = check_constraints(&h, &qos(), &FleetParams::default(), &g).unwrap();
        assert!((c.summary.violation(7) - 3.0).abs() < 1e-12);
    }
}
