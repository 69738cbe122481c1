//! The decision process: world state, physical actions, constraint-respecting
//! kinematics and the per-slot reward.
//!
//! The transition is deterministic. UAV moves are clipped to the speed limit,
//! clamped to the area and altitude band, then scaled back along their direction until they keep
//! `d_safe` from every other UAV (processed in index order against the
//! current positions of the others). UGVs walk the road graph.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::linear_to_db;
use crate::error::{Error, Result};
use crate::geom::{dist2, dist3, lift, norm3, Point2, Point3};
use crate::network::{self, AssociationState, ConstraintReport, Geometry, RateReport, SlotView};
use crate::scenario::{GraphPoint, QoSParams, RoadGraph, Scenario, Task};

const PLACEMENT_ATTEMPTS: usize = 10_000;
const MAX_WALK_SEGMENTS: usize = 10_000;
/// SINR features are clamped to this dB range before scaling by 1/60.
const SINR_DB_RANGE: (f64, f64) = (-60.0, 120.0);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardWeights {
    /// Weight w on the per-user rate shortfall penalty.
    pub w: f64,
    /// Weight on the per-UAV backhaul shortfall penalty.
    pub w_backhaul: f64,
    /// Rates are divided by this before entering the reward (1e6 → Mbit/s).
    pub rate_unit: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self { w: 10.0, w_backhaul: 10.0, rate_unit: 1e6 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WorldState {
    pub slot: usize,
    pub uavs: Vec<Point3>,
    pub ugvs: Vec<GraphPoint>,
    pub users: Vec<Point2>,
    pub uav_start: Vec<Point3>,
    pub ugv_start: Vec<GraphPoint>,
    pub assoc: AssociationState,
    pub rates: RateReport,
}

impl WorldState {
    pub fn ugv_points3(&self) -> Vec<Point3> {
        self.ugvs.iter().map(|g| lift(g.point)).collect()
    }

    pub fn user_points3(&self) -> Vec<Point3> {
        self.users.iter().map(|&p| lift(p)).collect()
    }

    pub fn view(&self) -> SlotView<'_> {
        SlotView { uavs: &self.uavs, ugvs: &self.ugvs, assoc: &self.assoc, rates: &self.rates }
    }

    fn start_view<'a>(&'a self, assoc: &'a AssociationState, rates: &'a RateReport) -> SlotView<'a> {
        SlotView { uavs: &self.uav_start, ugvs: &self.ugv_start, assoc, rates }
    }
}

/// Physical action: UAV velocities (m/s), UGV headings and speeds (m/s).
#[derive(Clone, Debug, PartialEq)]
pub struct Action {
    pub uav_velocity: Vec<Point3>,
    pub ugv_heading: Vec<Point2>,
    pub ugv_speed: Vec<f64>,
}

impl Action {
    pub fn zeros(uavs: usize, ugvs: usize) -> Self {
        Self { uav_velocity: vec![[0.0; 3]; uavs], ugv_heading: vec![[0.0; 2]; ugvs], ugv_speed: vec![0.0; ugvs] }
    }

    pub fn dim(uavs: usize, ugvs: usize) -> usize {
        3 * uavs + 3 * ugvs
    }

    /// Maps a policy output in `[-1, 1]^(3U+3M)` to physical units: UAV
    /// components scale by `V_u^max`; UGV speed maps `[-1, 1] → [0, V_m^max]`.
    pub fn from_unit(a: &[f64], uavs: usize, ugvs: usize, v_uav: f64, v_ugv: f64) -> Result<Self> {
        let dim = Self::dim(uavs, ugvs);
        if a.len() != dim {
            return Err(Error::DimensionMismatch { what: "action", expected: dim, got: a.len() });
        }
        let (ua, ga) = a.split_at(3 * uavs);
        Ok(Self {
            uav_velocity: ua.chunks(3).map(|c| [c[0] * v_uav, c[1] * v_uav, c[2] * v_uav]).collect(),
            ugv_heading: ga.chunks(3).map(|c| [c[0], c[1]]).collect(),
            ugv_speed: ga.chunks(3).map(|c| (c[2] + 1.0) * 0.5 * v_ugv).collect(),
        })
    }

    fn is_finite(&self) -> bool {
        self.uav_velocity.iter().flatten().all(|v| v.is_finite())
            && self.ugv_heading.iter().flatten().all(|v| v.is_finite())
            && self.ugv_speed.iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub state: WorldState,
    pub reward: f64,
    pub constraints: ConstraintReport,
    pub done: bool,
}

/// Σ R_k − w·Σ Ξ_k − w_b·Σ B_u with normalized hinge penalties.
pub fn reward(rates: &RateReport, qos: &QoSParams, weights: &RewardWeights) -> f64 {
    let throughput: f64 = rates.per_user_rate.iter().sum::<f64>() / weights.rate_unit;
    let user_penalty: f64 = rates.per_user_rate.iter().map(|&r| ((qos.r_min - r) / qos.r_min).max(0.0)).sum();
    let backhaul_penalty: f64 = rates
        .per_uav_backhaul_sinr
        .iter()
        .map(|&s| ((qos.sinr_backhaul_min - s) / qos.sinr_backhaul_min).max(0.0))
        .sum();
    throughput - weights.w * user_penalty - weights.w_backhaul * backhaul_penalty
}

/// Return-to-start penalty applied at the final slot.
pub fn terminal_penalty(state: &WorldState, scenario: &Scenario) -> f64 {
    let uav: f64 = state.uavs.iter().zip(&state.uav_start).map(|(&a, &b)| dist3(a, b)).sum();
    let ugv: f64 = state.ugvs.iter().zip(&state.ugv_start).map(|(a, b)| dist2(a.point, b.point)).sum();
    scenario.reward.w * (uav + ugv) / scenario.area.diagonal()
}

fn link_state(
    uavs: &[Point3],
    ugvs: &[GraphPoint],
    users: &[Point2],
    task: &Task,
) -> Result<(AssociationState, RateReport)> {
    let ugv3: Vec<Point3> = ugvs.iter().map(|g| lift(g.point)).collect();
    let user3: Vec<Point3> = users.iter().map(|&p| lift(p)).collect();
    let geom = Geometry { uavs, ugvs: &ugv3, users: &user3 };
    let assoc = network::associate(&geom, &task.channel, &task.qos)?;
    let rates = network::evaluate_rates(&geom, &assoc, &task.channel)?;
    Ok((assoc, rates))
}

/// Initial state: UGVs on distinct seeded nodes, UAVs at seeded positions
/// pairwise at least `d_safe` apart.
pub fn reset(scenario: &Scenario, task: &Task, seed: u64) -> Result<WorldState> {
    let fleet = &scenario.fleet;
    let graph = &scenario.graph;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    if fleet.num_ugv > graph.nodes().len() {
        return Err(Error::Placement(format!(
            "{} UGVs need distinct nodes but the graph has {}",
            fleet.num_ugv,
            graph.nodes().len()
        )));
    }
    let mut nodes: Vec<usize> = (0..graph.nodes().len()).collect();
    let (chosen, _) = nodes.partial_shuffle(&mut rng, fleet.num_ugv);
    let ugvs: Vec<GraphPoint> = chosen.iter().map(|&n| graph.at_node(n)).collect();

    let mut uavs: Vec<Point3> = Vec::with_capacity(fleet.num_uav);
    for u in 0..fleet.num_uav {
        let mut placed = None;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let p = [
                rng.gen_range(0.0..=scenario.area.width),
                rng.gen_range(0.0..=scenario.area.height),
                rng.gen_range(fleet.z_min..=fleet.z_max),
            ];
            if uavs.iter().all(|&q| dist3(p, q) >= task.qos.d_safe) {
                placed = Some(p);
                break;
            }
        }
        match placed {
            Some(p) => uavs.push(p),
            None => {
                return Err(Error::Placement(format!(
                    "could not place UAV {u} at least {} m from the others",
                    task.qos.d_safe
                )))
            }
        }
    }

    let (assoc, rates) = link_state(&uavs, &ugvs, &task.users, task)?;
    Ok(WorldState {
        slot: 0,
        uav_start: uavs.clone(),
        ugv_start: ugvs.clone(),
        uavs,
        ugvs,
        users: task.users.clone(),
        assoc,
        rates,
    })
}

/// Largest `s ∈ [0, 1]` such that the straight move `from + s·delta` stays
/// at least `d_safe` from every obstacle, up to the first contact.
fn separation_scale(from: Point3, delta: Point3, obstacles: &[Point3], d_safe: f64, z: (f64, f64)) -> f64 {
    let at = |s: f64| {
        let mut p = [from[0] + s * delta[0], from[1] + s * delta[1], from[2] + s * delta[2]];
        p[2] = p[2].clamp(z.0, z.1);
        p
    };
    // Obstacles already inside the bubble at the start cannot be resolved by scaling.
    let relevant: Vec<Point3> = obstacles.iter().copied().filter(|&o| dist3(from, o) >= d_safe).collect();
    let feasible = |s: f64| relevant.iter().all(|&o| dist3(at(s), o) >= d_safe);

    let a = delta[0] * delta[0] + delta[1] * delta[1] + delta[2] * delta[2];
    if a == 0.0 {
        return 0.0;
    }
    let mut s_max: f64 = 1.0;
    for &o in &relevant {
        let w = [from[0] - o[0], from[1] - o[1], from[2] - o[2]];
        let b = 2.0 * (w[0] * delta[0] + w[1] * delta[1] + w[2] * delta[2]);
        let c = w[0] * w[0] + w[1] * w[1] + w[2] * w[2] - d_safe * d_safe;
        let disc = b * b - 4.0 * a * c;
        if b < 0.0 && disc >= 0.0 {
            let root = (-b - disc.sqrt()) / (2.0 * a);
            s_max = s_max.min(root.max(0.0));
        }
    }
    if feasible(s_max) {
        return s_max;
    }
    let (mut lo, mut hi) = (0.0, s_max);
    for _ in 0..64 {
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Advances a UGV along the road graph for `dt` seconds.
///
/// Mid-edge the UGV moves toward whichever endpoint the heading points at
/// (and stays put if the heading is perpendicular). On reaching a node it
/// takes the incident edge best aligned with the heading, ties to the lowest
/// edge id. Speed on each edge is `min(desired, edge limit, v_max)`.
pub fn walk_graph(graph: &RoadGraph, pos: GraphPoint, heading: Point2, speed: f64, v_max: f64, dt: f64) -> GraphPoint {
    let h_norm = heading[0].hypot(heading[1]);
    if !(speed > 0.0) || h_norm == 0.0 {
        return pos;
    }
    let h = [heading[0] / h_norm, heading[1] / h_norm];
    let nodes = graph.nodes();
    let edges = graph.edges();

    let mut edge = pos.edge;
    let mut s = pos.s;
    let mut t_left = dt;

    for _ in 0..MAX_WALK_SEGMENTS {
        if t_left <= 0.0 {
            break;
        }
        let e = &edges[edge];
        let at_node = if s <= 0.0 {
            Some(e.from)
        } else if s >= e.length {
            Some(e.to)
        } else {
            None
        };

        // Direction along `edge`: +1 toward `to`, −1 toward `from`.
        let dir = match at_node {
            Some(node) => {
                let mut best: Option<(f64, usize)> = None;
                for &cand in graph.incident(node) {
                    let c = &edges[cand];
                    let other = if c.from == node { c.to } else { c.from };
                    let d = [nodes[other][0] - nodes[node][0], nodes[other][1] - nodes[node][1]];
                    let dot = (d[0] * h[0] + d[1] * h[1]) / c.length;
                    if best.is_none_or(|(b, _)| dot > b) {
                        best = Some((dot, cand));
                    }
                }
                let (_, cand) = best.expect("validated graph nodes have incident edges");
                edge = cand;
                let c = &edges[cand];
                if c.from == node {
                    s = 0.0;
                    1.0
                } else {
                    s = c.length;
                    -1.0
                }
            }
            None => {
                let a = nodes[e.from];
                let b = nodes[e.to];
                let dot = (b[0] - a[0]) * h[0] + (b[1] - a[1]) * h[1];
                if dot > 0.0 {
                    1.0
                } else if dot < 0.0 {
                    -1.0
                } else {
                    break;
                }
            }
        };

        let e = &edges[edge];
        let v = speed.min(e.speed_limit).min(v_max);
        let room = if dir > 0.0 { e.length - s } else { s };
        let reach = v * t_left;
        if reach < room {
            s += dir * reach;
            t_left = 0.0;
        } else {
            s = if dir > 0.0 { e.length } else { 0.0 };
            t_left -= room / v;
        }
    }
    GraphPoint { edge, s, point: graph.point_on(edge, s) }
}

/// Deterministic transition `s_{n+1} = f(s_n, a_n)`.
pub fn step(scenario: &Scenario, task: &Task, state: &WorldState, action: &Action) -> Result<StepOutcome> {
    let fleet = &scenario.fleet;
    if state.slot >= fleet.num_slots {
        return Err(Error::EpisodeDone);
    }
    let (u_n, m_n) = (state.uavs.len(), state.ugvs.len());
    if action.uav_velocity.len() != u_n || action.ugv_heading.len() != m_n || action.ugv_speed.len() != m_n {
        return Err(Error::DimensionMismatch {
            what: "action",
            expected: Action::dim(u_n, m_n),
            got: 3 * action.uav_velocity.len() + 2 * action.ugv_heading.len() + action.ugv_speed.len(),
        });
    }
    if !action.is_finite() {
        return Err(Error::NonFinite("action"));
    }
    let dt = fleet.slot_duration;
    let z = (fleet.z_min, fleet.z_max);

    let mut uavs = state.uavs.clone();
    for i in 0..u_n {
        let mut v = action.uav_velocity[i];
        let speed = norm3(v);
        if speed > fleet.v_max_uav {
            let k = fleet.v_max_uav / speed;
            v = [v[0] * k, v[1] * k, v[2] * k];
        }
        let q = uavs[i];
        let target = [
            (q[0] + v[0] * dt).clamp(0.0, scenario.area.width),
            (q[1] + v[1] * dt).clamp(0.0, scenario.area.height),
            (q[2] + v[2] * dt).clamp(z.0, z.1),
        ];
        let delta = [target[0] - q[0], target[1] - q[1], target[2] - q[2]];
        let others: Vec<Point3> = uavs.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &p)| p).collect();
        let s = separation_scale(q, delta, &others, task.qos.d_safe, z);
        uavs[i] = [q[0] + s * delta[0], q[1] + s * delta[1], (q[2] + s * delta[2]).clamp(z.0, z.1)];
    }

    let ugvs: Vec<GraphPoint> = state
        .ugvs
        .iter()
        .enumerate()
        .map(|(m, &p)| walk_graph(&scenario.graph, p, action.ugv_heading[m], action.ugv_speed[m], fleet.v_max_ugv, dt))
        .collect();

    let (assoc, rates) = link_state(&uavs, &ugvs, &state.users, task)?;
    let next = WorldState {
        slot: state.slot + 1,
        uavs,
        ugvs,
        users: state.users.clone(),
        uav_start: state.uav_start.clone(),
        ugv_start: state.ugv_start.clone(),
        assoc,
        rates,
    };
    let done = next.slot == fleet.num_slots;

    let mut r = reward(&next.rates, &task.qos, &scenario.reward);
    if done {
        r -= terminal_penalty(&next, scenario);
    }
    let start = done.then(|| next.start_view(&state.assoc, &state.rates));
    let constraints =
        network::check_slot(next.slot, Some(state.view()), next.view(), start, &task.qos, fleet, &scenario.graph);
    if !r.is_finite() {
        return Err(Error::NonFinite("reward"));
    }
    Ok(StepOutcome { state: next, reward: r, constraints, done })
}

pub fn feature_dim(uavs: usize, ugvs: usize) -> usize {
    3 * uavs + 2 * ugvs + 2 * uavs + 1
}

/// Network input: normalized UAV positions, UGV positions, per-UAV served
/// fraction and mean served-user SINR (dB/60, clamped), slot fraction.
pub fn encode_state(state: &WorldState, scenario: &Scenario) -> Vec<f64> {
    let (w, h) = (scenario.area.width, scenario.area.height);
    let z_max = scenario.fleet.z_max;
    let u_n = state.uavs.len();
    let mut f = Vec::with_capacity(feature_dim(u_n, state.ugvs.len()));
    for q in &state.uavs {
        f.extend([q[0] / w, q[1] / h, q[2] / z_max]);
    }
    for g in &state.ugvs {
        f.extend([g.point[0] / w, g.point[1] / h]);
    }
    let k_n = state.users.len().max(1) as f64;
    let mut sinr_db_sum = vec![0.0; u_n];
    for (k, &s) in state.rates.per_user_sinr.iter().enumerate() {
        if let Some(u) = state.assoc.serving_uav(k) {
            let db = if s > 0.0 { linear_to_db(s) } else { SINR_DB_RANGE.0 };
            sinr_db_sum[u] += db.clamp(SINR_DB_RANGE.0, SINR_DB_RANGE.1);
        }
    }
    for &served in &state.rates.per_uav_served {
        f.push(served as f64 / k_n);
    }
    for (u, &served) in state.rates.per_uav_served.iter().enumerate() {
        let mean = if served > 0 { sinr_db_sum[u] / served as f64 } else { 0.0 };
        f.push(mean / 60.0);
    }
    f.push(state.slot as f64 / scenario.fleet.num_slots as f64);
    f
}

/// A single worker's private environment.
#[derive(Clone, Debug)]
pub struct Env {
    scenario: Arc<Scenario>,
    task: Arc<Task>,
    state: WorldState,
}

impl Env {
    pub fn new(scenario: Arc<Scenario>, task: Arc<Task>, seed: u64) -> Result<Self> {
        let state = reset(&scenario, &task, seed)?;
        Ok(Self { scenario, task, state })
    }

    pub fn reset(&mut self, seed: u64) -> Result<&WorldState> {
        self.state = reset(&self.scenario, &self.task, seed)?;
        Ok(&self.state)
    }

    pub fn step(&mut self, action: &Action) -> Result<StepOutcome> {
        let out = step(&self.scenario, &self.task, &self.state, action)?;
        self.state = out.state.clone();
        Ok(out)
    }

    /// Steps with a policy output in `[-1, 1]^action_dim`.
    pub fn step_unit(&mut self, a: &[f64]) -> Result<StepOutcome> {
        let f = &self.scenario.fleet;
        let action = Action::from_unit(a, f.num_uav, f.num_ugv, f.v_max_uav, f.v_max_ugv)?;
        self.step(&action)
    }

    pub fn features(&self) -> Vec<f64> {
        encode_state(&self.state, &self.scenario)
    }

    pub fn feature_dim(&self) -> usize {
        feature_dim(self.scenario.fleet.num_uav, self.scenario.fleet.num_ugv)
    }

    pub fn action_dim(&self) -> usize {
        Action::dim(self.scenario.fleet.num_uav, self.scenario.fleet.num_ugv)
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    pub fn task(&self) -> &Task {
        &self.task
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn is_done(&self) -> bool {
        self.state.slot >= self.scenario.fleet.num_slots
    }
}
