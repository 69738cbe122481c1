//! Static world description: the road graph UGVs drive on, fleet and QoS
//! parameters, and the task distribution used for meta-learning.

use std::collections::VecDeque;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelParams;
use crate::env::RewardWeights;
use crate::error::{Error, Result};
use crate::geom::{dist2, Point2};

/// Edge lengths must match endpoint distance to this precision.
pub const LENGTH_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeSpec {
    pub from: usize,
    pub to: usize,
    pub speed_limit: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GraphSpec {
    pub nodes: Vec<Point2>,
    pub edges: Vec<EdgeSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub length: f64,
    pub speed_limit: f64,
}

/// Road segments are two-way: a UGV may traverse an edge in either direction.
/// Positions on an edge are measured as arclength from `from`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoadGraph {
    nodes: Vec<Point2>,
    edges: Vec<Edge>,
    adjacency: Vec<Vec<usize>>,
}

/// A point on the road network.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphPoint {
    pub edge: usize,
    pub s: f64,
    pub point: Point2,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub edge: usize,
    pub s: f64,
    pub point: Point2,
    pub distance: f64,
}

impl RoadGraph {
    pub fn build(spec: &GraphSpec) -> Result<Self> {
        if spec.nodes.is_empty() || spec.edges.is_empty() {
            return Err(Error::EmptyGraph);
        }
        let n = spec.nodes.len();
        let mut edges = Vec::with_capacity(spec.edges.len());
        let mut adjacency = vec![Vec::new(); n];
        for (id, e) in spec.edges.iter().enumerate() {
            for node in [e.from, e.to] {
                if node >= n {
                    return Err(Error::DanglingNode { edge: id, node, nodes: n });
                }
            }
            if e.from == e.to {
                return Err(Error::SelfLoop { edge: id, node: e.from });
            }
            let length = dist2(spec.nodes[e.from], spec.nodes[e.to]);
            if length <= LENGTH_TOLERANCE {
                return Err(Error::ZeroLengthEdge { edge: id, from: e.from, to: e.to });
            }
            if !(e.speed_limit > 0.0 && e.speed_limit.is_finite()) {
                return Err(Error::BadSpeedLimit { edge: id, limit: e.speed_limit });
            }
            adjacency[e.from].push(id);
            adjacency[e.to].push(id);
            edges.push(Edge { from: e.from, to: e.to, length, speed_limit: e.speed_limit });
        }

        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(v) = queue.pop_front() {
            for &eid in &adjacency[v] {
                let e = &edges[eid];
                let w = if e.from == v { e.to } else { e.from };
                if !seen[w] {
                    seen[w] = true;
                    queue.push_back(w);
                }
            }
        }
        if let Some(node) = seen.iter().position(|s| !s) {
            return Err(Error::DisconnectedGraph { node });
        }

        Ok(Self { nodes: spec.nodes.clone(), edges, adjacency })
    }

    /// `n × n` grid of intersections spanning `[0, width] × [0, height]`,
    /// every segment with the same speed limit.
    pub fn manhattan(n: usize, width: f64, height: f64, speed_limit: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::param("grid size", "need at least 2 intersections per side"));
        }
        let step_x = width / (n - 1) as f64;
        let step_y = height / (n - 1) as f64;
        let mut nodes = Vec::with_capacity(n * n);
        for j in 0..n {
            for i in 0..n {
                nodes.push([i as f64 * step_x, j as f64 * step_y]);
            }
        }
        let idx = |i: usize, j: usize| j * n + i;
        let mut edges = Vec::new();
        for j in 0..n {
            for i in 0..n - 1 {
                edges.push(EdgeSpec { from: idx(i, j), to: idx(i + 1, j), speed_limit });
            }
        }
        for i in 0..n {
            for j in 0..n - 1 {
                edges.push(EdgeSpec { from: idx(i, j), to: idx(i, j + 1), speed_limit });
            }
        }
        Self::build(&GraphSpec { nodes, edges })
    }

    pub fn nodes(&self) -> &[Point2] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Edges incident to `node`, in ascending id order.
    pub fn incident(&self, node: usize) -> &[usize] {
        &self.adjacency[node]
    }

    pub fn max_speed_limit(&self) -> f64 {
        self.edges.iter().map(|e| e.speed_limit).fold(0.0, f64::max)
    }

    /// Coordinates of arclength `s` along `edge`; the endpoints are returned
    /// exactly when `s` sits on them.
    pub fn point_on(&self, edge: usize, s: f64) -> Point2 {
        let e = &self.edges[edge];
        let a = self.nodes[e.from];
        let b = self.nodes[e.to];
        if s <= 0.0 {
            return a;
        }
        if s >= e.length {
            return b;
        }
        let t = s / e.length;
        [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
    }

    /// Graph position of `node`, expressed on its lowest-id incident edge.
    pub fn at_node(&self, node: usize) -> GraphPoint {
        let edge = self.adjacency[node][0];
        let e = &self.edges[edge];
        let s = if e.from == node { 0.0 } else { e.length };
        GraphPoint { edge, s, point: self.nodes[node] }
    }

    /// Closest point of the network to `point`. Ties go to the lowest edge id.
    pub fn project(&self, point: Point2) -> Projection {
        let mut best: Option<Projection> = None;
        for (id, e) in self.edges.iter().enumerate() {
            let a = self.nodes[e.from];
            let b = self.nodes[e.to];
            let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
            let t = (((point[0] - a[0]) * dx + (point[1] - a[1]) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
            let s = t * e.length;
            let p = self.point_on(id, s);
            let distance = dist2(p, point);
            if best.is_none_or(|b| distance < b.distance) {
                best = Some(Projection { edge: id, s, point: p, distance });
            }
        }
        best.expect("validated graph has edges")
    }

    pub fn distance_to(&self, point: Point2) -> f64 {
        self.project(point).distance
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QoSParams {
    /// R_k^min, bit/s.
    pub r_min: f64,
    /// SINR_u^min on the UGV→UAV backhaul, linear.
    pub sinr_backhaul_min: f64,
    /// Minimum UAV separation, meters.
    pub d_safe: f64,
}

impl Default for QoSParams {
    fn default() -> Self {
        Self { r_min: 0.5e6, sinr_backhaul_min: 10.0, d_safe: 10.0 }
    }
}

impl QoSParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in
            [("qos.r_min", self.r_min), ("qos.sinr_backhaul_min", self.sinr_backhaul_min), ("qos.d_safe", self.d_safe)]
        {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(name, format!("must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FleetParams {
    pub num_ugv: usize,
    pub num_uav: usize,
    pub num_users: usize,
    pub num_slots: usize,
    /// Δ, seconds.
    pub slot_duration: f64,
    pub v_max_ugv: f64,
    pub v_max_uav: f64,
    pub z_min: f64,
    pub z_max: f64,
}

impl Default for FleetParams {
    fn default() -> Self {
        Self {
            num_ugv: 4,
            num_uav: 4,
            num_users: 100,
            num_slots: 25,
            slot_duration: 10.0,
            v_max_ugv: 20.0,
            v_max_uav: 30.0,
            z_min: 30.0,
            z_max: 150.0,
        }
    }
}

impl FleetParams {
    pub fn validate(&self) -> Result<()> {
        for (name, n) in [
            ("fleet.num_ugv", self.num_ugv),
            ("fleet.num_uav", self.num_uav),
            ("fleet.num_users", self.num_users),
            ("fleet.num_slots", self.num_slots),
        ] {
            if n == 0 {
                return Err(Error::param(name, "must be at least 1"));
            }
        }
        for (name, v) in [
            ("fleet.slot_duration", self.slot_duration),
            ("fleet.v_max_ugv", self.v_max_ugv),
            ("fleet.v_max_uav", self.v_max_uav),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(name, format!("must be positive, got {v}")));
            }
        }
        if !(self.z_min > 0.0 && self.z_min < self.z_max) {
            return Err(Error::InvalidRange { name: "fleet altitude", lo: self.z_min, hi: self.z_max });
        }
        Ok(())
    }

    /// T = NΔ.
    pub fn horizon_seconds(&self) -> f64 {
        self.num_slots as f64 * self.slot_duration
    }
}

/// Rectangular service area anchored at the origin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Area {
    pub width: f64,
    pub height: f64,
}

impl Area {
    pub fn contains(&self, p: Point2) -> bool {
        (0.0..=self.width).contains(&p[0]) && (0.0..=self.height).contains(&p[1])
    }

    pub fn diagonal(&self) -> f64 {
        self.width.hypot(self.height)
    }
}

/// p(T): how tasks differ from one another.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskDistribution {
    pub area: Area,
    /// Inclusive user count range.
    pub user_count: [usize; 2],
    /// Placement rectangle for users, must lie inside `area`.
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
    /// When set, each task draws a hotspot center in the placement rectangle
    /// and scatters its users uniformly over a disc of this radius around it,
    /// clamped to the rectangle.
    #[serde(default)]
    pub hotspot_radius: Option<f64>,
    pub channel_nominal: ChannelParams,
    /// Relative jitter applied to both S-curves' parameters, e.g. 0.2 for ±20%.
    pub channel_jitter: f64,
    /// R_k^min range, bit/s.
    pub r_min_range: [f64; 2],
    pub qos_nominal: QoSParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: u64,
    pub users: Vec<Point2>,
    pub channel: ChannelParams,
    pub qos: QoSParams,
    pub seed: u64,
}

impl TaskDistribution {
    pub fn validate(&self) -> Result<()> {
        let [k_lo, k_hi] = self.user_count;
        if k_lo == 0 || k_lo > k_hi {
            return Err(Error::InvalidRange { name: "user_count", lo: k_lo as f64, hi: k_hi as f64 });
        }
        for (name, r, lim) in [("x_range", self.x_range, self.area.width), ("y_range", self.y_range, self.area.height)]
        {
            if !(r[0] <= r[1] && r[0] >= 0.0 && r[1] <= lim) {
                return Err(Error::InvalidRange { name, lo: r[0], hi: r[1] });
            }
        }
        if !(0.0..1.0).contains(&self.channel_jitter) {
            return Err(Error::InvalidRange {
                name: "channel_jitter",
                lo: -self.channel_jitter,
                hi: self.channel_jitter,
            });
        }
        if let Some(r) = self.hotspot_radius {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::param("hotspot_radius", format!("must be positive, got {r}")));
            }
        }
        let [r_lo, r_hi] = self.r_min_range;
        if !(r_lo > 0.0 && r_lo <= r_hi) {
            return Err(Error::InvalidRange { name: "r_min_range", lo: r_lo, hi: r_hi });
        }
        self.channel_nominal.validate()?;
        self.qos_nominal.validate()
    }

    /// Deterministic in `seed`.
    pub fn sample(&self, seed: u64) -> Result<Task> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [k_lo, k_hi] = self.user_count;
        let k = rng.gen_range(k_lo..=k_hi);
        let users = match self.hotspot_radius {
            None => (0..k).map(|_| [uniform(&mut rng, self.x_range), uniform(&mut rng, self.y_range)]).collect(),
            Some(radius) => {
                let c = [uniform(&mut rng, self.x_range), uniform(&mut rng, self.y_range)];
                (0..k)
                    .map(|_| {
                        let r = radius * rng.gen::<f64>().sqrt();
                        let theta = rng.gen_range(0.0..std::f64::consts::TAU);
                        [
                            (c[0] + r * theta.cos()).clamp(self.x_range[0], self.x_range[1]),
                            (c[1] + r * theta.sin()).clamp(self.y_range[0], self.y_range[1]),
                        ]
                    })
                    .collect()
            }
        };

        let j = self.channel_jitter;
        let mut channel = self.channel_nominal;
        for v in [&mut channel.g2a.a, &mut channel.g2a.b, &mut channel.a2g.a, &mut channel.a2g.b] {
            *v *= uniform(&mut rng, [1.0 - j, 1.0 + j]);
        }
        let qos = QoSParams { r_min: uniform(&mut rng, self.r_min_range), ..self.qos_nominal };
        Ok(Task { id: seed, users, channel, qos, seed })
    }
}

fn uniform(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

/// Fixed world shared by every task of a scenario.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub graph: RoadGraph,
    pub fleet: FleetParams,
    pub area: Area,
    pub reward: RewardWeights,
}
