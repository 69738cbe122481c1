mod common;

use rand::Rng;
use uavnet::scenario::{EdgeSpec, GraphSpec, RoadGraph};

fn edge(from: usize, to: usize) -> EdgeSpec {
    EdgeSpec { from, to, speed_limit: 15.0 }
}

#[test]
fn validation_messages() {
    let dangling = GraphSpec { nodes: vec![[0.0, 0.0], [1.0, 0.0]], edges: vec![edge(0, 2)] };
    let msg = RoadGraph::build(&dangling).unwrap_err().to_string();
    assert!(msg.starts_with("dangling node reference"), "{msg}");

    let split =
        GraphSpec { nodes: vec![[0.0, 0.0], [1.0, 0.0], [5.0, 5.0], [6.0, 5.0]], edges: vec![edge(0, 1), edge(2, 3)] };
    let msg = RoadGraph::build(&split).unwrap_err().to_string();
    assert!(msg.starts_with("disconnected graph"), "{msg}");
}

#[test]
fn projection_agrees_with_dense_sampling_on_a_grid() {
    let g = RoadGraph::manhattan(4, 3000.0, 3000.0, 15.0).unwrap();
    let mut r = common::rng(3);
    for _ in 0..200 {
        let p = [r.gen_range(-200.0..3200.0), r.gen_range(-200.0..3200.0)];
        let proj = g.project(p);
        let mut best = f64::INFINITY;
        for (e, ed) in g.edges().iter().enumerate() {
            for i in 0..=2000 {
                let q = g.point_on(e, ed.length * i as f64 / 2000.0);
                best = best.min((q[0] - p[0]).hypot(q[1] - p[1]));
            }
        }
        // Dense samples are 0.5 m apart, so they can only overshoot the true distance.
        assert!(proj.distance <= best + 1e-9);
        assert!(best - proj.distance < 0.5);
        let back = g.point_on(proj.edge, proj.s);
        assert!((back[0] - proj.point[0]).abs() < 1e-9 && (back[1] - proj.point[1]).abs() < 1e-9);
    }
}

#[test]
fn builtin_presets_are_consistent() {
    for cfg in [common::smoke(), common::default_preset()] {
        cfg.validate().unwrap();
        let s = cfg.scenario().unwrap();
        for n in s.graph.nodes() {
            assert!(s.area.contains(*n));
        }
        let d = cfg.distribution();
        let t = d.sample(7).unwrap();
        assert_eq!(t, d.sample(7).unwrap());
        assert!(t.users.iter().all(|&u| s.area.contains(u)));
    }
    let d = common::default_preset();
    assert_eq!((d.fleet.num_uav, d.fleet.num_ugv, d.fleet.num_users, d.fleet.num_slots), (4, 4, 100, 25));
    assert_eq!((d.fleet.z_min, d.fleet.z_max, d.fleet.v_max_uav), (30.0, 150.0, 30.0));
    let s = common::smoke();
    assert_eq!((s.fleet.num_uav, s.fleet.num_ugv, s.fleet.num_users, s.fleet.num_slots), (1, 1, 5, 20));
    assert_eq!(s.network.hidden, vec![32, 32]);
    assert_eq!(s.scenario().unwrap().graph.nodes().len(), 4);
}

#[test]
fn hotspot_users_stay_near_their_center() {
    let d = common::smoke().distribution();
    let radius = d.hotspot_radius.unwrap();
    for seed in 0..50 {
        let t = d.sample(seed).unwrap();
        let n = t.users.len() as f64;
        let c = [t.users.iter().map(|u| u[0]).sum::<f64>() / n, t.users.iter().map(|u| u[1]).sum::<f64>() / n];
        for u in &t.users {
            // Any two users of a disc are at most a diameter apart.
            assert!((u[0] - c[0]).hypot(u[1] - c[1]) <= 2.0 * radius);
        }
    }
}
