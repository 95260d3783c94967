//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the verdict lines are never
//! captured. By default the process exits zero and reports the tally; set
//! `SCX_ACCEPTANCE_STRICT=1` to exit nonzero when any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use scx_core::fusion::{
    occupancy_update_weight, probability, ClassCalibration, FusionStrategy, PredictedState, PredictedVoxel, Prediction,
    ScLayer, SemanticClass, EMPTY_CLASS,
};
use scx_core::grid::{Bounds, GridConfig, Pose, VoxelIndex, VoxelState};
use scx_core::layered::{CollisionMode, MultiLayerMap, Source};
use scx_core::measured::MeasuredMap;
use scx_core::metrics::{expected_performance, observable_space, snapshot_with, time_to_goal, EvaluationSet, ObservableSpace};
use scx_core::oracle::{NoiseModel, OracleMode};
use scx_core::planner::{GainEvaluator, GainFan, GainKind, RaycastMode, ViewTree};
use scx_core::sensor::SensorModel;
use scx_core::sim::stream::{replay_fusion, replay_with_metrics};
use scx_core::sim::{generate_world, run_mission, GroundTruthWorld, MissionConfig, MissionLog, MissionStatus, WorldSpec};
use scx_harness::{cmd_run, ExperimentSpec, WorldSource};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn cfg() -> GridConfig {
    GridConfig::default()
}

fn light(t_max: f64, seed: u64) -> MissionConfig {
    let mut m = MissionConfig {
        t_max,
        seed,
        render_scale: 1,
        ..Default::default()
    };
    m.planner.fan_width = 16;
    m.planner.fan_height = 12;
    m
}

fn world(size: [f64; 3], rooms: usize, clutter: usize, seed: u64) -> GroundTruthWorld {
    let spec = WorldSpec {
        size,
        rooms,
        clutter_per_room: clutter,
        ..Default::default()
    };
    generate_world(&spec, seed).expect("world generation")
}

fn gt_of(w: &GroundTruthWorld) -> ObservableSpace {
    observable_space(w, w.config().world_to_index(&w.start().position())).unwrap()
}

fn single(state: PredictedState, class: u8, confidence: f32) -> Prediction {
    Prediction {
        anchor: Pose::default(),
        origin: VoxelIndex::new(0, 0, 0),
        dims: [1, 1, 1],
        voxel_size: cfg().voxel_size(),
        voxels: vec![PredictedVoxel {
            state,
            class_id: class,
            confidence,
        }],
        measured_mask: None,
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

// 1 ------------------------------------------------------------------------

fn fusion_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let v = VoxelIndex::new(0, 0, 0);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.gen_range(1..=50);
        let mut sc = ScLayer::new(cfg(), FusionStrategy::Probabilistic, ClassCalibration::default());
        let (mut num, mut den) = (1.0f64, 1.0f64);
        for _ in 0..n {
            let p: f32 = rng.gen_range(0.01..0.99);
            sc.fuse(&single(PredictedState::Occupied, SemanticClass::Furniture.id(), p), None)
                .map_err(|e| e.to_string())?;
            let p = p as f64;
            num *= p;
            den *= 1.0 - p;
        }
        let bayes = num / (num + den);
        let fused = probability(sc.log_odds(v).ok_or("voxel never fused")?);
        worst = worst.max((fused - bayes).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    check(worst <= 1e-9 && secs < 1.0, format!("max |Δp| = {worst:.2e}, {secs:.3} s"))
}

// 2 ------------------------------------------------------------------------

fn occupancy_weights() -> Outcome {
    let mut min_w = f64::INFINITY;
    for i in 0..100 {
        let p = i as f64 / 100.0;
        let cal = ClassCalibration::new(BTreeMap::from([(3, p)]), 0.49).map_err(|e| e.to_string())?;
        min_w = min_w.min(occupancy_update_weight(PredictedState::Occupied, 3, &cal).map_err(|e| e.to_string())?);
    }
    let cal = ClassCalibration::default();
    let w = |s, c| occupancy_update_weight(s, c, &cal).unwrap();
    let free = w(PredictedState::Free, EMPTY_CLASS);
    let free_ok = (free - (0.49f64 / 0.51).ln()).abs() <= 1e-12;
    let hand = [
        (SemanticClass::Sofa, 1.2657),
        (SemanticClass::Floor, 0.8712),
        (SemanticClass::Wall, 0.8712),
        (SemanticClass::Furniture, 0.6190),
    ];
    let hand_ok = hand
        .iter()
        .all(|&(c, x)| (w(PredictedState::Occupied, c.id()) - x).abs() < 5e-5);

    let mut sc = ScLayer::new(cfg(), FusionStrategy::Occupancy, cal.clone());
    let v = VoxelIndex::new(0, 0, 0);
    sc.fuse(&single(PredictedState::Occupied, SemanticClass::Sofa.id(), 0.9), None).unwrap();
    let l1 = sc.log_odds(v).unwrap();
    sc.fuse(&single(PredictedState::Free, EMPTY_CLASS, 0.9), None).unwrap();
    let l2 = sc.log_odds(v).unwrap();
    let seq_ok = (l1 - 1.2657).abs() < 5e-5 && (l2 - 1.2257).abs() < 5e-5 && (probability(l1) - 0.78).abs() < 5e-3;
    check(
        min_w >= 0.0 && free_ok && hand_ok && seq_ok,
        format!("min occupied weight {min_w}, free {free:.6}, sofa sequence {l1:.4} -> {l2:.4}"),
    )
}

// 3 ------------------------------------------------------------------------

fn lookup_table() -> Outcome {
    let taus = [0.0, 0.1, 0.5, 1.0];
    let cut = |tau: f64| ((1.0 + tau) / (1.0 - tau)).ln();
    let mut buckets: Vec<Option<f64>> = vec![None, Some(0.0), Some(50.0), Some(-50.0), Some(0.05), Some(-0.05)];
    for &tau in &taus[..3] {
        let l = cut(tau);
        for x in [l, -l, l.next_up(), l.next_down(), (-l).next_up(), (-l).next_down()] {
            buckets.push(Some(x));
        }
    }
    buckets.push(Some(f64::INFINITY));
    buckets.push(Some(f64::NEG_INFINITY));

    let (mut cases, mut wrong, mut measured_cases) = (0, 0, 0);
    for measured in [VoxelState::Unknown, VoxelState::Free, VoxelState::Occupied] {
        for &bucket in &buckets {
            for &tau in &taus {
                let v = VoxelIndex::new(1, 2, 3);
                let mut m = MeasuredMap::new(cfg(), Bounds::infinite());
                match measured {
                    VoxelState::Free => m.mark_free(v),
                    VoxelState::Occupied => m.mark_occupied(v),
                    VoxelState::Unknown => {}
                }
                let mut sc = ScLayer::new(cfg(), FusionStrategy::Occupancy, ClassCalibration::default());
                if let Some(l) = bucket {
                    sc.set_log_odds(v, l);
                }
                let map = MultiLayerMap::new(m, sc, tau).unwrap();
                let got = map.lookup(v);

                let expected = if measured != VoxelState::Unknown {
                    measured_cases += 1;
                    (measured, Source::Measured)
                } else {
                    let (lo, lf) = if tau >= 1.0 { (f64::INFINITY, f64::NEG_INFINITY) } else { (cut(tau), -cut(tau)) };
                    match bucket {
                        Some(l) if l >= lo => (VoxelState::Occupied, Source::Predicted),
                        Some(l) if l <= lf => (VoxelState::Free, Source::Predicted),
                        _ => (VoxelState::Unknown, Source::Unknown),
                    }
                };
                cases += 1;
                if (got.state, got.source) != expected {
                    wrong += 1;
                }
            }
        }
    }
    check(
        wrong == 0,
        format!("{cases} combinations, {wrong} mismatches, measured state decided {measured_cases} cases"),
    )
}

// 4 ------------------------------------------------------------------------

fn predicted_sets(map: &MultiLayerMap) -> (BTreeSet<VoxelIndex>, BTreeSet<VoxelIndex>) {
    let (mut occ, mut free) = (BTreeSet::new(), BTreeSet::new());
    for (v, _) in map.sc.grid().iter() {
        let r = map.lookup(v);
        if r.source == Source::Predicted {
            match r.state {
                VoxelState::Occupied => occ.insert(v),
                VoxelState::Free => free.insert(v),
                VoxelState::Unknown => false,
            };
        }
    }
    (occ, free)
}

fn confidence_monotonicity() -> Outcome {
    let w = world([8.0, 6.0, 3.0], 2, 3, 4);
    let mut m = light(60.0, 3);
    m.oracle = Some(OracleMode::Noisy(NoiseModel::new(0.2, 0.1, 5).unwrap()));
    m.record_stream = false;
    let mut map = run_mission(&w, &m).map_err(|e| e.to_string())?.map;
    let mut prev: Option<(BTreeSet<VoxelIndex>, BTreeSet<VoxelIndex>)> = None;
    let mut sizes = Vec::new();
    let mut nested = true;
    for k in 0..=9 {
        map.set_tau(k as f64 / 10.0).unwrap();
        let (occ, free) = predicted_sets(&map);
        sizes.push(format!("{}/{}", occ.len(), free.len()));
        if let Some((po, pf)) = &prev {
            nested &= occ.is_subset(po) && free.is_subset(pf);
        }
        prev = Some((occ, free));
    }
    let nonempty = !sizes[0].starts_with("0/") && !sizes[0].ends_with("/0");
    check(nested && nonempty, format!("|occupied|/|free| for tau 0..0.9: {}", sizes.join(" ")))
}

// 5 ------------------------------------------------------------------------

fn tree_utilities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut mismatches = 0;
    let mut nodes = 0;
    for t in 0..200 {
        let mut tree = ViewTree::new(Pose::default());
        let n = rng.gen_range(1..=100);
        for _ in 1..n {
            let ids: Vec<usize> = tree.ids().collect();
            let parent = ids[rng.gen_range(0..ids.len())];
            let gain = if rng.gen_bool(0.2) { 0.0 } else { rng.gen_range(0.0..10.0) };
            let cost = rng.gen_range(1e-3..5.0);
            let pose = Pose::new(rng.gen(), rng.gen(), rng.gen(), 0.0);
            tree.add(parent, pose, gain, cost, 0);
        }
        if t % 3 == 0 && tree.len() > 2 {
            let ids: Vec<usize> = tree.ids().filter(|&i| i != tree.root()).collect();
            tree.remove_subtree(ids[rng.gen_range(0..ids.len())]);
        }
        let root = tree.root();
        let ids: Vec<usize> = tree.ids().collect();
        // path ratio of every node by explicit root-to-node enumeration
        let mut ratio = BTreeMap::new();
        let mut on_path: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for &m in &ids {
            let mut path = vec![m];
            let mut cur = m;
            while let Some(p) = tree.node(cur).parent {
                path.push(p);
                cur = p;
            }
            path.reverse();
            let (mut g, mut c) = (0.0, 0.0);
            for &x in &path[1..] {
                g += tree.node(x).gain;
                c += tree.node(x).cost;
            }
            ratio.insert(m, if m == root || c <= 0.0 { 0.0 } else { g / c });
            on_path.insert(m, path);
        }
        let u = tree.utilities();
        for &n in &ids {
            let best = ids
                .iter()
                .filter(|m| on_path[m].contains(&n))
                .map(|m| ratio[m])
                .fold(f64::NEG_INFINITY, f64::max);
            nodes += 1;
            if u[n].to_bits() != best.to_bits() {
                mismatches += 1;
            }
        }
    }
    check(mismatches == 0, format!("{nodes} nodes in 200 trees, {mismatches} mismatches"))
}

// 6 ------------------------------------------------------------------------

const SIDE: i64 = 20;

struct Scene {
    map: MultiLayerMap,
    pose: Pose,
    measured_occ: Vec<bool>,
    predicted_occ: Vec<bool>,
}

fn slot(v: VoxelIndex) -> Option<usize> {
    let ok = |x: i64| (0..SIDE).contains(&x);
    (ok(v.i) && ok(v.j) && ok(v.k)).then(|| ((v.k * SIDE + v.j) * SIDE + v.i) as usize)
}

fn random_scene(rng: &mut ChaCha8Rng) -> Scene {
    let c = cfg();
    let edge = SIDE as f64 * c.voxel_size();
    let bounds = Bounds::new(Point3::origin(), Point3::new(edge, edge, edge));
    let mut measured = MeasuredMap::new(c, bounds);
    let mut sc = ScLayer::new(c, FusionStrategy::Occupancy, ClassCalibration::default());
    let n = (SIDE * SIDE * SIDE) as usize;
    let (mut mo, mut po) = (vec![false; n], vec![false; n]);
    let occ_rate = rng.gen_range(0.02..0.1);
    for k in 0..SIDE {
        for j in 0..SIDE {
            for i in 0..SIDE {
                let v = VoxelIndex::new(i, j, k);
                let s = slot(v).unwrap();
                let r: f64 = rng.gen();
                if r < occ_rate {
                    measured.mark_occupied(v);
                    mo[s] = true;
                } else if r < occ_rate + 0.3 {
                    measured.mark_free(v);
                } else {
                    let q: f64 = rng.gen();
                    if q < occ_rate {
                        sc.set_log_odds(v, 1.0);
                        po[s] = true;
                    } else if q < occ_rate + 0.15 {
                        sc.set_log_odds(v, -1.0);
                    }
                }
            }
        }
    }
    let map = MultiLayerMap::new(measured, sc, 0.0).unwrap();
    let pose = loop {
        let p = Point3::new(rng.gen_range(0.1..edge - 0.1), rng.gen_range(0.1..edge - 0.1), rng.gen_range(0.1..edge - 0.1));
        let s = slot(c.world_to_index(&p)).unwrap();
        if !mo[s] && !po[s] {
            break Pose::from_position(p, rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI));
        }
    };
    Scene {
        map,
        pose,
        measured_occ: mo,
        predicted_occ: po,
    }
}

/// Whether the segment `o + t·d`, `t ∈ [0, 1]`, meets the open box `(lo, hi)`.
fn segment_meets_box(o: &Point3<f64>, d: &Vector3<f64>, lo: &Point3<f64>, hi: &Point3<f64>) -> bool {
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for a in 0..3 {
        if d[a] == 0.0 {
            if o[a] <= lo[a] || o[a] >= hi[a] {
                return false;
            }
        } else {
            let (u, w) = ((lo[a] - o[a]) / d[a], (hi[a] - o[a]) / d[a]);
            t0 = t0.max(u.min(w));
            t1 = t1.min(u.max(w));
        }
    }
    t0 < t1
}

/// Dense line-of-sight check: some sample point of `v`'s closed box lies in
/// the field of view and range and is reached by a straight segment that
/// misses every other blocking voxel shrunk by `delta`.
/// Candidate blockers are the 27-neighbourhoods of points marched at `ν/4`.
fn oracle_visible(scene: &Scene, sensor: &SensorModel, blocking: bool, v: VoxelIndex, samples: &[Vector3<f64>], delta: f64) -> bool {
    let c = cfg();
    let nu = c.voxel_size();
    let o = scene.pose.position();
    let corner = c.index_to_min_corner(v);
    let is_blocker = |u: VoxelIndex| {
        u != v && slot(u).is_some_and(|s| scene.measured_occ[s] || (blocking && scene.predicted_occ[s]))
    };
    let mut tested: Vec<VoxelIndex> = Vec::new();
    for s in samples {
        let q = corner + s;
        let dir = q - o;
        let len = dir.norm();
        if len < 1e-12 {
            return true;
        }
        if len > sensor.max_range || !sensor.in_fov(scene.pose.yaw, &dir) {
            continue;
        }
        tested.clear();
        let steps = (len / (nu / 4.0)).ceil() as usize;
        let clear = (0..=steps).all(|s| {
            let u = c.world_to_index(&(o + dir * (s as f64 / steps as f64)));
            for di in -1..=1 {
                for dj in -1..=1 {
                    for dk in -1..=1 {
                        let w = u.offset(di, dj, dk);
                        if !is_blocker(w) || tested.contains(&w) {
                            continue;
                        }
                        tested.push(w);
                        let lo = c.index_to_min_corner(w);
                        let shrink = Vector3::repeat(delta);
                        if segment_meets_box(&o, &dir, &(lo + shrink), &(lo + Vector3::repeat(nu) - shrink)) {
                            return false;
                        }
                    }
                }
            }
            true
        });
        if clear {
            return true;
        }
    }
    false
}

/// Offsets of an `n³` lattice over the closed voxel, faces included.
fn lattice(n: usize) -> Vec<Vector3<f64>> {
    let nu = cfg().voxel_size();
    let f = |x: usize| x as f64 / (n - 1) as f64 * nu;
    let mut out = Vec::with_capacity(n * n * n);
    for a in 0..n {
        for b in 0..n {
            for e in 0..n {
                out.push(Vector3::new(f(a), f(b), f(e)));
            }
        }
    }
    out
}

fn raycast_soundness() -> Outcome {
    let sensor = SensorModel::default();
    let fan = GainFan::new(&sensor, 64, 48);
    let evaluator = |mode| GainEvaluator::new(fan.clone(), GainKind::Exploration, mode, 8);
    let delta = 1e-4;
    let center = [Vector3::repeat(0.5 * cfg().voxel_size())];
    // finer lattices only for voxels the coarser ones cannot confirm
    let lattices = [lattice(5), lattice(17), lattice(65)];
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut returned, mut false_pos) = (0usize, 0usize);
    let (mut center_set, mut center_hit, mut any_set, mut any_hit) = (0usize, 0usize, 0usize, 0usize);
    for w in 0..20 {
        let scene = random_scene(&mut rng);
        let blocking = w % 2 == 0;
        let mode = if blocking { RaycastMode::Blocking } else { RaycastMode::NonBlocking };
        let seen: BTreeSet<VoxelIndex> = evaluator(mode).visible_voxels(&scene.pose, &scene.map).into_iter().collect();
        for &v in &seen {
            returned += 1;
            let ok = slot(v).is_some() && lattices.iter().any(|l| oracle_visible(&scene, &sensor, blocking, v, l, delta));
            if !ok {
                false_pos += 1;
            }
        }
        for k in 0..SIDE {
            for j in 0..SIDE {
                for i in 0..SIDE {
                    let v = VoxelIndex::new(i, j, k);
                    let hit = seen.contains(&v) as usize;
                    if oracle_visible(&scene, &sensor, blocking, v, &center, delta) {
                        center_set += 1;
                        center_hit += hit;
                    }
                    if oracle_visible(&scene, &sensor, blocking, v, &lattices[0], delta) {
                        any_set += 1;
                        any_hit += hit;
                    }
                }
            }
        }
    }
    let coverage = center_hit as f64 / center_set as f64;
    let any_coverage = any_hit as f64 / any_set as f64;

    let mut not_subset = 0;
    for _ in 0..100 {
        let scene = random_scene(&mut rng);
        let b: BTreeSet<VoxelIndex> = evaluator(RaycastMode::Blocking).visible_voxels(&scene.pose, &scene.map).into_iter().collect();
        let nb: BTreeSet<VoxelIndex> =
            evaluator(RaycastMode::NonBlocking).visible_voxels(&scene.pose, &scene.map).into_iter().collect();
        if !b.is_subset(&nb) {
            not_subset += 1;
        }
    }
    check(
        false_pos == 0 && coverage >= 0.95 && not_subset == 0,
        format!(
            "{returned} returned voxels, {false_pos} without a witness; centre-visible coverage {:.2}% of {center_set} \
             (any-point coverage {:.2}% of {any_set}); blocking not within non-blocking in {not_subset}/100",
            100.0 * coverage,
            100.0 * any_coverage
        ),
    )
}

// 7 ------------------------------------------------------------------------

fn safety() -> Outcome {
    let start = Instant::now();
    let results: Vec<(u64, Result<MissionLog, String>)> = (0..50u64)
        .into_par_iter()
        .map(|i| {
            let w = world([12.0, 9.0, 3.0], 3, 3, 100 + i);
            let mut m = light(30.0, i);
            m.oracle = Some(OracleMode::Perfect);
            m.record_stream = false;
            m.planner.gain = GainKind::ALL[i as usize % GainKind::ALL.len()];
            m.planner.collision_mode = CollisionMode::Conservative;
            (i, run_mission(&w, &m).map_err(|e| e.to_string()))
        })
        .collect();
    let mut unsafe_runs = Vec::new();
    let mut statuses = BTreeMap::new();
    for (i, r) in &results {
        match r {
            Ok(log) => {
                *statuses.entry(log.status.name()).or_insert(0) += 1;
                if !log.is_safe() || log.status == MissionStatus::Collision {
                    unsafe_runs.push(*i);
                }
            }
            Err(_) => unsafe_runs.push(*i),
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        unsafe_runs.is_empty() && secs <= 1800.0,
        format!("50 missions, unsafe or failed: {unsafe_runs:?}, statuses {statuses:?}, {secs:.0} s"),
    )
}

// 8 ------------------------------------------------------------------------

fn random_prediction(rng: &mut ChaCha8Rng) -> Prediction {
    let dims = [rng.gen_range(1..6), rng.gen_range(1..6), rng.gen_range(1..6)];
    let n = dims[0] * dims[1] * dims[2];
    let classes = [SemanticClass::Floor, SemanticClass::Wall, SemanticClass::Furniture, SemanticClass::Sofa];
    let voxels = (0..n)
        .map(|_| {
            if rng.gen_bool(0.5) {
                PredictedVoxel {
                    state: PredictedState::Occupied,
                    class_id: classes[rng.gen_range(0..4)].id(),
                    confidence: rng.gen_range(0.0..1.0),
                }
            } else {
                PredictedVoxel {
                    state: PredictedState::Free,
                    class_id: EMPTY_CLASS,
                    confidence: rng.gen_range(0.0..1.0),
                }
            }
        })
        .collect();
    Prediction {
        anchor: Pose::default(),
        origin: VoxelIndex::new(rng.gen_range(-4..4), rng.gen_range(-4..4), rng.gen_range(-4..4)),
        dims,
        voxel_size: cfg().voxel_size(),
        voxels,
        measured_mask: rng.gen_bool(0.5).then(|| (0..n).map(|_| rng.gen_bool(0.3)).collect()),
    }
}

fn scfusion_recall() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut negative = 0;
    let mut occupied = 0;
    for _ in 0..200 {
        let mut sc = ScLayer::new(cfg(), FusionStrategy::ScFusionBaseline, ClassCalibration::default());
        for _ in 0..rng.gen_range(1..30) {
            sc.fuse(&random_prediction(&mut rng), None).map_err(|e| e.to_string())?;
        }
        negative += sc.grid().iter().filter(|(_, s)| s.log_odds().is_some_and(|l| l < 0.0)).count();
        for tau in [0.0f64, 0.1, 0.5, 0.9] {
            let l = ((1.0 + tau) / (1.0 - tau)).ln();
            negative += sc.count_state(l, -l, VoxelState::Free);
        }
        occupied += sc.count_state(0.0, 0.0, VoxelState::Occupied);
    }

    let w = world([7.0, 4.0, 3.0], 2, 2, 8);
    let mut m = light(40.0, 8);
    m.oracle = Some(OracleMode::Noisy(NoiseModel::new(0.3, 0.1, 8).unwrap()));
    let log = run_mission(&w, &m).map_err(|e| e.to_string())?;
    let sc = replay_fusion(&log.stream, *w.config(), FusionStrategy::ScFusionBaseline, &m.calibration)
        .map_err(|e| e.to_string())?;
    negative += sc.count_state(0.0, 0.0, VoxelState::Free);
    let gt = gt_of(&w);
    let times: Vec<f64> = (1..=4).map(|k| k as f64 * 10.0).collect();
    let recs = replay_with_metrics(
        &log.stream,
        &w,
        &m.mapping_sensor(),
        FusionStrategy::ScFusionBaseline,
        &m.calibration,
        0.0,
        &gt,
        &times,
        EvaluationSet::PredictedOnly,
    )
    .map_err(|e| e.to_string())?;
    let recalls: Vec<Option<f64>> = recs.iter().map(|r| r.r_o).collect();
    let all_one = recalls.iter().all(|r| r.map_or(true, |x| x == 1.0)) && recalls.iter().any(|r| r.is_some());
    check(
        negative == 0 && all_one && occupied > 0,
        format!("{negative} free voxels over 200 random streams and a mission stream; predicted-only R_o {recalls:?}"),
    )
}

// 9 ------------------------------------------------------------------------

fn occupancy_recall_trend() -> Outcome {
    let w = world([8.0, 6.0, 3.0], 2, 3, 1);
    let gt = gt_of(&w);
    let occupied_fraction = gt.count(VoxelState::Occupied) as f64 / gt.len() as f64;
    let runs: Vec<Result<(bool, bool, String), String>> = (0..10u64)
        .into_par_iter()
        .map(|seed| {
            let noise = NoiseModel::from_precision_recall(0.57, 0.93, occupied_fraction, seed).map_err(|e| e.to_string())?;
            let mut m = light(60.0, seed);
            m.oracle = Some(OracleMode::Noisy(noise));
            m.planner.gain = GainKind::Exploration;
            let log = run_mission(&w, &m).map_err(|e| e.to_string())?;
            let times: Vec<f64> = (1..=(log.elapsed / 10.0).floor() as usize).map(|k| k as f64 * 10.0).collect();
            let replay = |s| {
                replay_with_metrics(&log.stream, &w, &m.mapping_sensor(), s, &m.calibration, m.tau, &gt, &times, EvaluationSet::PredictedOnly)
                    .map(|r| r.iter().map(|x| x.r_o).collect::<Vec<_>>())
                    .map_err(|e| e.to_string())
            };
            let occ = replay(FusionStrategy::Occupancy)?;
            let prob = replay(FusionStrategy::Probabilistic)?;
            let defined: Vec<f64> = occ.iter().flatten().copied().collect();
            let non_decreasing = defined.windows(2).all(|p| p[1] >= p[0]);
            let lower = match (prob.last().copied().flatten(), occ.last().copied().flatten()) {
                (Some(p), Some(o)) => p < o,
                _ => false,
            };
            let fmt = |xs: &[Option<f64>]| xs.iter().map(|x| x.map_or("NA".into(), |v| format!("{v:.4}"))).collect::<Vec<_>>().join(" ");
            Ok((non_decreasing, lower, format!("seed {seed}: occupancy [{}] probabilistic [{}]", fmt(&occ), fmt(&prob))))
        })
        .collect();
    let mut nd = 0;
    let mut lower = 0;
    let mut lines = Vec::new();
    for r in runs {
        let (a, b, line) = r?;
        nd += a as usize;
        lower += b as usize;
        lines.push(line);
    }
    for l in &lines {
        println!("      {l}");
    }
    check(
        nd >= 9 && lower >= 8,
        format!("occupancy R_o non-decreasing in {nd}/10 seeds, probabilistic final R_o lower in {lower}/10"),
    )
}

// 10 -----------------------------------------------------------------------

fn value_at(log: &MissionLog, t: f64) -> f64 {
    log.snapshots
        .iter()
        .take_while(|s| s.metrics.t <= t + 1e-9)
        .last()
        .map_or(0.0, |s| s.metrics.m)
}

fn oracle_planner_trend() -> Outcome {
    let start = Instant::now();
    let w = world([12.0, 9.0, 3.0], 3, 3, 1);
    let t_max = 180.0;
    let checkpoints = [60.0, 120.0, 180.0];
    let gains = [GainKind::Exploration, GainKind::Sc, GainKind::Hybrid];
    let jobs: Vec<(GainKind, u64)> = gains.iter().flat_map(|&g| (0..20u64).map(move |s| (g, s))).collect();
    let logs: Vec<(GainKind, Result<(f64, Vec<f64>), String>)> = jobs
        .into_par_iter()
        .map(|(g, seed)| {
            let mut m = light(t_max, seed);
            m.oracle = Some(OracleMode::Perfect);
            m.record_stream = false;
            m.planner.gain = g;
            m.planner.collision_mode = CollisionMode::Conservative;
            m.planner.raycast_mode = RaycastMode::NonBlocking;
            let r = run_mission(&w, &m).map_err(|e| e.to_string()).and_then(|log| {
                let t = time_to_goal(&log.series(|x| x.m), 0.8).map_err(|e| e.to_string())?;
                Ok((t.unwrap_or(f64::INFINITY), checkpoints.iter().map(|&c| value_at(&log, c)).collect()))
            });
            (g, r)
        })
        .collect();
    let mut t80: BTreeMap<GainKind, Vec<f64>> = BTreeMap::new();
    let mut at: BTreeMap<GainKind, Vec<Vec<f64>>> = BTreeMap::new();
    for (g, r) in logs {
        let (t, ms) = r?;
        t80.entry(g).or_default().push(t);
        at.entry(g).or_default().push(ms);
    }
    let med_t = |g| median(t80[&g].clone());
    let med_m = |g: GainKind, k: usize| median(at[&g].iter().map(|v| v[k]).collect());
    let sc_faster = med_t(GainKind::Sc) < med_t(GainKind::Exploration);
    let floor = (0..checkpoints.len()).all(|k| med_m(GainKind::Hybrid, k) >= med_m(GainKind::Exploration, k));
    for g in gains {
        let reached = t80[&g].iter().filter(|t| t.is_finite()).count();
        let ms: Vec<String> = (0..checkpoints.len()).map(|k| format!("{:.3}", med_m(g, k))).collect();
        println!(
            "      {:<11} median T_M80 {:>6.1} s ({reached}/20 reached), median M at 60/120/180 s: {}",
            g.name(),
            med_t(g),
            ms.join(" ")
        );
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        sc_faster && floor && secs <= 3600.0,
        format!("sc faster than exploration: {sc_faster}; hybrid >= exploration at every checkpoint: {floor}; {secs:.0} s"),
    )
}

// 11 -----------------------------------------------------------------------

fn metrics_consistency() -> Outcome {
    let c = cfg();
    let v = |i: i64| VoxelIndex::new(i, 0, 0);
    let truth: Vec<(VoxelIndex, VoxelState)> = (0..10)
        .map(|i| (v(i), if i < 6 { VoxelState::Free } else { VoxelState::Occupied }))
        .collect();
    let gt = ObservableSpace::from_parts(c, truth).map_err(|e| e.to_string())?;
    let mut measured = MeasuredMap::new(c, Bounds::infinite());
    measured.mark_free(v(0));
    measured.mark_free(v(1));
    measured.mark_occupied(v(2));
    measured.mark_occupied(v(6));
    let mut sc = ScLayer::new(c, FusionStrategy::Occupancy, ClassCalibration::default());
    sc.set_log_odds(v(3), -1.0);
    sc.set_log_odds(v(4), 1.0);
    sc.set_log_odds(v(7), 1.0);
    sc.set_log_odds(v(8), -1.0);
    // measured voxels carry SC values too; they must not matter
    sc.set_log_odds(v(0), 3.0);
    sc.set_log_odds(v(6), -3.0);
    let map = MultiLayerMap::new(measured, sc, 0.0).unwrap();

    let all = snapshot_with(1.0, &map, &gt, 0, EvaluationSet::AllObservable).map_err(|e| e.to_string())?;
    let all_ok = all.e == 0.8
        && all.c == 0.5
        && all.m == 0.4
        && all.p == Some(0.625)
        && all.p_o == Some(0.5)
        && all.p_f == Some(0.75)
        && all.r_o == Some(2.0 / 3.0)
        && all.r_f == Some(0.6);
    let pred = snapshot_with(1.0, &map, &gt, 0, EvaluationSet::PredictedOnly).map_err(|e| e.to_string())?;
    let pred_ok = pred.e == 1.0
        && pred.c == 0.5
        && pred.m == 0.0
        && pred.p == Some(0.5)
        && pred.p_o == Some(0.5)
        && pred.p_f == Some(0.5)
        && pred.r_o == Some(0.5)
        && pred.r_f == Some(0.5);

    let ep = expected_performance(&[(0.0, 0.0), (1.0, 1.0)], 0.0, 1.0).map_err(|e| e.to_string())?;
    let ep2 = expected_performance(&[(0.0, 0.0), (2.0, 1.0), (4.0, 1.0)], 0.0, 4.0).map_err(|e| e.to_string())?;
    let ttg = |s: &[(f64, f64)], g| time_to_goal(s, g).unwrap();
    let ttg_ok = ttg(&[(0.0, 0.0), (10.0, 1.0)], 0.5) == Some(5.0)
        && ttg(&[(0.0, 0.0), (10.0, 1.0)], 1.5).is_none()
        && ttg(&[(0.0, 0.0), (290.0, 0.5), (300.0, 0.8), (310.0, 0.8)], 0.8) == Some(300.0);
    check(
        all_ok && pred_ok && (ep - 0.5).abs() <= 1e-12 && (ep2 - 0.75).abs() <= 1e-12 && ttg_ok,
        format!(
            "all: E {} C {} M {} P {:?} P_o {:?} P_f {:?} R_o {:?} R_f {:?}; predicted-only ok: {pred_ok}; expected {ep}, {ep2}; time-to-goal ok: {ttg_ok}",
            all.e, all.c, all.m, all.p, all.p_o, all.p_f, all.r_o, all.r_f
        ),
    )
}

// 12 -----------------------------------------------------------------------

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut spec = ExperimentSpec::new(WorldSource::Procedural {
        seed: 2,
        per_repetition: false,
        spec: WorldSpec {
            size: [7.0, 4.0, 3.0],
            rooms: 2,
            clutter_per_room: 2,
            ..Default::default()
        },
    });
    spec.mission = light(20.0, 0);
    spec.mission.snapshot_interval = 2.0;
    spec.mission.oracle = Some(OracleMode::Noisy(NoiseModel::new(0.2, 0.05, 3).unwrap()));
    spec.mission.planner.gain = GainKind::Hybrid;
    spec.seed_base = 7;
    let mut files = Vec::new();
    for run in ["a", "b"] {
        spec.output_dir = tmp.path().join(run);
        cmd_run(&spec).map_err(|e| format!("{e:#}"))?;
        let mut names: Vec<String> = fs::read_dir(&spec.output_dir)
            .map_err(|e| e.to_string())?
            .filter_map(|e| e.ok().map(|e| e.file_name().to_string_lossy().into_owned()))
            .filter(|n| n.ends_with(".csv"))
            .collect();
        names.sort();
        let contents: Vec<(String, Vec<u8>)> = names
            .into_iter()
            .map(|n| {
                let bytes = fs::read(spec.output_dir.join(&n)).unwrap();
                (n, bytes)
            })
            .collect();
        files.push(contents);
    }
    let same = files[0] == files[1];
    let names: Vec<&str> = files[0].iter().map(|(n, _)| n.as_str()).collect();
    check(same && names.len() >= 2, format!("compared {names:?}: identical {same}"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("fusion equivalence", fusion_equivalence),
        ("occupancy-update properties", occupancy_weights),
        ("hierarchical lookup", lookup_table),
        ("confidence monotonicity", confidence_monotonicity),
        ("utility oracle", tree_utilities),
        ("ray-cast soundness", raycast_soundness),
        ("safety", safety),
        ("scfusion-baseline recall", scfusion_recall),
        ("occupancy-fusion recall trend", occupancy_recall_trend),
        ("oracle-planner trend", oracle_planner_trend),
        ("metrics consistency", metrics_consistency),
        ("determinism", determinism),
    ];
    let only: Option<Vec<usize>> = std::env::var("SCX_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut failed = Vec::new();
    let mut ran = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        let n = k + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("PASS {n:>2} {name} [{secs:.1} s]: {d}"),
            Err(d) => {
                println!("FAIL {n:>2} {name} [{secs:.1} s]: {d}");
                failed.push(n);
            }
        }
    }
    println!("acceptance: {}/{ran} criteria passed, failed {failed:?}", ran - failed.len());
    let strict = std::env::var("SCX_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if strict && !failed.is_empty() {
        std::process::exit(1);
    }
}
