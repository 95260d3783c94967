//! Sampling-based next-best-view planner.
//!
//! A tree of views rooted at the robot is grown by sampling around random
//! nodes and rewired so nodes hang below whichever neighbour gives their path
//! the best gain per second. The first edge of the best path is executed.

pub mod cost;
pub mod gain;
pub mod tree;

use nalgebra::{Point3, Vector3};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Pose;
use crate::layered::{CollisionMode, MultiLayerMap};
use crate::sensor::SensorModel;

pub use cost::MotionLimits;
pub use gain::{pick_best_yaw, voxel_information, GainEvaluator, GainFan, GainKind, GainScratch, RaycastMode};
pub use tree::{PlannerNode, ViewTree};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    pub gain: GainKind,
    /// metres
    pub sampling_radius: f64,
    /// metres
    pub max_edge_length: f64,
    pub yaw_samples: usize,
    /// Gain rays per field of view, horizontally.
    pub fan_width: usize,
    /// Gain rays per field of view, vertically.
    pub fan_height: usize,
    pub raycast_mode: RaycastMode,
    pub collision_mode: CollisionMode,
    /// metres
    pub collision_radius: f64,
    pub v_max: f64,
    pub a_max: f64,
    /// degrees per second
    pub yaw_rate_max_deg: f64,
    pub max_tree_size: usize,
    pub expansions_per_step: usize,
    /// Failed planning attempts in a row before the mission counts as stuck.
    pub stuck_attempts: usize,
    /// Cap on parent swaps triggered by one insertion.
    pub rewire_budget: usize,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            gain: GainKind::Exploration,
            sampling_radius: 1.5,
            max_edge_length: 1.5,
            yaw_samples: 8,
            fan_width: 64,
            fan_height: 48,
            raycast_mode: RaycastMode::Blocking,
            collision_mode: CollisionMode::Conservative,
            collision_radius: 0.35,
            v_max: 1.0,
            a_max: 2.0,
            yaw_rate_max_deg: 90.0,
            max_tree_size: 400,
            expansions_per_step: 10,
            stuck_attempts: 10,
            rewire_budget: 64,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            self.sampling_radius,
            self.max_edge_length,
            self.collision_radius,
            self.v_max,
            self.a_max,
            self.yaw_rate_max_deg,
        ];
        if pos.iter().any(|x| !(*x > 0.0)) {
            return Err(Error::InvalidArgument("planner lengths, radii and limits must be positive".into()));
        }
        if self.yaw_samples == 0 || self.yaw_samples > 8 || self.fan_width == 0 || self.fan_height == 0 {
            return Err(Error::InvalidArgument("need 1..=8 yaw samples and a non-empty ray fan".into()));
        }
        if self.max_tree_size < 2 || self.stuck_attempts == 0 {
            return Err(Error::InvalidArgument("tree must hold at least two nodes and stuck_attempts be positive".into()));
        }
        Ok(())
    }

    pub fn limits(&self) -> MotionLimits {
        MotionLimits {
            v_max: self.v_max,
            a_max: self.a_max,
            yaw_rate_max: self.yaw_rate_max_deg.to_radians(),
        }
    }
}

/// Outcome of one expansion.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Expansion {
    Added(usize),
    Rejected,
    /// Tree at capacity with nothing prunable.
    Full,
}

#[derive(Clone, Debug)]
pub struct Planner {
    cfg: PlannerConfig,
    limits: MotionLimits,
    eval: GainEvaluator,
    scratch: GainScratch,
    tree: ViewTree,
    gain_evaluations: u64,
}

impl Planner {
    pub fn new(cfg: PlannerConfig, sensor: &SensorModel, start: Pose) -> Result<Self> {
        cfg.validate()?;
        let fan = GainFan::new(sensor, cfg.fan_width, cfg.fan_height);
        Ok(Self {
            limits: cfg.limits(),
            eval: GainEvaluator::new(fan, cfg.gain, cfg.raycast_mode, cfg.yaw_samples),
            scratch: GainScratch::default(),
            tree: ViewTree::new(start),
            cfg,
            gain_evaluations: 0,
        })
    }

    pub fn config(&self) -> &PlannerConfig {
        &self.cfg
    }

    pub fn tree(&self) -> &ViewTree {
        &self.tree
    }

    pub fn evaluator(&self) -> &GainEvaluator {
        &self.eval
    }

    pub fn gain_evaluations(&self) -> u64 {
        self.gain_evaluations
    }

    /// Discards the tree and restarts it at `pose`.
    pub fn reset(&mut self, pose: Pose) {
        self.tree = ViewTree::new(pose);
    }

    pub fn edge_cost(&self, a: &Pose, b: &Pose) -> f64 {
        self.limits.edge_cost(a, b)
    }

    fn edge_ok(&self, a: &Pose, b: &Pose, map: &MultiLayerMap) -> bool {
        map.is_segment_traversable(&a.position(), &b.position(), self.cfg.collision_mode, self.cfg.collision_radius)
    }

    /// Best yaw and gain at `p`.
    pub fn evaluate(&mut self, p: &Point3<f64>, map: &MultiLayerMap) -> (f64, f64) {
        self.gain_evaluations += 1;
        self.eval.optimize_yaw(p, map, &mut self.scratch)
    }

    /// Best utility over the whole tree.
    pub fn best_utility(&self) -> f64 {
        self.tree.utilities()[self.tree.root()]
    }

    fn prune(&mut self, rng: &mut ChaCha8Rng) -> bool {
        let u = self.tree.utilities();
        let leaves: Vec<usize> = self
            .tree
            .ids()
            .filter(|&n| n != self.tree.root() && self.tree.node(n).children.is_empty() && u[n] <= 0.0)
            .collect();
        match leaves.choose(rng) {
            Some(&n) => {
                self.tree.remove_subtree(n);
                true
            }
            None => false,
        }
    }

    fn sample_position(&self, around: &Point3<f64>, map: &MultiLayerMap, rng: &mut ChaCha8Rng) -> Option<Point3<f64>> {
        let r = self.cfg.sampling_radius.min(self.cfg.max_edge_length);
        let offset = loop {
            let v = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            if v.norm_squared() <= 1.0 {
                break v * r;
            }
        };
        let p = around + offset;
        let b = map.measured.bounds();
        let m = self.cfg.collision_radius;
        let inside = (0..3).all(|a| p[a] >= b.min[a] + m && p[a] <= b.max[a] - m);
        inside.then_some(p)
    }

    /// Samples one view, attaches it and rewires its neighbourhood.
    pub fn expand(&mut self, map: &MultiLayerMap, version: u64, rng: &mut ChaCha8Rng) -> Expansion {
        if self.tree.len() >= self.cfg.max_tree_size && !self.prune(rng) {
            return Expansion::Full;
        }
        let ids: Vec<usize> = self.tree.ids().collect();
        let anchor = ids[rng.gen_range(0..ids.len())];
        let from = self.tree.node(anchor).pose;
        let Some(p) = self.sample_position(&from.position(), map, rng) else {
            return Expansion::Rejected;
        };
        if !map.is_traversable(&p, self.cfg.collision_mode, self.cfg.collision_radius) {
            return Expansion::Rejected;
        }
        if !self.edge_ok(&from, &Pose::from_position(p, from.yaw), map) {
            return Expansion::Rejected;
        }
        let (yaw, gain) = self.evaluate(&p, map);
        let pose = Pose::from_position(p, yaw);
        let cost = self.limits.edge_cost(&from, &pose);
        let id = self.tree.add(anchor, pose, gain, cost, version);
        self.rewire_from(id, map);
        Expansion::Added(id)
    }

    /// Path ratio `id` would have below `parent`.
    fn ratio_via(&self, id: usize, parent: usize) -> (f64, f64) {
        let (n, p) = (self.tree.node(id), self.tree.node(parent));
        let c = self.limits.edge_cost(&p.pose, &n.pose);
        let total = p.path_cost + c;
        let r = if total > 0.0 { (p.path_gain + n.gain) / total } else { 0.0 };
        (r, c)
    }

    fn neighbours(&self, id: usize) -> Vec<usize> {
        let pose = self.tree.node(id).pose;
        self.tree
            .ids()
            .filter(|&m| m != id && self.tree.node(m).pose.distance(&pose) <= self.cfg.max_edge_length)
            .collect()
    }

    /// Tries to move `id` below a neighbour with a strictly better path ratio.
    fn improve_parent(&mut self, id: usize, map: &MultiLayerMap) -> bool {
        if id == self.tree.root() {
            return false;
        }
        let current = self.tree.node(id).path_ratio();
        let mut cands: Vec<(f64, usize, f64)> = self
            .neighbours(id)
            .into_iter()
            .filter(|&m| Some(m) != self.tree.node(id).parent && !self.tree.is_ancestor(id, m))
            .map(|m| {
                let (r, c) = self.ratio_via(id, m);
                (r, m, c)
            })
            .filter(|&(r, _, _)| r > current * (1.0 + 1e-12) + 1e-15)
            .collect();
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for (_, m, c) in cands {
            let (a, b) = (self.tree.node(m).pose, self.tree.node(id).pose);
            if self.edge_ok(&a, &b, map) {
                self.tree.reparent(id, m, c);
                return true;
            }
        }
        false
    }

    /// Rewires around a node whose path sums changed.
    fn rewire_from(&mut self, start: usize, map: &MultiLayerMap) {
        let mut queue = vec![start];
        let mut budget = self.cfg.rewire_budget;
        while let Some(id) = queue.pop() {
            if budget == 0 {
                break;
            }
            if !self.tree.contains(id) {
                continue;
            }
            if self.improve_parent(id, map) {
                budget -= 1;
                queue.extend(self.tree.subtree(id).into_iter().skip(1));
            }
            // offer `id` as a parent to its neighbours
            for m in self.neighbours(id) {
                if budget == 0 || m == self.tree.root() || self.tree.is_ancestor(m, id) {
                    continue;
                }
                let current = self.tree.node(m).path_ratio();
                let (r, c) = self.ratio_via(m, id);
                if r > current * (1.0 + 1e-12) + 1e-15 && Some(id) != self.tree.node(m).parent {
                    let (a, b) = (self.tree.node(id).pose, self.tree.node(m).pose);
                    if self.edge_ok(&a, &b, map) {
                        self.tree.reparent(m, id, c);
                        budget -= 1;
                        queue.extend(self.tree.subtree(m));
                    }
                }
            }
        }
    }

    /// Repeats rewiring over every node until no parent swap helps or
    /// `max_passes` is reached; returns whether a fixpoint was reached.
    pub fn rewire_all(&mut self, map: &MultiLayerMap, max_passes: usize) -> bool {
        for _ in 0..max_passes {
            let mut changed = false;
            let ids: Vec<usize> = self.tree.ids().collect();
            for id in ids {
                if self.improve_parent(id, map) {
                    changed = true;
                }
            }
            if !changed {
                return true;
            }
        }
        false
    }

    /// Whether some non-ancestor neighbour would strictly improve a node's
    /// path ratio; used to check local optimality.
    pub fn improvable_nodes(&self, map: &MultiLayerMap) -> Vec<usize> {
        self.tree
            .ids()
            .filter(|&id| id != self.tree.root())
            .filter(|&id| {
                let current = self.tree.node(id).path_ratio();
                self.neighbours(id).into_iter().any(|m| {
                    Some(m) != self.tree.node(id).parent
                        && !self.tree.is_ancestor(id, m)
                        && self.ratio_via(id, m).0 > current * (1.0 + 1e-12) + 1e-15
                        && self.edge_ok(&self.tree.node(m).pose, &self.tree.node(id).pose, map)
                })
            })
            .collect()
    }

    /// Re-evaluates a node's view against the current map.
    fn refresh_gain(&mut self, id: usize, map: &MultiLayerMap, version: u64) {
        let p = self.tree.node(id).pose.position();
        let (yaw, gain) = self.evaluate(&p, map);
        let pose = Pose::from_position(p, yaw);
        self.tree.set_gain(id, gain, pose, version);
        if let Some(parent) = self.tree.node(id).parent {
            let c = self.limits.edge_cost(&self.tree.node(parent).pose, &pose);
            self.tree.set_cost(id, c);
        }
        for ch in self.tree.node(id).children.clone() {
            let c = self.limits.edge_cost(&pose, &self.tree.node(ch).pose);
            self.tree.set_cost(ch, c);
        }
        self.tree.refresh_sums(id);
    }

    /// Picks the first node of the best path, refreshing stale gains on that
    /// path first, and makes it the new root. `None` when no node has positive
    /// utility.
    pub fn select_and_execute(&mut self, map: &MultiLayerMap, version: u64) -> Option<Pose> {
        loop {
            let u = self.tree.utilities();
            let root = self.tree.root();
            let mut best: Option<usize> = None;
            for &c in &self.tree.node(root).children {
                if u[c] > 0.0 && best.map_or(true, |b| u[c] > u[b] || (u[c] == u[b] && c < b)) {
                    best = Some(c);
                }
            }
            let first = best?;
            let target = self.tree.best_in_subtree(first);
            let stale: Vec<usize> = self.tree.path(target)[1..]
                .iter()
                .copied()
                .filter(|&n| self.tree.node(n).gain_version < version)
                .collect();
            if !stale.is_empty() {
                for n in stale {
                    self.refresh_gain(n, map, version);
                }
                continue;
            }
            let (a, b) = (self.tree.node(root).pose, self.tree.node(first).pose);
            if !self.edge_ok(&a, &b, map) {
                self.tree.remove_subtree(first);
                continue;
            }
            self.tree.reroot(first);
            return Some(self.tree.node(first).pose);
        }
    }
}
