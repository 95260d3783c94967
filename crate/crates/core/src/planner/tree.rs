//! Arena-backed tree of candidate views.
//!
//! Every node stores the gain of its own view and the cost of the edge from its
//! parent, plus cached sums along its path from the root. The utility of a node
//! is the best gain-per-cost ratio of any path ending in its subtree.

use crate::grid::Pose;

#[derive(Clone, Debug, PartialEq)]
pub struct PlannerNode {
    pub pose: Pose,
    /// Gain of this view; zero at the root.
    pub gain: f64,
    /// Seconds from the parent; zero at the root.
    pub cost: f64,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    /// Map version the gain was computed against.
    pub gain_version: u64,
    /// Sum of gains from the root to this node.
    pub path_gain: f64,
    /// Sum of costs from the root to this node.
    pub path_cost: f64,
}

impl PlannerNode {
    /// Gain per second of the path from the root to this node.
    pub fn path_ratio(&self) -> f64 {
        if self.path_cost > 0.0 {
            self.path_gain / self.path_cost
        } else {
            0.0
        }
    }
}

#[derive(Clone, Debug)]
pub struct ViewTree {
    nodes: Vec<Option<PlannerNode>>,
    free: Vec<usize>,
    root: usize,
    len: usize,
}

impl ViewTree {
    pub fn new(root: Pose) -> Self {
        Self {
            nodes: vec![Some(PlannerNode {
                pose: root,
                gain: 0.0,
                cost: 0.0,
                parent: None,
                children: Vec::new(),
                gain_version: 0,
                path_gain: 0.0,
                path_cost: 0.0,
            })],
            free: Vec::new(),
            root: 0,
            len: 1,
        }
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn node(&self, id: usize) -> &PlannerNode {
        self.nodes[id].as_ref().expect("live node")
    }

    fn node_mut(&mut self, id: usize) -> &mut PlannerNode {
        self.nodes[id].as_mut().expect("live node")
    }

    pub fn contains(&self, id: usize) -> bool {
        self.nodes.get(id).is_some_and(|n| n.is_some())
    }

    /// Live node ids in increasing order.
    pub fn ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().enumerate().filter(|(_, n)| n.is_some()).map(|(i, _)| i)
    }

    /// Attaches a node below `parent`; returns its id.
    pub fn add(&mut self, parent: usize, pose: Pose, gain: f64, cost: f64, gain_version: u64) -> usize {
        let p = self.node(parent);
        let node = PlannerNode {
            pose,
            gain,
            cost,
            parent: Some(parent),
            children: Vec::new(),
            gain_version,
            path_gain: p.path_gain + gain,
            path_cost: p.path_cost + cost,
        };
        let id = if let Some(id) = self.free.pop() {
            self.nodes[id] = Some(node);
            id
        } else {
            self.nodes.push(Some(node));
            self.nodes.len() - 1
        };
        self.node_mut(parent).children.push(id);
        self.len += 1;
        id
    }

    /// Ids of the subtree rooted at `id`, pre-order.
    pub fn subtree(&self, id: usize) -> Vec<usize> {
        let mut out = vec![id];
        let mut n = 0;
        while n < out.len() {
            out.extend(self.node(out[n]).children.iter().copied());
            n += 1;
        }
        out
    }

    pub fn is_ancestor(&self, a: usize, mut b: usize) -> bool {
        loop {
            if a == b {
                return true;
            }
            match self.node(b).parent {
                Some(p) => b = p,
                None => return false,
            }
        }
    }

    /// Node ids from the root to `id`, inclusive.
    pub fn path(&self, id: usize) -> Vec<usize> {
        let mut out = vec![id];
        while let Some(p) = self.node(*out.last().unwrap()).parent {
            out.push(p);
        }
        out.reverse();
        out
    }

    /// Recomputes path sums below (and including) `id` from its parent.
    pub fn refresh_sums(&mut self, id: usize) {
        for n in self.subtree(id) {
            let (pg, pc) = match self.node(n).parent {
                Some(p) => (self.node(p).path_gain, self.node(p).path_cost),
                None => (0.0, 0.0),
            };
            let node = self.node_mut(n);
            node.path_gain = pg + node.gain;
            node.path_cost = pc + node.cost;
        }
    }

    pub fn set_gain(&mut self, id: usize, gain: f64, pose: Pose, version: u64) {
        let node = self.node_mut(id);
        node.gain = gain;
        node.pose = pose;
        node.gain_version = version;
    }

    pub fn set_cost(&mut self, id: usize, cost: f64) {
        self.node_mut(id).cost = cost;
    }

    /// Moves `id` below `new_parent` with edge cost `cost`.
    pub fn reparent(&mut self, id: usize, new_parent: usize, cost: f64) {
        debug_assert!(!self.is_ancestor(id, new_parent));
        if let Some(old) = self.node(id).parent {
            self.node_mut(old).children.retain(|&c| c != id);
        }
        self.node_mut(new_parent).children.push(id);
        let node = self.node_mut(id);
        node.parent = Some(new_parent);
        node.cost = cost;
        self.refresh_sums(id);
    }

    /// Removes `id` and its subtree. The root cannot be removed.
    pub fn remove_subtree(&mut self, id: usize) {
        assert_ne!(id, self.root, "cannot remove the root");
        if let Some(p) = self.node(id).parent {
            self.node_mut(p).children.retain(|&c| c != id);
        }
        for n in self.subtree(id) {
            self.nodes[n] = None;
            self.free.push(n);
            self.len -= 1;
        }
    }

    /// Makes `id` the root by reversing the edges on its path. Edge costs are
    /// symmetric, so each reversed edge keeps its cost. The new root's gain is
    /// cleared; the old root keeps a zero gain marked stale.
    pub fn reroot(&mut self, id: usize) {
        let path = self.path(id);
        for w in path.windows(2) {
            let (parent, child) = (w[0], w[1]);
            let cost = self.node(child).cost;
            self.node_mut(parent).children.retain(|&c| c != child);
            self.node_mut(child).children.push(parent);
            let p = self.node_mut(parent);
            p.parent = Some(child);
            p.cost = cost;
        }
        // gains move with the nodes; the old root had none and the new root needs none
        let old_root = self.root;
        if old_root != id {
            let n = self.node_mut(old_root);
            n.gain = 0.0;
            n.gain_version = 0;
        }
        let r = self.node_mut(id);
        r.parent = None;
        r.cost = 0.0;
        r.gain = 0.0;
        self.root = id;
        self.refresh_sums(id);
    }

    /// Utility of every live node (indexed by id; `NaN` for dead slots).
    pub fn utilities(&self) -> Vec<f64> {
        let mut u = vec![f64::NAN; self.nodes.len()];
        let order = self.subtree(self.root);
        for &n in order.iter().rev() {
            let node = self.node(n);
            let own = if n == self.root { 0.0 } else { node.path_ratio() };
            u[n] = node.children.iter().fold(own, |m, &c| m.max(u[c]));
        }
        u
    }

    /// Node of `id`'s subtree with the best path ratio (lowest id on ties).
    pub fn best_in_subtree(&self, id: usize) -> usize {
        let mut best = id;
        for n in self.subtree(id) {
            let (r, b) = (self.node(n).path_ratio(), self.node(best).path_ratio());
            if r > b || (r == b && n < best) {
                best = n;
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(x: f64) -> Pose {
        Pose::new(x, 0.0, 0.0, 0.0)
    }

    #[test]
    fn utility_example() {
        let mut t = ViewTree::new(p(0.0));
        let a = t.add(0, p(1.0), 2.0, 1.0, 0);
        let b = t.add(a, p(2.0), 0.0, 1.0, 0);
        let u = t.utilities();
        assert_eq!(u[a], 2.0);
        assert_eq!(u[b], 1.0);
        assert_eq!(t.best_in_subtree(a), a);
    }

    #[test]
    fn reroot_reverses_the_path() {
        let mut t = ViewTree::new(p(0.0));
        let a = t.add(0, p(1.0), 2.0, 1.0, 1);
        let b = t.add(a, p(2.0), 3.0, 1.5, 1);
        let c = t.add(0, p(-1.0), 1.0, 1.0, 1);
        t.reroot(a);
        assert_eq!(t.root(), a);
        assert_eq!(t.node(a).pose, p(1.0));
        assert_eq!(t.node(0).parent, Some(a));
        assert_eq!(t.node(0).cost, 1.0);
        assert_eq!(t.node(c).parent, Some(0));
        assert_eq!(t.node(b).path_gain, 3.0);
        assert_eq!(t.node(c).path_cost, 2.0);
        assert_eq!(t.len(), 4);
    }

    #[test]
    fn remove_subtree_frees_slots() {
        let mut t = ViewTree::new(p(0.0));
        let a = t.add(0, p(1.0), 2.0, 1.0, 0);
        t.add(a, p(2.0), 3.0, 1.5, 0);
        t.remove_subtree(a);
        assert_eq!(t.len(), 1);
        assert!(t.node(0).children.is_empty());
        let again = t.add(0, p(3.0), 1.0, 1.0, 0);
        assert!(again <= 2);
    }

    /// Random tree as (parent, gain, cost) triples, parents before children.
    fn arb_tree() -> impl Strategy<Value = Vec<(usize, f64, f64)>> {
        proptest::collection::vec((any::<prop::sample::Index>(), 0.0f64..10.0, 0.01f64..5.0), 0..100).prop_map(|v| {
            v.into_iter()
                .enumerate()
                .map(|(n, (idx, g, c))| (idx.index(n + 1), g, c))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn utilities_match_path_enumeration(spec in arb_tree()) {
            let mut t = ViewTree::new(p(0.0));
            for &(parent, g, c) in &spec {
                t.add(parent, p(0.0), g, c, 0);
            }
            let u = t.utilities();
            // brute force: every node's ratio from explicit root-to-node sums,
            // maximised over every node having `n` on its path
            let ids: Vec<usize> = t.ids().collect();
            for &n in &ids {
                let mut best: f64 = if n == 0 { 0.0 } else { f64::NEG_INFINITY };
                for &m in &ids {
                    let path = t.path(m);
                    if m == 0 || !path.contains(&n) {
                        continue;
                    }
                    let g: f64 = path[1..].iter().map(|&k| spec[k - 1].1).sum();
                    let c: f64 = path[1..].iter().map(|&k| spec[k - 1].2).sum();
                    best = best.max(g / c);
                }
                prop_assert_eq!(u[n], best);
            }
        }
    }
}
