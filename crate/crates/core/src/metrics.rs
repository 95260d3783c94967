//! Ground-truth evaluation of maps and time series of mission metrics.

use rustc_hash::FxHashSet;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BlockCache, GridConfig, VoxelIndex, VoxelState};
use crate::layered::{LookupCache, MultiLayerMap};
use crate::sim::world::GroundTruthWorld;

/// Ground-truth voxels the metrics are evaluated over: free space reachable
/// from the start plus the occupied voxels bordering it.
#[derive(Clone, Debug)]
pub struct ObservableSpace {
    cfg: GridConfig,
    voxels: Vec<VoxelIndex>,
    truth: Vec<VoxelState>,
    members: FxHashSet<VoxelIndex>,
}

impl ObservableSpace {
    /// Builds the space from explicit voxels and their true states.
    pub fn from_parts(cfg: GridConfig, parts: Vec<(VoxelIndex, VoxelState)>) -> Result<Self> {
        let mut parts = parts;
        parts.sort_by_key(|p| p.0);
        parts.dedup_by_key(|p| p.0);
        if parts.iter().any(|p| !p.1.is_known()) {
            return Err(Error::InvalidArgument("ground truth must be free or occupied".into()));
        }
        let members = parts.iter().map(|p| p.0).collect();
        let (voxels, truth) = parts.into_iter().unzip();
        Ok(Self {
            cfg,
            voxels,
            truth,
            members,
        })
    }

    pub fn config(&self) -> &GridConfig {
        &self.cfg
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    pub fn contains(&self, v: VoxelIndex) -> bool {
        self.members.contains(&v)
    }

    /// Voxels in increasing index order with their true state.
    pub fn iter(&self) -> impl Iterator<Item = (VoxelIndex, VoxelState)> + '_ {
        self.voxels.iter().copied().zip(self.truth.iter().copied())
    }

    pub fn count(&self, state: VoxelState) -> usize {
        self.truth.iter().filter(|&&s| s == state).count()
    }
}

/// 6-connected flood fill of free space from `start`, plus every occupied voxel
/// sharing a face with the filled set.
pub fn observable_space(world: &GroundTruthWorld, start: VoxelIndex) -> Result<ObservableSpace> {
    if !world.contains_index(start) || world.is_occupied(start) {
        return Err(Error::StartNotFree(start));
    }
    let free = world.reachable_free(start);
    let members: FxHashSet<VoxelIndex> = free.iter().copied().collect();
    let mut parts: Vec<(VoxelIndex, VoxelState)> = free.iter().map(|&v| (v, VoxelState::Free)).collect();
    let mut shell = FxHashSet::default();
    for &v in &free {
        for n in v.neighbors6() {
            if !members.contains(&n) && world.is_occupied(n) && shell.insert(n) {
                parts.push((n, VoxelState::Occupied));
            }
        }
    }
    ObservableSpace::from_parts(*world.config(), parts)
}

/// Which part of the observable space a snapshot is computed over.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvaluationSet {
    #[default]
    AllObservable,
    /// Voxels with a measured state.
    ObservedOnly,
    /// Voxels not measured but covered by at least one prediction.
    PredictedOnly,
}

/// Raw counts behind a [`MetricsRecord`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricsCounts {
    pub evaluated: usize,
    pub known: usize,
    pub correct: usize,
    pub measured: usize,
    /// Map occupied, truth occupied.
    pub true_occupied: usize,
    pub map_occupied: usize,
    /// Truth occupied, map not unknown.
    pub observed_occupied: usize,
    pub true_free: usize,
    pub map_free: usize,
    pub observed_free: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub t: f64,
    /// Fraction of evaluated voxels with a known state.
    pub e: f64,
    /// Fraction whose state matches ground truth.
    pub c: f64,
    /// Fraction with a measured state.
    pub m: f64,
    /// Share of known voxels that are correct; `None` when nothing is known.
    pub p: Option<f64>,
    pub p_o: Option<f64>,
    pub p_f: Option<f64>,
    pub r_o: Option<f64>,
    pub r_f: Option<f64>,
    pub collisions: usize,
    pub counts: MetricsCounts,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Metrics of `map` over the whole observable space.
pub fn snapshot(t: f64, map: &MultiLayerMap, gt: &ObservableSpace, collisions: usize) -> Result<MetricsRecord> {
    snapshot_with(t, map, gt, collisions, EvaluationSet::AllObservable)
}

pub fn snapshot_with(
    t: f64,
    map: &MultiLayerMap,
    gt: &ObservableSpace,
    collisions: usize,
    set: EvaluationSet,
) -> Result<MetricsRecord> {
    if !map.config().same_lattice(gt.config()) {
        return Err(Error::GridMismatch("map and ground truth use different grids".into()));
    }
    let mut n = MetricsCounts::default();
    let mut cache = LookupCache::default();
    let mut mcache = BlockCache::default();
    for (v, truth) in gt.iter() {
        let measured = map.measured.state_cached(v, &mut mcache);
        let included = match set {
            EvaluationSet::AllObservable => true,
            EvaluationSet::ObservedOnly => measured.is_known(),
            EvaluationSet::PredictedOnly => !measured.is_known() && map.sc.log_odds_cached(v, &mut cache.sc).is_some(),
        };
        if !included {
            continue;
        }
        let state = map.lookup_cached(v, &mut cache).state;
        n.evaluated += 1;
        if measured.is_known() {
            n.measured += 1;
        }
        if !state.is_known() {
            continue;
        }
        n.known += 1;
        if state == truth {
            n.correct += 1;
        }
        match truth {
            VoxelState::Occupied => {
                n.observed_occupied += 1;
                if state == VoxelState::Occupied {
                    n.true_occupied += 1;
                }
            }
            _ => {
                n.observed_free += 1;
                if state == VoxelState::Free {
                    n.true_free += 1;
                }
            }
        }
        match state {
            VoxelState::Occupied => n.map_occupied += 1,
            _ => n.map_free += 1,
        }
    }
    let frac = |x: usize| ratio(x, n.evaluated).unwrap_or(0.0);
    Ok(MetricsRecord {
        t,
        e: frac(n.known),
        c: frac(n.correct),
        m: frac(n.measured),
        p: ratio(n.correct, n.known),
        p_o: ratio(n.true_occupied, n.map_occupied),
        p_f: ratio(n.true_free, n.map_free),
        r_o: ratio(n.true_occupied, n.observed_occupied),
        r_f: ratio(n.true_free, n.observed_free),
        collisions,
        counts: n,
    })
}

fn check_series(series: &[(f64, f64)]) -> Result<()> {
    if series.is_empty() {
        return Err(Error::InvalidArgument("empty series".into()));
    }
    if series.windows(2).any(|w| !(w[0].0 <= w[1].0)) {
        return Err(Error::InvalidArgument("series must be sorted by time".into()));
    }
    Ok(())
}

/// First time the series reaches `goal`, interpolating linearly between
/// samples; `None` if it never does.
pub fn time_to_goal(series: &[(f64, f64)], goal: f64) -> Result<Option<f64>> {
    check_series(series)?;
    let Some(i) = series.iter().position(|&(_, f)| f >= goal) else {
        return Ok(None);
    };
    if i == 0 {
        return Ok(Some(series[0].0));
    }
    let ((t0, f0), (t1, f1)) = (series[i - 1], series[i]);
    Ok(Some(t0 + (goal - f0) / (f1 - f0) * (t1 - t0)))
}

/// Linear interpolation of the series at `t`.
fn value_at(series: &[(f64, f64)], t: f64) -> f64 {
    let i = series.partition_point(|&(s, _)| s < t);
    if i == 0 {
        return series[0].1;
    }
    if i == series.len() {
        return series[i - 1].1;
    }
    let ((t0, f0), (t1, f1)) = (series[i - 1], series[i]);
    if t1 == t0 {
        return f1;
    }
    f0 + (f1 - f0) * (t - t0) / (t1 - t0)
}

/// Time average of the piecewise-linear series over `[t_min, t_max]`.
pub fn expected_performance(series: &[(f64, f64)], t_min: f64, t_max: f64) -> Result<f64> {
    check_series(series)?;
    if !(t_min < t_max) {
        return Err(Error::InvalidArgument(format!("need t_min < t_max, got {t_min} and {t_max}")));
    }
    if series[0].0 > t_min || series[series.len() - 1].0 < t_max {
        return Err(Error::InvalidArgument("series does not cover the interval".into()));
    }
    let mut knots = vec![(t_min, value_at(series, t_min))];
    knots.extend(series.iter().copied().filter(|&(t, _)| t > t_min && t < t_max));
    knots.push((t_max, value_at(series, t_max)));
    let area: f64 = knots.windows(2).map(|w| 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0)).sum();
    Ok(area / (t_max - t_min))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TradeoffWeights {
    pub coverage: f64,
    pub accuracy: f64,
    pub safety: f64,
}

impl TradeoffWeights {
    pub fn new(coverage: f64, accuracy: f64, safety: f64) -> Result<Self> {
        let w = [coverage, accuracy, safety];
        if w.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) || !w.iter().any(|&x| x > 0.0) {
            return Err(Error::InvalidArgument("weights must be non-negative with one positive".into()));
        }
        Ok(Self {
            coverage,
            accuracy,
            safety,
        })
    }
}

/// Weighted sum of the number of correct voxels, the accuracy (zero when
/// nothing is known) and the safety indicator.
pub fn tradeoff_objective(record: &MetricsRecord, weights: &TradeoffWeights, safe: bool) -> f64 {
    weights.coverage * record.counts.correct as f64
        + weights.accuracy * record.p.unwrap_or(0.0)
        + weights.safety * if safe { 1.0 } else { 0.0 }
}
