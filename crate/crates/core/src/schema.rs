//! Shared domain vocabulary: the four index sets of the released histograms
//! (activity, metric, region, direction), trip records, per-week datasets,
//! sparse histograms, scale matrices and the mechanism configuration.
//!
//! Regions and activities are dense integer indices. Any name table lives
//! outside the pipeline.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const NUM_METRICS: usize = 3;
pub const NUM_DIRECTIONS: usize = 3;

/// The three released quantities per (activity, region, direction).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Metric {
    NumTrips,
    Distance,
    Duration,
}

impl Metric {
    pub const ALL: [Metric; NUM_METRICS] = [Metric::NumTrips, Metric::Distance, Metric::Duration];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::Bounds(format!("metric index {i} >= {NUM_METRICS}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::NumTrips => "num_trips",
            Metric::Distance => "distance",
            Metric::Duration => "duration",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "num_trips" => Ok(Metric::NumTrips),
            "distance" => Ok(Metric::Distance),
            "duration" => Ok(Metric::Duration),
            other => other
                .parse::<usize>()
                .map_err(|_| Error::input(format!("unknown metric {other:?}")))
                .and_then(Metric::from_index),
        }
    }
}

/// Trip direction relative to the region.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Direction {
    Within,
    Outbound,
    Inbound,
}

impl Direction {
    pub const ALL: [Direction; NUM_DIRECTIONS] = [Direction::Within, Direction::Outbound, Direction::Inbound];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::Bounds(format!("direction index {i} >= {NUM_DIRECTIONS}")))
    }
}

/// Sizes of the index sets. Metrics and directions are fixed at three each.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Dimensions {
    num_activities: usize,
    num_regions: usize,
}

impl Dimensions {
    pub fn new(num_activities: usize, num_regions: usize) -> Result<Self> {
        if num_activities == 0 || num_regions == 0 {
            return Err(Error::config(format!(
                "dimensions need at least one activity and one region, got {num_activities}x{num_regions}"
            )));
        }
        Ok(Dimensions {
            num_activities,
            num_regions,
        })
    }

    pub fn num_activities(&self) -> usize {
        self.num_activities
    }

    pub fn num_regions(&self) -> usize {
        self.num_regions
    }

    pub fn total_cells(&self) -> usize {
        self.num_activities * NUM_METRICS * self.num_regions * NUM_DIRECTIONS
    }

    /// Number of (activity, metric) slices.
    pub fn num_slices(&self) -> usize {
        self.num_activities * NUM_METRICS
    }

    /// Cells per (activity, metric) slice.
    pub fn slice_len(&self) -> usize {
        self.num_regions * NUM_DIRECTIONS
    }

    pub fn check(&self, key: &CellKey) -> Result<()> {
        if key.activity >= self.num_activities {
            return Err(Error::Bounds(format!(
                "activity {} >= {}",
                key.activity, self.num_activities
            )));
        }
        if key.region >= self.num_regions {
            return Err(Error::Bounds(format!("region {} >= {}", key.region, self.num_regions)));
        }
        Ok(())
    }

    /// Row-major flattening in (activity, metric, region, direction) order.
    pub fn cell_index(&self, key: &CellKey) -> Result<usize> {
        self.check(key)?;
        Ok(
            ((key.activity * NUM_METRICS + key.metric.index()) * self.num_regions + key.region) * NUM_DIRECTIONS
                + key.direction.index(),
        )
    }

    pub fn cell_at(&self, index: usize) -> Result<CellKey> {
        if index >= self.total_cells() {
            return Err(Error::Bounds(format!("cell index {index} >= {}", self.total_cells())));
        }
        let direction = index % NUM_DIRECTIONS;
        let rest = index / NUM_DIRECTIONS;
        let region = rest % self.num_regions;
        let rest = rest / self.num_regions;
        let metric = rest % NUM_METRICS;
        let activity = rest / NUM_METRICS;
        Ok(CellKey {
            activity,
            metric: Metric::from_index(metric)?,
            region,
            direction: Direction::from_index(direction)?,
        })
    }

    /// Every cell of the domain in `cell_index` order.
    pub fn cells(&self) -> impl Iterator<Item = CellKey> + '_ {
        (0..self.num_activities).flat_map(move |a| Metric::ALL.into_iter().flat_map(move |m| self.slice_cells(a, m)))
    }

    /// Cells of one (activity, metric) slice in `cell_index` order.
    pub fn slice_cells(&self, activity: usize, metric: Metric) -> impl Iterator<Item = CellKey> {
        let regions = self.num_regions;
        (0..regions).flat_map(move |region| {
            Direction::ALL.into_iter().map(move |direction| CellKey {
                activity,
                metric,
                region,
                direction,
            })
        })
    }
}

/// Coordinates of one histogram cell. The derived ordering matches
/// [`Dimensions::cell_index`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellKey {
    pub activity: usize,
    pub metric: Metric,
    pub region: usize,
    pub direction: Direction,
}

impl CellKey {
    pub fn new(activity: usize, metric: Metric, region: usize, direction: Direction) -> Self {
        CellKey {
            activity,
            metric,
            region,
            direction,
        }
    }
}

/// One trip as recorded on a device.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TripRecord {
    pub region: usize,
    pub activity: usize,
    pub direction: Direction,
    pub distance_km: f64,
    pub duration_s: f64,
}

impl TripRecord {
    pub fn validate(&self, dims: &Dimensions) -> Result<()> {
        if self.activity >= dims.num_activities() || self.region >= dims.num_regions() {
            return Err(Error::Bounds(format!(
                "record (activity {}, region {}) outside {}x{}",
                self.activity,
                self.region,
                dims.num_activities(),
                dims.num_regions()
            )));
        }
        if !(self.distance_km >= 0.0 && self.distance_km.is_finite()) {
            return Err(Error::input(format!("bad distance {}", self.distance_km)));
        }
        if !(self.duration_s >= 0.0 && self.duration_s.is_finite()) {
            return Err(Error::input(format!("bad duration {}", self.duration_s)));
        }
        Ok(())
    }

    /// The three cells a trip contributes to, with their unscaled values.
    pub fn contributions(&self) -> [(CellKey, f64); NUM_METRICS] {
        let key = |metric| CellKey::new(self.activity, metric, self.region, self.direction);
        [
            (key(Metric::NumTrips), 1.0),
            (key(Metric::Distance), self.distance_km),
            (key(Metric::Duration), self.duration_s),
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UserTrips {
    pub user_id: u64,
    pub trips: Vec<TripRecord>,
}

/// All users' trips for one week. Neighbouring datasets differ by one
/// user's complete trip list.
#[derive(Clone, Debug, PartialEq)]
pub struct WeekDataset {
    pub week_id: String,
    dims: Dimensions,
    users: Vec<UserTrips>,
}

impl WeekDataset {
    pub fn new(week_id: impl Into<String>, dims: Dimensions, users: Vec<UserTrips>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(users.len());
        for user in &users {
            if !seen.insert(user.user_id) {
                return Err(Error::input(format!("duplicate user id {}", user.user_id)));
            }
            for trip in &user.trips {
                trip.validate(&dims)?;
            }
        }
        Ok(WeekDataset {
            week_id: week_id.into(),
            dims,
            users,
        })
    }

    pub fn dims(&self) -> Dimensions {
        self.dims
    }

    pub fn users(&self) -> &[UserTrips] {
        &self.users
    }

    pub fn num_trips(&self) -> usize {
        self.users.iter().map(|u| u.trips.len()).sum()
    }

    /// A copy with one more user appended.
    pub fn with_user(&self, user: UserTrips) -> Result<Self> {
        let mut users = self.users.clone();
        users.push(user);
        WeekDataset::new(self.week_id.clone(), self.dims, users)
    }
}

/// Map from cell to value. Absent cells are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseHistogram {
    dims: Dimensions,
    cells: BTreeMap<CellKey, f64>,
}

impl SparseHistogram {
    pub fn new(dims: Dimensions) -> Self {
        SparseHistogram {
            dims,
            cells: BTreeMap::new(),
        }
    }

    pub fn from_cells(dims: Dimensions, cells: impl IntoIterator<Item = (CellKey, f64)>) -> Result<Self> {
        let mut h = SparseHistogram::new(dims);
        for (key, value) in cells {
            h.add(key, value)?;
        }
        h.normalize();
        Ok(h)
    }

    pub fn dims(&self) -> Dimensions {
        self.dims
    }

    pub fn get(&self, key: &CellKey) -> f64 {
        self.cells.get(key).copied().unwrap_or(0.0)
    }

    pub fn contains(&self, key: &CellKey) -> bool {
        self.cells.contains_key(key)
    }

    pub fn add(&mut self, key: CellKey, value: f64) -> Result<()> {
        self.dims.check(&key)?;
        *self.cells.entry(key).or_insert(0.0) += value;
        Ok(())
    }

    /// Overwrites a cell. Setting zero removes it.
    pub fn set(&mut self, key: CellKey, value: f64) -> Result<()> {
        self.dims.check(&key)?;
        if value == 0.0 {
            self.cells.remove(&key);
        } else {
            self.cells.insert(key, value);
        }
        Ok(())
    }

    pub fn remove(&mut self, key: &CellKey) -> Option<f64> {
        self.cells.remove(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&CellKey, &f64)> {
        self.cells.iter()
    }

    pub fn keys(&self) -> impl Iterator<Item = &CellKey> {
        self.cells.keys()
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Sum of absolute values, accumulated in cell order.
    pub fn l1_norm(&self) -> f64 {
        self.cells.values().map(|v| v.abs()).sum()
    }

    /// Drops stored zeros.
    pub fn normalize(&mut self) {
        self.cells.retain(|_, v| *v != 0.0);
    }

    pub fn merge_from(&mut self, other: &SparseHistogram) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::DimensionMismatch(format!("{:?} vs {:?}", self.dims, other.dims)));
        }
        for (key, value) in &other.cells {
            *self.cells.entry(*key).or_insert(0.0) += value;
        }
        Ok(())
    }

    /// Cell-wise sum.
    pub fn merged(&self, other: &SparseHistogram) -> Result<SparseHistogram> {
        let mut out = self.clone();
        out.merge_from(other)?;
        out.normalize();
        Ok(out)
    }

    pub fn scaled(&self, factor: f64) -> SparseHistogram {
        let mut out = self.clone();
        out.cells.values_mut().for_each(|v| *v *= factor);
        out.normalize();
        out
    }

    /// Restriction to one (activity, metric) slice.
    pub fn slice(&self, activity: usize, metric: Metric) -> SparseHistogram {
        let cells = self
            .cells
            .iter()
            .filter(|(k, _)| k.activity == activity && k.metric == metric)
            .map(|(k, v)| (*k, *v))
            .collect();
        SparseHistogram { dims: self.dims, cells }
    }

    /// L1 norm of each (activity, metric) slice, indexed `a * 3 + m`.
    pub fn slice_norms(&self) -> Vec<f64> {
        let mut norms = vec![0.0; self.dims.num_slices()];
        for (k, v) in &self.cells {
            norms[k.activity * NUM_METRICS + k.metric.index()] += v.abs();
        }
        norms
    }

    /// L1 distance, treating absent cells as zero.
    pub fn l1_distance(&self, other: &SparseHistogram) -> f64 {
        let mut keys: Vec<&CellKey> = self.cells.keys().chain(other.cells.keys()).collect();
        keys.sort();
        keys.dedup();
        keys.into_iter().map(|k| (self.get(k) - other.get(k)).abs()).sum()
    }

    /// Dense values in `cell_index` order.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut dense = vec![0.0; self.dims.total_cells()];
        for (k, v) in &self.cells {
            // Keys were bounds-checked on insertion.
            let i = self.dims.cell_index(k).expect("stored key within dims");
            dense[i] = *v;
        }
        dense
    }
}

/// Unscaled per-user histogram: each trip adds 1, its distance and its
/// duration to its three cells.
pub fn user_histogram(records: &[TripRecord], dims: Dimensions) -> Result<SparseHistogram> {
    let mut h = SparseHistogram::new(dims);
    for record in records {
        record.validate(&dims)?;
        for (key, value) in record.contributions() {
            h.add(key, value)?;
        }
    }
    h.normalize();
    Ok(h)
}

/// Per-(activity, metric) normalisation factors, `num_activities x 3`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaleMatrix {
    num_activities: usize,
    entries: Vec<f64>,
}

impl ScaleMatrix {
    pub fn new(num_activities: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != num_activities * NUM_METRICS {
            return Err(Error::config(format!(
                "scale matrix needs {} entries, got {}",
                num_activities * NUM_METRICS,
                entries.len()
            )));
        }
        if let Some(bad) = entries.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(Error::config(format!("scale entries must be positive, got {bad}")));
        }
        Ok(ScaleMatrix {
            num_activities,
            entries,
        })
    }

    pub fn ones(num_activities: usize) -> Self {
        ScaleMatrix {
            num_activities,
            entries: vec![1.0; num_activities * NUM_METRICS],
        }
    }

    pub fn num_activities(&self) -> usize {
        self.num_activities
    }

    pub fn get(&self, activity: usize, metric: Metric) -> f64 {
        self.entries[activity * NUM_METRICS + metric.index()]
    }

    pub fn for_cell(&self, key: &CellKey) -> f64 {
        self.get(key.activity, key.metric)
    }

    /// Row-major entries.
    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn is_ones(&self) -> bool {
        self.entries.iter().all(|s| *s == 1.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MechanismKind {
    BudgetSplit,
    JointClipping,
    ActivityMetricScaling,
}

impl MechanismKind {
    pub const ALL: [MechanismKind; 3] = [
        MechanismKind::BudgetSplit,
        MechanismKind::JointClipping,
        MechanismKind::ActivityMetricScaling,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MechanismKind::BudgetSplit => "budget_split",
            MechanismKind::JointClipping => "joint_clipping",
            MechanismKind::ActivityMetricScaling => "activity_metric_scaling",
        }
    }
}

impl fmt::Display for MechanismKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MechanismKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MechanismKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config(format!("unknown mechanism_kind {s:?}")))
    }
}

/// A single global L1 bound, or one bound per (activity, metric) slice.
#[derive(Clone, Debug, PartialEq)]
pub enum ClipBound {
    Scalar(f64),
    Grid(Vec<f64>),
}

/// Everything that determines a release, apart from the input data.
#[derive(Clone, Debug, PartialEq)]
pub struct MechanismConfig {
    pub kind: MechanismKind,
    pub epsilon: f64,
    pub clip: ClipBound,
    pub scales: ScaleMatrix,
    pub threshold_tau: f64,
    pub rng_seed: u64,
    /// The noise domain. Fixed in the config so it never depends on the data.
    pub dims: Dimensions,
}

impl MechanismConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || self.epsilon.is_nan() {
            return Err(Error::config(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        if !(self.threshold_tau >= 0.0 && self.threshold_tau.is_finite()) {
            return Err(Error::config(format!(
                "threshold_tau must be >= 0, got {}",
                self.threshold_tau
            )));
        }
        if self.scales.num_activities() != self.dims.num_activities() {
            return Err(Error::config(format!(
                "scale matrix has {} activities, dims have {}",
                self.scales.num_activities(),
                self.dims.num_activities()
            )));
        }
        match (&self.clip, self.kind) {
            (ClipBound::Grid(grid), MechanismKind::BudgetSplit) => {
                if grid.len() != self.dims.num_slices() {
                    return Err(Error::config(format!(
                        "clip grid needs {} entries, got {}",
                        self.dims.num_slices(),
                        grid.len()
                    )));
                }
                if let Some(bad) = grid.iter().find(|c| !(**c > 0.0)) {
                    return Err(Error::config(format!("clip grid entries must be > 0, got {bad}")));
                }
            }
            (ClipBound::Scalar(c), MechanismKind::JointClipping)
            | (ClipBound::Scalar(c), MechanismKind::ActivityMetricScaling) => {
                if !(*c > 0.0) {
                    return Err(Error::config(format!("clip must be > 0, got {c}")));
                }
            }
            (_, kind) => {
                return Err(Error::config(format!(
                    "{kind} takes a {} clip bound",
                    if kind == MechanismKind::BudgetSplit {
                        "per-slice grid"
                    } else {
                        "scalar"
                    }
                )))
            }
        }
        if self.kind != MechanismKind::ActivityMetricScaling && !self.scales.is_ones() {
            return Err(Error::config(format!("{} uses unit scales", self.kind)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dims() -> Dimensions {
        Dimensions::new(9, 100).unwrap()
    }

    fn trip(region: usize, activity: usize, direction: usize, dist: f64, dur: f64) -> TripRecord {
        TripRecord {
            region,
            activity,
            direction: Direction::from_index(direction).unwrap(),
            distance_km: dist,
            duration_s: dur,
        }
    }

    #[test]
    fn cell_index_endpoints() {
        let d = dims();
        assert_eq!(
            d.cell_index(&CellKey::new(0, Metric::NumTrips, 0, Direction::Within))
                .unwrap(),
            0
        );
        let last = CellKey::new(8, Metric::Duration, 99, Direction::Inbound);
        assert_eq!(d.cell_index(&last).unwrap(), d.total_cells() - 1);
        assert_eq!(d.total_cells(), 9 * 3 * 100 * 3);
    }

    #[test]
    fn cell_index_rejects_out_of_range() {
        let d = dims();
        assert!(matches!(
            d.cell_index(&CellKey::new(9, Metric::NumTrips, 0, Direction::Within)),
            Err(Error::Bounds(_))
        ));
        assert!(d
            .cell_index(&CellKey::new(0, Metric::NumTrips, 100, Direction::Within))
            .is_err());
        assert!(d.cell_at(d.total_cells()).is_err());
    }

    #[test]
    fn cell_index_is_bijective_at_desk_dims() {
        let d = dims();
        let mut expected = 0;
        for key in d.cells() {
            assert_eq!(d.cell_index(&key).unwrap(), expected);
            assert_eq!(d.cell_at(expected).unwrap(), key);
            expected += 1;
        }
        assert_eq!(expected, d.total_cells());
    }

    #[test]
    fn production_scale_cell_count() {
        let d = Dimensions::new(9, 50_000).unwrap();
        assert_eq!(d.total_cells() / NUM_METRICS, 1_350_000);
    }

    #[test]
    fn user_histogram_examples() {
        let d = dims();
        assert!(user_histogram(&[], d).unwrap().is_empty());

        let h = user_histogram(&[trip(2, 1, 0, 3.5, 600.0)], d).unwrap();
        assert_eq!(h.len(), 3);
        let key = |m| CellKey::new(1, m, 2, Direction::Within);
        assert_eq!(h.get(&key(Metric::NumTrips)), 1.0);
        assert_eq!(h.get(&key(Metric::Distance)), 3.5);
        assert_eq!(h.get(&key(Metric::Duration)), 600.0);

        let h = user_histogram(&[trip(0, 0, 1, 1.0, 10.0), trip(0, 0, 1, 2.0, 20.0)], d).unwrap();
        let key = |m| CellKey::new(0, m, 0, Direction::Outbound);
        assert_eq!(h.get(&key(Metric::NumTrips)), 2.0);
        assert_eq!(h.get(&key(Metric::Distance)), 3.0);
    }

    #[test]
    fn record_validation() {
        let d = dims();
        assert!(trip(100, 0, 0, 1.0, 1.0).validate(&d).is_err());
        assert!(trip(0, 9, 0, 1.0, 1.0).validate(&d).is_err());
        assert!(trip(0, 0, 0, -1.0, 1.0).validate(&d).is_err());
        assert!(trip(0, 0, 0, 1.0, f64::NAN).validate(&d).is_err());
        assert!(user_histogram(&[trip(0, 0, 0, 1.0, -2.0)], d).is_err());
    }

    #[test]
    fn duplicate_users_rejected() {
        let u = UserTrips {
            user_id: 7,
            trips: vec![],
        };
        assert!(WeekDataset::new("w", dims(), vec![u.clone(), u]).is_err());
    }

    #[test]
    fn normalize_drops_zeros() {
        let d = dims();
        let k = CellKey::new(0, Metric::Distance, 3, Direction::Inbound);
        let mut h = SparseHistogram::new(d);
        h.add(k, 2.0).unwrap();
        h.add(k, -2.0).unwrap();
        assert_eq!(h.len(), 1);
        h.normalize();
        assert!(h.is_empty());
    }

    #[test]
    fn merge_rejects_mismatched_dims() {
        let a = SparseHistogram::new(dims());
        let b = SparseHistogram::new(Dimensions::new(1, 1).unwrap());
        assert!(matches!(a.merged(&b), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn scale_matrix_rejects_nonpositive() {
        assert!(ScaleMatrix::new(1, vec![1.0, 0.0, 2.0]).is_err());
        assert!(ScaleMatrix::new(1, vec![1.0, 2.0]).is_err());
        assert!(ScaleMatrix::new(1, vec![1.0, 2.0, 3.0]).is_ok());
    }

    #[test]
    fn mechanism_kind_round_trip() {
        for k in MechanismKind::ALL {
            assert_eq!(k.name().parse::<MechanismKind>().unwrap(), k);
        }
        assert!("laplace".parse::<MechanismKind>().is_err());
    }

    fn arb_trip() -> impl Strategy<Value = TripRecord> {
        (0usize..100, 0usize..9, 0usize..3, 0.0f64..500.0, 0.0f64..20_000.0)
            .prop_map(|(r, a, d, dist, dur)| trip(r, a, d, dist, dur))
    }

    proptest! {
        #[test]
        fn cell_index_round_trip(a in 0usize..9, m in 0usize..3, r in 0usize..100, d in 0usize..3) {
            let dims = dims();
            let key = CellKey::new(a, Metric::from_index(m).unwrap(), r, Direction::from_index(d).unwrap());
            prop_assert_eq!(dims.cell_at(dims.cell_index(&key).unwrap()).unwrap(), key);
        }

        #[test]
        fn user_histogram_is_additive(
            a in prop::collection::vec(arb_trip(), 0..20),
            b in prop::collection::vec(arb_trip(), 0..20),
        ) {
            let d = dims();
            let joined: Vec<_> = a.iter().chain(b.iter()).copied().collect();
            let whole = user_histogram(&joined, d).unwrap();
            let parts = user_histogram(&a, d).unwrap().merged(&user_histogram(&b, d).unwrap()).unwrap();
            prop_assert_eq!(whole.len(), parts.len());
            for (k, v) in whole.iter() {
                let w = parts.get(k);
                prop_assert!((v - w).abs() <= 1e-9 * v.abs().max(1.0));
            }
        }

        #[test]
        fn merge_commutes_and_associates(
            a in prop::collection::vec(arb_trip(), 0..10),
            b in prop::collection::vec(arb_trip(), 0..10),
            c in prop::collection::vec(arb_trip(), 0..10),
        ) {
            let d = dims();
            let (ha, hb, hc) = (
                user_histogram(&a, d).unwrap(),
                user_histogram(&b, d).unwrap(),
                user_histogram(&c, d).unwrap(),
            );
            let left = ha.merged(&hb).unwrap().merged(&hc).unwrap();
            let right = hc.merged(&hb).unwrap().merged(&ha).unwrap();
            prop_assert!(left.l1_distance(&right) <= 1e-9 * left.l1_norm().max(1.0));
        }
    }
}
