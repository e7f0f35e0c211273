//! Weighted relative error, the epsilon sweep, clip grid search and report
//! rendering.
//!
//! For each metric, a cell (a, m, r, d) is eligible when its true value is
//! positive and at least `min_devices` users contributed to it. Its error is
//! `|released - true| / true`, where a missing released cell counts as zero
//! (error 1). Cells are weighted by `n(r, d, a) / n(r)`, the share of region
//! r's trips that fall in (d, a), and the weighted mean is taken over
//! eligible cells only. The same trip-count weights serve all three metrics.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;

use crate::datagen::{derive_seed, ground_truth, mix64, GroundTruth};
use crate::dp::NoiseMode;
use crate::error::{Error, Result};
use crate::formats::KeyValues;
use crate::mechanisms::{release, run_activity_metric_scaling, FittedParams, RunOptions, DEFAULT_QUANTILE};
use crate::schema::{
    CellKey, Direction, MechanismKind, Metric, ScaleMatrix, SparseHistogram, WeekDataset, NUM_METRICS,
};

/// Device floor used at desk scale. Production used 2000.
pub const DEFAULT_MIN_DEVICES: u64 = 20;

/// Target weighted relative error for downstream use.
pub const TARGET_WRE: f64 = 0.03;

pub const DEFAULT_EPSILONS: [f64; 7] = [0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0];

/// Per-metric errors (num trips, distance, duration) reported for the
/// production proxy dataset at epsilon = 2. Shown for reference only.
pub const PRODUCTION_REFERENCE: [(MechanismKind, [f64; NUM_METRICS]); 3] = [
    (MechanismKind::JointClipping, [0.195, 0.072, 0.038]),
    (MechanismKind::BudgetSplit, [0.091, 0.150, 0.088]),
    (MechanismKind::ActivityMetricScaling, [0.028, 0.040, 0.028]),
];

/// Trip-count weights `n(r, d, a) / n(r)` from the true `num_trips` cells.
#[derive(Clone, Debug)]
pub struct WeightTable {
    trips: BTreeMap<(usize, Direction, usize), f64>,
    region_totals: Vec<f64>,
}

impl WeightTable {
    pub fn from_truth(truth: &SparseHistogram) -> Self {
        let mut trips = BTreeMap::new();
        let mut region_totals = vec![0.0; truth.dims().num_regions()];
        for (k, v) in truth.iter().filter(|(k, _)| k.metric == Metric::NumTrips) {
            trips.insert((k.region, k.direction, k.activity), *v);
            region_totals[k.region] += v;
        }
        WeightTable { trips, region_totals }
    }

    pub fn trips(&self, region: usize, direction: Direction, activity: usize) -> f64 {
        self.trips.get(&(region, direction, activity)).copied().unwrap_or(0.0)
    }

    pub fn weight(&self, key: &CellKey) -> f64 {
        let total = self.region_totals[key.region];
        if total > 0.0 {
            self.trips(key.region, key.direction, key.activity) / total
        } else {
            0.0
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellDiagnostic {
    pub key: CellKey,
    pub truth: f64,
    pub released: f64,
    pub relative_error: f64,
    pub weight: f64,
    pub devices: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricError {
    pub metric: Metric,
    /// `None` when no cell is eligible.
    pub wre: Option<f64>,
    pub eligible: usize,
    /// Eligible cells missing from the release (suppressed or clamped).
    pub suppressed_eligible: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub min_devices: u64,
    pub metrics: Vec<MetricError>,
    pub diagnostics: Vec<CellDiagnostic>,
}

impl EvalReport {
    pub fn wre(&self, metric: Metric) -> Option<f64> {
        self.metrics[metric.index()].wre
    }

    /// Unweighted mean of the three per-metric errors.
    pub fn overall(&self) -> Option<f64> {
        let mut sum = 0.0;
        for m in &self.metrics {
            sum += m.wre?;
        }
        Some(sum / self.metrics.len() as f64)
    }

    pub fn eligible_cells(&self) -> usize {
        self.metrics.iter().map(|m| m.eligible).sum()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "min_devices={}", self.min_devices);
        if self.eligible_cells() == 0 {
            out.push_str("no eligible cells\n");
        }
        let _ = writeln!(out, "metric,wre,eligible,suppressed_eligible");
        for m in &self.metrics {
            let wre = m.wre.map_or_else(|| "NA".to_string(), |w| w.to_string());
            let _ = writeln!(out, "{},{},{},{}", m.metric, wre, m.eligible, m.suppressed_eligible);
        }
        let overall = self.overall().map_or_else(|| "NA".to_string(), |w| w.to_string());
        let _ = writeln!(out, "overall,{overall},{},", self.eligible_cells());
        out
    }

    /// Per-cell CSV. Duration values are divided by `duration_unit_s` (1 for
    /// seconds, 60 for minutes); relative errors are unit-free.
    pub fn write_diagnostics(&self, duration_unit_s: f64, mut out: impl Write) -> Result<()> {
        if !(duration_unit_s > 0.0) {
            return Err(Error::config(format!(
                "duration unit must be > 0, got {duration_unit_s}"
            )));
        }
        writeln!(
            out,
            "activity,metric,region,direction,true,released,relative_error,weight,devices"
        )?;
        for d in &self.diagnostics {
            let unit = if d.key.metric == Metric::Duration {
                duration_unit_s
            } else {
                1.0
            };
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                d.key.activity,
                d.key.metric,
                d.key.region,
                d.key.direction.index(),
                d.truth / unit,
                d.released / unit,
                d.relative_error,
                d.weight,
                d.devices
            )?;
        }
        Ok(())
    }
}

pub fn weighted_relative_error(
    truth: &GroundTruth,
    released: &SparseHistogram,
    min_devices: u64,
) -> Result<EvalReport> {
    if truth.histogram.dims() != released.dims() {
        return Err(Error::DimensionMismatch(format!(
            "truth {:?} vs released {:?}",
            truth.histogram.dims(),
            released.dims()
        )));
    }
    let weights = WeightTable::from_truth(&truth.histogram);
    let mut num = [0.0; NUM_METRICS];
    let mut den = [0.0; NUM_METRICS];
    let mut eligible = [0usize; NUM_METRICS];
    let mut missing = [0usize; NUM_METRICS];
    let mut diagnostics = Vec::new();

    for (key, t) in truth.histogram.iter() {
        let devices = truth.devices_at(key);
        if !(*t > 0.0) || devices < min_devices {
            continue;
        }
        let m = key.metric.index();
        let r = released.get(key);
        let e = (r - t).abs() / t;
        let w = weights.weight(key);
        num[m] += w * e;
        den[m] += w;
        eligible[m] += 1;
        if !released.contains(key) {
            missing[m] += 1;
        }
        diagnostics.push(CellDiagnostic {
            key: *key,
            truth: *t,
            released: r,
            relative_error: e,
            weight: w,
            devices,
        });
    }

    let metrics = Metric::ALL
        .into_iter()
        .map(|metric| {
            let i = metric.index();
            MetricError {
                metric,
                wre: (den[i] > 0.0).then(|| num[i] / den[i]),
                eligible: eligible[i],
                suppressed_eligible: missing[i],
            }
        })
        .collect();
    Ok(EvalReport {
        min_devices,
        metrics,
        diagnostics,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub epsilons: Vec<f64>,
    pub mechanisms: Vec<MechanismKind>,
    pub repeats: usize,
    pub seed: u64,
    pub min_devices: u64,
    pub tau: f64,
    pub quantile: f64,
    pub mode: NoiseMode,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            epsilons: DEFAULT_EPSILONS.to_vec(),
            mechanisms: MechanismKind::ALL.to_vec(),
            repeats: 20,
            seed: 0,
            min_devices: DEFAULT_MIN_DEVICES,
            tau: 0.0,
            quantile: DEFAULT_QUANTILE,
            mode: NoiseMode::Laplace,
        }
    }
}

impl SweepConfig {
    /// All keys optional: `epsilons`, `mechanisms` (comma lists), `repeats`,
    /// `seed`, `min_devices`, `threshold_tau`, `quantile`.
    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let mut cfg = SweepConfig::default();
        if let Some(raw) = kv.get_opt("epsilons") {
            cfg.epsilons = raw
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::config(format!("epsilons: {s:?}: {e}")))
                })
                .collect::<Result<_>>()?;
        }
        if let Some(raw) = kv.get_opt("mechanisms") {
            cfg.mechanisms = raw.split(',').map(|s| s.trim().parse()).collect::<Result<_>>()?;
        }
        if kv.get_opt("repeats").is_some() {
            cfg.repeats = kv.value("repeats")?;
        }
        if kv.get_opt("seed").is_some() {
            cfg.seed = kv.value("seed")?;
        }
        if kv.get_opt("min_devices").is_some() {
            cfg.min_devices = kv.value("min_devices")?;
        }
        if kv.get_opt("threshold_tau").is_some() {
            cfg.tau = kv.value("threshold_tau")?;
        }
        if kv.get_opt("quantile").is_some() {
            cfg.quantile = kv.value("quantile")?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::config("repeats must be >= 1"));
        }
        if self.epsilons.is_empty() || self.epsilons.iter().any(|e| !(*e > 0.0)) {
            return Err(Error::config("epsilons must be a non-empty list of positive values"));
        }
        if self.mechanisms.is_empty() {
            return Err(Error::config("no mechanisms selected"));
        }
        Ok(())
    }
}

/// Seed for one grid point, independent of evaluation order.
pub fn run_seed(seed: u64, kind: MechanismKind, epsilon: f64, repeat: usize) -> u64 {
    derive_seed(
        seed,
        mix64(kind as u64) ^ mix64(epsilon.to_bits()).rotate_left(17) ^ repeat as u64,
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub kind: MechanismKind,
    pub epsilon: f64,
    pub repeat: usize,
    pub per_metric: [f64; NUM_METRICS],
    pub overall: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSummary {
    pub kind: MechanismKind,
    pub epsilon: f64,
    pub repeats: usize,
    pub wre_mean: f64,
    pub wre_std: f64,
    pub per_metric_mean: [f64; NUM_METRICS],
}

impl SweepSummary {
    pub fn standard_error(&self) -> f64 {
        self.wre_std / (self.repeats as f64).sqrt()
    }
}

#[derive(Clone, Debug)]
pub struct SweepTable {
    pub params: FittedParams,
    pub rows: Vec<SweepRow>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Mean and sample standard deviation of the overall error per
/// (mechanism, epsilon), in row order.
pub fn summarize(rows: &[SweepRow]) -> Vec<SweepSummary> {
    let mut groups: Vec<((MechanismKind, u64), Vec<&SweepRow>)> = Vec::new();
    for row in rows {
        let key = (row.kind, row.epsilon.to_bits());
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(row),
            None => groups.push((key, vec![row])),
        }
    }
    groups
        .into_iter()
        .map(|((kind, eps), rows)| {
            let overall: Vec<f64> = rows.iter().map(|r| r.overall).collect();
            let (wre_mean, wre_std) = mean_std(&overall);
            let mut per_metric_mean = [0.0; NUM_METRICS];
            for (m, slot) in per_metric_mean.iter_mut().enumerate() {
                let xs: Vec<f64> = rows.iter().map(|r| r.per_metric[m]).collect();
                *slot = mean_std(&xs).0;
            }
            SweepSummary {
                kind,
                epsilon: f64::from_bits(eps),
                repeats: rows.len(),
                wre_mean,
                wre_std,
                per_metric_mean,
            }
        })
        .collect()
}

impl SweepTable {
    pub fn summary(&self) -> Vec<SweepSummary> {
        summarize(&self.rows)
    }

    pub fn find(&self, kind: MechanismKind, epsilon: f64) -> Option<SweepSummary> {
        self.summary()
            .into_iter()
            .find(|s| s.kind == kind && s.epsilon == epsilon)
    }

    /// `mechanism,epsilon,repeat,metric,wre`, with an `overall` row per run.
    pub fn write_rows(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "mechanism,epsilon,repeat,metric,wre")?;
        for r in &self.rows {
            for m in Metric::ALL {
                writeln!(
                    out,
                    "{},{},{},{},{}",
                    r.kind,
                    r.epsilon,
                    r.repeat,
                    m,
                    r.per_metric[m.index()]
                )?;
            }
            writeln!(out, "{},{},{},overall,{}", r.kind, r.epsilon, r.repeat, r.overall)?;
        }
        Ok(())
    }

    pub fn write_summary(&self, out: impl Write) -> Result<()> {
        write_summary(&self.summary(), out)
    }
}

pub fn write_summary(summary: &[SweepSummary], mut out: impl Write) -> Result<()> {
    writeln!(out, "mechanism,epsilon,wre_mean,wre_std")?;
    for s in summary {
        writeln!(out, "{},{},{},{}", s.kind, s.epsilon, s.wre_mean, s.wre_std)?;
    }
    Ok(())
}

/// Reads the rows file back into a table (fitted params are not stored).
pub fn read_rows(text: &str) -> Result<Vec<SweepRow>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("mechanism,epsilon,repeat,metric,wre") {
        return Err(Error::parse("line 1", "expected sweep rows header"));
    }
    let mut rows: Vec<SweepRow> = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let loc = format!("line {}", i + 2);
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(Error::parse(loc, "expected 5 fields"));
        }
        let kind: MechanismKind = f[0].parse()?;
        let epsilon: f64 = f[1].parse().map_err(|_| Error::parse(loc.clone(), "bad epsilon"))?;
        let repeat: usize = f[2].parse().map_err(|_| Error::parse(loc.clone(), "bad repeat"))?;
        let wre: f64 = f[4].parse().map_err(|_| Error::parse(loc.clone(), "bad wre"))?;
        let idx = match rows
            .iter()
            .position(|r| r.kind == kind && r.epsilon == epsilon && r.repeat == repeat)
        {
            Some(j) => j,
            None => {
                rows.push(SweepRow {
                    kind,
                    epsilon,
                    repeat,
                    per_metric: [0.0; NUM_METRICS],
                    overall: 0.0,
                });
                rows.len() - 1
            }
        };
        match f[3] {
            "overall" => rows[idx].overall = wre,
            m => rows[idx].per_metric[m.parse::<Metric>()?.index()] = wre,
        }
    }
    Ok(rows)
}

fn evaluate_run(
    data: &WeekDataset,
    truth: &GroundTruth,
    params: &FittedParams,
    cfg: &SweepConfig,
    kind: MechanismKind,
    epsilon: f64,
    repeat: usize,
) -> Result<SweepRow> {
    let seed = run_seed(cfg.seed, kind, epsilon, repeat);
    let config = params.config(kind, epsilon, cfg.tau, seed, data.dims());
    let opts = RunOptions {
        mode: cfg.mode,
        ..RunOptions::default()
    };
    let result = release(data, &config, opts)?;
    let report = weighted_relative_error(truth, &result.released, cfg.min_devices)?;
    let mut per_metric = [0.0; NUM_METRICS];
    for m in Metric::ALL {
        per_metric[m.index()] = report
            .wre(m)
            .ok_or_else(|| Error::input(format!("no eligible {m} cells at min_devices={}", cfg.min_devices)))?;
    }
    Ok(SweepRow {
        kind,
        epsilon,
        repeat,
        overall: per_metric.iter().sum::<f64>() / NUM_METRICS as f64,
        per_metric,
    })
}

/// Sweep with already fitted hyperparameters.
pub fn sweep_with_params(data: &WeekDataset, params: &FittedParams, cfg: &SweepConfig) -> Result<SweepTable> {
    cfg.validate()?;
    let truth = ground_truth(data)?;
    let mut grid = Vec::new();
    for kind in &cfg.mechanisms {
        for eps in &cfg.epsilons {
            for repeat in 0..cfg.repeats {
                grid.push((*kind, *eps, repeat));
            }
        }
    }
    let rows = grid
        .par_iter()
        .map(|(kind, eps, repeat)| evaluate_run(data, &truth, params, cfg, *kind, *eps, *repeat))
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepTable {
        params: params.clone(),
        rows,
    })
}

/// Fits hyperparameters on `proxy`, then releases and evaluates `data` for
/// every (mechanism, epsilon, repeat).
pub fn sweep(data: &WeekDataset, proxy: &WeekDataset, cfg: &SweepConfig) -> Result<SweepTable> {
    if data.dims() != proxy.dims() {
        return Err(Error::DimensionMismatch(
            "proxy and evaluation data differ in dimensions".into(),
        ));
    }
    let params = FittedParams::fit(proxy, cfg.quantile)?;
    sweep_with_params(data, &params, cfg)
}

/// Picks the clip bound with the lowest mean overall error of
/// activity+metric scaling on the proxy itself. Every candidate sees the
/// same noise seeds; ties go to the smaller bound.
pub fn clip_grid_search(
    proxy: &WeekDataset,
    scales: &ScaleMatrix,
    epsilon: f64,
    grid: &[f64],
    repeats: usize,
    seed: u64,
    min_devices: u64,
) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::config("empty clip grid"));
    }
    let truth = ground_truth(proxy)?;
    let mut candidates = grid.to_vec();
    candidates.sort_by(f64::total_cmp);
    let scores = candidates
        .par_iter()
        .map(|clip| {
            let mut total = 0.0;
            for repeat in 0..repeats.max(1) {
                let run_seed = derive_seed(seed, repeat as u64);
                let r =
                    run_activity_metric_scaling(proxy, scales, *clip, epsilon, 0.0, run_seed, RunOptions::default())?;
                let report = weighted_relative_error(&truth, &r.released, min_devices)?;
                total += report
                    .overall()
                    .ok_or_else(|| Error::input("no eligible cells on proxy"))?;
            }
            Ok(total / repeats.max(1) as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s < scores[best] {
            best = i;
        }
    }
    Ok(candidates[best])
}

/// Multipliers for the default geometric grid around a fitted clip.
pub const CLIP_GRID_FACTORS: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 4.0];

/// Plain-text per-metric table at the sweep epsilon closest to `epsilon`,
/// followed by the production-scale reference rows.
pub fn render_table(summary: &[SweepSummary], epsilon: f64) -> String {
    let mut out = String::new();
    let chosen = summary
        .iter()
        .map(|s| s.epsilon)
        .min_by(|a, b| (a - epsilon).abs().total_cmp(&(b - epsilon).abs()));
    let Some(eps) = chosen else {
        return "empty sweep\n".to_string();
    };
    let _ = writeln!(out, "Weighted relative error at epsilon = {eps}");
    let _ = writeln!(
        out,
        "{:<26} {:>10} {:>10} {:>10} {:>10}",
        "mechanism", "num_trips", "distance", "duration", "overall"
    );
    for s in summary.iter().filter(|s| s.epsilon == eps) {
        let [t, d, u] = s.per_metric_mean;
        let _ = writeln!(
            out,
            "{:<26} {t:>10.4} {d:>10.4} {u:>10.4} {:>10.4}",
            s.kind.name(),
            s.wre_mean
        );
    }
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "Reference (production proxy data, epsilon = 2; not reproduced here)"
    );
    for (kind, [t, d, u]) in PRODUCTION_REFERENCE {
        let _ = writeln!(out, "{:<26} {t:>10.3} {d:>10.3} {u:>10.3}", kind.name());
    }
    let _ = writeln!(out, "target overall error: {TARGET_WRE}");
    out
}

/// XY data for error-vs-epsilon curves: one series per mechanism plus a
/// flat `target` series at 0.03. Plot x on a log scale.
pub fn write_plot_data(summary: &[SweepSummary], mut out: impl Write) -> Result<()> {
    writeln!(out, "series,epsilon,wre,wre_std")?;
    for s in summary {
        writeln!(out, "{},{},{},{}", s.kind, s.epsilon, s.wre_mean, s.wre_std)?;
    }
    let mut eps: Vec<f64> = summary.iter().map(|s| s.epsilon).collect();
    eps.sort_by(f64::total_cmp);
    eps.dedup();
    for e in eps {
        writeln!(out, "target,{e},{TARGET_WRE},0")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::Dimensions;

    fn truth_two_cells() -> GroundTruth {
        // Region 0, two (direction, activity) groups with 25 and 75 trips.
        let dims = Dimensions::new(1, 1).unwrap();
        let a = CellKey::new(0, Metric::NumTrips, 0, Direction::Within);
        let b = CellKey::new(0, Metric::NumTrips, 0, Direction::Outbound);
        let da = CellKey::new(0, Metric::Distance, 0, Direction::Within);
        let db = CellKey::new(0, Metric::Distance, 0, Direction::Outbound);
        let histogram = SparseHistogram::from_cells(dims, [(a, 25.0), (b, 75.0), (da, 100.0), (db, 300.0)]).unwrap();
        let devices = [(a, 30), (b, 40), (da, 30), (db, 40)].into_iter().collect();
        GroundTruth { histogram, devices }
    }

    #[test]
    fn exact_release_scores_zero() {
        let t = truth_two_cells();
        let r = weighted_relative_error(&t, &t.histogram, 1).unwrap();
        assert_eq!(r.wre(Metric::NumTrips), Some(0.0));
        assert_eq!(r.wre(Metric::Distance), Some(0.0));
        assert_eq!(r.wre(Metric::Duration), None);
    }

    #[test]
    fn two_cell_example() {
        let t = truth_two_cells();
        let dims = t.histogram.dims();
        let released = SparseHistogram::from_cells(
            dims,
            [
                (CellKey::new(0, Metric::Distance, 0, Direction::Within), 110.0),
                (CellKey::new(0, Metric::Distance, 0, Direction::Outbound), 270.0),
            ],
        )
        .unwrap();
        let r = weighted_relative_error(&t, &released, 1).unwrap();
        assert!((r.wre(Metric::Distance).unwrap() - 0.10).abs() < 1e-12);
        // num_trips cells missing from the release score 1 each.
        assert_eq!(r.wre(Metric::NumTrips), Some(1.0));
        assert_eq!(r.metrics[0].suppressed_eligible, 2);
    }

    #[test]
    fn empty_release_scores_one() {
        let t = truth_two_cells();
        let r = weighted_relative_error(&t, &SparseHistogram::new(t.histogram.dims()), 1).unwrap();
        assert_eq!(r.wre(Metric::NumTrips), Some(1.0));
        assert_eq!(r.wre(Metric::Distance), Some(1.0));
    }

    #[test]
    fn device_floor_excludes_cells() {
        let t = truth_two_cells();
        let r = weighted_relative_error(&t, &t.histogram, 35).unwrap();
        assert_eq!(r.metrics[0].eligible, 1);
        let r = weighted_relative_error(&t, &t.histogram, 1000).unwrap();
        assert_eq!(r.eligible_cells(), 0);
        assert!(r.render().contains("no eligible cells"));
        assert_eq!(r.overall(), None);
    }

    #[test]
    fn dimension_mismatch() {
        let t = truth_two_cells();
        let other = SparseHistogram::new(Dimensions::new(2, 1).unwrap());
        assert!(weighted_relative_error(&t, &other, 1).is_err());
    }

    #[test]
    fn weights_sum_to_one_per_region() {
        let t = truth_two_cells();
        let w = WeightTable::from_truth(&t.histogram);
        let total: f64 = t
            .histogram
            .keys()
            .filter(|k| k.metric == Metric::NumTrips)
            .map(|k| w.weight(k))
            .sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rows_round_trip() {
        let rows = vec![SweepRow {
            kind: MechanismKind::BudgetSplit,
            epsilon: 0.25,
            repeat: 3,
            per_metric: [0.5, 0.25, 0.125],
            overall: 0.875 / 3.0,
        }];
        let table = SweepTable {
            params: dummy_params(),
            rows: rows.clone(),
        };
        let mut buf = Vec::new();
        table.write_rows(&mut buf).unwrap();
        assert_eq!(read_rows(std::str::from_utf8(&buf).unwrap()).unwrap(), rows);
    }

    fn dummy_params() -> FittedParams {
        FittedParams {
            scales: ScaleMatrix::ones(1),
            scaled_clip: 1.0,
            joint_clip: 1.0,
            slice_clips: vec![1.0; 3],
        }
    }

    #[test]
    fn plot_data_has_target_line() {
        let summary = vec![SweepSummary {
            kind: MechanismKind::JointClipping,
            epsilon: 2.0,
            repeats: 1,
            wre_mean: 0.1,
            wre_std: 0.0,
            per_metric_mean: [0.1; 3],
        }];
        let mut buf = Vec::new();
        write_plot_data(&summary, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("target,2,0.03,0"));
        let table = render_table(&summary, 2.0);
        assert!(table.contains("joint_clipping"));
        assert!(table.contains("0.195"));
    }

    #[test]
    fn sweep_config_parsing() {
        let kv = KeyValues::parse("epsilons=1,2\nmechanisms=joint_clipping\nrepeats=3\n").unwrap();
        let cfg = SweepConfig::from_key_values(&kv).unwrap();
        assert_eq!(cfg.epsilons, vec![1.0, 2.0]);
        assert_eq!(cfg.mechanisms, vec![MechanismKind::JointClipping]);
        assert_eq!(cfg.repeats, 3);
        assert!(SweepConfig::from_key_values(&KeyValues::parse("repeats=0").unwrap()).is_err());
        assert_eq!(
            SweepConfig::from_key_values(&KeyValues::default()).unwrap(),
            SweepConfig::default()
        );
    }

    #[test]
    fn run_seeds_are_distinct() {
        let mut seen = std::collections::HashSet::new();
        for kind in MechanismKind::ALL {
            for eps in DEFAULT_EPSILONS {
                for r in 0..20 {
                    assert!(seen.insert(run_seed(7, kind, eps, r)));
                }
            }
        }
    }

    #[test]
    fn diagnostics_show_duration_in_minutes() {
        let dims = Dimensions::new(1, 1).unwrap();
        let t = CellKey::new(0, Metric::NumTrips, 0, Direction::Within);
        let u = CellKey::new(0, Metric::Duration, 0, Direction::Within);
        let histogram = SparseHistogram::from_cells(dims, [(t, 2.0), (u, 600.0)]).unwrap();
        let devices = [(t, 2), (u, 2)].into_iter().collect();
        let truth = GroundTruth { histogram, devices };
        let released = SparseHistogram::from_cells(dims, [(t, 2.0), (u, 540.0)]).unwrap();
        let report = weighted_relative_error(&truth, &released, 1).unwrap();
        let mut out = Vec::new();
        report.write_diagnostics(60.0, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.contains("0,num_trips,0,0,2,2,0,"), "{text}");
        assert!(text.contains("0,duration,0,0,10,9,0.1,"), "{text}");
        assert!(report.write_diagnostics(0.0, Vec::new()).is_err());
    }
}
