//! The three release strategies behind one entry point.
//!
//! * Budget split: one Laplace release per (activity, metric) slice, each
//!   with its own clip and `epsilon / (num_activities * 3)`.
//! * Joint clipping: one unscaled global histogram, one clip, full epsilon.
//! * Activity+metric scaling: divide each cell by S(a, m) on the client,
//!   clip the joint vector once, add noise centrally at full epsilon and
//!   multiply back by S(a, m) on the server.

use rayon::prelude::*;

use crate::aggregation::{post_process, server_work, ServerParams};
use crate::client::{run_fleet, scaled_histogram, InvalidRecordPolicy};
use crate::dp::{
    add_noise, charged_epsilon, clipped_sum, exact_quantile, laplace_mechanism, NoiseMode, NoiseSource, PrivacyLedger,
};
use crate::error::{Error, Result};
use crate::schema::{
    user_histogram, ClipBound, Dimensions, MechanismConfig, MechanismKind, Metric, ScaleMatrix, SparseHistogram,
    WeekDataset, NUM_METRICS,
};

/// Default quantile used for scales and clip bounds.
pub const DEFAULT_QUANTILE: f64 = 0.95;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunOptions {
    pub mode: NoiseMode,
    /// Keep the pre-noise aggregate in the result (evaluation only).
    pub keep_raw_sum: bool,
    pub policy: InvalidRecordPolicy,
    /// Ledger cap; `None` caps at the configured epsilon. A cap below the
    /// mechanism's spend aborts before any noise is drawn.
    pub budget: Option<f64>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            mode: NoiseMode::Laplace,
            keep_raw_sum: false,
            policy: InvalidRecordPolicy::Abort,
            budget: None,
        }
    }
}

impl RunOptions {
    pub fn evaluation() -> Self {
        RunOptions {
            keep_raw_sum: true,
            ..Default::default()
        }
    }

    pub fn test_mode() -> Self {
        RunOptions {
            mode: NoiseMode::Test,
            keep_raw_sum: true,
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug)]
pub struct ReleaseResult {
    pub kind: MechanismKind,
    /// Descaled, thresholded, non-negative.
    pub released: SparseHistogram,
    /// Signed noisy values in the noise domain (scaled for activity+metric scaling).
    pub noisy: SparseHistogram,
    /// Pre-noise clipped aggregate in the noise domain, when requested.
    pub raw_sum: Option<SparseHistogram>,
    pub suppressed_cells: usize,
    pub total_epsilon: f64,
    pub ledger: PrivacyLedger,
    pub config: MechanismConfig,
    pub seed: u64,
}

fn new_ledger(opts: RunOptions, epsilon: f64) -> Result<PrivacyLedger> {
    match opts.mode {
        NoiseMode::Laplace => PrivacyLedger::new(opts.budget.unwrap_or(epsilon)),
        NoiseMode::Test => Ok(PrivacyLedger::unbounded()),
    }
}

/// Runs the mechanism described by `config` on `data`.
pub fn release(data: &WeekDataset, config: &MechanismConfig, opts: RunOptions) -> Result<ReleaseResult> {
    config.validate()?;
    if config.dims != data.dims() {
        return Err(Error::DimensionMismatch(format!(
            "config domain {:?} vs data {:?}",
            config.dims,
            data.dims()
        )));
    }
    let (tau, seed, eps) = (config.threshold_tau, config.rng_seed, config.epsilon);
    match (&config.clip, config.kind) {
        (ClipBound::Grid(clips), MechanismKind::BudgetSplit) => run_budget_split(data, clips, eps, tau, seed, opts),
        (ClipBound::Scalar(c), MechanismKind::JointClipping) => run_joint_clipping(data, *c, eps, tau, seed, opts),
        (ClipBound::Scalar(c), MechanismKind::ActivityMetricScaling) => {
            run_activity_metric_scaling(data, &config.scales, *c, eps, tau, seed, opts)
        }
        _ => unreachable!("validated above"),
    }
}

/// Unscaled user histograms in user-id order.
fn user_histograms(data: &WeekDataset) -> Result<Vec<(u64, SparseHistogram)>> {
    let dims = data.dims();
    let mut out = data
        .users()
        .par_iter()
        .map(|u| Ok((u.user_id, user_histogram(&u.trips, dims)?)))
        .collect::<Result<Vec<_>>>()?;
    out.sort_by_key(|(id, _)| *id);
    Ok(out)
}

fn slice_index(activity: usize, metric: Metric) -> usize {
    activity * NUM_METRICS + metric.index()
}

/// Per-slice clipped sums: each user's (a, m) slice is clipped to
/// `clips[a * 3 + m]` independently, then summed in user-id order.
fn budget_split_sum(dims: Dimensions, users: &[(u64, SparseHistogram)], clips: &[f64]) -> Result<SparseHistogram> {
    let mut sum = SparseHistogram::new(dims);
    for (_, h) in users {
        let norms = h.slice_norms();
        for (key, value) in h.iter() {
            let s = slice_index(key.activity, key.metric);
            let factor = if norms[s] > clips[s] { clips[s] / norms[s] } else { 1.0 };
            sum.add(*key, value * factor)?;
        }
    }
    sum.normalize();
    Ok(sum)
}

pub fn run_budget_split(
    data: &WeekDataset,
    clips: &[f64],
    epsilon: f64,
    tau: f64,
    seed: u64,
    opts: RunOptions,
) -> Result<ReleaseResult> {
    let dims = data.dims();
    let config = MechanismConfig {
        kind: MechanismKind::BudgetSplit,
        epsilon,
        clip: ClipBound::Grid(clips.to_vec()),
        scales: ScaleMatrix::ones(dims.num_activities()),
        threshold_tau: tau,
        rng_seed: seed,
        dims,
    };
    config.validate()?;

    let slices = dims.num_slices();
    let slice_eps = epsilon / slices as f64;
    let mut ledger = new_ledger(opts, epsilon)?;
    for a in 0..dims.num_activities() {
        for m in Metric::ALL {
            ledger.charge(format!("slice a={a} m={m}"), charged_epsilon(opts.mode, slice_eps))?;
        }
    }

    let users = user_histograms(data)?;
    let raw = budget_split_sum(dims, &users, clips)?;
    let noise_scale = |a: usize, m: Metric| clips[slice_index(a, m)] / slice_eps;

    // Slices are contiguous in cell order, so one stream walks the domain in
    // cell_index order.
    let mut noise = NoiseSource::new(seed, opts.mode);
    let mut noisy_cells = Vec::with_capacity(dims.total_cells());
    for a in 0..dims.num_activities() {
        for m in Metric::ALL {
            noisy_cells.extend(add_noise(&raw, dims.slice_cells(a, m), noise_scale(a, m), &mut noise));
        }
    }
    let noisy = SparseHistogram::from_cells(dims, noisy_cells)?;
    let (released, suppressed_cells) =
        post_process(&noisy, &config.scales, |k| noise_scale(k.activity, k.metric), tau)?;

    Ok(ReleaseResult {
        kind: MechanismKind::BudgetSplit,
        released,
        noisy,
        raw_sum: opts.keep_raw_sum.then_some(raw),
        suppressed_cells,
        total_epsilon: ledger.total(),
        ledger,
        config,
        seed,
    })
}

pub fn run_joint_clipping(
    data: &WeekDataset,
    clip: f64,
    epsilon: f64,
    tau: f64,
    seed: u64,
    opts: RunOptions,
) -> Result<ReleaseResult> {
    let dims = data.dims();
    let config = MechanismConfig {
        kind: MechanismKind::JointClipping,
        epsilon,
        clip: ClipBound::Scalar(clip),
        scales: ScaleMatrix::ones(dims.num_activities()),
        threshold_tau: tau,
        rng_seed: seed,
        dims,
    };
    config.validate()?;

    let histograms: Vec<SparseHistogram> = user_histograms(data)?.into_iter().map(|(_, h)| h).collect();
    let mut ledger = new_ledger(opts, epsilon)?;
    let mut noise = NoiseSource::new(seed, opts.mode);
    let noisy = laplace_mechanism(&histograms, dims, clip, epsilon, &mut noise, &mut ledger)?;
    let b = clip / epsilon;
    let (released, suppressed_cells) = post_process(&noisy, &config.scales, |_| b, tau)?;
    let raw_sum = if opts.keep_raw_sum {
        Some(clipped_sum(dims, &histograms, clip)?)
    } else {
        None
    };

    Ok(ReleaseResult {
        kind: MechanismKind::JointClipping,
        released,
        noisy,
        raw_sum,
        suppressed_cells,
        total_epsilon: ledger.total(),
        ledger,
        config,
        seed,
    })
}

pub fn run_activity_metric_scaling(
    data: &WeekDataset,
    scales: &ScaleMatrix,
    clip: f64,
    epsilon: f64,
    tau: f64,
    seed: u64,
    opts: RunOptions,
) -> Result<ReleaseResult> {
    let dims = data.dims();
    let config = MechanismConfig {
        kind: MechanismKind::ActivityMetricScaling,
        epsilon,
        clip: ClipBound::Scalar(clip),
        scales: scales.clone(),
        threshold_tau: tau,
        rng_seed: seed,
        dims,
    };
    config.validate()?;

    let contributions = run_fleet(data, scales, clip, opts.policy)?;
    let mut ledger = new_ledger(opts, epsilon)?;
    let params = ServerParams {
        clip,
        epsilon,
        tau,
        seed,
        mode: opts.mode,
        keep_raw_sum: opts.keep_raw_sum,
    };
    let report = server_work(dims, &contributions, scales, &params, &mut ledger)?;

    Ok(ReleaseResult {
        kind: MechanismKind::ActivityMetricScaling,
        released: report.released,
        noisy: report.noisy,
        raw_sum: report.raw_sum,
        suppressed_cells: report.suppressed_cells,
        total_epsilon: ledger.total(),
        ledger,
        config,
        seed,
    })
}

/// The clipped, summed aggregate the mechanism adds noise to, in its noise
/// domain. Spends no budget and must never be released.
pub fn pre_noise_aggregate(data: &WeekDataset, config: &MechanismConfig) -> Result<SparseHistogram> {
    config.validate()?;
    let dims = data.dims();
    match (&config.clip, config.kind) {
        (ClipBound::Grid(clips), MechanismKind::BudgetSplit) => budget_split_sum(dims, &user_histograms(data)?, clips),
        (ClipBound::Scalar(c), MechanismKind::JointClipping) => {
            let hs: Vec<_> = user_histograms(data)?.into_iter().map(|(_, h)| h).collect();
            clipped_sum(dims, &hs, *c)
        }
        (ClipBound::Scalar(c), MechanismKind::ActivityMetricScaling) => {
            let contributions = run_fleet(data, &config.scales, *c, InvalidRecordPolicy::Abort)?;
            crate::aggregation::secure_sum(dims, &contributions)
        }
        _ => unreachable!("validated above"),
    }
}

/// S(a, m): the `q`-quantile, over users with a nonzero (a, m) slice, of the
/// slice's L1 norm. Slices nobody touches get 1.
pub fn fit_scales(data: &WeekDataset, q: f64) -> Result<ScaleMatrix> {
    let dims = data.dims();
    let per_user: Vec<Vec<f64>> = user_histograms(data)?
        .into_iter()
        .map(|(_, h)| h.slice_norms())
        .collect();
    let mut entries = Vec::with_capacity(dims.num_slices());
    for s in 0..dims.num_slices() {
        let nonzero: Vec<f64> = per_user.iter().map(|n| n[s]).filter(|n| *n > 0.0).collect();
        entries.push(if nonzero.is_empty() {
            1.0
        } else {
            exact_quantile(&nonzero, q)?
        });
    }
    ScaleMatrix::new(dims.num_activities(), entries)
}

/// Per-slice clip bounds for budget split: the same slice-norm quantiles.
pub fn fit_budget_split_clips(data: &WeekDataset, q: f64) -> Result<Vec<f64>> {
    Ok(fit_scales(data, q)?.entries().to_vec())
}

/// The `q`-quantile of users' pre-clip L1 norms after dividing by `scales`.
/// Users without any trips are left out.
pub fn fit_clip(data: &WeekDataset, scales: &ScaleMatrix, q: f64) -> Result<f64> {
    let dims = data.dims();
    let norms = data
        .users()
        .par_iter()
        .map(|u| {
            Ok(scaled_histogram(&u.trips, dims, scales, InvalidRecordPolicy::Abort)?
                .0
                .l1_norm())
        })
        .collect::<Result<Vec<f64>>>()?;
    let nonzero: Vec<f64> = norms.into_iter().filter(|n| *n > 0.0).collect();
    if nonzero.is_empty() {
        return Err(Error::input("cannot fit a clip bound on a dataset with no trips"));
    }
    exact_quantile(&nonzero, q)
}

/// Hyperparameters for all three mechanisms fitted on one (proxy) dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct FittedParams {
    pub scales: ScaleMatrix,
    pub scaled_clip: f64,
    pub joint_clip: f64,
    pub slice_clips: Vec<f64>,
}

impl FittedParams {
    pub fn fit(proxy: &WeekDataset, q: f64) -> Result<Self> {
        let scales = fit_scales(proxy, q)?;
        let scaled_clip = fit_clip(proxy, &scales, q)?;
        let joint_clip = fit_clip(proxy, &ScaleMatrix::ones(proxy.dims().num_activities()), q)?;
        Ok(FittedParams {
            slice_clips: scales.entries().to_vec(),
            scales,
            scaled_clip,
            joint_clip,
        })
    }

    pub fn config(&self, kind: MechanismKind, epsilon: f64, tau: f64, seed: u64, dims: Dimensions) -> MechanismConfig {
        let ones = ScaleMatrix::ones(dims.num_activities());
        let (clip, scales) = match kind {
            MechanismKind::BudgetSplit => (ClipBound::Grid(self.slice_clips.clone()), ones),
            MechanismKind::JointClipping => (ClipBound::Scalar(self.joint_clip), ones),
            MechanismKind::ActivityMetricScaling => (ClipBound::Scalar(self.scaled_clip), self.scales.clone()),
        };
        MechanismConfig {
            kind,
            epsilon,
            clip,
            scales,
            threshold_tau: tau,
            rng_seed: seed,
            dims,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{Direction, TripRecord, UserTrips};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dims() -> Dimensions {
        Dimensions::new(3, 6).unwrap()
    }

    fn random_dataset(seed: u64, users: u64) -> WeekDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let users = (0..users)
            .map(|user_id| UserTrips {
                user_id,
                trips: (0..rng.gen_range(0..12))
                    .map(|_| TripRecord {
                        region: rng.gen_range(0..6),
                        activity: rng.gen_range(0..3),
                        direction: Direction::from_index(rng.gen_range(0..3)).unwrap(),
                        distance_km: rng.gen::<f64>() * 50.0,
                        duration_s: rng.gen::<f64>() * 3000.0,
                    })
                    .collect(),
            })
            .collect();
        WeekDataset::new("w", dims(), users).unwrap()
    }

    fn constant_dataset(norm: f64) -> WeekDataset {
        let users = (0..50)
            .map(|user_id| UserTrips {
                user_id,
                trips: vec![TripRecord {
                    region: (user_id % 6) as usize,
                    activity: 0,
                    direction: Direction::Within,
                    distance_km: norm,
                    duration_s: 2.0 * norm,
                }],
            })
            .collect();
        WeekDataset::new("c", dims(), users).unwrap()
    }

    #[test]
    fn budget_split_accounting() {
        let data = random_dataset(1, 30);
        let r = run_budget_split(&data, &[5.0; 9], 2.0, 0.0, 7, RunOptions::default()).unwrap();
        assert_eq!(r.ledger.charges().len(), 9);
        let per = 2.0 / 9.0;
        assert!(r.ledger.charges().iter().all(|c| c.epsilon == per));
        assert!((r.total_epsilon - 2.0).abs() <= 1e-12);
    }

    #[test]
    fn nine_activities_split_27_ways() {
        let d = Dimensions::new(9, 2).unwrap();
        let data = WeekDataset::new("w", d, vec![]).unwrap();
        let r = run_budget_split(&data, &[1.0; 27], 2.0, 0.0, 0, RunOptions::default()).unwrap();
        assert_eq!(r.ledger.charges().len(), 27);
        assert!((r.ledger.charges()[0].epsilon - 2.0 / 27.0).abs() < 1e-15);
        assert!((r.total_epsilon - 2.0).abs() <= 1e-12);
    }

    #[test]
    fn single_activity_splits_three_ways() {
        let d = Dimensions::new(1, 2).unwrap();
        let data = WeekDataset::new("w", d, vec![]).unwrap();
        let r = run_budget_split(&data, &[1.0; 3], 3.0, 0.0, 0, RunOptions::default()).unwrap();
        assert_eq!(r.ledger.charges().len(), 3);
        assert!(r.ledger.charges().iter().all(|c| c.epsilon == 1.0));
    }

    #[test]
    fn budget_split_noise_scale_per_slice() {
        // Zero data: per-slice noisy values are pure Laplace(clip * k / eps).
        let d = Dimensions::new(1, 2000).unwrap();
        let data = WeekDataset::new("w", d, vec![]).unwrap();
        let clips = [1.0, 10.0, 100.0];
        let r = run_budget_split(&data, &clips, 3.0, 0.0, 5, RunOptions::default()).unwrap();
        for (m, clip) in Metric::ALL.into_iter().zip(clips) {
            let xs: Vec<f64> = d.slice_cells(0, m).map(|k| r.noisy.get(&k)).collect();
            let mad = xs.iter().map(|x| x.abs()).sum::<f64>() / xs.len() as f64;
            // E|Lap(b)| = b, b = clip * 3 / 3.
            assert!((mad / clip - 1.0).abs() < 0.08, "{m}: {mad}");
        }
    }

    #[test]
    fn joint_clipping_exact_in_test_mode() {
        let data = random_dataset(2, 40);
        let r = run_joint_clipping(&data, 1e9, 1.0, 0.0, 3, RunOptions::test_mode()).unwrap();
        let mut truth = SparseHistogram::new(dims());
        for u in data.users() {
            truth.merge_from(&user_histogram(&u.trips, dims()).unwrap()).unwrap();
        }
        truth.normalize();
        assert!(r.released.l1_distance(&truth) <= 1e-9 * truth.l1_norm());
    }

    #[test]
    fn scaling_with_unit_scales_is_joint_clipping() {
        let data = random_dataset(3, 60);
        for tau in [0.0, 2.0] {
            let jc = run_joint_clipping(&data, 500.0, 1.5, tau, 11, RunOptions::default()).unwrap();
            let ams =
                run_activity_metric_scaling(&data, &ScaleMatrix::ones(3), 500.0, 1.5, tau, 11, RunOptions::default())
                    .unwrap();
            assert_eq!(
                jc.noisy.to_dense().iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                ams.noisy.to_dense().iter().map(|x| x.to_bits()).collect::<Vec<_>>()
            );
            assert_eq!(jc.released, ams.released);
            assert_eq!(jc.suppressed_cells, ams.suppressed_cells);
        }
    }

    #[test]
    fn scaling_zero_noise_equals_descaled_clipped_sum() {
        let data = random_dataset(4, 80);
        let scales = fit_scales(&data, 0.95).unwrap();
        let clip = fit_clip(&data, &scales, 0.95).unwrap();
        let r = run_activity_metric_scaling(&data, &scales, clip, 2.0, 0.0, 0, RunOptions::test_mode()).unwrap();
        let raw = r.raw_sum.as_ref().unwrap();
        for (k, v) in raw.iter() {
            assert_eq!(r.released.get(k), v * scales.for_cell(k));
        }
        assert_eq!(r.released.len(), raw.len());
    }

    #[test]
    fn adjacent_datasets_respect_clip_bounds() {
        let base = random_dataset(5, 25);
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let extra = UserTrips {
            user_id: 1000,
            trips: (0..30)
                .map(|_| TripRecord {
                    region: rng.gen_range(0..6),
                    activity: rng.gen_range(0..3),
                    direction: Direction::Inbound,
                    distance_km: 1e4,
                    duration_s: 1e6,
                })
                .collect(),
        };
        let plus = base.with_user(extra).unwrap();
        let fitted = FittedParams::fit(&base, 0.95).unwrap();
        for kind in MechanismKind::ALL {
            let cfg = fitted.config(kind, 1.0, 0.0, 0, dims());
            let a = pre_noise_aggregate(&base, &cfg).unwrap();
            let b = pre_noise_aggregate(&plus, &cfg).unwrap();
            match &cfg.clip {
                ClipBound::Scalar(c) => assert!(a.l1_distance(&b) <= c * (1.0 + 1e-9)),
                ClipBound::Grid(clips) => {
                    for act in 0..3 {
                        for m in Metric::ALL {
                            let d = a.slice(act, m).l1_distance(&b.slice(act, m));
                            assert!(d <= clips[slice_index(act, m)] * (1.0 + 1e-9));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn fit_scales_constant_and_default() {
        let data = constant_dataset(4.0);
        let s = fit_scales(&data, 0.95).unwrap();
        assert_eq!(s.get(0, Metric::NumTrips), 1.0);
        assert_eq!(s.get(0, Metric::Distance), 4.0);
        assert_eq!(s.get(0, Metric::Duration), 8.0);
        for a in 1..3 {
            for m in Metric::ALL {
                assert_eq!(s.get(a, m), 1.0);
            }
        }
    }

    #[test]
    fn fit_scales_exponential_slices() {
        let d = Dimensions::new(1, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let users = (0..10_000)
            .map(|user_id| UserTrips {
                user_id,
                trips: vec![TripRecord {
                    region: 0,
                    activity: 0,
                    direction: Direction::Within,
                    distance_km: -(1.0 - rng.gen::<f64>()).ln(),
                    duration_s: 1.0,
                }],
            })
            .collect();
        let data = WeekDataset::new("e", d, users).unwrap();
        let s = fit_scales(&data, 0.95).unwrap().get(0, Metric::Distance);
        assert!((s - 20f64.ln()).abs() < 0.1, "{s}");
    }

    #[test]
    fn fit_clip_examples() {
        let d = Dimensions::new(1, 1).unwrap();
        let one = WeekDataset::new(
            "o",
            d,
            vec![UserTrips {
                user_id: 1,
                trips: vec![TripRecord {
                    region: 0,
                    activity: 0,
                    direction: Direction::Within,
                    distance_km: 2.0,
                    duration_s: 4.0,
                }],
            }],
        )
        .unwrap();
        assert_eq!(fit_clip(&one, &ScaleMatrix::ones(1), 0.95).unwrap(), 7.0);
        let empty = WeekDataset::new("e", d, vec![]).unwrap();
        assert!(fit_clip(&empty, &ScaleMatrix::ones(1), 0.95).is_err());

        let data = random_dataset(6, 100);
        let ones = ScaleMatrix::ones(3);
        let fitted = FittedParams::fit(&data, 0.95).unwrap();
        assert_eq!(fit_clip(&data, &ones, 0.95).unwrap(), fitted.joint_clip);
    }

    #[test]
    fn fitting_is_permutation_invariant() {
        let data = random_dataset(7, 120);
        let mut users = data.users().to_vec();
        users.reverse();
        let shuffled = WeekDataset::new("w", dims(), users).unwrap();
        assert_eq!(
            FittedParams::fit(&data, 0.95).unwrap(),
            FittedParams::fit(&shuffled, 0.95).unwrap()
        );
    }

    #[test]
    fn release_dispatch_checks_config() {
        let data = random_dataset(8, 10);
        let fitted = FittedParams::fit(&data, 0.95).unwrap();
        let mut cfg = fitted.config(MechanismKind::ActivityMetricScaling, 2.0, 0.0, 1, dims());
        let r = release(&data, &cfg, RunOptions::default()).unwrap();
        assert_eq!(r.total_epsilon, 2.0);
        assert_eq!(r.ledger.charges().len(), 1);
        assert!(r.raw_sum.is_none());
        cfg.kind = MechanismKind::BudgetSplit;
        assert!(matches!(
            release(&data, &cfg, RunOptions::default()),
            Err(Error::Config(_))
        ));
        let other = fitted.config(
            MechanismKind::JointClipping,
            2.0,
            0.0,
            1,
            Dimensions::new(3, 7).unwrap(),
        );
        assert!(release(&data, &other, RunOptions::default()).is_err());
    }

    #[test]
    fn released_cells_nonnegative() {
        let data = random_dataset(9, 50);
        let fitted = FittedParams::fit(&data, 0.95).unwrap();
        for kind in MechanismKind::ALL {
            let r = release(&data, &fitted.config(kind, 0.5, 0.0, 3, dims()), RunOptions::default()).unwrap();
            assert!(r.released.iter().all(|(_, v)| *v > 0.0));
        }
    }

    #[test]
    fn budget_cap_below_spend_aborts() {
        let data = random_dataset(10, 20);
        let fitted = FittedParams::fit(&data, 0.95).unwrap();
        let capped = RunOptions {
            budget: Some(1.0),
            ..RunOptions::default()
        };
        for kind in MechanismKind::ALL {
            let cfg = fitted.config(kind, 2.0, 0.0, 1, dims());
            assert!(
                matches!(release(&data, &cfg, capped), Err(Error::BudgetExceeded { .. })),
                "{kind}"
            );
            let roomy = RunOptions {
                budget: Some(3.0),
                ..capped
            };
            assert_eq!(release(&data, &cfg, roomy).unwrap().total_epsilon, 2.0);
        }
    }
}
