//! Server side: simulated secure summation, central Laplace noise over the
//! dense cell domain, descaling, and threshold suppression.
//!
//! The secure sum is a plain cell-wise sum standing in for the cryptographic
//! aggregation service. Raw sums are only surfaced in evaluation runs.

use crate::client::ClientContribution;
use crate::dp::{add_noise, charged_epsilon, NoiseMode, NoiseSource, PrivacyLedger};
use crate::error::{Error, Result};
use crate::schema::{CellKey, Dimensions, ScaleMatrix, SparseHistogram};

/// Cell-wise sum of contributions, accumulated in user-id order.
pub fn secure_sum(dims: Dimensions, contributions: &[ClientContribution]) -> Result<SparseHistogram> {
    let mut ordered: Vec<&ClientContribution> = contributions.iter().collect();
    ordered.sort_by_key(|c| c.user_id);
    let mut sum = SparseHistogram::new(dims);
    for c in ordered {
        if c.vector.dims() != dims {
            return Err(Error::DimensionMismatch(format!(
                "contribution from user {} has {:?}, expected {:?}",
                c.user_id,
                c.vector.dims(),
                dims
            )));
        }
        sum.merge_from(&c.vector)?;
    }
    sum.normalize();
    Ok(sum)
}

/// Descales a noisy scaled-domain histogram and applies the release rule:
/// with `tau > 0`, cells whose descaled value falls below
/// `tau * noise_scale(cell) * S(a, m)` are suppressed; surviving negatives
/// are clamped to zero (dropped, since absent means zero).
///
/// Returns the released histogram and the number of suppressed cells.
pub fn post_process(
    noisy: &SparseHistogram,
    scales: &ScaleMatrix,
    noise_scale: impl Fn(&CellKey) -> f64,
    tau: f64,
) -> Result<(SparseHistogram, usize)> {
    let mut released = SparseHistogram::new(noisy.dims());
    let mut suppressed = 0;
    for (key, value) in noisy.iter() {
        let s = scales.for_cell(key);
        let descaled = value * s;
        if tau > 0.0 && descaled < tau * noise_scale(key) * s {
            suppressed += 1;
            continue;
        }
        if descaled > 0.0 {
            released.set(*key, descaled)?;
        }
    }
    Ok((released, suppressed))
}

#[derive(Clone, Debug)]
pub struct ServerParams {
    pub clip: f64,
    pub epsilon: f64,
    pub tau: f64,
    pub seed: u64,
    pub mode: NoiseMode,
    /// Keep the pre-noise sum in the report. Evaluation runs only.
    pub keep_raw_sum: bool,
}

#[derive(Clone, Debug)]
pub struct AggregateReport {
    pub raw_sum: Option<SparseHistogram>,
    /// Noisy sums in the scaled domain, signed, every cell of the domain.
    pub noisy: SparseHistogram,
    /// Descaled, thresholded, non-negative.
    pub released: SparseHistogram,
    pub suppressed_cells: usize,
    pub ledger: PrivacyLedger,
}

/// Secure sum, Laplace(C / epsilon) on every cell in `cell_index` order,
/// descale by S(a, m), then threshold and clamp.
pub fn server_work(
    dims: Dimensions,
    contributions: &[ClientContribution],
    scales: &ScaleMatrix,
    params: &ServerParams,
    ledger: &mut PrivacyLedger,
) -> Result<AggregateReport> {
    if !(params.epsilon > 0.0) {
        return Err(Error::config(format!("epsilon must be > 0, got {}", params.epsilon)));
    }
    if !(params.clip > 0.0) {
        return Err(Error::config(format!("clip must be > 0, got {}", params.clip)));
    }
    if !(params.tau >= 0.0) {
        return Err(Error::config(format!("tau must be >= 0, got {}", params.tau)));
    }
    if scales.num_activities() != dims.num_activities() {
        return Err(Error::DimensionMismatch(format!(
            "scale matrix has {} activities, dims have {}",
            scales.num_activities(),
            dims.num_activities()
        )));
    }
    ledger.charge("laplace_mechanism", charged_epsilon(params.mode, params.epsilon))?;

    let raw_sum = secure_sum(dims, contributions)?;
    let b = params.clip / params.epsilon;
    let mut noise = NoiseSource::new(params.seed, params.mode);
    let noisy = SparseHistogram::from_cells(dims, add_noise(&raw_sum, dims.cells(), b, &mut noise))?;
    let (released, suppressed_cells) = post_process(&noisy, scales, |_| b, params.tau)?;

    Ok(AggregateReport {
        raw_sum: params.keep_raw_sum.then_some(raw_sum),
        noisy,
        released,
        suppressed_cells,
        ledger: ledger.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::client::{client_work, InvalidRecordPolicy};
    use crate::schema::{Direction, Metric, TripRecord};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dims() -> Dimensions {
        Dimensions::new(2, 4).unwrap()
    }

    fn contribution(user_id: u64, cells: &[(usize, f64)]) -> ClientContribution {
        let d = dims();
        ClientContribution {
            user_id,
            vector: SparseHistogram::from_cells(d, cells.iter().map(|(i, v)| (d.cell_at(*i).unwrap(), *v))).unwrap(),
            skipped: 0,
        }
    }

    fn params(mode: NoiseMode, tau: f64) -> ServerParams {
        ServerParams {
            clip: 10.0,
            epsilon: 2.0,
            tau,
            seed: 42,
            mode,
            keep_raw_sum: true,
        }
    }

    #[test]
    fn secure_sum_examples() {
        let d = dims();
        assert!(secure_sum(d, &[]).unwrap().is_empty());
        let s = secure_sum(d, &[contribution(1, &[(5, 1.0)]), contribution(2, &[(5, 2.0)])]).unwrap();
        assert_eq!(s.get(&d.cell_at(5).unwrap()), 3.0);
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn secure_sum_rejects_mixed_dims() {
        let other = Dimensions::new(1, 1).unwrap();
        let c = ClientContribution {
            user_id: 3,
            vector: SparseHistogram::new(other),
            skipped: 0,
        };
        assert!(matches!(
            secure_sum(dims(), &[contribution(1, &[]), c]),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn secure_sum_of_permuted_copies() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let d = dims();
        let base: Vec<(usize, f64)> = (0..20)
            .map(|_| (rng.gen_range(0..d.total_cells()), rng.gen::<f64>() * 10.0))
            .collect();
        let one = secure_sum(d, &[contribution(0, &base)]).unwrap();
        let n = 13;
        let copies: Vec<_> = (0..n)
            .map(|u| {
                let mut cells = base.clone();
                for i in (1..cells.len()).rev() {
                    cells.swap(i, rng.gen_range(0..=i));
                }
                contribution(u, &cells)
            })
            .collect();
        let sum = secure_sum(d, &copies).unwrap();
        for (k, v) in one.iter() {
            let expected = v * n as f64;
            assert!((sum.get(k) - expected).abs() <= 1e-9 * expected.abs());
        }
    }

    #[test]
    fn identity_pipeline_in_test_mode() {
        let d = dims();
        let cs = vec![contribution(2, &[(0, 1.0), (7, 4.0)]), contribution(1, &[(7, 0.5)])];
        let mut ledger = PrivacyLedger::unbounded();
        let report = server_work(
            d,
            &cs,
            &ScaleMatrix::ones(2),
            &params(NoiseMode::Test, 0.0),
            &mut ledger,
        )
        .unwrap();
        assert_eq!(Some(&report.released), report.raw_sum.as_ref());
        assert_eq!(report.suppressed_cells, 0);
    }

    #[test]
    fn descale_round_trip() {
        let d = dims();
        let k = 8.0;
        let scales = ScaleMatrix::new(2, vec![k; 6]).unwrap();
        let trips = [TripRecord {
            region: 1,
            activity: 1,
            direction: Direction::Outbound,
            distance_km: 12.0,
            duration_s: 960.0,
        }];
        let c = client_work(5, &trips, d, &scales, f64::INFINITY, InvalidRecordPolicy::Abort).unwrap();
        let mut ledger = PrivacyLedger::unbounded();
        let report = server_work(d, &[c], &scales, &params(NoiseMode::Test, 0.0), &mut ledger).unwrap();
        let key = |m| CellKey::new(1, m, 1, Direction::Outbound);
        assert_eq!(report.released.get(&key(Metric::NumTrips)), 1.0);
        assert_eq!(report.released.get(&key(Metric::Distance)), 12.0);
        assert_eq!(report.released.get(&key(Metric::Duration)), 960.0);
    }

    #[test]
    fn descaling_is_a_single_multiplication() {
        let d = dims();
        let scales = ScaleMatrix::new(2, vec![0.3, 7.0, 123.0, 2.5, 1.0, 19.0]).unwrap();
        let cs = vec![contribution(1, &[(0, 0.2), (40, 0.7)])];
        let mut ledger = PrivacyLedger::new(2.0).unwrap();
        let report = server_work(d, &cs, &scales, &params(NoiseMode::Laplace, 0.0), &mut ledger).unwrap();
        assert_eq!(report.noisy.len(), d.total_cells());
        for (k, v) in report.noisy.iter() {
            let descaled = v * scales.for_cell(k);
            if descaled > 0.0 {
                assert_eq!(report.released.get(k).to_bits(), descaled.to_bits());
            } else {
                assert!(!report.released.contains(k));
            }
        }
        assert_eq!(report.ledger.total(), 2.0);
    }

    #[test]
    fn thresholding_tail_on_zero_cells() {
        // One activity, 11112 regions: 100008 true-zero cells. P(Lap(5) >= 15) = e^-3 / 2.
        let d = Dimensions::new(1, 11_112).unwrap();
        let mut ledger = PrivacyLedger::new(2.0).unwrap();
        let report = server_work(
            d,
            &[],
            &ScaleMatrix::ones(1),
            &params(NoiseMode::Laplace, 3.0),
            &mut ledger,
        )
        .unwrap();
        let frac = report.released.len() as f64 / d.total_cells() as f64;
        assert!((frac - 0.5 * (-3f64).exp()).abs() < 0.002, "{frac}");
        assert_eq!(report.suppressed_cells + report.released.len(), d.total_cells());
    }

    #[test]
    fn larger_tau_never_resurrects() {
        let d = dims();
        let cs = vec![contribution(1, &[(3, 9.0), (10, 30.0)])];
        let run = |tau| {
            let mut ledger = PrivacyLedger::new(2.0).unwrap();
            server_work(
                d,
                &cs,
                &ScaleMatrix::ones(2),
                &params(NoiseMode::Laplace, tau),
                &mut ledger,
            )
            .unwrap()
            .released
        };
        let mut prev = run(0.0);
        for tau in [0.5, 1.0, 2.0, 3.0, 5.0] {
            let next = run(tau);
            assert!(next.keys().all(|k| prev.contains(k)));
            prev = next;
        }
    }

    #[test]
    fn unbiased_before_clamping() {
        let d = Dimensions::new(1, 1).unwrap();
        let key = CellKey::new(0, Metric::Distance, 0, Direction::Within);
        let scales = ScaleMatrix::new(1, vec![1.0, 4.0, 1.0]).unwrap();
        let c = ClientContribution {
            user_id: 1,
            vector: SparseHistogram::from_cells(d, [(key, 0.75)]).unwrap(),
            skipped: 0,
        };
        let n = 4000;
        let draws: Vec<f64> = (0..n)
            .map(|seed| {
                let mut ledger = PrivacyLedger::new(2.0).unwrap();
                let p = ServerParams {
                    seed,
                    ..params(NoiseMode::Laplace, 0.0)
                };
                let r = server_work(d, std::slice::from_ref(&c), &scales, &p, &mut ledger).unwrap();
                r.noisy.get(&key) * 4.0
            })
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        // Descaled noise: Laplace(5) * 4, sd = 5 * sqrt(2) * 4.
        let se = 5.0 * 2f64.sqrt() * 4.0 / (n as f64).sqrt();
        assert!((mean - 3.0).abs() < 3.0 * se, "mean {mean}, se {se}");
    }

    #[test]
    fn raw_sum_hidden_in_release_runs() {
        let mut ledger = PrivacyLedger::new(2.0).unwrap();
        let p = ServerParams {
            keep_raw_sum: false,
            ..params(NoiseMode::Laplace, 0.0)
        };
        let r = server_work(dims(), &[], &ScaleMatrix::ones(2), &p, &mut ledger).unwrap();
        assert!(r.raw_sum.is_none());
    }

    #[test]
    fn budget_exceeded_aborts() {
        let mut ledger = PrivacyLedger::new(1.0).unwrap();
        let err = server_work(
            dims(),
            &[],
            &ScaleMatrix::ones(2),
            &params(NoiseMode::Laplace, 0.0),
            &mut ledger,
        )
        .unwrap_err();
        assert!(matches!(err, Error::BudgetExceeded { .. }));
        assert!(ledger.charges().is_empty());
    }
}
