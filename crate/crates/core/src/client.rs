//! Simulated on-device work: build the per-user histogram in the scaled
//! domain and clip it once, jointly, to the global L1 bound.
//!
//! Clients never see epsilon. All noise is added centrally.

use rayon::prelude::*;

use crate::dp::clip_l1;
use crate::error::Result;
use crate::schema::{Dimensions, ScaleMatrix, SparseHistogram, TripRecord, WeekDataset};

/// What to do with a record that fails validation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum InvalidRecordPolicy {
    #[default]
    Abort,
    Skip,
}

/// One user's scaled, clipped vector as it leaves the device.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientContribution {
    pub user_id: u64,
    pub vector: SparseHistogram,
    /// Records dropped under [`InvalidRecordPolicy::Skip`].
    pub skipped: usize,
}

/// Per-trip accumulation of `value / S(a, m)` into the (a, m, r, d) cells.
pub fn scaled_histogram(
    records: &[TripRecord],
    dims: Dimensions,
    scales: &ScaleMatrix,
    policy: InvalidRecordPolicy,
) -> Result<(SparseHistogram, usize)> {
    let mut v = SparseHistogram::new(dims);
    let mut skipped = 0;
    for record in records {
        if let Err(e) = record.validate(&dims) {
            match policy {
                InvalidRecordPolicy::Abort => return Err(e),
                InvalidRecordPolicy::Skip => {
                    skipped += 1;
                    continue;
                }
            }
        }
        for (key, value) in record.contributions() {
            v.add(key, value / scales.for_cell(&key))?;
        }
    }
    v.normalize();
    Ok((v, skipped))
}

/// Scales a user's records by `scales`, then clips the joint vector to `clip`.
/// `clip = f64::INFINITY` disables clipping.
pub fn client_work(
    user_id: u64,
    records: &[TripRecord],
    dims: Dimensions,
    scales: &ScaleMatrix,
    clip: f64,
    policy: InvalidRecordPolicy,
) -> Result<ClientContribution> {
    let (v, skipped) = scaled_histogram(records, dims, scales, policy)?;
    Ok(ClientContribution {
        user_id,
        vector: clip_l1(&v, clip)?,
        skipped,
    })
}

/// Runs `client_work` for every user, in parallel, returning results in
/// user-id order.
pub fn run_fleet(
    data: &WeekDataset,
    scales: &ScaleMatrix,
    clip: f64,
    policy: InvalidRecordPolicy,
) -> Result<Vec<ClientContribution>> {
    let dims = data.dims();
    let mut out = data
        .users()
        .par_iter()
        .map(|u| client_work(u.user_id, &u.trips, dims, scales, clip, policy))
        .collect::<Result<Vec<_>>>()?;
    out.sort_by_key(|c| c.user_id);
    Ok(out)
}
