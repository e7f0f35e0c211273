//! Synthetic heavy-tailed mobility data.
//!
//! Per user, in this order, from a ChaCha8 stream seeded with
//! `mix(seed, user_id)`:
//!
//! 1. a home region, Zipf(`region_zipf_s`) over regions (rank 1 = region 0);
//! 2. with probability `outlier_fraction`, one outlier activity drawn by
//!    popularity;
//! 3. for each activity in index order, a Poisson(`trips_per_user *
//!    popularity`) trip count. With `activities_per_user = k` set, the user
//!    first takes part in the activity with probability
//!    `q = min(1, popularity * k)` and participants draw Poisson(`trips_per_user
//!    * popularity / q`), which narrows users to about `k` activities while
//!    keeping the expected volume per activity. Per trip: the home region with
//!    probability 0.9 (else a fresh Zipf draw), a uniform direction, then
//!    log-normal distance and duration. Both magnitudes are multiplied by
//!    `outlier_multiplier` on the user's outlier activity.
//!
//! The default activity table lives in `data/activity_profiles.csv`.

use std::collections::BTreeMap;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Poisson, StandardNormal, Zipf};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::formats::KeyValues;
use crate::schema::{
    user_histogram, CellKey, Dimensions, Direction, SparseHistogram, TripRecord, UserTrips, WeekDataset,
};

pub const DEFAULT_PROFILES: &str = include_str!("../data/activity_profiles.csv");

/// Probability a trip stays in the user's home region.
pub const HOME_REGION_PROB: f64 = 0.9;

#[derive(Clone, Debug, PartialEq)]
pub struct ActivityProfile {
    pub name: String,
    pub popularity: f64,
    pub dist_mu: f64,
    pub dist_sigma: f64,
    pub dur_mu: f64,
    pub dur_sigma: f64,
}

impl ActivityProfile {
    /// Mean of the log-normal distance, `exp(mu + sigma^2 / 2)`.
    pub fn mean_distance(&self) -> f64 {
        (self.dist_mu + self.dist_sigma * self.dist_sigma / 2.0).exp()
    }
}

/// Parses `activity,popularity,dist_mu,dist_sigma,dur_mu,dur_sigma` rows.
pub fn parse_profiles(text: &str) -> Result<Vec<ActivityProfile>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, header)) if header.trim() == "activity,popularity,dist_mu,dist_sigma,dur_mu,dur_sigma" => {}
        _ => return Err(Error::parse("profiles:1", "bad or missing header")),
    }
    lines
        .map(|(i, line)| {
            let loc = format!("profiles:{}", i + 1);
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 6 {
                return Err(Error::parse(loc, format!("expected 6 fields, got {}", fields.len())));
            }
            let num = |j: usize| {
                fields[j]
                    .parse::<f64>()
                    .map_err(|e| Error::parse(loc.clone(), format!("{}: {e}", fields[j])))
            };
            Ok(ActivityProfile {
                name: fields[0].to_string(),
                popularity: num(1)?,
                dist_mu: num(2)?,
                dist_sigma: num(3)?,
                dur_mu: num(4)?,
                dur_sigma: num(5)?,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorSpec {
    pub week_id: String,
    pub num_users: u64,
    pub num_regions: usize,
    pub region_zipf_s: f64,
    /// Expected trips per user across all activities.
    pub trips_per_user: f64,
    /// Expected number of distinct activities per user; `None` means every
    /// user draws a trip count for every activity.
    pub activities_per_user: Option<f64>,
    pub profiles: Vec<ActivityProfile>,
    pub outlier_fraction: f64,
    pub outlier_multiplier: f64,
    pub seed: u64,
}

impl Default for GeneratorSpec {
    /// The desk-scale configuration: 10^4 users over 100 regions.
    fn default() -> Self {
        GeneratorSpec {
            week_id: "2024-W01".to_string(),
            num_users: 10_000,
            num_regions: 100,
            region_zipf_s: 1.1,
            trips_per_user: 12.0,
            activities_per_user: None,
            profiles: parse_profiles(DEFAULT_PROFILES).expect("bundled profile table parses"),
            outlier_fraction: 0.05,
            outlier_multiplier: 10.0,
            seed: 1,
        }
    }
}

impl GeneratorSpec {
    pub fn dims(&self) -> Result<Dimensions> {
        Dimensions::new(self.profiles.len(), self.num_regions)
    }

    pub fn validate(&self) -> Result<()> {
        self.dims()?;
        if !(self.region_zipf_s > 0.0) {
            return Err(Error::config(format!(
                "region_zipf_s must be > 0, got {}",
                self.region_zipf_s
            )));
        }
        if !(self.trips_per_user >= 0.0 && self.trips_per_user.is_finite()) {
            return Err(Error::config(format!(
                "trips_per_user must be >= 0, got {}",
                self.trips_per_user
            )));
        }
        if let Some(k) = self.activities_per_user {
            if !(k > 0.0) {
                return Err(Error::config(format!("activities_per_user must be > 0, got {k}")));
            }
        }
        if !(0.0..1.0).contains(&self.outlier_fraction) {
            return Err(Error::config(format!(
                "outlier_fraction must be in [0, 1), got {}",
                self.outlier_fraction
            )));
        }
        if !(self.outlier_multiplier >= 1.0) {
            return Err(Error::config(format!(
                "outlier_multiplier must be >= 1, got {}",
                self.outlier_multiplier
            )));
        }
        let total: f64 = self.profiles.iter().map(|p| p.popularity).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!("activity popularities sum to {total}, not 1")));
        }
        for p in &self.profiles {
            // Zero sigma is accepted as the degenerate (constant) profile.
            if !(p.popularity >= 0.0) || !(p.dist_sigma >= 0.0) || !(p.dur_sigma >= 0.0) {
                return Err(Error::config(format!("bad profile for {}", p.name)));
            }
        }
        Ok(())
    }

    /// Reads a `key=value` spec. `profiles` names a profile CSV relative to
    /// `base_dir`; without it the bundled table is used.
    pub fn from_key_values(kv: &KeyValues, base_dir: Option<&Path>) -> Result<Self> {
        let profiles = match kv.get_opt("profiles") {
            None | Some("default") => parse_profiles(DEFAULT_PROFILES)?,
            Some(path) => {
                let path = match base_dir {
                    Some(dir) => dir.join(path),
                    None => path.into(),
                };
                parse_profiles(&std::fs::read_to_string(path)?)?
            }
        };
        let spec = GeneratorSpec {
            week_id: kv.get_opt("week_id").unwrap_or("week").to_string(),
            num_users: kv.value("num_users")?,
            num_regions: kv.value("num_regions")?,
            region_zipf_s: kv.value("region_zipf_s")?,
            trips_per_user: kv.value("trips_per_user")?,
            activities_per_user: match kv.get_opt("activities_per_user") {
                Some(_) => Some(kv.value("activities_per_user")?),
                None => None,
            },
            profiles,
            outlier_fraction: kv.value("outlier_fraction")?,
            outlier_multiplier: kv.value("outlier_multiplier")?,
            seed: kv.value("seed")?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_key_values(&self) -> String {
        let mut out = format!(
            "week_id={}\nnum_users={}\nnum_regions={}\nregion_zipf_s={}\ntrips_per_user={}\noutlier_fraction={}\noutlier_multiplier={}\nseed={}\nprofiles=default\n",
            self.week_id,
            self.num_users,
            self.num_regions,
            self.region_zipf_s,
            self.trips_per_user,
            self.outlier_fraction,
            self.outlier_multiplier,
            self.seed
        );
        if let Some(k) = self.activities_per_user {
            out.push_str(&format!("activities_per_user={k}\n"));
        }
        out
    }
}

/// SplitMix64 finaliser.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic stream id for `(seed, tag)`.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    mix64(seed ^ mix64(tag))
}

struct Sampler<'a> {
    spec: &'a GeneratorSpec,
    regions: Zipf<f64>,
    activity: Option<WeightedIndex<f64>>,
}

impl Sampler<'_> {
    fn region(&self, rng: &mut ChaCha8Rng) -> usize {
        (self.regions.sample(rng) as usize).clamp(1, self.spec.num_regions) - 1
    }

    fn user(&self, user_id: u64) -> Result<UserTrips> {
        let spec = self.spec;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, user_id));
        let home = self.region(&mut rng);
        let outlier = match &self.activity {
            Some(w) if rng.gen::<f64>() < spec.outlier_fraction => Some(w.sample(&mut rng)),
            _ => None,
        };
        let mut trips = Vec::new();
        for (a, p) in spec.profiles.iter().enumerate() {
            let mut mean = spec.trips_per_user * p.popularity;
            if let Some(k) = spec.activities_per_user {
                let q = (p.popularity * k).min(1.0);
                if q <= 0.0 || rng.gen::<f64>() >= q {
                    continue;
                }
                mean /= q;
            }
            let count = if mean > 0.0 {
                let poisson = Poisson::new(mean).map_err(|e| Error::config(e.to_string()))?;
                poisson.sample(&mut rng) as u64
            } else {
                0
            };
            let boost = if outlier == Some(a) {
                spec.outlier_multiplier
            } else {
                1.0
            };
            for _ in 0..count {
                let region = if rng.gen::<f64>() < HOME_REGION_PROB {
                    home
                } else {
                    self.region(&mut rng)
                };
                let direction = Direction::ALL[rng.gen_range(0..3)];
                let z_dist: f64 = rng.sample(StandardNormal);
                let z_dur: f64 = rng.sample(StandardNormal);
                trips.push(TripRecord {
                    region,
                    activity: a,
                    direction,
                    distance_km: (p.dist_mu + p.dist_sigma * z_dist).exp() * boost,
                    duration_s: (p.dur_mu + p.dur_sigma * z_dur).exp() * boost,
                });
            }
        }
        Ok(UserTrips { user_id, trips })
    }
}

/// Generates one week of users `0..num_users`. Users are independent
/// streams, so generation runs in parallel and stays deterministic.
pub fn generate(spec: &GeneratorSpec) -> Result<WeekDataset> {
    spec.validate()?;
    let dims = spec.dims()?;
    let sampler = Sampler {
        spec,
        regions: Zipf::new(spec.num_regions as u64, spec.region_zipf_s).map_err(|e| Error::config(e.to_string()))?,
        activity: WeightedIndex::new(spec.profiles.iter().map(|p| p.popularity)).ok(),
    };
    let users = (0..spec.num_users)
        .into_par_iter()
        .map(|id| sampler.user(id))
        .collect::<Result<Vec<_>>>()?;
    WeekDataset::new(spec.week_id.clone(), dims, users)
}

/// Exact unclipped totals and, per cell, the number of users with a nonzero
/// value there.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub histogram: SparseHistogram,
    pub devices: BTreeMap<CellKey, u64>,
}

impl GroundTruth {
    pub fn devices_at(&self, key: &CellKey) -> u64 {
        self.devices.get(key).copied().unwrap_or(0)
    }
}

pub fn ground_truth(data: &WeekDataset) -> Result<GroundTruth> {
    let dims = data.dims();
    let mut users: Vec<&UserTrips> = data.users().iter().collect();
    users.sort_by_key(|u| u.user_id);
    let per_user = users
        .par_iter()
        .map(|u| user_histogram(&u.trips, dims))
        .collect::<Result<Vec<_>>>()?;
    let mut histogram = SparseHistogram::new(dims);
    let mut devices = BTreeMap::new();
    for h in &per_user {
        histogram.merge_from(h)?;
        for (k, v) in h.iter() {
            if *v != 0.0 {
                *devices.entry(*k).or_insert(0) += 1;
            }
        }
    }
    histogram.normalize();
    Ok(GroundTruth { histogram, devices })
}
