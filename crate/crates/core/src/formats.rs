//! File formats: record CSV, histogram CSV and flat `key=value` configs.
//!
//! Floats are written with Rust's shortest round-trip formatting so that
//! re-reading a file reproduces the exact bits.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::schema::{
    CellKey, ClipBound, Dimensions, Direction, MechanismConfig, MechanismKind, Metric, ScaleMatrix, SparseHistogram,
    TripRecord, UserTrips, WeekDataset,
};

pub const RECORD_HEADER: &str = "user_id,region,activity,direction,distance_km,duration_s";
pub const HISTOGRAM_HEADER: &str = "activity,metric,region,direction,value";

/// Flat `key=value` file. Blank lines and `#` comments are ignored.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(format!("line {}", i + 1), "expected key=value"))?;
            let key = key.trim().to_string();
            if entries.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(Error::parse(
                    format!("line {}", i + 1),
                    format!("duplicate key {key:?}"),
                ));
            }
        }
        Ok(KeyValues { entries })
    }

    pub fn get_opt(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.get_opt(key)
            .ok_or_else(|| Error::config(format!("missing key {key:?}")))
    }

    pub fn value<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.get(key)?;
        raw.parse()
            .map_err(|e| Error::config(format!("bad value for {key:?} ({raw:?}): {e}")))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

fn parse_list(key: &str, raw: &str) -> Result<Vec<f64>> {
    raw.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::config(format!("bad entry {s:?} in {key:?}: {e}")))
        })
        .collect()
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

impl MechanismConfig {
    /// Keys: `mechanism_kind`, `epsilon`, `clip` (scalar; budget split reads
    /// `clip_grid` instead), `scales` (`ones` or row-major list),
    /// `threshold_tau`, `rng_seed`, `num_activities`, `num_regions`.
    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let kind: MechanismKind = kv.get("mechanism_kind")?.parse()?;
        let dims = Dimensions::new(kv.value("num_activities")?, kv.value("num_regions")?)?;
        let clip = match kind {
            MechanismKind::BudgetSplit => ClipBound::Grid(parse_list("clip_grid", kv.get("clip_grid")?)?),
            _ => ClipBound::Scalar(kv.value("clip")?),
        };
        let scales = match kv.get("scales")? {
            "ones" => ScaleMatrix::ones(dims.num_activities()),
            raw => ScaleMatrix::new(dims.num_activities(), parse_list("scales", raw)?)?,
        };
        let config = MechanismConfig {
            kind,
            epsilon: kv.value("epsilon")?,
            clip,
            scales,
            threshold_tau: kv.value("threshold_tau")?,
            rng_seed: kv.value("rng_seed")?,
            dims,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        Self::from_key_values(&KeyValues::parse(text)?)
    }

    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "mechanism_kind={}", self.kind);
        let _ = writeln!(out, "epsilon={}", self.epsilon);
        match &self.clip {
            ClipBound::Scalar(c) => {
                let _ = writeln!(out, "clip={c}");
            }
            ClipBound::Grid(g) => {
                let _ = writeln!(out, "clip_grid={}", join(g));
            }
        }
        if self.scales.is_ones() {
            out.push_str("scales=ones\n");
        } else {
            let _ = writeln!(out, "scales={}", join(self.scales.entries()));
        }
        let _ = writeln!(out, "threshold_tau={}", self.threshold_tau);
        let _ = writeln!(out, "rng_seed={}", self.rng_seed);
        let _ = writeln!(out, "num_activities={}", self.dims.num_activities());
        let _ = writeln!(out, "num_regions={}", self.dims.num_regions());
        out
    }
}

pub fn write_records(data: &WeekDataset, mut out: impl Write) -> Result<()> {
    writeln!(out, "{RECORD_HEADER}")?;
    for user in data.users() {
        for t in &user.trips {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                user.user_id,
                t.region,
                t.activity,
                t.direction.index(),
                t.distance_km,
                t.duration_s
            )?;
        }
    }
    Ok(())
}

fn field<T: FromStr>(fields: &[&str], i: usize, line: usize, name: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    fields[i]
        .trim()
        .parse()
        .map_err(|e| Error::parse(format!("line {line}"), format!("{name} {:?}: {e}", fields[i])))
}

/// Reads a record CSV. Users keep the order of their first row.
pub fn read_records(input: impl BufRead, week_id: &str, dims: Dimensions) -> Result<WeekDataset> {
    let mut lines = input.lines();
    match lines.next().transpose()? {
        Some(h) if h.trim() == RECORD_HEADER => {}
        _ => return Err(Error::parse("line 1", format!("expected header {RECORD_HEADER:?}"))),
    }
    let mut order = Vec::new();
    let mut by_user: BTreeMap<u64, Vec<TripRecord>> = BTreeMap::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let n = i + 2;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::parse(
                format!("line {n}"),
                format!("expected 6 fields, got {}", fields.len()),
            ));
        }
        let user_id: u64 = field(&fields, 0, n, "user_id")?;
        let trip = TripRecord {
            region: field(&fields, 1, n, "region")?,
            activity: field(&fields, 2, n, "activity")?,
            direction: Direction::from_index(field(&fields, 3, n, "direction")?)?,
            distance_km: field(&fields, 4, n, "distance_km")?,
            duration_s: field(&fields, 5, n, "duration_s")?,
        };
        trip.validate(&dims)
            .map_err(|e| Error::parse(format!("line {n}"), e.to_string()))?;
        by_user
            .entry(user_id)
            .or_insert_with(|| {
                order.push(user_id);
                Vec::new()
            })
            .push(trip);
    }
    let users = order
        .into_iter()
        .map(|user_id| UserTrips {
            user_id,
            trips: by_user.remove(&user_id).unwrap_or_default(),
        })
        .collect();
    WeekDataset::new(week_id, dims, users)
}

/// Writes nonzero cells in cell order.
pub fn write_histogram(h: &SparseHistogram, mut out: impl Write) -> Result<()> {
    writeln!(out, "{HISTOGRAM_HEADER}")?;
    for (k, v) in h.iter() {
        if *v != 0.0 {
            writeln!(
                out,
                "{},{},{},{},{}",
                k.activity,
                k.metric,
                k.region,
                k.direction.index(),
                v
            )?;
        }
    }
    Ok(())
}

pub fn read_histogram(input: impl BufRead, dims: Dimensions) -> Result<SparseHistogram> {
    let mut lines = input.lines();
    match lines.next().transpose()? {
        Some(h) if h.trim() == HISTOGRAM_HEADER => {}
        _ => return Err(Error::parse("line 1", format!("expected header {HISTOGRAM_HEADER:?}"))),
    }
    let mut h = SparseHistogram::new(dims);
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let n = i + 2;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::parse(
                format!("line {n}"),
                format!("expected 5 fields, got {}", fields.len()),
            ));
        }
        let key = CellKey {
            activity: field(&fields, 0, n, "activity")?,
            metric: fields[1].trim().parse::<Metric>()?,
            region: field(&fields, 2, n, "region")?,
            direction: Direction::from_index(field(&fields, 3, n, "direction")?)?,
        };
        let value: f64 = field(&fields, 4, n, "value")?;
        if h.contains(&key) {
            return Err(Error::parse(format!("line {n}"), "duplicate cell"));
        }
        h.set(key, value)
            .map_err(|e| Error::parse(format!("line {n}"), e.to_string()))?;
    }
    Ok(h)
}
