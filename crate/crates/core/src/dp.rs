//! Differential-privacy primitives: L1 clipping, seeded Laplace noise,
//! quantile selection and an epsilon ledger.
//!
//! Noise is drawn by inverse-CDF from double-precision uniforms. This is
//! known to be vulnerable to floating-point attacks on the low-order bits
//! (see the snapping mechanism / discrete Laplace literature) and is not a
//! hardened production sampler.

use std::fmt::Write as _;

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::schema::{CellKey, Dimensions, SparseHistogram};

/// Scales `v` by `min(1, bound / ||v||_1)`.
pub fn clip_l1(v: &SparseHistogram, bound: f64) -> Result<SparseHistogram> {
    if !(bound > 0.0) {
        return Err(Error::config(format!("clip bound must be > 0, got {bound}")));
    }
    let norm = v.l1_norm();
    if norm <= bound {
        return Ok(v.clone());
    }
    Ok(v.scaled(bound / norm))
}

/// Whether noise is real or replaced by zeros for pipeline tests.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseMode {
    Laplace,
    /// Zero noise. The ledger records an infinite charge.
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LaplaceNoiseSpec {
    pub scale: f64,
    pub seed: u64,
}

/// Inverse CDF of Laplace(0, b) at `u` in (0, 1).
pub fn laplace_inverse_cdf(u: f64, b: f64) -> f64 {
    if u < 0.5 {
        b * (2.0 * u).ln()
    } else {
        -b * (2.0 * (1.0 - u)).ln()
    }
}

/// Uniform on the open interval (0, 1) with 53 bits of resolution.
fn open_unit(rng: &mut ChaCha20Rng) -> f64 {
    const STEP: f64 = 1.0 / (1u64 << 53) as f64;
    ((rng.next_u64() >> 11) as f64 + 0.5) * STEP
}

/// A seeded noise stream owned by one release.
pub struct NoiseSource {
    rng: ChaCha20Rng,
    mode: NoiseMode,
}

impl NoiseSource {
    pub fn new(seed: u64, mode: NoiseMode) -> Self {
        NoiseSource {
            rng: ChaCha20Rng::seed_from_u64(seed),
            mode,
        }
    }

    pub fn mode(&self) -> NoiseMode {
        self.mode
    }

    pub fn laplace(&mut self, scale: f64) -> f64 {
        match self.mode {
            NoiseMode::Laplace => laplace_inverse_cdf(open_unit(&mut self.rng), scale),
            NoiseMode::Test => 0.0,
        }
    }

    pub fn uniform(&mut self) -> f64 {
        open_unit(&mut self.rng)
    }
}

/// `n` i.i.d. Laplace(0, b) draws. Identical `(spec, n)` gives an identical stream.
pub fn laplace_sample(spec: LaplaceNoiseSpec, n: usize) -> Result<Vec<f64>> {
    if !(spec.scale > 0.0 && spec.scale.is_finite()) {
        return Err(Error::config(format!("Laplace scale must be > 0, got {}", spec.scale)));
    }
    let mut source = NoiseSource::new(spec.seed, NoiseMode::Laplace);
    Ok((0..n).map(|_| source.laplace(spec.scale)).collect())
}

pub const ADJACENCY: &str = "(user, week) add/remove";

#[derive(Clone, Debug, PartialEq)]
pub struct Charge {
    pub label: String,
    pub epsilon: f64,
}

/// Pure-DP basic composition over one release.
#[derive(Clone, Debug, PartialEq)]
pub struct PrivacyLedger {
    budget: f64,
    charges: Vec<Charge>,
}

impl PrivacyLedger {
    pub fn new(budget: f64) -> Result<Self> {
        if !(budget > 0.0) {
            return Err(Error::config(format!("budget must be > 0, got {budget}")));
        }
        Ok(PrivacyLedger {
            budget,
            charges: Vec::new(),
        })
    }

    /// Ledger for zero-noise runs: unlimited budget.
    pub fn unbounded() -> Self {
        PrivacyLedger {
            budget: f64::INFINITY,
            charges: Vec::new(),
        }
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    pub fn charges(&self) -> &[Charge] {
        &self.charges
    }

    pub fn adjacency(&self) -> &'static str {
        ADJACENCY
    }

    /// Records a charge, refusing it if the total would exceed the budget.
    /// Slack of 1e-12 relative absorbs rounding in equal splits.
    pub fn charge(&mut self, label: impl Into<String>, epsilon: f64) -> Result<()> {
        let label = label.into();
        if !(epsilon > 0.0) {
            return Err(Error::config(format!("charge {label:?} must be > 0, got {epsilon}")));
        }
        let after = sum_order_free(self.charges.iter().map(|c| c.epsilon).chain(std::iter::once(epsilon)));
        if self.budget.is_finite() && after > self.budget * (1.0 + 1e-12) {
            return Err(Error::BudgetExceeded {
                message: format!(
                    "charging {epsilon} for {label:?} brings total to {after} > {}",
                    self.budget
                ),
                ledger: self.render(),
            });
        }
        self.charges.push(Charge { label, epsilon });
        Ok(())
    }

    /// Sum of charges, independent of the order they were made in.
    pub fn total(&self) -> f64 {
        sum_order_free(self.charges.iter().map(|c| c.epsilon))
    }

    /// `label,epsilon` lines followed by a `total` line.
    pub fn render(&self) -> String {
        let mut out = String::from("label,epsilon\n");
        for c in &self.charges {
            let _ = writeln!(out, "{},{}", c.label, c.epsilon);
        }
        let _ = writeln!(out, "total,{}", self.total());
        out
    }
}

/// Sorted compensated (Neumaier) summation.
fn sum_order_free(values: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.collect();
    if v.iter().any(|x| x.is_infinite()) {
        return f64::INFINITY;
    }
    v.sort_by(f64::total_cmp);
    let mut sum = 0.0;
    let mut comp = 0.0;
    for x in v {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Epsilon recorded for a mechanism invocation under the given noise mode.
pub(crate) fn charged_epsilon(mode: NoiseMode, epsilon: f64) -> f64 {
    match mode {
        NoiseMode::Laplace => epsilon,
        NoiseMode::Test => f64::INFINITY,
    }
}

/// Clips each contribution to `bound` and sums them in the given order.
pub fn clipped_sum(dims: Dimensions, contributions: &[SparseHistogram], bound: f64) -> Result<SparseHistogram> {
    let mut sum = SparseHistogram::new(dims);
    for v in contributions {
        sum.merge_from(&clip_l1(v, bound)?)?;
    }
    sum.normalize();
    Ok(sum)
}

/// Adds independent Laplace(scale) noise to each listed cell of `sum`,
/// consuming the stream in the iteration order of `cells`.
pub fn add_noise(
    sum: &SparseHistogram,
    cells: impl Iterator<Item = CellKey>,
    scale: f64,
    noise: &mut NoiseSource,
) -> Vec<(CellKey, f64)> {
    cells.map(|key| (key, sum.get(&key) + noise.laplace(scale))).collect()
}

/// The Laplace mechanism over the full dense domain: clip each contribution
/// to `clip`, sum, and add Laplace(clip / epsilon) to every cell including
/// true zeros.
pub fn laplace_mechanism(
    contributions: &[SparseHistogram],
    dims: Dimensions,
    clip: f64,
    epsilon: f64,
    noise: &mut NoiseSource,
    ledger: &mut PrivacyLedger,
) -> Result<SparseHistogram> {
    if !(epsilon > 0.0) {
        return Err(Error::config(format!("epsilon must be > 0, got {epsilon}")));
    }
    ledger.charge("laplace_mechanism", charged_epsilon(noise.mode(), epsilon))?;
    let sum = clipped_sum(dims, contributions, clip)?;
    let noisy = add_noise(&sum, dims.cells(), clip / epsilon, noise);
    SparseHistogram::from_cells(dims, noisy)
}

/// Lower empirical quantile: the smallest element `x` with at least
/// `ceil(q * n)` elements `<= x`.
pub fn exact_quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::input("quantile of an empty list"));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::config(format!("quantile level must be in (0, 1), got {q}")));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::input("NaN in quantile input"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    Ok(sorted[quantile_rank(q, n) - 1])
}

/// `ceil(q * n)` clamped to `[1, n]`, snapping products that land within
/// rounding error of an integer.
fn quantile_rank(q: f64, n: usize) -> usize {
    let pos = q * n as f64;
    let rounded = pos.round();
    let rank = if (pos - rounded).abs() <= 1e-9 * pos.max(1.0) {
        rounded
    } else {
        pos.ceil()
    };
    (rank as usize).clamp(1, n)
}

/// Exponential-mechanism quantile over a grid of `bins` equal-width
/// intervals of `[0, upper]`. Candidates are the right endpoints
/// `upper * (j + 1) / bins`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrivateQuantile {
    pub upper: f64,
    pub q: f64,
    /// `f64::INFINITY` selects the argmax deterministically.
    pub epsilon: f64,
    pub bins: usize,
    /// Bound on how far one user moves any rank count. One when each user
    /// contributes a single value.
    pub sensitivity: f64,
}

impl PrivateQuantile {
    pub fn new(upper: f64, q: f64, epsilon: f64, bins: usize) -> Self {
        PrivateQuantile {
            upper,
            q,
            epsilon,
            bins,
            sensitivity: 1.0,
        }
    }

    pub fn candidates(&self) -> Vec<f64> {
        (0..self.bins)
            .map(|j| self.upper * (j + 1) as f64 / self.bins as f64)
            .collect()
    }

    fn validate(&self) -> Result<()> {
        if !(self.upper > 0.0 && self.upper.is_finite()) {
            return Err(Error::config(format!("upper bound must be > 0, got {}", self.upper)));
        }
        if !(self.q > 0.0 && self.q < 1.0) {
            return Err(Error::config(format!(
                "quantile level must be in (0, 1), got {}",
                self.q
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::config(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        if self.bins < 2 {
            return Err(Error::config(format!("need at least 2 bins, got {}", self.bins)));
        }
        if !(self.sensitivity >= 1.0) {
            return Err(Error::config(format!(
                "utility sensitivity must be >= 1, got {}",
                self.sensitivity
            )));
        }
        Ok(())
    }

    /// Utility `-|#{v <= t} - q n|` of every candidate.
    pub fn utilities(&self, values: &[f64]) -> Vec<f64> {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let target = self.q * sorted.len() as f64;
        self.candidates()
            .into_iter()
            .map(|t| {
                let count = sorted.partition_point(|v| *v <= t);
                -(count as f64 - target).abs()
            })
            .collect()
    }

    pub fn select(&self, values: &[f64], seed: u64, ledger: &mut PrivacyLedger) -> Result<f64> {
        self.validate()?;
        if let Some(bad) = values.iter().find(|v| !(**v >= 0.0 && **v <= self.upper)) {
            return Err(Error::input(format!("value {bad} outside [0, {}]", self.upper)));
        }
        ledger.charge("private_quantile", self.epsilon)?;

        let utilities = self.utilities(values);
        let candidates = self.candidates();
        let best = utilities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if self.epsilon.is_infinite() {
            let j = utilities.iter().position(|u| *u == best).unwrap_or(0);
            return Ok(candidates[j]);
        }
        let weights: Vec<f64> = utilities
            .iter()
            .map(|u| (self.epsilon * (u - best) / (2.0 * self.sensitivity)).exp())
            .collect();
        let total: f64 = weights.iter().sum();
        let mut rng = NoiseSource::new(seed, NoiseMode::Laplace);
        let mut target = rng.uniform() * total;
        for (j, w) in weights.iter().enumerate() {
            if target < *w {
                return Ok(candidates[j]);
            }
            target -= w;
        }
        Ok(candidates[self.bins - 1])
    }
}

/// Convenience wrapper matching the flat call shape.
pub fn private_quantile(
    values: &[f64],
    upper: f64,
    q: f64,
    epsilon: f64,
    bins: usize,
    seed: u64,
    ledger: &mut PrivacyLedger,
) -> Result<f64> {
    PrivateQuantile::new(upper, q, epsilon, bins).select(values, seed, ledger)
}
