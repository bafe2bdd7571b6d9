//! Deterministic synthetic cities with planted structure.
//!
//! Regions sit on a grid with 4-neighborhood adjacency. Each region gets a
//! latent cluster that fixes its income profile and POI mix. Trips are drawn
//! from a gravity model that favours nearby, populous, similar-income pairs,
//! and the labels are fixed linear functions of the latent factors:
//!
//! ```text
//! checkin = CHECKIN_OUTFLOW * outflow / mean(outflow)                      + noise
//! crime   = CRIME_BASE + CRIME_INCOME * income_mean                        + noise
//! price   = PRICE_BASE + PRICE_INCOME * income_mean + PRICE_POI * poi_total / mean(poi_total) + noise
//! ```
//!
//! `income_mean` is the mean bin index of the region's written income
//! counts, scaled to `[0, 1]`. The noise draws are stored with the other
//! latents so labels can be rebuilt exactly.
//!
//! Each output table draws from its own splitmix64 stream derived from the
//! spec seed, so a city is a pure function of its [`SynthSpec`].

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::data::{Dataset, RegionSet};
use crate::divergence;
use crate::rng::{derive_seed, SplitMix64};
use crate::{Error, Matrix, Result};

pub const CHECKIN_OUTFLOW: f64 = 2.0;
pub const CRIME_BASE: f64 = 3.0;
pub const CRIME_INCOME: f64 = -4.0;
pub const PRICE_BASE: f64 = 1.0;
pub const PRICE_INCOME: f64 = 3.0;
pub const PRICE_POI: f64 = 0.5;

/// Trips generated per resident.
const TRIP_RATE: f64 = 0.02;
/// Mean POI count per region before the lognormal density factor.
const POI_SCALE: f64 = 40.0;
const INCOME_SPREAD: f64 = 0.12;
const INCOME_JITTER: f64 = 0.08;

const CLUSTER_STREAM: u64 = 1;
const DEMOGRAPHIC_STREAM: u64 = 2;
const TRIP_STREAM: u64 = 3;
const POI_STREAM: u64 = 4;
const LABEL_STREAM: u64 = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    /// Grid rows; the grid is square unless `grid_cols` is set.
    pub grid_side: usize,
    pub grid_cols: Option<usize>,
    pub seed: u64,
    pub clusters: usize,
    /// Standard deviation of the Gaussian label noise.
    pub noise: f64,
    pub bins: usize,
    pub poi_categories: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            grid_side: 6,
            grid_cols: None,
            seed: 0,
            clusters: 3,
            noise: 0.1,
            bins: 10,
            poi_categories: 8,
        }
    }
}

impl SynthSpec {
    pub fn grid(side: usize, seed: u64) -> Self {
        Self {
            grid_side: side,
            seed,
            ..Self::default()
        }
    }

    /// The most square `rows × cols` grid with exactly `regions` cells.
    pub fn with_regions(regions: usize, seed: u64) -> Self {
        let rows = (1..=regions)
            .filter(|r| regions.is_multiple_of(*r) && r * r <= regions)
            .max()
            .unwrap_or(1);
        Self {
            grid_side: rows,
            grid_cols: Some(regions / rows),
            seed,
            ..Self::default()
        }
    }

    pub fn rows(&self) -> usize {
        self.grid_side
    }

    pub fn cols(&self) -> usize {
        self.grid_cols.unwrap_or(self.grid_side)
    }

    pub fn regions(&self) -> usize {
        self.rows() * self.cols()
    }

    pub fn check(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        if self.grid_cols.is_none() && self.grid_side < 2 {
            return fail("grid side must be at least 2");
        }
        if self.rows() < 1 || self.cols() < 1 || self.regions() < 2 {
            return fail("grid must have at least 2 regions");
        }
        if self.clusters < 2 {
            return fail("need at least 2 clusters");
        }
        if !(self.noise >= 0.0) {
            return fail("noise must be nonnegative");
        }
        if self.bins < 2 {
            return fail("need at least 2 bins");
        }
        if self.poi_categories < 1 {
            return fail("need at least 1 POI category");
        }
        Ok(())
    }
}

/// A generated dataset plus the latent factors behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthCity {
    pub dataset: Dataset,
    /// factor name → per-region value.
    pub latents: BTreeMap<String, Vec<f64>>,
}

/// Stochastic rounding: `floor(x)` plus one with probability `fract(x)`.
fn stochastic_round(rng: &mut SplitMix64, x: f64) -> f64 {
    let base = libm::floor(x);
    base + if rng.next_f64() < x - base { 1.0 } else { 0.0 }
}

/// Integer bin counts for `pop` people around `level ∈ [0, 1]`.
fn bin_counts(pop: f64, level: f64, bins: usize) -> Vec<f64> {
    let weights: Vec<f64> = (0..bins)
        .map(|b| {
            let x = b as f64 / (bins - 1) as f64 - level;
            libm::exp(-x * x / (2.0 * INCOME_SPREAD * INCOME_SPREAD))
        })
        .collect();
    let total: f64 = weights.iter().sum();
    let mut counts: Vec<f64> = weights
        .iter()
        .map(|w| libm::round(pop * w / total))
        .collect();
    if counts.iter().all(|&c| c == 0.0) {
        let mode = weights
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map_or(0, |(i, _)| i);
        counts[mode] = 1.0;
    }
    counts
}

/// Mean bin index of a count row, scaled to `[0, 1]`.
pub fn bin_mean(counts: &[f64]) -> f64 {
    let total: f64 = counts.iter().sum();
    let weighted: f64 = counts.iter().enumerate().map(|(b, c)| b as f64 * c).sum();
    weighted / total / (counts.len() - 1) as f64
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn generate_city(spec: &SynthSpec) -> Result<SynthCity> {
    spec.check()?;
    let (rows, cols) = (spec.rows(), spec.cols());
    let n = spec.regions();
    let names = (0..n)
        .map(|i| Some(format!("r{}c{}", i / cols, i % cols)))
        .collect();

    let mut adjacency = BTreeSet::new();
    for i in 0..n {
        let (r, c) = (i / cols, i % cols);
        if c + 1 < cols {
            adjacency.insert((i, i + 1));
        }
        if r + 1 < rows {
            adjacency.insert((i, i + cols));
        }
    }

    // clusters, income level, population
    let mut rng = SplitMix64::new(derive_seed(spec.seed, CLUSTER_STREAM));
    let cluster: Vec<usize> = (0..n).map(|_| rng.below(spec.clusters)).collect();
    let center = |c: usize| 0.15 + 0.7 * c as f64 / (spec.clusters - 1) as f64;
    let income_level: Vec<f64> = cluster
        .iter()
        .map(|&c| (center(c) + INCOME_JITTER * rng.normal()).clamp(0.0, 1.0))
        .collect();
    let population: Vec<f64> = (0..n)
        .map(|_| libm::round(rng.uniform(1000.0, 5000.0)))
        .collect();

    // demographics
    let mut rng = SplitMix64::new(derive_seed(spec.seed, DEMOGRAPHIC_STREAM));
    let age_level: Vec<f64> = (0..n).map(|_| rng.uniform(0.2, 0.8)).collect();
    let income_rows: Vec<Vec<f64>> = (0..n)
        .map(|i| bin_counts(population[i], income_level[i], spec.bins))
        .collect();
    let age_rows: Vec<Vec<f64>> = (0..n)
        .map(|i| bin_counts(population[i], age_level[i], spec.bins))
        .collect();
    let income_mean: Vec<f64> = income_rows.iter().map(|r| bin_mean(r)).collect();
    let age_mean: Vec<f64> = age_rows.iter().map(|r| bin_mean(r)).collect();

    // trips: gravity model with income affinity
    let income_dists = income_rows
        .iter()
        .map(|r| divergence::normalize(r))
        .collect::<Result<Vec<_>>>()?;
    let income_sim = divergence::similarity_matrix(&income_dists)?;
    let mut weight = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let dr = (i / cols) as f64 - (j / cols) as f64;
            let dc = (i % cols) as f64 - (j % cols) as f64;
            let dist = libm::sqrt(dr * dr + dc * dc);
            weight[(i, j)] =
                population[i] * population[j] * libm::exp(-dist) * (1.0 + income_sim.get(i, j));
        }
    }
    let total_weight = weight.sum();
    let total_trips = TRIP_RATE * population.iter().sum::<f64>();
    let mut rng = SplitMix64::new(derive_seed(spec.seed, TRIP_STREAM));
    let mut trips = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                trips[(i, j)] =
                    stochastic_round(&mut rng, total_trips * weight[(i, j)] / total_weight);
            }
        }
        if trips.row(i).iter().all(|&t| t == 0.0) {
            let best = (0..n)
                .filter(|&j| j != i)
                .max_by(|&a, &b| weight[(i, a)].total_cmp(&weight[(i, b)]).then(b.cmp(&a)))
                .expect("n >= 2");
            trips[(i, best)] = 1.0;
        }
    }
    let outflow: Vec<f64> = (0..n).map(|i| trips.row(i).iter().sum()).collect();

    // POI: cluster profile mixed with a region-specific profile
    let mut rng = SplitMix64::new(derive_seed(spec.seed, POI_STREAM));
    let c = spec.poi_categories;
    let profiles: Vec<Vec<f64>> = (0..spec.clusters)
        .map(|_| {
            (0..c)
                .map(|_| libm::pow(rng.uniform(0.1, 1.0), 3.0))
                .collect()
        })
        .collect();
    let mut poi_counts = Matrix::zeros(n, c);
    for i in 0..n {
        let own: Vec<f64> = (0..c).map(|_| rng.next_f64()).collect();
        let own_total: f64 = own.iter().sum();
        let base = &profiles[cluster[i]];
        let base_total: f64 = base.iter().sum();
        let density = libm::exp(0.5 * rng.normal());
        for k in 0..c {
            let share = 0.6 * base[k] / base_total + 0.4 * own[k] / own_total;
            poi_counts[(i, k)] = stochastic_round(&mut rng, POI_SCALE * density * share);
        }
    }
    let poi_total: Vec<f64> = (0..n).map(|i| poi_counts.row(i).iter().sum()).collect();

    // labels
    let mut rng = SplitMix64::new(derive_seed(spec.seed, LABEL_STREAM));
    let mut noise = |_: usize| spec.noise * rng.normal();
    let noise_checkin: Vec<f64> = (0..n).map(&mut noise).collect();
    let noise_crime: Vec<f64> = (0..n).map(&mut noise).collect();
    let noise_price: Vec<f64> = (0..n).map(&mut noise).collect();

    let mut latents = BTreeMap::new();
    latents.insert(
        "cluster".into(),
        cluster.iter().map(|&c| c as f64).collect(),
    );
    latents.insert("income_level".into(), income_level);
    latents.insert("income_mean".into(), income_mean);
    latents.insert("age_mean".into(), age_mean);
    latents.insert("population".into(), population);
    latents.insert("outflow".into(), outflow);
    latents.insert("poi_total".into(), poi_total);
    latents.insert("noise_checkin".into(), noise_checkin);
    latents.insert("noise_crime".into(), noise_crime);
    latents.insert("noise_price".into(), noise_price);
    let labels = labels_from_latents(&latents)
        .into_iter()
        .map(|(k, v)| (k, v.into_iter().map(Some).collect()))
        .collect();

    let mut demographics = BTreeMap::new();
    demographics.insert("income".into(), Matrix::from_rows(&income_rows)?);
    demographics.insert("age".into(), Matrix::from_rows(&age_rows)?);

    let dataset = Dataset {
        regions: RegionSet::new(names)?,
        adjacency,
        poi_categories: (0..c).map(|k| format!("cat{k:02}")).collect(),
        poi_counts,
        trips,
        demographics,
        labels,
    };
    Ok(SynthCity { dataset, latents })
}

/// The documented label formulas applied to stored latents.
pub fn labels_from_latents(latents: &BTreeMap<String, Vec<f64>>) -> BTreeMap<String, Vec<f64>> {
    let get = |k: &str| latents[k].as_slice();
    let (inc, out, poi) = (get("income_mean"), get("outflow"), get("poi_total"));
    let (mean_out, mean_poi) = (mean(out), mean(poi));
    let n = inc.len();
    let mut labels = BTreeMap::new();
    labels.insert(
        "checkin".into(),
        (0..n)
            .map(|i| CHECKIN_OUTFLOW * out[i] / mean_out + get("noise_checkin")[i])
            .collect(),
    );
    labels.insert(
        "crime".into(),
        (0..n)
            .map(|i| CRIME_BASE + CRIME_INCOME * inc[i] + get("noise_crime")[i])
            .collect(),
    );
    labels.insert(
        "price".into(),
        (0..n)
            .map(|i| {
                PRICE_BASE
                    + PRICE_INCOME * inc[i]
                    + PRICE_POI * poi[i] / mean_poi
                    + get("noise_price")[i]
            })
            .collect(),
    );
    labels
}
