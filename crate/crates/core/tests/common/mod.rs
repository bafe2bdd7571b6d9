#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use regionvec_core::data::{Dataset, RegionSet};
use regionvec_core::graph::HeteroGraph;
use regionvec_core::rng::SplitMix64;
use regionvec_core::Matrix;

pub mod oracle;
pub mod ridge;

pub const EPS: f64 = 1e-12;

pub fn random_matrix(rng: &mut SplitMix64, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.uniform(-scale, scale))
}

pub fn random_distribution(rng: &mut SplitMix64, len: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..len)
        .map(|_| {
            if rng.next_f64() < 0.2 {
                0.0
            } else {
                rng.next_f64()
            }
        })
        .collect();
    let total: f64 = raw.iter().sum();
    if total == 0.0 {
        let mut v = vec![0.0; len];
        v[0] = 1.0;
        return v;
    }
    raw.iter().map(|x| x / total).collect()
}

/// `(x + ε) / (Σx + len·ε)`.
pub fn smooth(x: &[f64]) -> Vec<f64> {
    let total: f64 = x.iter().sum::<f64>() + x.len() as f64 * EPS;
    x.iter().map(|v| (v + EPS) / total).collect()
}

/// Bits, on already smoothed inputs.
pub fn kl_bits(p: &[f64], q: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..p.len() {
        if p[i] > 0.0 {
            s += p[i] * (p[i] / q[i]).log2();
        }
    }
    s
}

/// Bits, on already smoothed inputs.
pub fn js_bits(p: &[f64], q: &[f64]) -> f64 {
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| (a + b) / 2.0).collect();
    0.5 * kl_bits(p, &m) + 0.5 * kl_bits(q, &m)
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let mx = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - mx).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

pub fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

/// A valid random dataset with `n` regions, a path-plus-chords adjacency
/// that leaves non-neighbors, sparse trips, and one demographic attribute.
pub fn random_dataset(rng: &mut SplitMix64, n: usize) -> Dataset {
    let mut adjacency = BTreeSet::new();
    for i in 0..n - 1 {
        adjacency.insert((i, i + 1));
    }
    if n > 4 && rng.next_f64() < 0.5 {
        adjacency.insert((0, n - 2));
    }
    let c = 2 + rng.below(3);
    let poi_counts = Matrix::from_fn(n, c, |i, k| (rng.below(6) + usize::from(k == i % c)) as f64);
    let mut trips = Matrix::from_fn(n, n, |i, j| {
        if i == j || rng.next_f64() < 0.3 {
            0.0
        } else {
            rng.below(9) as f64
        }
    });
    for i in 0..n {
        if trips.row(i).iter().all(|&t| t == 0.0) {
            trips[(i, (i + 1) % n)] = 1.0;
        }
    }
    let bins = 3 + rng.below(3);
    let income = Matrix::from_fn(n, bins, |i, b| {
        (rng.below(20) + usize::from(b == i % bins)) as f64
    });
    let mut demographics = BTreeMap::new();
    demographics.insert("income".to_string(), income);
    Dataset {
        regions: RegionSet::unnamed(n).unwrap(),
        adjacency,
        poi_categories: (0..c).map(|k| format!("c{k}")).collect(),
        poi_counts,
        trips,
        demographics,
        labels: BTreeMap::new(),
    }
}

/// Plain `n × n` in-degree counts per relation edge list.
pub fn indegree(graph: &HeteroGraph, rel: &regionvec_core::graph::EdgeType) -> Vec<usize> {
    let mut deg = vec![0; graph.n];
    for e in graph.edges_of(rel) {
        deg[e.dst] += 1;
    }
    deg
}
