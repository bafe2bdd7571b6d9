//! Heterogeneous region graphs built from the raw views.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::data::Dataset;
use crate::divergence::{self, Distribution, SimilarityMatrix};
use crate::{Error, Result};

/// Demographic attribute names accepted as views.
pub const DEMOGRAPHIC_ATTRIBUTES: [&str; 5] =
    ["income", "age", "education", "employment", "foreign_born"];

/// One data source selectable for pretraining.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum View {
    Neighbor,
    Poi,
    Mobility,
    Demo(String),
}

impl View {
    pub fn parse(name: &str) -> Result<Self> {
        match name.trim() {
            "neighbor" => Ok(Self::Neighbor),
            "poi" => Ok(Self::Poi),
            "mobility" => Ok(Self::Mobility),
            attr if DEMOGRAPHIC_ATTRIBUTES.contains(&attr) => Ok(Self::Demo(attr.to_string())),
            other => Err(Error::UnknownView(other.to_string())),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            Self::Neighbor => "neighbor",
            Self::Poi => "poi",
            Self::Mobility => "mobility",
            Self::Demo(attr) => attr,
        }
    }
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Parses `sep`-separated view names, e.g. `"mobility,income"`.
pub fn parse_views(list: &str, sep: char) -> Result<Vec<View>> {
    let views = list
        .split(sep)
        .filter(|s| !s.trim().is_empty())
        .map(View::parse)
        .collect::<Result<Vec<_>>>()?;
    if views.is_empty() {
        return Err(Error::EmptyViews);
    }
    Ok(views)
}

/// Parses `"mobility+income;neighbor+poi"` into view combinations.
pub fn parse_combinations(list: &str) -> Result<Vec<Vec<View>>> {
    let combos = list
        .split(';')
        .filter(|s| !s.trim().is_empty())
        .map(|c| parse_views(c, '+'))
        .collect::<Result<Vec<_>>>()?;
    if combos.is_empty() {
        return Err(Error::EmptyViews);
    }
    Ok(combos)
}

/// Canonical `+`-joined label for a combination, in the order given.
pub fn combination_label(views: &[View]) -> String {
    let names: Vec<&str> = views.iter().map(View::name).collect();
    names.join("+")
}

/// A relation of the heterogeneous graph.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EdgeType {
    Neighbor,
    Poi,
    MobilitySrc,
    MobilityDst,
    Demo(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphConfig {
    pub views: Vec<View>,
    pub k_demo: usize,
    pub k_mobility: usize,
}

impl GraphConfig {
    pub fn new(views: Vec<View>) -> Self {
        Self {
            views,
            k_demo: 10,
            k_mobility: 20,
        }
    }
}

/// Row- and column-normalized trips. `None` marks masked (all-zero) rows.
#[derive(Debug, Clone, PartialEq)]
pub struct MobilityTargets {
    /// `outflow[i]` is trips row i normalized.
    pub outflow: Vec<Option<Distribution>>,
    /// `inflow[j]` is trips column j normalized.
    pub inflow: Vec<Option<Distribution>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeteroGraph {
    pub n: usize,
    /// One entry per active relation; the key order is the relation order.
    pub edges: BTreeMap<EdgeType, Vec<Edge>>,
    pub mobility: Option<MobilityTargets>,
    pub poi_similarity: Option<SimilarityMatrix>,
    pub demo_similarity: BTreeMap<String, SimilarityMatrix>,
    /// Unordered adjacency pairs `(min, max)`, present when the neighbor view is active.
    pub neighbor_pairs: BTreeSet<(usize, usize)>,
}

impl HeteroGraph {
    pub fn relations(&self) -> Vec<EdgeType> {
        self.edges.keys().cloned().collect()
    }

    pub fn relation_index(&self, r: &EdgeType) -> Option<usize> {
        self.edges.keys().position(|k| k == r)
    }

    pub fn edges_of(&self, r: &EdgeType) -> &[Edge] {
        self.edges.get(r).map_or(&[], Vec::as_slice)
    }
}

/// Directed edges from every node to its `k` most similar others.
///
/// Ties are broken towards the lower region id; edge weight is the similarity.
pub fn topk_edges(s: &SimilarityMatrix, k: usize) -> Result<Vec<Edge>> {
    let n = s.n();
    if k == 0 {
        return Err(Error::InvalidConfig("k must be positive".into()));
    }
    if k >= n {
        return Err(Error::TopKTooLarge { k, n });
    }
    let mut edges = Vec::with_capacity(n * k);
    for i in 0..n {
        let candidates = (0..n).filter(|&j| j != i).map(|j| (j, s.get(i, j)));
        edges.extend(top_k(candidates, k).map(|(j, w)| Edge {
            src: i,
            dst: j,
            weight: w,
        }));
    }
    Ok(edges)
}

fn top_k(
    candidates: impl Iterator<Item = (usize, f64)>,
    k: usize,
) -> impl Iterator<Item = (usize, f64)> {
    let mut all: Vec<(usize, f64)> = candidates.collect();
    all.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    all.truncate(k);
    all.into_iter()
}

fn masked_rows(rows: impl Iterator<Item = Vec<f64>>) -> Vec<Option<Distribution>> {
    rows.map(|r| divergence::normalize(&r).ok()).collect()
}

/// Top `k` positive entries of each target, as edges via `edge(row, col, weight)`.
fn mobility_edges(
    targets: &[Option<Distribution>],
    k: usize,
    edge: impl Fn(usize, usize, f64) -> Edge,
) -> Vec<Edge> {
    let mut out = Vec::new();
    for (i, t) in targets.iter().enumerate() {
        let Some(t) = t else { continue };
        let positive = t
            .values()
            .iter()
            .copied()
            .enumerate()
            .filter(|&(_, w)| w > 0.0);
        out.extend(top_k(positive, k).map(|(j, w)| edge(i, j, w)));
    }
    out
}

/// Builds the heterogeneous graph for the selected views.
pub fn build(d: &Dataset, cfg: &GraphConfig) -> Result<HeteroGraph> {
    if cfg.views.is_empty() {
        return Err(Error::EmptyViews);
    }
    let views: BTreeSet<&View> = cfg.views.iter().collect();
    let n = d.n();
    let mut g = HeteroGraph {
        n,
        edges: BTreeMap::new(),
        mobility: None,
        poi_similarity: None,
        demo_similarity: BTreeMap::new(),
        neighbor_pairs: BTreeSet::new(),
    };

    for view in views {
        match view {
            View::Neighbor => {
                let mut edges = Vec::with_capacity(2 * d.adjacency.len());
                for &(a, b) in &d.adjacency {
                    if a == b {
                        continue;
                    }
                    edges.push(Edge {
                        src: a,
                        dst: b,
                        weight: 1.0,
                    });
                    edges.push(Edge {
                        src: b,
                        dst: a,
                        weight: 1.0,
                    });
                    g.neighbor_pairs.insert((a, b));
                }
                g.edges.insert(EdgeType::Neighbor, edges);
            }
            View::Poi => {
                let s = divergence::cosine_similarity_matrix(&d.poi_counts)?;
                g.edges.insert(EdgeType::Poi, topk_edges(&s, cfg.k_demo)?);
                g.poi_similarity = Some(s);
            }
            View::Mobility => {
                if d.trips.as_slice().iter().all(|&x| x <= 0.0) {
                    return Err(Error::EmptyTrips);
                }
                let outflow = masked_rows((0..n).map(|i| d.trips.row(i).to_vec()));
                let inflow = masked_rows((0..n).map(|j| d.trips.column(j)));
                let src = mobility_edges(&outflow, cfg.k_mobility, |i, j, w| Edge {
                    src: i,
                    dst: j,
                    weight: w,
                });
                let dst = mobility_edges(&inflow, cfg.k_mobility, |j, i, w| Edge {
                    src: i,
                    dst: j,
                    weight: w,
                });
                g.edges.insert(EdgeType::MobilitySrc, src);
                g.edges.insert(EdgeType::MobilityDst, dst);
                g.mobility = Some(MobilityTargets { outflow, inflow });
            }
            View::Demo(attr) => {
                let bins = d
                    .demographics
                    .get(attr)
                    .ok_or_else(|| Error::MissingAttribute(attr.clone()))?;
                let rows = (0..n)
                    .map(|i| divergence::normalize(bins.row(i)))
                    .collect::<Result<Vec<_>>>()?;
                let s = divergence::similarity_matrix(&rows)?;
                g.edges
                    .insert(EdgeType::Demo(attr.clone()), topk_edges(&s, cfg.k_demo)?);
                g.demo_similarity.insert(attr.clone(), s);
            }
        }
    }
    Ok(g)
}
