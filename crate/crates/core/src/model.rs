//! The three-stage region embedding network.
//!
//! 1. A relation-aware GCN runs one propagation stack per relation, with a
//!    learnable edge embedding `e_r` added to every aggregated message.
//! 2. Self-attention across the relation-specific embeddings of each node
//!    shares information between relations (with a residual connection).
//! 3. Attention-based fusion mixes the shared embeddings into one vector
//!    per region.
//!
//! Every stage records onto an [`autodiff::Tape`] so the losses can
//! backpropagate into all parameters.

use alloc::vec::Vec;

use crate::autodiff::{Tape, Var};
use crate::graph::{EdgeType, HeteroGraph};
use crate::rng::SplitMix64;
use crate::{Error, Matrix, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct HyperParams {
    /// Embedding size.
    pub dim: usize,
    pub gcn_layers: usize,
    pub leaky_slope: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            dim: 144,
            gcn_layers: 2,
            leaky_slope: 0.2,
        }
    }
}

impl HyperParams {
    pub fn check(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::InvalidConfig(
                "embedding dim must be at least 2".into(),
            ));
        }
        if self.gcn_layers < 1 {
            return Err(Error::InvalidConfig("need at least one GCN layer".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelationParams {
    /// d × d message transform.
    pub weight: Matrix,
    /// 1 × d.
    pub bias: Matrix,
    /// 1 × d edge embedding.
    pub edge: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub relations: Vec<EdgeType>,
    /// n × d learnable node table, the GCN input.
    pub nodes: Matrix,
    pub relation: Vec<RelationParams>,
    pub query: Matrix,
    pub key: Matrix,
    pub value: Matrix,
    pub fusion: Matrix,
    /// 1 × d fusion scoring vector.
    pub fusion_query: Matrix,
}

fn xavier(rng: &mut SplitMix64, rows: usize, cols: usize) -> Matrix {
    let bound = libm::sqrt(6.0 / (rows + cols) as f64);
    Matrix::from_fn(rows, cols, |_, _| rng.uniform(-bound, bound))
}

/// Xavier-uniform matrices, zero biases and edge embeddings.
pub fn init_params(
    seed: u64,
    n: usize,
    relations: &[EdgeType],
    hp: &HyperParams,
) -> Result<ModelParams> {
    hp.check()?;
    if relations.is_empty() {
        return Err(Error::EmptyViews);
    }
    let d = hp.dim;
    let mut rng = SplitMix64::new(seed);
    let nodes = xavier(&mut rng, n, d);
    let relation = relations
        .iter()
        .map(|_| RelationParams {
            weight: xavier(&mut rng, d, d),
            bias: Matrix::zeros(1, d),
            edge: Matrix::zeros(1, d),
        })
        .collect();
    Ok(ModelParams {
        relations: relations.to_vec(),
        nodes,
        relation,
        query: xavier(&mut rng, d, d),
        key: xavier(&mut rng, d, d),
        value: xavier(&mut rng, d, d),
        fusion: xavier(&mut rng, d, d),
        fusion_query: xavier(&mut rng, 1, d),
    })
}

impl ModelParams {
    /// All tensors in a fixed order: nodes, per relation (weight, bias,
    /// edge), query, key, value, fusion, fusion_query.
    pub fn tensors(&self) -> Vec<&Matrix> {
        let mut out = Vec::with_capacity(6 + 3 * self.relation.len());
        out.push(&self.nodes);
        for r in &self.relation {
            out.extend([&r.weight, &r.bias, &r.edge]);
        }
        out.extend([
            &self.query,
            &self.key,
            &self.value,
            &self.fusion,
            &self.fusion_query,
        ]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = Vec::with_capacity(6 + 3 * self.relation.len());
        out.push(&mut self.nodes);
        for r in &mut self.relation {
            out.extend([&mut r.weight, &mut r.bias, &mut r.edge]);
        }
        out.extend([
            &mut self.query,
            &mut self.key,
            &mut self.value,
            &mut self.fusion,
            &mut self.fusion_query,
        ]);
        out
    }

    /// Parallel to [`tensors`](Self::tensors): `false` for biases and edge embeddings.
    pub fn decay_mask(&self) -> Vec<bool> {
        let mut out = alloc::vec![true];
        for _ in &self.relation {
            out.extend([true, false, false]);
        }
        out.extend([true; 5]);
        out
    }

    /// Rebuilds from tensors in [`tensors`](Self::tensors) order.
    pub fn from_tensors(relations: &[EdgeType], tensors: &[Matrix]) -> Result<Self> {
        let expected = 6 + 3 * relations.len();
        if tensors.len() != expected {
            return Err(Error::LengthMismatch {
                left: tensors.len(),
                right: expected,
            });
        }
        let r = relations.len();
        Ok(Self {
            relations: relations.to_vec(),
            nodes: tensors[0].clone(),
            relation: (0..r)
                .map(|i| RelationParams {
                    weight: tensors[1 + 3 * i].clone(),
                    bias: tensors[2 + 3 * i].clone(),
                    edge: tensors[3 + 3 * i].clone(),
                })
                .collect(),
            query: tensors[1 + 3 * r].clone(),
            key: tensors[2 + 3 * r].clone(),
            value: tensors[3 + 3 * r].clone(),
            fusion: tensors[4 + 3 * r].clone(),
            fusion_query: tensors[5 + 3 * r].clone(),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|m| m.is_finite())
    }
}

/// Tape handles for one [`ModelParams`], same layout.
#[derive(Debug, Clone)]
pub struct ParamVars {
    pub nodes: Var,
    pub relation: Vec<(Var, Var, Var)>,
    pub query: Var,
    pub key: Var,
    pub value: Var,
    pub fusion: Var,
    pub fusion_query: Var,
}

impl ParamVars {
    /// Registers every tensor as a parameter leaf.
    pub fn register(tape: &mut Tape, params: &ModelParams) -> Self {
        let flat: Vec<Var> = params
            .tensors()
            .into_iter()
            .map(|m| tape.param(m.clone()))
            .collect();
        Self::from_flat(&flat)
    }

    /// Groups handles given in [`ModelParams::tensors`] order.
    pub fn from_flat(flat: &[Var]) -> Self {
        let r = (flat.len() - 6) / 3;
        Self {
            nodes: flat[0],
            relation: (0..r)
                .map(|i| (flat[1 + 3 * i], flat[2 + 3 * i], flat[3 + 3 * i]))
                .collect(),
            query: flat[1 + 3 * r],
            key: flat[2 + 3 * r],
            value: flat[3 + 3 * r],
            fusion: flat[4 + 3 * r],
            fusion_query: flat[5 + 3 * r],
        }
    }

    pub fn flat(&self) -> Vec<Var> {
        let mut out = alloc::vec![self.nodes];
        for &(w, b, e) in &self.relation {
            out.extend([w, b, e]);
        }
        out.extend([
            self.query,
            self.key,
            self.value,
            self.fusion,
            self.fusion_query,
        ]);
        out
    }
}

/// Row-normalized dense adjacency for one relation: `A[v][u] = w_uv / max(1, indeg(v))`.
pub fn normalized_adjacency(graph: &HeteroGraph, relation: &EdgeType) -> Matrix {
    let n = graph.n;
    let edges = graph.edges_of(relation);
    let mut indeg = alloc::vec![0usize; n];
    for e in edges {
        indeg[e.dst] += 1;
    }
    let mut a = Matrix::zeros(n, n);
    for e in edges {
        a[(e.dst, e.src)] += e.weight / indeg[e.dst].max(1) as f64;
    }
    a
}

/// Per-relation GCN stacks; returns `H_r` (n × d) in relation order.
pub fn relation_gcn(
    tape: &mut Tape,
    graph: &HeteroGraph,
    vars: &ParamVars,
    hp: &HyperParams,
) -> Result<Vec<Var>> {
    let relations = graph.relations();
    if relations.len() != vars.relation.len() {
        return Err(Error::LengthMismatch {
            left: relations.len(),
            right: vars.relation.len(),
        });
    }
    let n = graph.n;
    let ones = tape.constant(Matrix::filled(n, 1, 1.0));
    let mut out = Vec::with_capacity(relations.len());
    for (rel, &(w, b, e)) in relations.iter().zip(&vars.relation) {
        let adj = tape.constant(normalized_adjacency(graph, rel));
        let shift = tape.add(b, e)?;
        let shift = tape.matmul(ones, shift)?;
        let mut h = vars.nodes;
        for _ in 0..hp.gcn_layers {
            let hw = tape.matmul(h, w)?;
            let msg = tape.matmul(adj, hw)?;
            let pre = tape.add(msg, shift)?;
            h = tape.leaky_relu(pre, hp.leaky_slope);
        }
        out.push(h);
    }
    Ok(out)
}

/// `R × d` constant whose row `r` is all ones; `A · sel` copies column `r`
/// of an `n × R` matrix across `d` columns.
fn column_selector(tape: &mut Tape, r: usize, count: usize, d: usize) -> Var {
    tape.constant(Matrix::from_fn(
        count,
        d,
        |i, _| if i == r { 1.0 } else { 0.0 },
    ))
}

/// Self-attention across relations, per node, with a residual connection.
pub fn attention_share(tape: &mut Tape, hs: &[Var], vars: &ParamVars) -> Result<Vec<Var>> {
    let Some(&first) = hs.first() else {
        return Err(Error::EmptyViews);
    };
    let d = tape.shape(first).1;
    let count = hs.len();
    let inv_sqrt_d = 1.0 / libm::sqrt(d as f64);
    let ones_d = tape.constant(Matrix::filled(d, 1, 1.0));
    let selectors: Vec<Var> = (0..count)
        .map(|s| column_selector(tape, s, count, d))
        .collect();

    let mut q = Vec::with_capacity(count);
    let mut k = Vec::with_capacity(count);
    let mut v = Vec::with_capacity(count);
    for &h in hs {
        q.push(tape.matmul(h, vars.query)?);
        k.push(tape.matmul(h, vars.key)?);
        v.push(tape.matmul(h, vars.value)?);
    }

    let mut out = Vec::with_capacity(count);
    for r in 0..count {
        let mut scores = Vec::with_capacity(count);
        for &ks in &k {
            let qk = tape.mul(q[r], ks)?;
            let dot = tape.matmul(qk, ones_d)?;
            scores.push(tape.scale(dot, inv_sqrt_d));
        }
        let scores = tape.concat_cols(&scores)?;
        let attn = tape.softmax_rows(scores);
        let mut acc = hs[r];
        for s in 0..count {
            let weight = tape.matmul(attn, selectors[s])?;
            let term = tape.mul(weight, v[s])?;
            acc = tape.add(acc, term)?;
        }
        out.push(acc);
    }
    Ok(out)
}

/// Attention fusion. Returns the unified embeddings `E` (n × d) and the
/// fusion weights (n × R, rows sum to 1).
pub fn fuse(tape: &mut Tape, hs: &[Var], vars: &ParamVars) -> Result<(Var, Var)> {
    let Some(&first) = hs.first() else {
        return Err(Error::EmptyViews);
    };
    let d = tape.shape(first).1;
    let count = hs.len();
    let q = tape.transpose(vars.fusion_query);
    let mut scores = Vec::with_capacity(count);
    for &h in hs {
        let proj = tape.matmul(h, vars.fusion)?;
        let act = tape.tanh(proj);
        scores.push(tape.matmul(act, q)?);
    }
    let scores = tape.concat_cols(&scores)?;
    let alpha = tape.softmax_rows(scores);
    let mut embeddings = None;
    for (r, &h) in hs.iter().enumerate() {
        let sel = column_selector(tape, r, count, d);
        let weight = tape.matmul(alpha, sel)?;
        let term = tape.mul(weight, h)?;
        embeddings = Some(match embeddings {
            None => term,
            Some(acc) => tape.add(acc, term)?,
        });
    }
    Ok((embeddings.expect("at least one relation"), alpha))
}

#[derive(Debug, Clone)]
pub struct ModelOutput {
    pub relations: Vec<EdgeType>,
    /// GCN outputs `H_r`.
    pub gcn: Vec<Var>,
    /// Post-attention `H'_r`, consumed by the losses.
    pub shared: Vec<Var>,
    pub fusion_weights: Var,
    /// Unified embeddings `E`.
    pub embeddings: Var,
}

impl ModelOutput {
    /// `H'_r` for relation `r`, if active.
    pub fn shared_of(&self, r: &EdgeType) -> Option<Var> {
        self.relations
            .iter()
            .position(|x| x == r)
            .map(|i| self.shared[i])
    }
}

pub fn forward(
    tape: &mut Tape,
    graph: &HeteroGraph,
    vars: &ParamVars,
    hp: &HyperParams,
) -> Result<ModelOutput> {
    let gcn = relation_gcn(tape, graph, vars, hp)?;
    let shared = attention_share(tape, &gcn, vars)?;
    let (embeddings, fusion_weights) = fuse(tape, &shared, vars)?;
    Ok(ModelOutput {
        relations: graph.relations(),
        gcn,
        shared,
        fusion_weights,
        embeddings,
    })
}

/// Unified embeddings for fixed parameters.
pub fn embed(graph: &HeteroGraph, params: &ModelParams, hp: &HyperParams) -> Result<Matrix> {
    let mut tape = Tape::new();
    let vars = ParamVars::register(&mut tape, params);
    let out = forward(&mut tape, graph, &vars, hp)?;
    Ok(tape.value(out.embeddings).clone())
}
