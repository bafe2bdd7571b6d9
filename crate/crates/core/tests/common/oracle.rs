//! Scalar-loop references for the forward stages and the four losses.

#![allow(clippy::needless_range_loop)]

use regionvec_core::autodiff::Tape;
use regionvec_core::graph::{self, GraphConfig, HeteroGraph, View};
use regionvec_core::losses;
use regionvec_core::model::{self, HyperParams, ModelParams, ParamVars};
use regionvec_core::rng::SplitMix64;
use regionvec_core::Matrix;

use super::*;

pub struct Instance {
    pub graph: HeteroGraph,
    pub trips: Matrix,
    pub params: ModelParams,
    pub hp: HyperParams,
    pub rng: SplitMix64,
}

pub fn instance(seed: u64) -> Instance {
    let mut rng = SplitMix64::new(seed);
    let n = 3 + rng.below(4);
    let d = 2 + rng.below(4);
    let data = random_dataset(&mut rng, n);
    let views = vec![
        View::Neighbor,
        View::Poi,
        View::Mobility,
        View::Demo("income".into()),
    ];
    let cfg = GraphConfig {
        views,
        k_demo: 2,
        k_mobility: 2,
    };
    let graph = graph::build(&data, &cfg).unwrap();
    let hp = HyperParams {
        dim: d,
        gcn_layers: 1 + rng.below(2),
        leaky_slope: 0.2,
    };
    let mut params = model::init_params(seed, n, &graph.relations(), &hp).unwrap();
    for r in &mut params.relation {
        r.bias = random_matrix(&mut rng, 1, d, 0.3);
        r.edge = random_matrix(&mut rng, 1, d, 0.3);
    }
    Instance {
        graph,
        trips: data.trips,
        params,
        hp,
        rng,
    }
}

pub fn max_diff(a: &Matrix, b: &[Vec<f64>]) -> f64 {
    let mut worst: f64 = 0.0;
    for (i, row) in b.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            worst = worst.max((a[(i, j)] - v).abs());
        }
    }
    worst
}

pub fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

pub fn gcn_oracle(inst: &Instance) -> Vec<Vec<Vec<f64>>> {
    let g = &inst.graph;
    let (n, d) = (g.n, inst.hp.dim);
    g.relations()
        .iter()
        .enumerate()
        .map(|(ri, rel)| {
            let rp = &inst.params.relation[ri];
            let deg = indegree(g, rel);
            let mut h = to_rows(&inst.params.nodes);
            for _ in 0..inst.hp.gcn_layers {
                let mut next = vec![vec![0.0; d]; n];
                for v in 0..n {
                    for c in 0..d {
                        let mut acc = 0.0;
                        for e in g.edges_of(rel).iter().filter(|e| e.dst == v) {
                            let mut hw = 0.0;
                            for k in 0..d {
                                hw += h[e.src][k] * rp.weight[(k, c)];
                            }
                            acc += e.weight / deg[v].max(1) as f64 * hw;
                        }
                        next[v][c] =
                            leaky(acc + rp.bias[(0, c)] + rp.edge[(0, c)], inst.hp.leaky_slope);
                    }
                }
                h = next;
            }
            h
        })
        .collect()
}

pub fn vec_mat(v: &[f64], m: &Matrix) -> Vec<f64> {
    (0..m.cols())
        .map(|c| (0..v.len()).map(|k| v[k] * m[(k, c)]).sum())
        .collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn attention_oracle(hs: &[Vec<Vec<f64>>], p: &ModelParams) -> Vec<Vec<Vec<f64>>> {
    let count = hs.len();
    let (n, d) = (hs[0].len(), hs[0][0].len());
    let mut out = vec![vec![vec![0.0; d]; n]; count];
    for v in 0..n {
        let q: Vec<Vec<f64>> = (0..count).map(|r| vec_mat(&hs[r][v], &p.query)).collect();
        let k: Vec<Vec<f64>> = (0..count).map(|r| vec_mat(&hs[r][v], &p.key)).collect();
        let val: Vec<Vec<f64>> = (0..count).map(|r| vec_mat(&hs[r][v], &p.value)).collect();
        for r in 0..count {
            let scores: Vec<f64> = (0..count)
                .map(|s| dot(&q[r], &k[s]) / (d as f64).sqrt())
                .collect();
            let a = softmax(&scores);
            for c in 0..d {
                out[r][v][c] = hs[r][v][c] + (0..count).map(|s| a[s] * val[s][c]).sum::<f64>();
            }
        }
    }
    out
}

pub fn fuse_oracle(hs: &[Vec<Vec<f64>>], p: &ModelParams) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let count = hs.len();
    let (n, d) = (hs[0].len(), hs[0][0].len());
    let mut e = vec![vec![0.0; d]; n];
    let mut alphas = Vec::new();
    for v in 0..n {
        let scores: Vec<f64> = (0..count)
            .map(|r| {
                let proj = vec_mat(&hs[r][v], &p.fusion);
                (0..d)
                    .map(|c| p.fusion_query[(0, c)] * proj[c].tanh())
                    .sum()
            })
            .collect();
        let a = softmax(&scores);
        for c in 0..d {
            e[v][c] = (0..count).map(|r| a[r] * hs[r][v][c]).sum();
        }
        alphas.push(a);
    }
    (e, alphas)
}

pub fn triplet_oracle(h: &Matrix, triplets: &[(usize, usize, usize)], margin: f64) -> f64 {
    let sq = |a: usize, b: usize| {
        (0..h.cols())
            .map(|c| (h[(a, c)] - h[(b, c)]).powi(2))
            .sum::<f64>()
    };
    let total: f64 = triplets
        .iter()
        .map(|&(i, j, k)| (sq(i, j) - sq(i, k) + margin).max(0.0))
        .sum();
    total / triplets.len() as f64
}

pub fn cosine(h: &Matrix, i: usize, j: usize) -> f64 {
    let norm = |r: usize| {
        h.row(r)
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
            .max(1e-12)
    };
    dot(h.row(i), h.row(j)) / (norm(i) * norm(j))
}

pub fn poi_oracle(h: &Matrix, s: &Matrix) -> f64 {
    let n = h.rows();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            total += (cosine(h, i, j) - s[(i, j)]).powi(2);
        }
    }
    total / (n * n) as f64
}

pub fn mean_js(targets: &[Option<Vec<f64>>], preds: &[Vec<f64>]) -> Option<f64> {
    let scored: Vec<f64> = targets
        .iter()
        .zip(preds)
        .filter_map(|(t, q)| t.as_ref().map(|t| js_bits(&smooth(t), &smooth(q))))
        .collect();
    (!scored.is_empty()).then(|| scored.iter().sum::<f64>() / scored.len() as f64)
}

pub fn mobility_oracle(src: &Matrix, dst: &Matrix, trips: &Matrix) -> f64 {
    let n = trips.rows();
    let logit = |i: usize, j: usize| dot(src.row(i), dst.row(j));
    let norm = |v: Vec<f64>| {
        let s: f64 = v.iter().sum();
        (s > 0.0).then(|| v.iter().map(|x| x / s).collect::<Vec<f64>>())
    };
    let out_t: Vec<Option<Vec<f64>>> = (0..n).map(|i| norm(trips.row(i).to_vec())).collect();
    let in_t: Vec<Option<Vec<f64>>> = (0..n).map(|j| norm(trips.column(j))).collect();
    let out_q: Vec<Vec<f64>> = (0..n)
        .map(|i| softmax(&(0..n).map(|j| logit(i, j)).collect::<Vec<_>>()))
        .collect();
    let in_q: Vec<Vec<f64>> = (0..n)
        .map(|j| softmax(&(0..n).map(|i| logit(i, j)).collect::<Vec<_>>()))
        .collect();
    let halves: Vec<f64> = [mean_js(&out_t, &out_q), mean_js(&in_t, &in_q)]
        .into_iter()
        .flatten()
        .collect();
    halves.iter().sum::<f64>() / halves.len() as f64
}

pub fn demo_oracle(h: &Matrix, s: &Matrix) -> f64 {
    let n = h.rows();
    let mut total = 0.0;
    for i in 0..n {
        let others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        let row_sum: f64 = others.iter().map(|&j| s[(i, j)]).sum();
        let t: Vec<f64> = others.iter().map(|&j| s[(i, j)] / row_sum).collect();
        let q = softmax(
            &others
                .iter()
                .map(|&j| dot(h.row(i), h.row(j)))
                .collect::<Vec<_>>(),
        );
        total += js_bits(&smooth(&t), &smooth(&q));
    }
    total / n as f64
}

/// Max absolute deviation of the tape's relation GCN, attention, fused
/// embedding and fusion weights from the loops above, on instance `seed`.
pub fn forward_deviation(seed: u64) -> [f64; 4] {
    let inst = instance(seed);
    let mut tape = Tape::new();
    let vars = ParamVars::register(&mut tape, &inst.params);
    let gcn = model::relation_gcn(&mut tape, &inst.graph, &vars, &inst.hp).unwrap();
    let expected_gcn = gcn_oracle(&inst);
    let gcn_dev = gcn
        .iter()
        .zip(&expected_gcn)
        .map(|(v, o)| max_diff(tape.value(*v), o))
        .fold(0.0, f64::max);

    // Later stages are fed the tape's own inputs so errors do not compound.
    let shared = model::attention_share(&mut tape, &gcn, &vars).unwrap();
    let actual_gcn: Vec<Vec<Vec<f64>>> = gcn.iter().map(|v| to_rows(tape.value(*v))).collect();
    let expected_shared = attention_oracle(&actual_gcn, &inst.params);
    let att_dev = shared
        .iter()
        .zip(&expected_shared)
        .map(|(v, o)| max_diff(tape.value(*v), o))
        .fold(0.0, f64::max);

    let (e, alpha) = model::fuse(&mut tape, &shared, &vars).unwrap();
    let actual_shared: Vec<Vec<Vec<f64>>> =
        shared.iter().map(|v| to_rows(tape.value(*v))).collect();
    let (expected_e, expected_alpha) = fuse_oracle(&actual_shared, &inst.params);
    [
        gcn_dev,
        att_dev,
        max_diff(tape.value(e), &expected_e),
        max_diff(tape.value(alpha), &expected_alpha),
    ]
}

/// Absolute deviation of the triplet, POI, mobility and demographic losses
/// from their loops, on random embeddings over instance `seed`.
pub fn loss_deviation(seed: u64) -> [f64; 4] {
    let mut inst = instance(seed);
    let (n, d) = (inst.graph.n, inst.hp.dim);
    let h = random_matrix(&mut inst.rng, n, d, 1.0);
    let h2 = random_matrix(&mut inst.rng, n, d, 1.0);
    let mut tape = Tape::new();
    let hv = tape.constant(h.clone());
    let hv2 = tape.constant(h2.clone());

    let margin = inst.rng.uniform(0.1, 2.0);
    let pairs = &inst.graph.neighbor_pairs;
    let triplets = losses::sample_triplets(pairs, n, seed).unwrap();
    let l = losses::neighbor_triplet_loss(&mut tape, hv, pairs, margin, seed).unwrap();
    let triplet = (tape.scalar(l) - triplet_oracle(&h, &triplets, margin)).abs();

    let s_poi = inst.graph.poi_similarity.as_ref().unwrap();
    let l = losses::poi_recon_loss(&mut tape, hv, s_poi).unwrap();
    let poi = (tape.scalar(l) - poi_oracle(&h, s_poi.as_matrix())).abs();

    let targets = inst.graph.mobility.as_ref().unwrap();
    let l = losses::mobility_js_loss(&mut tape, hv, hv2, targets).unwrap();
    let mobility = (tape.scalar(l) - mobility_oracle(&h, &h2, &inst.trips)).abs();

    let s_demo = &inst.graph.demo_similarity["income"];
    let l = losses::demo_js_loss(&mut tape, hv, s_demo).unwrap();
    let demo = (tape.scalar(l) - demo_oracle(&h, s_demo.as_matrix())).abs();
    [triplet, poi, mobility, demo]
}
