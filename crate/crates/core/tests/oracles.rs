//! Tape-based forward stages and losses against plain scalar loops.

mod common;

use common::oracle::*;
use common::*;
use regionvec_core::autodiff::Tape;
use regionvec_core::graph::{self, GraphConfig, View};
use regionvec_core::losses::{self, MobilityDivergence};
use regionvec_core::rng::SplitMix64;
use regionvec_core::Matrix;

const INSTANCES: u64 = 50;
const TOL: f64 = 1e-12;

#[test]
fn forward_stages_match_scalar_loops() {
    for seed in 0..INSTANCES {
        let [gcn, attention, fuse, alpha] = forward_deviation(seed);
        assert!(gcn < TOL, "gcn seed {seed}: {gcn:e}");
        assert!(attention < TOL, "attention seed {seed}: {attention:e}");
        assert!(fuse < TOL, "fuse seed {seed}: {fuse:e}");
        assert!(alpha < TOL, "alpha seed {seed}: {alpha:e}");
    }
}

#[test]
fn losses_match_scalar_loops() {
    for seed in 0..INSTANCES {
        let [triplet, poi, mobility, demo] = loss_deviation(seed);
        assert!(triplet < TOL, "triplet {seed}: {triplet:e}");
        assert!(poi < TOL, "poi {seed}: {poi:e}");
        assert!(mobility < TOL, "mobility {seed}: {mobility:e}");
        assert!(demo < TOL, "demo {seed}: {demo:e}");
    }
}

#[test]
fn sampled_negatives_are_non_neighbors() {
    for seed in 0..INSTANCES {
        let inst = instance(seed);
        let pairs = &inst.graph.neighbor_pairs;
        let triplets = losses::sample_triplets(pairs, inst.graph.n, seed).unwrap();
        for &(i, j, k) in &triplets {
            assert!(pairs.contains(&(i.min(j), i.max(j))));
            assert!(k != i && !pairs.contains(&(i.min(k), i.max(k))));
        }
        assert_eq!(
            triplets,
            losses::sample_triplets(pairs, inst.graph.n, seed).unwrap()
        );
    }
}

#[test]
fn three_node_mobility_case() {
    let trips = Matrix::from_rows(&[[0.0, 1.0, 1.0], [2.0, 0.0, 0.0], [0.0, 3.0, 0.0]]).unwrap();
    let mut data = random_dataset(&mut SplitMix64::new(0), 3);
    data.trips = trips.clone();
    let graph = graph::build(&data, &GraphConfig::new(vec![View::Mobility])).unwrap();
    let mut rng = SplitMix64::new(17);
    let src = random_matrix(&mut rng, 3, 4, 1.0);
    let dst = random_matrix(&mut rng, 3, 4, 1.0);
    let mut tape = Tape::new();
    let (s, t) = (tape.constant(src.clone()), tape.constant(dst.clone()));
    let targets = graph.mobility.as_ref().unwrap();
    let l = losses::mobility_js_loss(&mut tape, s, t, targets).unwrap();
    let expected = mobility_oracle(&src, &dst, &trips);
    assert!((tape.scalar(l) - expected).abs() < TOL);
    assert!(expected > 0.0 && expected <= 1.0);

    // The KL variants follow the same skeleton with a different pointwise term.
    let l = losses::mobility_loss(
        &mut tape,
        s,
        t,
        targets,
        MobilityDivergence::KlTargetPredicted,
    )
    .unwrap();
    let n = 3;
    let logit = |i: usize, j: usize| dot(src.row(i), dst.row(j));
    let mut halves = 0.0;
    for i in 0..n {
        let t: Vec<f64> = trips
            .row(i)
            .iter()
            .map(|x| x / trips.row(i).iter().sum::<f64>())
            .collect();
        let q = softmax(&(0..n).map(|j| logit(i, j)).collect::<Vec<_>>());
        halves += kl_bits(&smooth(&t), &smooth(&q)) / n as f64;
    }
    let mut inflow = 0.0;
    for j in 0..n {
        let col = trips.column(j);
        let total: f64 = col.iter().sum();
        let t: Vec<f64> = col.iter().map(|x| x / total).collect();
        let q = softmax(&(0..n).map(|i| logit(i, j)).collect::<Vec<_>>());
        inflow += kl_bits(&smooth(&t), &smooth(&q)) / n as f64;
    }
    assert!((tape.scalar(l) - 0.5 * (halves + inflow)).abs() < TOL);
}
