mod common;

use proptest::prelude::*;
use regionvec_core::divergence::{self, Distribution};
use regionvec_core::Matrix;

fn distribution(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    (2..=max_len)
        .prop_flat_map(|len| prop::collection::vec(0.0f64..1.0, len))
        .prop_filter_map("nonzero mass", |raw| {
            let total: f64 = raw.iter().sum();
            (total > 1e-6).then(|| raw.iter().map(|x| x / total).collect())
        })
}

fn pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..=20).prop_flat_map(|len| {
        let one = prop::collection::vec(0.0f64..1.0, len);
        (one.clone(), one)
    })
}

fn dist(raw: &[f64]) -> Option<Distribution> {
    divergence::normalize(raw).ok()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn js_symmetric_and_bounded((a, b) in pair()) {
        let (Some(p), Some(q)) = (dist(&a), dist(&b)) else { return Ok(()) };
        let pq = divergence::js(&p, &q).unwrap();
        let qp = divergence::js(&q, &p).unwrap();
        prop_assert_eq!(pq, qp);
        prop_assert!((0.0..=1.0).contains(&pq));
        prop_assert!(divergence::kl(&p, &q).unwrap() >= 0.0);
    }

    #[test]
    fn js_matches_direct_formula((a, b) in pair()) {
        let (Some(p), Some(q)) = (dist(&a), dist(&b)) else { return Ok(()) };
        let expected = common::js_bits(&common::smooth(p.values()), &common::smooth(q.values()));
        prop_assert!((divergence::js(&p, &q).unwrap() - expected.clamp(0.0, 1.0)).abs() < 1e-12);
    }

    #[test]
    fn self_divergence_is_zero(p in distribution(20)) {
        let p = Distribution::new(p).unwrap();
        prop_assert!(divergence::kl(&p, &p).unwrap().abs() < 1e-12);
        prop_assert!(divergence::js(&p, &p).unwrap().abs() < 1e-12);
    }

    #[test]
    fn similarity_matrix_invariants(rows in prop::collection::vec(distribution(5), 2..6)) {
        let len = rows[0].len();
        let rows: Vec<Distribution> = rows
            .into_iter()
            .filter(|r| r.len() == len)
            .map(|r| Distribution::new(r).unwrap())
            .collect();
        prop_assume!(rows.len() >= 2);
        let s = divergence::similarity_matrix(&rows).unwrap();
        for i in 0..rows.len() {
            prop_assert_eq!(s.get(i, i), 1.0);
            for j in 0..rows.len() {
                prop_assert_eq!(s.get(i, j), s.get(j, i));
                prop_assert!((0.0..=1.0).contains(&s.get(i, j)));
            }
        }
    }

    #[test]
    fn cosine_similarity_of_counts(rows in prop::collection::vec(prop::collection::vec(0u8..10, 3), 2..6)) {
        prop_assume!(rows.iter().all(|r| r.iter().any(|&v| v > 0)));
        let m = Matrix::from_rows(&rows.iter().map(|r| r.iter().map(|&v| v as f64).collect::<Vec<_>>()).collect::<Vec<_>>()).unwrap();
        let s = divergence::cosine_similarity_matrix(&m).unwrap();
        for i in 0..rows.len() {
            prop_assert!((s.get(i, i) - 1.0).abs() < 1e-12);
            for j in 0..rows.len() {
                prop_assert_eq!(s.get(i, j), s.get(j, i));
            }
        }
    }
}

#[test]
fn kl_asymmetry_witness() {
    let p = Distribution::new(vec![0.9, 0.1]).unwrap();
    let q = Distribution::new(vec![0.5, 0.5]).unwrap();
    let forward = divergence::kl(&p, &q).unwrap();
    let backward = divergence::kl(&q, &p).unwrap();
    assert!((forward - backward).abs() > 1e-3, "{forward} vs {backward}");
}

#[test]
fn reference_values() {
    let p = Distribution::new(vec![0.5, 0.5]).unwrap();
    let q = Distribution::new(vec![0.25, 0.75]).unwrap();
    let expected_kl = 0.5 * (0.5f64 / 0.25).log2() + 0.5 * (0.5f64 / 0.75).log2();
    assert!((divergence::kl(&p, &q).unwrap() - expected_kl).abs() < 1e-9);
    assert!((divergence::kl(&p, &q).unwrap() - 0.2075).abs() < 1e-4);
    assert!((divergence::js(&p, &q).unwrap() - 0.0488).abs() < 1e-4);

    let a = Distribution::new(vec![1.0, 0.0]).unwrap();
    let b = Distribution::new(vec![0.0, 1.0]).unwrap();
    let far = divergence::kl(&a, &b).unwrap();
    assert!(far.is_finite() && far > 35.0 && far < 45.0, "{far}");
    assert!((divergence::js(&a, &b).unwrap() - 1.0).abs() < 1e-9);
}
