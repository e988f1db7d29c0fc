//! Kinship against an independent path-counting oracle, in exact rationals and in f64.

use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;
use shapecov::pedigree::{kinship, kinship_coefficients, synthetic_cohort, FamilyMix, Individual, Pedigree};

#[path = "common/path_oracle.rs"]
mod path_oracle;

use path_oracle::{random_pedigree, PathOracle, Q};

fn named(rows: &[(&str, &str, &str, &str)]) -> Pedigree {
    let o = |s: &str| (!s.is_empty()).then(|| s.to_string());
    Pedigree::new(rows.iter().map(|(i, f, m, g)| Individual { id: i.to_string(), father: o(f), mother: o(m), mz_group: o(g) }).collect()).unwrap()
}

#[test]
fn named_relationships_match_oracle() {
    // Two families joined through a shared father, plus an MZ pair.
    let ped = named(&[
        ("pa", "", "", ""),
        ("ma", "", "", ""),
        ("mb", "", "", ""),
        ("s1", "pa", "ma", ""),
        ("s2", "pa", "ma", ""),
        ("h", "pa", "mb", ""),
        ("t1", "pa", "ma", "tw"),
        ("t2", "pa", "ma", "tw"),
    ]);
    let k = kinship::<f64>(&ped);
    let oracle = PathOracle::new(&ped);
    let idx = |s: &str| ped.index_of(s).unwrap();
    let cases = [("pa", "s1", 0.5), ("s1", "s2", 0.5), ("s1", "h", 0.25), ("t1", "t2", 1.0), ("pa", "ma", 0.0)];
    for (a, b, want) in cases {
        assert_eq!(k.k[(idx(a), idx(b))], want, "{a}-{b}");
        assert_eq!(oracle.phi(idx(a), idx(b)) * 2, Q::new((want * 4.0) as i64, 4), "{a}-{b} oracle");
    }
}

#[test]
fn exact_rationals_agree_with_oracle() {
    for seed in 0..200 {
        let ped = random_pedigree(seed, 8);
        let phi: DMatrix<Q> = kinship_coefficients(&ped);
        let oracle = PathOracle::new(&ped);
        for i in 0..ped.len() {
            for j in 0..ped.len() {
                assert_eq!(phi[(i, j)], oracle.phi(i, j), "seed {seed} pair ({i},{j})");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn float_kinship_matches_oracle(seed in any::<u64>(), size in 2usize..=8) {
        let ped = random_pedigree(seed, size);
        let k = kinship::<f64>(&ped);
        let oracle = PathOracle::new(&ped);
        for i in 0..ped.len() {
            for j in 0..ped.len() {
                let q = oracle.phi(i, j) * 2;
                let want = *q.numer() as f64 / *q.denom() as f64;
                prop_assert!((k.k[(i, j)] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn synthetic_cohort_kinship_is_psd(seed in any::<u64>(), families in 1usize..40, mz in 0.0..1.0f64, dz in 0.0..1.0f64) {
        let rest = (1.0 - mz).max(0.0);
        let dz = dz * rest;
        let mix = FamilyMix { mz_pair: mz, dz_pair: dz, sib_pair: (rest - dz) / 2.0, singleton: (rest - dz) / 2.0 };
        let ped = synthetic_cohort(families, mix, seed).unwrap();
        let k = kinship::<f64>(&ped);
        let min = SymmetricEigen::new(k.k.clone()).eigenvalues.min();
        prop_assert!(min >= -1e-10, "min eigenvalue {}", min);
        prop_assert!(k.k.iter().zip(k.k.transpose().iter()).all(|(a, b)| a == b));
    }
}
