//! Rotated REML criterion against the dense Kronecker-covariance likelihood.

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shapecov::pedigree::{kinship, synthetic_cohort, FamilyMix};
use shapecov::simulation::subject_kinship;
use shapecov::variance_components::{dense_neg2_loglik, reml_objective, PreparedModel, VcModel};

fn random_spd(rng: &mut ChaCha8Rng, p: usize) -> DMatrix<f64> {
    let m = DMatrix::from_fn(p, p, |_, _| rng.random_range(-1.0..1.0));
    &m * m.transpose() + DMatrix::identity(p, p) * 0.1
}

fn cohort_kinship(seed: u64) -> DMatrix<f64> {
    let mix = FamilyMix { mz_pair: 0.3, dz_pair: 0.3, sib_pair: 0.2, singleton: 0.2 };
    let mut families = 8;
    loop {
        let k = subject_kinship(&synthetic_cohort(families, mix, seed).unwrap());
        if k.len() >= 20 {
            return k.k.view((0, 0), (20, 20)).into_owned();
        }
        families += 2;
    }
}

fn compare(seed: u64, p: usize, with_x: bool) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = cohort_kinship(seed);
    let n = k.nrows();
    let a = DMatrix::from_fn(n, p, |_, _| rng.random_range(-2.0..2.0));
    let x = with_x.then(|| DMatrix::from_fn(n, 2, |_, j| if j == 0 { 1.0 } else { rng.random_range(-1.0..1.0) }));
    let (g, e) = (random_spd(&mut rng, p), random_spd(&mut rng, p));
    let model = VcModel::new(k.clone(), x.clone(), p).unwrap();
    let data = PreparedModel::new(&model).unwrap().rotate(&a).unwrap();
    let rot = reml_objective(&g.clone().cholesky().unwrap().l(), &e.clone().cholesky().unwrap().l(), &data).unwrap();
    let dense = dense_neg2_loglik(&g, &e, &k, &a, x.as_ref()).unwrap();
    (rot, dense)
}

#[test]
fn ten_instances_match_dense_likelihood() {
    for seed in 0..10 {
        let p = 2 + (seed as usize % 2);
        let (rot, dense) = compare(seed, p, false);
        assert!((rot - dense).abs() < 1e-6, "seed {seed}: {rot} vs {dense}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn matches_dense_with_and_without_covariates(seed in any::<u64>(), p in 1usize..4, with_x: bool) {
        let (rot, dense) = compare(seed, p, with_x);
        prop_assert!((rot - dense).abs() < 1e-6 * dense.abs().max(1.0), "{} vs {}", rot, dense);
    }

    #[test]
    fn criterion_ignores_subject_order(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = cohort_kinship(seed);
        let n = k.nrows();
        let a = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-2.0..2.0));
        let (g, e) = (random_spd(&mut rng, 2), random_spd(&mut rng, 2));
        let mut perm: Vec<usize> = (0..n).collect();
        perm.reverse();
        perm.swap(0, n / 2);
        let kp = DMatrix::from_fn(n, n, |i, j| k[(perm[i], perm[j])]);
        let ap = DMatrix::from_fn(n, 2, |i, j| a[(perm[i], j)]);
        let crit = |k: &DMatrix<f64>, a: &DMatrix<f64>| {
            let data = PreparedModel::new(&VcModel::new(k.clone(), None, 2).unwrap()).unwrap().rotate(a).unwrap();
            reml_objective(&g.clone().cholesky().unwrap().l(), &e.clone().cholesky().unwrap().l(), &data).unwrap()
        };
        prop_assert!((crit(&k, &a) - crit(&kp, &ap)).abs() < 1e-8 * crit(&k, &a).abs().max(1.0));
    }
}

#[test]
fn pedigree_kinship_feeds_the_model() {
    let mix = FamilyMix { mz_pair: 0.5, dz_pair: 0.5, sib_pair: 0.0, singleton: 0.0 };
    let ped = synthetic_cohort(6, mix, 3).unwrap();
    let full = kinship::<f64>(&ped);
    let leaves = full.subset(&ped.leaves());
    assert!(VcModel::new(leaves.k, None, 2).is_ok());
}
