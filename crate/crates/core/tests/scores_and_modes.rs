use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shapecov::cca::{cca_modes, ModeSource};
use shapecov::tangent_stats::{fit_pca, regress_out, standardize, ConfounderTable, PcaMetric};
use shapecov::variance_components::TraitPartition;

fn random_spd(rng: &mut ChaCha8Rng, p: usize) -> DMatrix<f64> {
    let m = DMatrix::from_fn(p, p + 2, |_, _| rng.random_range(-1.0..1.0));
    &m * m.transpose() + DMatrix::identity(p, p) * 0.05
}

fn pick(m: &DMatrix<f64>, r: std::ops::Range<usize>, c: std::ops::Range<usize>) -> DMatrix<f64> {
    m.view((r.start, c.start), (r.len(), c.len())).into_owned()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn canonical_correlations_match_generalized_eigenvalues(seed in any::<u64>(), ps in 1usize..4, pc in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = 1 + ps + pc;
        let sigma = random_spd(&mut rng, p);
        let part = TraitPartition::standard(ps, pc);
        let n_modes = ps.min(pc);
        let modes = cca_modes(&sigma, &part, n_modes, Some(0.0), ModeSource::Genetic).unwrap();

        // Second route: ρ² are the eigenvalues of Σss⁻¹ Σsc Σcc⁻¹ Σcs.
        let s = 1..1 + ps;
        let c = 1 + ps..p;
        let ss = pick(&sigma, s.clone(), s.clone());
        let cc = pick(&sigma, c.clone(), c.clone());
        let sc = pick(&sigma, s.clone(), c.clone());
        let m = ss.clone().lu().solve(&(&sc * cc.clone().lu().solve(&sc.transpose()).unwrap())).unwrap();
        let mut rho2: Vec<f64> = m.complex_eigenvalues().iter().map(|z| z.re).collect();
        rho2.sort_by(|a, b| b.total_cmp(a));

        for (j, mode) in modes.iter().enumerate() {
            prop_assert!((mode.correlation - rho2[j].max(0.0).sqrt()).abs() < 1e-7);
            let vs = (mode.theta_s.transpose() * &ss * &mode.theta_s)[(0, 0)];
            let vc = (mode.theta_c.transpose() * &cc * &mode.theta_c)[(0, 0)];
            let cov = (mode.theta_s.transpose() * &sc * &mode.theta_c)[(0, 0)];
            prop_assert!((vs - 1.0).abs() < 1e-8 && (vc - 1.0).abs() < 1e-8);
            prop_assert!((cov - mode.correlation).abs() < 1e-8);
            for earlier in &modes[..j] {
                prop_assert!((earlier.theta_s.transpose() * &ss * &mode.theta_s)[(0, 0)].abs() < 1e-8);
            }
        }
    }

    #[test]
    fn gram_pca_matches_frobenius_when_gram_is_euclidean(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::<f64>::from_fn(12, 6, |_, _| rng.random_range(-1.0..1.0));
        let gram = &x * x.transpose();
        let (bf, sf) = fit_pca(&x, &PcaMetric::Frobenius, 3).unwrap();
        let (bg, sg) = fit_pca(&x, &PcaMetric::Gram(gram), 3).unwrap();
        prop_assert!((&bf.explained_variance - &bg.explained_variance).norm() < 1e-9);
        prop_assert!((&sf.scores - &sg.scores).norm() < 1e-8);
        prop_assert!((&bf.components - &bg.components).norm() < 1e-8);
        prop_assert!((bf.total_variance - bg.total_variance).abs() < 1e-10);
    }

    #[test]
    fn pca_scores_are_uncorrelated_with_matching_variance(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(15, 5, |_, j| rng.random_range(-1.0..1.0) * (j + 1) as f64);
        let (basis, scores) = fit_pca(&x, &PcaMetric::Frobenius, 4).unwrap();
        let cov = scores.scores.transpose() * &scores.scores / 14.0;
        for i in 0..4 {
            prop_assert!((cov[(i, i)] - basis.explained_variance[i]).abs() < 1e-9);
            for j in 0..i {
                prop_assert!(cov[(i, j)].abs() < 1e-9);
            }
        }
        prop_assert!(basis.explained_variance.iter().zip(basis.explained_variance.iter().skip(1)).all(|(a, b)| a >= b));
    }

    #[test]
    fn residuals_are_orthogonal_to_confounders(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = DMatrix::from_fn(20, 2, |_, _| rng.random_range(20.0..60.0));
        let conf = ConfounderTable::new(z, vec![true, false]).unwrap();
        let data = DMatrix::from_fn(20, 4, |_, _| rng.random_range(-1.0..1.0));
        let r = regress_out(&data, &conf).unwrap();
        let design = conf.design();
        prop_assert!((design.transpose() * &r).norm() < 1e-8 * data.norm());
        let (std, scales) = standardize(&r).unwrap();
        let col_var = |j: usize| std.column(j).iter().map(|v| v * v).sum::<f64>() / 19.0;
        prop_assert!((0..4).all(|j| (col_var(j) - 1.0).abs() < 1e-10));
        prop_assert!(scales.iter().all(|s| *s > 0.0));
    }
}

#[test]
fn independent_blocks_give_zero_correlation() {
    let sigma = DMatrix::from_diagonal(&DVector::<f64>::from_vec(vec![1.0, 2.0, 3.0, 4.0, 5.0]));
    let modes = cca_modes(&sigma, &TraitPartition::standard(2, 2), 2, None, ModeSource::Environmental).unwrap();
    assert!(modes.iter().all(|m| m.correlation.abs() < 1e-12));
}
