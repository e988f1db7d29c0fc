use nalgebra::Vector3;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shapecov::lddmm::{hamiltonian, match_gradient, match_objective, shoot, KernelSpec, LandmarkSet, Momenta};

fn points(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<Vector3<f64>> {
    (0..n).map(|_| Vector3::new(rng.random_range(-scale..scale), rng.random_range(-scale..scale), rng.random_range(-scale..scale))).collect()
}

fn instance(seed: u64, n: usize, p_scale: f64) -> (KernelSpec<f64>, LandmarkSet<f64>, Momenta<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = KernelSpec::new(vec![1.0, 0.5], None).unwrap();
    let x = LandmarkSet::new(points(&mut rng, n, 1.0)).unwrap();
    let p = Momenta { vectors: points(&mut rng, n, p_scale) };
    (k, x, p)
}

fn max_dist(a: &LandmarkSet<f64>, b: &LandmarkSet<f64>) -> f64 {
    a.points.iter().zip(&b.points).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn hamiltonian_is_conserved(seed in any::<u64>()) {
        let (k, x, p) = instance(seed, 20, 0.1);
        let path = shoot(&k, &x, &p, 10).unwrap();
        let h0 = hamiltonian(&k, &x, &p);
        for (xs, ps) in &path.states {
            let h = hamiltonian(&k, xs, ps);
            prop_assert!((h - h0).abs() <= 1e-5 * h0, "H drifted from {} to {}", h0, h);
        }
        prop_assert!((path.energy - 2.0 * h0).abs() <= 1e-12 * h0);
    }

    #[test]
    fn zero_momenta_leave_every_state_fixed(seed in any::<u64>(), n in 1usize..15) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = LandmarkSet::new(points(&mut rng, n, 3.0)).unwrap();
        let path = shoot(&KernelSpec::gaussian(1.0).unwrap(), &x, &Momenta::zeros(n), 7).unwrap();
        for (xs, ps) in &path.states {
            prop_assert_eq!(xs, &x);
            prop_assert!(ps.vectors.iter().all(|v| *v == Vector3::zeros()));
        }
    }

    #[test]
    fn match_gradient_matches_central_differences(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (k, template, m) = instance(seed, 5, 0.3);
        let target = LandmarkSet::new(template.points.iter().map(|p| p + Vector3::new(rng.random_range(-0.3..0.3), 0.1, -0.2)).collect()).unwrap();
        let lambda = 0.05;
        let (_, g) = match_gradient(&k, &template, &target, lambda, &m, 8).unwrap();
        let base = m.flatten();
        let h = 1e-5;
        for i in 0..base.len() {
            let mut up = base.clone();
            up[i] += h;
            let mut dn = base.clone();
            dn[i] -= h;
            let f = |v| match_objective(&k, &template, &target, lambda, &Momenta::from_flat(&v).unwrap(), 8).unwrap();
            let fd = (f(up) - f(dn)) / (2.0 * h);
            prop_assert!((fd - g[i]).abs() <= 1e-4 * g.norm().max(1e-6), "coordinate {}: {} vs {}", i, fd, g[i]);
        }
    }
}

#[test]
fn rk4_converges_at_fourth_order() {
    for seed in 0..5 {
        let (k, x, p) = instance(seed, 8, 0.5);
        let reference = shoot(&k, &x, &p, 2048).unwrap();
        let coarse = max_dist(shoot(&k, &x, &p, 8).unwrap().endpoint(), reference.endpoint());
        let fine = max_dist(shoot(&k, &x, &p, 16).unwrap().endpoint(), reference.endpoint());
        assert!(coarse / fine >= 8.0, "seed {seed}: error ratio {}", coarse / fine);
    }
}

#[test]
fn shooting_is_generic_over_f32() {
    let k = KernelSpec::<f32>::gaussian(1.0).unwrap();
    let x = LandmarkSet::new(vec![Vector3::new(0.0f32, 0.0, 0.0), Vector3::new(1.0, 0.0, 0.0)]).unwrap();
    let p = Momenta { vectors: vec![Vector3::new(0.1f32, 0.0, 0.0), Vector3::new(-0.1, 0.0, 0.0)] };
    let path = shoot(&k, &x, &p, 10).unwrap();
    let h0 = hamiltonian(&k, &x, &p);
    let h1 = hamiltonian(&k, path.endpoint(), &path.states.last().unwrap().1);
    assert!((h1 - h0).abs() <= 1e-4 * h0);
}
