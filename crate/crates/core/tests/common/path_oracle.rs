//! Wright's path-counting kinship, written independently of the recursive implementation.

use std::collections::HashMap;

use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shapecov::pedigree::{Individual, Pedigree};

pub type Q = Ratio<i64>;

/// Wright's path-counting formula. MZ co-twins collapse onto one genetic individual.
pub struct PathOracle {
    canon: Vec<usize>,
    parents: Vec<Vec<usize>>,
}

impl PathOracle {
    pub fn new(ped: &Pedigree) -> Self {
        let mut first: HashMap<&str, usize> = HashMap::new();
        let mut canon = Vec::new();
        for (i, ind) in ped.individuals().iter().enumerate() {
            canon.push(match &ind.mz_group {
                Some(g) => *first.entry(g.as_str()).or_insert(i),
                None => i,
            });
        }
        let parents = (0..ped.len())
            .map(|i| {
                let (f, m) = ped.parents(i);
                [f, m].into_iter().flatten().map(|p| canon[p]).collect()
            })
            .collect();
        Self { canon, parents }
    }

    /// Every upward path starting at `i`, including the trivial one.
    fn up_paths(&self, i: usize) -> Vec<Vec<usize>> {
        let mut out = vec![vec![i]];
        for &p in &self.parents[i] {
            for mut rest in self.up_paths(p) {
                rest.insert(0, i);
                out.push(rest);
            }
        }
        out
    }

    fn inbreeding(&self, i: usize) -> Q {
        match self.parents[i].as_slice() {
            [f, m] => self.phi(*f, *m),
            _ => Q::from_integer(0),
        }
    }

    pub fn phi(&self, i: usize, j: usize) -> Q {
        let (i, j) = (self.canon[i], self.canon[j]);
        let half = Q::new(1, 2);
        if i == j {
            return half * (Q::from_integer(1) + self.inbreeding(i));
        }
        let mut total = Q::from_integer(0);
        for pi in self.up_paths(i) {
            for pj in self.up_paths(j) {
                let a = *pi.last().unwrap();
                if a != *pj.last().unwrap() {
                    continue;
                }
                let disjoint = pi[..pi.len() - 1].iter().all(|x| !pj.contains(x));
                if !disjoint {
                    continue;
                }
                let edges = (pi.len() - 1 + pj.len() - 1 + 1) as u32;
                total += half.pow(edges as i32) * (Q::from_integer(1) + self.inbreeding(a));
            }
        }
        total
    }
}

/// Random pedigree of at most `max` members: founders, children of earlier members, MZ pairs.
pub fn random_pedigree(seed: u64, max: usize) -> Pedigree {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inds: Vec<Individual> = vec![Individual::founder("i0"), Individual::founder("i1")];
    while inds.len() < max {
        let n = inds.len();
        let roll: f64 = rng.random();
        if roll < 0.2 {
            inds.push(Individual::founder(format!("i{n}")));
            continue;
        }
        let f = rng.random_range(0..n);
        let mut m = rng.random_range(0..n);
        if m == f {
            m = (f + 1) % n;
        }
        let (fa, mo) = (inds[f].id.clone(), inds[m].id.clone());
        if roll > 0.8 && n + 2 <= max {
            let g = format!("mz{n}");
            inds.push(Individual::child(format!("i{n}"), &fa, &mo).with_mz_group(g.clone()));
            inds.push(Individual::child(format!("i{}", n + 1), &fa, &mo).with_mz_group(g));
        } else {
            inds.push(Individual::child(format!("i{n}"), &fa, &mo));
        }
    }
    Pedigree::new(inds).expect("acyclic by construction")
}
