//! Family structure and kinship.
//!
//! Kinship coefficients follow the standard founder-downward recursion over a
//! topological order of the parent graph. Monozygotic twins are treated as
//! genetically identical: their mutual coefficient is overridden with the
//! diagonal value as soon as the second twin is processed, so descendants of
//! twins inherit the corrected value.

use std::collections::{BTreeMap, HashMap};
use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, Scalar};
use num_traits::Num;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{linalg, Error, Real, Result};

#[derive(Debug, Clone, PartialEq, Eq, serde::Deserialize, serde::Serialize)]
pub struct Individual {
    pub id: String,
    pub father: Option<String>,
    pub mother: Option<String>,
    pub mz_group: Option<String>,
}

impl Individual {
    pub fn founder(id: impl Into<String>) -> Self {
        Self { id: id.into(), father: None, mother: None, mz_group: None }
    }

    pub fn child(id: impl Into<String>, father: impl Into<String>, mother: impl Into<String>) -> Self {
        Self { id: id.into(), father: Some(father.into()), mother: Some(mother.into()), mz_group: None }
    }

    pub fn with_mz_group(mut self, group: impl Into<String>) -> Self {
        self.mz_group = Some(group.into());
        self
    }
}

/// A validated pedigree. Indices follow input order.
#[derive(Debug, Clone)]
pub struct Pedigree {
    individuals: Vec<Individual>,
    index: HashMap<String, usize>,
    father: Vec<Option<usize>>,
    mother: Vec<Option<usize>>,
    order: Vec<usize>,
}

impl Pedigree {
    pub fn new(individuals: Vec<Individual>) -> Result<Self> {
        let mut index = HashMap::with_capacity(individuals.len());
        for (i, ind) in individuals.iter().enumerate() {
            if index.insert(ind.id.clone(), i).is_some() {
                return Err(Error::DuplicateId(ind.id.clone()));
            }
        }
        let lookup = |child: &Individual, parent: &Option<String>| -> Result<Option<usize>> {
            match parent {
                None => Ok(None),
                Some(p) => index
                    .get(p)
                    .copied()
                    .map(Some)
                    .ok_or_else(|| Error::MissingParent { child: child.id.clone(), parent: p.clone() }),
            }
        };
        let mut father = Vec::with_capacity(individuals.len());
        let mut mother = Vec::with_capacity(individuals.len());
        for ind in &individuals {
            father.push(lookup(ind, &ind.father)?);
            mother.push(lookup(ind, &ind.mother)?);
        }
        find_cycle(&individuals, &father, &mother)?;

        let mut groups: BTreeMap<&str, (Option<usize>, Option<usize>)> = BTreeMap::new();
        for (i, ind) in individuals.iter().enumerate() {
            if let Some(g) = &ind.mz_group {
                let parents = (father[i], mother[i]);
                match groups.get(g.as_str()) {
                    Some(existing) if *existing != parents => return Err(Error::MzGroupParentMismatch(g.clone())),
                    _ => {
                        groups.insert(g, parents);
                    }
                }
            }
        }
        let order = topological_order(&father, &mother);
        Ok(Self { individuals, index, father, mother, order })
    }

    pub fn len(&self) -> usize {
        self.individuals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.individuals.is_empty()
    }

    pub fn individuals(&self) -> &[Individual] {
        &self.individuals
    }

    pub fn ids(&self) -> Vec<String> {
        self.individuals.iter().map(|i| i.id.clone()).collect()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn parents(&self, i: usize) -> (Option<usize>, Option<usize>) {
        (self.father[i], self.mother[i])
    }

    pub fn founders(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.father[i].is_none() && self.mother[i].is_none()).collect()
    }

    /// Individuals that are nobody's parent, i.e. the measured generation in a
    /// nuclear-family cohort.
    pub fn leaves(&self) -> Vec<usize> {
        let mut is_parent = vec![false; self.len()];
        for i in 0..self.len() {
            for p in [self.father[i], self.mother[i]].into_iter().flatten() {
                is_parent[p] = true;
            }
        }
        (0..self.len()).filter(|&i| !is_parent[i]).collect()
    }

    /// Parents-before-children processing order (ties broken by input order).
    pub fn topological_order(&self) -> &[usize] {
        &self.order
    }

    pub fn from_reader<R: Read>(reader: R, origin: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers().map_err(|e| Error::parse(origin, e.to_string()))?.clone();
        let expected = ["id", "father", "mother", "mz_group"];
        if headers.len() != 4 || headers.iter().zip(expected).any(|(h, e)| h != e) {
            return Err(Error::parse(origin, format!("expected header `id,father,mother,mz_group`, found `{}`", headers.iter().collect::<Vec<_>>().join(","))));
        }
        let opt = |s: &str| if s.is_empty() { None } else { Some(s.to_string()) };
        let mut individuals = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::parse(origin, e.to_string()))?;
            if rec.len() != 4 || rec[0].is_empty() {
                return Err(Error::parse(origin, format!("malformed record on data line {}", line + 1)));
            }
            individuals.push(Individual {
                id: rec[0].to_string(),
                father: opt(&rec[1]),
                mother: opt(&rec[2]),
                mz_group: opt(&rec[3]),
            });
        }
        Self::new(individuals)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,father,mother,mz_group\n");
        for ind in &self.individuals {
            out.push_str(&format!(
                "{},{},{},{}\n",
                ind.id,
                ind.father.as_deref().unwrap_or(""),
                ind.mother.as_deref().unwrap_or(""),
                ind.mz_group.as_deref().unwrap_or("")
            ));
        }
        out
    }
}

pub fn parse_pedigree(path: impl AsRef<Path>) -> Result<Pedigree> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Pedigree::from_reader(file, path)
}

fn find_cycle(inds: &[Individual], father: &[Option<usize>], mother: &[Option<usize>]) -> Result<()> {
    // 0 = unvisited, 1 = on stack, 2 = done
    let n = inds.len();
    let mut state = vec![0u8; n];
    for start in 0..n {
        if state[start] != 0 {
            continue;
        }
        let mut stack: Vec<(usize, u8)> = vec![(start, 0)];
        state[start] = 1;
        while let Some(&mut (node, ref mut next)) = stack.last_mut() {
            let parent = match *next {
                0 => father[node],
                1 => mother[node],
                _ => {
                    state[node] = 2;
                    stack.pop();
                    continue;
                }
            };
            *next += 1;
            if let Some(p) = parent {
                match state[p] {
                    0 => {
                        state[p] = 1;
                        stack.push((p, 0));
                    }
                    1 => {
                        let from = stack.iter().position(|&(v, _)| v == p).unwrap_or(0);
                        let mut path: Vec<String> = stack[from..].iter().map(|&(v, _)| inds[v].id.clone()).collect();
                        path.push(inds[p].id.clone());
                        return Err(Error::CycleDetected(path));
                    }
                    _ => {}
                }
            }
        }
    }
    Ok(())
}

fn topological_order(father: &[Option<usize>], mother: &[Option<usize>]) -> Vec<usize> {
    let n = father.len();
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut pending = vec![0usize; n];
    for i in 0..n {
        for p in [father[i], mother[i]].into_iter().flatten() {
            children[p].push(i);
            pending[i] += 1;
        }
    }
    let mut ready: std::collections::BinaryHeap<std::cmp::Reverse<usize>> =
        (0..n).filter(|&i| pending[i] == 0).map(std::cmp::Reverse).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(std::cmp::Reverse(i)) = ready.pop() {
        order.push(i);
        for &c in &children[i] {
            pending[c] -= 1;
            if pending[c] == 0 {
                ready.push(std::cmp::Reverse(c));
            }
        }
    }
    order
}

/// Kinship coefficients Φ in any number type with exact halving (floats or rationals).
pub fn kinship_coefficients<T>(ped: &Pedigree) -> DMatrix<T>
where
    T: Scalar + Num + Copy,
{
    let n = ped.len();
    let one = T::one();
    let half = one / (one + one);
    let mut phi = DMatrix::from_element(n, n, T::zero());
    let mut done: Vec<usize> = Vec::with_capacity(n);
    for &i in &ped.order {
        let (f, m) = ped.parents(i);
        for &j in &done {
            let fj = f.map_or(T::zero(), |f| phi[(f, j)]);
            let mj = m.map_or(T::zero(), |m| phi[(m, j)]);
            let v = half * (fj + mj);
            phi[(i, j)] = v;
            phi[(j, i)] = v;
        }
        let inbreeding = match (f, m) {
            (Some(f), Some(m)) => phi[(f, m)],
            _ => T::zero(),
        };
        phi[(i, i)] = half * (one + inbreeding);
        if let Some(g) = &ped.individuals[i].mz_group {
            for &j in &done {
                if ped.individuals[j].mz_group.as_ref() == Some(g) {
                    phi[(i, j)] = phi[(i, i)];
                    phi[(j, i)] = phi[(i, i)];
                }
            }
        }
        done.push(i);
    }
    phi
}

/// Kinship coefficients Φ and relatedness K = 2Φ, indexed like the pedigree.
#[derive(Debug, Clone, PartialEq)]
pub struct KinshipMatrix<T: Real> {
    pub ids: Vec<String>,
    pub phi: DMatrix<T>,
    pub k: DMatrix<T>,
}

pub fn kinship<T: Real>(ped: &Pedigree) -> KinshipMatrix<T> {
    let phi = linalg::symmetrize(&kinship_coefficients::<T>(ped));
    let k = &phi * T::lit(2.0);
    KinshipMatrix { ids: ped.ids(), phi, k }
}

impl<T: Real> KinshipMatrix<T> {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Restriction to the given row/column indices, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let pick = |m: &DMatrix<T>| DMatrix::from_fn(indices.len(), indices.len(), |a, b| m[(indices[a], indices[b])]);
        Self {
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
            phi: pick(&self.phi),
            k: pick(&self.k),
        }
    }

    /// Wraps an externally supplied relatedness matrix.
    pub fn from_relatedness(ids: Vec<String>, k: DMatrix<T>) -> Result<Self> {
        if k.nrows() != ids.len() || k.ncols() != ids.len() {
            return Err(Error::DimensionMismatch(format!("{} ids for a {}x{} matrix", ids.len(), k.nrows(), k.ncols())));
        }
        let k = linalg::symmetrize(&k);
        Ok(Self { ids, phi: &k * T::lit(0.5), k })
    }

    /// Dense CSV of K with an id header row and column.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("id");
        for id in &self.ids {
            out.push(',');
            out.push_str(id);
        }
        out.push('\n');
        for (i, id) in self.ids.iter().enumerate() {
            out.push_str(id);
            for j in 0..self.ids.len() {
                out.push(',');
                out.push_str(&format!("{}", self.k[(i, j)].as_f64()));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv_reader<R: Read>(reader: R, origin: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers().map_err(|e| Error::parse(origin, e.to_string()))?.clone();
        let ids: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
        let n = ids.len();
        let mut k = DMatrix::zeros(n, n);
        let mut rows = 0;
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::parse(origin, e.to_string()))?;
            if rows >= n || rec.len() != n + 1 || rec[0] != ids[rows] {
                return Err(Error::parse(origin, format!("kinship row {} does not match the header", rows + 1)));
            }
            for j in 0..n {
                let v: f64 = rec[j + 1].parse().map_err(|_| Error::parse(origin, format!("bad number `{}`", &rec[j + 1])))?;
                k[(rows, j)] = T::lit(v);
            }
            rows += 1;
        }
        if rows != n {
            return Err(Error::parse(origin, format!("expected {n} rows, found {rows}")));
        }
        Self::from_relatedness(ids, k)
    }
}

pub fn read_kinship_csv<T: Real>(path: impl AsRef<Path>) -> Result<KinshipMatrix<T>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    KinshipMatrix::from_csv_reader(file, path)
}

/// Family types produced by [`synthetic_cohort`].
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FamilyMix {
    pub mz_pair: f64,
    pub dz_pair: f64,
    pub sib_pair: f64,
    pub singleton: f64,
}

impl FamilyMix {
    pub const EQUAL: FamilyMix = FamilyMix { mz_pair: 0.25, dz_pair: 0.25, sib_pair: 0.25, singleton: 0.25 };

    fn validate(&self) -> Result<[f64; 4]> {
        let parts = [self.mz_pair, self.dz_pair, self.sib_pair, self.singleton];
        let sum: f64 = parts.iter().sum();
        if parts.iter().any(|p| !p.is_finite() || *p < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidProportions(sum));
        }
        Ok(parts)
    }
}

/// Builds a deterministic nuclear-family cohort.
///
/// Every family gets two synthesized founders (`fNNNN_pa`, `fNNNN_ma`); pair families add two
/// children, singleton families one. Family counts are apportioned by largest remainder and the
/// family order is shuffled with `seed`.
pub fn synthetic_cohort(n_families: usize, mix: FamilyMix, seed: u64) -> Result<Pedigree> {
    let parts = mix.validate()?;
    let mut counts: Vec<usize> = parts.iter().map(|p| (p * n_families as f64).floor() as usize).collect();
    let mut remainders: Vec<(usize, f64)> =
        parts.iter().enumerate().map(|(k, p)| (k, p * n_families as f64 - counts[k] as f64)).collect();
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let short = n_families - counts.iter().sum::<usize>();
    for &(k, _) in remainders.iter().take(short) {
        counts[k] += 1;
    }
    let mut kinds: Vec<usize> = counts.iter().enumerate().flat_map(|(k, &c)| std::iter::repeat_n(k, c)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    kinds.shuffle(&mut rng);

    let mut inds = Vec::new();
    for (f, kind) in kinds.into_iter().enumerate() {
        let pa = format!("f{f:04}_pa");
        let ma = format!("f{f:04}_ma");
        inds.push(Individual::founder(pa.clone()));
        inds.push(Individual::founder(ma.clone()));
        match kind {
            0 => {
                let g = format!("mz{f:04}");
                inds.push(Individual::child(format!("f{f:04}_c1"), &pa, &ma).with_mz_group(g.clone()));
                inds.push(Individual::child(format!("f{f:04}_c2"), &pa, &ma).with_mz_group(g));
            }
            1 | 2 => {
                inds.push(Individual::child(format!("f{f:04}_c1"), &pa, &ma));
                inds.push(Individual::child(format!("f{f:04}_c2"), &pa, &ma));
            }
            _ => inds.push(Individual::child(format!("f{f:04}_c1"), &pa, &ma)),
        }
    }
    Pedigree::new(inds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ped(rows: &[(&str, &str, &str, &str)]) -> Result<Pedigree> {
        let o = |s: &str| (!s.is_empty()).then(|| s.to_string());
        Pedigree::new(
            rows.iter()
                .map(|(i, f, m, g)| Individual { id: i.to_string(), father: o(f), mother: o(m), mz_group: o(g) })
                .collect(),
        )
    }

    #[test]
    fn minimal_trio() {
        let p = ped(&[("a", "", "", ""), ("b", "", "", ""), ("c", "a", "b", "")]).unwrap();
        assert_eq!(p.len(), 3);
        assert_eq!(p.founders(), vec![0, 1]);
        let k = kinship::<f64>(&p);
        assert_eq!(k.k[(0, 2)], 0.5);
        assert_eq!(k.k[(0, 1)], 0.0);
        assert_eq!(k.k[(2, 2)], 1.0);
    }

    #[test]
    fn self_parent_is_a_cycle() {
        let err = ped(&[("a", "a", "", "")]).unwrap_err();
        assert!(matches!(err, Error::CycleDetected(_)), "{err}");
    }

    #[test]
    fn longer_cycle_reports_path() {
        let err = ped(&[("a", "b", "", ""), ("b", "c", "", ""), ("c", "a", "", "")]).unwrap_err();
        match err {
            Error::CycleDetected(path) => assert!(path.len() >= 3),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn twin_parent_mismatch() {
        let err = ped(&[
            ("f", "", "", ""),
            ("m1", "", "", ""),
            ("m2", "", "", ""),
            ("t1", "f", "m1", "g"),
            ("t2", "f", "m2", "g"),
        ])
        .unwrap_err();
        assert!(matches!(err, Error::MzGroupParentMismatch(ref g) if g == "g"));
    }

    #[test]
    fn missing_and_duplicate() {
        assert!(matches!(ped(&[("c", "x", "", "")]).unwrap_err(), Error::MissingParent { .. }));
        assert!(matches!(ped(&[("a", "", "", ""), ("a", "", "", "")]).unwrap_err(), Error::DuplicateId(_)));
    }

    #[test]
    fn mz_twins_fully_related() {
        let p = ped(&[("f", "", "", ""), ("m", "", "", ""), ("t1", "f", "m", "g"), ("t2", "f", "m", "g")]).unwrap();
        let k = kinship::<f64>(&p);
        assert_eq!(k.k[(2, 3)], 1.0);
        assert_eq!(k.k[(2, 3)], k.k[(2, 2)]);
    }

    #[test]
    fn children_of_mz_twins_are_half_sibs_genetically() {
        // t1, t2 MZ; c1 child of t1, c2 child of t2 with unrelated spouses -> cousins via identical parents
        let p = ped(&[
            ("f", "", "", ""),
            ("m", "", "", ""),
            ("t1", "f", "m", "g"),
            ("t2", "f", "m", "g"),
            ("s1", "", "", ""),
            ("s2", "", "", ""),
            ("c1", "t1", "s1", ""),
            ("c2", "t2", "s2", ""),
        ])
        .unwrap();
        let k = kinship::<f64>(&p);
        assert_eq!(k.k[(6, 7)], 0.25);
    }

    #[test]
    fn inbreeding_raises_diagonal() {
        let p = ped(&[("f", "", "", ""), ("m", "", "", ""), ("b", "f", "m", ""), ("s", "f", "m", ""), ("x", "b", "s", "")]).unwrap();
        let k = kinship::<f64>(&p);
        assert_eq!(k.k[(4, 4)], 1.25);
    }

    #[test]
    fn csv_round_trip() {
        let p = ped(&[("a", "", "", ""), ("b", "", "", ""), ("c", "a", "b", "t"), ("d", "a", "b", "t")]).unwrap();
        let text = p.to_csv();
        let q = Pedigree::from_reader(text.as_bytes(), Path::new("mem")).unwrap();
        assert_eq!(p.individuals(), q.individuals());
        let k = kinship::<f64>(&q);
        let back = KinshipMatrix::<f64>::from_csv_reader(k.to_csv().as_bytes(), Path::new("mem")).unwrap();
        assert_eq!(back.k, k.k);
    }

    #[test]
    fn bad_header_rejected() {
        let err = Pedigree::from_reader("id,dad,mum,twin\n".as_bytes(), Path::new("x.csv")).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
    }

    #[test]
    fn synthetic_cohort_shapes() {
        let mz = FamilyMix { mz_pair: 1.0, dz_pair: 0.0, sib_pair: 0.0, singleton: 0.0 };
        let p = synthetic_cohort(1, mz, 7).unwrap();
        assert_eq!(p.len(), 4);
        assert_eq!(p.founders().len(), 2);
        assert!(synthetic_cohort(0, FamilyMix::EQUAL, 3).unwrap().is_empty());
        let bad = FamilyMix { mz_pair: 0.5, ..FamilyMix::EQUAL };
        assert!(matches!(synthetic_cohort(3, bad, 1).unwrap_err(), Error::InvalidProportions(_)));
    }

    #[test]
    fn synthetic_cohort_deterministic() {
        let a = kinship::<f64>(&synthetic_cohort(100, FamilyMix::EQUAL, 1).unwrap());
        let b = kinship::<f64>(&synthetic_cohort(100, FamilyMix::EQUAL, 1).unwrap());
        assert_eq!(a, b);
    }
}
