//! Two-sample Hotelling T² and its label-permutation null distribution.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Subjects as rows, with a group label in {0, 1} and a subject id per row.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTable {
    pub ids: Vec<u64>,
    pub rows: Array2<f64>,
    pub groups: Vec<usize>,
}

impl FeatureTable {
    pub fn new(ids: Vec<u64>, rows: Array2<f64>, groups: Vec<usize>) -> Result<Self> {
        let n = rows.nrows();
        if ids.len() != n || groups.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "{} rows, {} ids, {} labels",
                n,
                ids.len(),
                groups.len()
            )));
        }
        if let Some(&g) = groups.iter().find(|&&g| g > 1) {
            return Err(Error::InvalidLabel { label: g, classes: 2 });
        }
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature table".into()));
        }
        for g in 0..2 {
            let count = groups.iter().filter(|&&x| x == g).count();
            if count < 2 {
                return Err(Error::InsufficientData(format!("group {g} has {count} subjects, need 2")));
            }
        }
        Ok(FeatureTable { ids, rows, groups })
    }

    /// Table with ids `0..n`.
    pub fn from_rows(rows: Array2<f64>, groups: Vec<usize>) -> Result<Self> {
        let ids = (0..rows.nrows() as u64).collect();
        Self::new(ids, rows, groups)
    }

    pub fn dims(&self) -> usize {
        self.rows.ncols()
    }

    /// Same table with rows ordered by subject id.
    pub fn sorted(&self) -> FeatureTable {
        let mut order: Vec<usize> = (0..self.ids.len()).collect();
        order.sort_by_key(|&i| self.ids[i]);
        FeatureTable {
            ids: order.iter().map(|&i| self.ids[i]).collect(),
            rows: self.rows.select(ndarray::Axis(0), &order),
            groups: order.iter().map(|&i| self.groups[i]).collect(),
        }
    }
}

/// Precomputed eigenbasis of the total scatter, which no relabelling changes.
///
/// With total scatter `T`, pooled covariance is
/// `S = (T − c ddᵀ) / (n − 2)` where `c = n₁n₂/n` and `d` is the mean
/// difference, so `dᵀ(S + λI)⁻¹d = q / (1 − c q / (n − 2))` with
/// `q = dᵀ((T + (n−2)λI)/(n−2))⁻¹ d` by Sherman–Morrison. Rotating the data
/// into the eigenbasis of `T` makes `q` a weighted sum of squares for any λ.
struct Scatter {
    /// Centred data in the eigenbasis, `n × p`.
    rotated: DMatrix<f64>,
    eigenvalues: DVector<f64>,
    trace: f64,
    n: usize,
}

impl Scatter {
    fn new(table: &FeatureTable) -> Scatter {
        let (n, p) = table.rows.dim();
        let mut x = DMatrix::from_fn(n, p, |i, j| table.rows[[i, j]]);
        let means = x.row_mean();
        for mut row in x.row_iter_mut() {
            row -= &means;
        }
        let t = x.transpose() * &x;
        let trace = t.trace();
        let eig = SymmetricEigen::new(t);
        Scatter { rotated: x * eig.eigenvectors, eigenvalues: eig.eigenvalues, trace, n }
    }

    fn t2(&self, groups: &[usize]) -> f64 {
        let p = self.eigenvalues.len();
        let (mut s0, mut s1) = (DVector::zeros(p), DVector::zeros(p));
        let mut n1 = 0usize;
        for (row, &g) in self.rotated.row_iter().zip(groups) {
            if g == 1 {
                s1 += row.transpose();
                n1 += 1;
            } else {
                s0 += row.transpose();
            }
        }
        let n0 = self.n - n1;
        let d = s0 / n0 as f64 - s1 / n1 as f64;
        let c = (n0 * n1) as f64 / self.n as f64;
        let dof = (self.n - 2) as f64;
        let pooled_trace = (self.trace - c * d.norm_squared()) / dof;
        let lambda = 1e-6 * pooled_trace / p as f64;
        let q: f64 = d
            .iter()
            .zip(self.eigenvalues.iter())
            .map(|(di, ev)| di * di * dof / (ev.max(0.0) + dof * lambda))
            .sum();
        let denom = 1.0 - c * q / dof;
        if !(denom > 0.0) || !(lambda > 0.0) {
            return if d.norm_squared() == 0.0 { 0.0 } else { f64::INFINITY };
        }
        c * q / denom
    }
}

/// `t² = c (x̄₁ − x̄₂)ᵀ (S_pooled + λI)⁻¹ (x̄₁ − x̄₂)` with
/// `c = n₁n₂/(n₁+n₂)` and ridge `λ = 10⁻⁶ tr(S_pooled)/p`.
pub fn hotelling_t2(table: &FeatureTable) -> f64 {
    Scatter::new(table).t2(&table.groups)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PermutationResult {
    pub t2: f64,
    pub p_value: f64,
    pub n_perm: usize,
    pub seed: u64,
    pub exceedances: usize,
    pub null_mean: f64,
    pub null_max: f64,
    pub significant: bool,
}

pub const SIGNIFICANCE: f64 = 0.05;

/// `p = #{t²ᵢ > t²} / n_perm` over group-size-preserving relabellings.
/// Rows are sorted by subject id first and replica `i` shuffles with stream
/// `i` of the seed, so the result ignores the input row order.
pub fn permutation_test(table: &FeatureTable, n_perm: usize, seed: u64) -> Result<PermutationResult> {
    if n_perm == 0 {
        return Err(Error::InsufficientPermutations);
    }
    let table = table.sorted();
    let scatter = Scatter::new(&table);
    let t2 = scatter.t2(&table.groups);
    let mut labels = table.groups.clone();
    let (mut exceed, mut sum, mut max) = (0usize, 0.0, f64::NEG_INFINITY);
    for replica in 0..n_perm {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(replica as u64);
        labels.copy_from_slice(&table.groups);
        labels.shuffle(&mut rng);
        let t = scatter.t2(&labels);
        exceed += usize::from(t > t2);
        sum += t;
        max = max.max(t);
    }
    let p_value = exceed as f64 / n_perm as f64;
    Ok(PermutationResult {
        t2,
        p_value,
        n_perm,
        seed,
        exceedances: exceed,
        null_mean: sum / n_perm as f64,
        null_max: max,
        significant: p_value < SIGNIFICANCE,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn gaussian_table(n0: usize, n1: usize, p: usize, shift: f64, seed: u64) -> FeatureTable {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let groups: Vec<usize> = (0..n0 + n1).map(|i| usize::from(i >= n0)).collect();
        let rows = Array::from_shape_fn((n0 + n1, p), |(i, j)| {
            let z: f64 = rng.sample(StandardNormal);
            z + if groups[i] == 1 && j == 0 { shift } else { 0.0 }
        });
        FeatureTable::from_rows(rows, groups).unwrap()
    }

    /// Direct formula with an explicit inverse.
    fn t2_direct(t: &FeatureTable) -> f64 {
        let p = t.dims();
        let idx = |g: usize| (0..t.groups.len()).filter(move |&i| t.groups[i] == g).collect::<Vec<_>>();
        let (a, b) = (idx(0), idx(1));
        let mean = |ix: &[usize]| DVector::from_fn(p, |j, _| ix.iter().map(|&i| t.rows[[i, j]]).sum::<f64>() / ix.len() as f64);
        let (ma, mb) = (mean(&a), mean(&b));
        let mut s = DMatrix::zeros(p, p);
        for (ix, m) in [(&a, &ma), (&b, &mb)] {
            for &i in ix.iter() {
                let v = DVector::from_fn(p, |j, _| t.rows[[i, j]]) - m;
                s += &v * v.transpose();
            }
        }
        let n = (a.len() + b.len()) as f64;
        s /= n - 2.0;
        let lambda = 1e-6 * s.trace() / p as f64;
        let d = ma - mb;
        let c = (a.len() * b.len()) as f64 / n;
        c * (d.transpose() * (s + DMatrix::identity(p, p) * lambda).try_inverse().unwrap() * &d)[(0, 0)]
    }

    #[test]
    fn closed_form_matches_direct_inverse() {
        for (p, seed) in [(1, 1), (3, 2), (6, 3)] {
            let t = gaussian_table(9, 7, p, 0.8, seed);
            let (fast, slow) = (hotelling_t2(&t), t2_direct(&t));
            assert!((fast - slow).abs() < 1e-9 * slow.max(1.0), "{fast} vs {slow}");
        }
        // More dimensions than subjects: only the ridge keeps S invertible.
        let t = gaussian_table(5, 5, 20, 1.0, 4);
        let (fast, slow) = (hotelling_t2(&t), t2_direct(&t));
        assert!((fast - slow).abs() < 1e-6 * slow, "{fast} vs {slow}");
    }

    #[test]
    fn scalar_case_is_the_squared_t_statistic() {
        let t = gaussian_table(12, 15, 1, 0.5, 8);
        let col: Vec<f64> = t.rows.column(0).to_vec();
        let part = |g: usize| col.iter().zip(&t.groups).filter(|(_, &x)| x == g).map(|(v, _)| *v).collect::<Vec<_>>();
        let (a, b) = (part(0), part(1));
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let ss = |v: &[f64]| {
            let m = mean(v);
            v.iter().map(|x| (x - m).powi(2)).sum::<f64>()
        };
        let (na, nb) = (a.len() as f64, b.len() as f64);
        let sp2 = (ss(&a) + ss(&b)) / (na + nb - 2.0);
        let tstat = (mean(&a) - mean(&b)) / (sp2 * (1.0 / na + 1.0 / nb)).sqrt();
        // Ridge λ = 10⁻⁶ s² inflates the denominator by 1 + 10⁻⁶.
        assert!((hotelling_t2(&t) * (1.0 + 1e-6) - tstat * tstat).abs() < 1e-9 * tstat * tstat);
    }

    #[test]
    fn symmetry_and_equal_means() {
        let t = gaussian_table(6, 8, 3, 1.0, 5);
        let swapped = FeatureTable::new(t.ids.clone(), t.rows.clone(), t.groups.iter().map(|g| 1 - g).collect()).unwrap();
        assert!((hotelling_t2(&t) - hotelling_t2(&swapped)).abs() < 1e-9 * hotelling_t2(&t));
        let rows = Array2::from_shape_vec((4, 2), vec![1.0, 2.0, 3.0, 4.0, 3.0, 4.0, 1.0, 2.0]).unwrap();
        assert!(hotelling_t2(&FeatureTable::from_rows(rows, vec![0, 0, 1, 1]).unwrap()) < 1e-20);
        assert!(matches!(
            FeatureTable::from_rows(Array2::zeros((3, 1)), vec![0, 1, 1]),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn exhaustive_small_sample_matches_and_row_order_is_irrelevant() {
        let rows = Array2::from_shape_vec((8, 1), vec![0.0, 0.9, 0.2, 1.4, 1.0, 1.7, 0.6, 2.2]).unwrap();
        let t = FeatureTable::from_rows(rows, vec![0, 0, 0, 0, 1, 1, 1, 1]).unwrap();
        let observed = hotelling_t2(&t);
        // Exhaustive null over all C(8,4) = 70 splits.
        let mut exceed = 0;
        for mask in 0u32..256 {
            if mask.count_ones() == 4 {
                let labels: Vec<usize> = (0..8).map(|i| ((mask >> i) & 1) as usize).collect();
                let relabelled = FeatureTable::from_rows(t.rows.clone(), labels).unwrap();
                exceed += usize::from(hotelling_t2(&relabelled) > observed);
            }
        }
        let exact = exceed as f64 / 70.0;
        let res = permutation_test(&t, 20000, 1).unwrap();
        let se = (exact * (1.0 - exact) / 20000.0).sqrt();
        assert!((res.p_value - exact).abs() < 4.0 * se + 1e-12, "{} vs {exact}", res.p_value);
        let shuffled_order = [3usize, 7, 0, 5, 1, 6, 2, 4];
        let t2 = FeatureTable::new(
            shuffled_order.iter().map(|&i| t.ids[i]).collect(),
            t.rows.select(ndarray::Axis(0), &shuffled_order),
            shuffled_order.iter().map(|&i| t.groups[i]).collect(),
        )
        .unwrap();
        let g = gaussian_table(10, 10, 2, 0.3, 2);
        let perm: Vec<usize> = (0..20).rev().collect();
        let g2 = FeatureTable::new(
            perm.iter().map(|&i| g.ids[i]).collect(),
            g.rows.select(ndarray::Axis(0), &perm),
            perm.iter().map(|&i| g.groups[i]).collect(),
        )
        .unwrap();
        let (a, b) = (permutation_test(&g, 500, 3).unwrap(), permutation_test(&g2, 500, 3).unwrap());
        assert_eq!(a.p_value.to_bits(), b.p_value.to_bits());
        assert_eq!(permutation_test(&t2, 100, 1).unwrap().t2, res.t2);
        assert!(matches!(permutation_test(&t, 0, 1), Err(Error::InsufficientPermutations)));
    }

    #[test]
    fn separated_groups_are_significant() {
        let t = gaussian_table(20, 20, 2, 4.0, 6);
        let res = permutation_test(&t, 5000, 0).unwrap();
        assert!(res.p_value < 0.001 && res.significant);
    }
}
