//! Principal-subspace approximation with the power method, plus the
//! orthonormal block bases the clipping and noise machinery is built on.
//!
//! The basis generator mirrors how one would use a handful of public samples
//! to pick clipping subspaces: repeatedly extract an approximate top-r
//! eigenspace of the sample Gram matrix, deflate, and finally complete the
//! collected columns to a full orthonormal basis.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::{Error, Result};

/// Orthonormality tolerance enforced on every constructed basis.
pub const ORTHO_TOL: f64 = 1e-10;

/// Pivot threshold below which a Gram–Schmidt column counts as dependent.
const PIVOT_TOL: f64 = 1e-12;

/// A d×d orthonormal matrix whose columns are grouped into contiguous blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct OrthoBasis {
    columns: DMatrix<f64>,
    block_ranks: Vec<usize>,
}

impl OrthoBasis {
    /// Wraps a matrix after checking orthonormality and block consistency.
    pub fn new(columns: DMatrix<f64>, block_ranks: Vec<usize>) -> Result<Self> {
        let d = columns.nrows();
        if columns.ncols() != d {
            return Err(Error::validation(format!(
                "basis must be square, got {}x{}",
                columns.nrows(),
                columns.ncols()
            )));
        }
        if block_ranks.contains(&0) {
            return Err(Error::validation("block ranks must be positive"));
        }
        let total: usize = block_ranks.iter().sum();
        if total != d {
            return Err(Error::validation(format!(
                "block ranks sum to {total}, expected {d}"
            )));
        }
        let gram = columns.transpose() * &columns;
        for i in 0..d {
            for j in 0..d {
                let expect = if i == j { 1.0 } else { 0.0 };
                if (gram[(i, j)] - expect).abs() > ORTHO_TOL {
                    return Err(Error::validation(format!(
                        "columns {i},{j} not orthonormal: gram entry {}",
                        gram[(i, j)]
                    )));
                }
            }
        }
        Ok(OrthoBasis {
            columns,
            block_ranks,
        })
    }

    /// The identity basis with the given block partition.
    pub fn identity(d: usize, block_ranks: Vec<usize>) -> Result<Self> {
        OrthoBasis::new(DMatrix::identity(d, d), block_ranks)
    }

    pub fn dim(&self) -> usize {
        self.columns.nrows()
    }

    pub fn block_ranks(&self) -> &[usize] {
        &self.block_ranks
    }

    pub fn columns(&self) -> &DMatrix<f64> {
        &self.columns
    }

    /// Half-open coordinate ranges of each block within the basis ordering.
    pub fn block_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut out = Vec::with_capacity(self.block_ranks.len());
        let mut start = 0;
        for &r in &self.block_ranks {
            out.push(start..start + r);
            start += r;
        }
        out
    }

    /// Coordinates of `v` in this basis: row vector v·U.
    pub fn to_basis(&self, v: &[f64]) -> Result<Vec<f64>> {
        let d = self.dim();
        if v.len() != d {
            return Err(Error::validation(format!(
                "vector length {} does not match basis dimension {d}",
                v.len()
            )));
        }
        let mut out = vec![0.0; d];
        for j in 0..d {
            let mut acc = 0.0;
            for i in 0..d {
                acc += v[i] * self.columns[(i, j)];
            }
            out[j] = acc;
        }
        Ok(out)
    }

    /// Inverse of [`Self::to_basis`]: row vector y·Uᵀ.
    pub fn from_basis(&self, y: &[f64]) -> Result<Vec<f64>> {
        let d = self.dim();
        if y.len() != d {
            return Err(Error::validation(format!(
                "vector length {} does not match basis dimension {d}",
                y.len()
            )));
        }
        let mut out = vec![0.0; d];
        for i in 0..d {
            let mut acc = 0.0;
            for j in 0..d {
                acc += y[j] * self.columns[(i, j)];
            }
            out[i] = acc;
        }
        Ok(out)
    }
}

/// Row-major sample collection: one sample per row, d features.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleMatrix {
    rows: DMatrix<f64>,
}

impl SampleMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::validation("sample matrix has no rows"));
        }
        let d = rows[0].len();
        if d == 0 {
            return Err(Error::validation("sample matrix has zero columns"));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(Error::validation(format!(
                    "row {i} has length {}, expected {d}",
                    row.len()
                )));
            }
            crate::ensure_finite("sample", row)?;
        }
        let n = rows.len();
        let data = DMatrix::from_fn(n, d, |i, j| rows[i][j]);
        Ok(SampleMatrix { rows: data })
    }

    pub fn n_samples(&self) -> usize {
        self.rows.nrows()
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.rows.row(i).iter().copied().collect()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.rows
    }

    /// Transposed view d×n, the column-of-samples layout the power method
    /// operates on.
    pub fn transposed(&self) -> DMatrix<f64> {
        self.rows.transpose()
    }
}

fn random_unit_column<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(d, 1, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Orthonormalizes the columns of `m` in place (modified Gram–Schmidt with a
/// second re-orthogonalization pass). A column whose pivot collapses below
/// 1e-12 is replaced by a fresh random direction orthogonalized against the
/// columns already accepted, so the result always has full column rank.
pub fn gram_schmidt<R: Rng + ?Sized>(m: &DMatrix<f64>, rng: &mut R) -> Result<DMatrix<f64>> {
    let (d, r) = (m.nrows(), m.ncols());
    if r > d {
        return Err(Error::validation(format!(
            "cannot orthonormalize {r} columns in dimension {d}"
        )));
    }
    let mut q = m.clone();
    for j in 0..r {
        let mut attempts = 0;
        loop {
            // Two projection passes keep orthogonality near machine precision.
            for _pass in 0..2 {
                for k in 0..j {
                    let proj = q.column(k).dot(&q.column(j));
                    let col_k = q.column(k).into_owned();
                    let mut col_j = q.column_mut(j);
                    col_j.axpy(-proj, &col_k, 1.0);
                }
            }
            let norm = q.column(j).norm();
            if norm > PIVOT_TOL {
                let mut col_j = q.column_mut(j);
                col_j /= norm;
                break;
            }
            attempts += 1;
            if attempts > 64 {
                return Err(Error::numeric(
                    "gram_schmidt: could not find an independent direction",
                ));
            }
            q.set_column(j, &random_unit_column(d, rng).column(0));
        }
    }
    Ok(q)
}

/// Power iteration for the top-r eigenspace of M·Mᵀ: t rounds of
/// U ← (M Mᵀ) U followed by re-orthonormalization.
pub fn approx_eigen<R: Rng + ?Sized>(
    m: &DMatrix<f64>,
    r: usize,
    t: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let (d, k) = (m.nrows(), m.ncols());
    if r == 0 {
        return Err(Error::validation("requested rank must be positive"));
    }
    if r > d.min(k) {
        return Err(Error::validation(format!(
            "requested rank {r} exceeds min(d={d}, k={k})"
        )));
    }
    if t == 0 {
        return Err(Error::validation("power iteration count must be positive"));
    }
    let mut u = DMatrix::from_fn(d, r, |_, _| rng.sample::<f64, _>(StandardNormal));
    u = gram_schmidt(&u, rng)?;
    for _ in 0..t {
        let mt_u = m.transpose() * &u; // k×r
        u = m * mt_u; // d×r, avoids forming the d×d Gram matrix
        u = gram_schmidt(&u, rng)?;
    }
    Ok(u)
}

/// Iterative principal-space extraction: for each requested rank, run
/// [`approx_eigen`] on the deflated sample matrix, subtract the captured
/// component, and finally complete the accumulated columns to a full
/// orthonormal basis. The trailing block takes rank d − Σrᵢ.
pub fn generate_basis<R: Rng + ?Sized>(
    public: &SampleMatrix,
    ranks: &[usize],
    t: usize,
    rng: &mut R,
) -> Result<OrthoBasis> {
    let d = public.dim();
    let leading: usize = ranks.iter().sum();
    if leading > d {
        return Err(Error::validation(format!(
            "requested ranks sum to {leading} > dimension {d}"
        )));
    }
    if ranks.contains(&0) {
        return Err(Error::validation("subspace ranks must be positive"));
    }

    let mut deflated = public.transposed(); // d×k
    let mut accumulated = DMatrix::<f64>::zeros(d, 0);
    for &r in ranks {
        let u_i = approx_eigen(&deflated, r, t, rng)?;
        deflated -= &u_i * (u_i.transpose() * &deflated);
        let mut grown = DMatrix::zeros(d, accumulated.ncols() + r);
        grown
            .columns_mut(0, accumulated.ncols())
            .copy_from(&accumulated);
        grown.columns_mut(accumulated.ncols(), r).copy_from(&u_i);
        accumulated = grown;
    }

    // Complete with random directions orthogonalized against everything so far.
    let mut full = DMatrix::zeros(d, d);
    full.columns_mut(0, leading).copy_from(&accumulated);
    for j in leading..d {
        full.set_column(j, &random_unit_column(d, rng).column(0));
    }
    let full = gram_schmidt(&full, rng)?;

    let mut block_ranks = ranks.to_vec();
    if d > leading {
        block_ranks.push(d - leading);
    }
    OrthoBasis::new(full, block_ranks)
}

/// [`generate_basis`] with a self-contained seeded generator, for callers
/// that track reproducibility through plain integer seeds.
pub fn generate_basis_seeded(
    public: &SampleMatrix,
    ranks: &[usize],
    t: usize,
    seed: u64,
) -> Result<OrthoBasis> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    generate_basis(public, ranks, t, &mut rng)
}

/// Per-block projection statistics of a sample set.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BlockStats {
    pub rank: usize,
    /// Mean over samples of the block-projection ℓ2 norm.
    pub mean_l2: f64,
    /// Standard deviation (population) of the block-projection ℓ2 norm.
    pub std_l2: f64,
    /// Mean over samples of the block-projection ℓ∞ norm.
    pub mean_linf: f64,
}

/// Projects every sample into the basis and summarizes each block's norms;
/// these statistics drive the choice of per-block clipping thresholds.
pub fn subspace_stats(samples: &SampleMatrix, basis: &OrthoBasis) -> Result<Vec<BlockStats>> {
    if samples.dim() != basis.dim() {
        return Err(Error::validation(format!(
            "sample dimension {} does not match basis dimension {}",
            samples.dim(),
            basis.dim()
        )));
    }
    let n = samples.n_samples();
    let ranges = basis.block_ranges();
    let mut sum = vec![0.0; ranges.len()];
    let mut sum_sq = vec![0.0; ranges.len()];
    let mut sum_linf = vec![0.0; ranges.len()];
    for i in 0..n {
        let coords = basis.to_basis(&samples.row(i))?;
        for (b, range) in ranges.iter().enumerate() {
            let seg = &coords[range.clone()];
            let l2 = seg.iter().map(|x| x * x).sum::<f64>().sqrt();
            let linf = seg.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
            sum[b] += l2;
            sum_sq[b] += l2 * l2;
            sum_linf[b] += linf;
        }
    }
    let nf = n as f64;
    Ok(ranges
        .iter()
        .enumerate()
        .map(|(b, range)| {
            let mean = sum[b] / nf;
            let var = (sum_sq[b] / nf - mean * mean).max(0.0);
            BlockStats {
                rank: range.len(),
                mean_l2: mean,
                std_l2: var.sqrt(),
                mean_linf: sum_linf[b] / nf,
            }
        })
        .collect())
}

/// Largest principal angle (radians) between the column spans of two
/// orthonormal matrices; the exact-eigendecomposition convergence oracle
/// in the tests is phrased through this.
pub fn principal_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    if a.nrows() != b.nrows() || a.ncols() != b.ncols() {
        return Err(Error::validation("subspace dimensions differ"));
    }
    let overlap = a.transpose() * b;
    let svd = overlap.svd(false, false);
    let min_sv = svd
        .singular_values
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    Ok(min_sv.clamp(-1.0, 1.0).acos())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn max_gram_dev(u: &DMatrix<f64>) -> f64 {
        let g = u.transpose() * u;
        let mut dev = 0.0_f64;
        for i in 0..g.nrows() {
            for j in 0..g.ncols() {
                let expect = if i == j { 1.0 } else { 0.0 };
                dev = dev.max((g[(i, j)] - expect).abs());
            }
        }
        dev
    }

    #[test]
    fn gram_schmidt_identity_unchanged() {
        let m = DMatrix::<f64>::identity(4, 4);
        let q = gram_schmidt(&m, &mut rng(0)).unwrap();
        assert_eq!(q, m);
    }

    #[test]
    fn gram_schmidt_classic_2d() {
        // Columns (1,0) and (1,1) orthonormalize to the identity.
        let m = DMatrix::from_column_slice(2, 2, &[1.0, 0.0, 1.0, 1.0]);
        let q = gram_schmidt(&m, &mut rng(0)).unwrap();
        assert!((q[(0, 0)] - 1.0).abs() < 1e-14);
        assert!(q[(1, 0)].abs() < 1e-14);
        assert!(q[(0, 1)].abs() < 1e-14);
        assert!((q[(1, 1)] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn gram_schmidt_random_8x3_orthonormal() {
        let mut r = rng(7);
        let m = DMatrix::from_fn(8, 3, |_, _| r.sample::<f64, _>(StandardNormal));
        let q = gram_schmidt(&m, &mut r).unwrap();
        assert!(max_gram_dev(&q) < 1e-10);
    }

    #[test]
    fn gram_schmidt_recovers_from_rank_deficiency() {
        // Second column is a multiple of the first; a random replacement must
        // still produce a full orthonormal set.
        let m = DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 2.0, 0.0, 0.0]);
        let q = gram_schmidt(&m, &mut rng(3)).unwrap();
        assert!(max_gram_dev(&q) < 1e-10);
    }

    #[test]
    fn approx_eigen_diagonal_dominant_direction() {
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![4.0, 1.0, 0.25]));
        let u = approx_eigen(&m, 1, 30, &mut rng(1)).unwrap();
        let e1 = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0]);
        assert!(principal_angle(&u, &e1).unwrap() < 1e-6);
    }

    #[test]
    fn approx_eigen_rank2_residual() {
        // Rank-2 matrix: the extracted 2-space must capture it to round-off.
        let mut r = rng(5);
        let a = DMatrix::from_fn(6, 2, |_, _| r.sample::<f64, _>(StandardNormal));
        let b = DMatrix::from_fn(2, 9, |_, _| r.sample::<f64, _>(StandardNormal));
        let m = a * b;
        let u = approx_eigen(&m, 2, 50, &mut r).unwrap();
        let residual = &m - &u * (u.transpose() * &m);
        assert!(residual.norm() / m.norm() < 1e-8);
    }

    #[test]
    fn approx_eigen_one_round_already_helps() {
        let mut r = rng(11);
        let a = DMatrix::from_fn(8, 2, |_, _| r.sample::<f64, _>(StandardNormal));
        let b = DMatrix::from_fn(2, 12, |_, _| r.sample::<f64, _>(StandardNormal));
        let m = (a * b).scale(4.0)
            + DMatrix::from_fn(8, 12, |_, _| 0.05 * r.sample::<f64, _>(StandardNormal));

        assert!(approx_eigen(&m, 2, 0, &mut rng(0)).is_err());

        let rand_u = gram_schmidt(
            &DMatrix::from_fn(8, 2, |_, _| rng(21).sample::<f64, _>(StandardNormal)),
            &mut rng(22),
        )
        .unwrap();
        let res = |u: &DMatrix<f64>| (&m - u * (u.transpose() * &m)).norm() / m.norm();
        let one_round = approx_eigen(&m, 2, 1, &mut rng(23)).unwrap();
        assert!(res(&one_round) < res(&rand_u));
    }

    #[test]
    fn approx_eigen_rejects_oversized_rank() {
        let m = DMatrix::<f64>::identity(3, 3);
        assert!(approx_eigen(&m, 4, 5, &mut rng(0)).is_err());
    }

    #[test]
    fn generate_basis_empty_ranks_single_block() {
        let samples =
            SampleMatrix::from_rows(vec![vec![1.0, 2.0, 3.0], vec![0.5, -1.0, 2.0]]).unwrap();
        let basis = generate_basis(&samples, &[], 10, &mut rng(2)).unwrap();
        assert_eq!(basis.block_ranks(), &[3]);
        assert!(max_gram_dev(basis.columns()) < 1e-10);
    }

    #[test]
    fn generate_basis_captures_planted_plane() {
        // Samples live exactly in a 2-D plane of R^5.
        let mut r = rng(9);
        let u1 = [1.0, 0.0, 1.0, 0.0, 1.0].map(|x| x / 3.0_f64.sqrt());
        let u2 = [0.0, 1.0, 0.0, -1.0, 0.0].map(|x| x / 2.0_f64.sqrt());
        let rows: Vec<Vec<f64>> = (0..12)
            .map(|_| {
                let (a, b): (f64, f64) = (
                    r.sample::<f64, _>(StandardNormal),
                    r.sample::<f64, _>(StandardNormal),
                );
                (0..5).map(|i| a * u1[i] + b * u2[i]).collect()
            })
            .collect();
        let samples = SampleMatrix::from_rows(rows).unwrap();
        let basis = generate_basis(&samples, &[2], 50, &mut r).unwrap();
        assert_eq!(basis.block_ranks(), &[2, 3]);

        let plane = DMatrix::from_fn(5, 2, |i, j| if j == 0 { u1[i] } else { u2[i] });
        let lead = basis.columns().columns(0, 2).into_owned();
        assert!(principal_angle(&plane, &lead).unwrap() < 1e-6);

        // Deflation: the trailing block carries none of the sample mass.
        let stats = subspace_stats(&samples, &basis).unwrap();
        assert!(stats[1].mean_l2 < 1e-8);
    }

    #[test]
    fn generate_basis_rejects_oversized_ranks() {
        let samples = SampleMatrix::from_rows(vec![vec![1.0, 2.0]]).unwrap();
        assert!(generate_basis(&samples, &[3], 5, &mut rng(0)).is_err());
    }

    #[test]
    fn subspace_stats_single_sample() {
        let samples = SampleMatrix::from_rows(vec![vec![3.0, 4.0]]).unwrap();
        let basis = OrthoBasis::identity(2, vec![2]).unwrap();
        let stats = subspace_stats(&samples, &basis).unwrap();
        assert!((stats[0].mean_l2 - 5.0).abs() < 1e-12);
        assert!(stats[0].std_l2.abs() < 1e-12);
        assert!((stats[0].mean_linf - 4.0).abs() < 1e-12);
    }

    #[test]
    fn subspace_stats_block_supported_on_first() {
        let samples =
            SampleMatrix::from_rows(vec![vec![1.0, 2.0, 0.0, 0.0], vec![-1.0, 0.5, 0.0, 0.0]])
                .unwrap();
        let basis = OrthoBasis::identity(4, vec![2, 2]).unwrap();
        let stats = subspace_stats(&samples, &basis).unwrap();
        assert!(stats[0].mean_l2 > 0.0);
        assert_eq!(stats[1].mean_l2, 0.0);
    }

    #[test]
    fn subspace_stats_gaussian_norm_concentration() {
        let d = 100;
        let mut r = rng(13);
        let rows: Vec<Vec<f64>> = (0..200)
            .map(|_| (0..d).map(|_| r.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let samples = SampleMatrix::from_rows(rows).unwrap();
        let basis = OrthoBasis::identity(d, vec![d]).unwrap();
        let stats = subspace_stats(&samples, &basis).unwrap();
        // Chi distribution with 100 degrees of freedom concentrates near 10.
        assert!((stats[0].mean_l2 - 10.0).abs() / 10.0 < 0.05);
    }

    #[test]
    fn basis_round_trip_rotation() {
        let mut r = rng(17);
        let m = DMatrix::from_fn(4, 4, |_, _| r.sample::<f64, _>(StandardNormal));
        let q = gram_schmidt(&m, &mut r).unwrap();
        let basis = OrthoBasis::new(q, vec![1, 3]).unwrap();
        let v = [0.3, -1.2, 2.0, 0.7];
        let back = basis.from_basis(&basis.to_basis(&v).unwrap()).unwrap();
        for i in 0..4 {
            assert!((back[i] - v[i]).abs() < 1e-12);
        }
    }
}
