//! Shrinkage metrics `M = tau I + (1 - tau) X'X / n` and the column-space
//! projector used for rank-deficient mode-B blocks.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::dataset::Block;
use crate::error::{Error, Result};

/// Relative eigenvalue cutoff below which a direction counts as null.
pub const DEFAULT_RANK_TOLERANCE: f64 = 1e-10;

/// Per-block choice of metric.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    /// `tau = 1`: unit-norm weights.
    A,
    /// `tau = 0`: unit-variance components.
    B,
    /// `0 < tau < 1`.
    Shrink(f64),
}

impl Mode {
    pub fn tau(self) -> f64 {
        match self {
            Mode::A => 1.0,
            Mode::B => 0.0,
            Mode::Shrink(t) => t,
        }
    }

    /// Maps 1 and 0 to the named modes, anything else to `Shrink`.
    pub fn from_tau(tau: f64) -> Result<Self> {
        check_tau(tau)?;
        Ok(if tau == 1.0 {
            Mode::A
        } else if tau == 0.0 {
            Mode::B
        } else {
            Mode::Shrink(tau)
        })
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if (0.0..=1.0).contains(&tau) {
        Ok(())
    } else {
        Err(Error::Argument(format!(
            "shrinkage constant must lie in [0, 1], got {tau}"
        )))
    }
}

/// Metric settings for every block plus the superblock.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeSelector {
    pub blocks: Vec<Mode>,
    pub superblock: Mode,
}

impl ModeSelector {
    pub fn uniform(n_blocks: usize, block: Mode, superblock: Mode) -> Self {
        Self {
            blocks: vec![block; n_blocks],
            superblock,
        }
    }

    pub fn from_taus(blocks: &[f64], superblock: f64) -> Result<Self> {
        Ok(Self {
            blocks: blocks.iter().map(|&t| Mode::from_tau(t)).collect::<Result<_>>()?,
            superblock: Mode::from_tau(superblock)?,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.blocks
            .iter()
            .chain(std::iter::once(&self.superblock))
            .try_for_each(|m| check_tau(m.tau()))
    }
}

/// `M`, its eigendecomposition, `M^{-1}` and `M^{-1/2}`.
///
/// At `tau = 0` with a rank-deficient block the inverses are Moore-Penrose
/// pseudo-inverses on the range of `M`.
#[derive(Debug, Clone)]
pub struct ShrinkageMetric {
    tau: f64,
    matrix: DMatrix<f64>,
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
    inv: DMatrix<f64>,
    inv_sqrt: DMatrix<f64>,
    rank_tolerance: f64,
    rank: usize,
    warnings: Vec<String>,
}

/// Builds the metric of `x` (an `n x J` centered matrix labelled `label`).
pub fn build_metric(x: &DMatrix<f64>, label: &str, tau: f64, rank_tolerance: f64) -> Result<ShrinkageMetric> {
    check_tau(tau)?;
    if !(rank_tolerance >= 0.0) {
        return Err(Error::Argument(format!(
            "rank tolerance must be non-negative, got {rank_tolerance}"
        )));
    }
    let (n, p) = x.shape();
    if tau == 1.0 {
        let eye = DMatrix::identity(p, p);
        return Ok(ShrinkageMetric {
            tau,
            matrix: eye.clone(),
            eigenvalues: DVector::from_element(p, 1.0),
            eigenvectors: eye.clone(),
            inv: eye.clone(),
            inv_sqrt: eye,
            rank_tolerance,
            rank: p,
            warnings: Vec::new(),
        });
    }

    let cov = x.tr_mul(x) / n as f64;
    let mut m = cov * (1.0 - tau);
    for i in 0..p {
        m[(i, i)] += tau;
    }
    let m = (&m + m.transpose()) * 0.5;
    let (eigenvalues, eigenvectors) = sorted_eigen(m.clone());
    let top = eigenvalues[0].max(0.0);
    if top == 0.0 {
        return Err(Error::Argument(format!(
            "`{label}` is identically zero; mode B needs a non-null block"
        )));
    }
    let cutoff = rank_tolerance * top;
    let rank = eigenvalues.iter().filter(|&&l| l > cutoff).count();

    let mut warnings = Vec::new();
    if tau == 0.0 {
        if rank >= n {
            return Err(Error::ModeBInfeasible {
                block: label.to_string(),
                rank,
                n,
            });
        }
        if rank < p {
            warnings.push(format!(
                "`{label}` is rank-deficient (rank {rank} < {p} columns); \
                 mode B uses the Moore-Penrose inverse"
            ));
        }
    }

    let inv = spectral_function(&eigenvalues, &eigenvectors, cutoff, |l| 1.0 / l);
    let inv_sqrt = spectral_function(&eigenvalues, &eigenvectors, cutoff, |l| 1.0 / l.sqrt());
    Ok(ShrinkageMetric {
        tau,
        matrix: m,
        eigenvalues,
        eigenvectors,
        inv,
        inv_sqrt,
        rank_tolerance,
        rank,
        warnings,
    })
}

/// Symmetric eigendecomposition with eigenvalues sorted in descending order.
pub(crate) fn sorted_eigen(m: DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(order.len(), order.iter().map(|&i| eig.eigenvalues[i]));
    let vectors = DMatrix::from_columns(
        &order
            .iter()
            .map(|&i| eig.eigenvectors.column(i).into_owned())
            .collect::<Vec<_>>(),
    );
    (values, vectors)
}

fn spectral_function(
    values: &DVector<f64>,
    vectors: &DMatrix<f64>,
    cutoff: f64,
    f: impl Fn(f64) -> f64,
) -> DMatrix<f64> {
    let p = values.len();
    let mut out = DMatrix::zeros(p, p);
    for (k, &l) in values.iter().enumerate() {
        if l > cutoff {
            let u = vectors.column(k);
            out.ger(f(l), &u, &u, 1.0);
        }
    }
    out
}

impl ShrinkageMetric {
    /// Like [`build_metric`], and warns when mode B is saturated: a centered
    /// block of rank `n - 1` contains every centered vector, so its component
    /// can match any target exactly.
    pub fn for_block(block: &Block, tau: f64, rank_tolerance: f64) -> Result<Self> {
        let mut metric = build_metric(block.matrix(), block.id(), tau, rank_tolerance)?;
        if tau == 0.0 && metric.rank + 1 == block.n() {
            metric.warnings.push(format!(
                "`{}` spans every centered vector (rank {} with n = {}); its mode B \
                 correlation is 1 by construction, consider tau > 0",
                block.id(),
                metric.rank,
                block.n()
            ));
        }
        Ok(metric)
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    pub fn inv(&self) -> &DMatrix<f64> {
        &self.inv
    }

    pub fn inv_sqrt(&self) -> &DMatrix<f64> {
        &self.inv_sqrt
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn rank_tolerance(&self) -> f64 {
        self.rank_tolerance
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// True when the inverses are pseudo-inverses.
    pub fn is_pseudo(&self) -> bool {
        self.rank < self.dim()
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// `M^{-1/2} W`; null-space components are annihilated.
    pub fn inv_sqrt_apply(&self, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if w.nrows() != self.dim() {
            return Err(Error::Dimension(format!(
                "metric is {0}x{0} but the operand has {1} rows",
                self.dim(),
                w.nrows()
            )));
        }
        Ok(&self.inv_sqrt * w)
    }

    /// `w' M w`.
    pub fn quadratic_form(&self, w: &DVector<f64>) -> f64 {
        w.dot(&(&self.matrix * w))
    }
}

/// Orthogonal projector `X (X'X)^+ X'` onto the column space of `X`, kept
/// in factored form `U U'`.
#[derive(Debug, Clone)]
pub struct Projector {
    basis: DMatrix<f64>,
}

impl Projector {
    /// Projector onto the column space of any matrix.
    pub fn new(x: &DMatrix<f64>, rank_tolerance: f64) -> Self {
        let n = x.nrows();
        let svd = x.clone().svd(true, false);
        let u = svd.u.expect("left singular vectors requested");
        let top = svd.singular_values.max();
        let cutoff = rank_tolerance * top * top;
        let keep: Vec<_> = (0..svd.singular_values.len())
            .filter(|&k| {
                let s = svd.singular_values[k];
                top > 0.0 && s * s > cutoff
            })
            .map(|k| u.column(k).into_owned())
            .collect();
        let basis = if keep.is_empty() {
            DMatrix::zeros(n, 0)
        } else {
            DMatrix::from_columns(&keep)
        };
        Self { basis }
    }

    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    pub fn apply(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.basis * self.basis.tr_mul(y)
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        &self.basis * self.basis.transpose()
    }
}

/// Column-space projector of a block, for mode B on rank-deficient blocks.
///
/// Rejects blocks whose rank equals `n`: every vector is then in the block
/// space and mode B is meaningless.
pub fn projection_operator(block: &Block, rank_tolerance: f64) -> Result<Projector> {
    let p = Projector::new(block.matrix(), rank_tolerance);
    if p.rank() >= block.n() {
        return Err(Error::ModeBInfeasible {
            block: block.id().to_string(),
            rank: p.rank(),
            n: block.n(),
        });
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Scaling;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
        let raw = DMatrix::from_fn(n, p, |_, _| rng.random_range(-1.0..1.0));
        Block::from_raw("r", raw, None, Scaling::None)
            .unwrap()
            .matrix()
            .clone()
    }

    #[test]
    fn mode_a_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_matrix(&mut rng, 6, 3);
        let m = build_metric(&x, "x", 1.0, DEFAULT_RANK_TOLERANCE).unwrap();
        let eye = DMatrix::<f64>::identity(3, 3);
        assert_eq!(m.matrix(), &eye);
        assert_eq!(m.inv(), &eye);
        assert_eq!(m.inv_sqrt(), &eye);
    }

    #[test]
    fn scalar_examples() {
        let x = DMatrix::from_column_slice(2, 1, &[1.0, -1.0]);
        let b = build_metric(&x, "x", 0.0, DEFAULT_RANK_TOLERANCE).unwrap();
        assert_relative_eq!(b.matrix()[(0, 0)], 1.0);
        assert_relative_eq!(b.inv()[(0, 0)], 1.0);
        let s = build_metric(&x, "x", 0.5, DEFAULT_RANK_TOLERANCE).unwrap();
        assert_relative_eq!(s.matrix()[(0, 0)], 1.0);
    }

    #[test]
    fn tau_out_of_range() {
        let x = DMatrix::from_column_slice(2, 1, &[1.0, -1.0]);
        for tau in [-0.1, 1.5, f64::NAN] {
            assert!(matches!(
                build_metric(&x, "x", tau, DEFAULT_RANK_TOLERANCE),
                Err(Error::Argument(_))
            ));
        }
    }

    #[test]
    fn mode_b_rejected_when_rank_equals_n() {
        let x = DMatrix::<f64>::identity(2, 2);
        assert!(matches!(
            build_metric(&x, "x", 0.0, DEFAULT_RANK_TOLERANCE),
            Err(Error::ModeBInfeasible { rank: 2, n: 2, .. })
        ));
        // shrinkage is fine
        assert!(build_metric(&x, "x", 0.2, DEFAULT_RANK_TOLERANCE).is_ok());
    }

    #[test]
    fn inv_sqrt_examples() {
        let m = ShrinkageMetric::diagonal_for_tests(&[4.0, 1.0]);
        let out = m.inv_sqrt_apply(&DMatrix::identity(2, 2)).unwrap();
        assert_relative_eq!(out, DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 1.0])));

        let pseudo = ShrinkageMetric::diagonal_for_tests(&[1.0, 0.0]);
        let out = pseudo
            .inv_sqrt_apply(&DMatrix::from_column_slice(2, 1, &[0.0, 1.0]))
            .unwrap();
        assert_eq!(out.as_slice(), &[0.0, 0.0]);

        assert!(matches!(
            m.inv_sqrt_apply(&DMatrix::zeros(3, 1)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn inverse_square_root_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &(n, p, tau) in &[(10, 4, 0.0), (10, 4, 0.3), (5, 8, 0.3), (12, 3, 0.9)] {
            let x = random_matrix(&mut rng, n, p);
            let m = build_metric(&x, "x", tau, DEFAULT_RANK_TOLERANCE).unwrap();
            let mm = m.matrix();
            assert_relative_eq!(mm.clone(), mm.transpose(), epsilon = 1e-12 * mm.amax());
            if tau > 0.0 {
                assert!(m.eigenvalues().min() >= tau - 1e-10);
                let eye = m.inv_sqrt() * mm * m.inv_sqrt();
                assert_relative_eq!(eye, DMatrix::identity(p, p), epsilon = 1e-8);
            }
            let sq = m.inv_sqrt() * m.inv_sqrt();
            assert_relative_eq!(sq, m.inv().clone(), epsilon = 1e-8 * m.inv().amax());
        }
    }

    #[test]
    fn continuum_endpoints_and_affinity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_matrix(&mut rng, 9, 3);
        let m = |t| {
            build_metric(&x, "x", t, DEFAULT_RANK_TOLERANCE)
                .unwrap()
                .matrix()
                .clone()
        };
        let cov = x.tr_mul(&x) / 9.0;
        assert_relative_eq!(m(0.0), cov.clone(), epsilon = 1e-14);
        assert_eq!(m(1.0), DMatrix::identity(3, 3));
        let mid = (m(0.2) + m(0.6)) * 0.5;
        assert_relative_eq!(mid, m(0.4), epsilon = 1e-12);
    }

    #[test]
    fn rank_deficient_mode_b_uses_pseudo_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let base = random_matrix(&mut rng, 8, 2);
        // third column duplicates the first
        let x = DMatrix::from_columns(&[
            base.column(0).into_owned(),
            base.column(1).into_owned(),
            base.column(0).into_owned(),
        ]);
        let m = build_metric(&x, "x", 0.0, DEFAULT_RANK_TOLERANCE).unwrap();
        assert_eq!(m.rank(), 2);
        assert!(m.is_pseudo());
        assert_eq!(m.warnings().len(), 1);
        // X M^+ X' = n * projector
        let lhs = &x * m.inv() * x.transpose();
        let proj = Projector::new(&x, DEFAULT_RANK_TOLERANCE).matrix() * 8.0;
        assert_relative_eq!(lhs, proj, epsilon = 1e-8);
    }

    #[test]
    fn projector_examples() {
        let eye = DMatrix::<f64>::identity(2, 2);
        assert_relative_eq!(
            Projector::new(&eye, DEFAULT_RANK_TOLERANCE).matrix(),
            eye,
            epsilon = 1e-14
        );

        let x = DMatrix::from_column_slice(2, 1, &[1.0, -1.0]);
        let expected = DMatrix::from_row_slice(2, 2, &[0.5, -0.5, -0.5, 0.5]);
        assert_relative_eq!(
            Projector::new(&x, DEFAULT_RANK_TOLERANCE).matrix(),
            expected,
            epsilon = 1e-14
        );
    }

    #[test]
    fn saturated_mode_b_block_is_flagged() {
        let raw = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 2.0, 0.0, 1.0, 1.0, 4.0, 2.0, 0.0]);
        let b = Block::from_raw("b", raw, None, Scaling::None).unwrap();
        let m = ShrinkageMetric::for_block(&b, 0.0, DEFAULT_RANK_TOLERANCE).unwrap();
        assert!(m.warnings().iter().any(|w| w.contains("every centered vector")));
        let m = ShrinkageMetric::for_block(&b, 0.5, DEFAULT_RANK_TOLERANCE).unwrap();
        assert!(m.warnings().is_empty());
    }

    #[test]
    fn projection_operator_rejects_full_row_rank() {
        let raw = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 2.0, 0.0, 1.0, 1.0, 4.0, 2.0, 0.0]);
        // centered: rank 2 < n = 3, accepted
        let b = Block::from_raw("b", raw, None, Scaling::None).unwrap();
        assert_eq!(projection_operator(&b, DEFAULT_RANK_TOLERANCE).unwrap().rank(), 2);
    }

    #[test]
    fn projector_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &(n, p) in &[(10, 3), (6, 9), (7, 1)] {
            let x = random_matrix(&mut rng, n, p);
            let b = Block::from_raw("b", x.clone(), None, Scaling::None).unwrap();
            let proj = projection_operator(&b, DEFAULT_RANK_TOLERANCE).unwrap();
            let pm = proj.matrix();
            assert_relative_eq!(pm.clone(), pm.transpose(), epsilon = 1e-12);
            assert_relative_eq!(&pm * &pm, pm.clone(), epsilon = 1e-8);
            assert_relative_eq!(&pm * b.matrix(), b.matrix().clone(), epsilon = 1e-8);
            let y = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let once = proj.apply(&y);
            assert_relative_eq!(proj.apply(&once), once, epsilon = 1e-12);
        }
    }

    impl ShrinkageMetric {
        fn diagonal_for_tests(d: &[f64]) -> Self {
            let m = DMatrix::from_diagonal(&DVector::from_row_slice(d));
            let (values, vectors) = sorted_eigen(m.clone());
            let top = values[0];
            let cutoff = DEFAULT_RANK_TOLERANCE * top;
            Self {
                tau: 0.0,
                inv: spectral_function(&values, &vectors, cutoff, |l| 1.0 / l),
                inv_sqrt: spectral_function(&values, &vectors, cutoff, |l| 1.0 / l.sqrt()),
                rank: values.iter().filter(|&&l| l > cutoff).count(),
                matrix: m,
                eigenvalues: values,
                eigenvectors: vectors,
                rank_tolerance: DEFAULT_RANK_TOLERANCE,
                warnings: Vec::new(),
            }
        }
    }
}
