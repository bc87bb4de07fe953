//! The criterion `psi(v) = sum_b |Q_b v|^m` on the unit sphere.
//!
//! With `P_b = X_b M_b^{-1/2}`, the cross-products are kept on covariance
//! scale, `Q_b = P_b' P_{B+1} / n`, so that `|Q_b v|` is directly the
//! covariance between the optimal block component and the superblock
//! component, and `psi` is the multiblock criterion itself.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dataset::BlockSet;
use crate::error::{Error, Result};
use crate::exec::ExecPolicy;
use crate::metrics::{sorted_eigen, ShrinkageMetric};
use crate::solver::sphere::GradientOracle;

/// Blocks are evaluated concurrently only past this many `Q` entries.
const PARALLEL_MIN_ENTRIES: usize = 1 << 14;
/// `|Q_b v|` below this fraction of `|Q_b|_F` counts as zero.
const NULL_TERM_TOL: f64 = 1e-15;

#[derive(Debug, Clone)]
pub struct TransformedProblem {
    p: Vec<DMatrix<f64>>,
    q: Vec<DMatrix<f64>>,
    q_norms: Vec<f64>,
    labels: Vec<String>,
    m: f64,
    epsilon_scale: f64,
    exec: ExecPolicy,
}

fn check_exponent(m: f64) -> Result<()> {
    if m >= 1.0 && m.is_finite() {
        Ok(())
    } else {
        Err(Error::Argument(format!("exponent m must be >= 1, got {m}")))
    }
}

/// Builds `P_b` and `Q_b` from the blocks and the `B + 1` metrics (blocks
/// first, superblock last).
pub fn transform(blockset: &BlockSet, metrics: &[ShrinkageMetric], m: f64) -> Result<TransformedProblem> {
    check_exponent(m)?;
    let nb = blockset.len();
    if metrics.len() != nb + 1 {
        return Err(Error::Dimension(format!(
            "{} metrics for {nb} blocks plus the superblock",
            metrics.len()
        )));
    }
    let n = blockset.n() as f64;
    let mut p = Vec::with_capacity(nb + 1);
    for (b, block) in blockset.blocks().iter().enumerate() {
        p.push(block.matrix() * metrics[b].inv_sqrt());
    }
    p.push(blockset.superblock() * metrics[nb].inv_sqrt());
    let p_super = &p[nb];
    let q: Vec<DMatrix<f64>> = p[..nb].iter().map(|pb| pb.tr_mul(p_super) / n).collect();

    let labels: Vec<String> = blockset.blocks().iter().map(|b| b.id().to_string()).collect();
    for (b, qb) in q.iter().enumerate() {
        let scale = p[b].norm() * p_super.norm() / n;
        if qb.norm() <= 1e-12 * scale || scale == 0.0 {
            return Err(Error::NonContributingBlock {
                block: labels[b].clone(),
            });
        }
    }
    let q_norms = q.iter().map(|qb| qb.norm()).collect();
    Ok(TransformedProblem {
        p,
        q,
        q_norms,
        labels,
        m,
        epsilon_scale: unnormalized_scale(n, m),
        exec: ExecPolicy::Sequential,
    })
}

/// `n^m`, the factor between covariance-scale and raw cross-product `psi`.
fn unnormalized_scale(n: f64, m: f64) -> f64 {
    let s = n.powf(m);
    if s.is_finite() {
        s
    } else {
        f64::MAX
    }
}

/// Starting point selector.
#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    /// Dominant eigenvector of `sum_b Q_b'Q_b`.
    DominantEigenvector,
    /// Uniform draw on the sphere from a seeded generator.
    Random(u64),
    /// A user vector, normalized.
    Given(Vec<f64>),
}

impl TransformedProblem {
    /// A problem given directly by its cross-product matrices.
    pub fn from_q(q: Vec<DMatrix<f64>>, m: f64) -> Result<Self> {
        check_exponent(m)?;
        let Some(first) = q.first() else {
            return Err(Error::Argument("at least one block is required".into()));
        };
        let dim = first.ncols();
        if let Some(bad) = q.iter().find(|qb| qb.ncols() != dim) {
            return Err(Error::Dimension(format!(
                "cross-products have {} and {dim} columns",
                bad.ncols()
            )));
        }
        let labels: Vec<String> = (1..=q.len()).map(|b| format!("block{b}")).collect();
        if let Some(b) = q.iter().position(|qb| qb.norm() == 0.0) {
            return Err(Error::NonContributingBlock {
                block: labels[b].clone(),
            });
        }
        Ok(Self {
            p: Vec::new(),
            q_norms: q.iter().map(|qb| qb.norm()).collect(),
            q,
            labels,
            m,
            epsilon_scale: 1.0,
            exec: ExecPolicy::Sequential,
        })
    }

    /// Measures the stopping tolerance on `n^m psi` instead of `psi`.
    pub fn with_sample_size(mut self, n: usize) -> Self {
        self.epsilon_scale = unnormalized_scale(n as f64, self.m);
        self
    }

    pub fn with_exec(mut self, exec: ExecPolicy) -> Self {
        self.exec = exec;
        self
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Self {
        assert_eq!(labels.len(), self.q.len());
        self.labels = labels;
        self
    }

    pub fn m(&self) -> f64 {
        self.m
    }

    pub fn q(&self) -> &[DMatrix<f64>] {
        &self.q
    }

    /// `P_1, ..., P_B, P_{B+1}`; empty for problems built with `from_q`.
    pub fn p(&self) -> &[DMatrix<f64>] {
        &self.p
    }

    pub fn n_blocks(&self) -> usize {
        self.q.len()
    }

    /// Dimension of the superblock weight vector.
    pub fn dim(&self) -> usize {
        self.q[0].ncols()
    }

    fn check_point(&self, v: &DVector<f64>) -> Result<()> {
        if v.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "vector has {} entries, expected {}",
                v.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    fn block_policy(&self) -> ExecPolicy {
        let entries: usize = self.q.iter().map(|q| q.len()).sum();
        if entries >= PARALLEL_MIN_ENTRIES {
            self.exec
        } else {
            ExecPolicy::Sequential
        }
    }

    /// `Q_b v` for every block, in order.
    pub fn projections(&self, v: &DVector<f64>) -> Result<Vec<DVector<f64>>> {
        self.check_point(v)?;
        Ok(self.block_policy().map(self.q.len(), |b| &self.q[b] * v))
    }

    /// `|Q_b v|`, the covariance of block `b` with the superblock component.
    pub fn covariances(&self, v: &DVector<f64>) -> Result<Vec<f64>> {
        Ok(self.projections(v)?.iter().map(|x| x.norm()).collect())
    }

    /// `psi(v) = sum_b |Q_b v|^m`.
    pub fn criterion(&self, v: &DVector<f64>) -> Result<f64> {
        Ok(self.covariances(v)?.into_iter().map(|c| c.powf(self.m)).sum())
    }

    /// `m sum_b |Q_b v|^{m-2} Q_b'Q_b v`.
    pub fn gradient(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_point(v)?;
        let m = self.m;
        let terms = self.block_policy().try_map(self.q.len(), |b| {
            let qv = &self.q[b] * v;
            let norm = qv.norm();
            if norm <= NULL_TERM_TOL * self.q_norms[b] {
                if m < 2.0 {
                    return Err(Error::SingularGradient {
                        block: self.labels[b].clone(),
                    });
                }
                return Ok(None);
            }
            let weight = if m == 2.0 { 1.0 } else { norm.powf(m - 2.0) };
            Ok(Some(self.q[b].tr_mul(&qv) * (m * weight)))
        })?;
        let mut grad = DVector::zeros(self.dim());
        for t in terms.into_iter().flatten() {
            grad += t;
        }
        Ok(grad)
    }

    /// One step of the fixed-point map, `grad(v) / |grad(v)|`.
    pub fn iterate(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        let g = self.gradient(v)?;
        let norm = g.norm();
        if !(norm > 0.0) {
            return Err(Error::InternalAssertion("zero gradient".into()));
        }
        Ok(g / norm)
    }

    /// `|f(v) - v|`.
    pub fn fixed_point_residual(&self, v: &DVector<f64>) -> Result<f64> {
        Ok((self.iterate(v)? - v).norm())
    }

    /// `sum_b Q_b'Q_b`.
    pub fn gram(&self) -> DMatrix<f64> {
        let d = self.dim();
        self.q
            .iter()
            .fold(DMatrix::zeros(d, d), |acc, qb| acc + qb.tr_mul(qb))
    }

    /// Chooses a starting point with positive criterion. The second value
    /// carries a warning when the dominant eigenvalue is (numerically)
    /// repeated.
    pub fn init_v(&self, init: &Init) -> Result<(DVector<f64>, Option<String>)> {
        match init {
            Init::DominantEigenvector => {
                let (values, vectors) = sorted_eigen(self.gram());
                let v = vectors.column(0).into_owned();
                let warning = (values.len() > 1 && values[0] - values[1] <= 1e-10 * values[0]).then(|| {
                    format!(
                        "dominant eigenvalue of sum Q'Q is repeated ({} vs {}); \
                             the iterate sequence may not converge to a single point",
                        values[0], values[1]
                    )
                });
                if !(self.criterion(&v)? > 0.0) {
                    return Err(Error::BadStart("eigenvector start has zero criterion".into()));
                }
                Ok((v, warning))
            }
            Init::Random(seed) => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                for _ in 0..64 {
                    let v = DVector::from_fn(self.dim(), |_, _| StandardNormal.sample(&mut rng));
                    let norm: f64 = v.norm();
                    if norm == 0.0 {
                        continue;
                    }
                    let v = v / norm;
                    if self.criterion(&v)? > 0.0 {
                        return Ok((v, None));
                    }
                }
                Err(Error::BadStart(format!(
                    "no random start with positive criterion for seed {seed}"
                )))
            }
            Init::Given(values) => {
                let v = DVector::from_column_slice(values);
                self.check_point(&v)?;
                let norm = v.norm();
                if !(norm > 0.0) || !norm.is_finite() {
                    return Err(Error::BadStart("given start vector has zero norm".into()));
                }
                let v = v / norm;
                if !(self.criterion(&v)? > 0.0) {
                    return Err(Error::BadStart("criterion is zero at the given start".into()));
                }
                Ok((v, None))
            }
        }
    }
}

impl GradientOracle for TransformedProblem {
    fn dim(&self) -> usize {
        TransformedProblem::dim(self)
    }

    fn value(&self, v: &DVector<f64>) -> Result<f64> {
        self.criterion(v)
    }

    fn gradient(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        TransformedProblem::gradient(self, v)
    }

    /// Uses `|Q a|^2 - |Q b|^2 = (Q(a - b))'(Q(a + b))` and `expm1`/`ln_1p`
    /// so that small gains near a fixed point keep full relative accuracy.
    /// Both points are taken as directions: by homogeneity the rounding in
    /// their norms cancels exactly instead of leaking into the gain.
    fn increment(&self, from: &DVector<f64>, to: &DVector<f64>) -> Result<f64> {
        self.check_point(from)?;
        self.check_point(to)?;
        let diff = to - from;
        let sum = to + from;
        let from_sq = from.norm_squared();
        let to_sq = to.norm_squared();
        let radial = diff.dot(&sum);
        let half_m = self.m / 2.0;
        let terms = self.block_policy().map(self.q.len(), |b| {
            let q = &self.q[b];
            let old_sq = (q * from).norm_squared();
            if old_sq == 0.0 {
                return ((q * to).norm_squared() / to_sq).powf(half_m);
            }
            let d = (q * &diff).dot(&(q * &sum));
            let ratio = (d * from_sq - old_sq * radial) / (old_sq * to_sq);
            let base = (old_sq / from_sq).powf(half_m);
            if ratio <= -1.0 + 1e-12 {
                return ((q * to).norm_squared() / to_sq).powf(half_m) - base;
            }
            base * (half_m * ratio.ln_1p()).exp_m1()
        });
        Ok(terms.into_iter().sum())
    }

    /// By Cauchy-Schwarz `m psi(v) = v'grad(v) <= |grad(v)|`, and `psi`
    /// only increases along a run.
    fn gradient_floor(&self, psi0: f64) -> Option<f64> {
        Some(self.m * psi0)
    }

    fn epsilon_scale(&self) -> f64 {
        self.epsilon_scale
    }
}
