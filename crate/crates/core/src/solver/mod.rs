//! The regularized consensus PCA solver.
//!
//! [`solve`] builds the metrics, transforms the problem to a criterion on
//! the unit sphere, runs [`sphere_maximize`] from one or more starts and maps
//! the winning superblock weight back to block weights, components,
//! covariances and contributions in the original coordinates.

mod problem;
mod sphere;

pub use problem::{transform, Init, TransformedProblem};
pub use sphere::{
    sphere_maximize, AssertLevel, GradientOracle, SolverTrace, SphereConfig, MONOTONE_TOL, SANDWICH_TOL,
};

use nalgebra::{DMatrix, DVector};

use crate::dataset::BlockSet;
use crate::error::{Error, Result};
use crate::exec::ExecPolicy;
use crate::metrics::{build_metric, ModeSelector, ShrinkageMetric, DEFAULT_RANK_TOLERANCE};

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Exponent applied to each covariance, `m >= 1`.
    pub m: f64,
    /// Threshold on criterion gains.
    pub epsilon: f64,
    pub max_iter: usize,
    /// Start used by the first run; further runs use `Random(seed + k)`.
    pub init: Init,
    pub n_starts: usize,
    pub seed: u64,
    pub assert_level: AssertLevel,
    pub rank_tolerance: f64,
    pub exec: ExecPolicy,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            m: 2.0,
            epsilon: 1e-10,
            max_iter: 10_000,
            init: Init::DominantEigenvector,
            n_starts: 1,
            seed: 0,
            assert_level: AssertLevel::Cheap,
            rank_tolerance: DEFAULT_RANK_TOLERANCE,
            exec: ExecPolicy::default(),
        }
    }
}

impl SolverConfig {
    pub fn with_m(mut self, m: f64) -> Self {
        self.m = m;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.m >= 1.0) || !self.m.is_finite() {
            return Err(Error::Argument(format!(
                "exponent m must be >= 1, got {}",
                self.m
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Argument(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::Argument("max_iter must be at least 1".into()));
        }
        if self.n_starts == 0 {
            return Err(Error::Argument("at least one start is required".into()));
        }
        Ok(())
    }

    fn sphere(&self) -> SphereConfig {
        SphereConfig {
            epsilon: self.epsilon,
            max_iter: self.max_iter,
            assert_level: self.assert_level,
        }
    }

    fn start(&self, k: usize) -> Init {
        match (&self.init, k) {
            (init, 0) => init.clone(),
            (Init::Random(seed), k) => Init::Random(seed.wrapping_add(k as u64)),
            (_, k) => Init::Random(self.seed.wrapping_add(k as u64)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    /// Unit superblock weight in transformed coordinates.
    pub v_super: DVector<f64>,
    pub w_super: DVector<f64>,
    pub y_super: DVector<f64>,
    pub w_blocks: Vec<DVector<f64>>,
    /// Columns are the block components `y_b`.
    pub y_blocks: DMatrix<f64>,
    /// `cov(y_b, y_super)`, non-negative.
    pub covs: Vec<f64>,
    pub contributions: Vec<f64>,
    pub psi_final: f64,
    pub fixed_point_residual: f64,
    pub converged: bool,
    pub m: f64,
    pub trace: SolverTrace,
    /// Which start won.
    pub start_index: usize,
    pub warnings: Vec<String>,
}

impl Solution {
    pub fn y_block(&self, b: usize) -> DVector<f64> {
        self.y_blocks.column(b).into_owned()
    }

    pub fn n_blocks(&self) -> usize {
        self.w_blocks.len()
    }
}

/// Builds the `B + 1` metrics (blocks first, superblock last).
pub fn build_metrics(
    blockset: &BlockSet,
    modes: &ModeSelector,
    rank_tolerance: f64,
    exec: ExecPolicy,
) -> Result<Vec<ShrinkageMetric>> {
    modes.validate()?;
    let nb = blockset.len();
    if modes.blocks.len() != nb {
        return Err(Error::Dimension(format!(
            "{} block modes for {nb} blocks",
            modes.blocks.len()
        )));
    }
    exec.try_map(nb + 1, |b| {
        if b < nb {
            ShrinkageMetric::for_block(blockset.block(b), modes.blocks[b].tau(), rank_tolerance)
        } else {
            build_metric(
                blockset.superblock(),
                "superblock",
                modes.superblock.tau(),
                rank_tolerance,
            )
        }
    })
}

/// Fits one component.
pub fn solve(blockset: &BlockSet, modes: &ModeSelector, config: &SolverConfig) -> Result<Solution> {
    config.validate()?;
    let metrics = build_metrics(blockset, modes, config.rank_tolerance, config.exec)?;
    solve_with_metrics(blockset, &metrics, config)
}

pub fn solve_with_metrics(
    blockset: &BlockSet,
    metrics: &[ShrinkageMetric],
    config: &SolverConfig,
) -> Result<Solution> {
    config.validate()?;
    let problem = transform(blockset, metrics, config.m)?.with_exec(config.exec);
    let (v, mut trace, start_index) = maximize_multistart(&problem, config)?;

    let mut warnings: Vec<String> = metrics.iter().flat_map(|m| m.warnings().to_vec()).collect();
    let super_metric = &metrics[blockset.len()];
    if super_metric.tau() == 0.0 && super_metric.is_pseudo() {
        warnings.push(
            "superblock is rank-deficient under mode B: its weight vector is one least-norm \
             solution among many; interpret the superblock component through correlations"
                .into(),
        );
    }
    warnings.append(&mut trace.warnings);
    back_map(blockset, metrics, &problem, v, trace, start_index, warnings)
}

fn maximize_multistart(
    problem: &TransformedProblem,
    config: &SolverConfig,
) -> Result<(DVector<f64>, SolverTrace, usize)> {
    let sphere = config.sphere();
    let runs = config.exec.map(config.n_starts, |k| {
        let (v0, warning) = problem.init_v(&config.start(k))?;
        let (v, mut trace) = sphere_maximize(problem, &v0, &sphere)?;
        trace.warnings.extend(warning);
        Ok::<_, Error>((v, trace))
    });

    let mut best: Option<(DVector<f64>, SolverTrace, usize)> = None;
    let mut first_error = None;
    for (k, run) in runs.into_iter().enumerate() {
        match run {
            Ok((v, trace)) => {
                let better = best
                    .as_ref()
                    .is_none_or(|(_, t, _)| trace.psi_final() > t.psi_final());
                if better {
                    best = Some((v, trace, k));
                }
            }
            Err(e @ Error::InternalAssertion(_)) => return Err(e),
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    match (best, first_error) {
        (Some(b), _) => Ok(b),
        (None, Some(e)) if config.n_starts == 1 => Err(e),
        (None, Some(e)) => Err(Error::AllStartsFailed(Box::new(e))),
        (None, None) => unreachable!("n_starts >= 1"),
    }
}

fn back_map(
    blockset: &BlockSet,
    metrics: &[ShrinkageMetric],
    problem: &TransformedProblem,
    mut v: DVector<f64>,
    trace: SolverTrace,
    start_index: usize,
    warnings: Vec<String>,
) -> Result<Solution> {
    let nb = blockset.len();
    let n = blockset.n() as f64;
    let super_metric = &metrics[nb];

    let mut w_super = super_metric.inv_sqrt() * &v;
    // sign: largest-magnitude superblock weight is positive
    if w_super[w_super.iamax()] < 0.0 {
        v.neg_mut();
        w_super.neg_mut();
    }
    let y_super = blockset.superblock() * &w_super;

    let mut w_blocks = Vec::with_capacity(nb);
    let mut y_blocks = DMatrix::zeros(blockset.n(), nb);
    let mut covs = Vec::with_capacity(nb);
    for (b, block) in blockset.blocks().iter().enumerate() {
        let u = metrics[b].inv_sqrt() * block.matrix().tr_mul(&y_super);
        let norm = u.norm();
        if !(norm > 0.0) {
            return Err(Error::NonContributingBlock {
                block: block.id().to_string(),
            });
        }
        let w = metrics[b].inv_sqrt() * u / norm;
        y_blocks.set_column(b, &(block.matrix() * &w));
        w_blocks.push(w);
        covs.push(norm / n);
    }
    let contributions = contributions(&covs, problem.m())?;

    Ok(Solution {
        v_super: v,
        w_super,
        y_super,
        w_blocks,
        y_blocks,
        covs,
        contributions,
        psi_final: trace.psi_final(),
        fixed_point_residual: trace.fixed_point_residual,
        converged: trace.converged,
        m: problem.m(),
        trace,
        start_index,
        warnings,
    })
}

/// `c_b = cov_b^m / sum_c cov_c^m`, computed relative to the largest
/// covariance so large `m` does not overflow.
pub fn contributions(covs: &[f64], m: f64) -> Result<Vec<f64>> {
    if let Some(bad) = covs.iter().find(|c| !(**c >= 0.0) || !c.is_finite()) {
        return Err(Error::Argument(format!(
            "covariances must be finite and non-negative, got {bad}"
        )));
    }
    let top = covs.iter().copied().fold(0.0, f64::max);
    if top == 0.0 {
        return Err(Error::UndefinedContributions);
    }
    let powered: Vec<f64> = covs.iter().map(|c| (c / top).powf(m)).collect();
    let total: f64 = powered.iter().sum();
    Ok(powered.into_iter().map(|p| p / total).collect())
}

/// `sum_b |M_b^{-1/2} X_b'y|^{m-2} X_b M_b^{-1} X_b'y`, the block part of
/// the superblock stationary equation.
fn block_image(blockset: &BlockSet, metrics: &[ShrinkageMetric], m: f64, y: &DVector<f64>) -> DVector<f64> {
    let mut g = DVector::zeros(blockset.n());
    for (b, block) in blockset.blocks().iter().enumerate() {
        let xty = block.matrix().tr_mul(y);
        let norm = (metrics[b].inv_sqrt() * &xty).norm();
        if norm == 0.0 {
            continue;
        }
        let weight = if m == 2.0 { 1.0 } else { norm.powf(m - 2.0) };
        g += block.matrix() * (metrics[b].inv() * xty) * weight;
    }
    g
}

/// Image of a superblock weight under the original-coordinate recurrence:
/// returns the new weight and the new superblock component.
pub fn stationary_image(
    w_super: &DVector<f64>,
    blockset: &BlockSet,
    metrics: &[ShrinkageMetric],
    m: f64,
) -> (DVector<f64>, DVector<f64>) {
    let super_metric = &metrics[blockset.len()];
    let y = blockset.superblock() * w_super;
    let xtg = blockset
        .superblock()
        .tr_mul(&block_image(blockset, metrics, m, &y));
    let norm = (super_metric.inv_sqrt() * &xtg).norm();
    let w_new = super_metric.inv() * xtg / norm;
    let y_new = blockset.superblock() * &w_new;
    (w_new, y_new)
}

/// Distance between the superblock weight and its image under the
/// original-coordinate recurrence, measured in the superblock metric
/// (`sqrt(dw' M dw)`). Equals the transformed residual `|f(v) - v|`.
pub fn fixed_point_residual_original(
    solution: &Solution,
    blockset: &BlockSet,
    metrics: &[ShrinkageMetric],
    m: f64,
) -> f64 {
    weight_residual(&solution.w_super, blockset, metrics, m)
}

/// [`fixed_point_residual_original`] for an arbitrary superblock weight.
pub fn weight_residual(
    w_super: &DVector<f64>,
    blockset: &BlockSet,
    metrics: &[ShrinkageMetric],
    m: f64,
) -> f64 {
    let super_metric = &metrics[blockset.len()];
    let (w_new, _) = stationary_image(w_super, blockset, metrics, m);
    let dw = w_new - w_super;
    super_metric.quadratic_form(&dw).max(0.0).sqrt()
}

/// Rebuilds the superblock component from the block components and their
/// covariances. Under a mode-B superblock this is `s / sd(s)` with
/// `s = sum_b cov_b^{m-1} y_b` (no superblock matrix involved); otherwise
/// `s` is mapped through `X M^{-1} X'` and normalized in the metric.
pub fn superblock_from_block_components(
    solution: &Solution,
    blockset: &BlockSet,
    metrics: &[ShrinkageMetric],
    m: f64,
) -> DVector<f64> {
    let n = blockset.n() as f64;
    let mut s = DVector::zeros(blockset.n());
    for (b, &cov) in solution.covs.iter().enumerate() {
        let weight = if m == 1.0 { 1.0 } else { cov.powf(m - 1.0) };
        s += solution.y_blocks.column(b) * weight;
    }
    let super_metric = &metrics[blockset.len()];
    if super_metric.tau() == 0.0 {
        let sd = (s.norm_squared() / n).sqrt();
        return s / sd;
    }
    let xts = blockset.superblock().tr_mul(&s);
    let norm = (super_metric.inv_sqrt() * &xts).norm();
    blockset.superblock() * (super_metric.inv() * xts) / norm
}

/// Result of fitting the auxiliary-variable problem, where the consensus
/// component is any standardized vector rather than a superblock component.
#[derive(Debug, Clone)]
pub struct AuxiliarySolution {
    pub y_super: DVector<f64>,
    pub y_blocks: DMatrix<f64>,
    pub covs: Vec<f64>,
    pub psi_final: f64,
    pub trace: SolverTrace,
}

/// Fits the auxiliary-variable problem by iterating the stationary equation
/// `y ~ sum_b |M_b^{-1/2} X_b'y|^{m-2} X_b M_b^{-1} X_b'y`, normalized to unit
/// variance. The superblock never enters. With a mode-B superblock this has
/// the same solution as [`solve`].
///
/// Runs on `u = y / sqrt(n)` with cross-products `P_b' / sqrt(n)`, which
/// reuses the sphere iteration unchanged.
pub fn solve_auxiliary(
    blockset: &BlockSet,
    block_metrics: &[ShrinkageMetric],
    config: &SolverConfig,
) -> Result<AuxiliarySolution> {
    config.validate()?;
    if block_metrics.len() != blockset.len() {
        return Err(Error::Dimension(format!(
            "{} metrics for {} blocks",
            block_metrics.len(),
            blockset.len()
        )));
    }
    let n = blockset.n() as f64;
    let root_n = n.sqrt();
    let q: Vec<DMatrix<f64>> = blockset
        .blocks()
        .iter()
        .zip(block_metrics)
        .map(|(block, metric)| (block.matrix() * metric.inv_sqrt()).transpose() / root_n)
        .collect();
    let labels = blockset.blocks().iter().map(|b| b.id().to_string()).collect();
    let problem = TransformedProblem::from_q(q, config.m)?
        .with_sample_size(blockset.n())
        .with_labels(labels)
        .with_exec(config.exec);
    let (mut u, trace, _) = maximize_multistart(&problem, config)?;
    if u[u.iamax()] < 0.0 {
        u.neg_mut();
    }
    let y_super = &u * root_n;
    let covs = problem.covariances(&u)?;

    let mut y_blocks = DMatrix::zeros(blockset.n(), blockset.len());
    for (b, block) in blockset.blocks().iter().enumerate() {
        let a = block_metrics[b].inv_sqrt() * block.matrix().tr_mul(&y_super);
        let w = block_metrics[b].inv_sqrt() * &a / a.norm();
        y_blocks.set_column(b, &(block.matrix() * w));
    }
    Ok(AuxiliarySolution {
        y_super,
        y_blocks,
        covs,
        psi_final: trace.psi_final(),
        trace,
    })
}
