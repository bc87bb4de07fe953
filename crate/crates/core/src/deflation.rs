//! Higher-order components by sequential deflation.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::dataset::{build_blockset, sample_cor, Block, BlockSet};
use crate::error::{Error, Result};
use crate::metrics::{ModeSelector, Projector};
use crate::solver::{build_metrics, solve_with_metrics, Solution, SolverConfig};

/// Relative Frobenius norm under which a deflated matrix counts as exhausted.
pub const EXHAUSTION_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DeflationStrategy {
    /// Every block on the previous superblock component.
    GlobalComponents,
    /// Each block on its own previous block component.
    BlockComponents,
    /// Each block on its previous loading direction `X_b'y`, column-wise.
    BlockLoadings,
    /// Each block on its own component, and the superblock separately on its own.
    OwnComponents,
}

impl DeflationStrategy {
    pub const ALL: [DeflationStrategy; 4] = [
        DeflationStrategy::GlobalComponents,
        DeflationStrategy::BlockComponents,
        DeflationStrategy::BlockLoadings,
        DeflationStrategy::OwnComponents,
    ];

    pub fn keyword(self) -> &'static str {
        match self {
            DeflationStrategy::GlobalComponents => "global",
            DeflationStrategy::BlockComponents => "block",
            DeflationStrategy::BlockLoadings => "loading",
            DeflationStrategy::OwnComponents => "own",
        }
    }
}

impl fmt::Display for DeflationStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

impl FromStr for DeflationStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|d| d.keyword() == s).ok_or_else(|| {
            Error::Config(format!(
                "unknown deflation `{s}`; use global, block, loading or own"
            ))
        })
    }
}

/// Residual of the column-wise regression of `x` on `q`: `x - q q'x / q'q`.
pub fn deflate(x: &DMatrix<f64>, q: &DVector<f64>) -> Result<DMatrix<f64>> {
    if q.len() != x.nrows() {
        return Err(Error::Dimension(format!(
            "deflation vector has {} entries, matrix has {} rows",
            q.len(),
            x.nrows()
        )));
    }
    let qq = q.norm_squared();
    if !(qq > 0.0) {
        return Err(Error::Argument("cannot deflate on a zero vector".into()));
    }
    let coef = x.tr_mul(q) / qq;
    Ok(x - q * coef.transpose())
}

/// Column-space deflation `x (I - p p')` on the unit direction of `p`.
pub fn deflate_columns(x: &DMatrix<f64>, p: &DVector<f64>) -> Result<DMatrix<f64>> {
    if p.len() != x.ncols() {
        return Err(Error::Dimension(format!(
            "loading has {} entries, matrix has {} columns",
            p.len(),
            x.ncols()
        )));
    }
    let norm = p.norm();
    if !(norm > 0.0) {
        return Err(Error::Argument("cannot deflate on a zero loading".into()));
    }
    let u = p / norm;
    Ok(x - (x * &u) * u.transpose())
}

/// Absolute correlations between successive components.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthogonalityReport {
    /// `R x R`, superblock components.
    pub superblock: DMatrix<f64>,
    /// One `R x R` matrix per block, block components of that block.
    pub blocks: Vec<DMatrix<f64>>,
}

impl OrthogonalityReport {
    fn build(solutions: &[Solution]) -> Result<Self> {
        let r = solutions.len();
        let nb = solutions.first().map_or(0, Solution::n_blocks);
        let cor_matrix = |get: &dyn Fn(&Solution) -> DVector<f64>| -> Result<DMatrix<f64>> {
            let cols: Vec<DVector<f64>> = solutions.iter().map(get).collect();
            let mut out = DMatrix::identity(r, r);
            for i in 0..r {
                for j in 0..i {
                    let c = sample_cor(cols[i].as_slice(), cols[j].as_slice())?.abs();
                    out[(i, j)] = c;
                    out[(j, i)] = c;
                }
            }
            Ok(out)
        };
        let superblock = cor_matrix(&|s: &Solution| s.y_super.clone())?;
        let blocks = (0..nb)
            .map(|b| cor_matrix(&|s: &Solution| s.y_block(b)))
            .collect::<Result<_>>()?;
        Ok(Self { superblock, blocks })
    }

    pub fn max_superblock(&self) -> f64 {
        max_off_diagonal(&self.superblock)
    }

    pub fn max_within_block(&self) -> f64 {
        self.blocks.iter().map(max_off_diagonal).fold(0.0, f64::max)
    }
}

fn max_off_diagonal(m: &DMatrix<f64>) -> f64 {
    let mut out: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in 0..i {
            out = out.max(m[(i, j)]);
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct MultiSolution {
    pub strategy: DeflationStrategy,
    pub requested_rank: usize,
    /// One solution per extracted rank.
    pub solutions: Vec<Solution>,
    /// The (deflated) data each rank was solved on.
    pub blocksets: Vec<BlockSet>,
    pub orthogonality: OrthogonalityReport,
    pub warnings: Vec<String>,
}

impl MultiSolution {
    pub fn rank(&self) -> usize {
        self.solutions.len()
    }
}

/// Extracts up to `rank` components. Stops early, keeping what was found,
/// when a block is exhausted or the next rank has no usable signal.
pub fn extract(
    blockset: &BlockSet,
    modes: &ModeSelector,
    config: &SolverConfig,
    rank: usize,
    strategy: DeflationStrategy,
) -> Result<MultiSolution> {
    if rank == 0 {
        return Err(Error::Argument("at least one component is required".into()));
    }
    config.validate()?;
    let mut warnings = Vec::new();
    if strategy == DeflationStrategy::OwnComponents && modes.superblock.tau() == 0.0 && rank > 1 {
        warnings.push(
            "mode B superblock with own-component deflation: the deflated superblock is not the \
             concatenation of the deflated blocks, so superblock properties may not carry over"
                .into(),
        );
    }

    let cap = blockset
        .blocks()
        .iter()
        .map(|b| Projector::new(b.matrix(), config.rank_tolerance).rank())
        .min()
        .unwrap_or(0);
    let target = if rank > cap {
        warnings.push(format!(
            "requested {rank} components but the smallest block rank is {cap}"
        ));
        cap
    } else {
        rank
    };

    let mut solutions: Vec<Solution> = Vec::with_capacity(target);
    let mut blocksets = Vec::with_capacity(target);
    let mut current = blockset.clone();
    for r in 0..target {
        if r > 0 {
            let previous = solutions.last().expect("rank > 0");
            match next_blockset(&current, previous, strategy, blockset)? {
                Some(next) => current = next,
                None => {
                    warnings.push(format!("data exhausted after {r} components"));
                    break;
                }
            }
        }
        let metrics = match build_metrics(&current, modes, config.rank_tolerance, config.exec) {
            Ok(m) => m,
            Err(e) if r > 0 => {
                warnings.push(format!("stopped after {r} components: {e}"));
                break;
            }
            Err(e) => return Err(e),
        };
        match solve_with_metrics(&current, &metrics, config) {
            Ok(solution) => {
                solutions.push(solution);
                blocksets.push(current.clone());
            }
            Err(e @ (Error::NonContributingBlock { .. } | Error::SingularGradient { .. })) if r > 0 => {
                warnings.push(format!("stopped after {r} components: {e}"));
                break;
            }
            Err(e) => return Err(e),
        }
    }
    let orthogonality = OrthogonalityReport::build(&solutions)?;
    Ok(MultiSolution {
        strategy,
        requested_rank: rank,
        solutions,
        blocksets,
        orthogonality,
        warnings,
    })
}

fn exhausted(deflated: &DMatrix<f64>, original: &DMatrix<f64>) -> bool {
    deflated.norm() <= EXHAUSTION_TOL * original.norm()
}

/// Deflated data for the next rank, or `None` when some block is exhausted.
fn next_blockset(
    current: &BlockSet,
    previous: &Solution,
    strategy: DeflationStrategy,
    original: &BlockSet,
) -> Result<Option<BlockSet>> {
    let mut blocks: Vec<Block> = Vec::with_capacity(current.len());
    for (b, block) in current.blocks().iter().enumerate() {
        let x = block.matrix();
        let e = match strategy {
            DeflationStrategy::GlobalComponents => deflate(x, &previous.y_super)?,
            DeflationStrategy::BlockComponents | DeflationStrategy::OwnComponents => {
                deflate(x, &previous.y_block(b))?
            }
            DeflationStrategy::BlockLoadings => deflate_columns(x, &x.tr_mul(&previous.y_super))?,
        };
        if exhausted(&e, original.block(b).matrix()) {
            return Ok(None);
        }
        blocks.push(block.with_matrix(e));
    }
    if strategy == DeflationStrategy::OwnComponents {
        let s = deflate(current.superblock(), &previous.y_super)?;
        if exhausted(&s, original.superblock()) {
            return Ok(None);
        }
        Ok(Some(BlockSet::with_superblock(blocks, s)))
    } else {
        build_blockset(blocks).map(Some)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Scaling;
    use crate::exec::ExecPolicy;
    use crate::metrics::Mode;
    use crate::solver::{solve, AssertLevel};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_set(seed: u64, n: usize, widths: &[usize]) -> BlockSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let blocks = widths
            .iter()
            .enumerate()
            .map(|(b, &p)| {
                let raw = DMatrix::from_fn(n, p, |_, _| rng.random_range(-1.0..1.0));
                Block::from_raw(format!("b{b}"), raw, None, Scaling::None).unwrap()
            })
            .collect();
        build_blockset(blocks).unwrap()
    }

    fn config() -> SolverConfig {
        SolverConfig {
            epsilon: 1e-12,
            max_iter: 100_000,
            assert_level: AssertLevel::Cheap,
            ..Default::default()
        }
    }

    #[test]
    fn deflate_examples() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, -1.0, 0.0, 0.0, -1.0]);
        let q = DVector::from_vec(vec![1.0, -1.0, 0.0]);
        let e = deflate(&x, &q).unwrap();
        assert_relative_eq!(e.column(0).into_owned(), DVector::zeros(3), epsilon = 1e-15);
        assert_relative_eq!(
            e.column(1).into_owned(),
            DVector::from_vec(vec![0.5, 0.5, -1.0]),
            epsilon = 1e-15
        );

        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 2.0, 0.0, 0.0]);
        let e = deflate(&x, &x.column(0).into_owned()).unwrap();
        assert_eq!(e.column(0).norm(), 0.0);
        assert_eq!(e.column(1), x.column(1));

        let q = DVector::from_vec(vec![0.0, 0.0, 1.0]);
        assert_eq!(deflate(&x, &q).unwrap(), x);
    }

    #[test]
    fn deflate_errors() {
        let x = DMatrix::from_element(3, 2, 1.0);
        assert!(matches!(deflate(&x, &DVector::zeros(3)), Err(Error::Argument(_))));
        assert!(matches!(
            deflate(&x, &DVector::zeros(2)),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            deflate_columns(&x, &DVector::zeros(2)),
            Err(Error::Argument(_))
        ));
    }

    proptest! {
        #[test]
        fn deflation_is_orthogonal_and_idempotent(
            xs in prop::collection::vec(-5.0f64..5.0, 12),
            qs in prop::collection::vec(-5.0f64..5.0, 4),
        ) {
            let x = DMatrix::from_column_slice(4, 3, &xs);
            let q = DVector::from_vec(qs);
            prop_assume!(q.norm() > 1e-3);
            let e = deflate(&x, &q).unwrap();
            let scale = x.norm().max(1.0) * q.norm();
            prop_assert!(e.tr_mul(&q).amax() <= 1e-10 * scale);
            let twice = deflate(&e, &q).unwrap();
            prop_assert!((twice - &e).amax() <= 1e-12 * x.norm().max(1.0));
        }

        #[test]
        fn column_deflation_annihilates_direction(
            xs in prop::collection::vec(-5.0f64..5.0, 12),
            ps in prop::collection::vec(-5.0f64..5.0, 3),
        ) {
            let x = DMatrix::from_column_slice(4, 3, &xs);
            let p = DVector::from_vec(ps);
            prop_assume!(p.norm() > 1e-3);
            let e = deflate_columns(&x, &p).unwrap();
            prop_assert!((&e * &p).amax() <= 1e-10 * x.norm().max(1.0) * p.norm());
        }
    }

    #[test]
    fn strategy_keywords_round_trip() {
        for d in DeflationStrategy::ALL {
            assert_eq!(d.keyword().parse::<DeflationStrategy>().unwrap(), d);
        }
        assert!("bogus".parse::<DeflationStrategy>().is_err());
    }

    #[test]
    fn rank_one_matches_solve() {
        let set = random_set(1, 15, &[3, 2]);
        let modes = ModeSelector::uniform(2, Mode::A, Mode::A);
        let single = solve(&set, &modes, &config()).unwrap();
        for d in DeflationStrategy::ALL {
            let multi = extract(&set, &modes, &config(), 1, d).unwrap();
            assert_eq!(multi.rank(), 1);
            assert_eq!(multi.solutions[0].y_super, single.y_super);
        }
    }

    #[test]
    fn own_components_orthogonality() {
        let set = random_set(2, 20, &[4, 4, 4]);
        let modes = ModeSelector::uniform(3, Mode::A, Mode::A);
        let multi = extract(&set, &modes, &config(), 3, DeflationStrategy::OwnComponents).unwrap();
        assert_eq!(multi.rank(), 3);
        assert!(multi.orthogonality.max_within_block() <= 1e-8);
        assert!(multi.orthogonality.max_superblock() <= 1e-8);
    }

    #[test]
    fn global_components_uncorrelated() {
        let set = random_set(3, 20, &[4, 4, 4]);
        let modes = ModeSelector::uniform(3, Mode::A, Mode::A);
        let multi = extract(&set, &modes, &config(), 3, DeflationStrategy::GlobalComponents).unwrap();
        assert!(multi.orthogonality.max_superblock() <= 1e-8);
    }

    #[test]
    fn block_components_stay_in_block_space() {
        let set = random_set(4, 20, &[4, 4, 4]);
        let modes = ModeSelector::uniform(3, Mode::A, Mode::A);
        let multi = extract(&set, &modes, &config(), 3, DeflationStrategy::BlockComponents).unwrap();
        assert!(multi.orthogonality.max_within_block() <= 1e-8);
        for b in 0..3 {
            let proj = Projector::new(set.block(b).matrix(), 1e-10);
            for sol in &multi.solutions {
                let y = sol.y_block(b);
                assert!((proj.apply(&y) - &y).norm() <= 1e-8 * y.norm());
            }
        }
    }

    #[test]
    fn loadings_give_uncorrelated_global_components() {
        let set = random_set(5, 20, &[4, 4, 4]);
        let modes = ModeSelector::uniform(3, Mode::A, Mode::A);
        let multi = extract(&set, &modes, &config(), 3, DeflationStrategy::BlockLoadings).unwrap();
        assert_eq!(multi.rank(), 3);
        assert!(multi.orthogonality.max_superblock() <= 1e-8);
    }

    #[test]
    fn rank_capped_by_smallest_block() {
        let set = random_set(6, 12, &[2, 4]);
        let modes = ModeSelector::uniform(2, Mode::A, Mode::A);
        let multi = extract(&set, &modes, &config(), 4, DeflationStrategy::BlockComponents).unwrap();
        assert_eq!(multi.rank(), 2);
        assert!(multi.warnings.iter().any(|w| w.contains("smallest block rank")));
    }

    #[test]
    fn mode_b_superblock_own_components_warns() {
        let set = random_set(7, 20, &[3, 3]);
        let modes = ModeSelector::uniform(2, Mode::A, Mode::B);
        let multi = extract(&set, &modes, &config(), 2, DeflationStrategy::OwnComponents).unwrap();
        assert!(multi.warnings.iter().any(|w| w.contains("mode B superblock")));
    }

    #[test]
    fn reports_identical_across_policies() {
        let set = random_set(8, 20, &[3, 3, 2]);
        let modes = ModeSelector::uniform(3, Mode::B, Mode::A);
        let run = |exec| {
            let cfg = SolverConfig { exec, ..config() };
            extract(&set, &modes, &cfg, 2, DeflationStrategy::OwnComponents).unwrap()
        };
        let a = run(ExecPolicy::Sequential);
        let b = run(ExecPolicy::Parallel);
        assert_eq!(a.orthogonality, b.orthogonality);
    }

    #[test]
    fn zero_rank_rejected() {
        let set = random_set(9, 10, &[2, 2]);
        let modes = ModeSelector::uniform(2, Mode::A, Mode::A);
        assert!(extract(&set, &modes, &config(), 0, DeflationStrategy::GlobalComponents).is_err());
    }
}
