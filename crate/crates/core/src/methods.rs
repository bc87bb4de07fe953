//! Named method presets, the mode-selection guide and stationary-equation
//! checks for the presets that have a closed form.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::dataset::BlockSet;
use crate::error::{Error, Result};
use crate::metrics::{Mode, ModeSelector, Projector, DEFAULT_RANK_TOLERANCE};
use crate::solver::Solution;

/// How the block shrinkage constants are laid out.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BlockTaus {
    Uniform(f64),
    /// The first `mode_b` blocks use mode B, the rest mode A.
    Split {
        mode_b: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodPreset {
    pub name: &'static str,
    /// `None` when the exponent is left to the user.
    pub m: Option<f64>,
    pub tau_blocks: BlockTaus,
    pub tau_superblock: f64,
    pub citation: &'static str,
    /// Index in the list of mode/exponent special cases.
    pub case: Option<u8>,
    pub summary: &'static str,
}

/// Exponent used by presets that leave `m` free.
pub const DEFAULT_FREE_M: f64 = 2.0;

impl MethodPreset {
    pub fn m_is_free(&self) -> bool {
        self.m.is_none()
    }

    /// Exponent to run with. `requested` is only allowed for presets that leave `m` free.
    pub fn resolve_m(&self, requested: Option<f64>) -> Result<f64> {
        match (self.m, requested) {
            (Some(_), Some(_)) => Err(Error::Config(format!(
                "preset `{}` fixes the exponent; drop --m or use explicit --m/--tau",
                self.name
            ))),
            (Some(m), None) => Ok(m),
            (None, Some(m)) => Ok(m),
            (None, None) => Ok(DEFAULT_FREE_M),
        }
    }

    /// Sets how many leading blocks use mode B. Only meaningful for split presets.
    pub fn with_mode_b_blocks(mut self, count: usize) -> Result<Self> {
        match self.tau_blocks {
            BlockTaus::Split { .. } => {
                self.tau_blocks = BlockTaus::Split { mode_b: count };
                Ok(self)
            }
            BlockTaus::Uniform(_) => Err(Error::Config(format!(
                "preset `{}` has uniform block modes",
                self.name
            ))),
        }
    }

    pub fn modes(&self, n_blocks: usize) -> Result<ModeSelector> {
        let superblock = Mode::from_tau(self.tau_superblock)?;
        let blocks = match self.tau_blocks {
            BlockTaus::Uniform(tau) => vec![Mode::from_tau(tau)?; n_blocks],
            BlockTaus::Split { mode_b } => {
                if mode_b > n_blocks {
                    return Err(Error::Config(format!(
                        "preset `{}` asks for {mode_b} mode-B blocks but there are {n_blocks}",
                        self.name
                    )));
                }
                (0..n_blocks)
                    .map(|b| if b < mode_b { Mode::B } else { Mode::A })
                    .collect()
            }
        };
        Ok(ModeSelector { blocks, superblock })
    }
}

impl fmt::Display for MethodPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = match self.m {
            Some(m) => format!("m={m}"),
            None => format!("m free (default {DEFAULT_FREE_M})"),
        };
        let blocks = match self.tau_blocks {
            BlockTaus::Uniform(t) => format!("block tau={t}"),
            BlockTaus::Split { mode_b } => format!("first {mode_b} blocks tau=0, others tau=1"),
        };
        write!(
            f,
            "{}: {m}, {blocks}, superblock tau={}\n  {}\n  {}",
            self.name, self.tau_superblock, self.summary, self.citation
        )
    }
}

const NAMED: &[MethodPreset] = &[
    MethodPreset {
        name: "consensus_pca",
        m: Some(2.0),
        tau_blocks: BlockTaus::Uniform(1.0),
        tau_superblock: 1.0,
        citation: "Westerhuis, Kourti and MacGregor (1998)",
        case: Some(5),
        summary: "First principal component of the superblock; also that of the block components.",
    },
    MethodPreset {
        name: "gcca_carroll",
        m: Some(2.0),
        tau_blocks: BlockTaus::Uniform(0.0),
        tau_superblock: 0.0,
        citation: "Carroll (1968), generalized canonical correlation analysis",
        case: Some(8),
        summary: "Auxiliary variable maximizing the sum of squared correlations with the blocks.",
    },
    MethodPreset {
        name: "hierarchical_pca",
        m: Some(4.0),
        tau_blocks: BlockTaus::Uniform(1.0),
        tau_superblock: 0.0,
        citation: "Smilde, Westerhuis and de Jong (2003)",
        case: Some(10),
        summary: "Standardized superblock component; dominant blocks weigh more than under m=2.",
    },
    MethodPreset {
        name: "sumcor",
        m: Some(1.0),
        tau_blocks: BlockTaus::Uniform(0.0),
        tau_superblock: 0.0,
        citation: "Horst (1961), SUMCOR",
        case: Some(4),
        summary: "Mode B everywhere with m=1: maximizes the sum of correlations between block components.",
    },
    MethodPreset {
        name: "maxvar",
        m: Some(2.0),
        tau_blocks: BlockTaus::Uniform(0.0),
        tau_superblock: 0.0,
        citation: "Horst (1961, 1965), MAXVAR",
        case: Some(8),
        summary: "Same configuration as gcca_carroll under Horst's name.",
    },
    MethodPreset {
        name: "redundancy_blocks",
        m: None,
        tau_blocks: BlockTaus::Uniform(1.0),
        tau_superblock: 0.0,
        citation: "generalized redundancy analysis of the blocks",
        case: None,
        summary: "Block components explain their own blocks and correlate with a standardized superblock component.",
    },
    MethodPreset {
        name: "redundancy_superblock",
        m: None,
        tau_blocks: BlockTaus::Uniform(0.0),
        tau_superblock: 1.0,
        citation: "generalized redundancy analysis of the superblock",
        case: None,
        summary: "Superblock component explains the superblock and correlates with standardized block components.",
    },
    MethodPreset {
        name: "mixed_carroll",
        m: Some(2.0),
        tau_blocks: BlockTaus::Split { mode_b: 1 },
        tau_superblock: 0.0,
        citation: "Carroll (1968), mixed correlation and covariance criterion (unweighted)",
        case: None,
        summary: "Correlation for the first blocks, covariance for the rest; set the split with --mode-b-blocks.",
    },
];

const CASE_NAMES: [&str; 10] = [
    "case1", "case2", "case3", "case4", "case5", "case6", "case7", "case8", "case9", "case10",
];

fn case_preset(index: u8) -> MethodPreset {
    let (m, block, superblock) = case_config(index);
    MethodPreset {
        name: CASE_NAMES[index as usize - 1],
        m: Some(m),
        tau_blocks: BlockTaus::Uniform(block.tau()),
        tau_superblock: superblock.tau(),
        citation: "special case of regularized consensus PCA",
        case: Some(index),
        summary: match (block, superblock) {
            (Mode::A, Mode::A) => "Mode A for blocks and superblock.",
            (Mode::A, Mode::B) => "Mode A for blocks, mode B for the superblock.",
            (Mode::B, Mode::A) => "Mode B for blocks, mode A for the superblock.",
            _ => "Mode B for blocks and superblock.",
        },
    }
}

fn case_config(index: u8) -> (f64, Mode, Mode) {
    let m = match index {
        1..=4 => 1.0,
        5..=8 => 2.0,
        _ => 4.0,
    };
    let (block, superblock) = match (index - 1) % 4 {
        0 => (Mode::A, Mode::A),
        1 => (Mode::A, Mode::B),
        2 => (Mode::B, Mode::A),
        _ => (Mode::B, Mode::B),
    };
    (m, block, superblock)
}

/// Every preset, named methods first.
pub fn catalog() -> Vec<MethodPreset> {
    NAMED.iter().cloned().chain((1..=10).map(case_preset)).collect()
}

pub fn preset(name: &str) -> Result<MethodPreset> {
    catalog()
        .into_iter()
        .find(|p| p.name == name)
        .ok_or_else(|| Error::UnknownPreset {
            name: name.to_string(),
            available: catalog().iter().map(|p| p.name).collect::<Vec<_>>().join(", "),
        })
}

/// Closed-form stationary equations for the superblock component.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StationaryForm {
    /// One of the ten mode/exponent special cases (case 6 has none).
    Case(u8),
    /// Mode B for the first `mode_b` blocks, mode A for the rest, `m = 2`.
    Mixed { mode_b: usize },
}

impl StationaryForm {
    pub fn describe(&self) -> String {
        match self {
            StationaryForm::Case(1) => "y ~ Xs Xs' sum_b |Xb'y|^-1 Xb Xb'y".into(),
            StationaryForm::Case(2) => "y ~ sum_b |Xb'y|^-1 Xb Xb'y".into(),
            StationaryForm::Case(3) => "y ~ Xs Xs' sum_b Pb y / |Pb y|".into(),
            StationaryForm::Case(4) => "y ~ sum_b Pb y / |Pb y|".into(),
            StationaryForm::Case(5) => "y ~ Xs Xs' y".into(),
            StationaryForm::Case(7) => "y ~ Xs Xs' sum_b Pb y".into(),
            StationaryForm::Case(8) => "y ~ sum_b Pb y".into(),
            StationaryForm::Case(9) => "y ~ Xs Xs' sum_b |Xb'y|^2 Xb Xb'y".into(),
            StationaryForm::Case(10) => "y ~ sum_b |Xb'y|^2 Xb Xb'y".into(),
            StationaryForm::Case(k) => format!("case {k}: no closed form"),
            StationaryForm::Mixed { mode_b } => {
                format!("y ~ (sum_(b<={mode_b}) n Pb + sum_(b>{mode_b}) Xb Xb') y")
            }
        }
    }
}

impl MethodPreset {
    /// The closed-form equation checked by [`verify_stationary`], if any.
    pub fn stationary_form(&self, m: f64) -> Result<StationaryForm> {
        let unsupported = |why: &str| Err(Error::UnsupportedVerification(format!("{}: {why}", self.name)));
        match self.tau_blocks {
            BlockTaus::Split { mode_b } => {
                if m == 2.0 && self.tau_superblock == 0.0 {
                    Ok(StationaryForm::Mixed { mode_b })
                } else {
                    unsupported("no closed form for this exponent")
                }
            }
            BlockTaus::Uniform(tau) => {
                let block = match tau {
                    1.0 => 0,
                    0.0 => 2,
                    _ => return unsupported("shrunk metrics have no closed form"),
                };
                let superblock = match self.tau_superblock {
                    1.0 => 0,
                    0.0 => 1,
                    _ => return unsupported("shrunk metrics have no closed form"),
                };
                let base = match m {
                    1.0 => 1,
                    2.0 => 5,
                    4.0 => 9,
                    _ => return unsupported("no closed form for this exponent"),
                };
                let index = base + block + superblock;
                if index > 10 || index == 6 {
                    return unsupported("no closed form is listed for this configuration");
                }
                Ok(StationaryForm::Case(index as u8))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationaryReport {
    pub form: StationaryForm,
    /// `|y/|y| - z/|z||` with `z` the image of `y`, sign-aligned.
    pub residual: f64,
}

/// Evaluates the preset's closed-form stationary equation at `solution.y_super`.
pub fn verify_stationary(
    preset: &MethodPreset,
    solution: &Solution,
    blockset: &BlockSet,
) -> Result<StationaryReport> {
    let form = preset.stationary_form(solution.m)?;
    let residual = stationary_residual(form, &solution.y_super, blockset)?;
    Ok(StationaryReport { form, residual })
}

/// Angular residual of `y` under a closed-form stationary equation.
pub fn stationary_residual(form: StationaryForm, y: &DVector<f64>, blockset: &BlockSet) -> Result<f64> {
    if y.len() != blockset.n() {
        return Err(Error::Dimension(format!(
            "component has {} entries, blocks have {} rows",
            y.len(),
            blockset.n()
        )));
    }
    let image = stationary_image(form, y, blockset)?;
    Ok(angular_residual(y, &image))
}

fn angular_residual(y: &DVector<f64>, z: &DVector<f64>) -> f64 {
    let (ny, nz) = (y.norm(), z.norm());
    if ny == 0.0 || nz == 0.0 {
        return f64::INFINITY;
    }
    let yh = y / ny;
    let zh = z / nz;
    if yh.dot(&zh) >= 0.0 {
        (yh - zh).norm()
    } else {
        (yh + zh).norm()
    }
}

fn cross(x: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    x * x.tr_mul(y)
}

fn projection(x: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    Projector::new(x, DEFAULT_RANK_TOLERANCE).apply(y)
}

fn stationary_image(form: StationaryForm, y: &DVector<f64>, blockset: &BlockSet) -> Result<DVector<f64>> {
    let n = blockset.n();
    let mut sum = DVector::zeros(n);
    let blocks = blockset.blocks().iter().map(|b| b.matrix());
    let orthogonal = |b: usize| Error::SingularGradient {
        block: blockset.block(b).id().to_string(),
    };
    let (index, outer) = match form {
        StationaryForm::Mixed { mode_b } => {
            for (b, x) in blocks.enumerate() {
                if b < mode_b {
                    sum += projection(x, y) * n as f64;
                } else {
                    sum += cross(x, y);
                }
            }
            return Ok(sum);
        }
        StationaryForm::Case(k) => (k, matches!(k, 1 | 3 | 5 | 7 | 9)),
    };
    match index {
        1 | 2 => {
            for (b, x) in blocks.enumerate() {
                let norm = x.tr_mul(y).norm();
                if norm == 0.0 {
                    return Err(orthogonal(b));
                }
                sum += cross(x, y) / norm;
            }
        }
        3 | 4 => {
            for (b, x) in blocks.enumerate() {
                let p = projection(x, y);
                let norm = p.norm();
                if norm == 0.0 {
                    return Err(orthogonal(b));
                }
                sum += p / norm;
            }
        }
        5 => sum.copy_from(y),
        7 | 8 => {
            for x in blocks {
                sum += projection(x, y);
            }
        }
        9 | 10 => {
            for x in blocks {
                sum += cross(x, y) * x.tr_mul(y).norm_squared();
            }
        }
        k => {
            return Err(Error::UnsupportedVerification(format!(
                "case {k} has no closed form"
            )));
        }
    }
    Ok(if outer {
        cross(blockset.superblock(), &sum)
    } else {
        sum
    })
}

/// One row of the mode-selection guide.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GuideEntry {
    pub block_mode: char,
    pub superblock_mode: char,
    pub generalizes: &'static str,
    pub objective: &'static str,
}

const GUIDE: [GuideEntry; 4] = [
    GuideEntry {
        block_mode: 'A',
        superblock_mode: 'A',
        generalizes: "Tucker's inter-battery factor analysis",
        objective: "Block and superblock components each summarize their own variables while staying as correlated as possible.",
    },
    GuideEntry {
        block_mode: 'A',
        superblock_mode: 'B',
        generalizes: "Redundancy analysis of a block with respect to the superblock",
        objective: "Compromise between block components that summarize their blocks and a high correlation with the superblock component. Favors the blocks.",
    },
    GuideEntry {
        block_mode: 'B',
        superblock_mode: 'A',
        generalizes: "Redundancy analysis of the superblock with respect to a block",
        objective: "The superblock component summarizes the superblock and correlates strongly with the block components. Favors the superblock.",
    },
    GuideEntry {
        block_mode: 'B',
        superblock_mode: 'B',
        generalizes: "Canonical correlation analysis",
        objective: "Block and superblock components only need to be as correlated as possible.",
    },
];

pub fn guide(block_mode: Mode, superblock_mode: Mode) -> Result<GuideEntry> {
    let letter = |mode: Mode| match mode {
        Mode::A => Ok('A'),
        Mode::B => Ok('B'),
        Mode::Shrink(t) => Err(Error::Argument(format!(
            "the guide covers modes A and B only, got tau={t}"
        ))),
    };
    let (b, s) = (letter(block_mode)?, letter(superblock_mode)?);
    Ok(*GUIDE
        .iter()
        .find(|e| e.block_mode == b && e.superblock_mode == s)
        .expect("guide covers all four pairs"))
}

pub fn guide_entries() -> &'static [GuideEntry] {
    &GUIDE
}

/// Methods that share the consensus model but optimize no known criterion.
/// Listed for reference; they have no preset.
pub const REFERENCE_ONLY: &[(&str, &str)] = &[
    (
        "PLS path modeling, mode A blocks, mode B superblock, centroid scheme (Wold, 1982)",
        "y ~ sum_b |Xb Xb'y|^-1 Xb Xb'y",
    ),
    (
        "PLS path modeling, mode A blocks, mode B superblock, factorial scheme (Lohmoller, 1989); hierarchical PCA-W",
        "y ~ sum_b (|Xb'y|^2 / |Xb Xb'y|^2) Xb Xb'y",
    ),
    (
        "PLS path modeling, mode A everywhere, centroid scheme (Wold, 1982)",
        "y ~ Xs Xs' sum_b |Xb Xb'y|^-1 Xb Xb'y",
    ),
    (
        "PLS path modeling, mode A everywhere, factorial scheme (Lohmoller, 1989)",
        "y ~ Xs Xs' sum_b (|Xb'y|^2 / |Xb Xb'y|^2) Xb Xb'y",
    ),
    (
        "Consensus PCA (Wold, Hellberg, Lundstedt, Sjostrom and Wold, 1987)",
        "y ~ sum_b |Xb'y|^-2 Xb Xb'y",
    ),
];
