//! Command line front end: configuration merging, the `run` and `explain`
//! subcommands and result files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dataset::{load_blocks, sample_cor, BlockSet, LoadOptions, Scaling};
use crate::deflation::{extract, DeflationStrategy, MultiSolution};
use crate::error::{Error, Result};
use crate::exec::ExecPolicy;
use crate::methods::{catalog, guide, guide_entries, preset, MethodPreset, REFERENCE_ONLY};
use crate::metrics::{Mode, ModeSelector};
use crate::solver::{AssertLevel, Init, Solution, SolverConfig};

#[derive(Debug, Parser)]
#[command(
    name = "rcpca",
    version,
    about = "Regularized consensus PCA for multiblock data"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit components and write result files.
    Run(Box<RunArgs>),
    /// Describe a preset, a block/superblock mode pair, or list everything.
    Explain {
        /// A preset name, or two modes such as `A B`.
        target: Vec<String>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScaleArg {
    None,
    Unit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitArg {
    Eigen,
    Random,
    File,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssertArg {
    Off,
    Cheap,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeflateArg {
    Global,
    Block,
    Loading,
    Own,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecArg {
    Parallel,
    Sequential,
}

/// Every field is optional so flags can be layered over a config file.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunArgs {
    /// TOML file with the same keys as the flags (dashes become underscores).
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,

    /// Block files, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub blocks: Option<Vec<PathBuf>>,

    /// Block ids, comma separated; defaults to the file stems.
    #[arg(long, value_delimiter = ',')]
    pub ids: Option<Vec<String>>,

    #[arg(long)]
    pub preset: Option<String>,

    /// Exponent m >= 1.
    #[arg(long)]
    pub m: Option<f64>,

    /// One shrinkage constant for every block, or one per block.
    #[arg(long, value_delimiter = ',')]
    pub tau: Option<Vec<f64>>,

    #[arg(long)]
    pub tau_super: Option<f64>,

    /// Number of leading mode-B blocks for `mixed_carroll`.
    #[arg(long)]
    pub mode_b_blocks: Option<usize>,

    #[arg(long, value_enum)]
    pub scale: Option<ScaleArg>,

    /// Field delimiter of the block files (one character).
    #[arg(long)]
    pub delimiter: Option<char>,

    /// The first column of every block file holds row ids.
    #[arg(long)]
    #[serde(default)]
    pub row_ids: bool,

    #[arg(long)]
    pub epsilon: Option<f64>,

    #[arg(long)]
    pub max_iter: Option<usize>,

    #[arg(long, value_enum)]
    pub init: Option<InitArg>,

    /// Start vector for `--init file`: one value per line, in the
    /// superblock's transformed coordinates (the superblock weights under mode A).
    #[arg(long)]
    pub init_file: Option<PathBuf>,

    #[arg(long)]
    pub seed: Option<u64>,

    #[arg(long)]
    pub starts: Option<usize>,

    #[arg(long, value_enum)]
    pub deflate: Option<DeflateArg>,

    #[arg(long)]
    pub components: Option<usize>,

    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Exit with status 3 when a rank does not converge.
    #[arg(long)]
    #[serde(default)]
    pub strict: bool,

    #[arg(long, value_enum)]
    pub assert: Option<AssertArg>,

    #[arg(long, value_enum)]
    pub exec: Option<ExecArg>,
}

impl RunArgs {
    /// Fills unset fields from `base`. Relative paths in `base` are taken
    /// relative to `base_dir`.
    fn layered_over(self, base: RunArgs, base_dir: &Path) -> RunArgs {
        let rebase = |p: PathBuf| if p.is_relative() { base_dir.join(p) } else { p };
        RunArgs {
            config: self.config,
            blocks: self
                .blocks
                .or_else(|| base.blocks.map(|v| v.into_iter().map(rebase).collect())),
            ids: self.ids.or(base.ids),
            preset: self.preset.or(base.preset),
            m: self.m.or(base.m),
            tau: self.tau.or(base.tau),
            tau_super: self.tau_super.or(base.tau_super),
            mode_b_blocks: self.mode_b_blocks.or(base.mode_b_blocks),
            scale: self.scale.or(base.scale),
            delimiter: self.delimiter.or(base.delimiter),
            row_ids: self.row_ids || base.row_ids,
            epsilon: self.epsilon.or(base.epsilon),
            max_iter: self.max_iter.or(base.max_iter),
            init: self.init.or(base.init),
            init_file: self.init_file.or_else(|| base.init_file.map(rebase)),
            seed: self.seed.or(base.seed),
            starts: self.starts.or(base.starts),
            deflate: self.deflate.or(base.deflate),
            components: self.components.or(base.components),
            out: self.out.or_else(|| base.out.map(rebase)),
            strict: self.strict || base.strict,
            assert: self.assert.or(base.assert),
            exec: self.exec.or(base.exec),
        }
    }
}

/// How the metrics were chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum ModeChoice {
    Preset(MethodPreset),
    Explicit { tau: Vec<f64>, tau_super: f64 },
}

/// A fully resolved run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub blocks: Vec<(PathBuf, String)>,
    pub load: LoadOptions,
    pub choice: ModeChoice,
    pub solver: SolverConfig,
    pub strategy: DeflationStrategy,
    pub components: usize,
    pub out: PathBuf,
    pub strict: bool,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn require_file(path: &Path) -> Result<()> {
    fs::metadata(path).map(|_| ()).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_init_file(path: &Path) -> Result<Vec<f64>> {
    read_text(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse::<f64>().map_err(|e| Error::Parse {
                source_name: path.display().to_string(),
                row: i + 1,
                column: 1,
                message: e.to_string(),
            })
        })
        .collect()
}

impl RunConfig {
    pub fn resolve(args: RunArgs) -> Result<Self> {
        let args = match args.config.clone() {
            Some(path) => {
                let text = read_text(&path)?;
                let base: RunArgs =
                    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
                args.layered_over(base, &dir)
            }
            None => args,
        };

        let files = args
            .blocks
            .filter(|b| !b.is_empty())
            .ok_or_else(|| Error::Config("no block files given (--blocks)".into()))?;
        let ids = match args.ids {
            Some(ids) if ids.len() != files.len() => {
                return Err(Error::Config(format!(
                    "{} ids for {} block files",
                    ids.len(),
                    files.len()
                )))
            }
            Some(ids) => ids,
            None => files
                .iter()
                .map(|p| {
                    p.file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_else(|| p.display().to_string())
                })
                .collect(),
        };
        let mut sorted = ids.clone();
        sorted.sort();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Config(format!("duplicate block id `{}`", w[0])));
        }
        let n_blocks = files.len();

        let (choice, m) = match (args.preset, args.tau.is_some() || args.tau_super.is_some()) {
            (Some(_), true) => {
                return Err(Error::Config(
                    "--preset and explicit --tau/--tau-super are mutually exclusive".into(),
                ))
            }
            (Some(name), false) => {
                let mut p = preset(&name)?;
                let m = p.resolve_m(args.m)?;
                if let Some(k) = args.mode_b_blocks {
                    p = p.with_mode_b_blocks(k)?;
                }
                p.modes(n_blocks)?;
                (ModeChoice::Preset(p), m)
            }
            (None, _) => {
                let m = args
                    .m
                    .ok_or_else(|| Error::Config("give --preset or an explicit --m".into()))?;
                if args.mode_b_blocks.is_some() {
                    return Err(Error::Config(
                        "--mode-b-blocks needs --preset mixed_carroll".into(),
                    ));
                }
                let tau = match args.tau {
                    None => vec![1.0; n_blocks],
                    Some(t) if t.len() == 1 => vec![t[0]; n_blocks],
                    Some(t) if t.len() == n_blocks => t,
                    Some(t) => {
                        return Err(Error::Config(format!(
                            "{} tau values for {n_blocks} blocks",
                            t.len()
                        )))
                    }
                };
                let tau_super = args.tau_super.unwrap_or(1.0);
                ModeSelector::from_taus(&tau, tau_super)?;
                (ModeChoice::Explicit { tau, tau_super }, m)
            }
        };

        let seed = args.seed.unwrap_or(0);
        let init = match args.init.unwrap_or(InitArg::Eigen) {
            InitArg::Eigen => {
                if args.init_file.is_some() {
                    return Err(Error::Config("--init-file needs --init file".into()));
                }
                Init::DominantEigenvector
            }
            InitArg::Random => Init::Random(seed),
            InitArg::File => {
                let path = args
                    .init_file
                    .ok_or_else(|| Error::Config("--init file needs --init-file PATH".into()))?;
                Init::Given(read_init_file(&path)?)
            }
        };
        let solver = SolverConfig {
            m,
            epsilon: args.epsilon.unwrap_or(1e-10),
            max_iter: args.max_iter.unwrap_or(10_000),
            init,
            n_starts: args.starts.unwrap_or(1),
            seed,
            assert_level: match args.assert.unwrap_or(AssertArg::Cheap) {
                AssertArg::Off => AssertLevel::Off,
                AssertArg::Cheap => AssertLevel::Cheap,
                AssertArg::Full => AssertLevel::Full,
            },
            exec: match args.exec.unwrap_or(ExecArg::Parallel) {
                ExecArg::Parallel => ExecPolicy::Parallel,
                ExecArg::Sequential => ExecPolicy::Sequential,
            },
            ..Default::default()
        };
        solver.validate().map_err(|e| Error::Config(e.to_string()))?;

        let delimiter = match args.delimiter {
            None => b',',
            Some(c) if c.is_ascii() => c as u8,
            Some(c) => return Err(Error::Config(format!("delimiter `{c}` is not ASCII"))),
        };
        let components = args.components.unwrap_or(1);
        if components == 0 {
            return Err(Error::Config("--components must be at least 1".into()));
        }
        let out = args
            .out
            .ok_or_else(|| Error::Config("no output directory given (--out)".into()))?;

        for f in &files {
            require_file(f)?;
        }
        Ok(RunConfig {
            blocks: files.into_iter().zip(ids).collect(),
            load: LoadOptions {
                delimiter,
                row_ids: args.row_ids,
                scaling: match args.scale.unwrap_or(ScaleArg::None) {
                    ScaleArg::None => Scaling::None,
                    ScaleArg::Unit => Scaling::UnitVariance,
                },
            },
            choice,
            solver,
            strategy: match args.deflate.unwrap_or(DeflateArg::Own) {
                DeflateArg::Global => DeflationStrategy::GlobalComponents,
                DeflateArg::Block => DeflationStrategy::BlockComponents,
                DeflateArg::Loading => DeflationStrategy::BlockLoadings,
                DeflateArg::Own => DeflationStrategy::OwnComponents,
            },
            components,
            out,
            strict: args.strict,
        })
    }

    pub fn modes(&self, n_blocks: usize) -> Result<ModeSelector> {
        match &self.choice {
            ModeChoice::Preset(p) => p.modes(n_blocks),
            ModeChoice::Explicit { tau, tau_super } => ModeSelector::from_taus(tau, *tau_super),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankSummary {
    pub rank: usize,
    /// Criterion on the covariance scale, `sum_b cov(y_b, y)^m`.
    pub psi_final: f64,
    pub fixed_point_residual: f64,
    pub converged: bool,
    pub iterations: usize,
    pub start_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub preset: Option<String>,
    pub m: f64,
    pub blocks: Vec<String>,
    pub tau_blocks: Vec<f64>,
    pub tau_superblock: f64,
    pub scaling: String,
    pub deflation: String,
    pub requested_rank: usize,
    pub achieved_rank: usize,
    pub converged: bool,
    pub warnings: Vec<String>,
    pub ranks: Vec<RankSummary>,
}

/// Fixed 12-significant-digit rendering used in every result table.
pub fn fmt_num(x: f64) -> String {
    format!("{x:.11e}")
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_table(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let io = |source: std::io::Error| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut writer = csv::WriterBuilder::new()
        .delimiter(b'\t')
        .from_path(path)
        .map_err(|e| io(e.into()))?;
    writer.write_record(header).map_err(|e| io(e.into()))?;
    for row in rows {
        writer.write_record(&row).map_err(|e| io(e.into()))?;
    }
    writer.flush().map_err(io)
}

fn write_rank(dir: &Path, original: &BlockSet, solution: &Solution) -> Result<()> {
    create_dir(dir)?;
    for (b, block) in original.blocks().iter().enumerate() {
        write_table(
            &dir.join(format!("weights_{}.tsv", block.id())),
            &["variable", "weight"],
            block
                .column_names()
                .iter()
                .zip(solution.w_blocks[b].iter())
                .map(|(name, w)| vec![name.clone(), fmt_num(*w)]),
        )?;
    }
    write_table(
        &dir.join("weights_superblock.tsv"),
        &["variable", "weight"],
        original
            .superblock_column_names()
            .into_iter()
            .zip(solution.w_super.iter())
            .map(|(name, w)| vec![name, fmt_num(*w)]),
    )?;

    let mut header = vec!["row"];
    header.extend(original.blocks().iter().map(|b| b.id()));
    header.push("superblock");
    let ids = original.row_ids();
    write_table(
        &dir.join("components.tsv"),
        &header,
        ids.into_iter().enumerate().map(|(i, id)| {
            let mut row = vec![id];
            row.extend(solution.y_blocks.row(i).iter().map(|v| fmt_num(*v)));
            row.push(fmt_num(solution.y_super[i]));
            row
        }),
    )?;

    let mut rows = Vec::with_capacity(original.len());
    for (b, block) in original.blocks().iter().enumerate() {
        let cor = sample_cor(
            solution.y_blocks.column(b).as_slice(),
            solution.y_super.as_slice(),
        )?;
        rows.push(vec![
            block.id().to_string(),
            fmt_num(solution.covs[b]),
            fmt_num(cor),
            fmt_num(solution.contributions[b]),
        ]);
    }
    write_table(
        &dir.join("contributions.tsv"),
        &["block", "cov", "cor", "contribution"],
        rows,
    )?;

    let x = original.superblock();
    let rows = original
        .superblock_column_names()
        .into_iter()
        .enumerate()
        .map(|(j, name)| {
            sample_cor(x.column(j).as_slice(), solution.y_super.as_slice()).map(|c| vec![name, fmt_num(c)])
        })
        .collect::<Result<Vec<_>>>()?;
    write_table(
        &dir.join("variable_correlations.tsv"),
        &["variable", "cor_superblock"],
        rows,
    )?;

    let t = &solution.trace;
    write_table(
        &dir.join("trace.tsv"),
        &[
            "iteration",
            "psi",
            "delta_psi",
            "step_norm",
            "bound",
            "sandwich_ok",
        ],
        std::iter::once(vec![
            "0".into(),
            fmt_num(t.psi[0]),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
        ])
        .chain((0..t.iterations).map(|s| {
            vec![
                (s + 1).to_string(),
                fmt_num(t.psi[s + 1]),
                fmt_num(t.delta_psi[s]),
                fmt_num(t.step_norm[s]),
                fmt_num(t.bound[s]),
                t.sandwich_ok.get(s).map_or(String::new(), |ok| ok.to_string()),
            ]
        })),
    )
}

fn write_orthogonality(path: &Path, original: &BlockSet, multi: &MultiSolution) -> Result<()> {
    let report = &multi.orthogonality;
    let mut rows = Vec::new();
    let mut push = |what: &str, m: &nalgebra::DMatrix<f64>| {
        for i in 0..m.nrows() {
            for j in 0..i {
                rows.push(vec![
                    what.to_string(),
                    (j + 1).to_string(),
                    (i + 1).to_string(),
                    fmt_num(m[(i, j)]),
                ]);
            }
        }
    };
    push("superblock", &report.superblock);
    for (b, m) in report.blocks.iter().enumerate() {
        push(original.block(b).id(), m);
    }
    write_table(path, &["component_of", "rank_a", "rank_b", "abs_cor"], rows)
}

/// Outcome of a finished run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: Manifest,
    pub multi: MultiSolution,
}

/// Loads the blocks, fits and writes every result file under `config.out`.
pub fn run(config: &RunConfig) -> Result<RunOutcome> {
    let blockset = load_blocks(&config.blocks, &config.load)?;
    let modes = config.modes(blockset.len())?;
    let multi = extract(
        &blockset,
        &modes,
        &config.solver,
        config.components,
        config.strategy,
    )?;

    create_dir(&config.out)?;
    for (r, solution) in multi.solutions.iter().enumerate() {
        write_rank(&config.out.join(format!("rank{}", r + 1)), &blockset, solution)?;
    }
    if multi.rank() > 1 {
        write_orthogonality(&config.out.join("orthogonality.tsv"), &blockset, &multi)?;
    }

    let mut warnings = multi.warnings.clone();
    for (r, s) in multi.solutions.iter().enumerate() {
        warnings.extend(s.warnings.iter().map(|w| format!("rank {}: {w}", r + 1)));
        if !s.converged {
            warnings.push(format!(
                "rank {}: not converged after {} iterations",
                r + 1,
                s.trace.iterations
            ));
        }
    }
    let ranks: Vec<RankSummary> = multi
        .solutions
        .iter()
        .enumerate()
        .map(|(r, s)| RankSummary {
            rank: r + 1,
            psi_final: s.psi_final,
            fixed_point_residual: s.fixed_point_residual,
            converged: s.converged,
            iterations: s.trace.iterations,
            start_index: s.start_index,
        })
        .collect();
    let manifest = Manifest {
        preset: match &config.choice {
            ModeChoice::Preset(p) => Some(p.name.to_string()),
            ModeChoice::Explicit { .. } => None,
        },
        m: config.solver.m,
        blocks: blockset.blocks().iter().map(|b| b.id().to_string()).collect(),
        tau_blocks: modes.blocks.iter().map(|m| m.tau()).collect(),
        tau_superblock: modes.superblock.tau(),
        scaling: match config.load.scaling {
            Scaling::None => "none".into(),
            Scaling::UnitVariance => "unit".into(),
        },
        deflation: config.strategy.keyword().into(),
        requested_rank: config.components,
        achieved_rank: multi.rank(),
        converged: ranks.iter().all(|r| r.converged),
        warnings,
        ranks,
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::InternalAssertion(e.to_string()))?;
    let path = config.out.join("manifest.toml");
    fs::write(&path, text).map_err(|source| Error::Io { path, source })?;

    if config.strict {
        if let Some(bad) = manifest.ranks.iter().find(|r| !r.converged) {
            return Err(Error::NotConverged {
                iterations: bad.iterations,
            });
        }
    }
    Ok(RunOutcome { manifest, multi })
}

fn parse_mode(s: &str) -> Option<Mode> {
    match s {
        "A" | "a" => Some(Mode::A),
        "B" | "b" => Some(Mode::B),
        _ => None,
    }
}

fn render_guide() -> String {
    let mut out = String::from("Mode selection (blocks / superblock):\n");
    for e in guide_entries() {
        out.push_str(&format!(
            "  {} / {}: generalizes {}\n    {}\n",
            e.block_mode, e.superblock_mode, e.generalizes, e.objective
        ));
    }
    out
}

/// Text for `rcpca explain`.
pub fn explain(target: &[String]) -> Result<String> {
    match target {
        [] => {
            let mut out = String::from("Presets:\n");
            for p in catalog() {
                out.push_str(&format!("{p}\n"));
            }
            out.push('\n');
            out.push_str(&render_guide());
            out.push_str("\nRelated methods without a criterion (no preset):\n");
            for (name, equation) in REFERENCE_ONLY {
                out.push_str(&format!("  {name}\n    {equation}\n"));
            }
            Ok(out)
        }
        [name] => {
            let p = preset(name)?;
            let mut out = format!("{p}\n");
            if let (crate::methods::BlockTaus::Uniform(tb), Ok(sb)) =
                (p.tau_blocks, Mode::from_tau(p.tau_superblock))
            {
                if let (Ok(entry), Ok(form)) = (
                    guide(Mode::from_tau(tb)?, sb),
                    p.stationary_form(p.resolve_m(None)?),
                ) {
                    out.push_str(&format!(
                        "  generalizes {}\n  stationary equation: {}\n",
                        entry.generalizes,
                        form.describe()
                    ));
                } else if let Ok(entry) = guide(Mode::from_tau(tb)?, sb) {
                    out.push_str(&format!("  generalizes {}\n", entry.generalizes));
                }
            }
            Ok(out)
        }
        [a, b] => match (parse_mode(a), parse_mode(b)) {
            (Some(block), Some(superblock)) => {
                let e = guide(block, superblock)?;
                Ok(format!(
                    "blocks {a} / superblock {b}: generalizes {}\n{}\n",
                    e.generalizes, e.objective
                ))
            }
            _ => Err(Error::Config(format!("modes must be A or B, got `{a} {b}`"))),
        },
        _ => Err(Error::Config("explain takes a preset name or two modes".into())),
    }
}

/// Parses `args`, runs the command and returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Run(args) => RunConfig::resolve(*args).and_then(|config| {
            let outcome = run(&config)?;
            let mut stderr = std::io::stderr().lock();
            for w in &outcome.manifest.warnings {
                let _ = writeln!(stderr, "warning: {w}");
            }
            let _ = writeln!(
                stderr,
                "wrote {} component(s) to {}",
                outcome.manifest.achieved_rank,
                config.out.display()
            );
            Ok(())
        }),
        Command::Explain { target } => explain(&target).map(|text| print!("{text}")),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let category = e.category();
            eprintln!("error ({category:?}): {e}");
            category.exit_code()
        }
    }
}

/// Recomputes the covariance-scale criterion from a written `components.tsv`.
pub fn psi_from_components(path: &Path, m: f64) -> Result<f64> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .from_path(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let values = record
            .iter()
            .skip(1)
            .enumerate()
            .map(|(j, v)| {
                v.parse::<f64>().map_err(|e| Error::Parse {
                    source_name: path.display().to_string(),
                    row: i + 2,
                    column: j + 2,
                    message: e.to_string(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if columns.is_empty() {
            columns = vec![Vec::new(); values.len()];
        }
        for (c, v) in columns.iter_mut().zip(values) {
            c.push(v);
        }
    }
    let (superblock, blocks) = columns
        .split_last()
        .ok_or_else(|| Error::Dimension(format!("{}: no columns", path.display())))?;
    let y = DVector::from_column_slice(superblock);
    let n = y.len() as f64;
    Ok(blocks
        .iter()
        .map(|c| (DVector::from_column_slice(c).dot(&y) / n).powf(m))
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(list: &[&str]) -> RunArgs {
        let mut full = vec!["rcpca", "run"];
        full.extend_from_slice(list);
        match Cli::try_parse_from(full).unwrap().command {
            Command::Run(a) => *a,
            _ => unreachable!(),
        }
    }

    fn demo_files() -> String {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
        format!(
            "{},{}",
            dir.join("demo_sensory.csv").display(),
            dir.join("demo_chemistry.csv").display()
        )
    }

    #[test]
    fn preset_and_fixed_m_conflict() {
        let files = demo_files();
        let a = args(&[
            "--blocks",
            &files,
            "--preset",
            "consensus_pca",
            "--m",
            "3",
            "--out",
            "x",
        ]);
        let err = RunConfig::resolve(a).unwrap_err();
        assert_eq!(err.category().exit_code(), 1);
    }

    #[test]
    fn preset_and_tau_conflict() {
        let files = demo_files();
        let a = args(&[
            "--blocks", &files, "--preset", "sumcor", "--tau", "1", "--out", "x",
        ]);
        assert!(matches!(RunConfig::resolve(a), Err(Error::Config(_))));
    }

    #[test]
    fn free_preset_takes_m() {
        let files = demo_files();
        let a = args(&[
            "--blocks",
            &files,
            "--preset",
            "redundancy_blocks",
            "--m",
            "4",
            "--out",
            "x",
        ]);
        assert_eq!(RunConfig::resolve(a).unwrap().solver.m, 4.0);
    }

    #[test]
    fn explicit_taus_broadcast() {
        let files = demo_files();
        let a = args(&[
            "--blocks",
            &files,
            "--m",
            "1",
            "--tau",
            "0.5",
            "--tau-super",
            "0",
            "--out",
            "x",
        ]);
        let cfg = RunConfig::resolve(a).unwrap();
        assert_eq!(
            cfg.choice,
            ModeChoice::Explicit {
                tau: vec![0.5, 0.5],
                tau_super: 0.0
            }
        );
        assert_eq!(cfg.blocks[0].1, "demo_sensory");
        let a = args(&["--blocks", &files, "--m", "1", "--tau", "0.5,1,0", "--out", "x"]);
        assert!(RunConfig::resolve(a).is_err());
    }

    #[test]
    fn missing_file_is_a_data_error() {
        let a = args(&[
            "--blocks",
            "/nonexistent/a.csv",
            "--preset",
            "sumcor",
            "--out",
            "x",
        ]);
        let err = RunConfig::resolve(a).unwrap_err();
        assert_eq!(err.category().exit_code(), 2);
        assert!(err.to_string().contains("/nonexistent/a.csv"));
    }

    #[test]
    fn config_file_is_overridden_by_flags() {
        let dir = tempfile::tempdir().unwrap();
        let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
        let cfg = format!(
            "blocks = [\"{}\", \"{}\"]\npreset = \"sumcor\"\nepsilon = 1e-9\nseed = 7\nout = \"res\"\n",
            data.join("demo_sensory.csv").display(),
            data.join("demo_chemistry.csv").display()
        );
        let path = dir.path().join("run.toml");
        fs::write(&path, cfg).unwrap();
        let a = args(&["--config", path.to_str().unwrap(), "--seed", "9"]);
        let resolved = RunConfig::resolve(a).unwrap();
        assert_eq!(resolved.solver.seed, 9);
        assert_eq!(resolved.solver.epsilon, 1e-9);
        assert_eq!(resolved.out, dir.path().join("res"));
        assert_eq!(resolved.solver.m, 1.0);
    }

    #[test]
    fn unknown_config_key_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "bogus = 1\n").unwrap();
        let a = args(&["--config", path.to_str().unwrap()]);
        assert!(matches!(RunConfig::resolve(a), Err(Error::Config(_))));
    }

    #[test]
    fn explain_texts() {
        let ab = explain(&["A".into(), "B".into()]).unwrap();
        assert!(ab.contains("Compromise between block components"));
        let sumcor = explain(&["sumcor".into()]).unwrap();
        assert!(sumcor.contains("m=1") && sumcor.contains("Horst"));
        assert!(sumcor.contains("tau=0"));
        assert!(matches!(
            explain(&["nosuch".into()]),
            Err(Error::UnknownPreset { .. })
        ));
        let all = explain(&[]).unwrap();
        assert!(all.contains("hierarchical_pca") && all.contains("Canonical correlation analysis"));
    }

    #[test]
    fn number_format_has_twelve_digits() {
        assert_eq!(fmt_num(1.0), "1.00000000000e0");
        assert_eq!(fmt_num(-0.000123456789012345), "-1.23456789012e-4");
    }
}
