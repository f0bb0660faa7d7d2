//! Argument parsing and dispatch. `run` maps every outcome to an exit code:
//! 0 when all checks pass, 1 on any finding, 2 on usage or input errors.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use lgsparse::risk::RiskMode;

use crate::instances::{FarPairCoupling, TheoremInstance, THEOREM_TEST_LENS, THEOREM_TRAIN_LEN, THEOREM_WINDOW};
use crate::report::{emit, Format, Report};
use crate::runs::{self, GenerateConfig, Instance, PositionScheme};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Exact,
    Mc,
}

#[derive(Debug, Parser)]
#[command(name = "lgsparse", version, about = "Length-generalization checks for sparse planted ensembles")]
pub struct Cli {
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, global = true, value_enum, default_value_t = Mode::Exact)]
    pub mode: Mode,
    /// Monte-Carlo sample count.
    #[arg(long, global = true, default_value_t = 100_000)]
    pub samples: usize,
    /// Cap on enumerated support atoms in exact mode.
    #[arg(long, global = true, default_value_t = 1 << 26)]
    pub budget: u128,
    /// Output directory; reports go to stdout when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Source {
    /// Built-in instance: theorem, theorem-perturbed, locality, relative,
    /// realizability, coverage or far-pair.
    #[arg(long, conflicts_with_all = ["ensemble", "family"])]
    pub instance: Option<String>,
    #[arg(long, requires = "family")]
    pub ensemble: Option<PathBuf>,
    #[arg(long, requires = "ensemble")]
    pub family: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a JSONL dataset and its manifest.
    Generate {
        #[arg(long)]
        task: String,
        #[arg(long)]
        min_len: usize,
        #[arg(long)]
        max_len: usize,
        #[arg(long)]
        count: usize,
        /// Sparsity of sparse_parity.
        #[arg(long, default_value_t = 3)]
        k: usize,
        /// Vocabulary size N of sparse_parity.
        #[arg(long, default_value_t = 20)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        jump: usize,
        #[arg(long, default_value_t = 2)]
        depth: usize,
        #[arg(long, default_value_t = 256)]
        vars: usize,
        #[arg(long, default_value_t = 4)]
        alphabet: usize,
        #[arg(long, value_enum, default_value_t = PositionScheme::Coupled)]
        positions: PositionScheme,
        #[arg(long)]
        max_position_id: Option<usize>,
    },
    /// Risk of every family member at the given lengths.
    Risk {
        #[command(flatten)]
        source: Source,
        #[arg(long, value_delimiter = ',', required = true)]
        lengths: Vec<usize>,
        /// L used to build the counterexample instances.
        #[arg(long, default_value_t = 4)]
        train_len: usize,
    },
    /// Risk minimization at L, then the minimizer's risk at L̄.
    LgCheck {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        train_len: usize,
        #[arg(long)]
        test_len: usize,
        #[arg(long, default_value_t = runs::ZERO)]
        epsilon: f64,
    },
    /// The length-generalization bound over an (instance, L̄) grid.
    Theorem {
        /// delta0 or perturbed; both when absent.
        #[arg(long, conflicts_with_all = ["ensemble", "family"])]
        instance: Option<String>,
        #[arg(long, requires = "family")]
        ensemble: Option<PathBuf>,
        #[arg(long, requires_all = ["ensemble", "delta"])]
        family: Option<PathBuf>,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long, default_value_t = THEOREM_WINDOW)]
        window: usize,
        #[arg(long, default_value_t = THEOREM_TRAIN_LEN)]
        train_len: usize,
        #[arg(long, value_delimiter = ',', default_values_t = THEOREM_TEST_LENS)]
        test_lens: Vec<usize>,
    },
    /// The four constructions that each drop one assumption.
    Counterexamples {
        #[arg(long, default_value_t = 4)]
        train_len: usize,
    },
    /// Ratio-sum, hybrid and attention-head checks.
    Lemmas {
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        #[arg(long, default_value_t = 4)]
        i_max: usize,
    },
    /// Coupling validation and PC length generalization on the far-pair instance.
    PcCheck {
        #[arg(long, default_value = "transposition")]
        coupling: FarPairCoupling,
        #[arg(long, default_value_t = 8)]
        train_len: usize,
        #[arg(long, default_value_t = 12)]
        test_len: usize,
    },
    /// Predictive position coupling on variable assignment.
    PpcDemo {
        #[arg(long, default_value_t = 200)]
        max_len: usize,
        #[arg(long, default_value_t = 5)]
        max_depth: usize,
        #[arg(long, default_value_t = 256)]
        vars: usize,
        #[arg(long, default_value_t = 200)]
        count: usize,
    },
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn instance(source: &Source, train_len: usize, max_len: usize) -> Result<Instance> {
    match (&source.instance, &source.ensemble, &source.family) {
        (Some(name), _, _) => runs::builtin(name, train_len, max_len),
        (None, Some(e), Some(f)) => runs::from_files(&read(e)?, &read(f)?),
        _ => bail!("name an instance with --instance or give --ensemble and --family"),
    }
}

fn exact_only(cli: &Cli) -> Result<()> {
    ensure!(cli.mode == Mode::Exact, "--mode mc is only supported by `risk`");
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<Report> {
    let (seed, budget) = (cli.seed, cli.budget);
    if !matches!(
        cli.command,
        Command::Risk { .. } | Command::Lemmas { .. } | Command::Generate { .. } | Command::PpcDemo { .. }
    ) {
        exact_only(cli)?;
    }
    match &cli.command {
        Command::Generate { .. } => unreachable!("generate writes a dataset"),
        Command::Risk { source, lengths, train_len } => {
            let top = lengths.iter().copied().max().unwrap_or(1);
            let inst = instance(source, *train_len, top)?;
            let mode = match cli.mode {
                Mode::Exact => RiskMode::Exact { budget },
                Mode::Mc => RiskMode::MonteCarlo { samples: cli.samples, seed },
            };
            runs::run_risk(&inst, lengths, mode, seed)
        }
        Command::LgCheck { source, train_len, test_len, epsilon } => {
            let inst = instance(source, *train_len, *test_len)?;
            runs::run_lg_check(&inst, *train_len, *test_len, *epsilon, budget, seed)
        }
        Command::Theorem { instance, ensemble, family, delta, window, train_len, test_lens } => {
            let top = test_lens.iter().copied().max().unwrap_or(*train_len);
            let cases = match (instance.as_deref(), ensemble, family) {
                (_, Some(e), Some(f)) => {
                    let inst = runs::from_files(&read(e)?, &read(f)?)?;
                    vec![runs::file_theorem_case(inst, delta.unwrap_or(0.0), *window)]
                }
                (None, _, _) => runs::default_theorem_cases(top)?,
                (Some("delta0"), _, _) => vec![runs::theorem_case(TheoremInstance::Exact, top)?],
                (Some("perturbed"), _, _) => vec![runs::theorem_case(TheoremInstance::Perturbed, top)?],
                (Some(other), _, _) => bail!("unknown theorem instance `{other}`; expected delta0 or perturbed"),
            };
            runs::run_theorem(&cases, *train_len, test_lens, budget, seed)
        }
        Command::Counterexamples { train_len } => runs::run_counterexamples(*train_len, budget, seed),
        Command::Lemmas { trials, i_max } => {
            exact_only(cli)?;
            runs::run_lemmas(*trials, cli.samples, *i_max, seed)
        }
        Command::PcCheck { coupling, train_len, test_len } => {
            runs::run_pc_check(*coupling, *train_len, *test_len, budget, seed)
        }
        Command::PpcDemo { max_len, max_depth, vars, count } => {
            exact_only(cli)?;
            runs::run_ppc_demo(*max_len, *max_depth, *vars, *count, seed)
        }
    }
}

fn generate(cli: &Cli) -> Result<Report> {
    let Command::Generate {
        task,
        min_len,
        max_len,
        count,
        k,
        n,
        jump,
        depth,
        vars,
        alphabet,
        positions,
        max_position_id,
    } = &cli.command
    else {
        unreachable!()
    };
    exact_only(cli)?;
    ensure!(cli.format == Format::Json, "generate writes JSONL; --format csv is not supported");
    let vocab_size = match task.as_str() {
        "sparse_parity" => *n,
        "variable_assignment" => *vars,
        "string_reversal" => *alphabet,
        _ => 0,
    };
    let cfg = GenerateConfig {
        task: task.clone(),
        min_length: *min_len,
        max_length: *max_len,
        num_examples: *count,
        k: *k,
        vocab_size,
        jump: *jump,
        depth: *depth,
        positions: *positions,
        max_position_id: *max_position_id,
    };
    let data = runs::run_generate(&cfg, cli.seed)?;
    match &cli.out {
        Some(dir) => {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            fs::write(dir.join(format!("{task}.jsonl")), &data.jsonl)?;
            fs::write(dir.join("manifest.json"), data.manifest.to_json()?)?;
        }
        None => print!("{}", data.jsonl),
    }
    Ok(data.manifest)
}

/// Parses `args` (program name first) and runs the subcommand.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let outcome = if matches!(cli.command, Command::Generate { .. }) {
        generate(&cli)
    } else {
        dispatch(&cli).and_then(|r| emit(&r, cli.format, cli.out.as_deref()).map(|_| r))
    };
    match outcome {
        Ok(r) => {
            for f in &r.findings {
                eprintln!("finding: {f}");
            }
            if r.passed {
                0
            } else {
                1
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            2
        }
    }
}
