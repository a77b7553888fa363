//! Command-line surface for the generalized association study library.

use clap::{Args, Parser, Subcommand};
use gasso::archive::{ArchiveMetadata, ModelArchive, FORMAT_VERSION};
use gasso::association;
use gasso::data::{self, FamilyDecl, Manifest};
use gasso::error::{GassoError, Result};
use gasso::fitter::{self, FitConfig, SparsityRule};
use gasso::model::{self, Ranks};
use gasso::numkit::Vector;
use gasso::predictor;
use gasso::rankselect;
use gasso::simgen::{self, SettingSpec};
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "gasso",
    about = "Joint low-rank association analysis of two heterogeneous data blocks",
    version
)]
struct Cli {
    /// Worker threads (default: GASSO_THREADS env var, then all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct InputArgs {
    /// Manifest file naming both blocks (key = value format)
    #[arg(long, conflicts_with_all = ["block1", "block2"])]
    manifest: Option<PathBuf>,
    /// CSV for the first block (header row, sample-ID column first)
    #[arg(long, requires = "block2")]
    block1: Option<PathBuf>,
    /// CSV for the second block
    #[arg(long, requires = "block1")]
    block2: Option<PathBuf>,
    /// Family of block 1: gaussian|bernoulli|poisson, or a per-column list
    #[arg(long, default_value = "gaussian")]
    family1: String,
    /// Family of block 2
    #[arg(long, default_value = "gaussian")]
    family2: String,
}

#[derive(Args)]
struct FitFlags {
    /// Fitting mode
    #[arg(long, default_value = "onestep", value_parser = ["full", "onestep", "sparse"])]
    mode: String,
    /// Ridge penalty applied to Bernoulli-involved updates
    #[arg(long)]
    ridge: Option<f64>,
    /// Relative log-likelihood convergence tolerance
    #[arg(long)]
    tol: Option<f64>,
    /// Maximum outer sweeps
    #[arg(long)]
    max_iter: Option<usize>,
    /// Sparse mode: zero this fraction of each block's loading entries per
    /// column instead of the asymptotic threshold
    #[arg(long)]
    sparse_fraction: Option<f64>,
}

impl FitFlags {
    fn config(&self) -> Result<FitConfig> {
        let mut cfg = match self.mode.as_str() {
            "full" => FitConfig::full(),
            "onestep" => FitConfig::one_step(),
            "sparse" => FitConfig::one_step_sparse(match self.sparse_fraction {
                Some(f) => SparsityRule::QuantileFraction(f),
                None => SparsityRule::Asymptotic,
            }),
            other => return Err(GassoError::Parse(format!("unknown mode '{other}'"))),
        };
        if self.mode != "sparse" && self.sparse_fraction.is_some() {
            return Err(GassoError::Parse(
                "--sparse-fraction requires --mode sparse".into(),
            ));
        }
        if let Some(r) = self.ridge {
            cfg.ridge_bernoulli = r;
        }
        if let Some(t) = self.tol {
            cfg.tol = t;
        }
        if let Some(m) = self.max_iter {
            cfg.max_iter = m;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Fit the joint/individual decomposition and write a model archive
    Fit {
        #[command(flatten)]
        input: InputArgs,
        /// Ranks as r0,r1,r2
        #[arg(long)]
        ranks: String,
        #[command(flatten)]
        flags: FitFlags,
        /// Output archive path (directory when --format text)
        #[arg(long)]
        out: PathBuf,
        /// Archive container format
        #[arg(long, default_value = "binary", value_parser = ["binary", "text"])]
        format: String,
        /// Also write the log-likelihood trace as CSV
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Seed recorded in the archive metadata
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Association coefficient and permutation test on a fitted archive
    AssocTest {
        /// Model archive (binary file or text directory)
        #[arg(long)]
        model: PathBuf,
        /// Number of permutations B
        #[arg(long, default_value_t = 1000)]
        permutations: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the full report (JSON, including the null samples) here
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate the joint and individual ranks by cross-validation
    Ranks {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, default_value_t = 10)]
        folds: usize,
        #[arg(long, default_value_t = 10)]
        max_rank: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        flags: FitFlags,
        /// Write CV score tables (CSV) with this path prefix
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predict block-2 probabilities for new block-1 rows
    Annotate {
        #[arg(long)]
        model: PathBuf,
        /// CSV of new block-1 rows (same columns as the training block)
        #[arg(long)]
        query: PathBuf,
        /// Optional file with one tag name per line (defaults to indices)
        #[arg(long)]
        tags: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        top_k: usize,
        /// Output CSV (defaults to stdout)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rank training samples by score-space distance to a binary query
    Retrieve {
        #[arg(long)]
        model: PathBuf,
        /// CSV of binary query rows over the block-2 columns
        #[arg(long)]
        query: PathBuf,
        #[arg(long, default_value_t = 10)]
        top_k: usize,
        /// Ridge added to the score covariance before inversion
        #[arg(long)]
        ridge: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a simulation benchmark and emit a summary table
    Simulate {
        /// Built-in setting number (1-4)
        #[arg(long)]
        setting: u32,
        #[arg(long, default_value_t = 50)]
        replicates: usize,
        /// Comma-separated list of modes to compare
        #[arg(long, default_value = "onestep")]
        mode: String,
        /// Fit at these ranks instead of the truth (r0,r1,r2)
        #[arg(long)]
        rank_override: Option<String>,
        /// Generate sparse joint loadings at this quantile fraction
        #[arg(long)]
        sparse: Option<f64>,
        /// Override both block dimensions (scales signal strength to match)
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the per-metric table as CSV
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the identifiability report of an archive
    Check {
        #[arg(long)]
        model: PathBuf,
        /// Violation tolerance
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
    },
}

fn parse_ranks(s: &str) -> Result<Ranks> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(GassoError::Parse(format!(
            "ranks must be r0,r1,r2 — got '{s}'"
        )));
    }
    let parse = |t: &str| {
        t.trim()
            .parse::<usize>()
            .map_err(|_| GassoError::Parse(format!("bad rank '{t}'")))
    };
    Ok(Ranks::new(parse(parts[0])?, parse(parts[1])?, parse(parts[2])?))
}

fn load_inputs(input: &InputArgs) -> Result<(data::CsvBlock, data::CsvBlock)> {
    if let Some(manifest_path) = &input.manifest {
        let manifest = Manifest::load(manifest_path)?;
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        let (b1, b2, _s1, _s2) = manifest.load_blocks(base)?;
        Ok((b1, b2))
    } else {
        let (Some(p1), Some(p2)) = (&input.block1, &input.block2) else {
            return Err(GassoError::Parse(
                "provide either --manifest or both --block1 and --block2".into(),
            ));
        };
        let b1 = data::read_block(p1, &FamilyDecl::parse(&input.family1)?)?;
        let b2 = data::read_block(p2, &FamilyDecl::parse(&input.family2)?)?;
        if b1.sample_ids != b2.sample_ids {
            return Err(GassoError::Domain(
                "sample IDs of the two blocks do not match in order".into(),
            ));
        }
        Ok((b1, b2))
    }
}

fn load_archive(path: &Path) -> Result<ModelArchive> {
    if path.is_dir() {
        ModelArchive::read_text(path)
    } else {
        ModelArchive::read_binary(path)
    }
}

fn open_out(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(std::io::BufWriter::new(std::fs::File::create(p)?)),
        None => Box::new(std::io::stdout()),
    })
}

fn run() -> Result<i32> {
    let cli = Cli::parse();
    let threads = cli.threads.or_else(|| {
        std::env::var("GASSO_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(t) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| GassoError::Other(format!("thread pool: {e}")))?;
    }

    match cli.command {
        Command::Fit {
            input,
            ranks,
            flags,
            out,
            format,
            trace,
            seed,
        } => {
            let (b1, b2) = load_inputs(&input)?;
            let ranks = parse_ranks(&ranks)?;
            let cfg = flags.config()?;
            let fit = fitter::fit(&b1.block, &b2.block, ranks, &cfg)?;
            if let Some(trace_path) = trace {
                let mut w = std::io::BufWriter::new(std::fs::File::create(trace_path)?);
                writeln!(w, "sweep,loglik")?;
                for (i, ll) in fit.loglik_trace.iter().enumerate() {
                    writeln!(w, "{i},{ll:.10e}")?;
                }
            }
            let metadata = ArchiveMetadata {
                version: FORMAT_VERSION,
                families1: b1.block.families.clone(),
                families2: b2.block.families.clone(),
                ranks,
                seed,
            };
            let arch = ModelArchive::new(fit.params, metadata)?;
            match format.as_str() {
                "text" => arch.write_text(&out)?,
                _ => arch.write_binary(&out)?,
            }
            eprintln!(
                "fit: {} sweeps, converged = {}, final loglik = {:.6e}",
                fit.iterations,
                fit.converged,
                fit.loglik_trace.last().copied().unwrap_or(f64::NAN)
            );
            Ok(0)
        }
        Command::AssocTest {
            model,
            permutations,
            seed,
            out,
        } => {
            let arch = load_archive(&model)?;
            let (t1, t2) = model::natural_parameters(&arch.params)?;
            let test = association::permutation_test(&t1, &t2, permutations, seed)?;
            println!("rho0 = {:.6}", test.rho);
            println!("permutations = {}", test.permutations);
            println!("p_value (add-one) = {:.6}", test.p_value);
            println!("p_value (raw)     = {:.6}", test.p_value_raw);
            if let Some(out_path) = out {
                let report = serde_json::json!({
                    "rho0": test.rho,
                    "permutations": test.permutations,
                    "p_value": test.p_value,
                    "p_value_raw": test.p_value_raw,
                    "null_rhos": test.null_rhos,
                });
                std::fs::write(out_path, serde_json::to_string_pretty(&report).unwrap())?;
            }
            Ok(0)
        }
        Command::Ranks {
            input,
            folds,
            max_rank,
            seed,
            flags,
            out,
        } => {
            let (b1, b2) = load_inputs(&input)?;
            let cfg = flags.config()?;
            let est =
                rankselect::estimate_ranks(&b1.block, &b2.block, folds, max_rank, seed, &cfg)?;
            println!(
                "block-1 rank = {}, block-2 rank = {}, concatenated rank = {}",
                est.r1_star, est.r2_star, est.r0_star
            );
            println!(
                "ranks: r0 = {}, r1 = {}, r2 = {}{}",
                est.ranks.r0,
                est.ranks.r1,
                est.ranks.r2,
                if est.clamped { "  (clamped)" } else { "" }
            );
            if let Some(prefix) = out {
                let prefix = prefix.to_string_lossy();
                for (name, result) in [
                    ("block1", &est.block1),
                    ("block2", &est.block2),
                    ("concat", &est.concatenated),
                ] {
                    let mut w = std::io::BufWriter::new(std::fs::File::create(format!(
                        "{prefix}{name}.csv"
                    ))?);
                    write!(w, "rank")?;
                    for l in 0..folds {
                        write!(w, ",fold{l}")?;
                    }
                    writeln!(w, ",median")?;
                    for (c, &r) in result.candidates.iter().enumerate() {
                        write!(w, "{r}")?;
                        for cell in &result.scores[c] {
                            match cell {
                                Some(v) => write!(w, ",{v:.10e}")?,
                                None => write!(w, ",")?,
                            }
                        }
                        match result.medians[c] {
                            Some(v) => writeln!(w, ",{v:.10e}")?,
                            None => writeln!(w, ",")?,
                        }
                    }
                }
            }
            Ok(0)
        }
        Command::Annotate {
            model,
            query,
            tags,
            top_k,
            out,
        } => {
            let arch = load_archive(&model)?;
            let decl = FamilyDecl::PerColumn(arch.metadata.families1.clone());
            let q = data::read_block(&query, &decl)?;
            let tag_names: Vec<String> = match tags {
                Some(p) => std::fs::read_to_string(p)?
                    .lines()
                    .map(|l| l.trim().to_string())
                    .filter(|l| !l.is_empty())
                    .collect(),
                None => (0..arch.params.p2()).map(|j| format!("tag{j}")).collect(),
            };
            if tag_names.len() != arch.params.p2() {
                return Err(GassoError::Dimension(format!(
                    "{} tag names for {} block-2 columns",
                    tag_names.len(),
                    arch.params.p2()
                )));
            }
            let mut w = open_out(&out)?;
            writeln!(w, "id,rank,tag_index,tag,probability")?;
            for (i, id) in q.sample_ids.iter().enumerate() {
                let row: Vector = q.block.x.row(i).transpose();
                let ann =
                    predictor::annotate(&arch.params, &row, &arch.metadata.families1)?;
                for (rank, &j) in predictor::top_k_indices(&ann.probabilities, top_k)?
                    .iter()
                    .enumerate()
                {
                    writeln!(
                        w,
                        "{id},{},{j},{},{:.6}",
                        rank + 1,
                        tag_names[j],
                        ann.probabilities[j]
                    )?;
                }
            }
            Ok(0)
        }
        Command::Retrieve {
            model,
            query,
            top_k,
            ridge,
            out,
        } => {
            let arch = load_archive(&model)?;
            let q = data::read_block(
                &query,
                &FamilyDecl::Uniform(gasso::Family::Bernoulli),
            )?;
            let index = predictor::build_score_index(&arch.params, ridge, None)?;
            let mut w = open_out(&out)?;
            writeln!(w, "query_id,rank,sample_index,distance")?;
            for (i, id) in q.sample_ids.iter().enumerate() {
                let row: Vector = q.block.x.row(i).transpose();
                let ret = predictor::retrieve(&arch.params, &index, &row)?;
                for (rank, &s) in ret.ranking.iter().take(top_k).enumerate() {
                    writeln!(w, "{id},{},{s},{:.6}", rank + 1, ret.distances[s])?;
                }
            }
            Ok(0)
        }
        Command::Simulate {
            setting,
            replicates,
            mode,
            rank_override,
            sparse,
            dim,
            seed,
            out,
        } => {
            let mut spec = match (setting, dim) {
                (1, None) => SettingSpec::setting1(seed),
                (2, None) => SettingSpec::setting2(seed),
                (3, None) => SettingSpec::setting3(seed),
                (3, Some(p)) => SettingSpec::setting3_with_dim(p, seed),
                (4, None) => SettingSpec::setting4(seed),
                (s, Some(_)) => {
                    return Err(GassoError::Parse(format!(
                        "--dim is only supported for setting 3, not {s}"
                    )))
                }
                (s, None) => {
                    return Err(GassoError::Parse(format!("unknown setting {s}")))
                }
            };
            if let Some(f) = sparse {
                spec = simgen::sparsify(&spec, f)?;
            }
            let modes: Vec<(String, FitConfig)> = mode
                .split(',')
                .map(|m| {
                    let cfg = match m.trim() {
                        "full" => FitConfig::full(),
                        "onestep" => FitConfig::one_step(),
                        "sparse" => FitConfig::one_step_sparse(SparsityRule::Asymptotic),
                        other => {
                            return Err(GassoError::Parse(format!("unknown mode '{other}'")))
                        }
                    };
                    Ok((m.trim().to_string(), cfg))
                })
                .collect::<Result<_>>()?;
            let over = rank_override.as_deref().map(parse_ranks).transpose()?;
            let report = simgen::run_benchmark(&spec, replicates, &modes, over)?;
            println!("{} — {} replicates", spec.id, replicates);
            for m in &report.modes {
                println!("\nmode: {} ({} failures)", m.label, m.failures);
                println!("{:>12}  {:>12}  {:>12}", "metric", "median", "MAD");
                for ((name, med), mad) in simgen::METRIC_NAMES
                    .iter()
                    .zip(m.median.fields())
                    .zip(m.mad.fields())
                {
                    println!("{name:>12}  {med:12.4}  {mad:12.4}");
                }
            }
            if let Some(out_path) = out {
                let mut w = std::io::BufWriter::new(std::fs::File::create(out_path)?);
                writeln!(w, "mode,metric,median,mad")?;
                for m in &report.modes {
                    for ((name, med), mad) in simgen::METRIC_NAMES
                        .iter()
                        .zip(m.median.fields())
                        .zip(m.mad.fields())
                    {
                        writeln!(w, "{},{name},{med:.10e},{mad:.10e}", m.label)?;
                    }
                }
            }
            Ok(0)
        }
        Command::Check { model, tol } => {
            let arch = load_archive(&model)?;
            let report = model::identifiability_report(&arch.params, tol);
            println!("{report}");
            Ok(if report.pass() { 0 } else { 2 })
        }
    }
}

fn main() {
    match run() {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(1);
        }
    }
}
