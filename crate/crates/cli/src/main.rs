use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fracstable::classifier::{classify_cfsm, uniqueness_search, ClassifierConfig, OverallVerdict, UniquenessVerdict};
use fracstable::flow::flow_report;
use fracstable::integrability::{cq_norm, lalpha_increment_norm, sufficient_conditions, QuadratureConfig};
use fracstable::line::Status;
use fracstable::oracle::{char_report, self_similarity_residual};
use fracstable::registry::{self, RegistryOptions};
use fracstable::simulator::{simulate_paths, SimulationGrid};
use fracstable::{KernelSpec, StableParams};
use serde::Serialize;
use serde_json::json;

const EXIT_INVALID: u8 = 2;
const EXIT_INCONCLUSIVE: u8 = 3;

#[derive(Parser)]
#[command(
    name = "fracstable",
    version,
    about = "Periodic and cyclic fractional stable motions"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args)]
struct Global {
    /// Seed for every random draw.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (all cores when omitted).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Relative tolerance of the quadratures.
    #[arg(long = "rel-tol", global = true)]
    rel_tol: Option<f64>,
    /// Output file; stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Sufficient conditions and the increment norm at t = 1.
    Check {
        #[arg(long)]
        spec: PathBuf,
    },
    /// L^alpha norm of G_t, or the C^q norm with --cq.
    Norm {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
        t: f64,
        #[arg(long)]
        cq: bool,
    },
    /// Characteristic exponent of sum_j theta_j X(t_j).
    Charfn {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, value_parser = parse_list, allow_negative_numbers = true)]
        t: Vec1,
        #[arg(long, value_parser = parse_list, allow_negative_numbers = true)]
        theta: Vec1,
    },
    /// Self-similarity residual at scale a.
    Selfsim {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        a: f64,
        #[arg(long, value_parser = parse_list, default_value = "1", allow_negative_numbers = true)]
        t: Vec1,
        #[arg(long, value_parser = parse_list, default_value = "1", allow_negative_numbers = true)]
        theta: Vec1,
    },
    /// Cyclic / fixed-point classification of every atom.
    Classify {
        #[arg(long)]
        spec: PathBuf,
    },
    /// Affine search for G_a(0, u) = h G_b(0, k u + g) + j.
    Unique {
        #[arg(long = "spec-a")]
        spec_a: PathBuf,
        #[arg(long = "spec-b")]
        spec_b: PathBuf,
    },
    /// Residuals of the flow, cocycle and generation relations.
    VerifyFlow {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
    },
    /// Monte Carlo paths as CSV rows `rep,t,value`.
    Simulate {
        #[arg(long)]
        spec: PathBuf,
        /// `a:step:b` or a comma-separated list.
        #[arg(long, value_parser = parse_times, allow_negative_numbers = true)]
        t: Vec1,
        #[arg(long, default_value_t = 1000)]
        reps: usize,
        #[arg(long = "u-cells")]
        u_cells: Option<usize>,
        #[arg(long = "v-cells")]
        v_cells: Option<usize>,
    },
    /// Write a registry kernel as a spec file.
    Registry {
        #[arg(long)]
        name: String,
        #[arg(long)]
        alpha: f64,
        #[arg(long = "H")]
        h: f64,
        /// Quadrature nodes of the cosine mixing measure.
        #[arg(long = "cosine-nodes")]
        cosine_nodes: Option<usize>,
    },
}

// clap treats a bare Vec<T> as a repeated argument
#[derive(Clone, Debug)]
struct Vec1(Vec<f64>);

fn parse_list(s: &str) -> Result<Vec1, String> {
    s.split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| format!("{x:?}: {e}")))
        .collect::<Result<Vec<_>, _>>()
        .map(Vec1)
}

fn parse_times(s: &str) -> Result<Vec1, String> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return parse_list(s);
    }
    let num = |x: &str| x.trim().parse::<f64>().map_err(|e| format!("{x:?}: {e}"));
    let (a, step, b) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
    if !(step > 0.0 && b >= a && a.is_finite() && b.is_finite()) {
        return Err("need a:step:b with step > 0 and b >= a".into());
    }
    let n = ((b - a) / step + 1e-9).floor() as usize;
    if n > 1_000_000 {
        return Err("more than a million time points".into());
    }
    Ok(Vec1((0..=n).map(|i| step.mul_add(i as f64, a)).collect()))
}

/// A failed run and its exit code.
struct Failure {
    code: u8,
    msg: String,
}

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure {
            code: EXIT_INVALID,
            msg: e.to_string(),
        }
    }
}

fn load(path: &Path) -> Result<KernelSpec, Failure> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    KernelSpec::from_json(&text).map_err(|e| format!("{}: {e}", path.display()).into())
}

fn sink(out: &Option<PathBuf>) -> Result<Box<dyn Write>, Failure> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(
            fs::File::create(p).map_err(|e| format!("{}: {e}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn emit<T: Serialize>(out: &Option<PathBuf>, value: &T) -> Result<(), Failure> {
    let mut w = sink(out)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// Exit code for a numerical verdict.
fn verdict(inconclusive: bool) -> u8 {
    if inconclusive {
        EXIT_INCONCLUSIVE
    } else {
        0
    }
}

fn run(cli: Cli) -> Result<u8, Failure> {
    let g = cli.global;
    if let Some(n) = g.threads {
        if n == 0 {
            return Err("--threads must be positive".into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let mut quad = QuadratureConfig::default();
    if let Some(r) = g.rel_tol {
        quad.rel_tol = r;
    }
    quad.validate()?;
    let out = &g.out;

    match cli.cmd {
        Command::Registry {
            name,
            alpha,
            h,
            cosine_nodes,
        } => {
            let mut opts = RegistryOptions::default();
            if let Some(n) = cosine_nodes {
                opts.cosine_nodes = n;
            }
            let spec = registry::build_with(&name, StableParams::new(alpha, h)?, &opts)?;
            let mut w = sink(out)?;
            writeln!(w, "{}", spec.to_json())?;
            w.flush()?;
            Ok(0)
        }
        Command::Check { spec } => {
            let spec = load(&spec)?;
            let atoms: Vec<_> = spec
                .atoms
                .iter()
                .map(|a| sufficient_conditions(a, &spec.params))
                .collect();
            let sufficient = atoms.iter().all(|a| a.sufficient);
            let norm = lalpha_increment_norm(&spec, 1.0, &quad)?;
            // the sufficient conditions settle the question; otherwise the quadrature does
            let well_defined = match norm.status {
                _ if sufficient => Some(true),
                Status::Converged => Some(true),
                Status::Divergent => Some(false),
                Status::Inconclusive => None,
            };
            emit(
                out,
                &json!({
                    "label": spec.label,
                    "well_defined": well_defined,
                    "sufficient_conditions": { "sufficient": sufficient, "atoms": atoms },
                    "norm": norm,
                }),
            )?;
            Ok(verdict(well_defined.is_none()))
        }
        Command::Norm { spec, t, cq } => {
            let spec = load(&spec)?;
            let r = if cq {
                cq_norm(&spec, &quad)?
            } else {
                lalpha_increment_norm(&spec, t, &quad)?
            };
            emit(out, &r)?;
            Ok(verdict(r.status == Status::Inconclusive))
        }
        Command::Charfn { spec, t, theta } => {
            let spec = load(&spec)?;
            let r = char_report(&spec, &[(t.0, theta.0)], &quad)?;
            emit(out, &r)?;
            Ok(verdict(r.entries.iter().any(|e| !e.converged)))
        }
        Command::Selfsim { spec, a, t, theta } => {
            let spec = load(&spec)?;
            let r = self_similarity_residual(&spec, a, &t.0, &theta.0, &quad)?;
            emit(
                out,
                &json!({ "label": spec.label, "a": a, "t": t.0, "theta": theta.0, "residual": r }),
            )?;
            Ok(verdict(!r.converged))
        }
        Command::Classify { spec } => {
            let r = classify_cfsm(&load(&spec)?, &ClassifierConfig::default())?;
            emit(out, &r)?;
            Ok(verdict(r.verdict == OverallVerdict::Inconclusive))
        }
        Command::Unique { spec_a, spec_b } => {
            let r = uniqueness_search(&load(&spec_a)?, &load(&spec_b)?, &ClassifierConfig::default())?;
            emit(out, &r)?;
            Ok(verdict(r.verdict == UniquenessVerdict::Inconclusive))
        }
        Command::VerifyFlow { spec, samples } => {
            let r = flow_report(&load(&spec)?, samples, g.seed)?;
            emit(out, &r)?;
            Ok(0)
        }
        Command::Simulate {
            spec,
            t,
            reps,
            u_cells,
            v_cells,
        } => {
            let spec = load(&spec)?;
            let mut grid = SimulationGrid::new(t.0, g.seed);
            if let Some(n) = u_cells {
                grid.u_cells = n;
            }
            if let Some(n) = v_cells {
                grid.v_cells = n;
            }
            let e = simulate_paths(&spec, &grid, reps)?;
            let mut w = sink(out)?;
            writeln!(w, "rep,t,value")?;
            for rep in 0..reps {
                for (t, x) in grid.t_grid.iter().zip(e.path(rep)) {
                    writeln!(w, "{rep},{t},{x}")?;
                }
            }
            w.flush()?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
