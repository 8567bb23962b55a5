use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use flate2::read::GzDecoder;

use son_core::data::{gen_synthetic, read_libsvm, Example, SyntheticSpec};
use son_core::experiment::{eigen_recovery_track, run_experiment, sweep, Algo, EigenPoint, RunConfig, RunReport};
use son_core::{Error, EtaMode, SparseVec};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AlgoArg {
    SonOja,
    SonFd,
    SonFull,
    Adagrad,
    Ogd,
}

impl From<AlgoArg> for Algo {
    fn from(a: AlgoArg) -> Algo {
        match a {
            AlgoArg::SonOja => Algo::SonOja,
            AlgoArg::SonFd => Algo::SonFd,
            AlgoArg::SonFull => Algo::SonFull,
            AlgoArg::Adagrad => Algo::AdaGrad,
            AlgoArg::Ogd => Algo::Ogd,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum EtaArg {
    Convex,
    Curvature,
}

/// One online pass of a learner over a dataset, with progressive error.
#[derive(Debug, Parser)]
#[command(name = "son", version)]
struct Args {
    /// Libsvm file, optionally gzip-compressed.
    #[arg(long, value_name = "PATH", conflicts_with = "synthetic", required_unless_present = "synthetic")]
    data: Option<PathBuf>,

    /// Synthetic ill-conditioned stream `T,d,kappa`.
    #[arg(long, value_name = "T,d,kappa")]
    synthetic: Option<String>,

    /// Feature dimension; inferred from the largest index when omitted.
    #[arg(long)]
    dim: Option<usize>,

    #[arg(long, value_enum, default_value = "son-oja")]
    algo: AlgoArg,

    #[arg(long, default_value_t = 10)]
    sketch_size: usize,

    /// Regularizer; `1/alpha` is the stepsize.
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,

    /// Prediction bound.
    #[arg(long = "C", default_value_t = 1.0)]
    c: f64,

    #[arg(long, value_enum, default_value = "curvature")]
    eta_mode: EtaArg,

    /// Feed `D^{-1/2} x` with `D` the running diagonal of squared gradients.
    #[arg(long)]
    diag_precondition: bool,

    /// Try stepsizes `2^j`, `j = -3..6`, and report the best.
    #[arg(long)]
    sweep: bool,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// CSV of checkpoints.
    #[arg(long, value_name = "CSV")]
    out: Option<PathBuf>,

    #[arg(long, default_value_t = 100)]
    checkpoint_every: usize,

    /// Track Oja eigenvalue estimates against the empirical second moment.
    #[arg(long)]
    track_eigs: bool,
}

enum Failure {
    Config(String),
    Data(String),
    Other(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Failure {
        match e {
            Error::InvalidConfig(_) => Failure::Config(e.to_string()),
            Error::Parse { .. } | Error::Io { .. } | Error::InvalidInput(_) => Failure::Data(e.to_string()),
            Error::Degenerate(_) => Failure::Other(e.to_string()),
        }
    }
}

fn parse_synthetic(s: &str, seed: u64) -> Result<SyntheticSpec, Failure> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let bad = || Failure::Config(format!("--synthetic expects T,d,kappa, got {s:?}"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let spec = SyntheticSpec {
        t: parts[0].parse().map_err(|_| bad())?,
        d: parts[1].parse().map_err(|_| bad())?,
        kappa: parts[2].parse().map_err(|_| bad())?,
        seed,
    };
    spec.validate()?;
    Ok(spec)
}

fn open_data(path: &Path) -> Result<Box<dyn BufRead>, Failure> {
    let io = |e: std::io::Error| Failure::Data(format!("{}: {e}", path.display()));
    let mut file = BufReader::new(File::open(path).map_err(io)?);
    let gz = file.fill_buf().map_err(io)?.starts_with(&[0x1f, 0x8b]);
    Ok(if gz { Box::new(BufReader::new(GzDecoder::new(file))) } else { Box::new(file) as Box<dyn BufRead> })
}

fn load(args: &Args) -> Result<Vec<Example>, Failure> {
    if let Some(s) = &args.synthetic {
        return Ok(gen_synthetic(&parse_synthetic(s, args.seed)?)?);
    }
    let path = args.data.as_ref().expect("clap requires --data or --synthetic");
    let reader = open_data(path)?;
    read_libsvm(reader, args.dim).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn write_csv(path: &Path, report: &RunReport) -> Result<(), Failure> {
    let io = |e: std::io::Error| Failure::Other(format!("{}: {e}", path.display()));
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    writeln!(w, "round,progressive_error,cumulative_loss").map_err(io)?;
    for c in &report.checkpoints {
        writeln!(w, "{},{},{}", c.round, c.progressive_error, c.cumulative_loss).map_err(io)?;
    }
    w.flush().map_err(io)
}

fn write_eigs(path: &Path, trace: &[EigenPoint]) -> Result<(), Failure> {
    let io = |e: std::io::Error| Failure::Other(format!("{}: {e}", path.display()));
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    writeln!(w, "round,max_rel_error").map_err(io)?;
    for p in trace {
        writeln!(w, "{},{}", p.round, p.max_rel_error).map_err(io)?;
    }
    w.flush().map_err(io)
}

fn eigs_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}_eigs.csv"))
}

fn summary(r: &RunReport) -> String {
    format!(
        "algo={} m={} alpha={} rounds={} final_error={:.6} cumulative_loss={:.6} seconds={:.3}",
        r.config.algo.name(),
        r.config.sketch_size,
        r.config.alpha,
        r.rounds,
        r.final_error(),
        r.cumulative_loss,
        r.wall_time.as_secs_f64()
    )
}

fn run(args: Args) -> Result<(), Failure> {
    let cfg = RunConfig {
        algo: args.algo.into(),
        sketch_size: args.sketch_size,
        alpha: args.alpha,
        c: args.c,
        eta_mode: match args.eta_mode {
            EtaArg::Convex => EtaMode::Convex,
            EtaArg::Curvature => EtaMode::Curvature,
        },
        diag_precondition: args.diag_precondition,
        checkpoint_every: args.checkpoint_every,
        seed: args.seed,
    };
    if cfg.checkpoint_every == 0 {
        return Err(Failure::Config("--checkpoint-every must be positive".into()));
    }
    let data = load(&args)?;
    if data.is_empty() {
        return Err(Failure::Data("no examples".into()));
    }

    let report = if args.sweep {
        let s = sweep(&cfg, &data)?;
        for r in &s.runs {
            println!("sweep {}", summary(r));
        }
        s.best_run().clone()
    } else {
        run_experiment(&cfg, &data)?
    };
    if let Some(out) = &args.out {
        write_csv(out, &report)?;
    }

    if args.track_eigs {
        let stream: Vec<SparseVec> = data.iter().map(|e| e.features.clone()).collect();
        let every = cfg.checkpoint_every;
        let points: Vec<usize> = (1..=stream.len()).filter(|t| t % every == 0).collect();
        let trace = eigen_recovery_track(&stream, cfg.sketch_size, &points)?;
        match &args.out {
            Some(out) => write_eigs(&eigs_path(out), &trace)?,
            None => {
                for p in &trace {
                    println!("eigs round={} max_rel_error={:.6}", p.round, p.max_rel_error);
                }
            }
        }
    }
    println!("{}", summary(&report));
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
        Err(Failure::Other(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Read;

    #[test]
    fn synthetic_spec_parsing() {
        let s = parse_synthetic("100, 20,5", 7).ok().unwrap();
        assert_eq!((s.t, s.d, s.kappa, s.seed), (100, 20, 5.0, 7));
        assert!(matches!(parse_synthetic("100,20", 0), Err(Failure::Config(_))));
        assert!(matches!(parse_synthetic("100,5,2", 0), Err(Failure::Config(_))));
    }

    #[test]
    fn eigs_file_sits_next_to_csv() {
        assert_eq!(eigs_path(Path::new("/tmp/run.csv")), PathBuf::from("/tmp/run_eigs.csv"));
    }

    #[test]
    fn error_classes() {
        assert!(matches!(Failure::from(Error::InvalidConfig("x".into())), Failure::Config(_)));
        assert!(matches!(Failure::from(Error::Parse { line: 1, msg: "x".into() }), Failure::Data(_)));
    }

    #[test]
    fn reads_plain_and_gzip() {
        let dir = tempfile::tempdir().unwrap();
        let plain = dir.path().join("a.svm");
        std::fs::write(&plain, "1 1:1\n").unwrap();
        let mut s = String::new();
        open_data(&plain).ok().unwrap().read_to_string(&mut s).unwrap();
        assert_eq!(s, "1 1:1\n");

        let gz = dir.path().join("a.svm.gz");
        let mut enc = flate2::write::GzEncoder::new(File::create(&gz).unwrap(), flate2::Compression::default());
        enc.write_all(b"0 2:3\n").unwrap();
        enc.finish().unwrap();
        let mut s = String::new();
        open_data(&gz).ok().unwrap().read_to_string(&mut s).unwrap();
        assert_eq!(s, "0 2:3\n");
    }
}
