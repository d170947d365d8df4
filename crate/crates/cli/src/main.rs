mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use deeprace::cam::{localize, render_report, CamResult, ReportFormat, DEFAULT_THETA};
use deeprace::corpus::{
    build_manifest, scan_corpus, synth_corpus, Manifest, PatternKind, Split, SynthSpec,
};
use deeprace::eval::evaluate;
use deeprace::frontend::units_of_source;
use deeprace::model::{gradcheck, load_model, save_model, train, Hyperparams, TrainOptions};
use deeprace::mutator::apply_balanced_mutation;
use deeprace::{Error, Model, Result};

use config::{pick, ConfigFile};

const EXIT_FAILURE: u8 = 1;
const EXIT_SOURCE: u8 = 2;
const EXIT_FORMAT: u8 = 3;
const EXIT_USAGE: u8 = 64;

const DEFAULT_SEED: u64 = 42;

/// Learned data-race detection for OpenMP and pthread C sources.
#[derive(Parser, Debug)]
#[command(name = "deeprace", version)]
struct Cli {
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    /// Worker threads for train and eval.
    #[arg(long, global = true, env = "DEEPRACE_JOBS")]
    jobs: Option<usize>,

    /// Fixed-order gradient reduction so runs are byte-reproducible.
    #[arg(long, global = true)]
    deterministic: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// List files under a directory that match a synchronization pattern.
    Scan {
        dir: PathBuf,
        #[arg(long)]
        pattern: PatternKind,
    },
    /// Generate a synthetic clean corpus and its manifest.
    Synth(SynthArgs),
    /// Remove synchronization from a share of the manifest's files.
    Mutate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        ratio: f64,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// Where to write the updated manifest (default: overwrite the input).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the node-class token vector of each unit.
    Tokenize {
        file: PathBuf,
        #[arg(long)]
        pattern: PatternKind,
    },
    /// Train a classifier on the train and val splits of a manifest.
    Train(TrainArgs),
    /// Classify each unit of a source file.
    Predict {
        #[arg(long)]
        model: PathBuf,
        file: PathBuf,
        #[arg(long)]
        pattern: PatternKind,
    },
    /// Highlight the lines that drive a Buggy prediction.
    Localize {
        #[arg(long)]
        model: PathBuf,
        file: PathBuf,
        #[arg(long)]
        pattern: PatternKind,
        /// ansi, html or json.
        #[arg(long, default_value = "ansi")]
        format: String,
        /// Relative heat a line needs to be flagged.
        #[arg(long, default_value_t = DEFAULT_THETA)]
        theta: f64,
    },
    /// Classification and localization metrics on one split.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "val")]
        split: Split,
        #[arg(long, default_value_t = DEFAULT_THETA)]
        theta: f64,
        /// text or json.
        #[arg(long, default_value = "text")]
        format: String,
    },
    /// Compare analytic and numeric gradients on a tiny random model.
    Gradcheck {
        /// Seeds to check; repeat the flag for several.
        #[arg(long = "seed", default_values_t = [0u64, 1, 2])]
        seeds: Vec<u64>,
    },
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// TOML file with n_files, pattern, seed, min_depth, max_depth,
    /// max_filler and ident_pool. Missing keys take their defaults.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the spec file.
    #[arg(long)]
    n_files: Option<usize>,
    #[arg(long)]
    pattern: Option<PatternKind>,
    #[arg(long)]
    seed: Option<u64>,
    /// Train, val and test fractions.
    #[arg(long, default_value = "0.8,0.2,0")]
    split: String,
    /// Manifest path (default: `<out>/manifest.jsonl`).
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Flat key = value file; flags take precedence over it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    filters: Option<usize>,
    /// Comma-separated window sizes.
    #[arg(long)]
    windows: Option<String>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Encoded length; 0 picks the longest training vector.
    #[arg(long)]
    l_max: Option<usize>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    metrics_csv: Option<PathBuf>,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        e if e.is_frontend() => EXIT_SOURCE,
        Error::ModelFormat { .. } | Error::Manifest { .. } | Error::Shape(_) => EXIT_FORMAT,
        Error::InvalidArgument(_) => EXIT_USAGE,
        _ => EXIT_FAILURE,
    }
}

/// Missing or unreadable models are format failures, not generic I/O.
fn open_model(path: &Path) -> std::result::Result<Model, (u8, Error)> {
    load_model(path).map_err(|e| (EXIT_FORMAT, e))
}

fn open_manifest(path: &Path) -> std::result::Result<Manifest, (u8, Error)> {
    Manifest::read(path).map_err(|e| (EXIT_FORMAT, e))
}

fn read_source(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })?;
    Ok(String::from_utf8_lossy(&bytes).into_owned())
}

type Outcome = std::result::Result<(), (u8, Error)>;

trait Classify<T> {
    fn classify(self) -> std::result::Result<T, (u8, Error)>;
}

impl<T> Classify<T> for Result<T> {
    fn classify(self) -> std::result::Result<T, (u8, Error)> {
        self.map_err(|e| (exit_code(&e), e))
    }
}

fn usage(message: impl Into<String>) -> (u8, Error) {
    (EXIT_USAGE, Error::InvalidArgument(message.into()))
}

fn parse_list<T: std::str::FromStr>(
    s: &str,
    what: &str,
) -> std::result::Result<Vec<T>, (u8, Error)> {
    s.split(',')
        .map(|x| x.trim().parse::<T>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| usage(format!("bad {what} list `{s}`")))
}

fn train_options(cli: &Cli) -> TrainOptions {
    TrainOptions {
        deterministic: cli.deterministic,
        jobs: cli.jobs,
        ..Default::default()
    }
}

fn hyperparams(args: &TrainArgs) -> std::result::Result<Hyperparams, (u8, Error)> {
    let cfg = match &args.config {
        Some(p) => ConfigFile::read(p).classify()?,
        None => ConfigFile::default(),
    };
    let d = Hyperparams::default();
    let windows = match &args.windows {
        Some(w) => Some(w.clone()),
        None => cfg.get::<String>("windows").classify()?,
    };
    let hp = Hyperparams {
        epochs: pick(args.epochs, &cfg, "epochs", d.epochs).classify()?,
        embed_dim: pick(args.embed_dim, &cfg, "embed-dim", d.embed_dim).classify()?,
        filters: pick(args.filters, &cfg, "filters", d.filters).classify()?,
        window_sizes: match windows {
            Some(w) => parse_list(&w, "window")?,
            None => d.window_sizes,
        },
        dropout: pick(args.dropout, &cfg, "dropout", d.dropout).classify()?,
        batch_size: pick(args.batch, &cfg, "batch", d.batch_size).classify()?,
        learning_rate: pick(args.lr, &cfg, "lr", d.learning_rate).classify()?,
        seed: pick(args.seed, &cfg, "seed", DEFAULT_SEED).classify()?,
        l_max: pick(args.l_max, &cfg, "l-max", d.l_max).classify()?,
        threshold: pick(args.threshold, &cfg, "threshold", d.threshold).classify()?,
        ..d
    };
    hp.validate_shape().map_err(|e| (EXIT_USAGE, e))?;
    Ok(hp)
}

fn run(cli: &Cli, out: &mut impl Write) -> Outcome {
    let io = |e: std::io::Error| {
        (
            EXIT_FAILURE,
            Error::Io {
                path: "<stdout>".into(),
                source: e,
            },
        )
    };
    match &cli.command {
        Command::Scan { dir, pattern } => {
            let (files, stats) = scan_corpus(dir, *pattern).classify()?;
            for f in &files {
                writeln!(out, "{}", f.display()).map_err(io)?;
            }
            eprintln!("{} files, {} lines", stats.file_count, stats.total_loc);
        }
        Command::Synth(args) => {
            let mut spec = match &args.spec {
                Some(p) => SynthSpec::from_toml(&read_source(p).classify()?).classify()?,
                None => SynthSpec::default(),
            };
            spec.n_files = args.n_files.unwrap_or(spec.n_files);
            spec.pattern = args.pattern.unwrap_or(spec.pattern);
            spec.seed = args.seed.unwrap_or(spec.seed);
            let f: Vec<f64> = parse_list(&args.split, "split")?;
            if f.len() != 3 {
                return Err(usage("--split takes three fractions: train,val,test"));
            }
            fs::create_dir_all(&args.out).map_err(|e| {
                (
                    EXIT_FAILURE,
                    Error::Io {
                        path: args.out.clone(),
                        source: e,
                    },
                )
            })?;
            let entries = synth_corpus(&spec, &args.out).classify()?;
            let manifest = build_manifest(entries, (f[0], f[1], f[2]), spec.seed).classify()?;
            let path = args
                .manifest
                .clone()
                .unwrap_or_else(|| args.out.join("manifest.jsonl"));
            manifest.write(&path).classify()?;
            writeln!(out, "{}", path.display()).map_err(io)?;
            eprintln!(
                "{} files written to {}",
                manifest.entries.len(),
                args.out.display()
            );
        }
        Command::Mutate {
            manifest,
            ratio,
            seed,
            out: target,
        } => {
            if !(0.0..=1.0).contains(ratio) {
                return Err(usage(format!("--ratio must be in [0, 1], got {ratio}")));
            }
            let m = open_manifest(manifest)?;
            let mutated = apply_balanced_mutation(&m, *ratio, *seed).classify()?;
            let path = target.as_ref().unwrap_or(manifest);
            mutated.write(path).classify()?;
            let stats = mutated.stats().classify()?;
            writeln!(out, "{} buggy, {} clean", stats.buggy, stats.clean).map_err(io)?;
        }
        Command::Tokenize { file, pattern } => {
            let source = read_source(file).classify()?;
            let units = units_of_source(&source, *pattern)
                .map_err(|e| e.in_file(file))
                .classify()?;
            for u in units {
                writeln!(
                    out,
                    "# {} lines {}-{}",
                    u.unit_name, u.start_line, u.end_line
                )
                .map_err(io)?;
                for (i, t) in u.items.iter().enumerate() {
                    writeln!(out, "{i}\t{}\t{}", t.class.as_str(), t.line).map_err(io)?;
                }
            }
        }
        Command::Train(args) => {
            let hp = hyperparams(args)?;
            let manifest = open_manifest(&args.manifest)?;
            let (model, report) = train(&manifest, hp, &train_options(cli)).classify()?;
            save_model(&model, &args.out).classify()?;
            if let Some(csv) = &args.metrics_csv {
                fs::write(csv, report.to_csv()).map_err(|e| {
                    (
                        EXIT_FAILURE,
                        Error::Io {
                            path: csv.clone(),
                            source: e,
                        },
                    )
                })?;
            }
            if let Some(last) = report.last() {
                writeln!(
                    out,
                    "epoch {} train_loss {:.6} train_acc {:.4} val_loss {:.6} val_acc {:.4}",
                    last.epoch, last.train_loss, last.train_acc, last.val_loss, last.val_acc
                )
                .map_err(io)?;
            }
        }
        Command::Predict {
            model,
            file,
            pattern,
        } => {
            let model = open_model(model)?;
            let source = read_source(file).classify()?;
            let cams = localize(&model, &source, *pattern, DEFAULT_THETA)
                .map_err(|e| e.in_file(file))
                .classify()?;
            for c in &cams {
                writeln!(out, "{}\t{}\t{:.6}", c.unit_name, c.predicted, c.prob_buggy)
                    .map_err(io)?;
            }
        }
        Command::Localize {
            model,
            file,
            pattern,
            format,
            theta,
        } => {
            let format: ReportFormat = format.parse().map_err(|e| (EXIT_USAGE, e))?;
            if !(*theta > 0.0 && *theta <= 1.0) {
                return Err(usage(format!("--theta must be in (0, 1], got {theta}")));
            }
            let model = open_model(model)?;
            let source = read_source(file).classify()?;
            let cams = localize(&model, &source, *pattern, *theta)
                .map_err(|e| e.in_file(file))
                .classify()?;
            let merged = CamResult::merge(&cams);
            write!(out, "{}", render_report(&source, &merged, format)).map_err(io)?;
        }
        Command::Eval {
            model,
            manifest,
            split,
            theta,
            format,
        } => {
            if format != "text" && format != "json" {
                return Err(usage(format!("unknown format `{format}` (text|json)")));
            }
            let model = open_model(model)?;
            let manifest = open_manifest(manifest)?;
            let run = || evaluate(&model, &manifest, *split, *theta);
            let report = match cli.jobs {
                Some(n) => rayon_pool(n)?.install(run),
                None => run(),
            }
            .classify()?;
            if format == "json" {
                let text = serde_json::to_string_pretty(&report).expect("report serializes");
                writeln!(out, "{text}").map_err(io)?;
            } else {
                write!(out, "{}", report.to_text()).map_err(io)?;
            }
        }
        Command::Gradcheck { seeds } => {
            let mut ok = true;
            for &seed in seeds {
                let r = gradcheck(seed).classify()?;
                for (t64, t32) in r.f64_tensors.iter().zip(&r.f32_tensors) {
                    writeln!(
                        out,
                        "seed {seed}\t{:<6}\tf64 {:.3e}\tf32 {:.3e}\tchecked {}\tskipped {}",
                        t64.name, t64.rel_error, t32.rel_error, t64.checked, t64.skipped
                    )
                    .map_err(io)?;
                }
                ok &= r.max_rel_error() < 1e-6 && r.max_rel_error_f32() < 1e-3;
            }
            writeln!(out, "{}", if ok { "PASS" } else { "FAIL" }).map_err(io)?;
            if !ok {
                return Err((
                    EXIT_FAILURE,
                    Error::Training("gradient check exceeded tolerance".into()),
                ));
            }
        }
    }
    Ok(())
}

fn rayon_pool(n: usize) -> std::result::Result<rayon::ThreadPool, (u8, Error)> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n.max(1))
        .build()
        .map_err(|e| (EXIT_FAILURE, Error::Training(e.to_string())))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .init();

    let stdout = std::io::stdout();
    match run(&cli, &mut stdout.lock()) {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, e)) => {
            eprintln!("deeprace: {e}");
            ExitCode::from(code)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    const FIG_LEFT: &str = include_str!("../../core/fixtures/doall_shared_inner.c");

    fn exec(args: &[&str]) -> (u8, String) {
        let cli = match Cli::try_parse_from(std::iter::once("deeprace").chain(args.iter().copied()))
        {
            Ok(c) => c,
            Err(e) => return (if e.use_stderr() { EXIT_USAGE } else { 0 }, e.to_string()),
        };
        let mut out = Vec::new();
        let code = match run(&cli, &mut out) {
            Ok(()) => 0,
            Err((code, e)) => {
                out.extend_from_slice(e.to_string().as_bytes());
                code
            }
        };
        (code, String::from_utf8(out).unwrap())
    }

    fn ok(args: &[&str]) -> String {
        let (code, out) = exec(args);
        assert_eq!(code, 0, "{args:?}: {out}");
        out
    }

    #[test]
    fn pipeline_and_reports() {
        let dir = tempfile::tempdir().unwrap();
        let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
        ok(&[
            "synth",
            "--out",
            &p("corpus"),
            "--n-files",
            "60",
            "--seed",
            "5",
        ]);
        let manifest = p("corpus/manifest.jsonl");
        assert_eq!(
            ok(&["mutate", "--manifest", &manifest]).trim(),
            "30 buggy, 30 clean"
        );
        ok(&[
            "--deterministic",
            "train",
            "--manifest",
            &manifest,
            "--out",
            &p("m.drm"),
            "--epochs",
            "3",
            "--embed-dim",
            "8",
            "--filters",
            "8",
        ]);
        fs::write(p("left.c"), FIG_LEFT).unwrap();

        let out = ok(&[
            "predict",
            "--model",
            &p("m.drm"),
            &p("left.c"),
            "--pattern",
            "omp-private",
        ]);
        let fields: Vec<_> = out.trim().split('\t').collect();
        assert_eq!(fields[0], "main");
        assert!(fields[1] == "buggy" || fields[1] == "clean");

        let out = ok(&[
            "localize",
            "--model",
            &p("m.drm"),
            &p("left.c"),
            "--pattern",
            "omp-private",
            "--format",
            "json",
        ]);
        let json: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert_eq!(json["lines"].as_array().unwrap().len(), 10);

        let out = ok(&[
            "eval",
            "--model",
            &p("m.drm"),
            "--manifest",
            &manifest,
            "--format",
            "json",
        ]);
        let json: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert_eq!(json["units"].as_array().unwrap().len(), 12);

        let out = ok(&["tokenize", &p("left.c"), "--pattern", "omp-private"]);
        assert!(
            out.starts_with("# main lines 2-10\n0\tFuncDef\t2\n"),
            "{out}"
        );

        let files = ok(&["scan", &p("corpus"), "--pattern", "omp-private"]);
        assert_eq!(
            files.lines().count(),
            60,
            "mutants lose their private clause"
        );
    }

    #[test]
    fn exit_codes() {
        let dir = tempfile::tempdir().unwrap();
        let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
        fs::write(p("f.c"), FIG_LEFT).unwrap();
        fs::write(p("bad.c"), "int main( {\n").unwrap();
        fs::write(p("junk.drm"), b"DRM1 not really a model").unwrap();

        assert_eq!(
            exec(&[
                "predict",
                "--model",
                &p("missing.drm"),
                &p("f.c"),
                "--pattern",
                "omp-private"
            ])
            .0,
            3
        );
        assert_eq!(
            exec(&[
                "predict",
                "--model",
                &p("junk.drm"),
                &p("f.c"),
                "--pattern",
                "omp-private"
            ])
            .0,
            3
        );
        assert_eq!(
            exec(&[
                "eval",
                "--model",
                &p("junk.drm"),
                "--manifest",
                &p("none.jsonl")
            ])
            .0,
            3
        );
        assert_eq!(
            exec(&["tokenize", &p("bad.c"), "--pattern", "omp-private"]).0,
            2
        );
        assert_eq!(exec(&["tokenize", &p("f.c"), "--pattern", "cuda"]).0, 64);
        assert_eq!(exec(&["frobnicate"]).0, 64);
        assert_eq!(exec(&["--help"]).0, 0);

        ok(&["synth", "--out", &p("c"), "--n-files", "10"]);
        let (code, msg) = exec(&[
            "train",
            "--manifest",
            &p("c/manifest.jsonl"),
            "--out",
            &p("m.drm"),
            "--epochs",
            "1",
        ]);
        assert_eq!(code, 1);
        assert!(msg.contains("both labels"), "{msg}");

        let (code, _) = exec(&[
            "localize",
            "--model",
            &p("m.drm"),
            &p("f.c"),
            "--pattern",
            "omp-private",
            "--theta",
            "0",
        ]);
        assert_eq!(code, 64);
    }

    #[test]
    fn help_lists_every_flag() {
        let cases: &[(&str, &[&str])] = &[
            ("scan", &["--pattern"]),
            ("synth", &["--spec", "--out"]),
            ("mutate", &["--manifest", "--ratio", "--seed"]),
            ("tokenize", &["--pattern"]),
            (
                "train",
                &[
                    "--manifest",
                    "--out",
                    "--epochs",
                    "--embed-dim",
                    "--filters",
                    "--batch",
                    "--lr",
                    "--seed",
                    "--metrics-csv",
                    "--config",
                ],
            ),
            ("predict", &["--model", "--pattern"]),
            ("localize", &["--model", "--pattern", "--format", "--theta"]),
            ("eval", &["--model", "--manifest", "--split"]),
            ("gradcheck", &[]),
        ];
        let mut root = Cli::command();
        root.build();
        for (name, flags) in cases {
            let help = root
                .find_subcommand_mut(name)
                .unwrap()
                .render_long_help()
                .to_string();
            for f in *flags {
                assert!(help.contains(f), "{name} --help lacks {f}");
            }
            assert!(
                help.contains("--jobs") && help.contains("--deterministic"),
                "{name}"
            );
        }
    }

    #[test]
    fn config_file_and_flags_combine() {
        let dir = tempfile::tempdir().unwrap();
        let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
        ok(&["synth", "--out", &p("c"), "--n-files", "20"]);
        ok(&["mutate", "--manifest", &p("c/manifest.jsonl")]);
        fs::write(p("train.cfg"), "epochs = 2\nembed-dim = 4\nfilters = 3\n").unwrap();
        ok(&[
            "train",
            "--manifest",
            &p("c/manifest.jsonl"),
            "--out",
            &p("m.drm"),
            "--config",
            &p("train.cfg"),
            "--epochs",
            "1",
            "--metrics-csv",
            &p("m.csv"),
        ]);
        let csv = fs::read_to_string(p("m.csv")).unwrap();
        assert_eq!(csv.lines().count(), 2, "flag must win over the config file");
        let model = load_model(Path::new(&p("m.drm"))).unwrap();
        assert_eq!(
            (model.hp.embed_dim, model.hp.filters, model.hp.seed),
            (4, 3, 42)
        );
    }

    #[test]
    fn gradcheck_passes() {
        let out = ok(&["gradcheck", "--seed", "1"]);
        assert!(out.ends_with("PASS\n"));
    }
}
