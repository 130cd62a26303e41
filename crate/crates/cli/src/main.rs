//! `bimodal`: enrollment, model training, authentication, evaluation,
//! threshold sweeps, synthetic corpus generation and the TCP service.
//!
//! Errors are reported on stderr as `error: code=<code> message=<text>`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::Ordering;
use std::sync::Arc;

use bimodal_core::authenticator::{AuthError, Authenticator, Gallery};
use bimodal_core::authsvc::{serve, AuthService, ServiceError};
use bimodal_core::config::{Config, ConfigError};
use bimodal_core::evaluation::{
    build_trials, generate_synthetic_corpus, grid, index_dataset, run_evaluation, threshold_sweep, write_reports,
    write_sweep, CorpusLayout, EvalError, EvaluationReport, SweepTarget,
};
use bimodal_core::face_pipeline::EyePair;
use bimodal_core::fusion::Modality;
use bimodal_core::profile_store::{ProfileStore, StoreError};
use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "bimodal", version, about = "Face + voice biometric authentication")]
struct Cli {
    /// Config file (key = value with [sections]); defaults to $BIMODAL_CONFIG.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set face.threshold=2500`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Register a user from face images and voice recordings.
    Enroll(EnrollArgs),
    /// Retrain the eigenmodel over all stored profiles.
    TrainModel(StoreArgs),
    /// Identify (or verify with --user) one face + voice probe.
    Auth(AuthArgs),
    /// Run the randomized evaluation protocol over a dataset.
    Evaluate(EvaluateArgs),
    /// Re-threshold evaluation scores over a grid.
    Sweep(SweepArgs),
    /// Write a deterministic synthetic face/voice corpus.
    GenCorpus(GenArgs),
    /// Serve the registration/authentication protocol over TCP.
    Serve(ServeArgs),
}

#[derive(Args, Debug)]
struct StoreArgs {
    /// Profile store directory (config: service.store_path).
    #[arg(long)]
    store: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EnrollArgs {
    #[command(flatten)]
    store: StoreArgs,
    #[arg(long)]
    user: String,
    /// Face image (PGM); an `.eyes` sidecar next to it is used when present.
    #[arg(long = "face")]
    faces: Vec<PathBuf>,
    /// Directory of face images, taken in name order.
    #[arg(long)]
    face_dir: Option<PathBuf>,
    /// Voice recording (16-bit mono WAV).
    #[arg(long = "voice")]
    voices: Vec<PathBuf>,
    #[arg(long)]
    voice_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AuthArgs {
    #[command(flatten)]
    store: StoreArgs,
    /// Claimed identity; omit for identification.
    #[arg(long)]
    user: Option<String>,
    #[arg(long)]
    face: PathBuf,
    /// Eye annotation file (`LX LY RX RY`); defaults to the face's sidecar.
    #[arg(long)]
    eyes: Option<PathBuf>,
    #[arg(long)]
    voice: PathBuf,
}

#[derive(Args, Debug)]
struct DatasetArgs {
    /// Corpus root holding `faces/` and `voices/`.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    faces: Option<PathBuf>,
    #[arg(long)]
    voices: Option<PathBuf>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Refuse to clamp sample counts below the configured ranges.
    #[arg(long)]
    strict: bool,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[command(flatten)]
    data: DatasetArgs,
    /// Directory for report.csv and report.json.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    data: DatasetArgs,
    /// face, voice or fused.
    #[arg(long, default_value = "face")]
    modality: SweepTarget,
    #[arg(long)]
    from: f64,
    #[arg(long)]
    to: f64,
    #[arg(long)]
    step: f64,
    #[arg(long, default_value = "sweep.csv")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GenArgs {
    #[arg(long, default_value = "corpus")]
    out: PathBuf,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 12)]
    subjects: usize,
    #[arg(long, default_value_t = 16)]
    samples: usize,
}

#[derive(Args, Debug)]
struct ServeArgs {
    #[command(flatten)]
    store: StoreArgs,
    /// Listen address (config: service.listen_addr).
    #[arg(long)]
    listen: Option<String>,
}

struct CliError {
    code: String,
    message: String,
}

impl CliError {
    fn new(code: &str, message: impl Into<String>) -> Self {
        Self {
            code: code.into(),
            message: message.into(),
        }
    }
}

impl From<AuthError> for CliError {
    fn from(e: AuthError) -> Self {
        let mut message = e.to_string();
        for r in e.rejected_samples() {
            message.push_str(&format!("; {} #{}: {}", r.modality, r.index, r.reason));
        }
        Self::new(e.code(), message)
    }
}

impl From<StoreError> for CliError {
    fn from(e: StoreError) -> Self {
        Self::new(e.code(), e.to_string())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        Self::new("config-error", e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        let code = match &e {
            EvalError::Io { .. } => "missing-dataset",
            EvalError::NoSubjects(_) | EvalError::TooFewFaceSubjects { .. } => "insufficient-data",
            EvalError::Strict(_) => "strict-violation",
            EvalError::Invalid(_) => "invalid-argument",
        };
        Self::new(code, e.to_string())
    }
}

impl From<ServiceError> for CliError {
    fn from(e: ServiceError) -> Self {
        let code = match &e {
            ServiceError::Bind { .. } => "bind-failed",
            _ => "service-error",
        };
        Self::new(code, e.to_string())
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::new("io-error", format!("{}: {e}", path.display()))
}

fn load_config(cli: &Cli) -> Result<Config, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::from_env()?,
    };
    for o in &cli.overrides {
        let (key, value) = o
            .split_once('=')
            .ok_or_else(|| CliError::new("usage", format!("--set expects SECTION.KEY=VALUE, got {o:?}")))?;
        let (section, key) = key
            .split_once('.')
            .ok_or_else(|| CliError::new("usage", format!("--set key must be SECTION.KEY, got {key:?}")))?;
        cfg.set(section.trim(), key.trim(), value)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn store_path(cfg: &Config, args: &StoreArgs) -> PathBuf {
    args.store.clone().unwrap_or_else(|| cfg.service.store_path.clone())
}

fn files_with_ext(dir: &Path, ext: &str) -> Result<Vec<PathBuf>, CliError> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| io_error(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case(ext)))
        .collect();
    out.sort();
    Ok(out)
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| io_error(path, e))
}

fn sidecar(face: &Path) -> Option<EyePair> {
    std::fs::read_to_string(face.with_extension("eyes"))
        .ok()
        .and_then(|t| EyePair::parse_sidecar(&t))
}

fn enroll(cfg: Config, args: EnrollArgs) -> Result<(), CliError> {
    let mut face_files = args.faces.clone();
    if let Some(d) = &args.face_dir {
        face_files.extend(files_with_ext(d, "pgm")?);
    }
    let mut voice_files = args.voices.clone();
    if let Some(d) = &args.voice_dir {
        voice_files.extend(files_with_ext(d, "wav")?);
    }
    let faces = face_files
        .iter()
        .map(|p| Ok((read(p)?, sidecar(p))))
        .collect::<Result<Vec<_>, CliError>>()?;
    let voices = voice_files.iter().map(|p| read(p)).collect::<Result<Vec<_>, _>>()?;

    let path = store_path(&cfg, &args.store);
    let store = match ProfileStore::open(&path) {
        Err(StoreError::NotInitialized(_)) => ProfileStore::init(&path)?,
        other => other?,
    };
    if store.contains(&args.user) {
        return Err(AuthError::UserExists(args.user).into());
    }
    let auto_train = cfg.service.auto_train;
    let auth = Authenticator::new(cfg)?;
    let (profile, rejected) = auth.build_profile(&args.user, &faces, &voices)?;
    store.save_profile(&profile, false)?;
    for r in &rejected {
        let file = match r.modality {
            Modality::Face => &face_files[r.index],
            Modality::Voice => &voice_files[r.index],
        };
        println!("rejected {} {}: {}", r.modality, file.display(), r.reason);
    }
    println!(
        "enrolled {}: {} faces, {} voice samples",
        args.user, profile.meta.face_samples, profile.meta.voice_samples
    );
    if auto_train {
        let (g, hash) = auth.train_store(&store)?;
        println!("trained eigenmodel over {} users sha256={hash}", g.templates.len());
    } else {
        println!("eigenmodel is stale; run `bimodal train-model` before authenticating");
    }
    Ok(())
}

fn train_model(cfg: Config, args: StoreArgs) -> Result<(), CliError> {
    let store = ProfileStore::open(store_path(&cfg, &args))?;
    let auth = Authenticator::new(cfg)?;
    let (g, hash) = auth.train_store(&store)?;
    println!(
        "trained eigenmodel over {} users: {} training faces, {} components, sha256={hash}",
        g.templates.len(),
        g.model.training_size(),
        g.model.components()
    );
    Ok(())
}

fn auth(cfg: Config, args: AuthArgs) -> Result<(), CliError> {
    let store = ProfileStore::open(store_path(&cfg, &args.store))?;
    let auth = Authenticator::new(cfg)?;
    let gallery = Gallery::from_store(&store)?;
    let eyes = match &args.eyes {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| io_error(p, e))?;
            Some(EyePair::parse_sidecar(&text).ok_or_else(|| CliError::new("invalid-sample", format!("{}: bad eye annotation", p.display())))?)
        }
        None => sidecar(&args.face),
    };
    let face = auth
        .prepare_face(&read(&args.face)?, eyes, &args.face.to_string_lossy())
        .map_err(|r| CliError::new("invalid-sample", format!("face {}: {}", args.face.display(), r.code())))?;
    let voice = auth
        .prepare_voice(&read(&args.voice)?)
        .map_err(|r| CliError::new("invalid-sample", format!("voice {}: {r}", args.voice.display())))?;
    let out = auth.authenticate(&gallery, &face, &voice, args.user.as_deref())?;
    println!(
        "decision={} matched_user={} face_score={:.6} voice_score={:.6} fused_score={:.6}",
        if out.accept { "accept" } else { "reject" },
        out.matched_user,
        out.face_score,
        out.voice_score,
        out.fused_score
    );
    Ok(())
}

fn dataset_layout(d: &DatasetArgs) -> Result<CorpusLayout, CliError> {
    let base = d.corpus.as_ref().map(|c| CorpusLayout::under(c));
    let faces = d.faces.clone().or_else(|| base.as_ref().map(|b| b.faces.clone()));
    let voices = d.voices.clone().or_else(|| base.as_ref().map(|b| b.voices.clone()));
    match (faces, voices) {
        (Some(faces), Some(voices)) => Ok(CorpusLayout { faces, voices }),
        _ => Err(CliError::new("missing-dataset", "give --corpus DIR or both --faces DIR and --voices DIR")),
    }
}

fn evaluate_dataset(mut cfg: Config, d: &DatasetArgs) -> Result<EvaluationReport, CliError> {
    if let Some(n) = d.iterations {
        cfg.evaluation.iterations = n;
    }
    if let Some(s) = d.seed {
        cfg.evaluation.seed = s;
    }
    cfg.evaluation.strict |= d.strict;
    let layout = dataset_layout(d)?;
    for dir in [&layout.faces, &layout.voices] {
        if !dir.is_dir() {
            return Err(CliError::new("missing-dataset", format!("{} is not a directory", dir.display())));
        }
    }
    let ecfg = cfg.evaluation.clone();
    let auth = Authenticator::new(cfg)?;
    let faces = index_dataset(&layout.faces, Modality::Face, &auth, ecfg.min_face_samples)?;
    let voices = index_dataset(&layout.voices, Modality::Voice, &auth, 1)?;
    println!(
        "seed={} iterations={} face subjects={} (dropped {}, invalid samples {}) voice subjects={} (invalid samples {})",
        ecfg.seed,
        ecfg.iterations,
        faces.subjects.len(),
        faces.dropped.len(),
        faces.invalid_count(),
        voices.subjects.len(),
        voices.invalid_count()
    );
    let plan = build_trials(&faces, &voices, &ecfg)?;
    if !plan.warnings.is_empty() {
        println!("{} sample-count clamping warnings (see log)", plan.warnings.len());
    }
    Ok(run_evaluation(&plan, &faces, &voices, &auth))
}

fn evaluate(cfg: Config, args: EvaluateArgs) -> Result<(), CliError> {
    let report = evaluate_dataset(cfg, &args.data)?;
    println!("{:<10}{:>10}{:>10}{:>10}{:>10}{:>10}{:>10}", "modality", "AC", "TPR", "FPR", "TNR", "FNR", "P");
    for (name, m) in [("face", &report.face), ("voice", &report.voice), ("ensemble", &report.ensemble)] {
        let cells: Vec<String> = m
            .metrics
            .values()
            .iter()
            .map(|v| v.map_or_else(|| "-".to_owned(), |x| format!("{x:.2}")))
            .collect();
        println!("{name:<10}{}", cells.iter().map(|c| format!("{c:>10}")).collect::<String>());
    }
    println!("exclusions={}", report.exclusions);
    write_reports(&args.out, &report)?;
    println!("wrote {} and {}", args.out.join("report.csv").display(), args.out.join("report.json").display());
    Ok(())
}

fn sweep(cfg: Config, args: SweepArgs) -> Result<(), CliError> {
    let thresholds = grid(args.from, args.to, args.step)?;
    let report = evaluate_dataset(cfg, &args.data)?;
    let points = threshold_sweep(&report.probes, args.modality, &thresholds)?;
    write_sweep(&args.out, &points)?;
    println!("wrote {} rows to {} (seed={})", points.len(), args.out.display(), report.seed);
    Ok(())
}

fn gen_corpus(args: GenArgs) -> Result<(), CliError> {
    let layout = generate_synthetic_corpus(&args.out, args.seed, args.subjects, args.samples)?;
    println!(
        "seed={} subjects={} samples={} faces={} voices={}",
        args.seed,
        args.subjects,
        args.samples,
        layout.faces.display(),
        layout.voices.display()
    );
    Ok(())
}

fn serve_cmd(mut cfg: Config, args: ServeArgs) -> Result<(), CliError> {
    cfg.service.store_path = store_path(&cfg, &args.store);
    let addr = args.listen.clone().unwrap_or_else(|| cfg.service.listen_addr.clone());
    let service = Arc::new(AuthService::from_config(Authenticator::new(cfg)?)?);
    let handle = serve(service, &addr)?;
    let stop = handle.stop_flag();
    ctrlc::set_handler(move || stop.store(true, Ordering::SeqCst))
        .map_err(|e| CliError::new("service-error", format!("cannot install interrupt handler: {e}")))?;
    println!("listening on {}", handle.local_addr());
    handle.wait();
    println!("shut down");
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::Enroll(a) => enroll(cfg, a),
        Command::TrainModel(a) => train_model(cfg, a),
        Command::Auth(a) => auth(cfg, a),
        Command::Evaluate(a) => evaluate(cfg, a),
        Command::Sweep(a) => sweep(cfg, a),
        Command::GenCorpus(a) => gen_corpus(a),
        Command::Serve(a) => serve_cmd(cfg, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error: code=usage message={first}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: code={} message={}", e.code, e.message.replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
