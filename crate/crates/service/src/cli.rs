//! The `analogy` command line.
//!
//! Exit codes: 0 ok, 2 usage, 3 not found, 4 stage failure, 5 backend
//! failure.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use analogy_core::coverage::{self, ComponentChecklist, ProbeSource};
use analogy_core::error::ErrorClass;
use analogy_core::session::LearnerLevel;
use analogy_core::store::Store;
use analogy_core::storyboard::{export_markdown, Storyboard};
use analogy_core::{
    BlobRef, Concept, Engine, FsStore, PipelineError, PipelineSession, ServiceConfig, SessionId,
    SessionState, Subject,
};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::remote::RemoteClient;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NOT_FOUND: i32 = 3;
pub const EXIT_STAGE: i32 = 4;
pub const EXIT_BACKEND: i32 = 5;

#[derive(Debug, Parser)]
#[command(name = "analogy", version, about = "Turn a STEM concept into analogies, a storyboard and a video")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the whole pipeline for one concept.
    Run(RunArgs),
    /// Component coverage tools.
    Coverage {
        #[command(subcommand)]
        command: CoverageCommand,
    },
    /// Export a stored session's storyboard.
    Export(ExportArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub concept: String,
    #[arg(long, value_enum, default_value_t = SubjectArg::Other)]
    pub subject: SubjectArg,
    #[arg(long, value_enum)]
    pub level: Option<LevelArg>,
    /// Which of the three analogies to keep.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=3))]
    pub choose: u8,
    /// Use the offline mock backends regardless of configuration.
    #[arg(long)]
    pub mock: bool,
    /// Where to write the artifacts.
    #[arg(long, default_value = "analogy-out")]
    pub out: PathBuf,
    /// Drive a running service instead of the in-process engine.
    #[arg(long)]
    pub api: Option<String>,
    /// Seed for mock and seeded backends.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SubjectArg {
    Math,
    Physics,
    Programming,
    Other,
}

impl From<SubjectArg> for Subject {
    fn from(s: SubjectArg) -> Self {
        match s {
            SubjectArg::Math => Subject::Math,
            SubjectArg::Physics => Subject::Physics,
            SubjectArg::Programming => Subject::Programming,
            SubjectArg::Other => Subject::Other,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LevelArg {
    Novice,
    Intermediate,
    Advanced,
}

impl From<LevelArg> for LearnerLevel {
    fn from(l: LevelArg) -> Self {
        match l {
            LevelArg::Novice => LearnerLevel::Novice,
            LevelArg::Intermediate => LearnerLevel::Intermediate,
            LevelArg::Advanced => LearnerLevel::Advanced,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum CoverageCommand {
    /// Check a probe text against a component checklist.
    Verify {
        /// Checklist JSON ({analogy_id, items: [{canonical, criticality, aliases?}]}).
        #[arg(long)]
        checklist: PathBuf,
        /// Probe text file.
        #[arg(long)]
        text: PathBuf,
        #[arg(long, value_enum, default_value_t = SourceArg::ImageCaption)]
        source: SourceArg,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SourceArg {
    ImageCaption,
    SceneDescription,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub session: String,
    #[arg(long, value_enum, default_value_t = ExportFormat::Markdown)]
    pub format: ExportFormat,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExportFormat {
    /// The full session document (JSON).
    Doc,
    Markdown,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub port: Option<u16>,
}

/// A failure carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    fn stage(stage: &str, e: PipelineError) -> Self {
        let code = match e.class() {
            ErrorClass::NotFound => EXIT_NOT_FOUND,
            ErrorClass::Backend => EXIT_BACKEND,
            ErrorClass::Validation | ErrorClass::Conflict | ErrorClass::Stage => EXIT_STAGE,
        };
        Self::new(code, format!("stage {stage} failed: {e}"))
    }
}

pub fn load_config(path: Option<&Path>) -> Result<ServiceConfig, Failure> {
    let mut cfg = match path {
        Some(p) => ServiceConfig::load(p).map_err(|e| Failure::new(EXIT_USAGE, e.to_string()))?,
        None => ServiceConfig::default(),
    };
    if path.is_none() {
        cfg.apply_env(|k| std::env::var(k).ok())
            .map_err(|e| Failure::new(EXIT_USAGE, e.to_string()))?;
    }
    Ok(cfg)
}

/// Runs one parsed command and returns its exit code.
pub async fn execute(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Run(args) => run(args).await,
        Command::Coverage {
            command: CoverageCommand::Verify { checklist, text, source },
        } => verify(&checklist, &text, source),
        Command::Export(args) => export(args),
        Command::Serve(args) => serve(args).await,
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

/// Everything the run command writes, relative to `--out`.
pub mod layout {
    pub const SESSION: &str = "session.json";
    pub const STORYBOARD: &str = "storyboard.json";
    pub const MARKDOWN: &str = "storyboard.md";

    pub fn scene_image(index: u8) -> String {
        format!("scene-{index}.png")
    }

    pub fn video(media_type: &str) -> &'static str {
        if media_type == analogy_core::video::VIDEO_MEDIA_TYPE {
            "video.mp4"
        } else {
            "video-keyframes.zip"
        }
    }
}

async fn run(args: RunArgs) -> Result<(), Failure> {
    let concept = Concept::new(&args.concept, args.subject.into(), args.level.map(Into::into))
        .map_err(|e| Failure::new(EXIT_USAGE, format!("--concept: {e}")))?;
    if let Some(url) = &args.api {
        let client = RemoteClient::new(url);
        return client.run(&concept, args.choose, &args.out).await;
    }
    let mut cfg = load_config(args.config.as_deref())?;
    if args.mock {
        cfg.backends = analogy_core::gateway::GatewayConfig::mock();
    }
    if let Some(seed) = args.seed {
        cfg.mock.seed = seed;
    }
    let engine = Engine::from_config(&cfg).map_err(|e| Failure::stage("setup", e))?;
    let s = engine
        .create_session(concept)
        .map_err(|e| Failure::stage("create", e))?;
    let id = s.id.clone();
    eprintln!("session {id}");

    let check = engine
        .validate_concept(&id)
        .await
        .map_err(|e| Failure::stage("validate", e))?;
    if matches!(engine.get_session(&id).map(|s| s.state), Ok(SessionState::Failed)) {
        return Err(Failure::new(
            EXIT_STAGE,
            format!("stage validate failed: not a STEM concept ({})", check.rationale),
        ));
    }
    let analogies = engine
        .generate_analogies(&id)
        .await
        .map_err(|e| Failure::stage("analogies", e))?;
    for (i, a) in analogies.iter().enumerate() {
        eprintln!("  analogy {}: {}", i + 1, a.title);
    }
    let chosen = &analogies[args.choose as usize - 1];
    engine
        .choose_analogy(&id, &chosen.id)
        .map_err(|e| Failure::stage("choose", e))?;
    engine
        .run_storyboard_stage(&id)
        .await
        .map_err(|e| Failure::stage("storyboard", e))?;
    engine
        .run_video_stage(&id)
        .await
        .map_err(|e| Failure::stage("video", e))?;
    let session = engine.get_session(&id).map_err(|e| Failure::stage("export", e))?;
    let store = engine.store().clone();
    write_artifacts(&session, &args.out, |blob| {
        store.get_blob(blob).map_err(|e| e.to_string())
    })?;
    println!("{}", args.out.display());
    Ok(())
}

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::new(EXIT_STAGE, format!("writing {}: {e}", path.display()))
}

/// Writes the session document, storyboard document, markdown export, scene
/// images and video artifact into `out`.
pub fn write_artifacts(
    session: &PipelineSession,
    out: &Path,
    fetch: impl Fn(&BlobRef) -> Result<Vec<u8>, String>,
) -> Result<(), Failure> {
    let board = session
        .storyboard
        .as_ref()
        .ok_or_else(|| Failure::new(EXIT_STAGE, "session has no storyboard"))?;
    std::fs::create_dir_all(out).map_err(|e| io_failure(out, e))?;
    let write = |name: &str, bytes: &[u8]| {
        let path = out.join(name);
        std::fs::write(&path, bytes).map_err(|e| io_failure(&path, e))
    };
    let fetch = |blob: &BlobRef| fetch(blob).map_err(|e| Failure::new(EXIT_STAGE, e));
    write(layout::SESSION, &pretty(session))?;
    write(layout::STORYBOARD, &pretty(board))?;
    for scene in &board.scenes {
        if let Some(blob) = &scene.image {
            write(&layout::scene_image(scene.index), &fetch(blob)?)?;
        }
    }
    if let Some(video) = &session.video {
        write(layout::video(&video.media_type), &fetch(video)?)?;
    }
    let md = markdown(session, board, |s, _| layout::scene_image(s.index));
    write(layout::MARKDOWN, md.as_bytes())
}

fn pretty<T: serde::Serialize>(v: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(v).expect("documents serialize");
    bytes.push(b'\n');
    bytes
}

fn markdown(
    session: &PipelineSession,
    board: &Storyboard,
    link: impl Fn(&analogy_core::Scene, &BlobRef) -> String,
) -> String {
    let title = session
        .chosen_analogy()
        .map(|a| a.title.as_str())
        .unwrap_or("storyboard");
    export_markdown(session.concept.name(), title, board, link)
}

fn verify(checklist: &Path, text: &Path, source: SourceArg) -> Result<(), Failure> {
    let read = |p: &Path| {
        std::fs::read_to_string(p)
            .map_err(|e| Failure::new(EXIT_NOT_FOUND, format!("{}: {e}", p.display())))
    };
    let mut list: ComponentChecklist = serde_json::from_str(&read(checklist)?)
        .map_err(|e| Failure::new(EXIT_USAGE, format!("{}: {e}", checklist.display())))?;
    list.validate()
        .map_err(|e| Failure::new(EXIT_USAGE, format!("{}: {e}", checklist.display())))?;
    for item in &mut list.items {
        if item.aliases.is_empty() {
            item.aliases = coverage::aliases_for(&item.canonical);
        }
    }
    let source = match source {
        SourceArg::ImageCaption => ProbeSource::ImageCaption,
        SourceArg::SceneDescription => ProbeSource::SceneDescription,
    };
    let report = coverage::verify_text(&list, &read(text)?, source);
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    if report.is_complete() {
        Ok(())
    } else {
        let missing: Vec<&str> = report.missing_required.iter().map(String::as_str).collect();
        Err(Failure::new(
            EXIT_STAGE,
            format!("missing required components: {}", missing.join(", ")),
        ))
    }
}

fn export(args: ExportArgs) -> Result<(), Failure> {
    let cfg = load_config(args.config.as_deref())?;
    let id: SessionId = args
        .session
        .parse()
        .map_err(|_| Failure::new(EXIT_NOT_FOUND, format!("session {} not found", args.session)))?;
    let store = FsStore::open(&cfg.data_root)
        .map_err(|e| Failure::new(EXIT_STAGE, e.to_string()))?;
    let session = store.load_session(&id).map_err(|e| match e {
        analogy_core::store::StoreError::SessionNotFound(_) => {
            Failure::new(EXIT_NOT_FOUND, format!("session {id} not found"))
        }
        other => Failure::new(EXIT_STAGE, other.to_string()),
    })?;
    let text = match args.format {
        ExportFormat::Doc => String::from_utf8(pretty(&session)).expect("JSON is UTF-8"),
        ExportFormat::Markdown => {
            let board = session.storyboard.as_ref().ok_or_else(|| {
                Failure::new(EXIT_STAGE, format!("session {id} has no storyboard yet"))
            })?;
            markdown(&session, board, |_, blob| store.blob_path(&blob.hash).display().to_string())
        }
    };
    match &args.out {
        Some(path) => std::fs::write(path, text).map_err(|e| io_failure(path, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

async fn serve(args: ServeArgs) -> Result<(), Failure> {
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(port) = args.port {
        cfg.port = port;
    }
    let engine = Arc::new(Engine::from_config(&cfg).map_err(|e| Failure::stage("setup", e))?);
    let listener = tokio::net::TcpListener::bind((cfg.bind, cfg.port))
        .await
        .map_err(|e| Failure::new(EXIT_STAGE, format!("cannot bind {}:{}: {e}", cfg.bind, cfg.port)))?;
    let addr = listener.local_addr().map_err(|e| Failure::new(EXIT_STAGE, e.to_string()))?;
    eprintln!("listening on http://{addr}");
    tracing::info!(%addr, "serving");
    axum::serve(listener, crate::api::router(engine, cfg.cors_permissive))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| Failure::new(EXIT_STAGE, e.to_string()))
}
