use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use sovtp_core::au::AuCatalog;
use sovtp_core::chain::{run_voted, ChainInputs, PromptMode, TemplateSet};
use sovtp_core::client::{Backend, BackendConfig, HttpBackend, RetryPolicy, StubBackend, StubScript};
use sovtp_core::eval::{
    emit_report, evaluate_with, load_manifest, read_records, write_records, F1Averaging, ReportFormat,
};
use sovtp_core::geometry::OverlapPolicy;
use sovtp_core::pipeline::{
    encode_for_model, header_lines, prepare_video, rank_track, render_frame, run_pipeline, write_transcript,
    FailureKind, PipelineConfig, PipelineContext, PixelBudget,
};
use sovtp_core::render::{contact_sheet, DetailScope, LayerToggles, OverlayStyle};
use sovtp_core::sidecar::Sidecar;

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_BACKEND: u8 = 4;

#[derive(Parser)]
#[command(name = "sovtp", version, about = "Visual and staged text prompting for video emotion recognition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw numbered boxes, landmarks and AU tags onto a video's frames.
    Annotate(AnnotateArgs),
    /// Run the prompt chain on already annotated frames for one person.
    Chain(ChainArgs),
    /// Run the whole pipeline over a manifest and write per-video records.
    Eval(EvalArgs),
    /// Summarize a records file as an accuracy / F1 report.
    Report(ReportArgs),
}

#[derive(Args)]
struct AnnotateArgs {
    /// Detection sidecar JSON.
    #[arg(long)]
    sidecar: PathBuf,
    /// Directory of frame_NNNNNN.png images; defaults to the sidecar's directory.
    #[arg(long)]
    frames: Option<PathBuf>,
    /// Output directory for annotated frames.
    #[arg(long)]
    out: PathBuf,
    /// Also write a grid of all annotated frames.
    #[arg(long)]
    contact_sheet: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    columns: u32,
    /// Limit landmarks and AU tags to this face.
    #[arg(long)]
    detail_face: Option<u32>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct ChainArgs {
    /// Directory of annotated PNG frames, sent in file-name order.
    #[arg(long)]
    frames: PathBuf,
    /// Numbered person to analyse.
    #[arg(long)]
    target: u32,
    /// Sidecar used to rank the target's action units for the AU stage.
    #[arg(long)]
    sidecar: Option<PathBuf>,
    #[arg(long)]
    video_id: Option<String>,
    /// Transcript output (JSON lines).
    #[arg(long)]
    transcript: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    backend: BackendArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Per-video records output (JSON lines).
    #[arg(long)]
    records: PathBuf,
    /// Transcript output (JSON lines).
    #[arg(long)]
    transcript: Option<PathBuf>,
    /// Also write the JSON report here.
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    backend: BackendArgs,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    records: PathBuf,
    /// json or table.
    #[arg(long, default_value = "table")]
    format: String,
    #[arg(long, value_enum, default_value_t = F1Arg::Macro)]
    f1: F1Arg,
    /// Write here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum F1Arg {
    Macro,
    Micro,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    AllAccepted,
    AdjacentPairs,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendKind {
    Http,
    Stub,
}

fn unit_interval(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is outside [0, 1]"))
    }
}

fn non_negative(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{v} must be a non-negative number"))
    }
}

fn positive_secs(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{v} must be positive"))
    }
}

/// `None` means native size.
#[derive(Clone, Copy)]
struct SizeArg(Option<(u32, u32)>);

#[derive(Clone, Copy)]
struct BudgetArg(Option<PixelBudget>);

fn parse_size(s: &str) -> Result<SizeArg, String> {
    if s.eq_ignore_ascii_case("native") {
        return Ok(SizeArg(None));
    }
    let (w, h) = s.split_once(['x', 'X']).ok_or("expected WIDTHxHEIGHT or native")?;
    let w: u32 = w.parse().map_err(|e| format!("{e}"))?;
    let h: u32 = h.parse().map_err(|e| format!("{e}"))?;
    if w == 0 || h == 0 {
        return Err("size must be positive".into());
    }
    Ok(SizeArg(Some((w, h))))
}

fn parse_budget(s: &str) -> Result<BudgetArg, String> {
    if s.eq_ignore_ascii_case("none") {
        return Ok(BudgetArg(None));
    }
    let (lo, hi) = s.split_once(',').ok_or("expected MIN,MAX patches or none")?;
    let b = PixelBudget {
        min_patches: lo.trim().parse().map_err(|e| format!("{e}"))?,
        max_patches: hi.trim().parse().map_err(|e| format!("{e}"))?,
        ..PixelBudget::default()
    };
    b.validate()?;
    Ok(BudgetArg(Some(b)))
}

fn parse_mode(s: &str) -> Result<PromptMode, String> {
    s.parse()
}

/// Settings shared by every pipeline-driven subcommand.
#[derive(Args)]
struct ConfigArgs {
    /// Overlap-ratio threshold above which the smaller face is dropped.
    #[arg(long, default_value = "0.0", value_parser = unit_interval)]
    epsilon: f64,
    #[arg(long, value_enum, default_value_t = PolicyArg::AllAccepted)]
    overlap_policy: PolicyArg,
    /// Minimum IoU to continue a face's ID into the next frame.
    #[arg(long, default_value = "0.3", value_parser = unit_interval)]
    iou_threshold: f64,
    /// Minimum AU activation to be tagged.
    #[arg(long, default_value = "0.5", value_parser = unit_interval)]
    tau: f64,
    /// Maximum AU tags per face.
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(1..))]
    k: u64,
    /// Frames sampled per video.
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u64).range(1..))]
    frame_samples: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Drawing size, WIDTHxHEIGHT or native. Defaults to native for
    /// annotate and 600x400 otherwise.
    #[arg(long, value_parser = parse_size)]
    frame_size: Option<SizeArg>,
    /// Patch budget MIN,MAX for frames sent to the model, or none.
    #[arg(long, default_value = "180,210", value_parser = parse_budget)]
    pixel_budget: BudgetArg,
    #[arg(long, default_value_t = 1024, value_parser = clap::value_parser!(u32).range(1..))]
    max_tokens: u32,
    #[arg(long, default_value = "0.0", value_parser = non_negative)]
    temperature: f64,
    /// Independent chain runs per video, majority-voted.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    trajectories: u32,
    /// Videos processed concurrently.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    parallelism: u64,
    /// plain, muscle, muscle+context, muscle+context+body or full.
    #[arg(long, default_value = "full", value_parser = parse_mode)]
    mode: PromptMode,
    #[arg(long)]
    templates: Option<PathBuf>,
    #[arg(long)]
    catalog: Option<PathBuf>,
    #[arg(long)]
    no_boxes: bool,
    #[arg(long)]
    no_numbers: bool,
    #[arg(long)]
    no_landmarks: bool,
    #[arg(long)]
    no_au_tags: bool,
    /// Tint body masks when the sidecar provides them.
    #[arg(long)]
    masks: bool,
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u32).range(1..))]
    box_thickness: u32,
    /// Draw landmarks and AU tags on the target face only.
    #[arg(long)]
    target_detail_only: bool,
}

impl ConfigArgs {
    fn pipeline(&self, default_size: Option<(u32, u32)>, model: &str) -> PipelineConfig {
        let mut cfg = PipelineConfig {
            epsilon: self.epsilon,
            overlap_policy: match self.overlap_policy {
                PolicyArg::AllAccepted => OverlapPolicy::AllAccepted,
                PolicyArg::AdjacentPairs => OverlapPolicy::AdjacentPairs,
            },
            iou_threshold: self.iou_threshold,
            tau: self.tau,
            top_k: self.k as usize,
            frame_sample_count: self.frame_samples as usize,
            sample_seed: self.seed,
            frame_size: self.frame_size.map_or(default_size, |s| s.0),
            pixel_budget: self.pixel_budget.0,
            mode: self.mode,
            layers: LayerToggles {
                boxes: !self.no_boxes,
                numbers: !self.no_numbers,
                landmarks: !self.no_landmarks,
                au_tags: !self.no_au_tags,
                masks: self.masks,
            },
            style: OverlayStyle {
                box_thickness: self.box_thickness,
                ..OverlayStyle::default()
            },
            target_detail_only: self.target_detail_only,
            parallelism: self.parallelism as usize,
            ..PipelineConfig::default()
        };
        cfg.chain.model = model.to_string();
        cfg.chain.max_tokens = self.max_tokens;
        cfg.chain.temperature = self.temperature;
        cfg.chain.num_trajectories = self.trajectories;
        cfg
    }

    fn header(&self, cfg: &PipelineConfig) -> Vec<String> {
        let path = |p: &Option<PathBuf>| p.as_deref().map_or("builtin".into(), |p| p.display().to_string());
        let mut lines = header_lines("pipeline", cfg);
        lines.push(format!("templates = {}", path(&self.templates)));
        lines.push(format!("catalog = {}", path(&self.catalog)));
        lines
    }

    fn catalog(&self) -> Result<AuCatalog, Failure> {
        match &self.catalog {
            Some(p) => AuCatalog::load(p).map_err(|e| Failure::Usage(format!("catalog: {e}"))),
            None => Ok(AuCatalog::default()),
        }
    }

    fn templates(&self) -> Result<TemplateSet, Failure> {
        match &self.templates {
            Some(p) => TemplateSet::load(p, self.mode).map_err(|e| Failure::Usage(format!("templates: {e}"))),
            None => Ok(TemplateSet::builtin(self.mode)),
        }
    }
}

#[derive(Args)]
struct BackendArgs {
    #[arg(long, value_enum, default_value_t = BackendKind::Http)]
    backend: BackendKind,
    #[arg(long, default_value = "http://127.0.0.1:8000/v1/chat/completions")]
    endpoint: String,
    #[arg(long, default_value = "Qwen2-VL-7B-Instruct")]
    model: String,
    /// Environment variable holding the bearer token; empty for none.
    #[arg(long, default_value = "VLLM_API_KEY")]
    token_env: String,
    #[arg(long, default_value = "120", value_parser = positive_secs)]
    timeout_secs: f64,
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u32).range(1..))]
    max_attempts: u32,
    #[arg(long, default_value_t = 500)]
    backoff_ms: u64,
    #[arg(long, default_value_t = 8000)]
    max_backoff_ms: u64,
    /// JSON script for the stub backend: {"stages": {"5": "Happy"}, "prompts": {}}.
    #[arg(long)]
    stub_script: Option<PathBuf>,
    /// Make the stub fail from this stage on.
    #[arg(long)]
    stub_fail_from: Option<u8>,
    /// Latency the stub reports for each call.
    #[arg(long, default_value_t = 0)]
    stub_latency_ms: u64,
}

impl BackendArgs {
    fn config(&self) -> BackendConfig {
        BackendConfig {
            endpoint: self.endpoint.clone(),
            model: self.model.clone(),
            token_env: (!self.token_env.is_empty()).then(|| self.token_env.clone()),
            timeout_secs: self.timeout_secs,
            retry: RetryPolicy {
                max_attempts: self.max_attempts,
                backoff_base_ms: self.backoff_ms,
                max_backoff_ms: self.max_backoff_ms,
            },
        }
    }

    fn header(&self) -> Vec<String> {
        let mut lines = vec![format!(
            "backend.kind = {}",
            match self.backend {
                BackendKind::Http => "http",
                BackendKind::Stub => "stub",
            }
        )];
        match self.backend {
            BackendKind::Http => lines.extend(header_lines("backend", &self.config())),
            BackendKind::Stub => {
                lines.push(format!(
                    "backend.stub_script = {}",
                    self.stub_script.as_deref().map_or("none".into(), |p| p.display().to_string())
                ));
                lines.push(format!(
                    "backend.stub_fail_from = {}",
                    self.stub_fail_from.map_or("none".into(), |s| s.to_string())
                ));
                lines.push(format!("backend.stub_latency_ms = {}", self.stub_latency_ms));
            }
        }
        lines
    }

    fn build(&self) -> Result<Box<dyn Backend>, Failure> {
        match self.backend {
            BackendKind::Http => HttpBackend::new(self.config())
                .map(|b| Box::new(b) as Box<dyn Backend>)
                .map_err(|e| Failure::Usage(format!("backend: {e}"))),
            BackendKind::Stub => {
                let script = match &self.stub_script {
                    Some(p) => {
                        let text = std::fs::read_to_string(p)
                            .map_err(|e| Failure::Usage(format!("stub script {}: {e}", p.display())))?;
                        StubScript::from_json_str(&text)
                            .map_err(|e| Failure::Usage(format!("stub script {}: {e}", p.display())))?
                    }
                    None => StubScript::default(),
                };
                let mut stub = StubBackend::new(script).with_latency_ms(self.stub_latency_ms);
                if let Some(s) = self.stub_fail_from {
                    stub = stub.failing_from_stage(s);
                }
                Ok(Box::new(stub))
            }
        }
    }
}

enum Failure {
    Usage(String),
    Data(anyhow::Error),
    Backend(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Data(e)
    }
}

fn print_header(command: &str, lines: &[String]) {
    eprintln!("# sovtp {command}");
    for l in lines {
        eprintln!("#   {l}");
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn annotate(args: AnnotateArgs) -> Result<(), Failure> {
    let catalog = args.config.catalog()?;
    let cfg = args.config.pipeline(None, "");
    cfg.validate().map_err(Failure::Usage)?;
    let mut header = args.config.header(&cfg);
    header.retain(|l| !l.starts_with("pipeline.chain.") && !l.starts_with("pipeline.pixel_budget"));
    header.push(format!("sidecar = {}", args.sidecar.display()));
    print_header("annotate", &header);

    let sidecar = Sidecar::load(&args.sidecar)
        .map_err(|e| anyhow!("{}: {e}", args.sidecar.display()))?;
    let frames_dir = args
        .frames
        .clone()
        .unwrap_or_else(|| args.sidecar.parent().unwrap_or(Path::new(".")).to_path_buf());
    let video = prepare_video(&sidecar, &cfg);
    let detail = args.detail_face.map_or(DetailScope::All, DetailScope::Only);

    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mut rendered = Vec::new();
    for &(index, kept) in &video.kept_counts {
        let img = render_frame(&video, &frames_dir, index, &catalog, &cfg, detail).map_err(|e| anyhow!(e))?;
        let out = sovtp_core::pipeline::frame_path(&args.out, index);
        img.save(&out).with_context(|| format!("writing {}", out.display()))?;
        println!("frame {index:06}: {kept} face(s) kept");
        if args.contact_sheet.is_some() {
            rendered.push(img);
        }
    }
    if let Some(path) = &args.contact_sheet {
        let sheet = contact_sheet(&rendered, args.columns.max(1)).map_err(|e| anyhow!(e))?;
        sheet.save(path).with_context(|| format!("writing {}", path.display()))?;
    }
    println!("tracked faces: {}", video.tracks.len());
    Ok(())
}

fn list_pngs(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    if files.is_empty() {
        anyhow::bail!("no PNG frames in {}", dir.display());
    }
    Ok(files)
}

fn chain(args: ChainArgs) -> Result<(), Failure> {
    let catalog = args.config.catalog()?;
    let templates = args.config.templates()?;
    let cfg = args.config.pipeline(Some(sovtp_core::pipeline::DEFAULT_FRAME_SIZE), &args.backend.model);
    cfg.validate().map_err(Failure::Usage)?;
    let backend = args.backend.build()?;
    let mut header = args.config.header(&cfg);
    header.extend(args.backend.header());
    header.push(format!("target = {}", args.target));
    print_header("chain", &header);

    let frames = list_pngs(&args.frames)?
        .iter()
        .map(|p| {
            image::open(p)
                .map(|i| encode_for_model(&i.into_rgb8(), cfg.pixel_budget))
                .with_context(|| format!("reading {}", p.display()))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;

    let ranked = match &args.sidecar {
        Some(path) => {
            let sidecar = Sidecar::load(path).map_err(|e| anyhow!("{}: {e}", path.display()))?;
            let video = prepare_video(&sidecar, &cfg);
            let track = video
                .track(args.target)
                .ok_or_else(|| anyhow!("face {} is not tracked in {}", args.target, path.display()))?;
            rank_track(track, &video.frame_indices, &catalog, &cfg)
        }
        None => Default::default(),
    };

    let inputs = ChainInputs {
        frames: &frames,
        target_face_id: args.target,
        ranked: &ranked,
        templates: &templates,
        catalog: &catalog,
        video_id: args.video_id.as_deref(),
    };
    match run_voted(&inputs, backend.as_ref(), &cfg.chain) {
        Ok(run) => {
            write_file(&args.transcript, write_transcript(&run.transcript()))?;
            println!("{}", run.label);
            Ok(())
        }
        Err(abort) => {
            write_file(&args.transcript, write_transcript(&abort.transcript))?;
            Err(Failure::Backend(anyhow!(
                "{abort} ({} stage(s) completed)",
                abort.state.records.len()
            )))
        }
    }
}

fn eval(args: EvalArgs) -> Result<(), Failure> {
    let catalog = args.config.catalog()?;
    let templates = args.config.templates()?;
    let cfg = args.config.pipeline(Some(sovtp_core::pipeline::DEFAULT_FRAME_SIZE), &args.backend.model);
    cfg.validate().map_err(Failure::Usage)?;
    let backend = args.backend.build()?;
    let mut header = args.config.header(&cfg);
    header.extend(args.backend.header());
    header.push(format!("manifest = {}", args.manifest.display()));
    print_header("eval", &header);

    let entries = load_manifest(&args.manifest).map_err(|e| anyhow!(e))?;
    let ctx = PipelineContext {
        backend: backend.as_ref(),
        catalog: &catalog,
        templates: &templates,
        config: &cfg,
    };
    let out = run_pipeline(&entries, &ctx);
    write_file(&args.records, write_records(&out.records))?;
    if let Some(t) = &args.transcript {
        write_file(t, write_transcript(&out.transcript))?;
    }
    let report = evaluate_with(&out.records, F1Averaging::Macro);
    if let Some(r) = &args.report {
        write_file(r, emit_report(&report, ReportFormat::Json))?;
    }
    print!("{}", emit_report(&report, ReportFormat::Table));

    for f in &out.failures {
        eprintln!("error: {}: {}", f.video_id, f.message);
    }
    if out.failures.iter().any(|f| f.kind == FailureKind::Backend) {
        return Err(Failure::Backend(anyhow!("{} entr(ies) failed", out.failures.len())));
    }
    if !out.failures.is_empty() {
        return Err(Failure::Data(anyhow!("{} entr(ies) failed", out.failures.len())));
    }
    Ok(())
}

fn report(args: ReportArgs) -> Result<(), Failure> {
    let format: ReportFormat = args.format.parse().map_err(|e: sovtp_core::eval::UnknownFormat| Failure::Usage(e.to_string()))?;
    let text = std::fs::read_to_string(&args.records)
        .with_context(|| format!("reading {}", args.records.display()))?;
    let records = read_records(&text).map_err(|e| anyhow!("{}: {e}", args.records.display()))?;
    let averaging = match args.f1 {
        F1Arg::Macro => F1Averaging::Macro,
        F1Arg::Micro => F1Averaging::Micro,
    };
    let doc = emit_report(&evaluate_with(&records, averaging), format);
    match &args.out {
        Some(p) => write_file(p, doc)?,
        None => print!("{doc}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Annotate(a) => annotate(a),
        Command::Chain(a) => chain(a),
        Command::Eval(a) => eval(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Data(e)) => {
            eprintln!("data error: {e:#}");
            ExitCode::from(EXIT_DATA)
        }
        Err(Failure::Backend(e)) => {
            eprintln!("backend error: {e:#}");
            ExitCode::from(EXIT_BACKEND)
        }
    }
}
