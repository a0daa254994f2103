//! `slicecast`: synthesize cases, build prompts, run backends, score and
//! report.
//!
//! Exit status is 0 on success, 1 for invalid input or usage, and 2 when a
//! backend or its transport fails.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use anyhow::{bail, ensure, Context as _, Result};
use clap::{Args, Parser, Subcommand};
use slicecast::driver::{run_image_mode, run_video_mode, run_video_mode_concurrent, DriverError, PredictionSet, RunOptions};
use slicecast::metrics::{evaluate_volume, load_records, render_report, summarize as summarize_records, CombinedRule, ReportFormat, SummaryTable};
use slicecast::prompts::{build_prompts, summarize, AuxPointFile, BuildOptions, PromptSet, Scheme};
use slicecast::refbackends::{make_synthetic_case, Preset};
use slicecast::volio::{load_labels, load_volume, parse_label_names, save_labels, save_volume, volume_to_frames, Frame, LabelNames, SliceAxis, Window};
use slicecast::wireproto::conformance::check_backend;
use slicecast::wireproto::{BackendConnection, BackendSpec, Mode, WireError};

const DEFAULT_NAMES: &str = "1=femur,2=tibia";

#[derive(Parser)]
#[command(name = "slicecast", version, about = "Prompt, run and score slice-by-slice segmentation backends")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic case: volume, labels, auxiliary points and label names
    Synth(SynthArgs),
    /// Build a prompt set from a label volume
    Prompts(PromptsArgs),
    /// Count the prompts in a prompt set
    Summarize(SummarizeArgs),
    /// Run volumes through a backend and write prediction files
    Run(RunArgs),
    /// Score prediction files against labels
    Eval(EvalArgs),
    /// Aggregate metrics records into a median table
    Report(ReportArgs),
    /// Probe a backend for protocol conformance
    BackendCheck(BackendCheckArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value = "two_bars")]
    preset: Preset,
    /// Noise seed (noisy preset only)
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct LabelArgs {
    /// Label dictionary, `id=name,...`, or `@file` holding one
    #[arg(long, default_value = DEFAULT_NAMES)]
    names: String,
    /// Volume axis to slice along (default k)
    #[arg(long)]
    slice_axis: Option<SliceAxis>,
}

#[derive(Args)]
struct PromptsArgs {
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    scheme: Scheme,
    /// Auxiliary point file
    #[arg(long)]
    aux: Option<PathBuf>,
    /// Move centroids outside their structure onto its nearest pixel
    #[arg(long)]
    snap: bool,
    #[command(flatten)]
    label: LabelArgs,
    /// Output file (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SummarizeArgs {
    /// Prompt set file
    prompts: PathBuf,
    /// Print counts as JSON
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct BackendArgs {
    /// Backend command line or host:port; bare names resolve next to this executable
    #[arg(long, env = "SLICECAST_BACKEND")]
    backend: String,
    /// Seconds to wait for any single reply
    #[arg(long, default_value_t = 120)]
    timeout: u64,
}

#[derive(Args)]
struct RunArgs {
    /// Input volume; repeat for a batch
    #[arg(long = "volume", required = true)]
    volumes: Vec<PathBuf>,
    /// Prompt set per volume
    #[arg(long = "prompts", conflicts_with_all = ["labels", "scheme"])]
    prompts: Vec<PathBuf>,
    /// Label volume per volume, to build prompts on the fly
    #[arg(long = "labels", requires = "scheme")]
    labels: Vec<PathBuf>,
    #[arg(long)]
    scheme: Option<Scheme>,
    /// Auxiliary point file per volume
    #[arg(long = "aux", requires = "labels")]
    aux: Vec<PathBuf>,
    #[arg(long, requires = "labels")]
    snap: bool,
    #[command(flatten)]
    label: LabelArgs,
    #[command(flatten)]
    backend: BackendArgs,
    /// image or video (default: from the scheme)
    #[arg(long)]
    mode: Option<Mode>,
    /// Intensity percentiles mapped to 0 and 255
    #[arg(long, default_value = "0.5,99.5")]
    window: Window,
    /// Volumes processed in parallel, one backend connection each
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// One video session per object
    #[arg(long)]
    per_object_sessions: bool,
    /// Run both propagation directions at once on two connections
    #[arg(long)]
    concurrent_directions: bool,
    /// Leave timestamps out of the outputs
    #[arg(long)]
    deterministic: bool,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Prediction file; repeat for a batch
    #[arg(long = "pred", required = true)]
    preds: Vec<PathBuf>,
    /// Labels per prediction, or one for all
    #[arg(long = "labels", required = true)]
    labels: Vec<PathBuf>,
    #[command(flatten)]
    label: LabelArgs,
    /// union or macro
    #[arg(long, default_value = "union")]
    combined: CombinedRule,
    /// Metrics output (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Metrics files
    #[arg(required = true)]
    metrics: Vec<PathBuf>,
    /// markdown or tsv
    #[arg(long, default_value = "markdown")]
    format: ReportFormat,
    /// Structure columns when there are no records
    #[arg(long, default_value = DEFAULT_NAMES)]
    names: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BackendCheckArgs {
    #[command(flatten)]
    backend: BackendArgs,
}

/// Marks errors that belong to the backend rather than to the input.
#[derive(Debug)]
struct BackendFault(String);

impl std::fmt::Display for BackendFault {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for BackendFault {}

fn exit_code(err: &anyhow::Error) -> u8 {
    let backend = err.chain().any(|e| {
        e.is::<BackendFault>()
            || e.is::<WireError>()
            || e.downcast_ref::<DriverError>().is_some_and(DriverError::is_backend)
    });
    if backend {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Prompts(a) => prompts(a),
        Command::Summarize(a) => summarize_cmd(a),
        Command::Run(a) => run(a),
        Command::Eval(a) => eval(a),
        Command::Report(a) => report(a),
        Command::BackendCheck(a) => backend_check(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn names(spec: &str) -> Result<LabelNames> {
    let text = match spec.strip_prefix('@') {
        Some(path) => fs::read_to_string(path).with_context(|| format!("reading label names from {path}"))?,
        None => spec.to_string(),
    };
    parse_label_names(text.trim()).map_err(anyhow::Error::msg)
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

/// File name without its volume suffixes.
fn volume_id(path: &Path) -> String {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let name = name.strip_suffix(".gz").unwrap_or(&name);
    [".nii", ".scvl", ".pred.jsonl"]
        .iter()
        .find_map(|s| name.strip_suffix(s))
        .unwrap_or(name)
        .to_string()
}

fn synth(a: SynthArgs) -> Result<()> {
    let case = make_synthetic_case(a.preset, a.seed);
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    save_volume(a.out.join("volume.nii.gz"), &case.volume)?;
    save_labels(a.out.join("labels.nii.gz"), &case.labels)?;
    case.aux.save(a.out.join("aux.json"))?;
    let dict: Vec<String> = case.labels.names().iter().map(|(id, n)| format!("{id}={n}")).collect();
    fs::write(a.out.join("names.txt"), dict.join(",") + "\n")?;
    println!("{} case {} written to {}", a.preset.as_str(), case.volume.dims(), a.out.display());
    Ok(())
}

fn prompt_set(
    labels: &Path,
    scheme: Scheme,
    aux: Option<&Path>,
    snap: bool,
    label: &LabelArgs,
) -> Result<PromptSet> {
    let gt = load_labels(labels, &names(&label.names)?, label.slice_axis)?;
    let aux = aux.map(AuxPointFile::load).transpose()?;
    let ps = build_prompts(&gt, scheme, aux.as_ref(), BuildOptions { snap_to_foreground: snap })?;
    for w in &ps.provenance.warnings {
        eprintln!("warning: {w}");
    }
    Ok(ps)
}

fn prompts(a: PromptsArgs) -> Result<()> {
    let ps = prompt_set(&a.labels, a.scheme, a.aux.as_deref(), a.snap, &a.label)?;
    write_output(a.out.as_deref(), &(ps.to_json() + "\n"))
}

fn summarize_cmd(a: SummarizeArgs) -> Result<()> {
    let ps = PromptSet::load(&a.prompts)?;
    let c = summarize(&ps);
    if a.json {
        println!("{}", serde_json::to_string_pretty(&c)?);
        return Ok(());
    }
    println!("scheme {}", ps.scheme);
    if let Some(anchor) = ps.anchor_slice {
        println!("anchor_slice {anchor}");
    }
    println!("total {}", c.total);
    println!("positive {}", c.positive);
    println!("negative {}", c.negative);
    println!("boxes {}", c.boxes);
    println!("box_corner_values {}", c.box_corner_values);
    for (id, o) in &c.per_object {
        let name = ps.objects.get(id).map(|e| e.name.as_str()).unwrap_or("?");
        println!(
            "object {id} ({name}): {} positive, {} negative, {} boxes",
            o.positive, o.negative, o.boxes
        );
    }
    Ok(())
}

/// Turns a bare backend program name into the sibling executable of this
/// binary when one exists.
fn resolve_backend(spec: &str) -> Result<BackendSpec> {
    let parsed: BackendSpec = spec.parse().map_err(anyhow::Error::msg)?;
    let BackendSpec::Command(cmd) = &parsed else {
        return Ok(parsed);
    };
    let Some(argv) = shlex::split(cmd).filter(|a| !a.is_empty()) else {
        bail!("cannot parse backend command `{cmd}`");
    };
    if argv[0].contains(std::path::MAIN_SEPARATOR) || argv[0].contains('/') {
        return Ok(parsed);
    }
    let sibling = std::env::current_exe()
        .ok()
        .and_then(|exe| exe.parent().map(|d| d.join(format!("{}{}", argv[0], std::env::consts::EXE_SUFFIX))))
        .filter(|p| p.is_file());
    let Some(sibling) = sibling else {
        return Ok(parsed);
    };
    let mut argv = argv;
    argv[0] = sibling.to_string_lossy().into_owned();
    let joined = shlex::try_join(argv.iter().map(String::as_str)).context("quoting backend command")?;
    Ok(BackendSpec::Command(joined))
}

fn connect(spec: &BackendSpec, timeout: Duration) -> Result<BackendConnection> {
    BackendConnection::connect(spec, timeout).with_context(|| format!("connecting to backend `{spec}`"))
}

struct Job {
    id: String,
    frames: Vec<Frame>,
    prompts: PromptSet,
}

fn pick<'a>(list: &'a [PathBuf], i: usize, what: &str, n: usize) -> Result<Option<&'a Path>> {
    match list.len() {
        0 => Ok(None),
        1 if n == 1 => Ok(Some(&list[0])),
        len if len == n => Ok(Some(&list[i])),
        len => bail!("{len} {what} given for {n} volumes"),
    }
}

fn prepare(a: &RunArgs, i: usize, volume: &Path) -> Result<Job> {
    let n = a.volumes.len();
    let vol = load_volume(volume, a.label.slice_axis)?;
    let ps = match (pick(&a.prompts, i, "prompt sets", n)?, pick(&a.labels, i, "label volumes", n)?) {
        (Some(p), _) => PromptSet::load(p)?,
        (None, Some(labels)) => {
            let scheme = a.scheme.context("--labels needs --scheme")?;
            let aux = pick(&a.aux, i, "aux files", n)?;
            prompt_set(labels, scheme, aux, a.snap, &a.label)?
        }
        (None, None) => bail!("give --prompts or --labels with --scheme"),
    };
    ensure!(
        ps.dims == vol.dims(),
        "{}: volume is {} but its prompts are for {}",
        volume.display(),
        vol.dims(),
        ps.dims
    );
    let mode = a.mode.unwrap_or(if ps.scheme.is_video() { Mode::Video } else { Mode::Image });
    ensure!(
        ps.scheme.is_video() == (mode == Mode::Video),
        "scheme {} cannot run in {mode} mode",
        ps.scheme
    );
    Ok(Job {
        id: volume_id(volume),
        frames: volume_to_frames(&vol, a.window)?,
        prompts: ps,
    })
}

fn run_job(a: &RunArgs, spec: &BackendSpec, job: &Job) -> Result<PathBuf> {
    let timeout = Duration::from_secs(a.backend.timeout);
    let opts = RunOptions {
        volume_id: Some(job.id.clone()),
        window: Some(a.window),
        timestamps: !a.deterministic,
        per_object_sessions: a.per_object_sessions,
    };
    let mut conn = connect(spec, timeout)?;
    let result = if !job.prompts.scheme.is_video() {
        run_image_mode(&job.frames, &job.prompts, &mut conn, &opts)
    } else if a.concurrent_directions {
        let mut second = connect(spec, timeout)?;
        run_video_mode_concurrent(&job.frames, &job.prompts, &mut conn, &mut second, &opts)
    } else {
        run_video_mode(&job.frames, &job.prompts, &mut conn, &opts)
    };
    match result {
        Ok(pred) => {
            let path = a.out.join(format!("{}.pred.jsonl", job.id));
            pred.save(&path)?;
            Ok(path)
        }
        Err(e) => {
            if let Some(partial) = e.partial() {
                let path = a.out.join(format!("{}.partial.pred.jsonl", job.id));
                if partial.save(&path).is_ok() {
                    eprintln!("{}: partial predictions kept in {}", job.id, path.display());
                }
            }
            Err(anyhow::Error::new(e).context(format!("volume {}", job.id)))
        }
    }
}

fn run(a: RunArgs) -> Result<()> {
    ensure!(a.jobs >= 1, "--jobs must be at least 1");
    let spec = resolve_backend(&a.backend.backend)?;
    let jobs: Vec<Job> = a
        .volumes
        .iter()
        .enumerate()
        .map(|(i, v)| prepare(&a, i, v))
        .collect::<Result<_>>()?;
    let mut seen = std::collections::BTreeSet::new();
    for job in &jobs {
        ensure!(seen.insert(job.id.as_str()), "two volumes share the id `{}`", job.id);
    }
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<(usize, Result<PathBuf>)>> = Mutex::new(Vec::new());
    std::thread::scope(|s| {
        for _ in 0..a.jobs.min(jobs.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(job) = jobs.get(i) else { break };
                let r = run_job(&a, &spec, job);
                results.lock().expect("results lock").push((i, r));
            });
        }
    });
    let mut results = results.into_inner().expect("results lock");
    results.sort_by_key(|(i, _)| *i);
    let mut first_err = None;
    for (_, r) in results {
        match r {
            Ok(path) => println!("{}", path.display()),
            Err(e) => {
                if first_err.is_some() {
                    eprintln!("error: {e:#}");
                } else {
                    first_err = Some(e);
                }
            }
        }
    }
    first_err.map_or(Ok(()), Err)
}

fn eval(a: EvalArgs) -> Result<()> {
    let dict = names(&a.label.names)?;
    let n = a.preds.len();
    ensure!(
        a.labels.len() == n || a.labels.len() == 1,
        "{} label volumes given for {n} predictions",
        a.labels.len()
    );
    let mut out = String::new();
    for (i, pred_path) in a.preds.iter().enumerate() {
        let pred = PredictionSet::load(pred_path)?;
        let labels = if a.labels.len() == 1 { &a.labels[0] } else { &a.labels[i] };
        let gt = load_labels(labels, &dict, a.label.slice_axis)?;
        let mut rec = evaluate_volume(&pred, &gt, a.combined)
            .with_context(|| format!("scoring {}", pred_path.display()))?;
        if rec.volume_id.is_none() {
            rec.volume_id = Some(volume_id(pred_path));
        }
        let scores: Vec<String> = rec
            .structures
            .iter()
            .map(|s| format!("{}={:.4}", s.name, s.dsc))
            .chain(rec.combined.map(|c| format!("combined={c:.4}")))
            .collect();
        eprintln!("{}: {}", rec.volume_id.as_deref().unwrap_or("?"), scores.join(" "));
        out.push_str(&rec.to_json_line());
        out.push('\n');
    }
    write_output(a.out.as_deref(), &out)
}

fn report(a: ReportArgs) -> Result<()> {
    let mut records = Vec::new();
    for path in &a.metrics {
        records.extend(load_records(path)?);
    }
    let table = if records.is_empty() {
        SummaryTable {
            structures: names(&a.names)?.into_values().collect(),
            rows: Vec::new(),
        }
    } else {
        summarize_records(&records)?
    };
    write_output(a.out.as_deref(), &render_report(&table, a.format))
}

fn backend_check(a: BackendCheckArgs) -> Result<()> {
    let spec = resolve_backend(&a.backend.backend)?;
    let mut conn = connect(&spec, Duration::from_secs(a.backend.timeout))?;
    let report = check_backend(&mut conn);
    print!("{report}");
    if !report.passed() {
        return Err(BackendFault(format!("{} failed protocol conformance", report.backend_id)).into());
    }
    Ok(())
}
