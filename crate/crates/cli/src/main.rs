//! `vptk` command-line front end.
//!
//! Machine output (summaries, reports) goes to stdout as JSON; logs go to
//! stderr. Exit status is 0 when no strict-mode error occurred, 1 on
//! failures and 2 on usage errors.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use vptk::annotate::{
    build_request, dispatch, AnnotationTask, AnnotationTemplate, HttpProvider, MarkLabel, MockProvider, Provider,
};
use vptk::ingest::{build_corpus, read_triples, write_triples, BuildOptions, CorpusManifest, ParseMode};
use vptk::kernel::{kernel_check, KernelCheckOptions, KernelConfig};
use vptk::metrics::report::format_table;
use vptk::metrics::{evaluate, load_embeddings, EvalItem, MetricConfig, MetricKind, DEFAULT_TAU};
use vptk::render::{render_triple, RenderStyle};
use vptk::synth::{AugmentConfig, DEFAULT_ALPHA, DEFAULT_PATCH_PX};
use vptk::{Execution, Triple};

#[derive(Parser, Debug)]
#[command(name = "vptk", version, about = "Visual-prompt corpus toolkit")]
struct Cli {
    /// Global seed. `convert` falls back to the manifest seed when omitted.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads; 1 runs everything sequentially.
    #[arg(long, global = true, default_value_t = default_threads(), value_parser = clap::value_parser!(u64).range(1..))]
    threads: u64,

    /// Abort on the first bad input instead of skipping it.
    #[arg(long, global = true)]
    strict: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a triple corpus from a manifest.
    Convert {
        manifest: PathBuf,
        /// Output JSONL; defaults to the manifest's `output` field.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_ALPHA)]
        alpha: f64,
        #[arg(long, default_value_t = DEFAULT_PATCH_PX)]
        patch_px: u32,
    },
    /// Draw numbered marks for every triple.
    Render {
        triples: PathBuf,
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build annotation requests and send them to a provider.
    Annotate {
        triples: PathBuf,
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = ProviderKind::Mock)]
        provider: ProviderKind,
        #[arg(long, default_value = "brief", value_parser = parse_template)]
        template: AnnotationTask,
        /// Upper bound on concurrent provider calls.
        #[arg(long, default_value_t = 4)]
        max_in_flight: usize,
        /// Also write the built requests (without the overlay) as JSONL.
        #[arg(long)]
        requests: Option<PathBuf>,
    },
    /// Score predictions against references.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Comma-separated metric names.
        #[arg(long, value_delimiter = ',', value_parser = parse_metric, default_value = "bleu4,rouge_l,cider")]
        metrics: Vec<MetricKind>,
        /// Word vectors, `token v1 ... vD` per line.
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_TAU)]
        tau: f64,
    },
    /// Run the fusion-kernel invariant and gradient checks.
    KernelCheck {
        #[arg(long, default_value_t = 8)]
        d_v: usize,
        #[arg(long, default_value_t = 6)]
        d_l: usize,
        #[arg(long, default_value_t = 2)]
        n_views: usize,
        #[arg(long, default_value_t = 16)]
        ffn_hidden: usize,
        #[arg(long, default_value_t = 100)]
        cases: usize,
        /// Perturb one analytic gradient to exercise the failure path.
        #[arg(long)]
        corrupt: bool,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ProviderKind {
    Mock,
    Http,
}

fn default_threads() -> u64 {
    std::thread::available_parallelism().map_or(1, |n| n.get() as u64)
}

fn parse_template(s: &str) -> std::result::Result<AnnotationTask, String> {
    s.parse().map_err(|e: vptk::Error| e.to_string())
}

fn parse_metric(s: &str) -> std::result::Result<MetricKind, String> {
    s.trim().parse().map_err(|e: vptk::Error| e.to_string())
}

/// Per-item failure kept in a command summary.
#[derive(Debug, Serialize)]
struct Failure {
    id: String,
    error: String,
}

struct Ctx {
    seed: Option<u64>,
    strict: bool,
    exec: Execution,
}

impl Ctx {
    fn mode(&self) -> ParseMode {
        if self.strict {
            ParseMode::Strict
        } else {
            ParseMode::Lenient
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();

    let exec = if cli.threads == 1 {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    #[cfg(feature = "parallel")]
    if let Err(e) = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads as usize)
        .build_global()
    {
        log::warn!("thread pool already configured: {e}");
    }
    let ctx = Ctx {
        seed: cli.seed,
        strict: cli.strict,
        exec,
    };

    let outcome = match cli.command {
        Command::Convert {
            manifest,
            out,
            alpha,
            patch_px,
        } => cmd_convert(&ctx, &manifest, out.as_deref(), alpha, patch_px),
        Command::Render { triples, images, out } => cmd_render(&ctx, &triples, &images, &out),
        Command::Annotate {
            triples,
            images,
            out,
            provider,
            template,
            max_in_flight,
            requests,
        } => {
            let opts = AnnotateOpts {
                provider,
                task: template,
                max_in_flight,
                requests,
            };
            cmd_annotate(&ctx, &triples, &images, &out, &opts)
        }
        Command::Eval {
            pred,
            gt,
            metrics,
            embeddings,
            tau,
        } => cmd_eval(&ctx, &pred, &gt, &metrics, embeddings.as_deref(), tau),
        Command::KernelCheck {
            d_v,
            d_l,
            n_views,
            ffn_hidden,
            cases,
            corrupt,
        } => {
            let defaults = KernelConfig::default();
            let config = KernelConfig {
                d_v,
                d_l,
                n_views,
                ffn_hidden,
                seed: ctx.seed.unwrap_or(defaults.seed),
                ..defaults
            };
            cmd_kernel_check(&ctx, config, cases, corrupt)
        }
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::FAILURE
        }
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let mut stdout = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut stdout, value)?;
    writeln!(stdout)?;
    Ok(())
}

fn load_triples(ctx: &Ctx, path: &Path) -> Result<(Vec<Triple>, usize)> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let loaded = read_triples(BufReader::new(file), ctx.mode()).with_context(|| path.display().to_string())?;
    Ok((loaded.items, loaded.warnings.len()))
}

/// Triple ids may contain path separators; keep file names flat.
fn file_stem_for(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect()
}

fn cmd_convert(ctx: &Ctx, manifest_path: &Path, out: Option<&Path>, alpha: f64, patch_px: u32) -> Result<bool> {
    let bytes = fs::read(manifest_path).with_context(|| format!("reading {}", manifest_path.display()))?;
    let manifest = CorpusManifest::parse(&bytes).with_context(|| manifest_path.display().to_string())?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let out = match (out, &manifest.output) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(o)) => base.join(o),
        (None, None) => bail!("no --out given and the manifest has no `output`"),
    };
    let augment = AugmentConfig::with_alpha(alpha);
    augment.validate()?;
    if patch_px == 0 {
        bail!("--patch-px must be positive");
    }
    let opts = BuildOptions {
        seed: ctx.seed.unwrap_or(manifest.seed),
        augment,
        patch_px,
        mode: ctx.mode(),
        exec: ctx.exec,
        ..BuildOptions::default()
    };
    let build = build_corpus(&manifest, base, &opts)?;
    let file = File::create(&out).with_context(|| format!("creating {}", out.display()))?;
    let mut sink = BufWriter::new(file);
    write_triples(&build.triples, &mut sink)?;
    sink.flush()?;
    log::info!("wrote {} triples to {}", build.triples.len(), out.display());
    print_json(&build.summary())?;
    Ok(!(ctx.strict && build.failed_entries > 0))
}

#[derive(Serialize)]
struct RenderSummary {
    rendered: usize,
    skipped_lines: usize,
    failed: Vec<Failure>,
}

fn cmd_render(ctx: &Ctx, triples: &Path, images: &Path, out: &Path) -> Result<bool> {
    let (triples, skipped_lines) = load_triples(ctx, triples)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let style = RenderStyle::default();
    let results = ctx.exec.map(&triples, |t| -> Result<()> {
        let src = images.join(&t.image_path);
        let bytes = fs::read(&src).with_context(|| format!("reading {}", src.display()))?;
        let png = render_triple(t, &bytes, &style)?;
        let dst = out.join(format!("{}.png", file_stem_for(&t.id)));
        fs::write(&dst, png).with_context(|| format!("writing {}", dst.display()))?;
        Ok(())
    });
    let mut summary = RenderSummary {
        rendered: 0,
        skipped_lines,
        failed: Vec::new(),
    };
    for (t, r) in triples.iter().zip(results) {
        match r {
            Ok(()) => summary.rendered += 1,
            Err(e) => {
                log::warn!("{}: {e:#}", t.id);
                summary.failed.push(Failure {
                    id: t.id.clone(),
                    error: format!("{e:#}"),
                });
            }
        }
    }
    print_json(&summary)?;
    Ok(!(ctx.strict && !summary.failed.is_empty()))
}

#[derive(Serialize)]
struct AnnotateSummary {
    provider: String,
    template: String,
    annotated: usize,
    skipped_lines: usize,
    failed: Vec<Failure>,
}

struct AnnotateOpts {
    provider: ProviderKind,
    task: AnnotationTask,
    max_in_flight: usize,
    requests: Option<PathBuf>,
}

#[derive(Serialize)]
struct RequestLine<'a> {
    triple_id: &'a str,
    task: &'a str,
    prompt_text: &'a str,
    marks: &'a [MarkLabel],
}

fn cmd_annotate(ctx: &Ctx, triples: &Path, images: &Path, out: &Path, opts: &AnnotateOpts) -> Result<bool> {
    let task = opts.task;
    let provider: Box<dyn Provider> = match opts.provider {
        ProviderKind::Mock => Box::new(MockProvider),
        ProviderKind::Http => Box::new(HttpProvider::from_env()?),
    };
    let (triples, skipped_lines) = load_triples(ctx, triples)?;
    let template = AnnotationTemplate::default_for(task);
    let style = RenderStyle::default();

    let built = ctx.exec.map(&triples, |t| -> Result<_> {
        let src = images.join(&t.image_path);
        let bytes = fs::read(&src).with_context(|| format!("reading {}", src.display()))?;
        Ok(build_request(t, &bytes, &template, &style)?)
    });
    let mut failed = Vec::new();
    let mut requests = Vec::new();
    for (t, r) in triples.iter().zip(built) {
        match r {
            Ok(req) => requests.push(req),
            Err(e) => failed.push(Failure {
                id: t.id.clone(),
                error: format!("{e:#}"),
            }),
        }
    }

    requests.sort_by(|a, b| a.triple_id.cmp(&b.triple_id));
    if let Some(path) = &opts.requests {
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        let mut sink = BufWriter::new(file);
        for r in &requests {
            let line = RequestLine {
                triple_id: &r.triple_id,
                task: r.task.as_str(),
                prompt_text: &r.prompt_text,
                marks: &r.marks,
            };
            serde_json::to_writer(&mut sink, &line)?;
            sink.write_all(b"\n")?;
        }
        sink.flush()?;
    }

    let results = dispatch(&requests, provider.as_ref(), opts.max_in_flight, ctx.exec)?;
    let file = File::create(out).with_context(|| format!("creating {}", out.display()))?;
    let mut sink = BufWriter::new(file);
    let mut annotated = 0;
    for (id, r) in results {
        match r {
            Ok(res) => {
                serde_json::to_writer(&mut sink, &res)?;
                sink.write_all(b"\n")?;
                annotated += 1;
            }
            Err(e) => failed.push(Failure {
                id,
                error: e.to_string(),
            }),
        }
    }
    sink.flush()?;
    failed.sort_by(|a, b| a.id.cmp(&b.id));
    for f in &failed {
        log::warn!("{}: {}", f.id, f.error);
    }
    let summary = AnnotateSummary {
        provider: provider.name().to_string(),
        template: task.to_string(),
        annotated,
        skipped_lines,
        failed,
    };
    print_json(&summary)?;
    Ok(!(ctx.strict && !summary.failed.is_empty()))
}

/// One line of a prediction or reference file. Reference files may repeat an
/// id to supply several references.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TextLine {
    id: String,
    text: String,
}

fn read_text_lines(path: &Path) -> Result<Vec<TextLine>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TextLine =
            serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?;
        out.push(rec);
    }
    Ok(out)
}

#[derive(Serialize)]
struct EvalOutput {
    n: usize,
    tau: f64,
    skipped: Vec<String>,
    reports: Vec<vptk::metrics::ScoreReport>,
}

fn cmd_eval(
    ctx: &Ctx,
    pred: &Path,
    gt: &Path,
    metrics: &[MetricKind],
    embeddings: Option<&Path>,
    tau: f64,
) -> Result<bool> {
    let cfg = MetricConfig::with_tau(tau)?;
    if metrics.is_empty() {
        bail!("no metrics requested");
    }
    let table = match embeddings {
        Some(p) => {
            let file = File::open(p).with_context(|| format!("opening {}", p.display()))?;
            let loaded = load_embeddings(BufReader::new(file)).with_context(|| p.display().to_string())?;
            for w in &loaded.warnings {
                log::warn!("{}: {w}", p.display());
            }
            Some(loaded.items)
        }
        None => None,
    };
    if let Some(m) = metrics.iter().find(|m| m.needs_embeddings() && table.is_none()) {
        bail!("metric `{m}` needs --embeddings");
    }

    let mut refs: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for r in read_text_lines(gt)? {
        refs.entry(r.id).or_default().push(r.text);
    }
    let mut seen = BTreeSet::new();
    let mut skipped = Vec::new();
    let mut items = Vec::new();
    for p in read_text_lines(pred)? {
        if !seen.insert(p.id.clone()) {
            if ctx.strict {
                bail!("duplicate prediction id `{}`", p.id);
            }
            log::warn!("duplicate prediction id `{}` ignored", p.id);
            continue;
        }
        match refs.get(&p.id) {
            Some(r) => items.push(EvalItem {
                id: p.id,
                pred: p.text,
                refs: r.clone(),
            }),
            None => {
                if ctx.strict {
                    bail!("prediction `{}` has no reference", p.id);
                }
                log::warn!("prediction `{}` has no reference; skipped", p.id);
                skipped.push(p.id);
            }
        }
    }
    for id in refs.keys().filter(|id| !seen.contains(*id)) {
        if ctx.strict {
            bail!("reference `{id}` has no prediction");
        }
        log::warn!("reference `{id}` has no prediction; skipped");
        skipped.push(id.clone());
    }
    skipped.sort();
    items.sort_by(|a, b| a.id.cmp(&b.id));

    let reports = metrics
        .iter()
        .map(|&m| evaluate(&items, m, table.as_ref(), &cfg, ctx.exec))
        .collect::<vptk::Result<Vec<_>>>()?;
    eprint!("{}", format_table(&reports));
    print_json(&EvalOutput {
        n: items.len(),
        tau,
        skipped,
        reports,
    })?;
    Ok(true)
}

fn cmd_kernel_check(ctx: &Ctx, config: KernelConfig, cases: usize, corrupt: bool) -> Result<bool> {
    config.validate()?;
    let opts = KernelCheckOptions {
        config,
        cases,
        corrupt,
        ..KernelCheckOptions::default()
    };
    let report = kernel_check(&opts, ctx.exec)?;
    log::info!(
        "kernel check {} in {} ms (max gradient rel. error {:.3e})",
        if report.passed { "passed" } else { "FAILED" },
        report.elapsed_ms,
        report.max_rel_err
    );
    print_json(&report)?;
    Ok(report.passed)
}
