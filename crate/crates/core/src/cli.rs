//! Command-line front end of the `chronokey` binary.
//!
//! Exit status: 0 on success, 1 when validation finds problems, 2 on errors
//! (including usage errors).

use std::io::BufRead;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crate::calendar::{scan_annal_stream, CalendarManifest, TimeKey};
use crate::corpus::{derive_manifest, load_gallery, read_records, validate_records, Gallery, Record, RecordType, Split, SplitRatios};
use crate::ctd::{Checkpoint, CtdParams, ScoreConfig, DEFAULT_ALPHA};
use crate::embed::{encode_all, load_embeddings, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::eval::{evaluate, evaluate_mode, trec_run, Bm25Scorer, DenseScorer, EvalOptions, ProtocolMode, RecallMode, RunReport, Scorer};
use crate::lexical::{bm25_search, timekde_rerank, Bm25Params, InvertedIndex, TimeKdeParams};
use crate::querygen::{default_templates, instantiate_queries, load_queries, load_templates, save_queries, Query, QueryConfig};
use crate::synth::{generate_corpus, SynthSpec};
use crate::trainer::{train, TrainConfig, TrainData};

#[derive(Debug, Parser)]
#[command(name = "chronokey", version, about = "Month-level temporal retrieval over reign-dated chronicles")]
pub struct Cli {
    /// Print machine-readable JSON on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for ranking (default: logical cores).
    #[arg(long, global = true, env = "CHRONOKEY_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Assign time keys to an ordered stream of annal lines.
    Scan(ScanArgs),
    /// Validate records, add no_event placeholders and assign splits.
    Ingest(IngestArgs),
    /// Generate a synthetic corpus.
    Synth(SynthArgs),
    /// Instantiate temporal queries over a gallery.
    Queries(QueriesArgs),
    /// Build and save a BM25 index.
    Index(IndexArgs),
    /// Run one ad-hoc lexical search.
    Search(SearchArgs),
    /// Hash-encode texts, or convert external vectors.
    Encode(EncodeArgs),
    /// Train the calendar-aware scoring head.
    Train(TrainArgs),
    /// Evaluate a scorer under chosen protocol modes.
    Eval(EvalArgs),
    /// Evaluate a scorer under all six protocol modes.
    Grid(EvalArgs),
    /// Summarize one or more evaluation reports.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct ScanArgs {
    /// Text file, one annal line per row.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Starting key `gong,year,month` for streams that begin mid-reign.
    #[arg(long, value_parser = parse_key)]
    pub start: Option<TimeKey>,
    /// Source layer recorded on every line.
    #[arg(long, default_value = "annals")]
    pub source: String,
    #[arg(long, default_value = "scan")]
    pub id_prefix: String,
    /// Records JSONL (stdout when absent).
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Records JSONL.
    #[arg(long)]
    pub records: PathBuf,
    /// Calendar manifest; derived from the records when absent.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub min_years: u32,
    #[arg(long, default_value_t = 13)]
    pub min_months: u32,
    /// Skip no_event synthesis.
    #[arg(long)]
    pub no_placeholders: bool,
    /// Keep the existing split labels.
    #[arg(long)]
    pub keep_splits: bool,
    #[arg(long, default_value_t = 0.8)]
    pub train: f64,
    #[arg(long, default_value_t = 0.1)]
    pub validation: f64,
    #[arg(long, default_value_t = 0.1)]
    pub test: f64,
    /// Only report findings.
    #[arg(long)]
    pub check: bool,
    /// Gallery JSONL; the manifest is written next to it.
    #[arg(short, long, required_unless_present = "check")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// JSON generator specification; unspecified fields take defaults.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Output directory for gallery.jsonl, manifest.json and ledger.json.
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct QueriesArgs {
    #[arg(long)]
    pub gallery: PathBuf,
    /// Template JSON; the built-in set when absent.
    #[arg(long)]
    pub templates: Option<PathBuf>,
    /// Let year-relative templates cross reign boundaries.
    #[arg(long)]
    pub cross_reign: bool,
    /// Do not clip windows to their split block.
    #[arg(long)]
    pub no_clip: bool,
    /// Restrict to anchors in these splits.
    #[arg(long, value_delimiter = ',')]
    pub splits: Vec<Split>,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    #[arg(long)]
    pub gallery: PathBuf,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[arg(long)]
    pub gallery: PathBuf,
    /// Saved index; rebuilt from the gallery when absent.
    #[arg(long)]
    pub index: Option<PathBuf>,
    #[arg(long)]
    pub query: String,
    #[arg(long, default_value_t = 10)]
    pub top: usize,
    #[command(flatten)]
    pub lexical: LexicalArgs,
    /// Re-rank with the temporal density prior.
    #[arg(long)]
    pub kde: bool,
}

#[derive(Debug, Args, Clone, Copy)]
pub struct LexicalArgs {
    #[arg(long, default_value_t = 1.2)]
    pub k1: f64,
    #[arg(long, default_value_t = 0.75)]
    pub b: f64,
    /// Density bandwidth in months.
    #[arg(long, default_value_t = 3.0)]
    pub kde_bandwidth: f64,
    #[arg(long, default_value_t = 0.5)]
    pub kde_weight: f64,
    #[arg(long, default_value_t = 20)]
    pub kde_fit: usize,
}

impl LexicalArgs {
    fn bm25(&self) -> Bm25Params {
        Bm25Params { k1: self.k1, b: self.b }
    }

    fn kde(&self) -> TimeKdeParams {
        TimeKdeParams {
            bandwidth: self.kde_bandwidth,
            weight: self.kde_weight,
            top_k_fit: self.kde_fit,
        }
    }
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    /// Encode the records of this gallery.
    #[arg(long, conflicts_with_all = ["queries", "import"])]
    pub gallery: Option<PathBuf>,
    /// Encode the texts of this query file.
    #[arg(long, conflicts_with = "import")]
    pub queries: Option<PathBuf>,
    /// Convert JSONL lines `{"id": .., "vector": [..]}` to the binary format.
    #[arg(long)]
    pub import: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    /// Also dump the vectors as JSONL.
    #[arg(long)]
    pub export: Option<PathBuf>,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub gallery: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub record_emb: PathBuf,
    #[arg(long)]
    pub query_emb: PathBuf,
    /// JSON training configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Ablation preset: ft, multi, bias, ctx or full.
    #[arg(long)]
    pub ablation: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Leave embeddings as stored instead of L2-normalizing them.
    #[arg(long)]
    pub raw_embeddings: bool,
    /// Run directory.
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScorerName {
    Bm25,
    #[value(name = "bm25+timekde")]
    Bm25Timekde,
    Sem,
    Abs,
    Ctd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum QuerySplit {
    Train,
    Validation,
    Test,
    All,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub gallery: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long, value_enum)]
    pub scorer: ScorerName,
    /// Trained checkpoint for dense scorers.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub record_emb: Option<PathBuf>,
    #[arg(long)]
    pub query_emb: Option<PathBuf>,
    #[arg(long)]
    pub raw_embeddings: bool,
    /// Protocol modes (eval only; default the official mode).
    #[arg(long, value_delimiter = ',')]
    pub mode: Vec<ProtocolMode>,
    /// Queries to evaluate.
    #[arg(long, value_enum, default_value = "test")]
    pub split: QuerySplit,
    /// Report set recall instead of hit rate.
    #[arg(long)]
    pub set_recall: bool,
    /// Keep top-100 rankings in the report.
    #[arg(long)]
    pub rankings: bool,
    /// TREC run file for the first mode.
    #[arg(long)]
    pub trec: Option<PathBuf>,
    #[command(flatten)]
    pub lexical: LexicalArgs,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Report JSON files.
    #[arg(required = true)]
    pub reports: Vec<PathBuf>,
    /// Stratum to tabulate.
    #[arg(long, default_value = "all/all")]
    pub stratum: String,
}

fn parse_key(s: &str) -> std::result::Result<TimeKey, String> {
    let parts: Vec<u32> = s
        .split(',')
        .map(|p| p.trim().parse::<u32>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match parts.as_slice() {
        [g, y, m] => Ok(TimeKey::new(*g, *y, *m)),
        _ => Err("expected gong,year,month".into()),
    }
}

/// Outcome of a subcommand: human text, JSON payload and exit status.
struct Outcome {
    text: String,
    json: Value,
    code: i32,
}

impl Outcome {
    fn ok(text: String, json: Value) -> Self {
        Self { text, json, code: 0 }
    }
}

/// Parses `args`, runs the subcommand and returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("thread pool already initialized: {e}");
        }
    }
    match dispatch(&cli) {
        Ok(out) => {
            if cli.json {
                println!("{}", serde_json::to_string_pretty(&out.json).expect("JSON value serializes"));
            } else if !out.text.is_empty() {
                print!("{}", out.text);
            }
            out.code
        }
        Err(e) => {
            if cli.json {
                println!("{}", json!({ "error": e.to_string() }));
            }
            eprintln!("error: {e}");
            2
        }
    }
}

fn dispatch(cli: &Cli) -> Result<Outcome> {
    match &cli.command {
        Command::Scan(a) => scan(a),
        Command::Ingest(a) => ingest(a, cli.seed),
        Command::Synth(a) => synth(a, cli.seed),
        Command::Queries(a) => queries(a),
        Command::Index(a) => index(a),
        Command::Search(a) => search(a),
        Command::Encode(a) => encode(a, cli.seed),
        Command::Train(a) => train_cmd(a, cli.seed),
        Command::Eval(a) => eval_cmd(a, cli.seed, false),
        Command::Grid(a) => eval_cmd(a, cli.seed, true),
        Command::Report(a) => report(a),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn scan(a: &ScanArgs) -> Result<Outcome> {
    let manifest = CalendarManifest::load(&a.manifest)?;
    let file = std::fs::File::open(&a.input).map_err(|e| Error::io(format!("opening {}", a.input.display()), e))?;
    let lines: Vec<String> = std::io::BufReader::new(file)
        .lines()
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(format!("reading {}", a.input.display()), e))?;
    let lines: Vec<String> = lines.into_iter().filter(|l| !l.trim().is_empty()).collect();
    let keyed = scan_annal_stream(&lines, &manifest, a.start)?;
    let mut out = String::new();
    for (i, (text, key)) in keyed.iter().enumerate() {
        let record = Record {
            id: format!("{}-{:05}", a.id_prefix, i + 1),
            text: text.trim().to_string(),
            key: *key,
            rtype: RecordType::Event,
            source: a.source.clone(),
            split: None,
        };
        out.push_str(&serde_json::to_string(&record)?);
        out.push('\n');
    }
    let summary = json!({ "lines": keyed.len() });
    match &a.output {
        Some(path) => {
            write_file(path, &out)?;
            Ok(Outcome::ok(format!("keyed {} lines -> {}\n", keyed.len(), path.display()), summary))
        }
        None => Ok(Outcome::ok(out, summary)),
    }
}

fn ingest(a: &IngestArgs, seed: u64) -> Result<Outcome> {
    let mut records = read_records(&a.records)?;
    let manifest = match &a.manifest {
        Some(p) => CalendarManifest::load(p)?,
        None => derive_manifest(&records, a.min_years, a.min_months)?,
    };
    if !a.keep_splits {
        records.iter_mut().for_each(|r| r.split = None);
    }
    let report = validate_records(&manifest, &records);
    if !report.is_clean() || a.check {
        let mut text = String::new();
        for v in &report.violations {
            text.push_str(&format!("{}: {}\n", v.kind, v.detail));
        }
        text.push_str(&format!("{} records, {} findings\n", records.len(), report.violations.len()));
        let code = if report.is_clean() { 0 } else { 1 };
        return Ok(Outcome {
            text,
            json: serde_json::to_value(&report)?,
            code,
        });
    }
    let mut gallery = Gallery::new(manifest.clone(), records)?;
    let mut added = 0;
    if !a.no_placeholders {
        (gallery, added) = gallery.synthesize_no_event(&manifest.full_timeline())?;
    }
    let mut warnings = Vec::new();
    if !a.keep_splits {
        let ratios = SplitRatios {
            train: a.train,
            validation: a.validation,
            test: a.test,
        };
        (gallery, warnings) = gallery.assign_splits(ratios, seed)?;
    }
    let mut report = gallery.validate();
    report.warnings.extend(warnings);
    let output = a.output.as_ref().expect("clap requires --output without --check");
    gallery.save(output)?;
    let mut text = format!(
        "{} records ({} no_event added) -> {}\n",
        gallery.len(),
        added,
        output.display()
    );
    for w in &report.warnings {
        text.push_str(&format!("warning: {w}\n"));
    }
    Ok(Outcome {
        text,
        code: if report.is_clean() { 0 } else { 1 },
        json: json!({ "records": gallery.len(), "no_event_added": added, "validation": report }),
    })
}

fn synth(a: &SynthArgs, seed: u64) -> Result<Outcome> {
    let spec: SynthSpec = match &a.spec {
        Some(p) => {
            let s = std::fs::read_to_string(p).map_err(|e| Error::io(format!("reading {}", p.display()), e))?;
            serde_json::from_str(&s)?
        }
        None => SynthSpec::default(),
    };
    let (gallery, _, ledger) = generate_corpus(&spec, seed)?;
    std::fs::create_dir_all(&a.output).map_err(|e| Error::io(format!("creating {}", a.output.display()), e))?;
    gallery.save(&a.output.join("gallery.jsonl"))?;
    ledger.save(&a.output.join("ledger.json"))?;
    let summary = json!({
        "records": gallery.len(),
        "months": ledger.months,
        "events": ledger.events,
        "no_event": ledger.no_event,
        "distractors": ledger.distractors,
    });
    Ok(Outcome::ok(
        format!(
            "{} months: {} events, {} no_event, {} distractors -> {}\n",
            ledger.months,
            ledger.events,
            ledger.no_event,
            ledger.distractors,
            a.output.display()
        ),
        summary,
    ))
}

fn queries(a: &QueriesArgs) -> Result<Outcome> {
    let gallery = load_gallery(&a.gallery, None)?;
    let templates = match &a.templates {
        Some(p) => load_templates(p)?,
        None => default_templates(),
    };
    let config = QueryConfig {
        templates: None,
        cross_reign_years: a.cross_reign,
        clip_to_split: !a.no_clip,
        splits: (!a.splits.is_empty()).then(|| a.splits.iter().copied().collect()),
    };
    let set = instantiate_queries(&gallery, &templates, &config)?;
    save_queries(&a.output, &set.queries)?;
    let mut text = format!("{} queries -> {}\n", set.queries.len(), a.output.display());
    for (reason, n) in &set.skipped.by_reason {
        text.push_str(&format!("skipped {n} ({reason})\n"));
    }
    Ok(Outcome::ok(text, json!({ "queries": set.queries.len(), "skipped": set.skipped })))
}

fn index(a: &IndexArgs) -> Result<Outcome> {
    let gallery = load_gallery(&a.gallery, None)?;
    let idx = InvertedIndex::from_gallery(&gallery);
    idx.save(&a.output)?;
    Ok(Outcome::ok(
        format!("indexed {} documents -> {}\n", idx.num_docs(), a.output.display()),
        json!({ "documents": idx.num_docs() }),
    ))
}

fn search(a: &SearchArgs) -> Result<Outcome> {
    let gallery = load_gallery(&a.gallery, None)?;
    let idx = match &a.index {
        Some(p) => InvertedIndex::load(p)?,
        None => InvertedIndex::from_gallery(&gallery),
    };
    let depth = if a.kde { a.top.max(crate::eval::RANK_DEPTH) } else { a.top };
    let mut hits = bm25_search(&idx, &a.query, a.lexical.bm25(), depth)?;
    if a.kde && !hits.is_empty() {
        hits = timekde_rerank(&hits, &gallery, a.lexical.kde())?;
        crate::lexical::sort_hits(&mut hits);
    }
    hits.truncate(a.top);
    let mut text = String::new();
    let mut rows = Vec::new();
    for (rank, (id, score)) in hits.iter().enumerate() {
        let r = gallery
            .get(id)
            .ok_or_else(|| Error::Consistency(format!("index holds {id:?} but the gallery does not")))?;
        text.push_str(&format!("{:>3} {:>10.4}  {}  {}\n", rank + 1, score, id, r.text));
        rows.push(json!({ "rank": rank + 1, "id": id, "score": score, "gong": r.key.gong, "year": r.key.year, "month": r.key.month }));
    }
    Ok(Outcome::ok(text, Value::Array(rows)))
}

fn import_vectors(path: &Path) -> Result<EmbeddingMatrix> {
    #[derive(serde::Deserialize)]
    struct Row {
        id: String,
        vector: Vec<f32>,
    }
    let file = std::fs::File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let mut m: Option<EmbeddingMatrix> = None;
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: Row = serde_json::from_str(&line).map_err(|e| Error::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        m.get_or_insert_with(|| EmbeddingMatrix::new(row.vector.len()))
            .push(row.id, &row.vector)?;
    }
    m.ok_or_else(|| Error::Config(format!("{} holds no vectors", path.display())))
}

fn export_vectors(m: &EmbeddingMatrix, path: &Path) -> Result<()> {
    let mut out = String::new();
    for id in m.ids() {
        let v = m.get(id).expect("id comes from the matrix");
        out.push_str(&serde_json::to_string(&json!({ "id": id, "vector": v }))?);
        out.push('\n');
    }
    write_file(path, &out)
}

fn encode(a: &EncodeArgs, seed: u64) -> Result<Outcome> {
    let m = if let Some(p) = &a.import {
        import_vectors(p)?
    } else if let Some(p) = &a.gallery {
        let g = load_gallery(p, None)?;
        encode_all(g.records().iter().map(|r| (r.id.as_str(), r.text.as_str())), a.dim, seed)?
    } else if let Some(p) = &a.queries {
        let qs = load_queries(p)?;
        encode_all(qs.iter().map(|q| (q.id.as_str(), q.text.as_str())), a.dim, seed)?
    } else {
        return Err(Error::Config("encode needs --gallery, --queries or --import".into()));
    };
    m.save(&a.output)?;
    if let Some(p) = &a.export {
        export_vectors(&m, p)?;
    }
    Ok(Outcome::ok(
        format!("{} vectors of width {} -> {}\n", m.len(), m.dim(), a.output.display()),
        json!({ "vectors": m.len(), "dim": m.dim() }),
    ))
}

fn train_cmd(a: &TrainArgs, seed: u64) -> Result<Outcome> {
    let mut config = match (&a.config, &a.ablation) {
        (Some(p), _) => {
            let s = std::fs::read_to_string(p).map_err(|e| Error::io(format!("reading {}", p.display()), e))?;
            serde_json::from_str(&s)?
        }
        (None, Some(name)) => TrainConfig::ablation(name)?,
        (None, None) => TrainConfig::default(),
    };
    if a.config.is_some() {
        if let Some(name) = &a.ablation {
            let preset = TrainConfig::ablation(name)?;
            config.use_multi = preset.use_multi;
            config.use_bias = preset.use_bias;
            config.use_ctx = preset.use_ctx;
        }
    }
    config.seed = seed;
    if let Some(e) = a.epochs {
        config.epochs = e;
    }
    if let Some(lr) = a.lr {
        config.lr = lr;
    }
    if let Some(b) = a.batch_size {
        config.batch_size = b;
    }
    let gallery = load_gallery(&a.gallery, None)?;
    let qs = load_queries(&a.queries)?;
    let record_emb = load_embeddings(&a.record_emb, !a.raw_embeddings)?;
    let query_emb = load_embeddings(&a.query_emb, !a.raw_embeddings)?;
    let data = TrainData {
        gallery: &gallery,
        queries: &qs,
        record_emb: &record_emb,
        query_emb: &query_emb,
    };
    let out = train(&config, &data, Some(&a.output))?;
    let mut text = String::from("epoch  loss      val R@1\n");
    for e in &out.curve {
        text.push_str(&format!("{:>5}  {:<8.5}  {:.4}\n", e.epoch, e.loss, e.val_r1));
    }
    text.push_str(&format!("best epoch {} -> {}\n", out.best_epoch, a.output.join("best.ckpt").display()));
    let curve: Vec<Value> = out
        .curve
        .iter()
        .map(|e| json!({ "epoch": e.epoch, "loss": e.loss, "val_R@1": e.val_r1 }))
        .collect();
    Ok(Outcome::ok(text, json!({ "best_epoch": out.best_epoch, "curve": curve })))
}

fn select_queries(qs: Vec<Query>, split: QuerySplit) -> Vec<Query> {
    let want = match split {
        QuerySplit::All => return qs,
        QuerySplit::Train => Split::Train,
        QuerySplit::Validation => Split::Validation,
        QuerySplit::Test => Split::Test,
    };
    qs.into_iter().filter(|q| q.split == Some(want)).collect()
}

fn dense_params(a: &EvalArgs, manifest: &CalendarManifest, h: usize, seed: u64) -> Result<CtdParams> {
    match &a.ckpt {
        Some(p) => {
            let ck = Checkpoint::load(p, manifest)?;
            let wanted = score_of(a.scorer).expect("dense scorer");
            if ck.score != wanted {
                log::warn!(
                    "checkpoint was trained for {} but is scored as {}",
                    ck.score.name(),
                    wanted.name()
                );
            }
            Ok(ck.params)
        }
        None => {
            if a.scorer != ScorerName::Sem {
                return Err(Error::Config(format!("scorer {:?} needs --ckpt", a.scorer)));
            }
            let dims = crate::ctd::CtdDims::for_manifest(h, manifest);
            CtdParams::init(dims, DEFAULT_ALPHA, manifest.fingerprint(), seed)
        }
    }
}

fn score_of(name: ScorerName) -> Option<ScoreConfig> {
    match name {
        ScorerName::Sem => Some(ScoreConfig::SEM),
        ScorerName::Abs => Some(ScoreConfig::ABS),
        ScorerName::Ctd => Some(ScoreConfig::CTD),
        ScorerName::Bm25 | ScorerName::Bm25Timekde => None,
    }
}

fn eval_cmd(a: &EvalArgs, seed: u64, grid: bool) -> Result<Outcome> {
    let gallery = load_gallery(&a.gallery, None)?;
    let qs = select_queries(load_queries(&a.queries)?, a.split);
    let modes = if grid {
        if !a.mode.is_empty() {
            return Err(Error::Config("grid always evaluates all six modes; drop --mode".into()));
        }
        ProtocolMode::grid()
    } else if a.mode.is_empty() {
        vec![ProtocolMode::OFFICIAL]
    } else {
        a.mode.clone()
    };
    let opts = EvalOptions {
        recall: if a.set_recall { RecallMode::SetRecall } else { RecallMode::HitRate },
        keep_rankings: a.rankings,
    };
    let mut config = json!({
        "scorer": a.scorer.to_possible_value().expect("named variant").get_name(),
        "split": format!("{:?}", a.split).to_lowercase(),
        "recall": opts.recall,
        "seed": seed,
        "gallery_records": gallery.len(),
        "manifest_fingerprint": format!("{:016x}", gallery.manifest().fingerprint()),
    });

    let embeddings;
    let scorer: Box<dyn Scorer> = match a.scorer {
        ScorerName::Bm25 | ScorerName::Bm25Timekde => {
            config["bm25"] = json!({ "k1": a.lexical.k1, "b": a.lexical.b });
            let kde = (a.scorer == ScorerName::Bm25Timekde).then(|| a.lexical.kde());
            if let Some(k) = kde {
                config["timekde"] = json!({ "bandwidth": k.bandwidth, "weight": k.weight, "top_k_fit": k.top_k_fit });
            }
            Box::new(Bm25Scorer {
                params: a.lexical.bm25(),
                kde,
            })
        }
        _ => {
            let (Some(rp), Some(qp)) = (&a.record_emb, &a.query_emb) else {
                return Err(Error::Config("dense scorers need --record-emb and --query-emb".into()));
            };
            embeddings = (
                load_embeddings(rp, !a.raw_embeddings)?,
                load_embeddings(qp, !a.raw_embeddings)?,
            );
            let params = dense_params(a, gallery.manifest(), embeddings.0.dim(), seed)?;
            Box::new(DenseScorer {
                params,
                score: score_of(a.scorer).expect("dense scorer"),
                records: &embeddings.0,
                queries: &embeddings.1,
            })
        }
    };

    let report = evaluate(scorer.as_ref(), &gallery, &qs, &modes, opts, config)?;
    if let Some(path) = &a.trec {
        let (_, ranked, filtered) = evaluate_mode(scorer.as_ref(), &gallery, &qs, modes[0], opts)?;
        write_file(path, &trec_run(&filtered, &ranked, &report.scorer))?;
    }
    if let Some(path) = &a.output {
        report.save(path)?;
    }
    let text = summary_table(std::slice::from_ref(&report), "all/all");
    Ok(Outcome::ok(text, serde_json::to_value(&report)?))
}

fn summary_table(reports: &[RunReport], stratum: &str) -> String {
    let mut s = format!(
        "{:<14} {:<14} {:>7} {:>7} {:>7} {:>7} {:>8} {:>8}\n",
        "scorer", "mode", "queries", "R@1", "R@5", "R@10", "MRR@10", "nDCG@10"
    );
    for r in reports {
        for (mode, m) in &r.modes {
            let Some(x) = m.strata.get(stratum) else {
                continue;
            };
            s.push_str(&format!(
                "{:<14} {:<14} {:>7} {:>7.4} {:>7.4} {:>7.4} {:>8.4} {:>8.4}\n",
                r.scorer, mode, x.queries, x.r1, x.r5, x.r10, x.mrr10, x.ndcg10
            ));
        }
    }
    s
}

fn report(a: &ReportArgs) -> Result<Outcome> {
    let mut reports = Vec::new();
    for p in &a.reports {
        let s = std::fs::read_to_string(p).map_err(|e| Error::io(format!("reading {}", p.display()), e))?;
        reports.push(serde_json::from_str::<RunReport>(&s)?);
    }
    let rows: Vec<Value> = reports
        .iter()
        .flat_map(|r| {
            r.modes.iter().filter_map(|(mode, m)| {
                m.strata
                    .get(&a.stratum)
                    .map(|x| json!({ "scorer": r.scorer, "mode": mode, "metrics": x }))
            })
        })
        .collect();
    Ok(Outcome::ok(summary_table(&reports, &a.stratum), Value::Array(rows)))
}
