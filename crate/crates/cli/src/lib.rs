//! Command-line driver: each pipeline stage as a subcommand.

pub mod analyze;
pub mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use policyflow::agents::AgentError;
use policyflow::analyser::{AnalyserError, RiskWeights};
use policyflow::gateway::GatewayError;
use policyflow::knowledge::{
    load_typology, load_typology_dir, KbError, KnowledgeBase, ValidationOptions,
};
use policyflow::parser::ParserError;
use policyflow::report::{
    compare_reports, corpus_report_csv, corpus_report_text, parse_any_report, parse_policy_report,
    policy_report_csv, policy_report_text, AnyReport, ReportError,
};
use policyflow::segmenter::{segment_html, PolicyDocument, Segment, SegmentError};
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{BackendKind, EmbeddingConfig, InputSpec, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("file not found: {0}")]
    NotFound(PathBuf),
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Segment(#[from] SegmentError),
    #[error(transparent)]
    Knowledge(#[from] KbError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Parser(#[from] ParserError),
    #[error(transparent)]
    Analyser(#[from] AnalyserError),
    #[error(transparent)]
    Report(#[from] ReportError),
}

impl CliError {
    pub fn read(path: &Path, source: std::io::Error) -> Self {
        if source.kind() == std::io::ErrorKind::NotFound {
            CliError::NotFound(path.to_path_buf())
        } else {
            CliError::Read {
                path: path.to_path_buf(),
                source,
            }
        }
    }

    pub fn write(path: &Path, source: std::io::Error) -> Self {
        CliError::Write {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub fn read_input(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::read(path, e))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| CliError::write(dir, e))?;
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    let result = fs::File::create(&tmp)
        .and_then(|mut f| {
            f.write_all(bytes)?;
            f.sync_all()
        })
        .and_then(|()| fs::rename(&tmp, path));
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(CliError::write(path, e));
    }
    Ok(())
}

fn emit(output: Option<&Path>, text: &str) -> Result<(), CliError> {
    match output {
        Some(path) => write_atomic(path, text.as_bytes()),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .map_err(|e| CliError::write(Path::new("<stdout>"), e))
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "policyflow", version, about = "Extract and analyse data flows in privacy policies")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split an HTML policy into segments.
    Segment(SegmentArgs),
    /// Validate or embed knowledge typologies.
    #[command(subcommand)]
    Kb(KbCommand),
    /// Run the full pipeline over the configured policies.
    Analyze(AnalyzeArgs),
    /// Merge per-policy reports into one comparison table.
    Compare(CompareArgs),
    /// Render a report as text, CSV or JSON.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, ValueEnum)]
pub enum SegmentFormat {
    #[default]
    Text,
    Json,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = SegmentFormat::Text)]
    pub format: SegmentFormat,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum KbCommand {
    /// Check a typology file, or a directory holding all four.
    Validate {
        path: PathBuf,
        #[arg(long)]
        allow_social_media_purpose: bool,
    },
    /// Embed a typology directory into an index file.
    Build {
        dir: PathBuf,
        /// Defaults to `<dir>/index.json`.
        #[arg(long, short)]
        output: Option<PathBuf>,
        /// Takes the `[embedding]` settings from this run config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        allow_social_media_purpose: bool,
    },
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub backend: Option<BackendKind>,
    #[arg(long)]
    pub fixtures: Option<PathBuf>,
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub threads: Option<usize>,
    /// Policy HTML file; replaces the configured inputs. Pair each with `--org`.
    #[arg(long = "input")]
    pub inputs: Vec<PathBuf>,
    #[arg(long = "org")]
    pub orgs: Vec<String>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(required = true)]
    pub reports: Vec<PathBuf>,
    /// Takes risk weights from this run config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    #[default]
    Text,
    Csv,
    Json,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    pub report: PathBuf,
    #[arg(long, value_enum, default_value_t = ReportFormat::Text)]
    pub format: ReportFormat,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Serialize)]
struct SegmentLine<'a> {
    index: usize,
    kind: &'a str,
    text: &'a str,
}

fn escape_text(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out
}

/// One line per segment: `index<TAB>kind<TAB>text` or a JSON object.
pub fn format_segments(segments: &[Segment], format: SegmentFormat) -> String {
    segments
        .iter()
        .map(|s| {
            let line = match format {
                SegmentFormat::Text => {
                    format!("{}\t{}\t{}", s.index, s.kind.as_str(), escape_text(&s.text))
                }
                SegmentFormat::Json => serde_json::to_string(&SegmentLine {
                    index: s.index,
                    kind: s.kind.as_str(),
                    text: &s.text,
                })
                .expect("segment serialises"),
            };
            line + "\n"
        })
        .collect()
}

pub fn cmd_segment(args: &SegmentArgs) -> Result<usize, CliError> {
    let html = read_input(&args.input)?;
    let id = args
        .input
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let segments = segment_html(&PolicyDocument::new(id, "", html))?;
    emit(args.output.as_deref(), &format_segments(&segments, args.format))?;
    Ok(segments.len())
}

fn kb_validate(path: &Path, opts: ValidationOptions) -> Result<String, CliError> {
    if !path.exists() {
        return Err(CliError::NotFound(path.to_path_buf()));
    }
    let typologies = if path.is_dir() {
        load_typology_dir(path, opts)?
    } else {
        vec![load_typology(path, opts)?]
    };
    Ok(typologies
        .iter()
        .map(|t| format!("ok {} ({} nodes)\n", t.kind, t.nodes.len()))
        .collect())
}

fn kb_build(
    dir: &Path,
    output: Option<&Path>,
    config: Option<&Path>,
    opts: ValidationOptions,
) -> Result<String, CliError> {
    if !dir.is_dir() {
        return Err(CliError::NotFound(dir.to_path_buf()));
    }
    let embedding = match config {
        Some(path) => RunConfig::load(path)?.embedding,
        None => EmbeddingConfig::default(),
    };
    let kb = KnowledgeBase::load_dir(dir, analyze::make_embedder(&embedding)?, opts)?;
    let out = output.map(Path::to_path_buf).unwrap_or_else(|| dir.join("index.json"));
    write_atomic(&out, kb.to_json().as_bytes())?;
    Ok(format!("wrote {}\n", out.display()))
}

/// Loads the config file, if any, and applies flag overrides.
pub fn resolve_run_config(args: &AnalyzeArgs) -> Result<RunConfig, CliError> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(b) = args.backend {
        cfg.backend = b;
    }
    if let Some(p) = &args.fixtures {
        cfg.fixtures = Some(p.clone());
    }
    if let Some(p) = &args.cache_dir {
        cfg.cache_dir = Some(p.clone());
    }
    if let Some(p) = &args.output_dir {
        cfg.output_dir = p.clone();
    }
    if let Some(n) = args.threads {
        cfg.threads = n;
    }
    if !args.inputs.is_empty() || !args.orgs.is_empty() {
        if args.inputs.len() != args.orgs.len() {
            return Err(CliError::Config(format!(
                "{} --input flag(s) but {} --org flag(s)",
                args.inputs.len(),
                args.orgs.len()
            )));
        }
        cfg.inputs = args
            .inputs
            .iter()
            .zip(&args.orgs)
            .map(|(path, org)| InputSpec {
                path: path.clone(),
                org_name: org.clone(),
                id: None,
            })
            .collect();
    }
    Ok(cfg)
}

pub fn cmd_analyze(args: &AnalyzeArgs) -> Result<analyze::AnalyzeOutcome, CliError> {
    analyze::analyze(&resolve_run_config(args)?)
}

pub fn cmd_compare(args: &CompareArgs) -> Result<String, CliError> {
    let weights = match &args.config {
        Some(path) => RunConfig::load(path)?.weights,
        None => RiskWeights::default(),
    };
    let reports = args
        .reports
        .iter()
        .map(|p| Ok(parse_policy_report(&read_input(p)?)?))
        .collect::<Result<Vec<_>, CliError>>()?;
    let csv = compare_reports(&reports, &weights)?;
    emit(args.output.as_deref(), &csv)?;
    Ok(csv)
}

pub fn cmd_report(args: &ReportArgs) -> Result<String, CliError> {
    let text = read_input(&args.report)?;
    let rendered = match (parse_any_report(&text)?, args.format) {
        (_, ReportFormat::Json) => text,
        (AnyReport::Policy(r), ReportFormat::Text) => policy_report_text(&r),
        (AnyReport::Policy(r), ReportFormat::Csv) => policy_report_csv(&r)?,
        (AnyReport::Corpus(r), ReportFormat::Text) => corpus_report_text(&r),
        (AnyReport::Corpus(r), ReportFormat::Csv) => corpus_report_csv(&r)?,
    };
    emit(args.output.as_deref(), &rendered)?;
    Ok(rendered)
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Segment(args) => {
            let n = cmd_segment(&args)?;
            log::info!("{n} segments");
        }
        Command::Kb(KbCommand::Validate {
            path,
            allow_social_media_purpose,
        }) => {
            let opts = ValidationOptions {
                allow_social_media_purpose,
            };
            emit(None, &kb_validate(&path, opts)?)?;
        }
        Command::Kb(KbCommand::Build {
            dir,
            output,
            config,
            allow_social_media_purpose,
        }) => {
            let opts = ValidationOptions {
                allow_social_media_purpose,
            };
            eprint!("{}", kb_build(&dir, output.as_deref(), config.as_deref(), opts)?);
        }
        Command::Analyze(args) => {
            let outcome = cmd_analyze(&args)?;
            for p in &outcome.manifest.policies {
                eprintln!(
                    "{}: {} segments, {} failed, {} flows",
                    p.policy_id, p.counts.segments, p.counts.failed_segments, p.counts.parsed_flows
                );
            }
            eprintln!("wrote {}", outcome.output_dir.display());
        }
        Command::Compare(args) => {
            cmd_compare(&args)?;
        }
        Command::Report(args) => {
            cmd_report(&args)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use policyflow::segmenter::SegmentKind;

    fn seg(index: usize, text: &str) -> Segment {
        Segment {
            index,
            kind: SegmentKind::TableRow,
            text: text.to_string(),
            raw_lines: text.lines().map(str::to_string).collect(),
        }
    }

    #[test]
    fn text_and_json_carry_the_same_content() {
        let segs = [seg(0, "_table_Data|Recipient\nVIN|Panasonic"), seg(1, "a\tb \\ c")];
        let text = format_segments(&segs, SegmentFormat::Text);
        let json = format_segments(&segs, SegmentFormat::Json);
        assert_eq!(text.lines().count(), 2);
        assert_eq!(json.lines().count(), 2);
        assert_eq!(text.lines().next().unwrap(), "0\ttable_row\t_table_Data|Recipient\\nVIN|Panasonic");
        for (t, j) in text.lines().zip(json.lines()) {
            let v: serde_json::Value = serde_json::from_str(j).unwrap();
            let fields: Vec<&str> = t.splitn(3, '\t').collect();
            assert_eq!(v["index"].to_string(), fields[0]);
            assert_eq!(v["kind"], fields[1]);
            assert_eq!(escape_text(v["text"].as_str().unwrap()), fields[2]);
        }
    }

    #[test]
    fn atomic_write_replaces_and_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/out.txt");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "two");
        let names: Vec<_> = fs::read_dir(path.parent().unwrap()).unwrap().collect();
        assert_eq!(names.len(), 1);
    }

    #[test]
    fn missing_input_is_not_found() {
        let err = read_input(Path::new("/no/such/policy.html")).unwrap_err();
        assert!(err.to_string().starts_with("file not found"));
    }

    #[test]
    fn input_flags_must_pair_with_orgs() {
        let args = AnalyzeArgs {
            config: None,
            backend: None,
            fixtures: None,
            cache_dir: None,
            output_dir: None,
            threads: Some(2),
            inputs: vec!["a.html".into()],
            orgs: vec![],
        };
        assert!(matches!(resolve_run_config(&args), Err(CliError::Config(_))));
        let args = AnalyzeArgs {
            orgs: vec!["Acme".into()],
            ..args
        };
        let cfg = resolve_run_config(&args).unwrap();
        assert_eq!(cfg.threads, 2);
        assert_eq!(cfg.inputs[0].org_name, "Acme");
    }
}
