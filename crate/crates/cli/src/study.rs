use std::fmt::Write as _;
use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;

use anyhow::{Context, Result};
use ldct_core::dataio::PairManifest;
use ldct_study::server::run_blocking;
use ldct_study::{aggregate, collect_images, read_scores, read_sessions_beside, Study, StudyReport, VERSIONS};

use crate::evaluate::SplitArg;

#[derive(Debug, clap::Subcommand)]
pub enum Command {
    /// Serve blinded sessions over HTTP until interrupted.
    Serve(ServeArgs),
    /// Aggregate a score log into per-rater means.
    Report(ReportArgs),
}

#[derive(Debug, clap::Args)]
pub struct ServeArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Directory holding `<id>.raw` for every pair.
    #[arg(long, alias = "enhanced")]
    enhanced_dir: PathBuf,
    /// Directory for the session list and the score log.
    #[arg(long)]
    state: PathBuf,
    #[arg(long, default_value = "127.0.0.1")]
    host: IpAddr,
    /// 0 picks a free port.
    #[arg(long, default_value_t = 8080)]
    port: u16,
    /// Presentation order seed for sessions that do not supply one.
    #[arg(long)]
    seed: u64,
    #[arg(long, value_enum)]
    split: Option<SplitArg>,
}

#[derive(Debug, clap::Args)]
pub struct ReportArgs {
    /// Score log (`scores.jsonl`); a `sessions.json` beside it is used to
    /// flag unfinished sessions.
    #[arg(long)]
    scores: PathBuf,
    #[arg(long)]
    json: bool,
}

pub fn run(c: Command) -> Result<()> {
    match c {
        Command::Serve(a) => serve(a),
        Command::Report(a) => report(a),
    }
}

fn serve(a: ServeArgs) -> Result<()> {
    let manifest = PairManifest::read(&a.manifest)?;
    let images = collect_images(&manifest, &a.enhanced_dir, a.split.map(Into::into))?;
    let count = images.len();
    let study = Study::open(images, manifest.normalization, &a.state)?.with_master_seed(a.seed);
    run_blocking(study, SocketAddr::new(a.host, a.port), |addr| {
        eprintln!("serving {count} patients ({} items per session) on http://{addr}", 3 * count);
    })
    .context("running the study service")
}

fn report(a: ReportArgs) -> Result<()> {
    let records = read_scores(&a.scores)?;
    let sessions = read_sessions_beside(&a.scores)?;
    let report = aggregate(&records, sessions.as_deref())?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        print!("{}", table(&report));
    }
    Ok(())
}

/// Patients down, (rater, version) across, per-rater means at the bottom.
fn table(r: &StudyReport) -> String {
    let mut cols = Vec::new();
    for rater in &r.raters {
        for v in VERSIONS {
            cols.push((rater.rater_id.clone(), v));
        }
    }
    let width = cols
        .iter()
        .map(|(id, v)| id.len() + v.to_string().len() + 1)
        .max()
        .unwrap_or(0)
        .max(6);
    let first = r.patients.iter().map(|p| p.patient_id.len()).max().unwrap_or(0).max(7);

    let mut out = format!("{:<first$}", "patient");
    for (id, v) in &cols {
        let _ = write!(out, "  {:>width$}", format!("{id}:{v}"));
    }
    out.push('\n');
    for p in &r.patients {
        let _ = write!(out, "{:<first$}", p.patient_id);
        for (id, v) in &cols {
            let cell = p.scores.get(id).and_then(|m| m.get(v)).map_or("-".to_string(), |s| format!("{s}"));
            let _ = write!(out, "  {cell:>width$}");
        }
        out.push('\n');
    }
    let _ = write!(out, "{:<first$}", "mean");
    for (id, v) in &cols {
        let m = r
            .rater(id)
            .and_then(|s| s.mean(*v))
            .map_or("-".to_string(), |m| format!("{m:.2}"));
        let _ = write!(out, "  {m:>width$}");
    }
    out.push('\n');
    if r.partial {
        let _ = writeln!(out, "partial: unfinished sessions {}", r.incomplete_sessions.join(", "));
    }
    out
}
