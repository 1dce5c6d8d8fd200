//! End-to-end run over an input folder.
//!
//! discover → parse → clean → statistics + explicit MPLS → segments
//! (+ last links, + invisible-MPLS candidates) → `stats.txt`, `trace.txt`,
//! `map_all.*`, `map_last.*`.
//!
//! Parsing fans out over a dedicated thread pool. Every aggregate is merged
//! with exact integer arithmetic, so outputs are byte-identical for any
//! worker count.

use std::collections::{BTreeSet, HashSet};
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::clean::{clean_corpus, CleaningReport, RejectReason, Rejection};
use crate::decimal::Hundredths;
use crate::geodb::{CountryCode, GeoDb, GeoDbError};
use crate::ingest::{discover_paths, parse_input, IngestError, RawInput, Trace};
use crate::pathmap::{
    build_segments, extract_explicit_mpls, filter_last_links, flag_invisible_mpls, Adjacency,
    AdjacencyError, Direction, MplsKind, MplsLink, Segment, SegmentSet,
};
use crate::render::{render_map, BaseMap, RenderConfig, RenderError};
use crate::sample;
use crate::stats::{write_stats, StatsTable};

pub const STATS_FILE: &str = "stats.txt";
pub const TRACE_LOG: &str = "trace.txt";

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub input: PathBuf,
    /// `None` selects the bundled sample table.
    pub geo_prefixes: Option<PathBuf>,
    pub geo_points: Option<PathBuf>,
    /// `None` selects the bundled base map.
    pub map: Option<PathBuf>,
    pub adjacency: Option<PathBuf>,
    /// Country whose border crossings are drawn on the last-links map.
    pub focus: Option<CountryCode>,
    pub direction: Direction,
    pub render: RenderConfig,
    pub output_dir: PathBuf,
    pub jobs: usize,
}

impl RunConfig {
    pub fn new(input: impl Into<PathBuf>, output_dir: impl Into<PathBuf>) -> Self {
        RunConfig {
            input: input.into(),
            geo_prefixes: None,
            geo_points: None,
            map: None,
            adjacency: None,
            focus: None,
            direction: Direction::Leaving,
            render: RenderConfig::default(),
            output_dir: output_dir.into(),
            jobs: 1,
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    GeoDb(#[from] GeoDbError),
    #[error(transparent)]
    Adjacency(#[from] AdjacencyError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("output directory {0} lies inside the input folder")]
    OutputInsideInput(PathBuf),
    #[error("worker count must be positive")]
    NoWorkers,
    #[error("thread pool: {0}")]
    ThreadPool(#[from] rayon::ThreadPoolBuildError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub report: CleaningReport,
    pub stats_rows: usize,
    pub mpls_links: usize,
    pub segments: usize,
    pub last_segments: Option<usize>,
    /// every file written, in write order
    pub outputs: Vec<PathBuf>,
}

impl RunSummary {
    /// 0 when at least one trace was accepted, 2 when everything was rejected.
    pub fn exit_code(&self) -> i32 {
        if self.report.accepted_count > 0 {
            0
        } else {
            2
        }
    }
}

/// Everything the verbose log reports.
pub struct TraceLog<'a> {
    pub report: &'a CleaningReport,
    pub rejections: &'a [Rejection],
    pub mpls: &'a [MplsLink],
    pub segments: &'a SegmentSet,
    pub last_links: Option<(&'a SegmentSet, CountryCode, Direction)>,
}

/// Keeps commentary from ever matching the `lien.*MPLS` and `__ trajet`
/// filters.
fn comment(text: &str) -> String {
    let mut line = format!("// {text}");
    if let Some(i) = line.find("lien") {
        if line[i..].contains("MPLS") {
            line = line.replace("MPLS", "mpls");
        }
    }
    line.replace("__ trajet", "_ _ trajet")
}

fn min_rtt_text(seg: &Segment) -> String {
    seg.min_rtt.map_or("-".into(), |r| {
        Hundredths::from_micros(r.micros()).to_string()
    })
}

/// `__ trajet: x1 y1 -> x2 y2: occ (pct%) [A - B et temps min rtt (pct%)]`
pub fn trajet_line(seg: &Segment, pct: Hundredths) -> String {
    format!(
        "__ trajet: {} {} -> {} {}: {} ({pct}%) [{} - {} et temps min {} ({pct}%)]",
        seg.a.x,
        seg.a.y,
        seg.b.x,
        seg.b.y,
        seg.occurrences,
        seg.a.country,
        seg.b.country,
        min_rtt_text(seg),
    )
}

/// `// lien <-> MPLS: a b`
pub fn mpls_line(link: &MplsLink) -> String {
    let (a, b) = link.ends();
    format!("// lien <-> MPLS: {a} {b}")
}

pub fn write_trace_log<W: Write>(mut w: W, log: &TraceLog<'_>) -> io::Result<()> {
    let r = log.report;
    writeln!(w, "{}", comment("tracemap trace log"))?;
    writeln!(
        w,
        "{}",
        comment(&format!("clean: input: {}", r.input_count))
    )?;
    writeln!(
        w,
        "{}",
        comment(&format!("clean: accepted: {}", r.accepted_count))
    )?;
    for reason in RejectReason::ALL {
        writeln!(
            w,
            "{}",
            comment(&format!("clean: {reason}: {}", r.count(reason)))
        )?;
    }
    for rej in log.rejections {
        writeln!(
            w,
            "{}",
            comment(&format!("reject {}: {}", rej.reason, rej.origin.display()))
        )?;
    }

    writeln!(
        w,
        "{}",
        comment(&format!("explicit MPLS links: {}", log.mpls.len()))
    )?;
    for link in log.mpls {
        writeln!(w, "{}", mpls_line(link))?;
    }

    let set = log.segments;
    writeln!(
        w,
        "{}",
        comment(&format!(
            "segments: {} (total occurrences {})",
            set.len(),
            set.total_occurrences()
        ))
    )?;
    for (seg, pct) in set.shares() {
        writeln!(w, "{}", trajet_line(seg, pct))?;
    }
    for seg in set.iter() {
        let kind = match seg.mpls {
            MplsKind::None => continue,
            MplsKind::Explicit => "explicit",
            MplsKind::InvisibleCandidate => "invisible candidate",
        };
        writeln!(
            w,
            "{}",
            comment(&format!(
                "mpls {kind}: {} - {}",
                seg.a.country, seg.b.country
            ))
        )?;
    }

    if let Some((last, focus, direction)) = log.last_links {
        let dir = match direction {
            Direction::Leaving => "leaving",
            Direction::Entering => "entering",
        };
        writeln!(
            w,
            "{}",
            comment(&format!(
                "last links {dir} {focus}: {} (total occurrences {})",
                last.len(),
                last.total_occurrences()
            ))
        )?;
        for (seg, pct) in last.shares() {
            let line = trajet_line(seg, pct);
            let body = line.trim_start_matches("__ trajet: ");
            writeln!(w, "{}", comment(&format!("last link: {body}")))?;
        }
    }
    Ok(())
}

struct Inputs {
    db: GeoDb,
    map: BaseMap,
    adjacency: Option<Adjacency>,
}

fn load_inputs(cfg: &RunConfig) -> Result<Inputs, PipelineError> {
    let read = |path: &Option<PathBuf>, bundled: &str| -> Result<String, PipelineError> {
        match path {
            Some(p) => std::fs::read_to_string(p).map_err(|source| {
                GeoDbError::MissingFile {
                    path: p.clone(),
                    source,
                }
                .into()
            }),
            None => Ok(bundled.to_string()),
        }
    };
    let db = GeoDb::from_tables(
        &read(&cfg.geo_prefixes, sample::PREFIXES_CSV)?,
        &read(&cfg.geo_points, sample::POINTS_CSV)?,
    )?;
    let map = match &cfg.map {
        Some(p) => BaseMap::load(p)?,
        None => sample::base_map(),
    };
    db.check_bounds(map.width(), map.height())?;
    let adjacency = cfg.adjacency.as_deref().map(Adjacency::load).transpose()?;
    cfg.render.validate()?;
    Ok(Inputs { db, map, adjacency })
}

/// Canonical form of a path that may not exist yet: the deepest existing
/// ancestor is resolved and the remaining components appended.
fn resolve(path: &Path) -> std::io::Result<PathBuf> {
    let path = std::path::absolute(path)?;
    let mut existing = path.as_path();
    let mut rest = Vec::new();
    loop {
        match existing.canonicalize() {
            Ok(base) => return Ok(rest.iter().rev().fold(base, |p, c| p.join(c))),
            Err(e) => {
                rest.push(existing.file_name().ok_or(e)?.to_os_string());
                existing = existing.parent().unwrap_or(Path::new("/"));
            }
        }
    }
}

fn check_output_dir(cfg: &RunConfig) -> Result<(), PipelineError> {
    let out = resolve(&cfg.output_dir).map_err(io_err(&cfg.output_dir))?;
    if let Ok(input) = cfg.input.canonicalize() {
        if out.starts_with(&input) {
            return Err(PipelineError::OutputInsideInput(cfg.output_dir.clone()));
        }
    }
    std::fs::create_dir_all(&cfg.output_dir).map_err(io_err(&cfg.output_dir))
}

const CHUNK: usize = 256;

pub fn run(cfg: &RunConfig) -> Result<RunSummary, PipelineError> {
    if cfg.jobs == 0 {
        return Err(PipelineError::NoWorkers);
    }
    let inputs = load_inputs(cfg)?;
    let paths = discover_paths(&cfg.input)?;
    check_output_dir(cfg)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()?;
    let db = &inputs.db;

    let (corpus, stats, mpls, segments, last) = pool.install(|| {
        let parsed: Vec<Vec<_>> = paths
            .par_iter()
            .map(|path| {
                let raw = RawInput::load(path);
                parse_input(&raw)
                    .into_iter()
                    .map(|o| (path.clone(), o))
                    .collect()
            })
            .collect();
        let corpus = clean_corpus(parsed.into_iter().flatten());
        let traces: &[Trace] = &corpus.accepted;

        let stats = traces
            .par_chunks(CHUNK)
            .map(|chunk| crate::stats::accumulate(chunk, db))
            .reduce(StatsTable::default, |a, b| a.merge(&b));
        let mpls: BTreeSet<MplsLink> = traces
            .par_iter()
            .flat_map_iter(extract_explicit_mpls)
            .collect::<Vec<_>>()
            .into_iter()
            .collect();
        let mpls_set: HashSet<MplsLink> = mpls.iter().copied().collect();

        let segments = traces
            .par_chunks(CHUNK)
            .map(|chunk| build_segments(chunk, db, &mpls_set))
            .reduce(SegmentSet::default, |a, b| a.merge(&b));
        let segments = flag_invisible_mpls(segments, inputs.adjacency.as_ref());

        let last = cfg.focus.map(|focus| {
            let set = traces
                .par_chunks(CHUNK)
                .map(|chunk| filter_last_links(chunk, db, focus, cfg.direction, &mpls_set))
                .reduce(SegmentSet::default, |a, b| a.merge(&b));
            (flag_invisible_mpls(set, inputs.adjacency.as_ref()), focus)
        });
        (
            corpus,
            stats,
            mpls.into_iter().collect::<Vec<_>>(),
            segments,
            last,
        )
    });

    let mut outputs = Vec::new();
    let stats_path = cfg.output_dir.join(STATS_FILE);
    write_stats(&stats, &stats_path).map_err(io_err(&stats_path))?;
    outputs.push(stats_path);

    let log_path = cfg.output_dir.join(TRACE_LOG);
    let log = TraceLog {
        report: &corpus.report,
        rejections: &corpus.rejections,
        mpls: &mpls,
        segments: &segments,
        last_links: last
            .as_ref()
            .map(|(set, focus)| (set, *focus, cfg.direction)),
    };
    let write_log = || -> io::Result<()> {
        let mut w = BufWriter::new(File::create(&log_path)?);
        write_trace_log(&mut w, &log)?;
        w.flush()
    };
    write_log().map_err(io_err(&log_path))?;
    outputs.push(log_path.clone());

    if corpus.report.accepted_count > 0 {
        let ext = cfg.render.format.extension();
        let all_path = cfg.output_dir.join(format!("map_all.{ext}"));
        let last_path = cfg.output_dir.join(format!("map_last.{ext}"));
        let (a, b) = pool.join(
            || render_map(&segments, &inputs.map, &cfg.render, &all_path),
            || match &last {
                Some((set, _)) => render_map(set, &inputs.map, &cfg.render, &last_path).map(Some),
                None => Ok(None),
            },
        );
        a?;
        outputs.push(all_path);
        if b?.is_some() {
            outputs.push(last_path);
        }
    }

    Ok(RunSummary {
        stats_rows: stats.rows.len(),
        mpls_links: mpls.len(),
        segments: segments.len(),
        last_segments: last.as_ref().map(|(s, _)| s.len()),
        report: corpus.report,
        outputs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodb::{cc, CountryPoint};
    use crate::ingest::Rtt;

    fn segment(a: (&str, u32, u32), b: (&str, u32, u32), occ: u64, min_us: Option<u64>) -> Segment {
        Segment {
            a: CountryPoint {
                country: cc(a.0),
                x: a.1,
                y: a.2,
            },
            b: CountryPoint {
                country: cc(b.0),
                x: b.1,
                y: b.2,
            },
            occurrences: occ,
            min_rtt: min_us.map(Rtt::from_micros),
            mpls: MplsKind::None,
        }
    }

    #[test]
    fn trajet_format() {
        let seg = segment(("AU", 3626, 1638), ("RE", 2581, 1582), 105, Some(505_390));
        assert_eq!(
            trajet_line(&seg, Hundredths::percent(105, 3736)),
            "__ trajet: 3626 1638 -> 2581 1582: 105 (2.81%) [AU - RE et temps min 505.39 (2.81%)]"
        );
        let seg = segment(("FR", 1, 2), ("RE", 3, 4), 1, None);
        assert!(trajet_line(&seg, Hundredths(10_000)).ends_with("temps min - (100.00%)]"));
    }

    #[test]
    fn mpls_format() {
        let link = MplsLink::new(
            "93.17.132.110".parse().unwrap(),
            "109.24.74.178".parse().unwrap(),
        )
        .unwrap();
        assert_eq!(
            mpls_line(&link),
            "// lien <-> MPLS: 93.17.132.110 109.24.74.178"
        );
    }

    #[test]
    fn commentary_never_matches_filters() {
        assert_eq!(
            comment("reject x: /data/client/MPLS.txt"),
            "// reject x: /data/client/mpls.txt"
        );
        assert_eq!(comment("a __ trajet b"), "// a _ _ trajet b");
        assert_eq!(
            comment("explicit MPLS links: 3"),
            "// explicit MPLS links: 3"
        );
    }

    #[test]
    fn empty_log() {
        let report = CleaningReport::default();
        let set = SegmentSet::default();
        let mut buf = Vec::new();
        write_trace_log(
            &mut buf,
            &TraceLog {
                report: &report,
                rejections: &[],
                mpls: &[],
                segments: &set,
                last_links: None,
            },
        )
        .unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(!text.contains("__ trajet"));
        assert!(text.contains("// clean: input: 0\n"));
        assert!(text.contains("// clean: CorruptJson: 0\n"));
        assert!(text.lines().all(|l| l.starts_with("// ")));
    }
}
