//! Batch analysis of traceroute corpora.
//!
//! The pipeline reads a folder of raw traceroute measurements (plain-text
//! traceroute / Paris-traceroute output and Atlas-style JSON results), drops
//! the files that cannot contribute to path analysis, geolocates every hop,
//! aggregates per-hop statistics, detects MPLS links, and draws the
//! resulting country-to-country links on a world map.
//!
//! Modules follow the data flow:
//!
//! - [`ingest`]: file discovery, format sniffing and parsing into [`Trace`]s
//! - [`clean`]: the exclusion rules and corpus accounting
//! - [`geodb`]: IPv4 prefix → country and country → map point tables
//! - [`stats`]: per-(hop, IP) statistics and the five-column stats file
//! - [`pathmap`]: inter-country segments, last-link filtering, MPLS flags
//! - [`render`]: PNG/SVG map drawing
//! - [`pipeline`]: end-to-end orchestration and the `trace.txt` log
//! - [`tracegen`]: seeded synthetic corpora with planted ground truth

pub mod clean;
pub mod decimal;
pub mod geodb;
pub mod ingest;
pub mod pathmap;
pub mod pipeline;
pub mod render;
pub mod sample;
pub mod stats;
pub mod tracegen;

pub use clean::{clean, clean_corpus, CleanVerdict, CleaningReport, CorpusOutcome, RejectReason};
pub use geodb::{CountryCode, CountryPoint, GeoDb, GeoDbError, Ipv4Prefix};
pub use ingest::{
    discover_inputs, parse_atlas_json, parse_input, parse_plain, write_atlas_json, write_plain,
    ErrorMark, Hop, InputFormat, MplsLabel, ParseError, RawInput, Reply, Rtt, Trace, TraceFormat,
};
pub use pathmap::{
    build_segments, extract_explicit_mpls, filter_last_links, flag_invisible_mpls, Adjacency,
    Direction, MplsKind, MplsLink, Segment, SegmentSet,
};
pub use pipeline::{run, write_trace_log, PipelineError, RunConfig, RunSummary};
pub use render::{
    render_map, resolve_color, BaseMap, OutputFormat, RenderConfig, RenderError, Rgb,
};
pub use stats::{accumulate, write_stats, HopStat, StatsTable};
pub use tracegen::{generate, GenSpec, Manifest, ManifestRecord};
