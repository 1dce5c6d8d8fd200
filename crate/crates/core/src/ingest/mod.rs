//! Input discovery and parsing.
//!
//! A corpus is a folder of files. Each file is sniffed into one of
//! [`InputFormat::PlainText`], [`InputFormat::Json`] or
//! [`InputFormat::Unknown`] and then handed to the matching parser. Parsers
//! are pure functions over the file bytes.

mod atlas;
mod plain;

use std::fmt;
use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use walkdir::WalkDir;

pub use atlas::{parse_atlas_json, write_atlas_json};
pub use plain::{parse_plain, write_plain};

/// Round-trip time stored as whole microseconds.
///
/// Tool output carries three decimals of milliseconds, so microseconds hold
/// every observed value exactly and make sums and minima order-independent.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Rtt(u64);

impl Rtt {
    pub const ZERO: Rtt = Rtt(0);

    pub const fn from_micros(us: u64) -> Self {
        Rtt(us)
    }

    /// Nearest microsecond; `None` for negative or non-finite input.
    pub fn from_ms(ms: f64) -> Option<Self> {
        if !ms.is_finite() || ms < 0.0 {
            return None;
        }
        let us = (ms * 1000.0).round();
        if us > u64::MAX as f64 {
            return None;
        }
        Some(Rtt(us as u64))
    }

    pub const fn micros(self) -> u64 {
        self.0
    }

    pub fn as_ms(self) -> f64 {
        self.0 as f64 / 1000.0
    }
}

impl fmt::Display for Rtt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:03}", self.0 / 1000, self.0 % 1000)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid RTT value {0:?}")]
pub struct BadRtt(String);

impl FromStr for Rtt {
    type Err = BadRtt;

    /// Parses `digits[.digits]` exactly, rounding half-up past the third
    /// decimal.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || BadRtt(s.to_string());
        let (int, frac) = s.split_once('.').unwrap_or((s, ""));
        if int.is_empty() || !int.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        if !frac.bytes().all(|b| b.is_ascii_digit()) || (s.contains('.') && frac.is_empty()) {
            return Err(bad());
        }
        let whole: u64 = int.parse().map_err(|_| bad())?;
        let mut us: u64 = 0;
        let digits = frac.as_bytes();
        for i in 0..3 {
            us = us * 10 + digits.get(i).map_or(0, |d| (d - b'0') as u64);
        }
        if digits.get(3).is_some_and(|&d| d >= b'5') {
            us += 1;
        }
        whole
            .checked_mul(1000)
            .and_then(|w| w.checked_add(us))
            .map(Rtt)
            .ok_or_else(bad)
    }
}

/// Unreachability annotations carried by a reply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ErrorMark {
    /// `!H`
    HostUnreachable,
    /// `!N`
    NetUnreachable,
    /// any token containing `WARN`
    Warn,
}

/// One probe reply. `from == None` is a star (no answer).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reply {
    pub from: Option<Ipv4Addr>,
    pub rtt: Option<Rtt>,
    pub mark: Option<ErrorMark>,
}

impl Reply {
    pub fn star() -> Self {
        Reply {
            from: None,
            rtt: None,
            mark: None,
        }
    }

    pub fn answered(from: Ipv4Addr, rtt: Rtt) -> Self {
        Reply {
            from: Some(from),
            rtt: Some(rtt),
            mark: None,
        }
    }

    pub fn is_star(&self) -> bool {
        self.from.is_none()
    }
}

/// One entry of an MPLS label stack quoted in an ICMP extension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MplsLabel {
    pub label: u32,
    pub ttl: u8,
    pub exp: u8,
    pub bottom_of_stack: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hop {
    pub ttl: u32,
    pub replies: Vec<Reply>,
    pub mpls_labels: Vec<MplsLabel>,
}

impl Hop {
    /// Address of the first reply that answered; the hop's position on maps.
    pub fn representative_ip(&self) -> Option<Ipv4Addr> {
        self.replies.iter().find_map(|r| r.from)
    }

    pub fn min_rtt(&self) -> Option<Rtt> {
        self.replies.iter().filter_map(|r| r.rtt).min()
    }

    pub fn all_stars(&self) -> bool {
        self.replies.iter().all(Reply::is_star)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TraceFormat {
    PlainText,
    Json,
}

/// One measurement from a source toward a destination.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    pub source: Option<Ipv4Addr>,
    pub destination: Ipv4Addr,
    pub hops: Vec<Hop>,
    pub origin: PathBuf,
    pub format: TraceFormat,
}

impl Trace {
    pub fn last_hop(&self) -> Option<&Hop> {
        self.hops.last()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InputFormat {
    PlainText,
    Json,
    Unknown,
}

impl InputFormat {
    /// `{`/`[` as first non-whitespace byte means JSON; otherwise valid
    /// UTF-8 is plain text and anything else is unknown.
    pub fn sniff(bytes: &[u8]) -> Self {
        match bytes.iter().find(|b| !b.is_ascii_whitespace()) {
            Some(b'{') | Some(b'[') => InputFormat::Json,
            _ if std::str::from_utf8(bytes).is_ok() => InputFormat::PlainText,
            _ => InputFormat::Unknown,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RawInput {
    pub path: PathBuf,
    pub bytes: Vec<u8>,
    pub format: InputFormat,
}

impl RawInput {
    pub fn new(path: impl Into<PathBuf>, bytes: Vec<u8>) -> Self {
        let format = InputFormat::sniff(&bytes);
        RawInput {
            path: path.into(),
            bytes,
            format,
        }
    }

    /// Reads a file; unreadable files come back empty with format Unknown.
    pub fn load(path: impl Into<PathBuf>) -> Self {
        let path = path.into();
        match std::fs::read(&path) {
            Ok(bytes) => RawInput::new(path, bytes),
            Err(_) => RawInput {
                path,
                bytes: Vec::new(),
                format: InputFormat::Unknown,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("corrupt JSON: {0}")]
    CorruptJson(String),
    #[error("JSON schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("file contains more than one traceroute (second header on line {line})")]
    MultipleTraces { line: usize },
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("no hop lines")]
    Empty,
    #[error("unrecognized file format")]
    UnknownFormat,
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("input folder {0} does not exist or is not a directory")]
    MissingFolder(PathBuf),
    #[error("walking {path}: {source}")]
    Walk {
        path: PathBuf,
        #[source]
        source: walkdir::Error,
    },
}

fn is_hidden(entry: &walkdir::DirEntry) -> bool {
    entry.depth() > 0
        && entry
            .file_name()
            .to_str()
            .is_some_and(|n| n.starts_with('.'))
}

/// Regular files under `folder`, recursively, sorted by path bytes. Hidden
/// files and directories are skipped.
pub fn discover_paths(folder: &Path) -> Result<Vec<PathBuf>, IngestError> {
    if !folder.is_dir() {
        return Err(IngestError::MissingFolder(folder.to_path_buf()));
    }
    let mut paths = Vec::new();
    for entry in WalkDir::new(folder)
        .into_iter()
        .filter_entry(|e| !is_hidden(e))
    {
        let entry = entry.map_err(|source| IngestError::Walk {
            path: folder.to_path_buf(),
            source,
        })?;
        if entry.file_type().is_file() {
            paths.push(entry.into_path());
        }
    }
    paths.sort_by(|a, b| {
        a.as_os_str()
            .as_encoded_bytes()
            .cmp(b.as_os_str().as_encoded_bytes())
    });
    Ok(paths)
}

pub fn discover_inputs(folder: &Path) -> Result<Vec<RawInput>, IngestError> {
    Ok(discover_paths(folder)?
        .into_iter()
        .map(RawInput::load)
        .collect())
}

/// Dispatches on the sniffed format. Plain-text files yield exactly one
/// outcome; JSON files yield one per result object, or a single error.
pub fn parse_input(input: &RawInput) -> Vec<Result<Trace, ParseError>> {
    match input.format {
        InputFormat::PlainText => vec![parse_plain(input)],
        InputFormat::Json => match parse_atlas_json(input) {
            Ok(traces) => traces.into_iter().map(Ok).collect(),
            Err(e) => vec![Err(e)],
        },
        InputFormat::Unknown => vec![Err(ParseError::UnknownFormat)],
    }
}

fn check_increasing(hops: &[Hop]) -> bool {
    hops.windows(2).all(|w| w[0].ttl < w[1].ttl)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    #[test]
    fn sniffing() {
        assert_eq!(InputFormat::sniff(b"  \n{\"fw\": 1}"), InputFormat::Json);
        assert_eq!(InputFormat::sniff(b"[]"), InputFormat::Json);
        assert_eq!(
            InputFormat::sniff(b"traceroute to x"),
            InputFormat::PlainText
        );
        assert_eq!(InputFormat::sniff(b""), InputFormat::PlainText);
        assert_eq!(
            InputFormat::sniff(&[0xff, 0xfe, 0x00]),
            InputFormat::Unknown
        );
        // JSON wins even when the rest is not UTF-8
        assert_eq!(InputFormat::sniff(&[b'{', 0xff]), InputFormat::Json);
    }

    #[test]
    fn rtt_parsing() {
        assert_eq!("1.100".parse::<Rtt>().unwrap(), Rtt::from_micros(1100));
        assert_eq!("12".parse::<Rtt>().unwrap(), Rtt::from_micros(12_000));
        assert_eq!("0.0004".parse::<Rtt>().unwrap(), Rtt::ZERO);
        assert_eq!("0.0005".parse::<Rtt>().unwrap(), Rtt::from_micros(1));
        assert_eq!("505.39".parse::<Rtt>().unwrap().to_string(), "505.390");
        for bad in ["", "-1", "1.", ".5", "1e3", "1.2.3", "abc"] {
            assert!(bad.parse::<Rtt>().is_err(), "{bad}");
        }
        assert_eq!(Rtt::from_ms(10.0), Some(Rtt::from_micros(10_000)));
        assert_eq!(Rtt::from_ms(-0.5), None);
        assert_eq!(Rtt::from_ms(f64::NAN), None);
    }

    #[test]
    fn discover_missing_folder() {
        let err = discover_inputs(Path::new("/definitely/not/here")).unwrap_err();
        assert!(matches!(err, IngestError::MissingFolder(_)));
    }

    #[test]
    fn discover_empty_and_sorted() {
        let dir = tempfile::tempdir().unwrap();
        assert!(discover_inputs(dir.path()).unwrap().is_empty());

        fs::write(dir.path().join("b.txt"), "x").unwrap();
        fs::write(dir.path().join("a.txt"), "x").unwrap();
        fs::write(dir.path().join(".hidden"), "x").unwrap();
        fs::create_dir(dir.path().join("sub")).unwrap();
        fs::write(dir.path().join("sub/c.json"), "{\"fw\": 4790}").unwrap();
        fs::create_dir(dir.path().join(".git")).unwrap();
        fs::write(dir.path().join(".git/config"), "x").unwrap();

        let inputs = discover_inputs(dir.path()).unwrap();
        let names: Vec<_> = inputs
            .iter()
            .map(|i| {
                i.path
                    .strip_prefix(dir.path())
                    .unwrap()
                    .to_string_lossy()
                    .into_owned()
            })
            .collect();
        assert_eq!(names, ["a.txt", "b.txt", "sub/c.json"]);
        assert_eq!(inputs[2].format, InputFormat::Json);
        assert_eq!(inputs[0].format, InputFormat::PlainText);
    }

    #[test]
    fn unknown_format_outcome() {
        let input = RawInput::new("x.bin", vec![0xc3, 0x28]);
        assert_eq!(input.format, InputFormat::Unknown);
        assert_eq!(parse_input(&input), vec![Err(ParseError::UnknownFormat)]);
    }
}
