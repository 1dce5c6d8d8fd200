//! File-backed geolocation tables.
//!
//! Two CSV tables, no header, `#` comments:
//!
//! - prefixes: `A.B.C.D/L,CC` mapping an IPv4 prefix to an ISO-3166 alpha-2 code
//! - points: `CC,x,y` placing a country at a pixel of the base map
//!
//! Lookups use longest-prefix match. Addresses in private or reserved
//! ranges resolve to a country only when a prefix at least as specific as
//! the reserved range covers them.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// ISO-3166 alpha-2 code, stored upper-case.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CountryCode([u8; 2]);

impl CountryCode {
    pub fn as_str(&self) -> &str {
        std::str::from_utf8(&self.0).expect("ASCII by construction")
    }
}

impl FromStr for CountryCode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.as_bytes() {
            [a, b] if a.is_ascii_alphabetic() && b.is_ascii_alphabetic() => Ok(CountryCode([
                a.to_ascii_uppercase(),
                b.to_ascii_uppercase(),
            ])),
            _ => Err(format!("invalid country code {s:?}")),
        }
    }
}

impl fmt::Display for CountryCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Debug for CountryCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for CountryCode {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for CountryCode {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Shorthand for `"RE".parse::<CountryCode>().unwrap()` in tests and fixtures.
pub fn cc(code: &str) -> CountryCode {
    code.parse().expect("valid country code")
}

/// IPv4 CIDR block with all host bits zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Ipv4Prefix {
    base: u32,
    len: u8,
}

fn mask(len: u8) -> u32 {
    if len == 0 {
        0
    } else {
        u32::MAX << (32 - len)
    }
}

impl Ipv4Prefix {
    /// `None` if `len > 32` or host bits are set.
    pub fn new(base: Ipv4Addr, len: u8) -> Option<Self> {
        let base = u32::from(base);
        (len <= 32 && base & !mask(len) == 0).then_some(Ipv4Prefix { base, len })
    }

    /// The prefix of length `len` containing `addr`.
    pub fn covering(addr: Ipv4Addr, len: u8) -> Self {
        assert!(len <= 32);
        Ipv4Prefix {
            base: u32::from(addr) & mask(len),
            len,
        }
    }

    pub fn base(&self) -> Ipv4Addr {
        Ipv4Addr::from(self.base)
    }

    pub fn len(&self) -> u8 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, addr: Ipv4Addr) -> bool {
        u32::from(addr) & mask(self.len) == self.base
    }

    /// Number of addresses in the block.
    pub fn size(&self) -> u64 {
        1u64 << (32 - self.len)
    }

    /// The `i`-th address of the block, if in range.
    pub fn nth(&self, i: u64) -> Option<Ipv4Addr> {
        (i < self.size()).then(|| Ipv4Addr::from(self.base + i as u32))
    }
}

impl fmt::Display for Ipv4Prefix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.base(), self.len)
    }
}

impl FromStr for Ipv4Prefix {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (addr, len) = s
            .split_once('/')
            .ok_or_else(|| format!("missing mask length in {s:?}"))?;
        let addr: Ipv4Addr = addr.parse().map_err(|_| format!("bad address in {s:?}"))?;
        let len: u8 = len
            .parse()
            .map_err(|_| format!("bad mask length in {s:?}"))?;
        if len > 32 {
            return Err(format!("mask length {len} > 32"));
        }
        Ipv4Prefix::new(addr, len).ok_or_else(|| format!("host bits set in {s:?}"))
    }
}

/// Ranges that never geolocate through a less specific prefix.
pub const RESERVED: [(Ipv4Addr, u8); 6] = [
    (Ipv4Addr::new(10, 0, 0, 0), 8),
    (Ipv4Addr::new(172, 16, 0, 0), 12),
    (Ipv4Addr::new(192, 168, 0, 0), 16),
    (Ipv4Addr::new(127, 0, 0, 0), 8),
    (Ipv4Addr::new(100, 64, 0, 0), 10),
    (Ipv4Addr::new(169, 254, 0, 0), 16),
];

fn reserved_len(addr: Ipv4Addr) -> Option<u8> {
    RESERVED
        .iter()
        .find(|(base, len)| Ipv4Prefix::covering(addr, *len).base() == *base)
        .map(|&(_, len)| len)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountryPoint {
    pub country: CountryCode,
    pub x: u32,
    pub y: u32,
}

#[derive(Debug, Error)]
pub enum GeoDbError {
    #[error("cannot read {path}: {source}")]
    MissingFile {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{table} line {line}: {reason}")]
    BadRow {
        table: &'static str,
        line: usize,
        reason: String,
    },
    #[error("{table} line {line}: duplicate key {key}")]
    DuplicateKey {
        table: &'static str,
        line: usize,
        key: String,
    },
    #[error("point {country} ({x}, {y}) outside the {width}x{height} map")]
    OutOfBounds {
        country: CountryCode,
        x: u32,
        y: u32,
        width: u32,
        height: u32,
    },
}

/// Immutable after load; lookups need only `&self`.
#[derive(Debug, Clone, Default)]
pub struct GeoDb {
    // one table per populated mask length, most specific first
    by_len: Vec<(u8, HashMap<u32, CountryCode>)>,
    points: BTreeMap<CountryCode, CountryPoint>,
}

fn data_rows(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

impl GeoDb {
    /// Builds a database from the text of the two tables.
    pub fn from_tables(prefixes: &str, points: &str) -> Result<Self, GeoDbError> {
        let mut db = GeoDb::default();
        let mut tables: BTreeMap<u8, HashMap<u32, CountryCode>> = BTreeMap::new();
        for (line, row) in data_rows(prefixes) {
            let bad = |reason: String| GeoDbError::BadRow {
                table: "prefixes",
                line,
                reason,
            };
            let (prefix, country) = row
                .split_once(',')
                .ok_or_else(|| bad("expected `prefix,CC`".into()))?;
            let prefix: Ipv4Prefix = prefix.trim().parse().map_err(bad)?;
            let country: CountryCode = country.trim().parse().map_err(bad)?;
            if tables
                .entry(prefix.len)
                .or_default()
                .insert(prefix.base, country)
                .is_some()
            {
                return Err(GeoDbError::DuplicateKey {
                    table: "prefixes",
                    line,
                    key: prefix.to_string(),
                });
            }
        }
        db.by_len = tables.into_iter().rev().collect();

        for (line, row) in data_rows(points) {
            let bad = |reason: String| GeoDbError::BadRow {
                table: "points",
                line,
                reason,
            };
            let fields: Vec<&str> = row.split(',').map(str::trim).collect();
            let [country, x, y] = fields[..] else {
                return Err(bad("expected `CC,x,y`".into()));
            };
            let country: CountryCode = country.parse().map_err(bad)?;
            let x: u32 = x.parse().map_err(|_| bad(format!("bad x {x:?}")))?;
            let y: u32 = y.parse().map_err(|_| bad(format!("bad y {y:?}")))?;
            if db
                .points
                .insert(country, CountryPoint { country, x, y })
                .is_some()
            {
                return Err(GeoDbError::DuplicateKey {
                    table: "points",
                    line,
                    key: country.to_string(),
                });
            }
        }
        Ok(db)
    }

    pub fn load(prefix_file: &Path, points_file: &Path) -> Result<Self, GeoDbError> {
        let read = |path: &Path| {
            std::fs::read_to_string(path).map_err(|source| GeoDbError::MissingFile {
                path: path.to_path_buf(),
                source,
            })
        };
        GeoDb::from_tables(&read(prefix_file)?, &read(points_file)?)
    }

    /// Country of the longest prefix containing `ip`.
    pub fn geolocate(&self, ip: Ipv4Addr) -> Option<CountryCode> {
        let addr = u32::from(ip);
        let (len, country) = self
            .by_len
            .iter()
            .find_map(|(len, table)| table.get(&(addr & mask(*len))).map(|c| (*len, *c)))?;
        match reserved_len(ip) {
            Some(min) if len < min => None,
            _ => Some(country),
        }
    }

    pub fn country_point(&self, country: CountryCode) -> Option<CountryPoint> {
        self.points.get(&country).copied()
    }

    pub fn points(&self) -> impl Iterator<Item = &CountryPoint> {
        self.points.values()
    }

    pub fn prefix_count(&self) -> usize {
        self.by_len.iter().map(|(_, t)| t.len()).sum()
    }

    /// All prefix records, sorted by prefix.
    pub fn prefixes(&self) -> Vec<(Ipv4Prefix, CountryCode)> {
        let mut rows: Vec<_> = self
            .by_len
            .iter()
            .flat_map(|(len, t)| {
                t.iter()
                    .map(|(&base, &c)| (Ipv4Prefix { base, len: *len }, c))
            })
            .collect();
        rows.sort();
        rows
    }

    pub fn prefixes_of(&self, country: CountryCode) -> Vec<Ipv4Prefix> {
        self.prefixes()
            .into_iter()
            .filter(|(_, c)| *c == country)
            .map(|(p, _)| p)
            .collect()
    }

    /// Errors if any point lies outside a `width` x `height` raster.
    pub fn check_bounds(&self, width: u32, height: u32) -> Result<(), GeoDbError> {
        match self.points.values().find(|p| p.x >= width || p.y >= height) {
            Some(p) => Err(GeoDbError::OutOfBounds {
                country: p.country,
                x: p.x,
                y: p.y,
                width,
                height,
            }),
            None => Ok(()),
        }
    }

    /// The prefix table in its CSV form.
    pub fn dump_prefixes(&self) -> String {
        self.prefixes()
            .iter()
            .map(|(p, c)| format!("{p},{c}\n"))
            .collect()
    }

    /// The points table in its CSV form.
    pub fn dump_points(&self) -> String {
        self.points
            .values()
            .map(|p| format!("{},{},{}\n", p.country, p.x, p.y))
            .collect()
    }
}
