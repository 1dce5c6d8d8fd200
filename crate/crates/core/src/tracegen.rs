//! Seeded synthetic corpora.
//!
//! [`generate`] writes one trace per file (plain text or Atlas-style JSON)
//! into numbered subfolders and returns a [`Manifest`] holding each file's
//! ground truth. The manifest is also written as `.manifest.jsonl` at the
//! corpus root; discovery skips hidden files so it never enters a run.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clean::RejectReason;
use crate::geodb::{CountryCode, GeoDb, Ipv4Prefix};
use crate::ingest::{
    write_atlas_json, write_plain, ErrorMark, Hop, MplsLabel, Reply, Rtt, Trace, TraceFormat,
};
use crate::pathmap::MplsLink;

pub const MANIFEST_FILE: &str = ".manifest.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedPath {
    pub countries: Vec<CountryCode>,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkDelay {
    pub from: CountryCode,
    pub to: CountryCode,
    pub base_ms: f64,
    pub jitter_ms: f64,
}

/// Per-hop delay added to the running RTT. Pairs are directional; a hop
/// inside one country uses `(c, c)` and falls back to the defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RttModel {
    pub default_base_ms: f64,
    pub default_jitter_ms: f64,
    #[serde(default)]
    pub links: Vec<LinkDelay>,
}

impl Default for RttModel {
    fn default() -> Self {
        RttModel {
            default_base_ms: 2.0,
            default_jitter_ms: 1.0,
            links: Vec::new(),
        }
    }
}

impl RttModel {
    fn delay(&self, from: CountryCode, to: CountryCode) -> (u64, u64) {
        let (base, jitter) = self
            .links
            .iter()
            .find(|l| l.from == from && l.to == to)
            .map_or((self.default_base_ms, self.default_jitter_ms), |l| {
                (l.base_ms, l.jitter_ms)
            });
        let us = |ms: f64| (ms * 1000.0).round() as u64;
        (us(base), us(jitter))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub trace_count: usize,
    pub country_path_distribution: Vec<WeightedPath>,
    #[serde(default)]
    pub defect_rates: BTreeMap<RejectReason, f64>,
    #[serde(default)]
    pub rtt_model: RttModel,
    pub seed: u64,
    /// Inclusive range of router hops spent inside each country.
    #[serde(default = "default_hops")]
    pub hops_per_country: (u32, u32),
    #[serde(default = "default_json_fraction")]
    pub json_fraction: f64,
    /// Chance that a hop after the first carries an MPLS label stack.
    #[serde(default)]
    pub mpls_rate: f64,
    /// Chance that a reply on a non-final hop is a star.
    #[serde(default)]
    pub star_rate: f64,
    #[serde(default = "default_routers")]
    pub routers_per_country: u32,
}

fn default_hops() -> (u32, u32) {
    (1, 3)
}

fn default_json_fraction() -> f64 {
    0.5
}

fn default_routers() -> u32 {
    16
}

impl GenSpec {
    pub fn new(trace_count: usize, paths: Vec<(Vec<CountryCode>, f64)>, seed: u64) -> Self {
        GenSpec {
            trace_count,
            country_path_distribution: paths
                .into_iter()
                .map(|(countries, weight)| WeightedPath { countries, weight })
                .collect(),
            defect_rates: BTreeMap::new(),
            rtt_model: RttModel::default(),
            seed,
            hops_per_country: default_hops(),
            json_fraction: default_json_fraction(),
            mpls_rate: 0.0,
            star_rate: 0.0,
            routers_per_country: default_routers(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, GenError> {
        serde_json::from_str(text).map_err(|e| GenError::InvalidSpec(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }

    pub fn validate(&self, db: &GeoDb) -> Result<(), GenError> {
        let bad = |m: String| Err(GenError::InvalidSpec(m));
        if self.country_path_distribution.is_empty() {
            return bad("no country paths".into());
        }
        for p in &self.country_path_distribution {
            if !(p.weight.is_finite() && p.weight > 0.0) {
                return bad(format!("path weight {} is not positive", p.weight));
            }
            if p.countries.is_empty() {
                return bad("empty country path".into());
            }
            for c in &p.countries {
                if db.prefixes_of(*c).is_empty() {
                    return bad(format!(
                        "country {c} has no prefix in the geolocation table"
                    ));
                }
            }
        }
        let prob = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(GenError::InvalidSpec(format!(
                    "{name} = {v} is not a probability"
                )))
            }
        };
        for (reason, rate) in &self.defect_rates {
            prob(reason.as_str(), *rate)?;
        }
        if self.defect_rates.values().sum::<f64>() > 1.0 + 1e-12 {
            return bad("defect rates sum above 1".into());
        }
        prob("json_fraction", self.json_fraction)?;
        prob("mpls_rate", self.mpls_rate)?;
        prob("star_rate", self.star_rate)?;
        let (lo, hi) = self.hops_per_country;
        if lo == 0 || lo > hi {
            return bad(format!("hops_per_country ({lo}, {hi})"));
        }
        if self.routers_per_country == 0 {
            return bad("routers_per_country is 0".into());
        }
        let m = &self.rtt_model;
        let delays = std::iter::once((m.default_base_ms, m.default_jitter_ms))
            .chain(m.links.iter().map(|l| (l.base_ms, l.jitter_ms)));
        for (b, j) in delays {
            if !(b.is_finite() && b >= 0.0 && j.is_finite() && j >= 0.0) {
                return bad(format!("delay {b} + {j} ms"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum GenError {
    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

/// Ground truth for one generated file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    /// Path relative to the corpus root, `/`-separated.
    pub file: String,
    /// `None` for the unreadable-format defect.
    pub format: Option<TraceFormat>,
    pub defect: Option<RejectReason>,
    pub countries: Vec<CountryCode>,
    pub source: Ipv4Addr,
    pub destination: Ipv4Addr,
    pub hops: Vec<Hop>,
    pub mpls_links: Vec<(Ipv4Addr, Ipv4Addr)>,
}

impl ManifestRecord {
    /// The trace as written, for records whose file holds exactly one.
    pub fn trace(&self, root: &Path) -> Option<Trace> {
        Some(Trace {
            source: Some(self.source),
            destination: self.destination,
            hops: self.hops.clone(),
            origin: root.join(&self.file),
            format: self.format?,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn planted(&self, reason: RejectReason) -> usize {
        self.records
            .iter()
            .filter(|r| r.defect == Some(reason))
            .count()
    }

    pub fn clean_records(&self) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(|r| r.defect.is_none())
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<_, _>>()?;
        Ok(Manifest { records })
    }
}

/// Exact per-path trace counts by largest remainder.
pub fn allocate(weights: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut left = total - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for i in order.into_iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

struct Pools {
    routers: BTreeMap<CountryCode, Vec<Ipv4Addr>>,
    hosts: BTreeMap<CountryCode, Vec<Ipv4Addr>>,
}

impl Pools {
    fn new(spec: &GenSpec, db: &GeoDb) -> Self {
        let mut routers = BTreeMap::new();
        let mut hosts = BTreeMap::new();
        for p in &spec.country_path_distribution {
            for &c in &p.countries {
                routers.entry(c).or_insert_with(|| {
                    let prefixes = db.prefixes_of(c);
                    spread(&prefixes, spec.routers_per_country as u64, 1)
                });
                hosts.entry(c).or_insert_with(|| {
                    let prefixes = db.prefixes_of(c);
                    spread(&prefixes, spec.routers_per_country as u64, 2)
                });
            }
        }
        Pools { routers, hosts }
    }
}

/// `n` addresses dealt round-robin over the prefixes; `lane` keeps router
/// and host addresses apart.
fn spread(prefixes: &[Ipv4Prefix], n: u64, lane: u64) -> Vec<Ipv4Addr> {
    let mut out = Vec::new();
    for i in 0..n {
        let p = &prefixes[(i as usize) % prefixes.len()];
        let k = i / prefixes.len() as u64;
        let offset = if p.size() > 4 {
            (4 * k + lane) % (p.size() - 1)
        } else {
            0
        };
        if let Some(ip) = p.nth(offset) {
            if !out.contains(&ip) {
                out.push(ip);
            }
        }
    }
    out
}

fn pick(rng: &mut ChaCha8Rng, pool: &[Ipv4Addr]) -> Ipv4Addr {
    pool[rng.random_range(0..pool.len())]
}

fn jitter(rng: &mut ChaCha8Rng, max_us: u64) -> u64 {
    if max_us == 0 {
        0
    } else {
        rng.random_range(0..=max_us)
    }
}

const REPLIES_PER_HOP: usize = 3;

fn build_hops(
    spec: &GenSpec,
    pools: &Pools,
    countries: &[CountryCode],
    rng: &mut ChaCha8Rng,
) -> (Vec<Hop>, Ipv4Addr) {
    let (lo, hi) = spec.hops_per_country;
    let mut hops: Vec<Hop> = Vec::new();
    let mut elapsed = 0u64;
    let mut prev = countries[0];
    for &c in countries {
        let n = rng.random_range(lo..=hi);
        let pool = &pools.routers[&c];
        for _ in 0..n {
            let (base, jit) = spec.rtt_model.delay(prev, c);
            prev = c;
            elapsed += base;
            let ip = pick(rng, pool);
            let mut replies = Vec::with_capacity(REPLIES_PER_HOP);
            for k in 0..REPLIES_PER_HOP {
                let rtt = elapsed + if k == 0 { 0 } else { jitter(rng, jit) };
                replies.push(Reply::answered(ip, Rtt::from_micros(rtt.max(1))));
            }
            let ttl = hops.len() as u32 + 1;
            let mut labels = Vec::new();
            if ttl > 1 && rng.random_bool(spec.mpls_rate) {
                labels.push(MplsLabel {
                    label: rng.random_range(16..1 << 20),
                    ttl: 1,
                    exp: 0,
                    bottom_of_stack: true,
                });
            }
            hops.push(Hop {
                ttl,
                replies,
                mpls_labels: labels,
            });
        }
    }
    let last = hops.len() - 1;
    for hop in &mut hops[..last] {
        for r in &mut hop.replies {
            if rng.random_bool(spec.star_rate) {
                *r = Reply::star();
            }
        }
    }
    let destination = hops[last].replies[0].from.expect("final hop answers");
    (hops, destination)
}

fn mpls_links(hops: &[Hop]) -> Vec<(Ipv4Addr, Ipv4Addr)> {
    let mut links: Vec<(Ipv4Addr, Ipv4Addr)> = hops
        .windows(2)
        .filter(|w| !w[1].mpls_labels.is_empty())
        .filter_map(|w| MplsLink::new(w[0].representative_ip()?, w[1].representative_ip()?))
        .map(|l| l.ends())
        .collect();
    links.sort();
    links.dedup();
    links
}

fn pick_defect(spec: &GenSpec, rng: &mut ChaCha8Rng) -> Option<RejectReason> {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for reason in RejectReason::ALL {
        acc += spec.defect_rates.get(&reason).copied().unwrap_or(0.0);
        if u < acc {
            return Some(reason);
        }
    }
    None
}

fn render(trace: &Trace, format: TraceFormat) -> String {
    match format {
        TraceFormat::PlainText => write_plain(trace),
        TraceFormat::Json => write_atlas_json(trace),
    }
}

/// Writes the corpus under `out_dir` (created if missing) and returns its
/// manifest. The same spec, seed and geolocation tables give the same bytes.
pub fn generate(spec: &GenSpec, db: &GeoDb, out_dir: &Path) -> Result<Manifest, GenError> {
    spec.validate(db)?;
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| GenError::Io { path, source }
    };
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let pools = Pools::new(spec, db);
    let weights: Vec<f64> = spec
        .country_path_distribution
        .iter()
        .map(|p| p.weight)
        .collect();
    let mut plan: Vec<usize> = allocate(&weights, spec.trace_count)
        .into_iter()
        .enumerate()
        .flat_map(|(i, n)| std::iter::repeat_n(i, n))
        .collect();
    plan.shuffle(&mut rng);

    let mut records = Vec::with_capacity(spec.trace_count);
    for (i, &path_index) in plan.iter().enumerate() {
        let countries = spec.country_path_distribution[path_index].countries.clone();
        let defect = pick_defect(spec, &mut rng);
        let format = match defect {
            Some(RejectReason::CorruptJson | RejectReason::LastThreeRttZero) => {
                Some(TraceFormat::Json)
            }
            Some(RejectReason::MultipleTraces | RejectReason::UnparseableText) => {
                Some(TraceFormat::PlainText)
            }
            Some(RejectReason::UnknownFormat) => None,
            _ if rng.random_bool(spec.json_fraction) => Some(TraceFormat::Json),
            _ => Some(TraceFormat::PlainText),
        };
        let (mut hops, destination) = build_hops(spec, &pools, &countries, &mut rng);
        let source = pick(&mut rng, &pools.hosts[&countries[0]]);
        match defect {
            Some(RejectReason::ThreeStarsLastHop) => {
                let ttl = hops.len() as u32 + 1;
                hops.push(Hop {
                    ttl,
                    replies: vec![Reply::star(); REPLIES_PER_HOP],
                    mpls_labels: Vec::new(),
                });
            }
            Some(RejectReason::UnreachableMarker) => {
                let last = hops.last_mut().expect("at least one hop");
                let k = rng.random_range(0..last.replies.len());
                last.replies[k].mark = Some(if rng.random_bool(0.5) {
                    ErrorMark::HostUnreachable
                } else {
                    ErrorMark::NetUnreachable
                });
            }
            Some(RejectReason::LastThreeRttZero) => {
                for r in &mut hops.last_mut().expect("at least one hop").replies {
                    r.rtt = Some(Rtt::ZERO);
                }
            }
            _ => {}
        }
        let ext = match format {
            Some(TraceFormat::Json) => "json",
            Some(TraceFormat::PlainText) => "txt",
            None => "bin",
        };
        let file = format!("d{:03}/trace_{i:06}.{ext}", i / 1000);
        let trace = Trace {
            source: Some(source),
            destination,
            hops,
            origin: PathBuf::from(&file),
            format: format.unwrap_or(TraceFormat::PlainText),
        };
        let bytes: Vec<u8> = match (defect, format) {
            (_, None) => {
                let mut b = vec![0xff, 0xfe, 0x00];
                b.extend(write_plain(&trace).into_bytes());
                b
            }
            (Some(RejectReason::CorruptJson), _) => {
                let text = write_atlas_json(&trace);
                text.as_bytes()[..text.len() / 2].to_vec()
            }
            (Some(RejectReason::MultipleTraces), _) => {
                let text = write_plain(&trace);
                format!("{text}{text}").into_bytes()
            }
            (Some(RejectReason::UnparseableText), _) => {
                let text = write_plain(&trace);
                let (header, rest) = text.split_once('\n').unwrap_or((&text, ""));
                format!("{header}\n this line is not a hop\n{rest}").into_bytes()
            }
            (_, Some(f)) => render(&trace, f).into_bytes(),
        };
        let path = out_dir.join(&file);
        if i % 1000 == 0 {
            let dir = path.parent().expect("file has a folder");
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        fs::write(&path, &bytes).map_err(io_err(&path))?;
        records.push(ManifestRecord {
            file,
            format,
            defect,
            countries,
            source,
            destination,
            mpls_links: mpls_links(&trace.hops),
            hops: trace.hops,
        });
    }
    let manifest = Manifest { records };
    let mpath = out_dir.join(MANIFEST_FILE);
    let f = fs::File::create(&mpath).map_err(io_err(&mpath))?;
    let mut w = BufWriter::new(f);
    manifest.write_jsonl(&mut w).map_err(io_err(&mpath))?;
    w.flush().map_err(io_err(&mpath))?;
    Ok(manifest)
}
