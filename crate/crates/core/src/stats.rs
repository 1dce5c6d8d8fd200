//! Per-(hop position, IP) statistics.
//!
//! Every answered reply counts as one occurrence of its `(ttl, address)`
//! pair. RTT sums are kept in whole microseconds so that tables built from
//! any partition of the corpus, merged in any order, are identical.

use std::collections::BTreeMap;
use std::io::{self, Write};
use std::net::Ipv4Addr;
use std::path::Path;

use crate::decimal::Hundredths;
use crate::geodb::{CountryCode, GeoDb};
use crate::ingest::{Rtt, Trace};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HopStat {
    pub hop: u32,
    pub ip: Ipv4Addr,
    pub occurrences: u64,
    /// replies that carried an RTT
    pub rtt_count: u64,
    pub rtt_sum_us: u128,
    pub rtt_min: Option<Rtt>,
    pub country: Option<CountryCode>,
}

impl HopStat {
    fn new(hop: u32, ip: Ipv4Addr, country: Option<CountryCode>) -> Self {
        HopStat {
            hop,
            ip,
            occurrences: 0,
            rtt_count: 0,
            rtt_sum_us: 0,
            rtt_min: None,
            country,
        }
    }

    fn observe(&mut self, rtt: Option<Rtt>) {
        self.occurrences += 1;
        if let Some(rtt) = rtt {
            self.rtt_count += 1;
            self.rtt_sum_us += rtt.micros() as u128;
            self.rtt_min = Some(self.rtt_min.map_or(rtt, |m| m.min(rtt)));
        }
    }

    fn absorb(&mut self, other: &HopStat) {
        self.occurrences += other.occurrences;
        self.rtt_count += other.rtt_count;
        self.rtt_sum_us += other.rtt_sum_us;
        self.rtt_min = match (self.rtt_min, other.rtt_min) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
    }

    /// Mean RTT in milliseconds over the replies that carried one.
    pub fn mean_rtt_ms(&self) -> Option<f64> {
        (self.rtt_count > 0).then(|| self.rtt_sum_us as f64 / self.rtt_count as f64 / 1000.0)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StatsTable {
    pub rows: BTreeMap<(u32, Ipv4Addr), HopStat>,
    pub total_traces: u64,
}

impl StatsTable {
    pub fn add_trace(&mut self, trace: &Trace, db: &GeoDb) {
        self.total_traces += 1;
        for hop in &trace.hops {
            for reply in &hop.replies {
                let Some(ip) = reply.from else { continue };
                self.rows
                    .entry((hop.ttl, ip))
                    .or_insert_with(|| HopStat::new(hop.ttl, ip, db.geolocate(ip)))
                    .observe(reply.rtt);
            }
        }
    }

    /// Pointwise merge. Associative and commutative.
    pub fn merge(mut self, other: &StatsTable) -> StatsTable {
        self.total_traces += other.total_traces;
        for (key, stat) in &other.rows {
            match self.rows.get_mut(key) {
                Some(row) => row.absorb(stat),
                None => {
                    self.rows.insert(*key, stat.clone());
                }
            }
        }
        self
    }

    /// Rows in output order: hop ascending, occurrences descending, IP ascending.
    pub fn ordered_rows(&self) -> Vec<&HopStat> {
        let mut rows: Vec<&HopStat> = self.rows.values().collect();
        rows.sort_by(|a, b| {
            a.hop
                .cmp(&b.hop)
                .then(b.occurrences.cmp(&a.occurrences))
                .then(a.ip.cmp(&b.ip))
        });
        rows
    }

    /// `hop ip occurrences average_delay country`, one row per line.
    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        for row in self.ordered_rows() {
            let avg = match row.rtt_count {
                0 => "-".to_string(),
                n => Hundredths::mean_micros(row.rtt_sum_us, n).to_string(),
            };
            let country = row.country.as_ref().map_or("--", CountryCode::as_str);
            writeln!(
                w,
                "{} {} {} {} {}",
                row.hop, row.ip, row.occurrences, avg, country
            )?;
        }
        Ok(())
    }
}

pub fn accumulate<'a, I>(traces: I, db: &GeoDb) -> StatsTable
where
    I: IntoIterator<Item = &'a Trace>,
{
    let mut table = StatsTable::default();
    for trace in traces {
        table.add_trace(trace, db);
    }
    table
}

pub fn write_stats(table: &StatsTable, out: &Path) -> io::Result<()> {
    let mut w = io::BufWriter::new(std::fs::File::create(out)?);
    table.write_to(&mut w)?;
    w.flush()
}
