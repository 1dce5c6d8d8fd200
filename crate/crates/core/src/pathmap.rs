//! Country-to-country segments.
//!
//! Each trace is walked as consecutive hop pairs, each hop represented by
//! its first answering address. A pair whose two addresses geolocate to two
//! different countries, both placed on the map, is a crossing. Crossings
//! aggregate into one [`Segment`] per unordered country pair.
//!
//! The delay attached to a segment is the smallest RTT seen at the far hop
//! of any of its crossings, i.e. the minimal round-trip time to the first
//! router past the border.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decimal::{percent_shares, Hundredths};
use crate::geodb::{CountryCode, CountryPoint, GeoDb};
use crate::ingest::{Rtt, Trace};

/// Unordered pair of router addresses known to be an MPLS adjacency.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MplsLink {
    a: Ipv4Addr,
    b: Ipv4Addr,
}

impl MplsLink {
    /// `None` when both ends are the same address.
    pub fn new(x: Ipv4Addr, y: Ipv4Addr) -> Option<Self> {
        match x.cmp(&y) {
            std::cmp::Ordering::Less => Some(MplsLink { a: x, b: y }),
            std::cmp::Ordering::Greater => Some(MplsLink { a: y, b: x }),
            std::cmp::Ordering::Equal => None,
        }
    }

    pub fn ends(&self) -> (Ipv4Addr, Ipv4Addr) {
        (self.a, self.b)
    }
}

/// Explicit MPLS links of one trace: every labelled hop paired with the
/// hop just before it, when both answered.
pub fn extract_explicit_mpls(trace: &Trace) -> Vec<MplsLink> {
    let mut links = BTreeSet::new();
    for pair in trace.hops.windows(2) {
        if pair[1].mpls_labels.is_empty() {
            continue;
        }
        if let (Some(x), Some(y)) = (pair[0].representative_ip(), pair[1].representative_ip()) {
            links.extend(MplsLink::new(x, y));
        }
    }
    links.into_iter().collect()
}

/// Ordered so that merging takes the maximum.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
pub enum MplsKind {
    #[default]
    None,
    InvisibleCandidate,
    Explicit,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    /// endpoint of the alphabetically smaller country
    pub a: CountryPoint,
    pub b: CountryPoint,
    pub occurrences: u64,
    pub min_rtt: Option<Rtt>,
    pub mpls: MplsKind,
}

impl Segment {
    pub fn countries(&self) -> (CountryCode, CountryCode) {
        (self.a.country, self.b.country)
    }

    fn absorb(&mut self, other: &Segment) {
        self.occurrences += other.occurrences;
        self.min_rtt = min_opt(self.min_rtt, other.min_rtt);
        self.mpls = self.mpls.max(other.mpls);
    }
}

fn min_opt(a: Option<Rtt>, b: Option<Rtt>) -> Option<Rtt> {
    match (a, b) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (a, b) => a.or(b),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SegmentSet {
    segments: BTreeMap<(CountryCode, CountryCode), Segment>,
    total_occurrences: u64,
}

impl SegmentSet {
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn total_occurrences(&self) -> u64 {
        self.total_occurrences
    }

    /// Segments in country-pair order.
    pub fn iter(&self) -> impl Iterator<Item = &Segment> {
        self.segments.values()
    }

    pub fn get(&self, x: CountryCode, y: CountryCode) -> Option<&Segment> {
        self.segments.get(&(x.min(y), x.max(y)))
    }

    fn upsert(&mut self, seg: Segment) {
        self.total_occurrences += seg.occurrences;
        let key = seg.countries();
        match self.segments.get_mut(&key) {
            Some(existing) => existing.absorb(&seg),
            None => {
                self.segments.insert(key, seg);
            }
        }
    }

    fn add_crossing(&mut self, crossing: &Crossing, mpls: &HashSet<MplsLink>) {
        let (a, b) = if crossing.near.country < crossing.far.country {
            (crossing.near, crossing.far)
        } else {
            (crossing.far, crossing.near)
        };
        let explicit =
            MplsLink::new(crossing.near_ip, crossing.far_ip).is_some_and(|l| mpls.contains(&l));
        self.upsert(Segment {
            a,
            b,
            occurrences: 1,
            min_rtt: crossing.far_min_rtt,
            mpls: if explicit {
                MplsKind::Explicit
            } else {
                MplsKind::None
            },
        });
    }

    /// Occurrences add, delays take the minimum, MPLS flags the maximum.
    pub fn merge(mut self, other: &SegmentSet) -> SegmentSet {
        for seg in other.segments.values() {
            self.upsert(seg.clone());
        }
        self
    }

    /// Each segment with its share of the total, in percent. Shares are
    /// rounded half-up and adjusted so that they close to 100.00 within 0.01.
    pub fn shares(&self) -> Vec<(&Segment, Hundredths)> {
        let occ: Vec<u64> = self.segments.values().map(|s| s.occurrences).collect();
        self.segments.values().zip(percent_shares(&occ)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// first crossing out of the focus country
    Leaving,
    /// last crossing into the focus country
    Entering,
}

/// One consecutive hop pair spanning two placed countries.
struct Crossing {
    near_ip: Ipv4Addr,
    far_ip: Ipv4Addr,
    near: CountryPoint,
    far: CountryPoint,
    far_min_rtt: Option<Rtt>,
}

fn crossings<'a>(trace: &'a Trace, db: &'a GeoDb) -> impl Iterator<Item = Crossing> + 'a {
    let place = move |ip: Ipv4Addr| db.geolocate(ip).and_then(|c| db.country_point(c));
    trace.hops.windows(2).filter_map(move |pair| {
        let near_ip = pair[0].representative_ip()?;
        let far_ip = pair[1].representative_ip()?;
        let near = place(near_ip)?;
        let far = place(far_ip)?;
        (near.country != far.country).then(|| Crossing {
            near_ip,
            far_ip,
            near,
            far,
            far_min_rtt: pair[1].min_rtt(),
        })
    })
}

pub fn build_segments<'a, I>(traces: I, db: &GeoDb, mpls: &HashSet<MplsLink>) -> SegmentSet
where
    I: IntoIterator<Item = &'a Trace>,
{
    let mut set = SegmentSet::default();
    for trace in traces {
        for crossing in crossings(trace, db) {
            set.add_crossing(&crossing, mpls);
        }
    }
    set
}

/// At most one crossing per trace: the first one out of `focus` when
/// leaving, the last one into `focus` when entering.
pub fn filter_last_links<'a, I>(
    traces: I,
    db: &GeoDb,
    focus: CountryCode,
    direction: Direction,
    mpls: &HashSet<MplsLink>,
) -> SegmentSet
where
    I: IntoIterator<Item = &'a Trace>,
{
    let mut set = SegmentSet::default();
    for trace in traces {
        let mut all = crossings(trace, db);
        let chosen = match direction {
            Direction::Leaving => all.find(|c| c.near.country == focus),
            Direction::Entering => all.filter(|c| c.far.country == focus).last(),
        };
        if let Some(crossing) = chosen {
            set.add_crossing(&crossing, mpls);
        }
    }
    set
}

#[derive(Debug, Error)]
pub enum AdjacencyError {
    #[error("cannot read {path}: {source}")]
    MissingFile {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("adjacency line {line}: {reason}")]
    BadRow { line: usize, reason: String },
}

/// Country pairs known to be physically interconnected (cable or land).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Adjacency(HashSet<(CountryCode, CountryCode)>);

impl Adjacency {
    pub fn from_pairs<I: IntoIterator<Item = (CountryCode, CountryCode)>>(pairs: I) -> Self {
        Adjacency(
            pairs
                .into_iter()
                .map(|(x, y)| (x.min(y), x.max(y)))
                .collect(),
        )
    }

    /// CSV rows `CC,CC`; `#` starts a comment line.
    pub fn parse(text: &str) -> Result<Self, AdjacencyError> {
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |reason: String| AdjacencyError::BadRow {
                line: i + 1,
                reason,
            };
            let (x, y) = line
                .split_once(',')
                .ok_or_else(|| bad("expected `CC,CC`".into()))?;
            pairs.push((
                x.trim().parse().map_err(bad)?,
                y.trim().parse().map_err(bad)?,
            ));
        }
        Ok(Adjacency::from_pairs(pairs))
    }

    pub fn load(path: &Path) -> Result<Self, AdjacencyError> {
        let text = std::fs::read_to_string(path).map_err(|source| AdjacencyError::MissingFile {
            path: path.to_path_buf(),
            source,
        })?;
        Adjacency::parse(&text)
    }

    pub fn connected(&self, x: CountryCode, y: CountryCode) -> bool {
        self.0.contains(&(x.min(y), x.max(y)))
    }
}

/// Segments without explicit MPLS evidence that join two countries with no
/// physical interconnection become invisible-MPLS candidates.
pub fn flag_invisible_mpls(mut set: SegmentSet, adjacency: Option<&Adjacency>) -> SegmentSet {
    let Some(adjacency) = adjacency else {
        return set;
    };
    for seg in set.segments.values_mut() {
        let (x, y) = seg.countries();
        if seg.mpls == MplsKind::None && !adjacency.connected(x, y) {
            seg.mpls = MplsKind::InvisibleCandidate;
        }
    }
    set
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodb::cc;
    use crate::ingest::{Hop, MplsLabel, Reply, TraceFormat};
    use proptest::prelude::*;

    const PREFIXES: &str = "\
        10.1.0.0/16,RE\n\
        10.2.0.0/16,FR\n\
        10.3.0.0/16,US\n\
        10.4.0.0/16,AU\n\
        10.5.0.0/16,PY\n\
        10.6.0.0/16,XX\n";
    const POINTS: &str = "RE,2581,1582\nFR,1900,500\nUS,800,600\nAU,3626,1638\nPY,1200,1500\n";

    fn db() -> GeoDb {
        GeoDb::from_tables(PREFIXES, POINTS).unwrap()
    }

    fn country_ip(c: u8, host: u8) -> Ipv4Addr {
        Ipv4Addr::new(10, c, 0, host)
    }

    /// hops as (country octet, host, rtt ms)
    fn trace(hops: &[(u8, u8, u64)]) -> Trace {
        Trace {
            source: None,
            destination: country_ip(hops.last().unwrap().0, hops.last().unwrap().1),
            hops: hops
                .iter()
                .enumerate()
                .map(|(i, &(c, h, rtt))| Hop {
                    ttl: i as u32 + 1,
                    replies: vec![Reply::answered(
                        country_ip(c, h),
                        Rtt::from_micros(rtt * 1000),
                    )],
                    mpls_labels: vec![],
                })
                .collect(),
            origin: "t".into(),
            format: TraceFormat::PlainText,
        }
    }

    fn label() -> MplsLabel {
        MplsLabel {
            label: 24015,
            ttl: 1,
            exp: 0,
            bottom_of_stack: true,
        }
    }

    #[test]
    fn explicit_links() {
        let mut t = Trace {
            source: None,
            destination: Ipv4Addr::new(8, 8, 8, 8),
            hops: vec![
                Hop {
                    ttl: 1,
                    replies: vec![Reply::answered("93.17.132.110".parse().unwrap(), Rtt::ZERO)],
                    mpls_labels: vec![],
                },
                Hop {
                    ttl: 2,
                    replies: vec![Reply::answered("109.24.74.178".parse().unwrap(), Rtt::ZERO)],
                    mpls_labels: vec![label()],
                },
            ],
            origin: "t".into(),
            format: TraceFormat::PlainText,
        };
        let links = extract_explicit_mpls(&t);
        assert_eq!(
            links.iter().map(MplsLink::ends).collect::<Vec<_>>(),
            [(
                "93.17.132.110".parse().unwrap(),
                "109.24.74.178".parse().unwrap()
            )]
        );

        t.hops[1].mpls_labels.clear();
        assert!(extract_explicit_mpls(&t).is_empty());

        // labels on the first hop have no predecessor
        t.hops[0].mpls_labels.push(label());
        assert!(extract_explicit_mpls(&t).is_empty());

        // a star predecessor gives no link
        t.hops[1].mpls_labels.push(label());
        t.hops[0].replies = vec![Reply::star()];
        assert!(extract_explicit_mpls(&t).is_empty());
    }

    #[test]
    fn mpls_link_is_unordered() {
        let x = Ipv4Addr::new(1, 1, 1, 1);
        let y = Ipv4Addr::new(2, 2, 2, 2);
        assert_eq!(MplsLink::new(x, y), MplsLink::new(y, x));
        assert_eq!(MplsLink::new(x, x), None);
        assert_eq!(MplsLink::new(y, x).unwrap().ends(), (x, y));
    }

    #[test]
    fn one_crossing() {
        let set = build_segments(
            &[trace(&[(1, 1, 5), (1, 2, 6), (2, 1, 180), (2, 2, 190)])],
            &db(),
            &HashSet::new(),
        );
        assert_eq!(set.len(), 1);
        let seg = set.get(cc("FR"), cc("RE")).unwrap();
        assert_eq!(seg.occurrences, 1);
        assert_eq!(seg.countries(), (cc("FR"), cc("RE")));
        assert_eq!(seg.min_rtt, Some(Rtt::from_micros(180_000)));
        assert_eq!(set.total_occurrences(), 1);
    }

    #[test]
    fn unknown_and_same_country_pairs_skipped() {
        // 10.6 geolocates to XX which has no map point; 10.9 has no country
        let t = trace(&[
            (1, 1, 1),
            (6, 1, 2),
            (2, 1, 3),
            (9, 1, 4),
            (3, 1, 5),
            (3, 2, 6),
        ]);
        let set = build_segments(&[t], &db(), &HashSet::new());
        assert!(set.is_empty());
    }

    #[test]
    fn au_re_share() {
        let mut traces = Vec::new();
        for _ in 0..105 {
            traces.push(trace(&[(4, 1, 10), (1, 1, 505)]));
        }
        for _ in 0..(3736 - 105) {
            traces.push(trace(&[(1, 1, 10), (2, 1, 200)]));
        }
        let set = build_segments(&traces, &db(), &HashSet::new());
        assert_eq!(set.total_occurrences(), 3736);
        let seg = set.get(cc("AU"), cc("RE")).unwrap();
        assert_eq!(seg.occurrences, 105);
        let shares = set.shares();
        let (_, share) = shares
            .iter()
            .find(|(s, _)| s.countries() == (cc("AU"), cc("RE")))
            .unwrap();
        assert_eq!(share.to_string(), "2.81");
    }

    #[test]
    fn explicit_flag_is_sticky() {
        let mut labelled = trace(&[(1, 1, 1), (2, 1, 2)]);
        labelled.hops[1].mpls_labels.push(label());
        let mpls: HashSet<_> = extract_explicit_mpls(&labelled).into_iter().collect();
        let plain = trace(&[(1, 2, 1), (2, 2, 2)]);
        let set = build_segments([&plain, &labelled, &plain], &db(), &mpls);
        assert_eq!(
            set.get(cc("RE"), cc("FR")).unwrap().mpls,
            MplsKind::Explicit
        );
        assert_eq!(set.get(cc("RE"), cc("FR")).unwrap().occurrences, 3);

        let flagged = flag_invisible_mpls(set.clone(), Some(&Adjacency::default()));
        assert_eq!(
            flagged.get(cc("RE"), cc("FR")).unwrap().mpls,
            MplsKind::Explicit
        );
    }

    #[test]
    fn last_links() {
        let t = trace(&[(1, 1, 1), (1, 2, 2), (2, 1, 3), (3, 1, 4)]);
        let set = filter_last_links(
            std::slice::from_ref(&t),
            &db(),
            cc("RE"),
            Direction::Leaving,
            &HashSet::new(),
        );
        assert_eq!(set.len(), 1);
        assert!(set.get(cc("RE"), cc("FR")).is_some());

        let away = trace(&[(2, 1, 1), (3, 1, 2)]);
        let set = filter_last_links(
            &[away],
            &db(),
            cc("RE"),
            Direction::Leaving,
            &HashSet::new(),
        );
        assert!(set.is_empty());

        // entering picks the last crossing into the focus
        let t = trace(&[(3, 1, 1), (1, 1, 2), (2, 1, 3), (1, 2, 4)]);
        let set = filter_last_links(&[t], &db(), cc("RE"), Direction::Entering, &HashSet::new());
        assert_eq!(set.len(), 1);
        assert_eq!(
            set.get(cc("FR"), cc("RE")).unwrap().min_rtt,
            Some(Rtt::from_micros(4000))
        );
    }

    #[test]
    fn invisible_candidates() {
        let t = trace(&[(5, 1, 1), (1, 1, 2), (2, 1, 3)]);
        let set = build_segments(&[t], &db(), &HashSet::new());
        assert_eq!(flag_invisible_mpls(set.clone(), None), set);

        let adjacency = Adjacency::parse("# cables\nFR,RE\n").unwrap();
        let flagged = flag_invisible_mpls(set, Some(&adjacency));
        assert_eq!(
            flagged.get(cc("PY"), cc("RE")).unwrap().mpls,
            MplsKind::InvisibleCandidate
        );
        assert_eq!(
            flagged.get(cc("RE"), cc("FR")).unwrap().mpls,
            MplsKind::None
        );

        assert!(matches!(
            Adjacency::parse("FR;RE"),
            Err(AdjacencyError::BadRow { line: 1, .. })
        ));
    }

    /// Brute force: enumerate every consecutive pair, group by sorted
    /// country pair, count.
    fn oracle(
        traces: &[Trace],
        db: &GeoDb,
    ) -> BTreeMap<(CountryCode, CountryCode), (u64, Option<Rtt>)> {
        let mut out: BTreeMap<_, (u64, Option<Rtt>)> = BTreeMap::new();
        for t in traces {
            for i in 0..t.hops.len().saturating_sub(1) {
                let first = |h: &Hop| {
                    h.replies
                        .iter()
                        .find(|r| r.from.is_some())
                        .and_then(|r| r.from)
                };
                let (Some(x), Some(y)) = (first(&t.hops[i]), first(&t.hops[i + 1])) else {
                    continue;
                };
                let (Some(cx), Some(cy)) = (db.geolocate(x), db.geolocate(y)) else {
                    continue;
                };
                if cx == cy || db.country_point(cx).is_none() || db.country_point(cy).is_none() {
                    continue;
                }
                let rtt = t.hops[i + 1].replies.iter().filter_map(|r| r.rtt).min();
                let e = out.entry((cx.min(cy), cx.max(cy))).or_default();
                e.0 += 1;
                e.1 = match (e.1, rtt) {
                    (Some(a), Some(b)) => Some(a.min(b)),
                    (a, b) => a.or(b),
                };
            }
        }
        out
    }

    fn arb_trace() -> impl Strategy<Value = Trace> {
        let reply = prop_oneof![
            1 => Just(Reply::star()),
            5 => (1u8..10, 1u8..4, 0u64..1000).prop_map(|(c, h, rtt)| Reply::answered(country_ip(c, h), Rtt::from_micros(rtt))),
        ];
        prop::collection::vec(prop::collection::vec(reply, 1..3), 1..10).prop_map(|hops| Trace {
            source: None,
            destination: Ipv4Addr::new(1, 1, 1, 1),
            hops: hops
                .into_iter()
                .enumerate()
                .map(|(i, replies)| Hop {
                    ttl: i as u32 + 1,
                    replies,
                    mpls_labels: vec![],
                })
                .collect(),
            origin: "t".into(),
            format: TraceFormat::Json,
        })
    }

    proptest! {
        #[test]
        fn matches_oracle(traces in prop::collection::vec(arb_trace(), 0..60)) {
            let db = db();
            let set = build_segments(&traces, &db, &HashSet::new());
            let got: BTreeMap<_, _> = set.iter().map(|s| (s.countries(), (s.occurrences, s.min_rtt))).collect();
            prop_assert_eq!(got, oracle(&traces, &db));
            prop_assert_eq!(set.total_occurrences(), set.iter().map(|s| s.occurrences).sum::<u64>());
        }

        #[test]
        fn reversal_keeps_keys(traces in prop::collection::vec(arb_trace(), 0..30)) {
            let db = db();
            let reversed: Vec<Trace> = traces.iter().map(|t| {
                let mut r = t.clone();
                r.hops.reverse();
                for (i, h) in r.hops.iter_mut().enumerate() { h.ttl = i as u32 + 1; }
                r
            }).collect();
            let a = build_segments(&traces, &db, &HashSet::new());
            let b = build_segments(&reversed, &db, &HashSet::new());
            let keys = |s: &SegmentSet| s.iter().map(|s| (s.countries(), s.occurrences)).collect::<Vec<_>>();
            prop_assert_eq!(keys(&a), keys(&b));
        }

        #[test]
        fn last_links_at_most_one_per_trace(traces in prop::collection::vec(arb_trace(), 0..40), entering in any::<bool>()) {
            let dir = if entering { Direction::Entering } else { Direction::Leaving };
            let set = filter_last_links(&traces, &db(), cc("RE"), dir, &HashSet::new());
            prop_assert!(set.total_occurrences() <= traces.len() as u64);
        }

        #[test]
        fn merge_is_partition_independent(traces in prop::collection::vec(arb_trace(), 0..30), cut in 0usize..30) {
            let db = db();
            let cut = cut.min(traces.len());
            let whole = build_segments(&traces, &db, &HashSet::new());
            let left = build_segments(&traces[..cut], &db, &HashSet::new());
            let right = build_segments(&traces[cut..], &db, &HashSet::new());
            prop_assert_eq!(&whole, &right.clone().merge(&left));
            prop_assert_eq!(&whole, &left.merge(&right));
        }

        #[test]
        fn shares_close(traces in prop::collection::vec(arb_trace(), 1..60)) {
            let set = build_segments(&traces, &db(), &HashSet::new());
            if !set.is_empty() {
                let sum: u64 = set.shares().iter().map(|(_, h)| h.0).sum();
                prop_assert!((9_999..=10_001).contains(&sum));
            }
        }
    }
}
