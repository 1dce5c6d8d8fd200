//! Exclusion rules deciding which parse outcomes enter the analysis.
//!
//! Rules are tested in a fixed order and the first one that fires is the
//! reported reason:
//!
//! 1. corrupt JSON
//! 2. JSON trace whose final hop answered every probe with an RTT of exactly 0
//! 3. plain-text file holding more than one traceroute
//! 4. final hop made only of stars
//! 5. any reply carrying `!H`, `!N` or a `WARN` token
//!
//! Parse failures outside these rules are rejected as `UnparseableText` or
//! `UnknownFormat` so that corpus accounting stays total.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::AddAssign;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::ingest::{ParseError, Rtt, Trace, TraceFormat};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RejectReason {
    CorruptJson,
    LastThreeRttZero,
    MultipleTraces,
    ThreeStarsLastHop,
    UnreachableMarker,
    UnparseableText,
    UnknownFormat,
}

impl RejectReason {
    pub const ALL: [RejectReason; 7] = [
        RejectReason::CorruptJson,
        RejectReason::LastThreeRttZero,
        RejectReason::MultipleTraces,
        RejectReason::ThreeStarsLastHop,
        RejectReason::UnreachableMarker,
        RejectReason::UnparseableText,
        RejectReason::UnknownFormat,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::CorruptJson => "CorruptJson",
            RejectReason::LastThreeRttZero => "LastThreeRttZero",
            RejectReason::MultipleTraces => "MultipleTraces",
            RejectReason::ThreeStarsLastHop => "ThreeStarsLastHop",
            RejectReason::UnreachableMarker => "UnreachableMarker",
            RejectReason::UnparseableText => "UnparseableText",
            RejectReason::UnknownFormat => "UnknownFormat",
        }
    }
}

impl std::str::FromStr for RejectReason {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RejectReason::ALL
            .into_iter()
            .find(|r| r.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown rejection reason {s:?}"))
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// `reason` is `None` exactly when the outcome is accepted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CleanVerdict {
    pub reason: Option<RejectReason>,
}

impl CleanVerdict {
    pub const ACCEPT: CleanVerdict = CleanVerdict { reason: None };

    fn reject(reason: RejectReason) -> Self {
        CleanVerdict {
            reason: Some(reason),
        }
    }

    pub fn accepted(&self) -> bool {
        self.reason.is_none()
    }
}

fn last_rtts_zero(trace: &Trace) -> bool {
    trace.format == TraceFormat::Json
        && trace
            .last_hop()
            .is_some_and(|h| h.replies.iter().all(|r| r.rtt == Some(Rtt::ZERO)))
}

fn last_hop_stars(trace: &Trace) -> bool {
    trace.last_hop().is_some_and(|h| h.all_stars())
}

fn has_marks(trace: &Trace) -> bool {
    trace
        .hops
        .iter()
        .flat_map(|h| &h.replies)
        .any(|r| r.mark.is_some())
}

pub fn clean(outcome: &Result<Trace, ParseError>) -> CleanVerdict {
    use RejectReason::*;
    match outcome {
        Err(ParseError::CorruptJson(_)) => CleanVerdict::reject(CorruptJson),
        Err(ParseError::MultipleTraces { .. }) => CleanVerdict::reject(MultipleTraces),
        Err(ParseError::UnknownFormat) => CleanVerdict::reject(UnknownFormat),
        Err(ParseError::SchemaMismatch(_) | ParseError::Malformed { .. } | ParseError::Empty) => {
            CleanVerdict::reject(UnparseableText)
        }
        Ok(trace) if last_rtts_zero(trace) => CleanVerdict::reject(LastThreeRttZero),
        Ok(trace) if last_hop_stars(trace) => CleanVerdict::reject(ThreeStarsLastHop),
        Ok(trace) if has_marks(trace) => CleanVerdict::reject(UnreachableMarker),
        Ok(_) => CleanVerdict::ACCEPT,
    }
}

/// Per-reason accounting of a corpus. Partial reports merge by addition.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CleaningReport {
    pub input_count: u64,
    pub accepted_count: u64,
    pub rejected: BTreeMap<RejectReason, u64>,
}

impl CleaningReport {
    pub fn record(&mut self, verdict: CleanVerdict) {
        self.input_count += 1;
        match verdict.reason {
            None => self.accepted_count += 1,
            Some(r) => *self.rejected.entry(r).or_default() += 1,
        }
    }

    pub fn count(&self, reason: RejectReason) -> u64 {
        self.rejected.get(&reason).copied().unwrap_or(0)
    }

    pub fn rejected_count(&self) -> u64 {
        self.rejected.values().sum()
    }
}

impl AddAssign<&CleaningReport> for CleaningReport {
    fn add_assign(&mut self, rhs: &CleaningReport) {
        self.input_count += rhs.input_count;
        self.accepted_count += rhs.accepted_count;
        for (&r, &n) in &rhs.rejected {
            *self.rejected.entry(r).or_default() += n;
        }
    }
}

/// One rejected outcome, kept for the verbose log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejection {
    pub origin: PathBuf,
    pub reason: RejectReason,
}

#[derive(Debug, Default)]
pub struct CorpusOutcome {
    pub accepted: Vec<Trace>,
    pub rejections: Vec<Rejection>,
    pub report: CleaningReport,
}

/// Partitions parse outcomes, each paired with the file it came from.
pub fn clean_corpus<I>(outcomes: I) -> CorpusOutcome
where
    I: IntoIterator<Item = (PathBuf, Result<Trace, ParseError>)>,
{
    let mut out = CorpusOutcome::default();
    for (origin, outcome) in outcomes {
        let verdict = clean(&outcome);
        out.report.record(verdict);
        match (verdict.reason, outcome) {
            (None, Ok(trace)) => out.accepted.push(trace),
            (Some(reason), _) => out.rejections.push(Rejection { origin, reason }),
            (None, Err(_)) => unreachable!("parse errors are always rejected"),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{parse_input, ErrorMark, Hop, RawInput, Reply};
    use std::net::Ipv4Addr;

    fn hop(ttl: u32, replies: Vec<Reply>) -> Hop {
        Hop {
            ttl,
            replies,
            mpls_labels: vec![],
        }
    }

    fn ok(ttl: u32) -> Reply {
        Reply::answered(
            Ipv4Addr::new(10, 0, 0, ttl as u8),
            Rtt::from_micros(1000 * ttl as u64),
        )
    }

    fn trace(format: TraceFormat, hops: Vec<Hop>) -> Trace {
        Trace {
            source: None,
            destination: Ipv4Addr::new(8, 8, 8, 8),
            hops,
            origin: "f".into(),
            format,
        }
    }

    fn complete(format: TraceFormat) -> Trace {
        trace(
            format,
            (1..=4).map(|t| hop(t, vec![ok(t), ok(t), ok(t)])).collect(),
        )
    }

    fn verdict(t: Trace) -> Option<RejectReason> {
        clean(&Ok(t)).reason
    }

    #[test]
    fn accepts_complete_traces() {
        assert_eq!(verdict(complete(TraceFormat::PlainText)), None);
        assert_eq!(verdict(complete(TraceFormat::Json)), None);
    }

    #[test]
    fn each_rule_alone() {
        assert_eq!(
            clean(&Err(ParseError::CorruptJson("eof".into()))).reason,
            Some(RejectReason::CorruptJson)
        );

        let mut t = complete(TraceFormat::Json);
        let zero = Reply::answered(Ipv4Addr::new(8, 8, 8, 8), Rtt::ZERO);
        t.hops.last_mut().unwrap().replies = vec![zero.clone(), zero.clone(), zero.clone()];
        assert_eq!(verdict(t.clone()), Some(RejectReason::LastThreeRttZero));
        // plain-text traces are not subject to the zero-RTT rule
        t.format = TraceFormat::PlainText;
        assert_eq!(verdict(t), None);
        // some but not all zero
        let mut t = complete(TraceFormat::Json);
        t.hops.last_mut().unwrap().replies[0] = zero;
        assert_eq!(verdict(t), None);

        assert_eq!(
            clean(&Err(ParseError::MultipleTraces { line: 4 })).reason,
            Some(RejectReason::MultipleTraces)
        );

        let mut t = complete(TraceFormat::PlainText);
        t.hops.push(hop(5, vec![Reply::star(); 3]));
        assert_eq!(verdict(t), Some(RejectReason::ThreeStarsLastHop));

        for mark in [
            ErrorMark::HostUnreachable,
            ErrorMark::NetUnreachable,
            ErrorMark::Warn,
        ] {
            let mut t = complete(TraceFormat::PlainText);
            t.hops[1].replies[2].mark = Some(mark);
            assert_eq!(verdict(t), Some(RejectReason::UnreachableMarker));
        }

        assert_eq!(
            clean(&Err(ParseError::Empty)).reason,
            Some(RejectReason::UnparseableText)
        );
        assert_eq!(
            clean(&Err(ParseError::SchemaMismatch("x".into()))).reason,
            Some(RejectReason::UnparseableText)
        );
        assert_eq!(
            clean(&Err(ParseError::UnknownFormat)).reason,
            Some(RejectReason::UnknownFormat)
        );
    }

    #[test]
    fn first_match_wins() {
        // stars on the last hop and an !H mark earlier: rule 4 fires first
        let mut t = complete(TraceFormat::PlainText);
        t.hops[0].replies[0].mark = Some(ErrorMark::HostUnreachable);
        t.hops.push(hop(5, vec![Reply::star(); 3]));
        assert_eq!(verdict(t), Some(RejectReason::ThreeStarsLastHop));

        // zero RTTs and a mark on the final hop: rule 2 fires first
        let mut t = complete(TraceFormat::Json);
        let mut zero = Reply::answered(Ipv4Addr::new(8, 8, 8, 8), Rtt::ZERO);
        zero.mark = Some(ErrorMark::NetUnreachable);
        t.hops.last_mut().unwrap().replies = vec![zero; 3];
        assert_eq!(verdict(t), Some(RejectReason::LastThreeRttZero));
    }

    #[test]
    fn removing_only_mark_reaccepts() {
        let mut t = complete(TraceFormat::PlainText);
        t.hops.insert(
            2,
            hop(
                3,
                vec![Reply {
                    mark: Some(ErrorMark::HostUnreachable),
                    ..ok(3)
                }],
            ),
        );
        for (i, h) in t.hops.iter_mut().enumerate() {
            h.ttl = i as u32 + 1;
        }
        assert_eq!(verdict(t.clone()), Some(RejectReason::UnreachableMarker));
        t.hops.remove(2);
        assert_eq!(verdict(t), None);
    }

    #[test]
    fn from_text() {
        let input = RawInput::new(
            "x.txt",
            b"traceroute to 8.8.8.8 (8.8.8.8)\n1 10.0.0.1 1.0 ms\n2 * * *\n".to_vec(),
        );
        let outcome = parse_input(&input).pop().unwrap();
        assert_eq!(
            clean(&outcome).reason,
            Some(RejectReason::ThreeStarsLastHop)
        );
    }

    #[test]
    fn corpus_accounting() {
        let empty = clean_corpus(Vec::new());
        assert_eq!(empty.report.input_count, 0);
        assert_eq!(empty.report.accepted_count, 0);
        assert!(empty.accepted.is_empty());

        // ten fixtures, four of them violating one rule each
        let mut stars = complete(TraceFormat::PlainText);
        stars.hops.push(hop(5, vec![Reply::star(); 3]));
        let mut marked = complete(TraceFormat::Json);
        marked.hops[0].replies[0].mark = Some(ErrorMark::Warn);
        let mut outcomes: Vec<Result<Trace, ParseError>> = (0..6)
            .map(|_| Ok(complete(TraceFormat::PlainText)))
            .collect();
        outcomes.push(Ok(stars));
        outcomes.push(Ok(marked));
        outcomes.push(Err(ParseError::CorruptJson("x".into())));
        outcomes.push(Err(ParseError::MultipleTraces { line: 2 }));

        // independent oracle: evaluate each rule directly
        let oracle_rejected = outcomes
            .iter()
            .filter(|o| match o {
                Err(_) => true,
                Ok(t) => {
                    t.hops
                        .last()
                        .unwrap()
                        .replies
                        .iter()
                        .all(|r| r.from.is_none())
                        || t.hops
                            .iter()
                            .any(|h| h.replies.iter().any(|r| r.mark.is_some()))
                }
            })
            .count() as u64;

        let out = clean_corpus(outcomes.into_iter().map(|o| (PathBuf::from("f"), o)));
        assert_eq!(oracle_rejected, 4);
        assert_eq!(out.report.accepted_count, 6);
        assert_eq!(out.report.rejected_count(), oracle_rejected);
        assert_eq!(out.report.input_count, 10);
        assert_eq!(out.accepted.len(), 6);
        assert_eq!(out.rejections.len(), 4);
        for r in [
            RejectReason::CorruptJson,
            RejectReason::MultipleTraces,
            RejectReason::ThreeStarsLastHop,
            RejectReason::UnreachableMarker,
        ] {
            assert_eq!(out.report.count(r), 1);
        }
    }

    #[test]
    fn reports_merge_additively() {
        let mut a = CleaningReport::default();
        a.record(CleanVerdict::ACCEPT);
        a.record(CleanVerdict::reject(RejectReason::CorruptJson));
        let mut b = CleaningReport::default();
        b.record(CleanVerdict::reject(RejectReason::CorruptJson));
        b.record(CleanVerdict::reject(RejectReason::UnknownFormat));
        let mut merged = a.clone();
        merged += &b;
        assert_eq!(merged.input_count, 4);
        assert_eq!(merged.accepted_count, 1);
        assert_eq!(merged.count(RejectReason::CorruptJson), 2);
        assert_eq!(
            merged.accepted_count + merged.rejected_count(),
            merged.input_count
        );
    }
}
