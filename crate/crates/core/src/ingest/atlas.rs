//! Atlas-style JSON traceroute results.
//!
//! A document is either one result object or an array of them:
//!
//! ```json
//! {"dst_addr": "8.8.8.8", "src_addr": "10.0.0.2", "result": [
//!   {"hop": 1, "result": [{"from": "10.0.0.1", "rtt": 1.2}, {"x": "*"}]}
//! ]}
//! ```
//!
//! Replies may carry `"err": "H"` / `"err": "N"` and an `icmpext` object
//! whose `mpls` entries become the hop's label stack.

use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};
use serde_json::error::Category;

use super::{
    check_increasing, ErrorMark, Hop, MplsLabel, ParseError, RawInput, Reply, Rtt, Trace,
    TraceFormat,
};

#[derive(Debug, Deserialize, Serialize)]
#[serde(untagged)]
pub(crate) enum Document {
    One(AtlasResult),
    Many(Vec<AtlasResult>),
}

#[derive(Debug, Deserialize, Serialize)]
pub(crate) struct AtlasResult {
    pub dst_addr: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub src_addr: Option<String>,
    pub result: Vec<AtlasHop>,
}

#[derive(Debug, Deserialize, Serialize)]
pub(crate) struct AtlasHop {
    pub hop: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<Vec<AtlasReply>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Default, Deserialize, Serialize)]
pub(crate) struct AtlasReply {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rtt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub err: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub icmpext: Option<IcmpExt>,
}

#[derive(Debug, Deserialize, Serialize)]
pub(crate) struct IcmpExt {
    #[serde(default)]
    pub obj: Vec<IcmpExtObject>,
}

#[derive(Debug, Deserialize, Serialize)]
pub(crate) struct IcmpExtObject {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mpls: Option<Vec<AtlasMpls>>,
}

#[derive(Debug, Deserialize, Serialize)]
pub(crate) struct AtlasMpls {
    pub label: u32,
    #[serde(default)]
    pub ttl: u8,
    #[serde(default)]
    pub exp: u8,
    #[serde(default)]
    pub s: u8,
}

pub fn parse_atlas_json(input: &RawInput) -> Result<Vec<Trace>, ParseError> {
    let doc: Document = serde_json::from_slice(&input.bytes).map_err(|e| match e.classify() {
        Category::Syntax | Category::Eof | Category::Io => ParseError::CorruptJson(e.to_string()),
        Category::Data => ParseError::SchemaMismatch(e.to_string()),
    })?;
    let results = match doc {
        Document::One(r) => vec![r],
        Document::Many(rs) => rs,
    };
    results.into_iter().map(|r| convert(r, input)).collect()
}

fn addr(s: &str) -> Result<Ipv4Addr, ParseError> {
    s.parse()
        .map_err(|_| ParseError::SchemaMismatch(format!("not an IPv4 address: {s:?}")))
}

fn convert(result: AtlasResult, input: &RawInput) -> Result<Trace, ParseError> {
    let destination = addr(&result.dst_addr)?;
    let source = result.src_addr.as_deref().map(addr).transpose()?;
    let mut hops = Vec::with_capacity(result.result.len());
    for hop in result.result {
        let replies = hop.result.ok_or_else(|| {
            ParseError::SchemaMismatch(match hop.error {
                Some(e) => format!("hop {} reports {e:?}", hop.hop),
                None => format!("hop {} has no replies", hop.hop),
            })
        })?;
        if replies.is_empty() {
            return Err(ParseError::SchemaMismatch(format!(
                "hop {} has no replies",
                hop.hop
            )));
        }
        let mut labels = Vec::new();
        let mut out = Vec::with_capacity(replies.len());
        for reply in replies {
            if let Some(ext) = &reply.icmpext {
                for obj in &ext.obj {
                    labels.extend(obj.mpls.iter().flatten().map(|m| MplsLabel {
                        label: m.label,
                        ttl: m.ttl,
                        exp: m.exp,
                        bottom_of_stack: m.s != 0,
                    }));
                }
            }
            out.push(convert_reply(reply)?);
        }
        labels.dedup();
        hops.push(Hop {
            ttl: hop.hop,
            replies: out,
            mpls_labels: labels,
        });
    }
    if hops.is_empty() {
        return Err(ParseError::SchemaMismatch("empty hop array".into()));
    }
    if hops[0].ttl == 0 || !check_increasing(&hops) {
        return Err(ParseError::SchemaMismatch(
            "hop numbers not strictly increasing".into(),
        ));
    }
    Ok(Trace {
        source,
        destination,
        hops,
        origin: input.path.clone(),
        format: TraceFormat::Json,
    })
}

fn convert_reply(reply: AtlasReply) -> Result<Reply, ParseError> {
    let mark = match &reply.err {
        Some(serde_json::Value::String(s)) if s == "H" => Some(ErrorMark::HostUnreachable),
        Some(serde_json::Value::String(s)) if s == "N" => Some(ErrorMark::NetUnreachable),
        Some(serde_json::Value::String(s)) if s.contains("WARN") => Some(ErrorMark::Warn),
        _ => None,
    };
    if reply.x.is_some() || reply.from.is_none() {
        if reply.rtt.is_some() {
            return Err(ParseError::SchemaMismatch(
                "RTT on a reply without an address".into(),
            ));
        }
        return Ok(Reply {
            from: None,
            rtt: None,
            mark,
        });
    }
    let from = Some(addr(reply.from.as_deref().unwrap_or_default())?);
    let rtt = match reply.rtt {
        Some(v) => Some(
            Rtt::from_ms(v).ok_or_else(|| ParseError::SchemaMismatch(format!("bad RTT {v}")))?,
        ),
        None => None,
    };
    Ok(Reply { from, rtt, mark })
}

/// Atlas-style rendering of a trace, accepted back by [`parse_atlas_json`].
/// Labels ride on the hop's first reply.
pub fn write_atlas_json(trace: &Trace) -> String {
    let hops = trace
        .hops
        .iter()
        .map(|hop| {
            let replies = hop
                .replies
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    let err = r.mark.map(|m| {
                        serde_json::Value::String(
                            match m {
                                ErrorMark::HostUnreachable => "H",
                                ErrorMark::NetUnreachable => "N",
                                ErrorMark::Warn => "WARN",
                            }
                            .into(),
                        )
                    });
                    let icmpext = (i == 0 && !hop.mpls_labels.is_empty()).then(|| IcmpExt {
                        obj: vec![IcmpExtObject {
                            mpls: Some(
                                hop.mpls_labels
                                    .iter()
                                    .map(|l| AtlasMpls {
                                        label: l.label,
                                        ttl: l.ttl,
                                        exp: l.exp,
                                        s: l.bottom_of_stack as u8,
                                    })
                                    .collect(),
                            ),
                        }],
                    });
                    match r.from {
                        None => AtlasReply {
                            x: Some("*".into()),
                            err,
                            icmpext,
                            ..Default::default()
                        },
                        Some(ip) => AtlasReply {
                            from: Some(ip.to_string()),
                            rtt: r.rtt.map(Rtt::as_ms),
                            err,
                            icmpext,
                            ..Default::default()
                        },
                    }
                })
                .collect();
            AtlasHop {
                hop: hop.ttl,
                result: Some(replies),
                error: None,
            }
        })
        .collect();
    let doc = AtlasResult {
        dst_addr: trace.destination.to_string(),
        src_addr: trace.source.map(|s| s.to_string()),
        result: hops,
    };
    serde_json::to_string(&doc).expect("serializable")
}
