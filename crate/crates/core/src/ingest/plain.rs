//! Plain-text traceroute / Paris-traceroute output.
//!
//! Grammar:
//!
//! ```text
//! traceroute to <host> (<ip>)[, ...]
//! <ttl>  [<name> (<ip>) | <ip> | *] [<rtt> ms] ... [!H | !N | ...WARN...]
//!        MPLS Label <label> TTL=<n> Exp=<n> S=<0|1>
//! ```
//!
//! An address token sets the current responder; each following `<rtt> ms`
//! is one reply from it. An address not followed by an RTT is a reply
//! without RTT. `*` is a star reply and leaves the current responder as is.
//! Marks attach to the reply just before them. `MPLS Label` lines and inline
//! `<MPLS:L=..,E=..,S=..,T=..>` tokens attach labels to the current hop.

use std::fmt::Write as _;
use std::net::Ipv4Addr;

use super::{
    check_increasing, ErrorMark, Hop, InputFormat, MplsLabel, ParseError, RawInput, Reply, Rtt,
    Trace, TraceFormat,
};

fn is_header(line: &str) -> bool {
    line.starts_with("traceroute")
}

pub fn parse_plain(input: &RawInput) -> Result<Trace, ParseError> {
    if input.format == InputFormat::Unknown {
        return Err(ParseError::UnknownFormat);
    }
    let text = std::str::from_utf8(&input.bytes).map_err(|_| ParseError::UnknownFormat)?;

    let mut header_lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| is_header(l.trim()));
    header_lines.next();
    if let Some((idx, _)) = header_lines.next() {
        return Err(ParseError::MultipleTraces { line: idx + 1 });
    }

    let mut header: Option<(Option<Ipv4Addr>, Ipv4Addr)> = None;
    let mut hops: Vec<Hop> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let malformed = |reason: String| ParseError::Malformed {
            line: line_no,
            reason,
        };

        if is_header(line) {
            header = Some(parse_header(line).ok_or_else(|| malformed("bad header".into()))?);
            continue;
        }
        if header.is_none() {
            return Err(malformed("hop data before the traceroute header".into()));
        }
        if let Some(rest) = line.strip_prefix("MPLS Label") {
            let label =
                parse_label_line(rest).ok_or_else(|| malformed("bad MPLS label line".into()))?;
            let hop = hops
                .last_mut()
                .ok_or_else(|| malformed("MPLS label before any hop".into()))?;
            hop.mpls_labels.push(label);
            continue;
        }

        let hop = parse_hop_line(line).map_err(malformed)?;
        if hops.last().is_some_and(|prev| prev.ttl >= hop.ttl) {
            return Err(malformed(format!(
                "hop {} does not follow hop {}",
                hop.ttl,
                hops.last().unwrap().ttl
            )));
        }
        hops.push(hop);
    }

    let (source, destination) = header.ok_or(ParseError::Empty)?;
    if hops.is_empty() {
        return Err(ParseError::Empty);
    }
    debug_assert!(check_increasing(&hops));
    Ok(Trace {
        source,
        destination,
        hops,
        origin: input.path.clone(),
        format: TraceFormat::PlainText,
    })
}

/// `traceroute to <host> (<ip>), ...`, `traceroute to <ip>, ...` or the
/// Paris-traceroute form `traceroute [(<src>:<port>) -> (<dst>:<port>)], ...`.
fn parse_header(line: &str) -> Option<(Option<Ipv4Addr>, Ipv4Addr)> {
    let rest = line.strip_prefix("traceroute")?.trim_start();
    if let Some(rest) = rest.strip_prefix("to ") {
        let mut tokens = rest.split_whitespace();
        let host = tokens.next()?.trim_end_matches(',');
        if let Some(paren) = tokens.next().and_then(paren_ip) {
            return Some((None, paren));
        }
        return host.parse().ok().map(|ip| (None, ip));
    }
    if let Some(rest) = rest.strip_prefix('[') {
        let inner = &rest[..rest.find(']')?];
        let (src, dst) = inner.split_once("->")?;
        let endpoint = |s: &str| -> Option<Ipv4Addr> {
            let s = s.trim().strip_prefix('(')?.strip_suffix(')')?;
            s.split(':').next()?.parse().ok()
        };
        return Some((endpoint(src), endpoint(dst)?));
    }
    None
}

fn paren_ip(token: &str) -> Option<Ipv4Addr> {
    token
        .trim_end_matches(',')
        .strip_prefix('(')?
        .strip_suffix(')')?
        .parse()
        .ok()
}

fn parse_label_line(rest: &str) -> Option<MplsLabel> {
    let mut tokens = rest.split_whitespace();
    let label = tokens.next()?.parse().ok()?;
    let mut out = MplsLabel {
        label,
        ttl: 0,
        exp: 0,
        bottom_of_stack: true,
    };
    for token in tokens {
        let (key, value) = token.split_once('=')?;
        match key.to_ascii_lowercase().as_str() {
            "ttl" => out.ttl = value.parse().ok()?,
            "exp" | "tc" => out.exp = value.parse().ok()?,
            "s" => out.bottom_of_stack = value.parse::<u8>().ok()? != 0,
            _ => return None,
        }
    }
    Some(out)
}

/// `<MPLS:L=24015,E=0,S=1,T=1>` as printed by `traceroute -e`.
fn parse_inline_label(token: &str) -> Option<MplsLabel> {
    let body = token.strip_prefix("<MPLS:")?.strip_suffix('>')?;
    let mut out = MplsLabel {
        label: 0,
        ttl: 0,
        exp: 0,
        bottom_of_stack: true,
    };
    let mut seen_label = false;
    for field in body.split(',') {
        let (key, value) = field.split_once('=')?;
        match key {
            "L" => {
                out.label = value.parse().ok()?;
                seen_label = true;
            }
            "E" => out.exp = value.parse().ok()?,
            "S" => out.bottom_of_stack = value.parse::<u8>().ok()? != 0,
            "T" => out.ttl = value.parse().ok()?,
            _ => return None,
        }
    }
    seen_label.then_some(out)
}

fn mark_of(token: &str) -> Option<Option<ErrorMark>> {
    if token.contains("WARN") {
        return Some(Some(ErrorMark::Warn));
    }
    match token {
        "!H" => Some(Some(ErrorMark::HostUnreachable)),
        "!N" => Some(Some(ErrorMark::NetUnreachable)),
        // other ICMP annotations (!X, !P, !T0, ...) carry no exclusion meaning
        t if t.starts_with('!') => Some(None),
        _ => None,
    }
}

fn rtt_token(token: &str, next: Option<&str>) -> Option<(Rtt, usize)> {
    if next == Some("ms") {
        if let Ok(rtt) = token.parse() {
            return Some((rtt, 2));
        }
    }
    token
        .strip_suffix("ms")
        .and_then(|t| t.parse().ok())
        .map(|rtt| (rtt, 1))
}

fn parse_hop_line(line: &str) -> Result<Hop, String> {
    let tokens: Vec<&str> = line.split_whitespace().collect();
    let ttl: u32 = tokens[0]
        .parse()
        .map_err(|_| format!("unrecognized line {line:?}"))?;
    if ttl == 0 {
        return Err("hop number 0".into());
    }

    let mut replies: Vec<Reply> = Vec::new();
    let mut labels = Vec::new();
    let mut current: Option<Ipv4Addr> = None;
    // current responder named but not yet given a reply
    let mut pending = false;

    let flush = |pending: &mut bool, current: Option<Ipv4Addr>, replies: &mut Vec<Reply>| {
        if std::mem::take(pending) {
            replies.push(Reply {
                from: current,
                rtt: None,
                mark: None,
            });
        }
    };

    let mut i = 1;
    while i < tokens.len() {
        let token = tokens[i];
        let next = tokens.get(i + 1).copied();

        if token == "*" {
            flush(&mut pending, current, &mut replies);
            replies.push(Reply::star());
            i += 1;
        } else if let Some(mark) = mark_of(token) {
            flush(&mut pending, current, &mut replies);
            if let Some(mark) = mark {
                let last = replies
                    .last_mut()
                    .ok_or_else(|| format!("mark {token} without a preceding reply"))?;
                last.mark = Some(mark);
            }
            i += 1;
        } else if token.starts_with("<MPLS:") {
            labels
                .push(parse_inline_label(token).ok_or_else(|| format!("bad MPLS token {token}"))?);
            i += 1;
        } else if let Some((rtt, used)) = rtt_token(token, next) {
            let from = current.ok_or_else(|| format!("RTT {token} before any address"))?;
            pending = false;
            replies.push(Reply {
                from: Some(from),
                rtt: Some(rtt),
                mark: None,
            });
            i += used;
        } else if let Some(ip) = next.and_then(paren_ip) {
            // `<name> (<ip>)`
            flush(&mut pending, current, &mut replies);
            current = Some(ip);
            pending = true;
            i += 2;
        } else if let Some(ip) = token.parse().ok().or_else(|| paren_ip(token)) {
            flush(&mut pending, current, &mut replies);
            current = Some(ip);
            pending = true;
            i += 1;
        } else {
            return Err(format!("unexpected token {token:?}"));
        }
    }
    flush(&mut pending, current, &mut replies);

    if replies.is_empty() {
        return Err(format!("hop {ttl} has no replies"));
    }
    Ok(Hop {
        ttl,
        replies,
        mpls_labels: labels,
    })
}

/// Canonical text rendering of a trace, accepted back by [`parse_plain`].
pub fn write_plain(trace: &Trace) -> String {
    let mut out = String::new();
    let dst = trace.destination;
    writeln!(
        out,
        "traceroute to {dst} ({dst}), 30 hops max, 60 byte packets"
    )
    .unwrap();
    for hop in &trace.hops {
        write!(out, "{:2} ", hop.ttl).unwrap();
        let mut current: Option<Ipv4Addr> = None;
        for reply in &hop.replies {
            match reply.from {
                None => out.push_str(" *"),
                Some(ip) => {
                    if current != Some(ip) || reply.rtt.is_none() {
                        write!(out, " {ip}").unwrap();
                        current = Some(ip);
                    }
                    match reply.rtt {
                        Some(rtt) => write!(out, "  {rtt} ms").unwrap(),
                        // a following RTT would otherwise bind to this address
                        None => current = None,
                    }
                }
            }
            match reply.mark {
                Some(ErrorMark::HostUnreachable) => out.push_str(" !H"),
                Some(ErrorMark::NetUnreachable) => out.push_str(" !N"),
                Some(ErrorMark::Warn) => out.push_str(" WARN"),
                None => {}
            }
        }
        out.push('\n');
        for l in &hop.mpls_labels {
            writeln!(
                out,
                "    MPLS Label {} TTL={} Exp={} S={}",
                l.label, l.ttl, l.exp, l.bottom_of_stack as u8
            )
            .unwrap();
        }
    }
    out
}
