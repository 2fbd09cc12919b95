use std::collections::{HashMap, VecDeque};
use std::io::BufRead;

use super::line::{parse_call_tail, parse_line_with_pid, warnings_for, ParsedLine};
use super::{DiagnosticKind, ExitRecord, SignalRecord, SyscallEvent, TraceDiagnostic};

/// Lines longer than this are reported and skipped rather than buffered.
const MAX_LINE_BYTES: usize = 16 << 20;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedTrace {
    pub events: Vec<SyscallEvent>,
    pub signals: Vec<SignalRecord>,
    pub exits: Vec<ExitRecord>,
    pub diagnostics: Vec<TraceDiagnostic>,
    /// Non-blank input lines seen.
    pub lines: usize,
    /// Events produced by joining an unfinished fragment with its resumption.
    pub merged: usize,
}

struct Pending {
    args_text: String,
    raw: String,
    line_no: usize,
}

/// Parse a whole trace. Blank lines are skipped silently; every other line
/// ends up as exactly one event, fragment, signal, exit or diagnostic.
pub fn parse_stream<R: BufRead>(mut input: R, pid_hint: Option<u32>) -> ParsedTrace {
    let default_pid = pid_hint.filter(|p| *p > 0).unwrap_or(1);
    let mut out = ParsedTrace::default();
    let mut pending: HashMap<(u32, String), VecDeque<Pending>> = HashMap::new();
    let mut buf = Vec::new();
    let mut line_no = 0usize;

    loop {
        buf.clear();
        match read_bounded_line(&mut input, &mut buf) {
            Ok(0) => break,
            Ok(_) => {}
            Err(_) => {
                out.diagnostics.push(TraceDiagnostic::new(
                    line_no + 1,
                    DiagnosticKind::UnparsedLine,
                    "read error; remainder of trace ignored",
                ));
                break;
            }
        }
        line_no += 1;
        if buf.len() > MAX_LINE_BYTES {
            out.lines += 1;
            out.diagnostics.push(TraceDiagnostic::new(
                line_no,
                DiagnosticKind::UnparsedLine,
                "line exceeds 16 MiB",
            ));
            continue;
        }
        let text = String::from_utf8_lossy(&buf);
        if text.trim().is_empty() {
            continue;
        }
        out.lines += 1;

        match parse_line_with_pid(&text, line_no, default_pid) {
            ParsedLine::Event { event, warnings } => {
                push_event(&mut out, event);
                out.diagnostics.extend(warnings);
            }
            ParsedLine::Unfinished {
                pid,
                name,
                args_text,
                raw,
            } => {
                pending.entry((pid, name)).or_default().push_back(Pending {
                    args_text,
                    raw,
                    line_no,
                });
            }
            ParsedLine::Resumed {
                pid,
                name,
                rest,
                raw,
            } => {
                let Some(head) = pending
                    .get_mut(&(pid, name.clone()))
                    .and_then(VecDeque::pop_front)
                else {
                    out.diagnostics.push(TraceDiagnostic::new(
                        line_no,
                        DiagnosticKind::OrphanResumed,
                        format!("no unfinished {name} call for pid {pid}"),
                    ));
                    continue;
                };
                out.merged += 1;
                let merged = join_fragments(&head.args_text, &rest);
                match parse_call_tail(&merged) {
                    Ok((args, ret, notes)) => {
                        let event = SyscallEvent {
                            pid,
                            name,
                            args,
                            ret,
                            raw: format!("{}\n{}", head.raw, raw),
                            seq: 0,
                        };
                        push_event(&mut out, event);
                        out.diagnostics.extend(warnings_for(notes, line_no));
                    }
                    Err(detail) => out.diagnostics.push(TraceDiagnostic::new(
                        line_no,
                        DiagnosticKind::UnparsedLine,
                        format!("resumed {name} call: {detail}"),
                    )),
                }
            }
            ParsedLine::Signal(s) => out.signals.push(s),
            ParsedLine::Exit(e) => out.exits.push(e),
            ParsedLine::Diagnostic(d) => out.diagnostics.push(d),
        }
    }

    let mut orphans: Vec<_> = pending
        .into_iter()
        .flat_map(|((pid, name), queue)| queue.into_iter().map(move |p| (pid, name.clone(), p)))
        .collect();
    orphans.sort_by_key(|(_, _, p)| p.line_no);
    for (pid, name, p) in orphans {
        out.diagnostics.push(TraceDiagnostic::new(
            p.line_no,
            DiagnosticKind::OrphanUnfinished,
            format!("{name} call for pid {pid} never resumed"),
        ));
    }
    out
}

/// Convenience wrapper over an in-memory trace.
pub fn parse_str(input: &str, pid_hint: Option<u32>) -> ParsedTrace {
    parse_stream(input.as_bytes(), pid_hint)
}

fn push_event(out: &mut ParsedTrace, mut event: SyscallEvent) {
    event.seq = out.events.len() as u64;
    out.events.push(event);
}

/// Read up to and including the next newline, keeping at most
/// `MAX_LINE_BYTES + 1` bytes of it.
fn read_bounded_line<R: BufRead>(input: &mut R, buf: &mut Vec<u8>) -> std::io::Result<usize> {
    let mut total = 0;
    loop {
        let chunk = input.fill_buf()?;
        if chunk.is_empty() {
            return Ok(total);
        }
        let (take, done) = match chunk.iter().position(|&b| b == b'\n') {
            Some(i) => (i + 1, true),
            None => (chunk.len(), false),
        };
        let room = (MAX_LINE_BYTES + 1).saturating_sub(buf.len());
        buf.extend_from_slice(&chunk[..take.min(room)]);
        input.consume(take);
        total += take;
        if done {
            return Ok(total);
        }
    }
}

/// Rebuild the text after `name(` from an unfinished head and a resumed tail.
fn join_fragments(head: &str, tail: &str) -> String {
    let head = head.trim_end();
    let head = head.strip_suffix(',').unwrap_or(head).trim_end();
    let tail = tail.trim_start();
    let tail = tail.strip_prefix(',').map_or(tail, str::trim_start);
    if head.is_empty() {
        tail.to_string()
    } else if tail.starts_with(')') {
        format!("{head}{tail}")
    } else {
        format!("{head}, {tail}")
    }
}
