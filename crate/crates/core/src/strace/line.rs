use super::args::{find_unmatched, parse_args_noted, ArgNotes};
use super::{
    is_syscall_name, ArgValue, DiagnosticKind, ExitKind, ExitRecord, RetValue, SignalRecord,
    SyscallEvent, TraceDiagnostic,
};

/// Classification of a single line of strace output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParsedLine {
    /// A complete syscall. `warnings` holds non-fatal findings such as
    /// malformed string escapes; the event itself is still usable.
    Event {
        event: SyscallEvent,
        warnings: Vec<TraceDiagnostic>,
    },
    /// `name(args <unfinished ...>`
    Unfinished {
        pid: u32,
        name: String,
        args_text: String,
        raw: String,
    },
    /// `<... name resumed>rest`
    Resumed {
        pid: u32,
        name: String,
        rest: String,
        raw: String,
    },
    Signal(SignalRecord),
    Exit(ExitRecord),
    Diagnostic(TraceDiagnostic),
}

/// Classify one line. Lines without a pid prefix are attributed to pid 1.
pub fn parse_line(line: &str, line_no: usize) -> ParsedLine {
    parse_line_with_pid(line, line_no, 1)
}

pub(crate) fn parse_line_with_pid(line: &str, line_no: usize, default_pid: u32) -> ParsedLine {
    let raw = line.trim_end_matches(['\n', '\r']);
    let unparsed = |detail: &str| {
        ParsedLine::Diagnostic(TraceDiagnostic::new(
            line_no,
            DiagnosticKind::UnparsedLine,
            detail,
        ))
    };
    if raw.trim().is_empty() {
        return unparsed("empty line");
    }
    let Some((pid, body)) = split_prefix(raw) else {
        return unparsed("malformed pid or timestamp prefix");
    };
    let pid = pid.unwrap_or(default_pid);
    let body = body.trim_end();

    if let Some(inner) = body
        .strip_prefix("--- ")
        .and_then(|b| b.strip_suffix(" ---"))
    {
        return match parse_signal(inner) {
            Some((signal, detail)) => ParsedLine::Signal(SignalRecord {
                pid,
                signal: signal.to_string(),
                detail: detail.to_string(),
                line_no,
            }),
            None => unparsed("malformed signal line"),
        };
    }
    if let Some(inner) = body
        .strip_prefix("+++ ")
        .and_then(|b| b.strip_suffix(" +++"))
    {
        return match parse_exit(inner) {
            Some(kind) => ParsedLine::Exit(ExitRecord { pid, kind, line_no }),
            None => unparsed("unrecognized +++ line"),
        };
    }
    if let Some(rest) = body.strip_prefix("<... ") {
        let Some((name, tail)) = rest.split_once(" resumed>") else {
            return unparsed("malformed resumed fragment");
        };
        if !is_syscall_name(name) {
            return unparsed("bad syscall name in resumed fragment");
        }
        return ParsedLine::Resumed {
            pid,
            name: name.to_string(),
            rest: tail.to_string(),
            raw: raw.to_string(),
        };
    }

    let Some((name, rest)) = body.split_once('(') else {
        return unparsed("no syscall call form");
    };
    if !is_syscall_name(name) {
        return unparsed("bad syscall name");
    }
    if let Some(args_text) = rest.strip_suffix("<unfinished ...>") {
        return ParsedLine::Unfinished {
            pid,
            name: name.to_string(),
            args_text: args_text.trim_end().to_string(),
            raw: raw.to_string(),
        };
    }
    match parse_call_tail(rest) {
        Ok((args, ret, notes)) => ParsedLine::Event {
            event: SyscallEvent {
                pid,
                name: name.to_string(),
                args,
                ret,
                raw: raw.to_string(),
                seq: 0,
            },
            warnings: warnings_for(notes, line_no),
        },
        Err(detail) => unparsed(detail),
    }
}

pub(crate) fn warnings_for(notes: ArgNotes, line_no: usize) -> Vec<TraceDiagnostic> {
    let mut out = Vec::new();
    if notes.bad_escapes > 0 {
        out.push(TraceDiagnostic::new(
            line_no,
            DiagnosticKind::BadEscape,
            format!(
                "{} malformed escape sequence(s) kept verbatim",
                notes.bad_escapes
            ),
        ));
    }
    if notes.oversized > 0 {
        out.push(TraceDiagnostic::new(
            line_no,
            DiagnosticKind::OversizedText,
            format!("{} string argument(s) cut at 1 MiB", notes.oversized),
        ));
    }
    out
}

/// Strip `[pid N] ` or a bare `N ` pid column, then an optional
/// `HH:MM:SS[.ffffff] ` timestamp. `None` if a prefix is present but broken.
fn split_prefix(line: &str) -> Option<(Option<u32>, &str)> {
    let mut pid = None;
    let mut rest = line;
    if let Some(after) = rest.strip_prefix("[pid") {
        let after = after.trim_start();
        let (num, tail) = after.split_once(']')?;
        pid = Some(parse_pid(num.trim())?);
        rest = tail.trim_start();
    } else {
        let digits = rest.bytes().take_while(u8::is_ascii_digit).count();
        if digits > 0 && rest[digits..].starts_with([' ', '\t']) {
            pid = Some(parse_pid(&rest[..digits])?);
            rest = rest[digits..].trim_start();
        }
    }
    if let Some(after) = strip_timestamp(rest) {
        rest = after;
    }
    Some((pid, rest))
}

fn parse_pid(s: &str) -> Option<u32> {
    match s.parse::<u32>() {
        Ok(0) | Err(_) => None,
        Ok(p) => Some(p),
    }
}

fn strip_timestamp(s: &str) -> Option<&str> {
    let b = s.as_bytes();
    if b.len() < 9 {
        return None;
    }
    let shape_ok = b[0..2].iter().all(u8::is_ascii_digit)
        && b[2] == b':'
        && b[3..5].iter().all(u8::is_ascii_digit)
        && b[5] == b':'
        && b[6..8].iter().all(u8::is_ascii_digit);
    if !shape_ok {
        return None;
    }
    let mut end = 8;
    if b.get(end) == Some(&b'.') {
        let frac = b[end + 1..]
            .iter()
            .take_while(|c| c.is_ascii_digit())
            .count();
        if frac == 0 {
            return None;
        }
        end += 1 + frac;
    }
    if !matches!(b.get(end), Some(b' ' | b'\t')) {
        return None;
    }
    Some(s[end..].trim_start())
}

fn parse_signal(inner: &str) -> Option<(&str, &str)> {
    let (signal, detail) = match inner.split_once(' ') {
        Some((s, d)) => (s, d.trim()),
        None => (inner, ""),
    };
    let valid = signal.starts_with("SIG")
        && signal.len() > 3
        && signal
            .bytes()
            .all(|c| c.is_ascii_uppercase() || c.is_ascii_digit() || c == b'_' || c == b'+');
    valid.then_some((signal, detail))
}

fn parse_exit(inner: &str) -> Option<ExitKind> {
    if let Some(status) = inner.strip_prefix("exited with ") {
        return status
            .trim()
            .parse()
            .ok()
            .map(|status| ExitKind::Exited { status });
    }
    let killed = inner.strip_prefix("killed by ")?;
    let (signal, core_dumped) = match killed.strip_suffix(" (core dumped)") {
        Some(sig) => (sig, true),
        None => (killed, false),
    };
    if !signal.starts_with("SIG") || signal.contains(' ') {
        return None;
    }
    Some(ExitKind::Killed {
        signal: signal.to_string(),
        core_dumped,
    })
}

/// Parse everything after `name(`: the argument list, `)`, `=` and the return
/// value.
pub(crate) fn parse_call_tail(
    rest: &str,
) -> Result<(Vec<ArgValue>, RetValue, ArgNotes), &'static str> {
    let close = find_unmatched(rest, b')').ok_or("unbalanced argument list")?;
    let mut notes = ArgNotes::default();
    let args = parse_args_noted(&rest[..close], &mut notes);
    let after = strip_elapsed(rest[close + 1..].trim());
    let ret_text = after
        .strip_prefix('=')
        .ok_or("missing '=' before return value")?;
    let ret = parse_ret(ret_text).ok_or("malformed return value")?;
    Ok((args, ret, notes))
}

/// Drop a trailing `<0.000123>` elapsed-time suffix (`-T`).
fn strip_elapsed(s: &str) -> &str {
    if let Some(open) = s.rfind(" <") {
        let tail = &s[open + 2..];
        if let Some(num) = tail.strip_suffix('>') {
            if !num.is_empty() && num.bytes().all(|c| c.is_ascii_digit() || c == b'.') {
                return s[..open].trim_end();
            }
        }
    }
    s
}

pub(crate) fn parse_ret(text: &str) -> Option<RetValue> {
    let t = text.trim();
    if t == "?" || t.starts_with("? ") {
        return Some(RetValue::Unknown);
    }
    let neg = t.starts_with('-');
    let body = &t[usize::from(neg)..];
    let (value, hex, consumed) = if let Some(h) = body.strip_prefix("0x") {
        let n = h.bytes().take_while(u8::is_ascii_hexdigit).count();
        (u64::from_str_radix(&h[..n], 16).ok()?, true, 2 + n)
    } else {
        let n = body.bytes().take_while(u8::is_ascii_digit).count();
        (body[..n].parse::<u64>().ok()?, false, n)
    };
    let value = if neg {
        (value as i64).wrapping_neg()
    } else {
        value as i64
    };
    let mut rest = &body[consumed..];
    if rest.starts_with('<') {
        rest = rest.find('>').map_or("", |end| &rest[end + 1..]);
    }
    if !(rest.is_empty() || rest.starts_with(' ')) {
        return None;
    }
    let rest = rest.trim_start();
    if value < 0 {
        let errno_len = rest
            .bytes()
            .take_while(|c| c.is_ascii_uppercase() || c.is_ascii_digit())
            .count();
        let errno = &rest[..errno_len];
        if errno.len() > 1 && errno.starts_with('E') {
            let msg = rest[errno_len..].trim();
            let message = msg
                .strip_prefix('(')
                .and_then(|m| m.strip_suffix(')'))
                .unwrap_or(msg)
                .to_string();
            return Some(RetValue::Err {
                errno: errno.to_string(),
                message,
            });
        }
    }
    Some(RetValue::Ok { value, hex })
}
