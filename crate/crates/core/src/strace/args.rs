//! Argument grammar: strings, numbers, flag sets, `{...}` aggregates,
//! `[...]` lists and `name(...)` call forms. A piece that does not fit the
//! grammar becomes [`ArgValue::Opaque`] instead of failing the line.

use super::text::{decode_text_literal, literal_extent};
use super::{ArgValue, Radix};

/// Side effects of parsing that the line parser turns into diagnostics.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ArgNotes {
    pub bad_escapes: usize,
    pub oversized: usize,
}

impl ArgNotes {
    fn absorb(&mut self, other: ArgNotes) {
        self.bad_escapes += other.bad_escapes;
        self.oversized += other.oversized;
    }
}

/// Parse a comma-separated argument list (the text between a syscall's
/// parentheses).
pub fn parse_args(text: &str) -> Vec<ArgValue> {
    parse_args_noted(text, &mut ArgNotes::default())
}

/// Parse a single argument.
pub fn parse_value(text: &str) -> ArgValue {
    parse_piece(text.trim(), &mut ArgNotes::default())
}

pub(crate) fn parse_args_noted(text: &str, notes: &mut ArgNotes) -> Vec<ArgValue> {
    if text.trim().is_empty() {
        return Vec::new();
    }
    split_top_level(text)
        .into_iter()
        .map(|piece| parse_piece(piece, notes))
        .collect()
}

fn parse_piece(piece: &str, notes: &mut ArgNotes) -> ArgValue {
    let mut local = ArgNotes::default();
    let mut cur = Cursor { s: piece, pos: 0 };
    let parsed = cur.value(&mut local).filter(|_| {
        cur.skip_trivia();
        cur.pos == piece.len()
    });
    match parsed {
        Some(v) => {
            notes.absorb(local);
            v
        }
        None => ArgValue::Opaque {
            raw: piece.to_string(),
        },
    }
}

/// Split on commas that are not nested in brackets or strings. Pieces are
/// trimmed.
pub(crate) fn split_top_level(s: &str) -> Vec<&str> {
    let b = s.as_bytes();
    let mut pieces = Vec::new();
    let mut depth = 0usize;
    let mut start = 0;
    let mut i = 0;
    while i < b.len() {
        match b[i] {
            b'"' => {
                i = skip_string(b, i);
                continue;
            }
            b'(' | b'[' | b'{' => depth += 1,
            b')' | b']' | b'}' => depth = depth.saturating_sub(1),
            b',' if depth == 0 => {
                pieces.push(s[start..i].trim());
                start = i + 1;
            }
            _ => {}
        }
        i += 1;
    }
    pieces.push(s[start..].trim());
    pieces
}

/// Index just past the string starting at `b[i] == '"'` (or the end of input
/// if it is unterminated).
fn skip_string(b: &[u8], mut i: usize) -> usize {
    i += 1;
    while i < b.len() {
        match b[i] {
            b'\\' => i += 2,
            b'"' => return i + 1,
            _ => i += 1,
        }
    }
    b.len()
}

/// Position of the first closing bracket that is not matched inside `s`.
/// Returns `None` if the input ends first or a mismatched closer shows up.
pub(crate) fn find_unmatched(s: &str, close: u8) -> Option<usize> {
    let b = s.as_bytes();
    let mut stack: Vec<u8> = Vec::new();
    let mut i = 0;
    while i < b.len() {
        match b[i] {
            b'"' => {
                i = skip_string(b, i);
                continue;
            }
            b'(' => stack.push(b')'),
            b'[' => stack.push(b']'),
            b'{' => stack.push(b'}'),
            c @ (b')' | b']' | b'}') => match stack.pop() {
                Some(expected) if expected == c => {}
                Some(_) => return None,
                None if c == close => return Some(i),
                None => return None,
            },
            _ => {}
        }
        i += 1;
    }
    None
}

struct Cursor<'a> {
    s: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn rest(&self) -> &'a str {
        &self.s[self.pos..]
    }

    fn peek(&self) -> Option<u8> {
        self.s.as_bytes().get(self.pos).copied()
    }

    /// Skip whitespace and `/* ... */` comments.
    fn skip_trivia(&mut self) {
        loop {
            let rest = self.rest();
            let trimmed = rest.trim_start();
            self.pos += rest.len() - trimmed.len();
            if trimmed.starts_with("/*") {
                match trimmed.find("*/") {
                    Some(end) => self.pos += end + 2,
                    None => return,
                }
            } else {
                return;
            }
        }
    }

    fn value(&mut self, notes: &mut ArgNotes) -> Option<ArgValue> {
        self.skip_trivia();
        match self.peek()? {
            b'"' => self.text(notes),
            b'{' => self.aggregate(notes),
            b'[' => self.list(notes),
            b'-' | b'0'..=b'9' => self.number_or_flags(),
            c if c.is_ascii_alphabetic() || c == b'_' => self.ident_form(notes),
            _ => None,
        }
    }

    fn text(&mut self, notes: &mut ArgNotes) -> Option<ArgValue> {
        let len = literal_extent(self.rest())?;
        let lit = decode_text_literal(&self.rest()[..len]).ok()?;
        self.pos += len;
        notes.bad_escapes += lit.bad_escapes.len();
        if lit.oversized {
            notes.oversized += 1;
        }
        Some(ArgValue::Text {
            bytes: lit.bytes,
            truncated: lit.truncated,
        })
    }

    /// Consume `open ... close` and return the inner text.
    fn bracketed(&mut self, close: u8) -> Option<&'a str> {
        let inner_start = self.pos + 1;
        let rel = find_unmatched(&self.s[inner_start..], close)?;
        let inner = &self.s[inner_start..inner_start + rel];
        self.pos = inner_start + rel + 1;
        Some(inner)
    }

    fn aggregate(&mut self, notes: &mut ArgNotes) -> Option<ArgValue> {
        let inner = self.bracketed(b'}')?;
        let mut fields = Vec::new();
        if !inner.trim().is_empty() {
            for item in split_top_level(inner) {
                match split_key(item) {
                    Some((key, value)) => {
                        fields.push((key.to_string(), parse_piece(value.trim(), notes)))
                    }
                    None => fields.push((String::new(), parse_piece(item, notes))),
                }
            }
        }
        Some(ArgValue::Aggregate { fields })
    }

    fn list(&mut self, notes: &mut ArgNotes) -> Option<ArgValue> {
        let inner = self.bracketed(b']')?;
        Some(ArgValue::List {
            items: parse_args_noted(inner, notes),
        })
    }

    fn number_token(&mut self) -> Option<(i64, Radix)> {
        let rest = self.rest();
        let b = rest.as_bytes();
        let neg = b.first() == Some(&b'-');
        let body_start = usize::from(neg);
        let body = &rest[body_start..];
        let (radix, digits_start, len) = if body.starts_with("0x") || body.starts_with("0X") {
            let n = body[2..].bytes().take_while(u8::is_ascii_hexdigit).count();
            (Radix::Hex, 2, n)
        } else {
            let n = body.bytes().take_while(u8::is_ascii_digit).count();
            if n > 1 && body.starts_with('0') {
                (Radix::Octal, 1, n - 1)
            } else {
                (Radix::Decimal, 0, n)
            }
        };
        if len == 0 {
            return None;
        }
        let digits = &body[digits_start..digits_start + len];
        let magnitude = match radix {
            Radix::Hex => u64::from_str_radix(digits, 16).ok()?,
            Radix::Octal => u64::from_str_radix(digits, 8).ok()?,
            Radix::Decimal => digits.parse::<u64>().ok()?,
        };
        let value = if neg {
            if magnitude > i64::MAX as u64 + 1 {
                return None;
            }
            (magnitude as i64).wrapping_neg()
        } else {
            magnitude as i64
        };
        let end = body_start + digits_start + len;
        // reject things like `12abc`
        if rest[end..]
            .bytes()
            .next()
            .is_some_and(|c| c.is_ascii_alphanumeric() || c == b'_')
        {
            return None;
        }
        self.pos += end;
        Some((value, radix))
    }

    /// `<...>` fd decorations printed by `-y`.
    fn skip_decoration(&mut self) {
        if self.peek() == Some(b'<') {
            if let Some(end) = self.rest().find('>') {
                self.pos += end + 1;
            }
        }
    }

    fn number_or_flags(&mut self) -> Option<ArgValue> {
        let token_start = self.pos;
        let (value, radix) = self.number_token()?;
        if self.peek() == Some(b'|') {
            let first = self.s[token_start..self.pos].to_string();
            return self.flag_tail(first);
        }
        self.skip_decoration();
        Some(ArgValue::Number { value, radix })
    }

    fn ident(&mut self) -> Option<&'a str> {
        let rest = self.rest();
        let b = rest.as_bytes();
        if !b
            .first()
            .is_some_and(|c| c.is_ascii_alphabetic() || *c == b'_')
        {
            return None;
        }
        let n = b
            .iter()
            .take_while(|c| c.is_ascii_alphanumeric() || **c == b'_')
            .count();
        self.pos += n;
        Some(&rest[..n])
    }

    fn ident_form(&mut self, notes: &mut ArgNotes) -> Option<ArgValue> {
        let name = self.ident()?;
        if self.peek() == Some(b'(') {
            let inner = self.bracketed(b')')?;
            return Some(ArgValue::Call {
                name: name.to_string(),
                args: parse_args_noted(inner, notes),
            });
        }
        self.flag_tail(name.to_string())
    }

    fn flag_tail(&mut self, first: String) -> Option<ArgValue> {
        let mut names = vec![first];
        while self.peek() == Some(b'|') {
            self.pos += 1;
            let start = self.pos;
            if self.ident().is_none() {
                self.number_token()?;
            }
            names.push(self.s[start..self.pos].to_string());
        }
        Some(ArgValue::Flags { names })
    }
}

/// Split `key=value` where key is an identifier (dots allowed, e.g.
/// `msg_iov.iov_len`).
fn split_key(item: &str) -> Option<(&str, &str)> {
    let b = item.as_bytes();
    if !b
        .first()
        .is_some_and(|c| c.is_ascii_alphabetic() || *c == b'_')
    {
        return None;
    }
    let n = b
        .iter()
        .take_while(|c| c.is_ascii_alphanumeric() || **c == b'_' || **c == b'.')
        .count();
    if b.get(n) == Some(&b'=') && b.get(n + 1) != Some(&b'=') {
        Some((&item[..n], &item[n + 1..]))
    } else {
        None
    }
}
