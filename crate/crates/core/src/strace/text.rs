//! Decoding and encoding of strace's C-style quoted string literals.

/// Per-argument limit on decoded text. Anything longer is cut and flagged.
pub const MAX_TEXT_BYTES: usize = 1 << 20;

/// A decoded string argument.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TextLiteral {
    pub bytes: Vec<u8>,
    /// Set when strace printed `...` after the closing quote, or when the
    /// decoded size hit [`MAX_TEXT_BYTES`].
    pub truncated: bool,
    /// Byte offsets (within the literal source) of malformed escapes. Each
    /// malformed escape is kept verbatim in `bytes`.
    pub bad_escapes: Vec<usize>,
    pub oversized: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LiteralError {
    #[error("string literal must start with '\"'")]
    MissingOpenQuote,
    #[error("string literal is not terminated")]
    Unterminated,
    #[error("unexpected text after closing quote: {0:?}")]
    TrailingText(String),
}

/// Length in bytes of the quoted literal starting at `s[0] == '"'`, including
/// the closing quote and an optional `...` marker. `None` if unterminated.
pub(crate) fn literal_extent(s: &str) -> Option<usize> {
    let b = s.as_bytes();
    if b.first() != Some(&b'"') {
        return None;
    }
    let mut i = 1;
    while i < b.len() {
        match b[i] {
            b'\\' => i += 2,
            b'"' => {
                let end = i + 1;
                if s[end..].starts_with("...") {
                    return Some(end + 3);
                }
                return Some(end);
            }
            _ => i += 1,
        }
    }
    None
}

/// Decode a quoted strace string such as `"abc\n"...` into raw bytes.
pub fn decode_text_literal(escaped: &str) -> Result<TextLiteral, LiteralError> {
    let src = escaped.as_bytes();
    if src.first() != Some(&b'"') {
        return Err(LiteralError::MissingOpenQuote);
    }
    let mut out = TextLiteral::default();
    let mut i = 1;
    let close = loop {
        if i >= src.len() {
            return Err(LiteralError::Unterminated);
        }
        let c = src[i];
        if c == b'"' {
            break i;
        }
        if c != b'\\' {
            push_byte(&mut out, c);
            i += 1;
            continue;
        }
        // escape sequence
        let start = i;
        let Some(&e) = src.get(i + 1) else {
            return Err(LiteralError::Unterminated);
        };
        i += 2;
        let simple = match e {
            b'n' => Some(b'\n'),
            b't' => Some(b'\t'),
            b'r' => Some(b'\r'),
            b'v' => Some(0x0b),
            b'f' => Some(0x0c),
            b'a' => Some(0x07),
            b'b' => Some(0x08),
            b'e' => Some(0x1b),
            b'"' => Some(b'"'),
            b'\\' => Some(b'\\'),
            b'\'' => Some(b'\''),
            b'?' => Some(b'?'),
            _ => None,
        };
        if let Some(byte) = simple {
            push_byte(&mut out, byte);
            continue;
        }
        match e {
            b'0'..=b'7' => {
                let mut value: u32 = u32::from(e - b'0');
                let mut digits = 1;
                while digits < 3 {
                    match src.get(i) {
                        Some(&d @ b'0'..=b'7') => {
                            value = value * 8 + u32::from(d - b'0');
                            i += 1;
                            digits += 1;
                        }
                        _ => break,
                    }
                }
                if value > 0xff {
                    out.bad_escapes.push(start);
                    push_slice(&mut out, &src[start..i]);
                } else {
                    push_byte(&mut out, value as u8);
                }
            }
            b'x' => {
                let hi = src.get(i).and_then(|&d| hex_val(d));
                match hi {
                    Some(hi) => {
                        i += 1;
                        let mut value = hi;
                        if let Some(lo) = src.get(i).and_then(|&d| hex_val(d)) {
                            value = value * 16 + lo;
                            i += 1;
                        }
                        push_byte(&mut out, value);
                    }
                    None => {
                        out.bad_escapes.push(start);
                        push_slice(&mut out, &src[start..i]);
                    }
                }
            }
            _ => {
                out.bad_escapes.push(start);
                push_slice(&mut out, &src[start..i]);
            }
        }
    };
    let rest = &escaped[close + 1..];
    match rest {
        "" => {}
        "..." => out.truncated = true,
        other => return Err(LiteralError::TrailingText(other.to_string())),
    }
    if out.oversized {
        out.truncated = true;
    }
    Ok(out)
}

fn hex_val(d: u8) -> Option<u8> {
    (d as char).to_digit(16).map(|v| v as u8)
}

fn push_byte(out: &mut TextLiteral, b: u8) {
    if out.bytes.len() >= MAX_TEXT_BYTES {
        out.oversized = true;
    } else {
        out.bytes.push(b);
    }
}

fn push_slice(out: &mut TextLiteral, s: &[u8]) {
    for &b in s {
        push_byte(out, b);
    }
}

/// Render bytes as a strace string literal. Printable ASCII passes through,
/// common control characters use their short escapes and everything else is
/// written as `\xNN`.
pub fn encode_text_literal(bytes: &[u8], truncated: bool) -> String {
    let mut s = String::with_capacity(bytes.len() + 2);
    s.push('"');
    for &b in bytes {
        match b {
            b'"' => s.push_str("\\\""),
            b'\\' => s.push_str("\\\\"),
            b'\n' => s.push_str("\\n"),
            b'\t' => s.push_str("\\t"),
            b'\r' => s.push_str("\\r"),
            0x0b => s.push_str("\\v"),
            0x0c => s.push_str("\\f"),
            0x20..=0x7e => s.push(b as char),
            _ => s.push_str(&format!("\\x{b:02x}")),
        }
    }
    s.push('"');
    if truncated {
        s.push_str("...");
    }
    s
}
