//! Parser for strace's textual output.
//!
//! Lines are classified one at a time by [`parse_line`]; [`parse_stream`]
//! stitches `<unfinished ...>` / `<... resumed>` fragments back together and
//! assigns sequence numbers. Malformed input never aborts parsing: every line
//! that cannot be used is reported as a [`TraceDiagnostic`].

mod args;
mod line;
mod render;
mod stream;
mod text;

use serde::{Deserialize, Serialize};

pub use args::{parse_args, parse_value};
pub use line::{parse_line, ParsedLine};
pub use render::{render_event, render_value};
pub use stream::{parse_str, parse_stream, ParsedTrace};
pub use text::{
    decode_text_literal, encode_text_literal, LiteralError, TextLiteral, MAX_TEXT_BYTES,
};

/// Source notation of an integer argument.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Radix {
    Decimal,
    Hex,
    Octal,
}

/// One parsed syscall argument.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ArgValue {
    /// Quoted string, unescaped.
    Text {
        bytes: Vec<u8>,
        truncated: bool,
    },
    Number {
        value: i64,
        radix: Radix,
    },
    /// `O_RDONLY|O_CLOEXEC`, `AT_FDCWD`, `NULL`, ...
    Flags {
        names: Vec<String>,
    },
    /// `{key=value, ...}`. Unnamed members have an empty key.
    Aggregate {
        fields: Vec<(String, ArgValue)>,
    },
    List {
        items: Vec<ArgValue>,
    },
    /// `htons(443)`, `inet_addr("1.2.3.4")`.
    Call {
        name: String,
        args: Vec<ArgValue>,
    },
    /// Anything the argument grammar does not cover, kept verbatim.
    Opaque {
        raw: String,
    },
}

impl ArgValue {
    pub fn text(s: impl AsRef<[u8]>) -> Self {
        ArgValue::Text {
            bytes: s.as_ref().to_vec(),
            truncated: false,
        }
    }

    pub fn number(value: i64) -> Self {
        ArgValue::Number {
            value,
            radix: Radix::Decimal,
        }
    }

    pub fn flags<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ArgValue::Flags {
            names: names.into_iter().map(Into::into).collect(),
        }
    }

    pub fn as_bytes(&self) -> Option<&[u8]> {
        match self {
            ArgValue::Text { bytes, .. } => Some(bytes),
            _ => None,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self {
            ArgValue::Number { value, .. } => Some(*value),
            _ => None,
        }
    }

    /// True if this is a flag set containing `name`.
    pub fn has_flag(&self, name: &str) -> bool {
        matches!(self, ArgValue::Flags { names } if names.iter().any(|n| n == name))
    }

    /// Look up a named member of an aggregate.
    pub fn field(&self, key: &str) -> Option<&ArgValue> {
        match self {
            ArgValue::Aggregate { fields } => fields.iter().find(|(k, _)| k == key).map(|(_, v)| v),
            _ => None,
        }
    }
}

/// Syscall return value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RetValue {
    Ok {
        value: i64,
        hex: bool,
    },
    /// `-1 ENOENT (No such file or directory)`
    Err {
        errno: String,
        message: String,
    },
    /// strace printed `?`
    Unknown,
}

impl RetValue {
    pub fn ok(value: i64) -> Self {
        RetValue::Ok { value, hex: false }
    }

    pub fn is_ok(&self) -> bool {
        matches!(self, RetValue::Ok { .. })
    }

    pub fn value(&self) -> Option<i64> {
        match self {
            RetValue::Ok { value, .. } => Some(*value),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyscallEvent {
    pub pid: u32,
    pub name: String,
    pub args: Vec<ArgValue>,
    pub ret: RetValue,
    pub raw: String,
    pub seq: u64,
}

impl SyscallEvent {
    pub fn arg(&self, index: usize) -> Option<&ArgValue> {
        self.args.get(index)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignalRecord {
    pub pid: u32,
    pub signal: String,
    pub detail: String,
    pub line_no: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ExitKind {
    Exited { status: i32 },
    Killed { signal: String, core_dumped: bool },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExitRecord {
    pub pid: u32,
    pub kind: ExitKind,
    pub line_no: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticKind {
    UnparsedLine,
    OrphanResumed,
    OrphanUnfinished,
    BadEscape,
    OversizedText,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceDiagnostic {
    pub line_no: usize,
    pub kind: DiagnosticKind,
    pub detail: String,
}

impl TraceDiagnostic {
    pub(crate) fn new(line_no: usize, kind: DiagnosticKind, detail: impl Into<String>) -> Self {
        Self {
            line_no,
            kind,
            detail: detail.into(),
        }
    }

    /// Diagnostics of this kind stand in for a line that produced nothing else.
    pub fn skips_line(&self) -> bool {
        matches!(
            self.kind,
            DiagnosticKind::UnparsedLine
                | DiagnosticKind::OrphanResumed
                | DiagnosticKind::OrphanUnfinished
        )
    }
}

pub(crate) fn is_syscall_name(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_lowercase() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}
