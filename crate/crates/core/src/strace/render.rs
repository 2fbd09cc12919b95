//! Canonical text form of parsed events. Reparsing the output of
//! [`render_event`] yields a structurally identical event.

use std::fmt::Write;

use super::text::encode_text_literal;
use super::{ArgValue, Radix, RetValue, SyscallEvent};

pub fn render_value(value: &ArgValue) -> String {
    let mut out = String::new();
    write_value(&mut out, value);
    out
}

fn write_list(out: &mut String, items: &[ArgValue]) {
    for (i, item) in items.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        write_value(out, item);
    }
}

fn write_value(out: &mut String, value: &ArgValue) {
    match value {
        ArgValue::Text { bytes, truncated } => {
            out.push_str(&encode_text_literal(bytes, *truncated))
        }
        ArgValue::Number { value, radix } => match radix {
            Radix::Decimal => {
                let _ = write!(out, "{value}");
            }
            Radix::Hex => {
                let _ = write!(out, "{:#x}", *value as u64);
            }
            Radix::Octal => {
                let _ = write!(out, "0{:o}", *value as u64);
            }
        },
        ArgValue::Flags { names } => out.push_str(&names.join("|")),
        ArgValue::Aggregate { fields } => {
            out.push('{');
            for (i, (key, v)) in fields.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                if !key.is_empty() {
                    out.push_str(key);
                    out.push('=');
                }
                write_value(out, v);
            }
            out.push('}');
        }
        ArgValue::List { items } => {
            out.push('[');
            write_list(out, items);
            out.push(']');
        }
        ArgValue::Call { name, args } => {
            out.push_str(name);
            out.push('(');
            write_list(out, args);
            out.push(')');
        }
        ArgValue::Opaque { raw } => out.push_str(raw),
    }
}

pub fn render_ret(ret: &RetValue) -> String {
    match ret {
        RetValue::Ok { value, hex: true } => format!("{:#x}", *value as u64),
        RetValue::Ok { value, hex: false } => value.to_string(),
        RetValue::Err { errno, message } if message.is_empty() => format!("-1 {errno}"),
        RetValue::Err { errno, message } => format!("-1 {errno} ({message})"),
        RetValue::Unknown => "?".to_string(),
    }
}

/// `[pid N] name(args) = ret`
pub fn render_event(event: &SyscallEvent) -> String {
    let mut out = format!("[pid {}] {}(", event.pid, event.name);
    write_list(&mut out, &event.args);
    out.push_str(") = ");
    out.push_str(&render_ret(&event.ret));
    out
}
