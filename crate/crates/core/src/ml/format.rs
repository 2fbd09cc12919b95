//! Text model format, one value per line:
//!
//! ```text
//! PKGTRACE-MODEL 1
//! dimension 4096
//! hash_seed 123
//! threshold 0.5
//! trained_on 50 50
//! bias -0.25
//! weights
//! 0.125
//! ...            (exactly `dimension` lines)
//! end
//! ```
//!
//! Floats use Rust's shortest round-trip formatting, so save then load is exact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{MlError, Model, TrainedOn, MIN_DIMENSION};

pub const FORMAT_HEADER: &str = "PKGTRACE-MODEL";
const FORMAT_VERSION: &str = "1";

pub fn model_to_string(model: &Model) -> String {
    let mut out = String::with_capacity(model.weights.len() * 24 + 128);
    let _ = writeln!(out, "{FORMAT_HEADER} {FORMAT_VERSION}");
    let _ = writeln!(out, "dimension {}", model.dimension);
    let _ = writeln!(out, "hash_seed {}", model.hash_seed);
    let _ = writeln!(out, "threshold {}", model.threshold);
    let _ = writeln!(
        out,
        "trained_on {} {}",
        model.trained_on.benign, model.trained_on.malicious
    );
    let _ = writeln!(out, "bias {}", model.bias);
    out.push_str("weights\n");
    for w in &model.weights {
        let _ = writeln!(out, "{w}");
    }
    out.push_str("end\n");
    out
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self, what: &str) -> Result<(usize, &'a str), MlError> {
        match self.inner.next() {
            Some((i, l)) => {
                self.last = i + 1;
                Ok((i + 1, l.trim_end_matches('\r')))
            }
            None => Err(MlError::Format {
                line: self.last + 1,
                message: format!("file ends before {what}"),
            }),
        }
    }

    fn field(&mut self, key: &str) -> Result<(usize, &'a str), MlError> {
        let (n, line) = self.next(key)?;
        match line.split_once(' ') {
            Some((k, v)) if k == key => Ok((n, v)),
            _ => Err(MlError::Format {
                line: n,
                message: format!("expected `{key} <value>`"),
            }),
        }
    }
}

fn parse<T: std::str::FromStr>(n: usize, s: &str, what: &str) -> Result<T, MlError> {
    s.trim().parse().map_err(|_| MlError::Format {
        line: n,
        message: format!("invalid {what} {s:?}"),
    })
}

pub fn model_from_str(text: &str) -> Result<Model, MlError> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        last: 0,
    };
    let (_, header) = lines.next("the header")?;
    match header.split_once(' ') {
        Some((FORMAT_HEADER, FORMAT_VERSION)) => {}
        Some((FORMAT_HEADER, v)) => return Err(MlError::UnsupportedVersion(v.to_string())),
        _ => {
            return Err(MlError::Format {
                line: 1,
                message: format!("missing `{FORMAT_HEADER}` header"),
            })
        }
    }
    let (n, v) = lines.field("dimension")?;
    let dimension: usize = parse(n, v, "dimension")?;
    if dimension < MIN_DIMENSION {
        return Err(MlError::Format {
            line: n,
            message: format!("dimension {dimension} below {MIN_DIMENSION}"),
        });
    }
    let (n, v) = lines.field("hash_seed")?;
    let hash_seed = parse(n, v, "hash_seed")?;
    let (n, v) = lines.field("threshold")?;
    let threshold: f64 = parse(n, v, "threshold")?;
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(MlError::Format {
            line: n,
            message: "threshold must lie strictly between 0 and 1".into(),
        });
    }
    let (n, v) = lines.field("trained_on")?;
    let (b, m) = v.split_once(' ').ok_or_else(|| MlError::Format {
        line: n,
        message: "expected `trained_on <benign> <malicious>`".into(),
    })?;
    let trained_on = TrainedOn {
        benign: parse(n, b, "count")?,
        malicious: parse(n, m, "count")?,
    };
    let (n, v) = lines.field("bias")?;
    let bias = parse(n, v, "bias")?;
    let (n, l) = lines.next("weights")?;
    if l != "weights" {
        return Err(MlError::Format {
            line: n,
            message: "expected `weights`".into(),
        });
    }
    let mut weights = Vec::with_capacity(dimension);
    for _ in 0..dimension {
        let (n, l) = lines.next("all weights")?;
        weights.push(parse(n, l, "weight")?);
    }
    let (n, l) = lines.next("`end`")?;
    if l != "end" {
        return Err(MlError::Format {
            line: n,
            message: format!("expected `end` after {dimension} weights"),
        });
    }
    Ok(Model {
        weights,
        bias,
        dimension,
        hash_seed,
        threshold,
        trained_on,
    })
}

pub fn save_model(model: &Model, path: &Path) -> Result<(), MlError> {
    fs::write(path, model_to_string(model))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Model, MlError> {
    model_from_str(&fs::read_to_string(path)?)
}
