//! Parser and canonical printer for the rule language:
//!
//! ```text
//! rule <id> : <category> {
//!   severity = low | medium | high
//!   description = "<text>"
//!   match = "<literal>"
//!   regex = /<pattern>/
//! }
//! ```

use std::collections::HashMap;
use std::fmt::Write as _;

use super::{Category, Matcher, Pattern, Rule, RuleError, RuleSet, Severity};

struct Parser<'a> {
    src: &'a str,
    pos: usize,
    line: usize,
    col: usize,
}

#[derive(Clone, Copy)]
struct Loc {
    line: usize,
    col: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Self {
        Parser {
            src,
            pos: 0,
            line: 1,
            col: 1,
        }
    }

    fn loc(&self) -> Loc {
        Loc {
            line: self.line,
            col: self.col,
        }
    }

    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn skip_trivia(&mut self) {
        while let Some(c) = self.peek() {
            if c == '#' {
                while self.peek().is_some_and(|c| c != '\n') {
                    self.bump();
                }
            } else if c.is_whitespace() {
                self.bump();
            } else {
                break;
            }
        }
    }

    fn describe_next(&self) -> String {
        match self.peek() {
            None => "end of input".into(),
            Some(c) if c.is_ascii_alphanumeric() || c == '_' => {
                let word: String = self.src[self.pos..]
                    .chars()
                    .take_while(|c| c.is_ascii_alphanumeric() || *c == '_')
                    .collect();
                format!("`{word}`")
            }
            Some(c) => format!("`{c}`"),
        }
    }

    fn expected<T>(&self, what: &str) -> Result<T, RuleError> {
        Err(self.error_at(
            self.loc(),
            format!("expected {what}, found {}", self.describe_next()),
        ))
    }

    fn error_at(&self, at: Loc, message: String) -> RuleError {
        RuleError::Syntax {
            line: at.line,
            column: at.col,
            message,
        }
    }

    fn ident(&mut self, what: &str) -> Result<(String, Loc), RuleError> {
        self.skip_trivia();
        let at = self.loc();
        match self.peek() {
            Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
            _ => return self.expected(what),
        }
        let mut out = String::new();
        while let Some(c) = self
            .peek()
            .filter(|c| c.is_ascii_alphanumeric() || *c == '_')
        {
            out.push(c);
            self.bump();
        }
        Ok((out, at))
    }

    fn punct(&mut self, p: char) -> Result<(), RuleError> {
        self.skip_trivia();
        if self.peek() == Some(p) {
            self.bump();
            Ok(())
        } else {
            self.expected(&format!("`{p}`"))
        }
    }

    fn string(&mut self) -> Result<String, RuleError> {
        self.skip_trivia();
        if self.peek() != Some('"') {
            return self.expected("a quoted string");
        }
        let start = self.loc();
        self.bump();
        let mut out = String::new();
        loop {
            let at = self.loc();
            match self.bump() {
                None | Some('\n') => return Err(self.error_at(start, "unterminated string".into())),
                Some('"') => return Ok(out),
                Some('\\') => match self.bump() {
                    Some('"') => out.push('"'),
                    Some('\\') => out.push('\\'),
                    Some('n') => out.push('\n'),
                    Some('t') => out.push('\t'),
                    Some('r') => out.push('\r'),
                    Some('u') => out.push(self.unicode_escape(at)?),
                    _ => return Err(self.error_at(at, "unknown escape in string".into())),
                },
                Some(c) => out.push(c),
            }
        }
    }

    fn unicode_escape(&mut self, at: Loc) -> Result<char, RuleError> {
        let bad = |p: &Self| p.error_at(at, "malformed \\u{...} escape".into());
        if self.bump() != Some('{') {
            return Err(bad(self));
        }
        let mut hex = String::new();
        loop {
            match self.bump() {
                Some('}') => break,
                Some(c) if c.is_ascii_hexdigit() && hex.len() < 6 => hex.push(c),
                _ => return Err(bad(self)),
            }
        }
        u32::from_str_radix(&hex, 16)
            .ok()
            .and_then(char::from_u32)
            .ok_or_else(|| bad(self))
    }

    /// `/.../` with `\/` standing for a slash; other escapes pass through
    /// to the regex engine untouched.
    fn regex_literal(&mut self) -> Result<(String, Loc), RuleError> {
        self.skip_trivia();
        if self.peek() != Some('/') {
            return self.expected("a /regex/ literal");
        }
        let start = self.loc();
        self.bump();
        let mut out = String::new();
        loop {
            match self.bump() {
                None | Some('\n') => return Err(self.error_at(start, "unterminated regex".into())),
                Some('/') => return Ok((out, start)),
                Some('\\') => match self.bump() {
                    Some('/') => out.push('/'),
                    Some('\n') | None => {
                        return Err(self.error_at(start, "unterminated regex".into()))
                    }
                    Some(c) => {
                        out.push('\\');
                        out.push(c);
                    }
                },
                Some(c) => out.push(c),
            }
        }
    }

    fn rule(&mut self) -> Result<(Rule, Loc), RuleError> {
        let (kw, at) = self.ident("`rule`")?;
        if kw != "rule" {
            return Err(self.error_at(at, format!("expected `rule`, found `{kw}`")));
        }
        let (id, id_at) = self.ident("a rule identifier")?;
        self.punct(':')?;
        let (cat, cat_at) = self.ident("a category")?;
        let category = cat.parse::<Category>().map_err(|_| {
            self.error_at(
                cat_at,
                format!("expected one of command, file, domain, ip, syscall, any, found `{cat}`"),
            )
        })?;
        self.punct('{')?;

        let mut severity = None;
        let mut description = None;
        let mut matchers = Vec::new();
        loop {
            self.skip_trivia();
            if self.peek() == Some('}') {
                self.bump();
                break;
            }
            let (key, key_at) = self.ident("`severity`, `description`, `match`, `regex` or `}`")?;
            self.punct('=')?;
            match key.as_str() {
                "severity" => {
                    let (word, at) = self.ident("low, medium or high")?;
                    let s = word
                        .parse::<Severity>()
                        .map_err(|_| self.error_at(at, format!("expected low, medium or high, found `{word}`")))?;
                    if severity.replace(s).is_some() {
                        return Err(self.error_at(key_at, "severity given twice".into()));
                    }
                }
                "description" => {
                    let d = self.string()?;
                    if description.replace(d).is_some() {
                        return Err(self.error_at(key_at, "description given twice".into()));
                    }
                }
                "match" => {
                    let lit = self.string()?;
                    if lit.len() > super::MAX_PATTERN_BYTES {
                        return Err(self.error_at(key_at, "literal exceeds 1 KiB".into()));
                    }
                    matchers.push(Matcher::Literal(lit));
                }
                "regex" => {
                    let (src, at) = self.regex_literal()?;
                    let pattern = Pattern::new(&src).map_err(|e| RuleError::InvalidPattern {
                        line: at.line,
                        column: at.col,
                        rule: id.clone(),
                        message: e,
                    })?;
                    matchers.push(Matcher::Pattern(pattern));
                }
                other => {
                    return Err(self.error_at(
                        key_at,
                        format!("expected `severity`, `description`, `match`, `regex` or `}}`, found `{other}`"),
                    ))
                }
            }
        }
        if matchers.is_empty() {
            return Err(self.error_at(id_at, format!("rule `{id}` has no match or regex line")));
        }
        let rule = Rule {
            id,
            category,
            severity: severity.unwrap_or(Severity::Medium),
            description: description.unwrap_or_default(),
            matchers,
        };
        Ok((rule, id_at))
    }
}

pub fn parse_ruleset(source: &str) -> Result<RuleSet, RuleError> {
    let mut p = Parser::new(source);
    let mut rules = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    loop {
        p.skip_trivia();
        if p.peek().is_none() {
            break;
        }
        let (rule, at) = p.rule()?;
        if let Some(first) = seen.get(&rule.id) {
            return Err(RuleError::DuplicateId {
                id: rule.id,
                first_line: *first,
                second_line: at.line,
            });
        }
        seen.insert(rule.id.clone(), at.line);
        rules.push(rule);
    }
    Ok(RuleSet { rules })
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c if c.is_control() => {
                let _ = write!(out, "\\u{{{:x}}}", c as u32);
            }
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

fn slash_escape(src: &str) -> String {
    let mut out = String::with_capacity(src.len() + 2);
    let mut chars = src.chars();
    while let Some(c) = chars.next() {
        match c {
            '\\' => {
                out.push('\\');
                if let Some(n) = chars.next() {
                    out.push(n);
                }
            }
            '/' => out.push_str("\\/"),
            c => out.push(c),
        }
    }
    out
}

/// Canonical source form; `parse_ruleset(&print_ruleset(r)) == r`.
pub fn print_ruleset(set: &RuleSet) -> String {
    let mut out = String::new();
    for (i, rule) in set.rules.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let _ = writeln!(out, "rule {} : {} {{", rule.id, rule.category);
        let _ = writeln!(out, "  severity = {}", rule.severity);
        if !rule.description.is_empty() {
            let _ = writeln!(out, "  description = {}", quote(&rule.description));
        }
        for m in &rule.matchers {
            match m {
                Matcher::Literal(s) => {
                    let _ = writeln!(out, "  match = {}", quote(s));
                }
                Matcher::Pattern(p) => {
                    let _ = writeln!(out, "  regex = /{}/", slash_escape(p.source()));
                }
            }
        }
        out.push_str("}\n");
    }
    out
}
