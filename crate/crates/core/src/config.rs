//! Flat `key = value` configuration text.
//!
//! One assignment per line; `#` starts a comment; blank lines are skipped;
//! a value may be wrapped in double quotes. Keys may appear once.

use std::fmt::Display;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KvLine {
    /// 1-based line number in the source text.
    pub line: usize,
    pub key: String,
    pub value: String,
}

impl KvLine {
    pub fn error(&self, msg: impl Display) -> Error {
        Error::Config(format!("line {}: {}: {msg}", self.line, self.key))
    }

    pub fn parse<V: FromStr>(&self) -> Result<V>
    where
        V::Err: Display,
    {
        self.value.parse().map_err(|e| self.error(format_args!("{:?}: {e}", self.value)))
    }

    pub fn parse_bool(&self) -> Result<bool> {
        match self.value.as_str() {
            "true" | "1" | "yes" | "on" => Ok(true),
            "false" | "0" | "no" | "off" => Ok(false),
            v => Err(self.error(format_args!("{v:?} is not a boolean"))),
        }
    }

    /// Comma-separated list.
    pub fn parse_list<V: FromStr>(&self) -> Result<Vec<V>>
    where
        V::Err: Display,
    {
        self.value
            .split(',')
            .map(|p| {
                p.trim()
                    .parse()
                    .map_err(|e| self.error(format_args!("{:?}: {e}", p.trim())))
            })
            .collect()
    }
}

pub fn parse_kv(text: &str) -> Result<Vec<KvLine>> {
    let mut out: Vec<KvLine> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = strip_comment(raw).trim();
        if body.is_empty() {
            continue;
        }
        let Some((key, value)) = body.split_once('=') else {
            return Err(Error::Config(format!("line {line}: expected key = value, got {body:?}")));
        };
        let key = key.trim();
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.') {
            return Err(Error::Config(format!("line {line}: invalid key {key:?}")));
        }
        let mut value = value.trim();
        if value.len() >= 2 && value.starts_with('"') && value.ends_with('"') {
            value = &value[1..value.len() - 1];
        } else if value.contains('"') {
            return Err(Error::Config(format!("line {line}: unbalanced quote in {value:?}")));
        }
        if let Some(prev) = out.iter().find(|kv| kv.key == key) {
            return Err(Error::Config(format!(
                "line {line}: key {key:?} already set on line {}",
                prev.line
            )));
        }
        out.push(KvLine {
            line,
            key: key.to_string(),
            value: value.to_string(),
        });
    }
    Ok(out)
}

/// Cuts a trailing comment, leaving `#` inside quotes alone.
fn strip_comment(line: &str) -> &str {
    let mut quoted = false;
    for (i, c) in line.char_indices() {
        match c {
            '"' => quoted = !quoted,
            '#' if !quoted => return &line[..i],
            _ => {}
        }
    }
    line
}

/// Renders `key = value` lines, quoting values that contain `#` or `;`.
pub fn render_kv<'a>(pairs: impl IntoIterator<Item = (&'a str, String)>) -> String {
    let mut s = String::new();
    for (k, v) in pairs {
        if v.contains(['#', ';', ' ']) {
            s.push_str(&format!("{k} = \"{v}\"\n"));
        } else {
            s.push_str(&format!("{k} = {v}\n"));
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_quotes() {
        let kv = parse_kv("# header\n\na = 1\nb=\"(1,0);(0,1)\" # trailing\n  c = x#y\n").unwrap();
        let got: Vec<_> = kv.iter().map(|k| (k.line, k.key.as_str(), k.value.as_str())).collect();
        assert_eq!(got, [(3, "a", "1"), (4, "b", "(1,0);(0,1)"), (5, "c", "x")]);
    }

    #[test]
    fn errors_name_the_line() {
        for (text, line) in [("a = 1\nnope\n", 2), ("a=1\n\na=2", 3), ("= 3", 1), ("a = \"x", 1)] {
            let e = parse_kv(text).unwrap_err().to_string();
            assert!(e.contains(&format!("line {line}")), "{text:?}: {e}");
        }
    }

    #[test]
    fn typed_values() {
        let kv = &parse_kv("n = 12\nf = off\nl = 3, 4,5").unwrap();
        assert_eq!(kv[0].parse::<usize>().unwrap(), 12);
        assert!(!kv[1].parse_bool().unwrap());
        assert_eq!(kv[2].parse_list::<u32>().unwrap(), [3, 4, 5]);
        assert!(kv[1].parse::<usize>().unwrap_err().to_string().contains("line 2"));
    }
}
