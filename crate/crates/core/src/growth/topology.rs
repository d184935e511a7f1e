use std::fmt;
use std::str::FromStr;

use crate::error::{config_err, Error, Result};

/// Neighbor offsets used to build the environment tensor.
///
/// Row `k` is `(right, up)`: the feature map is rolled `right` columns along
/// the width axis and `-up` rows along the height axis before the shared
/// environment convolution is applied.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Topology {
    offsets: Vec<(i64, i64)>,
}

impl Topology {
    pub fn new(offsets: Vec<(i64, i64)>) -> Result<Self> {
        if offsets.is_empty() {
            return config_err("topology needs at least one offset");
        }
        for (i, a) in offsets.iter().enumerate() {
            if offsets[..i].contains(a) {
                return config_err(format!("duplicate topology offset {a:?}"));
            }
        }
        Ok(Topology { offsets })
    }

    /// The 8-neighborhood.
    pub fn moore() -> Self {
        Topology {
            offsets: vec![
                (1, 0),
                (-1, 0),
                (0, 1),
                (0, -1),
                (1, 1),
                (1, -1),
                (-1, 1),
                (-1, -1),
            ],
        }
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn offsets(&self) -> &[(i64, i64)] {
        &self.offsets
    }

    /// Largest |offset| component, used to check against feature-map extents.
    pub fn reach(&self) -> (u64, u64) {
        let dx = self.offsets.iter().map(|o| o.0.unsigned_abs()).max().unwrap_or(0);
        let dy = self.offsets.iter().map(|o| o.1.unsigned_abs()).max().unwrap_or(0);
        (dx, dy)
    }
}

impl Default for Topology {
    fn default() -> Self {
        Self::moore()
    }
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (x, y)) in self.offsets.iter().enumerate() {
            if i > 0 {
                f.write_str(";")?;
            }
            write!(f, "({x},{y})")?;
        }
        Ok(())
    }
}

/// Parses `"(1,0);(-1,0);..."`. Whitespace around tokens is ignored.
impl FromStr for Topology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut offsets = Vec::new();
        for part in s.split(';') {
            let part = part.trim();
            if part.is_empty() {
                continue;
            }
            let inner = part
                .strip_prefix('(')
                .and_then(|p| p.strip_suffix(')'))
                .ok_or_else(|| Error::Config(format!("topology entry {part:?} is not \"(x,y)\"")))?;
            let (x, y) = inner
                .split_once(',')
                .ok_or_else(|| Error::Config(format!("topology entry {part:?} needs two integers")))?;
            let parse = |t: &str| {
                t.trim()
                    .parse::<i64>()
                    .map_err(|e| Error::Config(format!("topology entry {part:?}: {e}")))
            };
            offsets.push((parse(x)?, parse(y)?));
        }
        Topology::new(offsets)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let t = Topology::moore();
        let s = t.to_string();
        assert_eq!(s, "(1,0);(-1,0);(0,1);(0,-1);(1,1);(1,-1);(-1,1);(-1,-1)");
        assert_eq!(s.parse::<Topology>().unwrap(), t);
        assert_eq!(" ( 2 , -3 ) ; (0,0) ".parse::<Topology>().unwrap().offsets(), &[(2, -3), (0, 0)]);
    }

    #[test]
    fn rejects_bad_text() {
        for bad in ["", "(1,0);(1,0)", "(1;0)", "1,0", "(a,0)", "(1,0,2)"] {
            assert!(bad.parse::<Topology>().is_err(), "{bad}");
        }
    }
}
