use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::StoreError;

/// One EF interval. Each end is either open or closed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassInterval {
    pub lo: f64,
    pub hi: f64,
    pub lo_closed: bool,
    pub hi_closed: bool,
}

impl ClassInterval {
    pub fn contains(&self, ef: f64) -> bool {
        let above = if self.lo_closed { ef >= self.lo } else { ef > self.lo };
        let below = if self.hi_closed { ef <= self.hi } else { ef < self.hi };
        above && below
    }
}

impl fmt::Display for ClassInterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}{},{}{}",
            if self.lo_closed { '[' } else { '(' },
            self.lo,
            self.hi,
            if self.hi_closed { ']' } else { ')' }
        )
    }
}

/// Ordered EF intervals that partition [0, 100] into clinical classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassBounds {
    intervals: Vec<ClassInterval>,
}

pub const EF_MIN: f64 = 0.0;
pub const EF_MAX: f64 = 100.0;

impl ClassBounds {
    /// Validates that the intervals are ordered, non-overlapping and jointly
    /// cover [0, 100] with every point in exactly one interval.
    pub fn new(intervals: Vec<ClassInterval>) -> Result<Self, StoreError> {
        let bad = |msg: String| Err(StoreError::Config(msg));
        if intervals.is_empty() {
            return bad("class bounds are empty".into());
        }
        for (i, iv) in intervals.iter().enumerate() {
            if !(iv.lo.is_finite() && iv.hi.is_finite()) {
                return bad(format!("interval {i} has a non-finite endpoint"));
            }
            if iv.lo > iv.hi || (iv.lo == iv.hi && !(iv.lo_closed && iv.hi_closed)) {
                return bad(format!("interval {i} ({iv}) is empty"));
            }
        }
        let first = intervals[0];
        if first.lo != EF_MIN || !first.lo_closed {
            return bad(format!("first interval must start at closed {EF_MIN}, got {first}"));
        }
        let last = intervals[intervals.len() - 1];
        if last.hi != EF_MAX || !last.hi_closed {
            return bad(format!("last interval must end at closed {EF_MAX}, got {last}"));
        }
        for (i, pair) in intervals.windows(2).enumerate() {
            let (a, b) = (pair[0], pair[1]);
            if a.hi != b.lo {
                return bad(format!("intervals {} and {} do not meet ({a} vs {b})", i, i + 1));
            }
            if a.hi_closed == b.lo_closed {
                let what = if a.hi_closed { "overlap" } else { "leave a gap" };
                return bad(format!("intervals {} and {} {what} at {}", i, i + 1, a.hi));
            }
        }
        Ok(Self { intervals })
    }

    pub fn intervals(&self) -> &[ClassInterval] {
        &self.intervals
    }

    pub fn class_count(&self) -> usize {
        self.intervals.len()
    }

    pub fn interval(&self, class: usize) -> Option<&ClassInterval> {
        self.intervals.get(class)
    }

    /// Maps an EF percentage to its class index.
    pub fn ef_to_class(&self, ef: f64) -> Result<usize, StoreError> {
        if !(EF_MIN..=EF_MAX).contains(&ef) {
            return Err(StoreError::Domain(format!("EF {ef} outside [{EF_MIN}, {EF_MAX}]")));
        }
        self.intervals
            .iter()
            .position(|iv| iv.contains(ef))
            .ok_or_else(|| StoreError::Config(format!("no class interval contains EF {ef}")))
    }
}

/// Severe, moderate, mild, normal and hyperdynamic:
/// `[0,30) [30,40) [40,50) [50,70] (70,100]`.
impl Default for ClassBounds {
    fn default() -> Self {
        let iv = |lo, hi, lo_closed, hi_closed| ClassInterval { lo, hi, lo_closed, hi_closed };
        Self {
            intervals: vec![
                iv(0.0, 30.0, true, false),
                iv(30.0, 40.0, true, false),
                iv(40.0, 50.0, true, false),
                iv(50.0, 70.0, true, true),
                iv(70.0, 100.0, false, true),
            ],
        }
    }
}

impl fmt::Display for ClassBounds {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, iv) in self.intervals.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{iv}")?;
        }
        Ok(())
    }
}

/// Parses whitespace-separated intervals such as `[0,30) [30,40) (40,100]`.
impl FromStr for ClassBounds {
    type Err = StoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut intervals = Vec::new();
        let mut rest = s.trim();
        while !rest.is_empty() {
            let open = rest.chars().next().unwrap();
            let lo_closed = match open {
                '[' => true,
                '(' => false,
                _ => return Err(StoreError::Config(format!("expected '[' or '(' in bounds at {rest:?}"))),
            };
            let end = rest
                .find([']', ')'])
                .ok_or_else(|| StoreError::Config(format!("unterminated interval in {rest:?}")))?;
            let hi_closed = rest.as_bytes()[end] == b']';
            let body = &rest[1..end];
            let (lo, hi) = body
                .split_once(',')
                .ok_or_else(|| StoreError::Config(format!("interval {body:?} needs two endpoints")))?;
            let num = |t: &str| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|_| StoreError::Config(format!("bad interval endpoint {t:?}")))
            };
            intervals.push(ClassInterval { lo: num(lo)?, hi: num(hi)?, lo_closed, hi_closed });
            rest = rest[end + 1..].trim_start_matches([' ', '\t', ';']).trim_start();
        }
        ClassBounds::new(intervals)
    }
}
