//! Zero-field triplet sublevels and the three microwave transitions between them.

use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sublevel {
    X,
    Y,
    Z,
}

impl Sublevel {
    pub const ALL: [Sublevel; 3] = [Sublevel::X, Sublevel::Y, Sublevel::Z];

    pub fn index(self) -> usize {
        match self {
            Sublevel::X => 0,
            Sublevel::Y => 1,
            Sublevel::Z => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

/// A microwave transition, identified by the unordered pair of sublevels it connects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Transition {
    #[serde(rename = "xy")]
    XY,
    #[serde(rename = "xz")]
    XZ,
    #[serde(rename = "yz")]
    YZ,
}

impl Transition {
    pub const ALL: [Transition; 3] = [Transition::XY, Transition::XZ, Transition::YZ];

    pub fn sublevels(self) -> (Sublevel, Sublevel) {
        match self {
            Transition::XY => (Sublevel::X, Sublevel::Y),
            Transition::XZ => (Sublevel::X, Sublevel::Z),
            Transition::YZ => (Sublevel::Y, Sublevel::Z),
        }
    }

    pub fn between(a: Sublevel, b: Sublevel) -> Option<Self> {
        match (a.min(b), a.max(b)) {
            (Sublevel::X, Sublevel::Y) => Some(Transition::XY),
            (Sublevel::X, Sublevel::Z) => Some(Transition::XZ),
            (Sublevel::Y, Sublevel::Z) => Some(Transition::YZ),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Transition::XY => 0,
            Transition::XZ => 1,
            Transition::YZ => 2,
        }
    }

    /// The short label used in file names and CSV metadata.
    pub fn label(self) -> &'static str {
        match self {
            Transition::XY => "xy",
            Transition::XZ => "xz",
            Transition::YZ => "yz",
        }
    }
}

impl fmt::Display for Transition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (a, b) = self.sublevels();
        write!(f, "T{:?}<->T{:?}", a, b)
    }
}
