//! Small shared domain types.

use serde::{Deserialize, Serialize};
use std::fmt;

/// The two parties of the market. Side A users are recommended side B users
/// and vice versa.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Side {
    A,
    B,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::A => Side::B,
            Side::B => Side::A,
        }
    }

    /// Order the pair `(a, b)` given that `user` lives on `self` and
    /// `counterpart` on the opposite side.
    pub fn pair(self, user: u32, counterpart: u32) -> (u32, u32) {
        match self {
            Side::A => (user, counterpart),
            Side::B => (counterpart, user),
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Side::A => write!(f, "A"),
            Side::B => write!(f, "B"),
        }
    }
}

impl std::str::FromStr for Side {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "A" | "a" => Ok(Side::A),
            "B" | "b" => Ok(Side::B),
            other => Err(crate::Error::Validation(format!("unknown side {other:?}"))),
        }
    }
}
