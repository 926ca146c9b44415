use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Whether the paragraph answers the question. Index 0 is unanswerable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Unanswerable = 0,
    Answerable = 1,
}

impl Label {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            Label::Unanswerable
        } else {
            Label::Answerable
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Label::Unanswerable => Label::Answerable,
            Label::Answerable => Label::Unanswerable,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Unanswerable => "unanswerable",
            Label::Answerable => "answerable",
        })
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "unanswerable" => Ok(Label::Unanswerable),
            "answerable" => Ok(Label::Answerable),
            other => Err(format!("unknown label `{other}`")),
        }
    }
}
