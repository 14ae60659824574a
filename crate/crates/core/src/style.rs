use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::Error;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Style {
    NonIrony,
    Irony,
}

impl Style {
    pub const ALL: [Style; 2] = [Style::NonIrony, Style::Irony];

    pub fn other(self) -> Style {
        match self {
            Style::NonIrony => Style::Irony,
            Style::Irony => Style::NonIrony,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Style::NonIrony => 0,
            Style::Irony => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Style::NonIrony => "non_irony",
            Style::Irony => "irony",
        }
    }
}

impl fmt::Display for Style {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Transfer direction, named by source and target style.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "n2i")]
    NonIronyToIrony,
    #[serde(rename = "i2n")]
    IronyToNonIrony,
}

impl Direction {
    pub fn source(self) -> Style {
        match self {
            Direction::NonIronyToIrony => Style::NonIrony,
            Direction::IronyToNonIrony => Style::Irony,
        }
    }

    pub fn target(self) -> Style {
        self.source().other()
    }

    pub fn from_source(source: Style) -> Self {
        match source {
            Style::NonIrony => Direction::NonIronyToIrony,
            Style::Irony => Direction::IronyToNonIrony,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::NonIronyToIrony => "n2i",
            Direction::IronyToNonIrony => "i2n",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "n2i" => Ok(Direction::NonIronyToIrony),
            "i2n" => Ok(Direction::IronyToNonIrony),
            other => Err(Error::InvalidInput(format!(
                "unknown direction `{other}` (expected n2i or i2n)"
            ))),
        }
    }
}
