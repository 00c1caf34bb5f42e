use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Ankle movement classes decoded from EMG.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Movement {
    Rest,
    Dorsiflexion,
    Plantarflexion,
    Inversion,
    Eversion,
}

impl Movement {
    pub const ALL: [Movement; 5] = [
        Movement::Rest,
        Movement::Dorsiflexion,
        Movement::Plantarflexion,
        Movement::Inversion,
        Movement::Eversion,
    ];

    /// The four active (non-rest) movements.
    pub const ACTIVE: [Movement; 4] = [
        Movement::Dorsiflexion,
        Movement::Plantarflexion,
        Movement::Inversion,
        Movement::Eversion,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_rest(self) -> bool {
        self == Movement::Rest
    }

    /// Index into per-movement tables that exclude rest.
    pub fn active_index(self) -> Option<usize> {
        match self {
            Movement::Rest => None,
            m => Some(m as usize - 1),
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            Movement::Rest => "rest",
            Movement::Dorsiflexion => "df",
            Movement::Plantarflexion => "pf",
            Movement::Inversion => "inv",
            Movement::Eversion => "ev",
        }
    }
}

impl fmt::Display for Movement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Movement::Rest => "rest",
            Movement::Dorsiflexion => "dorsiflexion",
            Movement::Plantarflexion => "plantarflexion",
            Movement::Inversion => "inversion",
            Movement::Eversion => "eversion",
        };
        f.write_str(name)
    }
}

impl FromStr for Movement {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "rest" => Ok(Movement::Rest),
            "dorsiflexion" | "df" => Ok(Movement::Dorsiflexion),
            "plantarflexion" | "pf" => Ok(Movement::Plantarflexion),
            "inversion" | "inv" | "i" => Ok(Movement::Inversion),
            "eversion" | "ev" | "e" => Ok(Movement::Eversion),
            other => Err(format!("unknown movement '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
}

impl Axis {
    pub fn component(self, pos: (f64, f64)) -> f64 {
        match self {
            Axis::X => pos.0,
            Axis::Y => pos.1,
        }
    }
}

/// Cursor movement directions on the 2D task plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Up,
    Down,
    Left,
    Right,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::Up,
        Direction::Down,
        Direction::Left,
        Direction::Right,
    ];

    pub fn axis(self) -> Axis {
        match self {
            Direction::Up | Direction::Down => Axis::Y,
            Direction::Left | Direction::Right => Axis::X,
        }
    }

    pub fn sign(self) -> f64 {
        match self {
            Direction::Up | Direction::Right => 1.0,
            Direction::Down | Direction::Left => -1.0,
        }
    }

    /// Unit vector of this direction.
    pub fn unit(self) -> (f64, f64) {
        match self.axis() {
            Axis::X => (self.sign(), 0.0),
            Axis::Y => (0.0, self.sign()),
        }
    }
}
