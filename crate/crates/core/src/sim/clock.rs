use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Global round index of slot `t` in episode `k`, both 1-based.
pub fn slot_to_round(k: usize, t: usize, s_max: usize) -> Result<usize> {
    if k == 0 {
        return Err(Error::OutOfRange { name: "episode", value: k as f64, min: 1.0, max: f64::INFINITY });
    }
    if t == 0 || t > s_max {
        return Err(Error::OutOfRange { name: "slot", value: t as f64, min: 1.0, max: s_max as f64 });
    }
    Ok((k - 1) * s_max + t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotClock {
    pub episode: usize,
    pub slot: usize,
    pub round: usize,
}

impl SlotClock {
    pub fn new(episode: usize, slot: usize, s_max: usize) -> Result<Self> {
        Ok(Self { episode, slot, round: slot_to_round(episode, slot, s_max)? })
    }

    /// Clock of the `i`-th slot (0-based) of a run.
    pub fn nth(i: usize, s_max: usize) -> Self {
        Self { episode: i / s_max + 1, slot: i % s_max + 1, round: i + 1 }
    }
}
