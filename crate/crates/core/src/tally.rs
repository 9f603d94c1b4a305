use std::iter::Sum;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

/// Cycle and saturation counts accumulated by a datapath operation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Tally {
    pub cycles: u64,
    pub saturations: u64,
}

impl Tally {
    pub const fn cycles(cycles: u64) -> Self {
        Self {
            cycles,
            saturations: 0,
        }
    }

    #[inline]
    pub(crate) fn saturated(&mut self, sat: bool) {
        self.saturations += sat as u64;
    }
}

impl Add for Tally {
    type Output = Tally;

    fn add(self, rhs: Tally) -> Tally {
        Tally {
            cycles: self.cycles + rhs.cycles,
            saturations: self.saturations + rhs.saturations,
        }
    }
}

impl AddAssign for Tally {
    fn add_assign(&mut self, rhs: Tally) {
        self.cycles += rhs.cycles;
        self.saturations += rhs.saturations;
    }
}

impl Sum for Tally {
    fn sum<I: Iterator<Item = Tally>>(iter: I) -> Tally {
        iter.fold(Tally::default(), Add::add)
    }
}
