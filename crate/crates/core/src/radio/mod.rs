//! Abstract cellular cell and the vehicle side channel.

pub mod link;
pub mod pf;
pub mod rach;
pub mod side_channel;

pub use link::{CellConfig, LinkModel, LinkState};
pub use pf::{Allocation, PfFlow, PfScheduler};
pub use rach::{RachConfig, RachOutcome};
pub use side_channel::SideChannel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    Ul,
    Dl,
}

impl Direction {
    pub const ALL: [Direction; 2] = [Direction::Ul, Direction::Dl];

    pub fn label(self) -> &'static str {
        match self {
            Direction::Ul => "UL",
            Direction::Dl => "DL",
        }
    }

    pub fn index(self) -> usize {
        match self {
            Direction::Ul => 0,
            Direction::Dl => 1,
        }
    }
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}
