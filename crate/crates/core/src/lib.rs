//! Deterministic discrete-event simulator of a software-defined low-power
//! mesh: an SDN control plane layered over RPL on 802.15.4-class radios.
//!
//! The crate is organised as a stack. [`wire`] defines the byte-accurate
//! control-plane messages and source-route headers, [`flowtable`] the
//! two-tier flowtable nodes match frames against, [`rpl`] a minimal
//! non-storing RPL, [`sim`] the event queue, radio medium and low-power
//! listening MAC, [`node`] and [`controller`] the per-node SDN engine and
//! the root-side controller, and [`runner`] wires everything into a run.
//! [`config`] parses scenario files and [`metrics`] turns event logs into
//! reports and CSV files.
//!
//! Every run is a pure function of (scenario, seed): identical inputs give
//! byte-identical logs and CSV output.

pub mod config;
pub mod controller;
pub mod flowtable;
pub mod metrics;
pub mod node;
pub mod rng;
pub mod rpl;
pub mod runner;
pub mod sim;
pub mod wire;

/// Node address. 0 is reserved for "unassigned" and never appears on the
/// wire as a source or destination.
pub type NodeId = u16;

/// Simulation time and durations, in whole microseconds.
pub type Micros = u64;

pub const NODE_UNASSIGNED: NodeId = 0;

/// Link-local broadcast pseudo-address (DIO/DIS only, never routed).
pub const NODE_BROADCAST: NodeId = 0xFFFF;

pub const MICROS_PER_SEC: Micros = 1_000_000;

/// Whole-second formatting helper used by every CSV writer: microseconds
/// rendered as seconds with exactly six decimals, no float round-trip.
pub fn secs6(t: Micros) -> String {
    format!("{}.{:06}", t / MICROS_PER_SEC, t % MICROS_PER_SEC)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn secs6_is_exact() {
        assert_eq!(secs6(0), "0.000000");
        assert_eq!(secs6(1), "0.000001");
        assert_eq!(secs6(1_500_000), "1.500000");
        assert_eq!(secs6(3_600_000_001), "3600.000001");
    }
}
