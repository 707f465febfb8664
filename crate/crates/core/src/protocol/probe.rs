//! Echo probes: the server stamps a ping, the client echoes it verbatim, and
//! half the round trip is taken as the one-way latency. Both timestamps come
//! from the server clock, so no clock synchronisation is needed.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum ProbeError {
    #[error("echo received at {t_rx_ns} ns before it was sent at {t_tx_ns} ns")]
    NegativeInterval { t_tx_ns: u64, t_rx_ns: u64 },
}

/// One-way latency estimate, ns. Integer division of the round trip.
pub fn resolve_probe(t_tx_ns: u64, t_rx_ns: u64) -> Result<u64, ProbeError> {
    t_rx_ns
        .checked_sub(t_tx_ns)
        .map(|rtt| rtt / 2)
        .ok_or(ProbeError::NegativeInterval { t_tx_ns, t_rx_ns })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatencyProbe {
    pub id: u64,
    pub t_tx_ns: u64,
    pub t_rx_ns: u64,
}

impl LatencyProbe {
    pub fn new(id: u64, t_tx_ns: u64, t_rx_ns: u64) -> Result<Self, ProbeError> {
        resolve_probe(t_tx_ns, t_rx_ns)?;
        Ok(Self { id, t_tx_ns, t_rx_ns })
    }

    pub fn one_way_ns(&self) -> u64 {
        (self.t_rx_ns - self.t_tx_ns) / 2
    }

    pub fn one_way_ms(&self) -> f64 {
        self.one_way_ns() as f64 / 1e6
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halves_round_trip() {
        assert_eq!(resolve_probe(1_000, 1_000 + 84_000_000), Ok(42_000_000));
        assert_eq!(resolve_probe(5, 5), Ok(0));
        assert_eq!(resolve_probe(0, 3), Ok(1));
        assert_eq!(
            resolve_probe(10, 9),
            Err(ProbeError::NegativeInterval {
                t_tx_ns: 10,
                t_rx_ns: 9
            })
        );
        assert!(LatencyProbe::new(1, 10, 9).is_err());
        assert_eq!(LatencyProbe::new(1, 0, 20_000_000).unwrap().one_way_ms(), 10.0);
    }
}
