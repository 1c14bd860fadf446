//! Per-packet fate accounting and run metrics.
//!
//! Opportunistic forwarding can duplicate a packet across relays, so loss
//! accounting tracks *fates* per packet id rather than per copy: a packet
//! is delivered the first time the destination decodes any copy, dropped
//! when its last live copy disappears undelivered, and in flight
//! otherwise. This makes flow conservation
//! (`generated = delivered + drops + in_flight`) structural.

/// Why a packet copy (and possibly the whole packet) was destroyed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropCause {
    QueueOverflow,
    SinrFail,
    Void,
    HopLimit,
    Ttl,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Fate {
    InFlight,
    Delivered { at: f64 },
    Dropped(DropCause),
}

#[derive(Debug, Clone)]
struct PacketStats {
    copies: u32,
    fate: Fate,
    created_at: f64,
    last_cause: Option<DropCause>,
}

/// Tracks every generated packet's copies and final fate.
#[derive(Debug, Default, Clone)]
pub struct PacketLedger {
    packets: Vec<PacketStats>,
}

impl PacketLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a new packet with one live copy; returns its id.
    pub fn on_generated(&mut self, created_at: f64) -> u64 {
        self.packets.push(PacketStats {
            copies: 1,
            fate: Fate::InFlight,
            created_at,
            last_cause: None,
        });
        (self.packets.len() - 1) as u64
    }

    /// A relay accepted a copy (armed a timer).
    pub fn on_copy_spawned(&mut self, id: u64) {
        self.packets[id as usize].copies += 1;
    }

    /// A copy disappeared. `cause` is `None` for benign suppression
    /// (overheard duplicate); a real cause is remembered so that the
    /// packet's fate is attributable if this was the last copy.
    pub fn on_copy_consumed(&mut self, id: u64, cause: Option<DropCause>) {
        let p = &mut self.packets[id as usize];
        debug_assert!(p.copies > 0, "consuming a copy of packet {id} with none live");
        p.copies = p.copies.saturating_sub(1);
        if let Some(c) = cause {
            p.last_cause = Some(c);
        }
        if p.copies == 0 && p.fate == Fate::InFlight {
            p.fate = Fate::Dropped(p.last_cause.unwrap_or(DropCause::SinrFail));
        }
    }

    /// The destination decoded a copy; only the first delivery counts.
    pub fn on_delivered(&mut self, id: u64, at: f64) {
        let p = &mut self.packets[id as usize];
        if p.fate == Fate::InFlight {
            p.fate = Fate::Delivered { at };
        }
    }

    pub fn generated(&self) -> u64 {
        self.packets.len() as u64
    }

    pub fn delivered(&self) -> u64 {
        self.packets
            .iter()
            .filter(|p| matches!(p.fate, Fate::Delivered { .. }))
            .count() as u64
    }

    pub fn drops(&self, cause: DropCause) -> u64 {
        self.packets
            .iter()
            .filter(|p| p.fate == Fate::Dropped(cause))
            .count() as u64
    }

    pub fn in_flight(&self) -> u64 {
        self.packets
            .iter()
            .filter(|p| p.fate == Fate::InFlight)
            .count() as u64
    }

    /// Mean end-to-end delay over delivered packets, in id order.
    pub fn mean_delay(&self) -> Option<f64> {
        let mut sum = 0.0;
        let mut n = 0u64;
        for p in &self.packets {
            if let Fate::Delivered { at } = p.fate {
                sum += at - p.created_at;
                n += 1;
            }
        }
        if n == 0 {
            None
        } else {
            Some(sum / n as f64)
        }
    }
}

/// Raw counters a finished run hands to [`collect_metrics`].
#[derive(Debug, Clone, Default)]
pub struct RunLog {
    pub ledger: PacketLedger,
    pub total_transmissions: u64,
    pub max_queue_seen: usize,
}

/// One result row: identification, ratios, and drop breakdown.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub scenario_id: String,
    pub algorithm: String,
    pub seed: u64,
    pub n_vehicles: usize,
    pub n_cbr_pairs: usize,
    pub generated: u64,
    pub delivered: u64,
    /// Delivered over generated; `None` when nothing was generated.
    pub pdr: Option<f64>,
    /// Mean end-to-end delay over delivered packets, seconds.
    pub avg_delay: Option<f64>,
    /// Delivered over total transmissions.
    pub throughput: Option<f64>,
    pub drop_queue_overflow: u64,
    pub drop_sinr_fail: u64,
    pub drop_void: u64,
    pub drop_hop_limit: u64,
    pub drop_ttl: u64,
    pub in_flight: u64,
    pub total_transmissions: u64,
    pub max_queue_seen: usize,
}

impl MetricsRecord {
    /// Flow conservation: every generated packet is accounted for.
    pub fn conserves_flow(&self) -> bool {
        self.generated
            == self.delivered
                + self.drop_queue_overflow
                + self.drop_sinr_fail
                + self.drop_void
                + self.drop_hop_limit
                + self.drop_ttl
                + self.in_flight
    }
}

/// Reduces a run log to its metrics row.
pub fn collect_metrics(
    log: &RunLog,
    scenario_id: &str,
    algorithm: &str,
    seed: u64,
    n_vehicles: usize,
    n_cbr_pairs: usize,
) -> MetricsRecord {
    let generated = log.ledger.generated();
    let delivered = log.ledger.delivered();
    let record = MetricsRecord {
        scenario_id: scenario_id.to_string(),
        algorithm: algorithm.to_string(),
        seed,
        n_vehicles,
        n_cbr_pairs,
        generated,
        delivered,
        pdr: if generated == 0 {
            None
        } else {
            Some(delivered as f64 / generated as f64)
        },
        avg_delay: log.ledger.mean_delay(),
        throughput: if log.total_transmissions == 0 {
            None
        } else {
            Some(delivered as f64 / log.total_transmissions as f64)
        },
        drop_queue_overflow: log.ledger.drops(DropCause::QueueOverflow),
        drop_sinr_fail: log.ledger.drops(DropCause::SinrFail),
        drop_void: log.ledger.drops(DropCause::Void),
        drop_hop_limit: log.ledger.drops(DropCause::HopLimit),
        drop_ttl: log.ledger.drops(DropCause::Ttl),
        in_flight: log.ledger.in_flight(),
        total_transmissions: log.total_transmissions,
        max_queue_seen: log.max_queue_seen,
    };
    debug_assert!(record.conserves_flow());
    record
}
