//! PRO relay selection: candidate filtering, variance-weighted utilities,
//! candidate-set trimming, priority timers, and the per-packet forwarding
//! state machine.
//!
//! Each candidate relay carries two predicted probabilities: SINR above
//! threshold and queue within capacity. The sample variances of the two
//! probability lists weight the per-candidate utility
//! `U = v_sinr * p_sinr + v_q * p_queue`, so whichever prediction spreads
//! the candidates further dominates the ranking. Priorities follow utility
//! order; relay `i` arms a forwarding timer of `(i - 1) * T` and cancels it
//! when it overhears a higher-priority forward of the same packet.

use crate::mobility::Point;

/// Predicted per-candidate probabilities gathered by the sender.
#[derive(Debug, Clone, Copy)]
pub struct LinkForecast {
    pub relay_id: usize,
    /// Probability the relay is still within range after the lookahead.
    pub p_link: f64,
    /// Probability its SINR clears the threshold after the lookahead.
    pub p_sinr: f64,
    /// Probability its queue stays within capacity after the lookahead.
    pub p_queue: f64,
}

/// One relay in an ordered candidate set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateEntry {
    pub relay_id: usize,
    pub utility: f64,
    /// Rank within the set, starting at 1.
    pub priority: usize,
    /// Per-relay delivery probability used for set trimming.
    pub p_deliver: f64,
}

/// Relay-selection parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoutingConfig {
    /// Delivery-probability target for the candidate set.
    pub p_opp_threshold: f64,
    /// Priority timer step T, seconds.
    pub timer: f64,
    /// Utilities closer than this are tied (broken by relay id).
    pub tie_epsilon: f64,
}

impl Default for RoutingConfig {
    fn default() -> Self {
        RoutingConfig {
            p_opp_threshold: 0.99,
            timer: 0.045,
            tie_epsilon: 1e-12,
        }
    }
}

/// Neighbor-table view used for candidate filtering: last beaconed
/// position and velocity.
#[derive(Debug, Clone, Copy)]
pub struct NeighborView {
    pub id: usize,
    pub position: Point,
    pub velocity: Point,
}

/// Filters `neighbors` down to geographic candidates: strictly closer to
/// the destination than the sender and moving toward it (a non-increasing
/// distance rate; stationary counts as toward). The destination itself
/// always qualifies.
pub fn build_candidate_set(
    sender_pos: Point,
    dest_id: usize,
    dest_pos: Point,
    neighbors: &[NeighborView],
) -> Vec<usize> {
    let sender_dist = sender_pos.distance(dest_pos);
    neighbors
        .iter()
        .filter(|n| {
            if n.id == dest_id {
                return true;
            }
            let d = n.position.distance(dest_pos);
            if d >= sender_dist {
                return false;
            }
            let axis = dest_pos.sub(n.position);
            let norm = axis.norm();
            if norm == 0.0 {
                return true;
            }
            // Rate of change of the distance to the destination.
            let receding_rate = -n.velocity.dot(axis.scale(1.0 / norm));
            receding_rate <= 0.0
        })
        .map(|n| n.id)
        .collect()
}

/// Sample variance (n - 1 divisor); zero for fewer than two values.
pub fn sample_variance(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
}

/// Delivery probability of one relay: both the SINR and the queue
/// condition must hold for a successful handoff.
pub fn delivery_probability(forecast: &LinkForecast) -> f64 {
    (forecast.p_sinr * forecast.p_queue).clamp(0.0, 1.0)
}

/// Scores and ranks the candidates.
///
/// Utilities are the variance-weighted sums of the two predictions; with a
/// single candidate both variances vanish, so its utility falls back to
/// the unweighted mean of the two probabilities. Entries come back sorted
/// by descending utility (ties to the lower relay id) with priorities
/// `1..=k` and the per-relay delivery probability attached.
pub fn compute_utilities(forecasts: &[LinkForecast]) -> Vec<CandidateEntry> {
    compute_utilities_with(forecasts, &RoutingConfig::default())
}

pub fn compute_utilities_with(
    forecasts: &[LinkForecast],
    cfg: &RoutingConfig,
) -> Vec<CandidateEntry> {
    assert!(!forecasts.is_empty(), "candidate list must be non-empty");
    let p_sinr: Vec<f64> = forecasts.iter().map(|f| f.p_sinr).collect();
    let p_queue: Vec<f64> = forecasts.iter().map(|f| f.p_queue).collect();
    let v_sinr = sample_variance(&p_sinr);
    let v_q = sample_variance(&p_queue);
    let single = forecasts.len() == 1;

    let mut entries: Vec<CandidateEntry> = forecasts
        .iter()
        .map(|f| {
            let utility = if single {
                0.5 * (f.p_sinr + f.p_queue)
            } else {
                v_sinr * f.p_sinr + v_q * f.p_queue
            };
            CandidateEntry {
                relay_id: f.relay_id,
                utility,
                priority: 0,
                p_deliver: delivery_probability(f),
            }
        })
        .collect();

    entries.sort_by(|a, b| {
        if (a.utility - b.utility).abs() <= cfg.tie_epsilon {
            a.relay_id.cmp(&b.relay_id)
        } else {
            b.utility.partial_cmp(&a.utility).unwrap()
        }
    });
    for (i, e) in entries.iter_mut().enumerate() {
        e.priority = i + 1;
    }
    entries
}

/// Ratio of the larger to the smaller prediction variance.
#[derive(Debug, Clone, Copy)]
pub struct ResolutionRatio {
    pub ratio: f64,
    /// Set when at least one variance is zero and the ratio is by
    /// convention.
    pub degenerate: bool,
}

/// How far apart the two prediction variances are: `max / min`, 1 when
/// equal. A zero variance makes the ratio degenerate (1 if both are zero).
pub fn resolution_ratio(v_sinr: f64, v_q: f64) -> ResolutionRatio {
    if v_sinr == v_q {
        return ResolutionRatio {
            ratio: 1.0,
            degenerate: v_sinr == 0.0,
        };
    }
    let (hi, lo) = if v_sinr > v_q {
        (v_sinr, v_q)
    } else {
        (v_q, v_sinr)
    };
    if lo == 0.0 {
        ResolutionRatio {
            ratio: f64::INFINITY,
            degenerate: true,
        }
    } else {
        ResolutionRatio {
            ratio: hi / lo,
            degenerate: false,
        }
    }
}

/// Combined delivery probability of an ordered candidate set: at least one
/// relay receives.
pub fn set_delivery_probability(entries: &[CandidateEntry]) -> f64 {
    1.0 - entries.iter().map(|e| 1.0 - e.p_deliver).product::<f64>()
}

/// Keeps the shortest priority prefix whose combined delivery probability
/// reaches the threshold; when no prefix reaches it, the whole set stays.
pub fn optimize_candidate_set(
    mut entries: Vec<CandidateEntry>,
    cfg: &RoutingConfig,
) -> Vec<CandidateEntry> {
    debug_assert!(entries.windows(2).all(|w| w[0].priority < w[1].priority));
    let mut miss = 1.0;
    for (i, e) in entries.iter().enumerate() {
        miss *= 1.0 - e.p_deliver;
        if 1.0 - miss >= cfg.p_opp_threshold {
            entries.truncate(i + 1);
            return entries;
        }
    }
    entries
}

/// Forwarding delay for priority `i`: `(i - 1) * T`.
pub fn forwarding_timer(priority: usize, cfg: &RoutingConfig) -> f64 {
    assert!(priority >= 1, "priorities start at 1");
    (priority - 1) as f64 * cfg.timer
}

/// Lifecycle of one packet at one relay.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardingStatus {
    /// Timer armed, waiting to forward.
    Armed,
    /// Timer fired; this relay committed to forwarding.
    Forwarded,
    /// A peer's forward was overheard before the deadline.
    Cancelled,
    /// Received but not in the candidate list.
    Dropped,
}

/// Per-packet forwarding record held by a relay.
#[derive(Debug, Clone, Copy)]
pub struct ForwardingState {
    pub packet_id: u64,
    pub priority: usize,
    pub deadline: f64,
    pub status: ForwardingStatus,
}

/// Inputs to the per-packet state machine.
#[derive(Debug, Clone, Copy)]
pub enum PacketEvent {
    /// The packet arrived; `priority` is this node's slot in the stamped
    /// candidate list, if any.
    Received { priority: Option<usize>, now: f64 },
    TimerFired,
    OverheardForward,
}

/// What the caller should do after feeding an event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardAction {
    /// Schedule a timer for the returned deadline.
    Arm,
    /// Discard the packet; this node is not a relay for it.
    Drop,
    /// Forward the packet now.
    Forward,
    /// Cancel the pending timer and purge the packet.
    Cancel,
    /// Duplicate or stale event; nothing to do.
    Ignore,
}

/// Advances the relay's per-packet state.
///
/// `slot` is the node's record for this packet id (`None` on first
/// contact). A duplicate reception while armed keeps the earliest state,
/// and a node that has forwarded the packet never re-engages; a node that
/// merely discarded it (unlisted) or stood down (cancelled) may be drafted
/// again by a later hop's candidate list. Timer events after a
/// cancellation are stale and ignored.
pub fn on_packet_event(
    slot: &mut Option<ForwardingState>,
    packet_id: u64,
    event: PacketEvent,
    cfg: &RoutingConfig,
) -> ForwardAction {
    match event {
        PacketEvent::Received { priority, now } => {
            let can_engage = match slot {
                None => true,
                Some(state) => matches!(
                    state.status,
                    ForwardingStatus::Dropped | ForwardingStatus::Cancelled
                ),
            };
            if !can_engage {
                return ForwardAction::Ignore;
            }
            match priority {
                Some(p) => {
                    *slot = Some(ForwardingState {
                        packet_id,
                        priority: p,
                        deadline: now + forwarding_timer(p, cfg),
                        status: ForwardingStatus::Armed,
                    });
                    ForwardAction::Arm
                }
                None => {
                    if slot.is_none() {
                        *slot = Some(ForwardingState {
                            packet_id,
                            priority: 0,
                            deadline: now,
                            status: ForwardingStatus::Dropped,
                        });
                    }
                    ForwardAction::Drop
                }
            }
        }
        PacketEvent::TimerFired => match slot {
            Some(state) if state.status == ForwardingStatus::Armed => {
                state.status = ForwardingStatus::Forwarded;
                ForwardAction::Forward
            }
            _ => ForwardAction::Ignore,
        },
        PacketEvent::OverheardForward => match slot {
            Some(state) if state.status == ForwardingStatus::Armed => {
                state.status = ForwardingStatus::Cancelled;
                ForwardAction::Cancel
            }
            _ => ForwardAction::Ignore,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table1_forecasts() -> Vec<LinkForecast> {
        let p_sinr = [0.11, 0.34, 0.67, 0.49];
        let p_queue = [0.81, 0.83, 0.815, 0.824];
        (0..4)
            .map(|i| LinkForecast {
                relay_id: i + 1,
                p_link: 1.0,
                p_sinr: p_sinr[i],
                p_queue: p_queue[i],
            })
            .collect()
    }

    #[test]
    fn worked_example_variances() {
        let f = table1_forecasts();
        let v_sinr = sample_variance(&f.iter().map(|x| x.p_sinr).collect::<Vec<_>>());
        let v_q = sample_variance(&f.iter().map(|x| x.p_queue).collect::<Vec<_>>());
        assert!((v_sinr - 0.056).abs() < 0.001, "v_sinr = {v_sinr}");
        assert!((v_q - 8.2e-5).abs() < 0.3e-5, "v_q = {v_q}");
    }

    #[test]
    fn worked_example_utility_order() {
        let entries = compute_utilities(&table1_forecasts());
        let order: Vec<usize> = entries.iter().map(|e| e.relay_id).collect();
        assert_eq!(order, vec![3, 4, 2, 1]);
        assert!((entries[0].utility - 0.0376).abs() < 5e-4);
        assert!((entries[1].utility - 0.0275).abs() < 5e-4);
        assert_eq!(
            entries.iter().map(|e| e.priority).collect::<Vec<_>>(),
            vec![1, 2, 3, 4]
        );
    }

    #[test]
    fn identical_forecasts_tie_by_id() {
        let forecasts: Vec<LinkForecast> = [3usize, 1, 2]
            .iter()
            .map(|&id| LinkForecast {
                relay_id: id,
                p_link: 1.0,
                p_sinr: 0.5,
                p_queue: 0.7,
            })
            .collect();
        let entries = compute_utilities(&forecasts);
        let order: Vec<usize> = entries.iter().map(|e| e.relay_id).collect();
        assert_eq!(order, vec![1, 2, 3]);
    }

    #[test]
    fn single_candidate_uses_mean_fallback() {
        let entries = compute_utilities(&[LinkForecast {
            relay_id: 9,
            p_link: 1.0,
            p_sinr: 0.6,
            p_queue: 0.8,
        }]);
        assert_eq!(entries.len(), 1);
        assert!((entries[0].utility - 0.7).abs() < 1e-12);
        assert_eq!(entries[0].priority, 1);
    }

    #[test]
    fn utility_order_invariant_under_queue_shift() {
        let base = table1_forecasts();
        let shifted: Vec<LinkForecast> = base
            .iter()
            .map(|f| LinkForecast {
                p_queue: f.p_queue + 0.05,
                ..*f
            })
            .collect();
        let a: Vec<usize> = compute_utilities(&base).iter().map(|e| e.relay_id).collect();
        let b: Vec<usize> = compute_utilities(&shifted)
            .iter()
            .map(|e| e.relay_id)
            .collect();
        assert_eq!(a, b);
    }

    #[test]
    fn utility_symmetric_under_list_swap() {
        let base = table1_forecasts();
        let swapped: Vec<LinkForecast> = base
            .iter()
            .map(|f| LinkForecast {
                p_sinr: f.p_queue,
                p_queue: f.p_sinr,
                ..*f
            })
            .collect();
        let a = compute_utilities(&base);
        let b = compute_utilities(&swapped);
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.relay_id, y.relay_id);
            assert!((x.utility - y.utility).abs() < 1e-12);
        }
    }

    #[test]
    fn resolution_ratio_cases() {
        assert_eq!(resolution_ratio(0.3, 0.3).ratio, 1.0);
        assert!(!resolution_ratio(0.3, 0.3).degenerate);
        let r = resolution_ratio(0.056, 8.2e-5);
        assert!((r.ratio - 683.0).abs() < 0.5, "ratio = {}", r.ratio);
        let d = resolution_ratio(0.0, 0.4);
        assert!(d.degenerate && d.ratio.is_infinite());
        let z = resolution_ratio(0.0, 0.0);
        assert!(z.degenerate && z.ratio == 1.0);
    }

    fn entries(ps: &[f64]) -> Vec<CandidateEntry> {
        ps.iter()
            .enumerate()
            .map(|(i, &p)| CandidateEntry {
                relay_id: i,
                utility: 1.0 - i as f64,
                priority: i + 1,
                p_deliver: p,
            })
            .collect()
    }

    #[test]
    fn optimize_keeps_single_sufficient_entry() {
        let cfg = RoutingConfig {
            p_opp_threshold: 0.6,
            ..Default::default()
        };
        let out = optimize_candidate_set(entries(&[0.7]), &cfg);
        assert_eq!(out.len(), 1);
    }

    #[test]
    fn optimize_finds_minimal_prefix() {
        let cfg = RoutingConfig {
            p_opp_threshold: 0.95,
            ..Default::default()
        };
        let out = optimize_candidate_set(entries(&[0.9, 0.8, 0.7]), &cfg);
        assert_eq!(out.len(), 2); // 1 - 0.1 * 0.2 = 0.98
        assert!((set_delivery_probability(&out) - 0.98).abs() < 1e-12);
    }

    #[test]
    fn optimize_keeps_all_when_threshold_unreachable() {
        let cfg = RoutingConfig {
            p_opp_threshold: 0.9,
            ..Default::default()
        };
        let out = optimize_candidate_set(entries(&[0.5, 0.5]), &cfg);
        assert_eq!(out.len(), 2); // 0.75 < 0.9, keep everything
    }

    #[test]
    fn timer_values() {
        let cfg = RoutingConfig::default();
        assert_eq!(forwarding_timer(1, &cfg), 0.0);
        assert!((forwarding_timer(3, &cfg) - 0.090).abs() < 1e-12);
        let custom = RoutingConfig {
            timer: 0.2,
            ..Default::default()
        };
        assert_eq!(forwarding_timer(1, &custom), 0.0);
    }

    #[test]
    fn delivery_probability_product() {
        let f = |s, q| LinkForecast {
            relay_id: 0,
            p_link: 1.0,
            p_sinr: s,
            p_queue: q,
        };
        assert_eq!(delivery_probability(&f(1.0, 1.0)), 1.0);
        assert!((delivery_probability(&f(0.67, 0.815)) - 0.54605).abs() < 1e-5);
        assert_eq!(delivery_probability(&f(0.0, 0.9)), 0.0);
    }

    #[test]
    fn candidate_filter_matches_brute_force() {
        let sender = Point::new(500.0, 500.0);
        let dest = Point::new(1500.0, 500.0);
        let neighbors = vec![
            // closer, approaching
            NeighborView { id: 1, position: Point::new(700.0, 500.0), velocity: Point::new(10.0, 0.0) },
            // closer, receding
            NeighborView { id: 2, position: Point::new(800.0, 500.0), velocity: Point::new(-10.0, 0.0) },
            // farther
            NeighborView { id: 3, position: Point::new(300.0, 500.0), velocity: Point::new(10.0, 0.0) },
            // closer, stationary (counts as toward)
            NeighborView { id: 4, position: Point::new(900.0, 500.0), velocity: Point::new(0.0, 0.0) },
            // equidistant (not strictly closer)
            NeighborView { id: 5, position: Point::new(500.0, 500.0), velocity: Point::new(10.0, 0.0) },
            // closer, sideways: zero instantaneous distance rate counts as toward
            NeighborView { id: 6, position: Point::new(1000.0, 500.0), velocity: Point::new(0.0, 15.0) },
            // closer, pulling away on the diagonal
            NeighborView { id: 7, position: Point::new(1000.0, 600.0), velocity: Point::new(-10.0, 10.0) },
        ];
        let ids = build_candidate_set(sender, 99, dest, &neighbors);
        assert_eq!(ids, vec![1, 4, 6]);
    }

    #[test]
    fn candidate_filter_trivial_cases() {
        let sender = Point::new(0.0, 0.0);
        let dest = Point::new(100.0, 0.0);
        assert!(build_candidate_set(sender, 9, dest, &[]).is_empty());
        let one = vec![NeighborView {
            id: 1,
            position: Point::new(50.0, 0.0),
            velocity: Point::new(5.0, 0.0),
        }];
        assert_eq!(build_candidate_set(sender, 9, dest, &one), vec![1]);
    }

    #[test]
    fn destination_always_qualifies() {
        let sender = Point::new(0.0, 0.0);
        let dest = Point::new(100.0, 0.0);
        // Destination moving away fast: still a candidate.
        let n = vec![NeighborView {
            id: 7,
            position: Point::new(100.0, 0.0),
            velocity: Point::new(50.0, 0.0),
        }];
        assert_eq!(build_candidate_set(sender, 7, dest, &n), vec![7]);
    }

    #[test]
    fn state_machine_priority_one_forwards_immediately() {
        let cfg = RoutingConfig::default();
        let mut slot = None;
        let a = on_packet_event(
            &mut slot,
            1,
            PacketEvent::Received { priority: Some(1), now: 10.0 },
            &cfg,
        );
        assert_eq!(a, ForwardAction::Arm);
        assert_eq!(slot.unwrap().deadline, 10.0);
        let a = on_packet_event(&mut slot, 1, PacketEvent::TimerFired, &cfg);
        assert_eq!(a, ForwardAction::Forward);
    }

    #[test]
    fn state_machine_overheard_cancels() {
        let cfg = RoutingConfig::default();
        let mut slot = None;
        on_packet_event(
            &mut slot,
            1,
            PacketEvent::Received { priority: Some(2), now: 0.0 },
            &cfg,
        );
        assert!((slot.unwrap().deadline - 0.045).abs() < 1e-12);
        let a = on_packet_event(&mut slot, 1, PacketEvent::OverheardForward, &cfg);
        assert_eq!(a, ForwardAction::Cancel);
        // Stale timer event after cancellation.
        let a = on_packet_event(&mut slot, 1, PacketEvent::TimerFired, &cfg);
        assert_eq!(a, ForwardAction::Ignore);
    }

    #[test]
    fn state_machine_not_listed_drops() {
        let cfg = RoutingConfig::default();
        let mut slot = None;
        let a = on_packet_event(
            &mut slot,
            1,
            PacketEvent::Received { priority: None, now: 0.0 },
            &cfg,
        );
        assert_eq!(a, ForwardAction::Drop);
        // Duplicate receive is idempotent.
        let a = on_packet_event(
            &mut slot,
            1,
            PacketEvent::Received { priority: Some(1), now: 1.0 },
            &cfg,
        );
        assert_eq!(a, ForwardAction::Ignore);
    }

    #[test]
    fn state_machine_missed_priority_one() {
        // Priority 2 received, priority 1 did not: priority 2 fires at T.
        let cfg = RoutingConfig::default();
        let mut slot2 = None;
        on_packet_event(
            &mut slot2,
            5,
            PacketEvent::Received { priority: Some(2), now: 0.0 },
            &cfg,
        );
        let deadline = slot2.unwrap().deadline;
        assert!((deadline - 0.045).abs() < 1e-12);
        let a = on_packet_event(&mut slot2, 5, PacketEvent::TimerFired, &cfg);
        assert_eq!(a, ForwardAction::Forward);
    }
}
