//! Comparison algorithms: greedy geographic forwarding and a
//! non-predictive opportunistic baseline.
//!
//! Both share the channel, queue, and MAC machinery of the engine; only
//! next-hop selection differs. The greedy baseline unicasts to the
//! neighbor closest to the destination; the ExOR-like baseline broadcasts
//! to the `k_max` closest such neighbors with distance-ordered priorities
//! and the same `(i - 1) * T` timers, without any prediction or
//! delivery-probability trimming.

use crate::mobility::Point;
use crate::routing::{CandidateEntry, NeighborView};

/// Which comparison algorithm a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    GreedyGeographic,
    ExorLike,
}

/// Neighbor strictly closer to the destination with minimal
/// distance-to-destination; `None` signals a routing void (ties broken by
/// lower id).
pub fn greedy_next_hop(
    sender_pos: Point,
    dest_pos: Point,
    neighbors: &[NeighborView],
) -> Option<usize> {
    let sender_dist = sender_pos.distance(dest_pos);
    neighbors
        .iter()
        .map(|n| (n.position.distance(dest_pos), n.id))
        .filter(|&(d, _)| d < sender_dist)
        .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)))
        .map(|(_, id)| id)
}

/// All strictly-closer neighbors, capped at `k_max`, prioritized by
/// ascending distance to the destination (ties by lower id).
pub fn exor_candidates(
    sender_pos: Point,
    dest_pos: Point,
    neighbors: &[NeighborView],
    k_max: usize,
) -> Vec<CandidateEntry> {
    let sender_dist = sender_pos.distance(dest_pos);
    let mut closer: Vec<(f64, usize)> = neighbors
        .iter()
        .map(|n| (n.position.distance(dest_pos), n.id))
        .filter(|&(d, _)| d < sender_dist)
        .collect();
    closer.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    closer
        .into_iter()
        .take(k_max)
        .enumerate()
        .map(|(i, (d, id))| CandidateEntry {
            relay_id: id,
            utility: -d,
            priority: i + 1,
            p_deliver: 1.0,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn view(id: usize, x: f64, y: f64) -> NeighborView {
        NeighborView {
            id,
            position: Point::new(x, y),
            velocity: Point::new(0.0, 0.0),
        }
    }

    #[test]
    fn greedy_void_when_no_closer_neighbor() {
        let sender = Point::new(0.0, 0.0);
        let dest = Point::new(100.0, 0.0);
        let neighbors = vec![view(1, -50.0, 0.0), view(2, 0.0, 120.0)];
        assert_eq!(greedy_next_hop(sender, dest, &neighbors), None);
        assert_eq!(greedy_next_hop(sender, dest, &[]), None);
    }

    #[test]
    fn greedy_picks_unique_closer_neighbor() {
        let sender = Point::new(0.0, 0.0);
        let dest = Point::new(100.0, 0.0);
        let neighbors = vec![view(1, 40.0, 0.0), view(2, -10.0, 0.0)];
        assert_eq!(greedy_next_hop(sender, dest, &neighbors), Some(1));
    }

    #[test]
    fn greedy_matches_brute_force_argmin() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let sender = Point::new(500.0, 500.0);
        let dest = Point::new(900.0, 100.0);
        for _ in 0..50 {
            let neighbors: Vec<NeighborView> = (0..10)
                .map(|id| {
                    view(
                        id,
                        rng.random_range(0.0..1000.0),
                        rng.random_range(0.0..1000.0),
                    )
                })
                .collect();
            let got = greedy_next_hop(sender, dest, &neighbors);
            let sender_dist = sender.distance(dest);
            let brute = neighbors
                .iter()
                .filter(|n| n.position.distance(dest) < sender_dist)
                .min_by(|a, b| {
                    a.position
                        .distance(dest)
                        .partial_cmp(&b.position.distance(dest))
                        .unwrap()
                        .then(a.id.cmp(&b.id))
                })
                .map(|n| n.id);
            assert_eq!(got, brute);
        }
    }

    #[test]
    fn exor_single_closer_neighbor_gets_priority_one() {
        let sender = Point::new(0.0, 0.0);
        let dest = Point::new(100.0, 0.0);
        let out = exor_candidates(sender, dest, &[view(4, 60.0, 0.0)], 4);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].relay_id, 4);
        assert_eq!(out[0].priority, 1);
    }

    #[test]
    fn exor_caps_and_orders_by_distance() {
        let sender = Point::new(0.0, 0.0);
        let dest = Point::new(100.0, 0.0);
        let neighbors = vec![
            view(1, 10.0, 0.0),
            view(2, 90.0, 0.0),
            view(3, 70.0, 0.0),
            view(4, 50.0, 0.0),
            view(5, 30.0, 0.0),
        ];
        let out = exor_candidates(sender, dest, &neighbors, 3);
        let ids: Vec<usize> = out.iter().map(|e| e.relay_id).collect();
        assert_eq!(ids, vec![2, 3, 4]);
        assert_eq!(
            out.iter().map(|e| e.priority).collect::<Vec<_>>(),
            vec![1, 2, 3]
        );
    }

    #[test]
    fn exor_equidistant_tie_prefers_lower_id() {
        let sender = Point::new(0.0, 0.0);
        let dest = Point::new(100.0, 0.0);
        let neighbors = vec![view(8, 50.0, 0.0), view(2, 150.0, 100.0), view(3, 50.0, 0.0)];
        let out = exor_candidates(sender, dest, &neighbors, 4);
        let ids: Vec<usize> = out.iter().map(|e| e.relay_id).collect();
        assert_eq!(ids, vec![3, 8]);
    }
}
