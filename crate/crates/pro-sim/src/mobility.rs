//! Road grid, vehicle kinematics, and distance/link forecasts.
//!
//! Vehicles move along axis-aligned road segments. Per step, each speed
//! receives a Wiener increment `sigma * sqrt(dt) * g` (g standard normal)
//! and is clamped to `[v_min, v_max]`; positions advance along the segment
//! and vehicles turn at intersections onto the currently unblocked road.
//!
//! The forecast functions are pure: given two kinematic snapshots they
//! return the Gaussian law of the distance change over a lookahead `dt`
//! (mean from the radial relative velocity, variance
//! `(sigma_i^2 + sigma_j^2) * dt^3`) and the probability that the pair is
//! still within communication range afterwards.

use crate::gaussian::GaussianSpec;
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

/// 2-D point/vector in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: Point) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }

    pub fn sub(&self, other: Point) -> Point {
        Point::new(self.x - other.x, self.y - other.y)
    }

    pub fn dot(&self, other: Point) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn norm(&self) -> f64 {
        self.dot(*self).sqrt()
    }

    pub fn scale(&self, k: f64) -> Point {
        Point::new(self.x * k, self.y * k)
    }

    pub fn add(&self, other: Point) -> Point {
        Point::new(self.x + other.x, self.y + other.y)
    }
}

/// Road orientation through an intersection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Horizontal,
    Vertical,
}

/// Axis-aligned road segment between two intersections.
#[derive(Debug, Clone, Copy)]
pub struct Segment {
    pub a: Point,
    pub b: Point,
    /// Intersection index at endpoint `a` / `b`.
    pub junction_a: usize,
    pub junction_b: usize,
}

impl Segment {
    pub fn length(&self) -> f64 {
        self.a.distance(self.b)
    }

    pub fn axis(&self) -> Axis {
        if (self.a.y - self.b.y).abs() < 1e-9 {
            Axis::Horizontal
        } else {
            Axis::Vertical
        }
    }

    /// Unit direction from `a` to `b`.
    pub fn direction(&self) -> Point {
        self.b.sub(self.a).scale(1.0 / self.length())
    }

    pub fn point_at(&self, offset: f64) -> Point {
        self.a.add(self.direction().scale(offset))
    }
}

/// A junction of road segments. Exactly one incident road (axis group of
/// segments) is unblocked at any time; the designation is re-drawn
/// periodically to emulate traffic lights.
#[derive(Debug, Clone)]
pub struct Intersection {
    pub position: Point,
    pub incident: Vec<usize>,
    pub unblocked: Axis,
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("segment {0} endpoint lies outside the simulation area")]
    EndpointOutsideArea(usize),
    #[error("road graph is not connected")]
    Disconnected,
    #[error("intersection {0} has no incident segment on its unblocked road")]
    BlockedEverywhere(usize),
}

/// Manhattan grid of road segments with per-intersection blocking state.
#[derive(Debug, Clone)]
pub struct RoadGraph {
    pub segments: Vec<Segment>,
    pub intersections: Vec<Intersection>,
    pub area: (f64, f64),
}

impl RoadGraph {
    /// Builds a grid with lines every `block_size` meters covering
    /// `width x height`. All intersections start with the horizontal road
    /// unblocked; call [`RoadGraph::redraw_unblocked`] to randomize.
    pub fn manhattan_grid(width: f64, height: f64, block_size: f64) -> Self {
        assert!(width > 0.0 && height > 0.0 && block_size > 0.0);
        let nx = (width / block_size).floor() as usize + 1;
        let ny = (height / block_size).floor() as usize + 1;
        let idx = |ix: usize, iy: usize| iy * nx + ix;

        let mut intersections: Vec<Intersection> = (0..nx * ny)
            .map(|k| Intersection {
                position: Point::new(
                    (k % nx) as f64 * block_size,
                    (k / nx) as f64 * block_size,
                ),
                incident: Vec::new(),
                unblocked: Axis::Horizontal,
            })
            .collect();

        let mut segments = Vec::new();
        for iy in 0..ny {
            for ix in 0..nx {
                let here = idx(ix, iy);
                if ix + 1 < nx {
                    let there = idx(ix + 1, iy);
                    segments.push(Segment {
                        a: intersections[here].position,
                        b: intersections[there].position,
                        junction_a: here,
                        junction_b: there,
                    });
                    let sid = segments.len() - 1;
                    intersections[here].incident.push(sid);
                    intersections[there].incident.push(sid);
                }
                if iy + 1 < ny {
                    let there = idx(ix, iy + 1);
                    segments.push(Segment {
                        a: intersections[here].position,
                        b: intersections[there].position,
                        junction_a: here,
                        junction_b: there,
                    });
                    let sid = segments.len() - 1;
                    intersections[here].incident.push(sid);
                    intersections[there].incident.push(sid);
                }
            }
        }

        RoadGraph {
            segments,
            intersections,
            area: (width, height),
        }
    }

    /// Re-draws the unblocked road uniformly at random at every
    /// intersection.
    pub fn redraw_unblocked<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for i in 0..self.intersections.len() {
            let axes: Vec<Axis> = {
                let inter = &self.intersections[i];
                let mut axes = Vec::with_capacity(2);
                if inter
                    .incident
                    .iter()
                    .any(|&s| self.segments[s].axis() == Axis::Horizontal)
                {
                    axes.push(Axis::Horizontal);
                }
                if inter
                    .incident
                    .iter()
                    .any(|&s| self.segments[s].axis() == Axis::Vertical)
                {
                    axes.push(Axis::Vertical);
                }
                axes
            };
            self.intersections[i].unblocked = *axes.choose(rng).expect("isolated intersection");
        }
    }

    pub fn total_length(&self) -> f64 {
        self.segments.iter().map(Segment::length).sum()
    }

    /// Checks the structural invariants: endpoints inside the area, every
    /// intersection's unblocked road actually present, and connectivity.
    pub fn validate(&self) -> Result<(), GraphError> {
        let (w, h) = self.area;
        for (i, s) in self.segments.iter().enumerate() {
            for p in [s.a, s.b] {
                if p.x < -1e-9 || p.y < -1e-9 || p.x > w + 1e-9 || p.y > h + 1e-9 {
                    return Err(GraphError::EndpointOutsideArea(i));
                }
            }
        }
        for (i, inter) in self.intersections.iter().enumerate() {
            let ok = inter
                .incident
                .iter()
                .any(|&s| self.segments[s].axis() == inter.unblocked);
            if !ok {
                return Err(GraphError::BlockedEverywhere(i));
            }
        }
        // Connectivity over intersections via incident segments.
        let n = self.intersections.len();
        if n > 0 {
            let mut seen = vec![false; n];
            let mut stack = vec![0usize];
            seen[0] = true;
            while let Some(i) = stack.pop() {
                for &sid in &self.intersections[i].incident {
                    let s = &self.segments[sid];
                    for j in [s.junction_a, s.junction_b] {
                        if !seen[j] {
                            seen[j] = true;
                            stack.push(j);
                        }
                    }
                }
            }
            if seen.iter().any(|&v| !v) {
                return Err(GraphError::Disconnected);
            }
        }
        Ok(())
    }
}

/// Mobility parameters. Speeds in m/s, distances in meters, `default_sigma`
/// in m*s^(-3/2).
#[derive(Debug, Clone, Copy)]
pub struct MobilityConfig {
    pub v_min: f64,
    pub v_max: f64,
    pub default_sigma: f64,
    /// Transmission range R in meters.
    pub range: f64,
    pub area: (f64, f64),
    pub block_size: f64,
}

impl Default for MobilityConfig {
    fn default() -> Self {
        MobilityConfig {
            v_min: 30.0 / 3.6,
            v_max: 60.0 / 3.6,
            default_sigma: 1.0,
            range: 250.0,
            area: (2000.0, 2000.0),
            block_size: 500.0,
        }
    }
}

/// One vehicle on the road graph.
#[derive(Debug, Clone, Copy)]
pub struct Vehicle {
    pub id: usize,
    pub segment: usize,
    /// Distance from the segment's `a` endpoint, in `[0, length]`.
    pub offset: f64,
    /// Heading from `a` toward `b` when true.
    pub forward: bool,
    pub speed: f64,
    /// Speed volatility in m*s^(-3/2).
    pub sigma: f64,
}

impl Vehicle {
    pub fn position(&self, graph: &RoadGraph) -> Point {
        graph.segments[self.segment].point_at(self.offset)
    }

    /// Unit heading vector.
    pub fn heading(&self, graph: &RoadGraph) -> Point {
        let d = graph.segments[self.segment].direction();
        if self.forward {
            d
        } else {
            d.scale(-1.0)
        }
    }

    pub fn velocity(&self, graph: &RoadGraph) -> Point {
        self.heading(graph).scale(self.speed)
    }

    pub fn kinematics(&self, graph: &RoadGraph) -> Kinematics {
        Kinematics {
            position: self.position(graph),
            velocity: self.velocity(graph),
            sigma: self.sigma,
        }
    }
}

/// Position/velocity/volatility snapshot used by the forecast functions;
/// built either from live vehicles or from received beacons.
#[derive(Debug, Clone, Copy)]
pub struct Kinematics {
    pub position: Point,
    pub velocity: Point,
    pub sigma: f64,
}

/// Places `n` vehicles uniformly over the total road length with uniform
/// initial speeds and random headings.
pub fn place_vehicles<R: Rng + ?Sized>(
    n: usize,
    graph: &RoadGraph,
    cfg: &MobilityConfig,
    rng: &mut R,
) -> Vec<Vehicle> {
    let total = graph.total_length();
    (0..n)
        .map(|id| {
            let mut at = rng.random::<f64>() * total;
            let mut segment = graph.segments.len() - 1;
            for (i, s) in graph.segments.iter().enumerate() {
                if at <= s.length() {
                    segment = i;
                    break;
                }
                at -= s.length();
            }
            let len = graph.segments[segment].length();
            Vehicle {
                id,
                segment,
                offset: at.min(len),
                forward: rng.random::<bool>(),
                speed: rng.random_range(cfg.v_min..=cfg.v_max),
                sigma: cfg.default_sigma,
            }
        })
        .collect()
}

/// Advances every vehicle by `dt` seconds: Wiener speed increment, clamp,
/// then positional advance with random turns at intersections.
pub fn step_vehicles<R: Rng + ?Sized>(
    vehicles: &mut [Vehicle],
    graph: &RoadGraph,
    cfg: &MobilityConfig,
    dt: f64,
    rng: &mut R,
) {
    assert!(dt > 0.0, "dt must be positive");
    let sqrt_dt = dt.sqrt();
    for v in vehicles.iter_mut() {
        if v.sigma > 0.0 {
            let g: f64 = rng.sample(StandardNormal);
            v.speed += v.sigma * sqrt_dt * g;
        }
        v.speed = v.speed.clamp(cfg.v_min, cfg.v_max);

        let mut remaining = v.speed * dt;
        // A vehicle can cross several intersections in one step only at
        // extreme dt; the loop handles it uniformly.
        while remaining > 0.0 {
            let seg = &graph.segments[v.segment];
            let to_end = if v.forward {
                seg.length() - v.offset
            } else {
                v.offset
            };
            if remaining < to_end {
                v.offset += if v.forward { remaining } else { -remaining };
                break;
            }
            remaining -= to_end;
            let junction = if v.forward {
                seg.junction_b
            } else {
                seg.junction_a
            };
            turn_at(v, junction, graph, rng);
        }
    }
}

/// Picks the next segment at `junction`: uniform among unblocked incident
/// segments excluding the arrival segment; U-turn only when forced.
fn turn_at<R: Rng + ?Sized>(v: &mut Vehicle, junction: usize, graph: &RoadGraph, rng: &mut R) {
    let inter = &graph.intersections[junction];
    let exits: Vec<usize> = inter
        .incident
        .iter()
        .copied()
        .filter(|&s| s != v.segment && graph.segments[s].axis() == inter.unblocked)
        .collect();
    let next = match exits.choose(rng) {
        Some(&s) => s,
        None => v.segment, // forced U-turn
    };
    let seg = &graph.segments[next];
    let leaving_from_a = seg.junction_a == junction;
    v.segment = next;
    v.offset = if leaving_from_a { 0.0 } else { seg.length() };
    v.forward = leaving_from_a;
}

/// Gaussian law of the distance change between two vehicles over `dt`,
/// with a flag for coincident positions where the radial projection is
/// undefined.
#[derive(Debug, Clone, Copy)]
pub struct DistanceChange {
    pub law: GaussianSpec,
    pub degenerate: bool,
}

/// Law of the change in pair distance after `dt`: positive mean means the
/// vehicles are receding from each other.
pub fn distance_change_distribution(a: &Kinematics, b: &Kinematics, dt: f64) -> DistanceChange {
    assert!(dt > 0.0, "dt must be positive");
    let variance = (a.sigma * a.sigma + b.sigma * b.sigma) * dt.powi(3);
    let axis = b.position.sub(a.position);
    let norm = axis.norm();
    if norm == 0.0 {
        // Coincident positions: fall back to the raw relative speed.
        let rel = b.velocity.sub(a.velocity).norm();
        return DistanceChange {
            law: GaussianSpec::new(rel * dt, variance),
            degenerate: true,
        };
    }
    let unit = axis.scale(1.0 / norm);
    let radial_rate = b.velocity.sub(a.velocity).dot(unit);
    DistanceChange {
        law: GaussianSpec::new(radial_rate * dt, variance),
        degenerate: false,
    }
}

/// Probability that the pair distance is below `range` after `dt`.
pub fn link_probability(a: &Kinematics, b: &Kinematics, dt: f64, range: f64) -> f64 {
    assert!(range > 0.0, "range must be positive");
    let d = a.position.distance(b.position);
    let change = distance_change_distribution(a, b, dt);
    let margin = range - d;
    if change.law.is_degenerate() {
        // Exact indicator for deterministic motion.
        return if change.law.mean < margin { 1.0 } else { 0.0 };
    }
    change.law.cdf(margin)
}

/// Expected number of `others` within `range` of `subject` after `dt`.
pub fn expected_neighbor_count(
    subject: &Kinematics,
    others: &[Kinematics],
    dt: f64,
    range: f64,
) -> f64 {
    others
        .iter()
        .map(|o| link_probability(o, subject, dt, range))
        .sum()
}

/// Ids with Euclidean distance <= `range` of `positions[of]`, excluding
/// `of` itself.
pub fn neighbors_within(positions: &[Point], of: usize, range: f64) -> Vec<usize> {
    let p = positions[of];
    positions
        .iter()
        .enumerate()
        .filter(|&(i, q)| i != of && p.distance(*q) <= range)
        .map(|(i, _)| i)
        .collect()
}
