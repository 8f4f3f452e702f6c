//! The fixed trajectory action space: candidate sampling, clustering,
//! diversity ordering and the binary vocabulary format.

mod kmeans;
mod trajectory;

pub use kmeans::{kmeans_cluster, KMeansOutcome};
pub use trajectory::{trajectory_distance, Trajectory, WAYPOINTS};

use std::collections::HashSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{digest64, ByteReader, ByteWriter};
use crate::error::{FormatError, VocabError};
use crate::geom::Pose2;
use crate::world::{step_ego, Control, EgoParams, VehicleState, TICK};

pub const VOCAB_MAGIC: &[u8; 8] = b"ZTRSVOC1";
/// Speed cap of sampled candidates; keeps every plan under 64 m.
pub const MAX_PLAN_SPEED: f64 = 15.0;

/// Constant controls held for an equal share of the horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlSegment {
    pub accel: f64,
    pub steer: f64,
}

/// Rolls the bicycle model from the origin at speed `v0`, splitting the
/// horizon evenly between `segments`. Speed is capped at [`MAX_PLAN_SPEED`].
pub fn rollout_controls(v0: f64, segments: &[ControlSegment], params: &EgoParams) -> Trajectory {
    assert!(!segments.is_empty());
    let steps = WAYPOINTS - 1;
    let mut state = VehicleState {
        pose: Pose2::default(),
        speed: v0.clamp(0.0, MAX_PLAN_SPEED),
    };
    let mut poses = Vec::with_capacity(WAYPOINTS);
    poses.push(state.pose);
    for i in 0..steps {
        // two 2 s segments switch after 20 ticks
        let seg = segments[(i * segments.len() / (steps + 1)).min(segments.len() - 1)];
        state = step_ego(
            state,
            Control {
                accel: seg.accel,
                steer: seg.steer,
            },
            TICK,
            params,
        );
        state.speed = state.speed.min(MAX_PLAN_SPEED);
        poses.push(state.pose);
    }
    Trajectory::new(poses).expect("rollout yields the full horizon")
}

fn sample_segment(rng: &mut impl Rng, v: f64, params: &EgoParams) -> ControlSegment {
    let accel: f64 = if rng.random_bool(0.5) {
        rng.random_range(-1.0..1.0)
    } else {
        rng.random_range(-4.0..3.0)
    };
    // lateral acceleration stays near 4 m/s^2; curvatures cluster around zero
    let kappa_lim = params.max_curvature().min(4.0 / v.max(2.0).powi(2));
    let u: f64 = rng.random_range(-1.0..1.0);
    let kappa = kappa_lim * u * u.abs();
    ControlSegment {
        accel: accel.clamp(params.min_accel, params.max_accel),
        steer: (params.wheelbase * kappa).atan(),
    }
}

/// Draws `count` distinct kinematically feasible candidates. The first is always
/// the stay-stopped plan.
pub fn sample_candidates(count: usize, params: &EgoParams, seed: u64) -> Vec<Trajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(count);
    let mut push = |t: Trajectory, out: &mut Vec<Trajectory>| {
        let key: Vec<u64> = t.positions().iter().map(|v| v.to_bits()).collect();
        if seen.insert(key) {
            out.push(t);
        }
    };
    if count > 0 {
        push(stationary(params), &mut out);
    }
    while out.len() < count {
        let v0 = rng.random_range(0.0..MAX_PLAN_SPEED);
        let first = sample_segment(&mut rng, v0, params);
        let segs = if rng.random_bool(0.5) {
            vec![first]
        } else {
            let v_mid = (v0 + 2.0 * first.accel).clamp(0.0, MAX_PLAN_SPEED);
            vec![first, sample_segment(&mut rng, v_mid, params)]
        };
        push(rollout_controls(v0, &segs, params), &mut out);
    }
    out
}

/// The plan that stays at rest.
pub fn stationary(params: &EgoParams) -> Trajectory {
    rollout_controls(0.0, &[ControlSegment { accel: 0.0, steer: 0.0 }], params)
}

/// An ordered action space. Every prefix is a diversity-maximizing sub-vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    trajectories: Vec<Trajectory>,
    content_hash: u64,
}

impl Vocabulary {
    /// Wraps trajectories that are already in the desired order.
    pub fn from_ordered(trajectories: Vec<Trajectory>) -> Result<Self, VocabError> {
        if trajectories.is_empty() {
            return Err(VocabError::Empty);
        }
        let content_hash = digest64(&body_bytes(&trajectories));
        Ok(Self {
            trajectories,
            content_hash,
        })
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn get(&self, i: usize) -> &Trajectory {
        &self.trajectories[i]
    }

    /// The first `k` actions (clamped to the vocabulary size).
    pub fn prefix(&self, k: usize) -> &[Trajectory] {
        &self.trajectories[..k.min(self.len())]
    }

    pub fn content_hash(&self) -> u64 {
        self.content_hash
    }

    /// Index of the stay-stopped plan, if present.
    pub fn stationary_index(&self) -> Option<usize> {
        self.trajectories.iter().position(|t| t.path_length() == 0.0)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(VOCAB_MAGIC);
        w.bytes(&body_bytes(&self.trajectories));
        w.u64(self.content_hash);
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, VocabError> {
        let mut r = ByteReader::new(bytes);
        r.magic(VOCAB_MAGIC)?;
        let body_start = r.position();
        let n = r.u32("vocabulary size")? as usize;
        let wp = r.u32("waypoint count")? as usize;
        if wp != WAYPOINTS {
            return Err(FormatError::Malformed(format!("waypoint count {wp}, expected {WAYPOINTS}")).into());
        }
        let mut trajectories = Vec::with_capacity(n);
        for _ in 0..n {
            let mut poses = Vec::with_capacity(WAYPOINTS);
            for _ in 0..WAYPOINTS {
                let x = r.f32("waypoint")? as f64;
                let y = r.f32("waypoint")? as f64;
                let h = r.f32("waypoint")? as f64;
                poses.push(Pose2 { x, y, heading: h });
            }
            trajectories.push(Trajectory::new(poses)?);
        }
        let computed = digest64(&bytes[body_start..r.position()]);
        let stored = r.u64("content hash")?;
        r.finish()?;
        if stored != computed {
            return Err(FormatError::HashMismatch { stored, computed }.into());
        }
        Self::from_ordered(trajectories)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), VocabError> {
        std::fs::write(path, self.to_bytes()).map_err(FormatError::from)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, VocabError> {
        let bytes = std::fs::read(path).map_err(FormatError::from)?;
        Self::from_bytes(&bytes)
    }
}

fn body_bytes(trajs: &[Trajectory]) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.u32(trajs.len() as u32);
    w.u32(WAYPOINTS as u32);
    for t in trajs {
        for p in t.waypoints() {
            w.f32(p.x as f32);
            w.f32(p.y as f32);
            w.f32(p.heading as f32);
        }
    }
    w.into_inner()
}

/// Orders trajectories so every prefix is spread out: the medoid first, then
/// repeatedly the trajectory farthest from everything already placed.
/// Ties go to the lower input index.
pub fn farthest_point_order(trajs: Vec<Trajectory>) -> Result<Vocabulary, VocabError> {
    let n = trajs.len();
    if n == 0 {
        return Err(VocabError::Empty);
    }
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = trajectory_distance(&trajs[i], &trajs[j]);
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    let mut first = 0;
    let mut best_mean = f64::INFINITY;
    for i in 0..n {
        let mean = dist[i * n..(i + 1) * n].iter().sum::<f64>() / n as f64;
        if mean < best_mean {
            best_mean = mean;
            first = i;
        }
    }
    let mut order = vec![first];
    let mut placed = vec![false; n];
    placed[first] = true;
    let mut min_d: Vec<f64> = (0..n).map(|j| dist[first * n + j]).collect();
    while order.len() < n {
        let mut pick = usize::MAX;
        let mut pick_d = f64::NEG_INFINITY;
        for j in 0..n {
            if !placed[j] && min_d[j] > pick_d {
                pick_d = min_d[j];
                pick = j;
            }
        }
        placed[pick] = true;
        order.push(pick);
        for j in 0..n {
            min_d[j] = min_d[j].min(dist[pick * n + j]);
        }
    }
    let mut slots: Vec<Option<Trajectory>> = trajs.into_iter().map(Some).collect();
    Vocabulary::from_ordered(order.into_iter().map(|i| slots[i].take().unwrap()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VocabConfig {
    pub candidates: usize,
    pub size: usize,
    pub max_iters: usize,
}

impl Default for VocabConfig {
    fn default() -> Self {
        Self {
            candidates: 20_000,
            size: 256,
            max_iters: 30,
        }
    }
}

/// Sample, cluster, pin the stay-stopped plan, order.
pub fn build_vocabulary(config: &VocabConfig, params: &EgoParams, seed: u64) -> Result<Vocabulary, VocabError> {
    let candidates = sample_candidates(config.candidates, params, seed);
    let mut members = kmeans_cluster(&candidates, config.size, seed, config.max_iters)?.trajectories;
    let rest = stationary(params);
    if !members.contains(&rest) {
        let nearest = members
            .iter()
            .enumerate()
            .map(|(i, t)| (i, trajectory_distance(t, &rest)))
            .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a })
            .0;
        members[nearest] = rest;
    }
    farthest_point_order(members)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p() -> EgoParams {
        EgoParams::default()
    }

    fn straight(v: f64) -> Trajectory {
        rollout_controls(v, &[ControlSegment { accel: 0.0, steer: 0.0 }], &p())
    }

    #[test]
    fn straight_rollout_covers_expected_distance() {
        let t = straight(5.0);
        let last = t.waypoints()[WAYPOINTS - 1];
        assert!((last.x - 5.0 * 3.9).abs() < 1e-5);
        assert_eq!(last.y, 0.0);
        // 4 s of travel at 5 m/s from tick 0 through the tick after the last waypoint
        assert!((t.speeds()[0] * 4.0 - 20.0).abs() < 1e-4);
    }

    #[test]
    fn hard_brake_comes_to_rest() {
        let t = rollout_controls(4.0, &[ControlSegment { accel: -4.0, steer: 0.0 }], &p());
        let v = t.speeds();
        assert!(v[10..].iter().all(|s| *s == 0.0), "{v:?}");
        assert!(v[0] > 0.0);
    }

    #[test]
    fn candidates_are_deterministic_distinct_and_valid() {
        let a = sample_candidates(300, &p(), 4);
        let b = sample_candidates(300, &p(), 4);
        assert_eq!(a, b);
        assert_eq!(a[0].path_length(), 0.0);
        for t in &a {
            t.validate(&p()).unwrap();
            assert!(t.waypoints().iter().all(|w| w.x.abs() / 32.0 <= 2.0));
        }
        for i in 0..a.len() {
            for j in (i + 1)..a.len() {
                assert_ne!(a[i], a[j]);
            }
        }
    }

    #[test]
    fn farthest_point_order_examples() {
        let one = farthest_point_order(vec![straight(3.0)]).unwrap();
        assert_eq!(one.len(), 1);

        // straight plans covering 0, 10 and 20 m; the 10 m one is the medoid
        let (a, b, c) = (straight(0.0), straight(2.5), straight(5.0));
        let v = farthest_point_order(vec![a.clone(), b.clone(), c.clone()]).unwrap();
        assert_eq!(v.get(0), &b);
        // 0 m and 20 m are equidistant from 10 m: lower input index wins
        assert_eq!(v.get(1), &a);
        assert_eq!(v.get(2), &c);
    }

    fn min_pairwise(ts: &[Trajectory]) -> f64 {
        let mut m = f64::INFINITY;
        for i in 0..ts.len() {
            for j in (i + 1)..ts.len() {
                m = m.min(trajectory_distance(&ts[i], &ts[j]));
            }
        }
        m
    }

    #[test]
    fn prefixes_stay_diverse() {
        let v = farthest_point_order(sample_candidates(120, &p(), 9)).unwrap();
        let full = min_pairwise(v.trajectories());
        for k in [2, 10, 30, 60] {
            assert!(min_pairwise(v.prefix(k)) >= full);
        }
        // each placed item maximizes its distance to the earlier ones
        let t = v.trajectories();
        for k in 1..t.len() {
            let d_k = t[..k].iter().map(|q| trajectory_distance(q, &t[k])).fold(f64::INFINITY, f64::min);
            for later in &t[k + 1..] {
                let d = t[..k].iter().map(|q| trajectory_distance(q, later)).fold(f64::INFINITY, f64::min);
                assert!(d <= d_k + 1e-12);
            }
        }
    }

    #[test]
    fn binary_format_round_trips_and_detects_corruption() {
        let v = farthest_point_order(sample_candidates(20, &p(), 1)).unwrap();
        let bytes = v.to_bytes();
        assert_eq!(&bytes[..8], VOCAB_MAGIC);
        assert_eq!(bytes.len(), 8 + 8 + 20 * WAYPOINTS * 12 + 8);
        let back = Vocabulary::from_bytes(&bytes).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.to_bytes(), bytes);
        let mut bad = bytes.clone();
        bad[100] ^= 0x01;
        assert!(matches!(
            Vocabulary::from_bytes(&bad),
            Err(VocabError::Format(FormatError::HashMismatch { .. }))
        ));
        let mut bad_magic = bytes;
        bad_magic[0] = b'X';
        assert!(matches!(Vocabulary::from_bytes(&bad_magic), Err(VocabError::Format(FormatError::BadMagic { .. }))));
    }

    #[test]
    fn build_is_deterministic_and_includes_rest() {
        let cfg = VocabConfig {
            candidates: 600,
            size: 40,
            max_iters: 10,
        };
        let a = build_vocabulary(&cfg, &p(), 3).unwrap();
        let b = build_vocabulary(&cfg, &p(), 3).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        assert_eq!(a.len(), 40);
        assert!(a.stationary_index().is_some());
        for t in a.trajectories() {
            t.validate(&p()).unwrap();
        }
    }

    proptest! {
        #[test]
        fn content_hash_tracks_every_waypoint_bit(idx in 0usize..(5 * WAYPOINTS), field in 0usize..2) {
            let trajs = sample_candidates(5, &p(), 2);
            let v = Vocabulary::from_ordered(trajs.clone()).unwrap();
            let (ti, wi) = (idx / WAYPOINTS, idx % WAYPOINTS);
            let mut wps = trajs[ti].waypoints().to_vec();
            let w = &mut wps[wi];
            let bump = |x: f64| f32::from_bits((x as f32).to_bits() ^ 1) as f64;
            if field == 0 { w.x = bump(w.x) } else { w.y = bump(w.y) }
            let mut changed = trajs.clone();
            changed[ti] = Trajectory::new(wps).unwrap();
            let v2 = Vocabulary::from_ordered(changed).unwrap();
            prop_assert_ne!(v.content_hash(), v2.content_hash());
            prop_assert_eq!(v.content_hash(), Vocabulary::from_ordered(trajs).unwrap().content_hash());
        }
    }
}
