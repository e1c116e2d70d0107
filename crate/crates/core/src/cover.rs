//! ε-net covers: greedy and farthest-point construction, plus validation.
//!
//! A valid ε-net satisfies two conditions: every point lies strictly within
//! `eps` of some landmark (coverage), and landmarks are pairwise at least
//! `eps` apart (separation).

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::PointCloud;
use crate::error::{Error, Result};
use crate::rangequery::{check_eps, IndexSet, RangeIndex};

/// Landmarks, their balls, and the transpose point -> balls.
#[derive(Debug, Clone, PartialEq)]
pub struct Cover {
    pub epsilon: f64,
    /// Point index of each landmark, in selection order.
    pub landmarks: Vec<usize>,
    /// `members[j]` is `B(x_{landmarks[j]}, eps)` as point indices.
    pub members: Vec<IndexSet>,
    /// For each point, the ascending landmark positions whose ball holds it.
    pub point_to_balls: Vec<Vec<usize>>,
}

impl Cover {
    fn from_parts(n: usize, epsilon: f64, landmarks: Vec<usize>, members: Vec<IndexSet>) -> Self {
        let mut point_to_balls = vec![Vec::new(); n];
        for (pos, ball) in members.iter().enumerate() {
            for &p in ball.iter() {
                point_to_balls[p].push(pos);
            }
        }
        Self {
            epsilon,
            landmarks,
            members,
            point_to_balls,
        }
    }

    /// Builds balls around arbitrary landmarks without checking the ε-net
    /// conditions; run [`validate_eps_net`] on the result.
    pub fn from_landmarks(index: &dyn RangeIndex, eps: f64, landmarks: Vec<usize>) -> Result<Self> {
        check_eps(eps)?;
        let cloud = index.cloud();
        if let Some(&bad) = landmarks.iter().find(|&&l| l >= cloud.len()) {
            return Err(Error::invalid(format!("landmark {bad} out of range")));
        }
        let members = landmarks
            .iter()
            .map(|&l| index.range(cloud.point(l), eps))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_parts(cloud.len(), eps, landmarks, members))
    }

    pub fn len(&self) -> usize {
        self.landmarks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.landmarks.is_empty()
    }

    pub fn num_points(&self) -> usize {
        self.point_to_balls.len()
    }
}

/// Order in which the greedy construction visits candidate points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Order {
    #[default]
    Index,
    Shuffled(u64),
}

impl Order {
    pub fn sequence(self, n: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        if let Order::Shuffled(seed) = self {
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        }
        order
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NetMethod {
    #[default]
    Greedy,
    Fps,
}

impl NetMethod {
    pub fn name(self) -> &'static str {
        match self {
            NetMethod::Greedy => "greedy",
            NetMethod::Fps => "fps",
        }
    }
}

impl fmt::Display for NetMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NetMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(NetMethod::Greedy),
            "fps" => Ok(NetMethod::Fps),
            other => Err(Error::invalid(format!("unknown net method `{other}`"))),
        }
    }
}

/// Greedy ε-net: take the next uncovered candidate, make it a landmark, and
/// mark its ball covered. One range query is issued per landmark.
///
/// Backends that answer several queries in one pass (see
/// [`RangeIndex::lookahead_hint`]) are fed speculative batches of the next
/// uncovered candidates. A candidate covered by an earlier landmark of the
/// same batch is dropped, so the landmark sequence is exactly the one the
/// one-at-a-time loop would produce.
pub fn greedy_eps_net(index: &dyn RangeIndex, eps: f64, order: Order) -> Result<Cover> {
    check_eps(eps)?;
    let cloud = index.cloud();
    let n = cloud.len();
    let order = order.sequence(n);
    let max_batch = index.lookahead_hint().max(1);

    let mut covered = vec![false; n];
    let mut landmarks = Vec::new();
    let mut members = Vec::new();
    let mut cursor = 0;
    let mut batch = 1;
    let mut candidates = Vec::with_capacity(max_batch);
    loop {
        candidates.clear();
        while candidates.len() < batch && cursor < n {
            let p = order[cursor];
            cursor += 1;
            if !covered[p] {
                candidates.push(p);
            }
        }
        if candidates.is_empty() {
            break;
        }

        let balls = if candidates.len() == 1 {
            vec![index.range(cloud.point(candidates[0]), eps)?]
        } else {
            let queries: Vec<&[f64]> = candidates.iter().map(|&p| cloud.point(p)).collect();
            index.range_many(&queries, eps)?
        };

        let mut accepted = 0;
        for (&p, ball) in candidates.iter().zip(balls) {
            if covered[p] {
                continue;
            }
            for &i in ball.iter() {
                covered[i] = true;
            }
            // Strict inequality at distance zero always keeps the landmark.
            covered[p] = true;
            landmarks.push(p);
            members.push(ball);
            accepted += 1;
        }

        if accepted == candidates.len() {
            batch = (batch * 2).min(max_batch);
        } else if accepted * 2 < candidates.len() {
            batch = (batch / 2).max(1);
        }
    }

    Ok(Cover::from_parts(n, eps, landmarks, members))
}

/// Farthest-point ε-net starting from `start`.
///
/// Repeatedly adds the point whose distance to the nearest landmark is
/// largest (lowest index on ties) while that distance is `>= eps`. Selection
/// uses direct distances only, so the landmark sequence does not depend on
/// the backend; the backend supplies the ball members afterwards.
pub fn fps_eps_net(index: &dyn RangeIndex, eps: f64, start: usize) -> Result<Cover> {
    check_eps(eps)?;
    let cloud = index.cloud();
    let n = cloud.len();
    if start >= n {
        return Err(Error::invalid(format!(
            "start point {start} out of range for {n} points"
        )));
    }

    let landmarks = fps_landmarks(cloud, eps, start);
    let members = landmarks
        .iter()
        .map(|&l| index.range(cloud.point(l), eps))
        .collect::<Result<Vec<_>>>()?;
    Ok(Cover::from_parts(n, eps, landmarks, members))
}

fn fps_landmarks(cloud: &PointCloud, eps: f64, start: usize) -> Vec<usize> {
    let mut landmarks = vec![start];
    let origin = cloud.point(start);
    let mut nearest: Vec<f64> = (0..cloud.len()).map(|i| cloud.dist_to(origin, i)).collect();
    loop {
        let (far, far_dist) =
            nearest.iter().enumerate().fold(
                (0, f64::NEG_INFINITY),
                |best, (i, &d)| if d > best.1 { (i, d) } else { best },
            );
        if far_dist < eps {
            break;
        }
        landmarks.push(far);
        let x = cloud.point(far);
        for (i, slot) in nearest.iter_mut().enumerate() {
            let d = cloud.dist_to(x, i);
            if d < *slot {
                *slot = d;
            }
        }
    }
    landmarks
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeparationViolation {
    /// Point indices of the two landmarks.
    pub landmarks: (usize, usize),
    pub distance: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct NetValidation {
    pub coverage_violations: Vec<usize>,
    pub separation_violations: Vec<SeparationViolation>,
}

impl NetValidation {
    pub fn is_valid(&self) -> bool {
        self.coverage_violations.is_empty() && self.separation_violations.is_empty()
    }
}

/// Checks both ε-net conditions by recomputing distances directly.
///
/// Coverage is tested against each point's `point_to_balls` entry, so a
/// cover whose bookkeeping omits a ball is reported even if the point is
/// geometrically covered.
pub fn validate_eps_net(cloud: &PointCloud, cover: &Cover) -> NetValidation {
    let eps = cover.epsilon;
    let mut report = NetValidation::default();
    for i in 0..cloud.len() {
        let balls = cover.point_to_balls.get(i).map(Vec::as_slice).unwrap_or(&[]);
        let ok = balls.iter().any(|&pos| {
            cover
                .landmarks
                .get(pos)
                .is_some_and(|&l| l < cloud.len() && cloud.dist(l, i) < eps)
        });
        if !ok {
            report.coverage_violations.push(i);
        }
    }
    for (a, &la) in cover.landmarks.iter().enumerate() {
        for &lb in &cover.landmarks[a + 1..] {
            let d = cloud.dist(la, lb);
            if d < eps {
                report.separation_violations.push(SeparationViolation {
                    landmarks: (la, lb),
                    distance: d,
                });
            }
        }
    }
    report
}
