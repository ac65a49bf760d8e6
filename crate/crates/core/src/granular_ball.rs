//! Granular-ball reduction of a labeled dataset.
//!
//! A dataset starts as one ball seeded at a random point. Any ball whose
//! purity falls below the threshold is split around two seed points: the
//! ball's retained seed and the farthest member of a different class. Every
//! member joins the nearer seed. Splitting repeats (FIFO) until all balls
//! are pure enough.

use std::collections::{BTreeMap, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{euclidean, Scalar};

/// Class identifier.
pub type Label = u32;

/// A quantized feature vector with its class.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabeledPoint {
    pub features: Vec<u32>,
    pub label: Label,
}

impl LabeledPoint {
    pub fn new(features: Vec<u32>, label: Label) -> Self {
        Self { features, label }
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }

    /// Checks the point has `dim` features, all within `[0, 2^bits - 1]`.
    pub fn validate(&self, dim: usize, bits: u32) -> Result<()> {
        if self.features.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: self.features.len(),
            });
        }
        let max = (1u64 << bits) - 1;
        match self.features.iter().find(|&&v| u64::from(v) > max) {
            Some(&v) => Err(Error::Unencodable {
                value: u64::from(v),
                max,
            }),
            None => Ok(()),
        }
    }

    fn squared_distance(&self, other: &LabeledPoint) -> u64 {
        self.features
            .iter()
            .zip(&other.features)
            .map(|(&a, &b)| {
                let diff = i64::from(a) - i64::from(b);
                (diff * diff) as u64
            })
            .sum()
    }
}

/// A cluster summary: mean center, mean member distance and majority label.
#[derive(Debug, Clone, PartialEq)]
pub struct GranularBall<S> {
    pub center: Vec<S>,
    pub radius: S,
    pub label: Label,
    pub purity: S,
    pub member_count: usize,
    /// Empty once the ball has been stripped for indexing.
    pub members: Vec<LabeledPoint>,
    majority_count: usize,
    /// Position in `members` of the point that seeded this ball.
    anchor: Option<usize>,
}

impl<S: Scalar> GranularBall<S> {
    /// Builds a ball over `members`, computing center, radius and purity.
    pub fn from_members(members: Vec<LabeledPoint>) -> Result<Self> {
        Self::with_anchor(members, None)
    }

    fn with_anchor(members: Vec<LabeledPoint>, anchor: Option<usize>) -> Result<Self> {
        let center = ball_center(&members)?;
        let radius = ball_radius(&members, &center)?;
        let (label, majority_count) = majority(&members);
        let member_count = members.len();
        Ok(Self {
            purity: S::from_count(majority_count) / S::from_count(member_count),
            center,
            radius,
            label,
            member_count,
            members,
            majority_count,
            anchor,
        })
    }

    /// Rebuilds a summary-only ball (no members), e.g. when reading an index file.
    pub fn summary(
        center: Vec<S>,
        radius: S,
        label: Label,
        purity: S,
        member_count: usize,
    ) -> Self {
        let majority_count = (purity * S::from_count(member_count))
            .round()
            .to_usize()
            .unwrap_or(member_count);
        Self {
            center,
            radius,
            label,
            purity,
            member_count,
            members: Vec::new(),
            majority_count,
            anchor: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// Purity test done on counts so it is exact for any scalar width.
    pub fn meets(&self, threshold: f64) -> bool {
        self.majority_count as f64 >= threshold * self.member_count as f64
    }

    pub fn is_pure(&self) -> bool {
        self.majority_count == self.member_count
    }

    /// The member the ball was seeded from, if known.
    pub fn seed_point(&self) -> Option<&LabeledPoint> {
        self.anchor.and_then(|i| self.members.get(i))
    }

    /// Drops member points, keeping only the summary.
    pub fn strip_members(&mut self) {
        self.members = Vec::new();
        self.anchor = None;
    }
}

/// Component-wise arithmetic mean of the members' features.
pub fn ball_center<S: Scalar>(points: &[LabeledPoint]) -> Result<Vec<S>> {
    let first = points.first().ok_or(Error::EmptyBall)?;
    let dim = first.dim();
    let mut sums = vec![S::zero(); dim];
    for p in points {
        if p.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: p.dim(),
            });
        }
        for (s, &v) in sums.iter_mut().zip(&p.features) {
            *s = *s + S::from_count(v as usize);
        }
    }
    let n = S::from_count(points.len());
    Ok(sums.into_iter().map(|s| s / n).collect())
}

/// Mean Euclidean distance of the members to `center`.
pub fn ball_radius<S: Scalar>(points: &[LabeledPoint], center: &[S]) -> Result<S> {
    if points.is_empty() {
        return Err(Error::EmptyBall);
    }
    let mut total = S::zero();
    let mut coords = Vec::with_capacity(center.len());
    for p in points {
        if p.dim() != center.len() {
            return Err(Error::DimensionMismatch {
                expected: center.len(),
                got: p.dim(),
            });
        }
        coords.clear();
        coords.extend(p.features.iter().map(|&v| S::from_count(v as usize)));
        total = total + euclidean(&coords, center);
    }
    Ok(total / S::from_count(points.len()))
}

/// Fraction of members carrying the most common label.
pub fn ball_purity<S: Scalar>(points: &[LabeledPoint]) -> Result<S> {
    if points.is_empty() {
        return Err(Error::EmptyBall);
    }
    let (_, count) = majority(points);
    Ok(S::from_count(count) / S::from_count(points.len()))
}

/// Majority label and its count; equal counts resolve to the lowest label.
fn majority(points: &[LabeledPoint]) -> (Label, usize) {
    let mut counts: BTreeMap<Label, usize> = BTreeMap::new();
    for p in points {
        *counts.entry(p.label).or_default() += 1;
    }
    counts.into_iter().fold(
        (0, 0),
        |best, (label, n)| if n > best.1 { (label, n) } else { best },
    )
}

/// Splits an impure ball in two.
///
/// The first child keeps the parent's seed point (drawn from `rng` if the
/// ball has none). The second is seeded by the farthest member whose class
/// differs from the first seed, lowest position winning ties. Members go to
/// the nearer seed, ties to the first; each seed stays in its own child.
pub fn split_ball<S: Scalar, R: Rng + ?Sized>(
    ball: GranularBall<S>,
    rng: &mut R,
) -> Result<(GranularBall<S>, GranularBall<S>)> {
    if ball.members.is_empty() {
        return Err(Error::EmptyBall);
    }
    if ball
        .members
        .iter()
        .all(|p| p.label == ball.members[0].label)
    {
        return Err(Error::PureBall);
    }
    let anchor = match ball.anchor {
        Some(i) if i < ball.members.len() => i,
        _ => rng.random_range(0..ball.members.len()),
    };
    let members = ball.members;
    let seed = &members[anchor];

    let mut second = None;
    let mut farthest = 0u64;
    for (i, p) in members.iter().enumerate() {
        if p.label == seed.label {
            continue;
        }
        let d = seed.squared_distance(p);
        if second.is_none() || d > farthest {
            second = Some(i);
            farthest = d;
        }
    }
    let second = second.expect("impure ball has a point of another class");

    let mut left = Vec::new();
    let mut right = Vec::new();
    let (mut left_anchor, mut right_anchor) = (0, 0);
    for (i, p) in members.iter().enumerate() {
        let to_left = if i == anchor {
            true
        } else if i == second {
            false
        } else {
            seed.squared_distance(p) <= members[second].squared_distance(p)
        };
        if to_left {
            if i == anchor {
                left_anchor = left.len();
            }
            left.push(p.clone());
        } else {
            if i == second {
                right_anchor = right.len();
            }
            right.push(p.clone());
        }
    }
    Ok((
        GranularBall::with_anchor(left, Some(left_anchor))?,
        GranularBall::with_anchor(right, Some(right_anchor))?,
    ))
}

/// Result of [`generate_with_stats`].
#[derive(Debug, Clone)]
pub struct Generation<S> {
    pub balls: Vec<GranularBall<S>>,
    /// Number of splits performed.
    pub splits: usize,
}

/// Covers `dataset` with balls of purity at least `threshold`.
pub fn generate<S: Scalar, R: Rng + ?Sized>(
    dataset: &[LabeledPoint],
    threshold: f64,
    rng: &mut R,
) -> Result<Vec<GranularBall<S>>> {
    generate_with_stats(dataset, threshold, rng).map(|g| g.balls)
}

pub fn generate_with_stats<S: Scalar, R: Rng + ?Sized>(
    dataset: &[LabeledPoint],
    threshold: f64,
    rng: &mut R,
) -> Result<Generation<S>> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    validate_threshold(threshold)?;
    let first = rng.random_range(0..dataset.len());
    let root = GranularBall::with_anchor(dataset.to_vec(), Some(first))?;

    let mut queue = VecDeque::from([root]);
    let mut balls = Vec::new();
    let mut splits = 0;
    while let Some(ball) = queue.pop_front() {
        if ball.meets(threshold) {
            balls.push(ball);
            continue;
        }
        let (a, b) = split_ball(ball, rng)?;
        splits += 1;
        queue.push_back(a);
        queue.push_back(b);
    }
    Ok(Generation { balls, splits })
}

pub fn validate_threshold(threshold: f64) -> Result<()> {
    if threshold > 0.5 && threshold <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidThreshold(threshold))
    }
}
