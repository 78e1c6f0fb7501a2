//! DropSegment: exact variant counting, drop-plan sampling, segment
//! recombination, plus the affine jitter applied before rasterization.

use num_bigint::BigUint;
use num_traits::One;
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ink::{Point, PseudoCharacter, SegmentedStroke};
use crate::GRID_SIZE;

/// Per-stroke segment counts of a character.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentProfile {
    counts: Vec<usize>,
}

impl SegmentProfile {
    pub fn new(counts: Vec<usize>) -> Result<Self> {
        if counts.is_empty() || counts.contains(&0) {
            return Err(Error::Validation(format!(
                "segment profile needs >= 1 stroke with >= 1 segment each, got {counts:?}"
            )));
        }
        Ok(SegmentProfile { counts })
    }

    pub fn of(c: &PseudoCharacter) -> Self {
        SegmentProfile {
            counts: c.segment_counts(),
        }
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn strokes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Upper bound of the constrained drop count, `floor(total / 2)`.
    pub fn max_drop(&self) -> usize {
        self.total() / 2
    }
}

/// Number of distinct characters obtainable by dropping any subset of
/// segments except all of them: `2^total - 1`.
pub fn count_variants(profile: &SegmentProfile) -> BigUint {
    (BigUint::one() << profile.total()) - BigUint::one()
}

/// Number of variants when at most `floor(total / 2)` segments are dropped:
/// `sum_{r=0}^{floor(total/2)} C(total, r)`.
pub fn count_variants_constrained(profile: &SegmentProfile) -> BigUint {
    let n = profile.total();
    let mut sum = BigUint::one();
    let mut binom = BigUint::one();
    for r in 1..=profile.max_drop() {
        binom = binom * BigUint::from(n - r + 1) / BigUint::from(r);
        sum += &binom;
    }
    sum
}

/// Which segments to remove, by global index in writing order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropPlan {
    dropped: Vec<usize>,
}

impl DropPlan {
    /// The no-op plan.
    pub fn empty() -> Self {
        DropPlan {
            dropped: Vec::new(),
        }
    }

    /// Builds a plan from arbitrary indices; they are sorted and must be
    /// unique and below `total`, and must not cover every segment.
    pub fn new(mut dropped: Vec<usize>, total: usize) -> Result<Self> {
        dropped.sort_unstable();
        if dropped.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidDropPlan("duplicate segment index".into()));
        }
        if let Some(&last) = dropped.last() {
            if last >= total {
                return Err(Error::InvalidDropPlan(format!(
                    "segment {last} out of range for {total} segments"
                )));
            }
        }
        if dropped.len() >= total {
            return Err(Error::InvalidDropPlan(
                "a plan may not drop every segment".into(),
            ));
        }
        Ok(DropPlan { dropped })
    }

    pub fn r(&self) -> usize {
        self.dropped.len()
    }

    pub fn dropped(&self) -> &[usize] {
        &self.dropped
    }
}

/// Draws `r` uniformly from `0..=floor(total/2)`, then a uniform `r`-subset.
pub fn sample_drop_plan<R: Rng + ?Sized>(profile: &SegmentProfile, rng: &mut R) -> DropPlan {
    let total = profile.total();
    let r = rng.random_range(0..=profile.max_drop());
    let mut dropped = index::sample(rng, total, r).into_vec();
    dropped.sort_unstable();
    DropPlan { dropped }
}

/// Removes the planned segments and recombines survivors.
///
/// Within each original stroke every maximal run of adjacent surviving
/// segments becomes one stroke; the shared corner points are kept once and
/// interior corners of the run stay corners. Strokes keep writing order.
pub fn apply_drop(c: &PseudoCharacter, plan: &DropPlan) -> Result<PseudoCharacter> {
    let total = c.total_segments();
    if plan.dropped.len() >= total {
        return Err(Error::InvalidDropPlan(
            "a plan may not drop every segment".into(),
        ));
    }
    if plan.dropped.last().is_some_and(|&d| d >= total) {
        return Err(Error::InvalidDropPlan(format!(
            "plan references segment beyond {total}"
        )));
    }
    let mut dropped = plan.dropped.iter().peekable();
    let mut strokes = Vec::new();
    let mut global = 0;
    for stroke in &c.strokes {
        let mut run: Option<SegmentedStroke> = None;
        for (a, b) in stroke.segment_bounds() {
            let is_dropped = dropped.next_if_eq(&&global).is_some();
            global += 1;
            if is_dropped {
                strokes.extend(run.take());
                continue;
            }
            let pts = &stroke.points[a..=b];
            match run.as_mut() {
                Some(r) => {
                    r.corners.push(r.points.len() - 1);
                    r.points.extend_from_slice(&pts[1..]);
                }
                None => run = Some(SegmentedStroke::whole(pts.to_vec())),
            }
        }
        strokes.extend(run);
    }
    Ok(PseudoCharacter {
        writer_id: c.writer_id.clone(),
        source_page: c.source_page.clone(),
        strokes,
    })
}

/// Rotation (radians), isotropic scale and translation in grid pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineParams {
    pub rotation: f64,
    pub scale: f64,
    pub dx: f64,
    pub dy: f64,
}

impl AffineParams {
    pub const IDENTITY: AffineParams = AffineParams {
        rotation: 0.0,
        scale: 1.0,
        dx: 0.0,
        dy: 0.0,
    };
}

impl Default for AffineParams {
    fn default() -> Self {
        Self::IDENTITY
    }
}

/// Uniform sampling ranges for [`AffineParams`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AffineRanges {
    /// Maximum absolute rotation in degrees.
    pub max_rotation_deg: f64,
    pub min_scale: f64,
    pub max_scale: f64,
    /// Maximum absolute shift per axis, grid pixels.
    pub max_shift: f64,
}

impl Default for AffineRanges {
    fn default() -> Self {
        AffineRanges {
            max_rotation_deg: 10.0,
            min_scale: 0.85,
            max_scale: 1.15,
            max_shift: 4.0,
        }
    }
}

impl AffineRanges {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> AffineParams {
        let rot = self.max_rotation_deg.to_radians();
        AffineParams {
            rotation: rng.random_range(-rot..=rot),
            scale: rng.random_range(self.min_scale..=self.max_scale),
            dx: rng.random_range(-self.max_shift..=self.max_shift),
            dy: rng.random_range(-self.max_shift..=self.max_shift),
        }
    }
}

/// Rotates and scales about the grid centre, then translates. Points are
/// clamped into `[0, GRID_SIZE - 1]`.
pub fn apply_affine(c: &PseudoCharacter, p: &AffineParams) -> PseudoCharacter {
    let mid = GRID_SIZE as f64 / 2.0;
    let hi = (GRID_SIZE - 1) as f64;
    let (sin, cos) = p.rotation.sin_cos();
    let map = |q: &Point| {
        let (x, y) = (q.x - mid, q.y - mid);
        let rx = (cos * x - sin * y) * p.scale;
        let ry = (sin * x + cos * y) * p.scale;
        Point::new(
            (rx + mid + p.dx).clamp(0.0, hi),
            (ry + mid + p.dy).clamp(0.0, hi),
        )
    };
    PseudoCharacter {
        writer_id: c.writer_id.clone(),
        source_page: c.source_page.clone(),
        strokes: c
            .strokes
            .iter()
            .map(|s| SegmentedStroke {
                points: s.points.iter().map(map).collect(),
                corners: s.corners.clone(),
            })
            .collect(),
    }
}
