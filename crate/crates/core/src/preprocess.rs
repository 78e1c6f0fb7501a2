//! Page preprocessing: arc-length resampling, bending-value corner detection
//! and greedy pseudo-character segmentation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ink::{BoundingBox, InkPage, Point, PseudoCharacter, SegmentedStroke, Stroke};
use crate::{CHAR_BOX, GRID_SIZE};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    /// Resampling step as a fraction of the page's mean stroke height.
    pub step_fraction: f64,
    /// Forward/backward offset used by the bending value.
    pub bending_window: usize,
    /// Corner threshold as a multiple of the resampling step.
    pub corner_threshold: f64,
    /// Character height-to-width ratio.
    pub ratio: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            step_fraction: 1.0 / 20.0,
            bending_window: 2,
            corner_threshold: 0.15,
            ratio: 1.0,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_fraction > 0.0) || !(self.ratio > 0.0) || self.bending_window == 0 {
            return Err(Error::Config(format!(
                "invalid preprocessing parameters: {self:?}"
            )));
        }
        if !(self.corner_threshold >= 0.0) {
            return Err(Error::Config("corner threshold must be >= 0".into()));
        }
        Ok(())
    }
}

/// Points at (near) uniform arc-length spacing.
#[derive(Clone, Debug, PartialEq)]
pub struct ResampledStroke {
    pub points: Vec<Point>,
    /// Actual spacing between consecutive points.
    pub step: f64,
}

/// Removes consecutive duplicate points.
pub fn dedup_points(points: &[Point]) -> Vec<Point> {
    let mut out: Vec<Point> = Vec::with_capacity(points.len());
    for &p in points {
        if out.last() != Some(&p) {
            out.push(p);
        }
    }
    out
}

/// Piecewise-linear resampling at arc-length step close to `h`.
///
/// The stroke length `L` is divided into `max(1, round(L / h))` equal parts,
/// so the spacing lies in `[h/2, 3h/2]` whenever `L >= h/2`. Endpoints are
/// copied exactly.
pub fn resample(stroke: &Stroke, h: f64) -> Result<ResampledStroke> {
    resample_points(&stroke.points, h)
}

pub fn resample_points(points: &[Point], h: f64) -> Result<ResampledStroke> {
    assert!(h > 0.0, "resampling step must be positive");
    let pts = dedup_points(points);
    if pts.len() < 2 {
        return Err(Error::DegenerateStroke(format!(
            "{} point(s) with no distinct neighbour",
            points.len()
        )));
    }
    let mut cumulative = Vec::with_capacity(pts.len());
    let mut total = 0.0;
    cumulative.push(0.0);
    for w in pts.windows(2) {
        total += w[0].dist(&w[1]);
        cumulative.push(total);
    }
    let parts = ((total / h).round() as usize).max(1);
    let step = total / parts as f64;

    let mut out = Vec::with_capacity(parts + 1);
    out.push(pts[0]);
    let mut seg = 0;
    for j in 1..parts {
        let target = step * j as f64;
        while seg + 2 < cumulative.len() && cumulative[seg + 1] < target {
            seg += 1;
        }
        let (a, b) = (pts[seg], pts[seg + 1]);
        let len = cumulative[seg + 1] - cumulative[seg];
        let t = if len > 0.0 {
            ((target - cumulative[seg]) / len).clamp(0.0, 1.0)
        } else {
            0.0
        };
        out.push(Point::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)));
    }
    out.push(*pts.last().unwrap());
    Ok(ResampledStroke { points: out, step })
}

/// Bending values of a resampled stroke for one window size.
#[derive(Clone, Debug, PartialEq)]
pub struct BendingProfile {
    pub window: usize,
    /// `beta[j]` belongs to point `j + window`.
    pub beta: Vec<f64>,
    /// Mean spacing of the underlying points, used as the noise scale.
    pub scale: f64,
}

impl BendingProfile {
    pub fn is_empty(&self) -> bool {
        self.beta.is_empty()
    }

    /// Point indices covered by the profile.
    pub fn indices(&self) -> std::ops::Range<usize> {
        self.window..self.window + self.beta.len()
    }

    /// Bending value at point index `i`, if defined.
    pub fn at(&self, i: usize) -> Option<f64> {
        i.checked_sub(self.window)
            .and_then(|j| self.beta.get(j).copied())
    }
}

/// `beta_i = max(|x[i+k] + x[i-k] - 2 x[i]|, |y[i+k] + y[i-k] - 2 y[i]|) / (2k)`
/// for every `i` with both neighbours present. Shorter strokes give an
/// empty profile.
pub fn bending_values(points: &[Point], k: usize) -> BendingProfile {
    assert!(k >= 1, "bending window must be positive");
    let n = points.len();
    let scale = if n >= 2 {
        crate::ink::polyline_length(points) / (n - 1) as f64
    } else {
        0.0
    };
    if n < 2 * k + 1 {
        return BendingProfile {
            window: k,
            beta: Vec::new(),
            scale,
        };
    }
    let denom = 2.0 * k as f64;
    let beta = (k..n - k)
        .map(|i| {
            let (a, p, b) = (points[i - k], points[i], points[i + k]);
            let dx = (b.x + a.x - 2.0 * p.x).abs();
            let dy = (b.y + a.y - 2.0 * p.y).abs();
            dx.max(dy) / denom
        })
        .collect();
    BendingProfile {
        window: k,
        beta,
        scale,
    }
}

/// Local maxima of the bending profile over a `±window` neighbourhood whose
/// value reaches `threshold`.
///
/// A candidate must beat its left neighbours strictly and its right
/// neighbours non-strictly, so a two-point plateau at an elbow that falls
/// between samples yields exactly one corner (its first point). Values at
/// floating-point noise level (`1e-9` of the point spacing) never count.
pub fn detect_corners(profile: &BendingProfile, threshold: f64) -> Vec<usize> {
    let k = profile.window;
    let floor = 1e-9 * profile.scale;
    let range = profile.indices();
    let mut corners = Vec::new();
    for i in range.clone() {
        let b = profile.beta[i - k];
        if b < threshold || b <= floor {
            continue;
        }
        let lo = i.saturating_sub(k).max(range.start);
        let hi = (i + k).min(range.end - 1);
        let left_ok = (lo..i).all(|j| b > profile.beta[j - k]);
        let right_ok = (i + 1..=hi).all(|j| b >= profile.beta[j - k]);
        if left_ok && right_ok {
            corners.push(i);
        }
    }
    corners
}

/// Resamples and corner-splits one stroke.
pub fn segment_stroke(
    stroke: &Stroke,
    h: f64,
    config: &PreprocessConfig,
) -> Result<SegmentedStroke> {
    let resampled = resample(stroke, h)?;
    let profile = bending_values(&resampled.points, config.bending_window);
    let corners = detect_corners(&profile, config.corner_threshold * resampled.step);
    SegmentedStroke::new(resampled.points, corners)
}

/// Output of [`segment_page`].
#[derive(Clone, Debug)]
pub struct PageSegmentation {
    pub characters: Vec<PseudoCharacter>,
    /// Mean stroke bounding-box height used for the width rule.
    pub mean_height: f64,
    /// Resampling step used for every stroke.
    pub step: f64,
    /// Strokes dropped because all of their points coincide.
    pub degenerate_strokes: usize,
}

impl PageSegmentation {
    /// True when nothing usable was found on the page.
    pub fn is_empty(&self) -> bool {
        self.characters.is_empty()
    }
}

struct CharBuilder {
    strokes: Vec<SegmentedStroke>,
    /// (source stroke, last segment index) of the last piece.
    last: Option<(usize, usize)>,
    bbox: Option<BoundingBox>,
}

impl CharBuilder {
    fn new() -> Self {
        CharBuilder {
            strokes: Vec::new(),
            last: None,
            bbox: None,
        }
    }

    fn push(&mut self, stroke: usize, segment: usize, points: &[Point], bbox: BoundingBox) {
        match self.last {
            Some((s, j)) if s == stroke && j + 1 == segment => {
                let piece = self.strokes.last_mut().unwrap();
                piece.corners.push(piece.points.len() - 1);
                piece.points.extend_from_slice(&points[1..]);
            }
            _ => self.strokes.push(SegmentedStroke::whole(points.to_vec())),
        }
        self.last = Some((stroke, segment));
        self.bbox = Some(match self.bbox {
            Some(b) => b.union(&bbox),
            None => bbox,
        });
    }
}

/// Splits a page into pseudo-characters in page coordinates.
///
/// Every stroke is resampled at `step_fraction` of the mean stroke height `H`
/// and cut at its corners. Segments are then taken in writing order and
/// appended to the current character until adding one would make the
/// character wider than `H / ratio`; that segment opens the next character.
pub fn segment_page(page: &InkPage, config: &PreprocessConfig) -> Result<PageSegmentation> {
    config.validate()?;
    let live: Vec<&Stroke> = page
        .strokes
        .iter()
        .filter(|s| dedup_points(&s.points).len() >= 2)
        .collect();
    let degenerate_strokes = page.strokes.len() - live.len();
    if live.is_empty() {
        log::warn!("page `{}`: every stroke is degenerate", page.page_id);
        return Ok(PageSegmentation {
            characters: Vec::new(),
            mean_height: 0.0,
            step: 0.0,
            degenerate_strokes,
        });
    }
    let mean_height = live
        .iter()
        .map(|s| BoundingBox::of(&s.points).height())
        .sum::<f64>()
        / live.len() as f64;
    let step = if mean_height > 0.0 {
        mean_height * config.step_fraction
    } else {
        1.0
    };
    let max_width = if mean_height > 0.0 {
        mean_height / config.ratio
    } else {
        step / config.step_fraction / config.ratio
    };

    let mut characters = Vec::new();
    let mut current = CharBuilder::new();
    for (si, stroke) in live.iter().enumerate() {
        let seg = segment_stroke(stroke, step, config)?;
        for (j, (a, b)) in seg.segment_bounds().into_iter().enumerate() {
            let pts = &seg.points[a..=b];
            let bbox = BoundingBox::of(pts);
            if let Some(cur) = current.bbox {
                if cur.union(&bbox).width() > max_width {
                    characters.push(finish(
                        std::mem::replace(&mut current, CharBuilder::new()),
                        page,
                    ));
                }
            }
            current.push(si, j, pts, bbox);
        }
    }
    if !current.strokes.is_empty() {
        characters.push(finish(current, page));
    }
    Ok(PageSegmentation {
        characters,
        mean_height,
        step,
        degenerate_strokes,
    })
}

fn finish(builder: CharBuilder, page: &InkPage) -> PseudoCharacter {
    PseudoCharacter {
        writer_id: page.writer_id.clone(),
        source_page: page.page_id.clone(),
        strokes: builder.strokes,
    }
}

/// Scales a character so its larger side spans `CHAR_BOX` and centres it on
/// the grid. A zero-size character is only translated to the centre.
pub fn normalize_character(c: &PseudoCharacter) -> PseudoCharacter {
    let bbox = c.bounding_box();
    let side = bbox.width().max(bbox.height());
    let scale = if side > 0.0 { CHAR_BOX / side } else { 1.0 };
    let center = bbox.center();
    let mid = GRID_SIZE as f64 / 2.0;
    let map = |p: &Point| {
        Point::new(
            (p.x - center.x) * scale + mid,
            (p.y - center.y) * scale + mid,
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

/// Segments a page and normalizes every character onto the grid.
pub fn preprocess_page(page: &InkPage, config: &PreprocessConfig) -> Result<Vec<PseudoCharacter>> {
    Ok(segment_page(page, config)?
        .characters
        .iter()
        .map(normalize_character)
        .collect())
}
