//! Synthetic multi-writer ink.
//!
//! Each character is a handful of strokes. A stroke is a zigzag of pieces
//! that run alternately up and down, leaning the same way, and meet at
//! sharp turns. Each piece is a circular arc whose signed curvature,
//! measured along the direction of travel, is the writer's curvature bias.
//! A sinusoidal tremor is laid across the stroke, and the whole character
//! is rotated about its center by the writer's slant.
//!
//! The first direction and the sideways drift are drawn symmetrically, so a
//! stroke and its reversal are equally likely. As a result two writers whose
//! curvature differs only in sign draw the same shapes and can only be told
//! apart by pen direction.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ink::{InkPage, Point, Stroke};
use crate::rng::{pair, stream, Purpose};

/// Drawing distance between consecutive raw samples, in style units (a
/// character is roughly 8 units tall).
const SAMPLE_STEP: f64 = 0.2;
const CHARS_PER_LINE: usize = 10;
const CHAR_ADVANCE: f64 = 14.0;
const LINE_ADVANCE: f64 = 22.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WriterStyle {
    pub writer_id: String,
    /// Degrees in [-45, 45]. Characters are turned clockwise (x right, y up)
    /// by this angle.
    pub slant_deg: f64,
    /// Radians per unit arc length along the pen direction, in [-0.5, 0.5].
    pub curvature: f64,
    /// Units, in [0, 0.5].
    pub tremor_amplitude: f64,
    /// Cycles per unit arc length, in [0, 5].
    pub tremor_frequency: f64,
    /// Multiplies piece lengths, in [0.5, 2].
    pub stroke_scale: f64,
    /// Probability of each of up to three extra pieces per stroke, in [0, 1].
    pub segment_tendency: f64,
    pub seed: u64,
}

impl WriterStyle {
    pub fn new(writer_id: impl Into<String>, slant_deg: f64, curvature: f64, seed: u64) -> Self {
        WriterStyle {
            writer_id: writer_id.into(),
            slant_deg,
            curvature,
            tremor_amplitude: 0.03,
            tremor_frequency: 1.0,
            stroke_scale: 1.0,
            segment_tendency: 0.5,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("slant_deg", self.slant_deg, -45.0, 45.0),
            ("curvature", self.curvature, -0.5, 0.5),
            ("tremor_amplitude", self.tremor_amplitude, 0.0, 0.5),
            ("tremor_frequency", self.tremor_frequency, 0.0, 5.0),
            ("stroke_scale", self.stroke_scale, 0.5, 2.0),
            ("segment_tendency", self.segment_tendency, 0.0, 1.0),
        ];
        for (name, v, lo, hi) in checks {
            if !(lo..=hi).contains(&v) {
                return Err(Error::Config(format!(
                    "style `{}`: {name} = {v} outside [{lo}, {hi}]",
                    self.writer_id
                )));
            }
        }
        if self.writer_id.is_empty() {
            return Err(Error::Config("style with empty writer id".into()));
        }
        Ok(())
    }
}

/// The default grid: slant {-15°, 0°, 15°} × curvature {-0.1, 0, 0.1, 0.2},
/// row by row, truncated to `n` writers (at most 12).
pub fn default_styles(n: usize) -> Vec<WriterStyle> {
    let mut out = Vec::new();
    for (i, slant) in [-15.0, 0.0, 15.0].into_iter().enumerate() {
        for (j, curvature) in [-0.1, 0.0, 0.1, 0.2].into_iter().enumerate() {
            let k = i * 4 + j;
            out.push(WriterStyle::new(
                format!("w{k:02}"),
                slant,
                curvature,
                1000 + k as u64,
            ));
        }
    }
    out.truncate(n);
    out
}

/// Lean of each zigzag piece away from vertical, radians.
const PIECE_LEAN: f64 = 0.35;

/// One stroke in local coordinates, starting at `start`.
///
/// Pieces alternate between going up and going down while drifting
/// sideways in a direction drawn per stroke. Each piece starts turned back
/// by half its total bend, so curvature bends the piece without changing
/// its chord direction.
fn stroke<R: Rng>(style: &WriterStyle, start: Point, rng: &mut R) -> Vec<Point> {
    let pieces = 1
        + (0..3)
            .filter(|_| rng.random_bool(style.segment_tendency))
            .count();
    let jitter = Normal::new(0.0, 0.12).expect("valid sigma");
    let drift = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let mut up = rng.random_bool(0.5);
    let phase = rng.random_range(0.0..2.0 * PI);

    let mut p = start;
    let mut s = 0.0;
    let mut pts = vec![(p, 0.0, s)];
    for _ in 0..pieces {
        let chord_dir = if up {
            PI / 2.0 - drift * PIECE_LEAN
        } else {
            -PI / 2.0 + drift * PIECE_LEAN
        } + jitter.sample(rng);
        up = !up;
        let len = style.stroke_scale * rng.random_range(4.0..8.0);
        let steps = (len / SAMPLE_STEP).ceil() as usize;
        let ds = len / steps as f64;
        let mut heading = chord_dir - style.curvature * len / 2.0;
        pts.last_mut().expect("non-empty").1 = heading;
        for _ in 0..steps {
            // Exact arc step: chord of a circle with the writer's curvature.
            let dtheta = style.curvature * ds;
            let chord = if dtheta.abs() < 1e-12 {
                ds
            } else {
                2.0 * (dtheta / 2.0).sin() / style.curvature
            };
            let mid = heading + dtheta / 2.0;
            p = Point::new(p.x + chord * mid.cos(), p.y + chord * mid.sin());
            heading += dtheta;
            s += ds;
            pts.push((p, heading, s));
        }
    }
    let last = pts.len() - 1;
    pts.iter()
        .enumerate()
        .map(|(i, &(p, h, s))| {
            // Endpoints stay put so tremor never moves a pen-down/pen-up.
            if style.tremor_amplitude == 0.0 || i == 0 || i == last {
                return p;
            }
            let off =
                style.tremor_amplitude * (2.0 * PI * style.tremor_frequency * s + phase).sin();
            Point::new(p.x - off * h.sin(), p.y + off * h.cos())
        })
        .collect()
}

fn rotate_about(points: &mut [Point], center: Point, angle: f64) {
    let (s, c) = angle.sin_cos();
    for p in points {
        let (dx, dy) = (p.x - center.x, p.y - center.y);
        *p = Point::new(center.x + c * dx - s * dy, center.y + s * dx + c * dy);
    }
}

/// A page of `chars` characters laid out in lines of ten. Pages depend only
/// on `(style, seed)`.
pub fn generate_page(style: &WriterStyle, chars: usize, seed: u64) -> Result<InkPage> {
    style.validate()?;
    if chars == 0 {
        return Err(Error::Config("a page needs at least one character".into()));
    }
    let mut rng = stream(style.seed, Purpose::Synth, seed);
    let mut strokes = Vec::new();
    for i in 0..chars {
        let origin = Point::new(
            (i % CHARS_PER_LINE) as f64 * CHAR_ADVANCE,
            (i / CHARS_PER_LINE) as f64 * LINE_ADVANCE,
        );
        let n = 1 + usize::from(rng.random_bool(0.5));
        let mut char_strokes: Vec<Vec<Point>> = (0..n)
            .map(|_| {
                let start = Point::new(
                    origin.x + rng.random_range(0.0..4.0),
                    origin.y + rng.random_range(-1.0..1.0),
                );
                stroke(style, start, &mut rng)
            })
            .collect();
        let all: Vec<Point> = char_strokes.iter().flatten().copied().collect();
        let bbox = crate::ink::BoundingBox::of(&all);
        for s in &mut char_strokes {
            rotate_about(s, bbox.center(), -style.slant_deg.to_radians());
        }
        strokes.extend(char_strokes.into_iter().map(Stroke::new));
    }
    Ok(InkPage {
        writer_id: style.writer_id.clone(),
        page_id: format!("{}-{seed}", style.writer_id),
        strokes,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub pages_per_writer: usize,
    pub chars_per_page: usize,
    #[serde(default = "one")]
    pub test_pages_per_writer: usize,
    /// Characters on each test page; defaults to `chars_per_page`.
    #[serde(default)]
    pub test_chars_per_page: Option<usize>,
}

fn one() -> usize {
    1
}

impl DatasetConfig {
    pub fn new(pages_per_writer: usize, chars_per_page: usize) -> Self {
        DatasetConfig {
            pages_per_writer,
            chars_per_page,
            test_pages_per_writer: 1,
            test_chars_per_page: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub train: Vec<InkPage>,
    pub test: Vec<InkPage>,
}

/// Training and test pages for every style. Page `j` of writer `i` is drawn
/// from seed `pair(seed, j)` of that writer's stream, with test pages
/// numbered after the training pages, so no two pages share a seed.
pub fn generate_dataset(
    styles: &[WriterStyle],
    config: &DatasetConfig,
    seed: u64,
) -> Result<Dataset> {
    if styles.len() < 2 {
        return Err(Error::Config("a dataset needs at least two writers".into()));
    }
    let mut seen = BTreeSet::new();
    for s in styles {
        if !seen.insert(s.writer_id.as_str()) {
            return Err(Error::Config(format!(
                "duplicate writer id `{}`",
                s.writer_id
            )));
        }
    }
    let test_chars = config.test_chars_per_page.unwrap_or(config.chars_per_page);
    let mut data = Dataset {
        train: Vec::new(),
        test: Vec::new(),
    };
    for style in styles {
        for j in 0..config.pages_per_writer {
            data.train.push(generate_page(
                style,
                config.chars_per_page,
                pair(seed, j as u64),
            )?);
        }
        for j in 0..config.test_pages_per_writer {
            let index = (config.pages_per_writer + j) as u64;
            data.test
                .push(generate_page(style, test_chars, pair(seed, index))?);
        }
    }
    Ok(data)
}

/// Length-weighted principal direction of a page's line elements, in
/// degrees within (-90, 90], ignoring pen direction.
pub fn principal_direction(page: &InkPage) -> f64 {
    let (mut s, mut c) = (0.0, 0.0);
    for st in &page.strokes {
        for w in st.points.windows(2) {
            let (dx, dy) = (w[1].x - w[0].x, w[1].y - w[0].y);
            let l = dx.hypot(dy);
            let a = 2.0 * dy.atan2(dx);
            s += l * a.sin();
            c += l * a.cos();
        }
    }
    0.5 * s.atan2(c).to_degrees()
}

/// Mean signed turning per unit length along the pen direction, skipping
/// sharp turns (more than 0.5 rad at one sample).
pub fn mean_curvature(page: &InkPage) -> f64 {
    let (mut turn, mut len) = (0.0, 0.0);
    for st in &page.strokes {
        for w in st.points.windows(3) {
            let a = (w[1].y - w[0].y).atan2(w[1].x - w[0].x);
            let b = (w[2].y - w[1].y).atan2(w[2].x - w[1].x);
            let mut d = b - a;
            while d > PI {
                d -= 2.0 * PI;
            }
            while d < -PI {
                d += 2.0 * PI;
            }
            if d.abs() < 0.5 {
                turn += d;
                len += w[1].dist(&w[2]);
            }
        }
    }
    if len > 0.0 {
        turn / len
    } else {
        0.0
    }
}
