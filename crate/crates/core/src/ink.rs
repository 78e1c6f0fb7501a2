//! Ink data model and the JSON ink format.
//!
//! Pages are stored as
//! `{"pages":[{"writer_id":..,"page_id":..,"strokes":[[[x,y],..],..]}]}`.
//! Pseudo-characters reuse the same layout with one entry per character plus
//! a `source_page` label and a `corner_indices` array parallel to `strokes`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn dist(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

impl From<[f64; 2]> for Point {
    fn from([x, y]: [f64; 2]) -> Self {
        Point { x, y }
    }
}

impl From<Point> for [f64; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

/// A pen-down trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Stroke {
    pub points: Vec<Point>,
}

impl Stroke {
    pub fn new(points: Vec<Point>) -> Self {
        Stroke { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn arc_length(&self) -> f64 {
        polyline_length(&self.points)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InkPage {
    pub writer_id: String,
    pub page_id: String,
    pub strokes: Vec<Stroke>,
}

impl InkPage {
    /// Checks the page invariants; `index` is only used in messages.
    pub fn validate(&self, index: usize) -> Result<()> {
        if self.writer_id.is_empty() {
            return Err(Error::Validation(format!("page {index}: empty writer_id")));
        }
        if self.strokes.is_empty() {
            return Err(Error::Validation(format!(
                "page {index} (`{}`): no strokes",
                self.page_id
            )));
        }
        for (s, stroke) in self.strokes.iter().enumerate() {
            if stroke.len() < 2 {
                return Err(Error::Validation(format!(
                    "page {index} (`{}`): stroke {s} has {} point(s), need at least 2",
                    self.page_id,
                    stroke.len()
                )));
            }
            if let Some(p) = stroke.points.iter().position(|p| !p.is_finite()) {
                return Err(Error::Validation(format!(
                    "page {index} (`{}`): stroke {s} point {p} is not finite",
                    self.page_id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct InkDocument {
    pages: Vec<InkPage>,
}

pub fn parse_ink(text: &str) -> Result<Vec<InkPage>> {
    let doc: InkDocument = serde_json::from_str(text).map_err(Error::json)?;
    for (i, page) in doc.pages.iter().enumerate() {
        page.validate(i)?;
    }
    Ok(doc.pages)
}

pub fn ink_to_string(pages: &[InkPage]) -> Result<String> {
    for (i, page) in pages.iter().enumerate() {
        page.validate(i)?;
    }
    let doc = InkDocumentRef { pages };
    Ok(serde_json::to_string(&doc).expect("ink serialization cannot fail"))
}

#[derive(Serialize)]
struct InkDocumentRef<'a> {
    pages: &'a [InkPage],
}

/// Reads every page of an ink file, preserving stroke and point order.
pub fn read_ink(path: impl AsRef<Path>) -> Result<Vec<InkPage>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_ink(&text)
}

pub fn write_ink(pages: &[InkPage], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = ink_to_string(pages)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// A stroke split into corner-delimited segments.
///
/// `corners` holds strictly increasing interior point indices. Segment `j`
/// spans points `bounds[j]..=bounds[j + 1]` where `bounds` is
/// `[0, corners.., len - 1]`, so neighbouring segments share their corner.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentedStroke {
    pub points: Vec<Point>,
    pub corners: Vec<usize>,
}

impl SegmentedStroke {
    pub fn new(points: Vec<Point>, corners: Vec<usize>) -> Result<Self> {
        let s = SegmentedStroke { points, corners };
        s.validate()?;
        Ok(s)
    }

    /// A single-segment stroke.
    pub fn whole(points: Vec<Point>) -> Self {
        SegmentedStroke {
            points,
            corners: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.points.len();
        if n < 2 {
            return Err(Error::Validation(format!(
                "segmented stroke has {n} point(s), need at least 2"
            )));
        }
        let mut prev = 0;
        for &c in &self.corners {
            if c <= prev || c >= n - 1 {
                return Err(Error::Validation(format!(
                    "corner index {c} out of order or outside (0, {})",
                    n - 1
                )));
            }
            prev = c;
        }
        Ok(())
    }

    pub fn segment_count(&self) -> usize {
        self.corners.len() + 1
    }

    /// Inclusive `(start, end)` point index pairs, one per segment.
    pub fn segment_bounds(&self) -> Vec<(usize, usize)> {
        let mut bounds = Vec::with_capacity(self.corners.len() + 2);
        bounds.push(0);
        bounds.extend_from_slice(&self.corners);
        bounds.push(self.points.len() - 1);
        bounds.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn segment_points(&self, segment: usize) -> &[Point] {
        let (a, b) = self.segment_bounds()[segment];
        &self.points[a..=b]
    }
}

/// A square-ish group of segments cut from a page.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoCharacter {
    pub writer_id: String,
    pub source_page: String,
    pub strokes: Vec<SegmentedStroke>,
}

impl PseudoCharacter {
    pub fn segment_counts(&self) -> Vec<usize> {
        self.strokes.iter().map(|s| s.segment_count()).collect()
    }

    pub fn total_segments(&self) -> usize {
        self.strokes.iter().map(|s| s.segment_count()).sum()
    }

    pub fn points(&self) -> impl Iterator<Item = &Point> {
        self.strokes.iter().flat_map(|s| s.points.iter())
    }

    pub fn bounding_box(&self) -> BoundingBox {
        BoundingBox::of(self.points())
    }

    pub fn validate(&self) -> Result<()> {
        if self.strokes.is_empty() {
            return Err(Error::Validation("character has no strokes".into()));
        }
        self.strokes.iter().try_for_each(|s| s.validate())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundingBox {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl BoundingBox {
    /// Bounding box of the points; an empty iterator gives an inverted box.
    pub fn of<'a>(points: impl IntoIterator<Item = &'a Point>) -> Self {
        let mut b = BoundingBox {
            min_x: f64::INFINITY,
            min_y: f64::INFINITY,
            max_x: f64::NEG_INFINITY,
            max_y: f64::NEG_INFINITY,
        };
        for p in points {
            b.min_x = b.min_x.min(p.x);
            b.min_y = b.min_y.min(p.y);
            b.max_x = b.max_x.max(p.x);
            b.max_y = b.max_y.max(p.y);
        }
        b
    }

    pub fn width(&self) -> f64 {
        self.max_x - self.min_x
    }

    pub fn height(&self) -> f64 {
        self.max_y - self.min_y
    }

    pub fn center(&self) -> Point {
        Point::new(
            0.5 * (self.min_x + self.max_x),
            0.5 * (self.min_y + self.max_y),
        )
    }

    pub fn union(&self, other: &BoundingBox) -> BoundingBox {
        BoundingBox {
            min_x: self.min_x.min(other.min_x),
            min_y: self.min_y.min(other.min_y),
            max_x: self.max_x.max(other.max_x),
            max_y: self.max_y.max(other.max_y),
        }
    }
}

pub fn polyline_length(points: &[Point]) -> f64 {
    points.windows(2).map(|w| w[0].dist(&w[1])).sum()
}

#[derive(Serialize, Deserialize)]
struct CharEntry {
    writer_id: String,
    page_id: String,
    source_page: String,
    strokes: Vec<Vec<Point>>,
    corner_indices: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct CharDocument {
    pages: Vec<CharEntry>,
}

pub fn chars_to_string(chars: &[PseudoCharacter]) -> Result<String> {
    let mut pages = Vec::with_capacity(chars.len());
    for (i, c) in chars.iter().enumerate() {
        c.validate()
            .map_err(|e| Error::Validation(format!("character {i}: {e}")))?;
        pages.push(CharEntry {
            writer_id: c.writer_id.clone(),
            page_id: format!("{}#{i}", c.source_page),
            source_page: c.source_page.clone(),
            strokes: c.strokes.iter().map(|s| s.points.clone()).collect(),
            corner_indices: c.strokes.iter().map(|s| s.corners.clone()).collect(),
        });
    }
    Ok(serde_json::to_string(&CharDocument { pages }).expect("serialization cannot fail"))
}

pub fn parse_chars(text: &str) -> Result<Vec<PseudoCharacter>> {
    let doc: CharDocument = serde_json::from_str(text).map_err(Error::json)?;
    doc.pages
        .into_iter()
        .enumerate()
        .map(|(i, e)| {
            if e.corner_indices.len() != e.strokes.len() {
                return Err(Error::Validation(format!(
                    "character {i}: {} strokes but {} corner lists",
                    e.strokes.len(),
                    e.corner_indices.len()
                )));
            }
            let strokes = e
                .strokes
                .into_iter()
                .zip(e.corner_indices)
                .enumerate()
                .map(|(s, (points, corners))| {
                    SegmentedStroke::new(points, corners).map_err(|err| {
                        Error::Validation(format!("character {i} stroke {s}: {err}"))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let c = PseudoCharacter {
                writer_id: e.writer_id,
                source_page: e.source_page,
                strokes,
            };
            c.validate()
                .map_err(|err| Error::Validation(format!("character {i}: {err}")))?;
            Ok(c)
        })
        .collect()
}

pub fn read_chars(path: impl AsRef<Path>) -> Result<Vec<PseudoCharacter>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_chars(&text)
}

pub fn write_chars(chars: &[PseudoCharacter], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = chars_to_string(chars)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
