//! Ground-truth and prediction parsing into the domain model.
//!
//! Label files are YOLO normalized-center text: one object per line,
//! `class cx cy w h`, all coordinates fractions of the image size.
//! Prediction files append a trailing confidence field. A JSON manifest
//! ties a class table and per-image file paths into a [`Dataset`].

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in normalized center format.
///
/// `cx`, `cy` lie in `[0, 1]`; `w`, `h` in `(0, 1]`. Corners derived from
/// the center may spill past the unit square (common in real annotations);
/// [`BoundingBox::clamp_to_unit`] trims them back.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
}

impl BoundingBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&cx) || !(0.0..=1.0).contains(&cy) {
            return Err(Error::InvalidBox {
                message: format!("center ({cx}, {cy}) outside [0, 1]"),
            });
        }
        if !(w > 0.0 && w <= 1.0) || !(h > 0.0 && h <= 1.0) {
            return Err(Error::InvalidBox {
                message: format!("dimensions ({w}, {h}) outside (0, 1]"),
            });
        }
        Ok(Self { cx, cy, w, h })
    }

    /// Builds a box from corner coordinates inside the unit square.
    pub fn from_corners(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        if !(x1 < x2 && y1 < y2) {
            return Err(Error::InvalidBox {
                message: format!("corners ({x1}, {y1})-({x2}, {y2}) not strictly ordered"),
            });
        }
        if x1 < 0.0 || y1 < 0.0 || x2 > 1.0 || y2 > 1.0 {
            return Err(Error::InvalidBox {
                message: format!("corners ({x1}, {y1})-({x2}, {y2}) outside [0, 1]"),
            });
        }
        Ok(Self {
            cx: (x1 + x2) / 2.0,
            cy: (y1 + y2) / 2.0,
            w: x2 - x1,
            h: y2 - y1,
        })
    }

    pub fn cx(&self) -> f64 {
        self.cx
    }
    pub fn cy(&self) -> f64 {
        self.cy
    }
    pub fn w(&self) -> f64 {
        self.w
    }
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn x1(&self) -> f64 {
        self.cx - self.w / 2.0
    }
    pub fn y1(&self) -> f64 {
        self.cy - self.h / 2.0
    }
    pub fn x2(&self) -> f64 {
        self.cx + self.w / 2.0
    }
    pub fn y2(&self) -> f64 {
        self.cy + self.h / 2.0
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Clamps spilled corners back onto the unit square.
    ///
    /// Returns the clamped box and whether anything moved. Clamping never
    /// collapses a box: with the center inside `[0, 1]` and positive
    /// dimensions, the trimmed corners stay strictly ordered.
    pub fn clamp_to_unit(&self) -> (Self, bool) {
        let (x1, y1, x2, y2) = (self.x1(), self.y1(), self.x2(), self.y2());
        let cx1 = x1.max(0.0);
        let cy1 = y1.max(0.0);
        let cx2 = x2.min(1.0);
        let cy2 = y2.min(1.0);
        if cx1 == x1 && cy1 == y1 && cx2 == x2 && cy2 == y2 {
            return (*self, false);
        }
        let clamped = Self {
            cx: (cx1 + cx2) / 2.0,
            cy: (cy1 + cy2) / 2.0,
            w: cx2 - cx1,
            h: cy2 - cy1,
        };
        (clamped, true)
    }
}

/// Class index into a dataset's class table.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct ClassId(pub u32);

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One entry of a class table: the index plus its label string.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassDef {
    pub id: ClassId,
    pub name: String,
}

impl ClassDef {
    pub fn new(id: u32, name: &str) -> Self {
        Self {
            id: ClassId(id),
            name: name.to_string(),
        }
    }
}

/// A dataset's class table; ids are unique within it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassTable {
    defs: Vec<ClassDef>,
}

impl ClassTable {
    pub fn new(defs: Vec<ClassDef>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for def in &defs {
            if !seen.insert(def.id) {
                return Err(Error::DuplicateClassId { id: def.id.0 });
            }
        }
        Ok(Self { defs })
    }

    pub fn contains(&self, id: ClassId) -> bool {
        self.defs.iter().any(|d| d.id == id)
    }

    pub fn get(&self, id: ClassId) -> Option<&ClassDef> {
        self.defs.iter().find(|d| d.id == id)
    }

    pub fn defs(&self) -> &[ClassDef] {
        &self.defs
    }

    pub fn len(&self) -> usize {
        self.defs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.defs.is_empty()
    }
}

/// A labeled object in an image.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthInstance {
    pub class: ClassId,
    pub bbox: BoundingBox,
}

/// A predicted object with its confidence score in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub class: ClassId,
    pub bbox: BoundingBox,
    pub confidence: f64,
}

/// One image's ground truth and (possibly absent) detections.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub image_id: String,
    pub ground_truth: Vec<GroundTruthInstance>,
    pub detections: Vec<Detection>,
    /// False when the manifest listed no prediction file for this image.
    pub has_predictions: bool,
}

/// The manifest file as written on disk: class table plus per-image paths.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub classes: Vec<ClassDef>,
    pub images: Vec<ManifestImage>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestImage {
    pub id: String,
    pub labels: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predictions: Option<PathBuf>,
}

/// A fully loaded and validated dataset. Immutable after load.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub classes: ClassTable,
    pub images: Vec<ImageRecord>,
}

impl Dataset {
    pub fn new(name: &str, classes: ClassTable, images: Vec<ImageRecord>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for image in &images {
            if image.image_id.is_empty() {
                return Err(Error::Manifest {
                    path: PathBuf::from(name),
                    message: "image id must be non-empty".to_string(),
                });
            }
            if !seen.insert(image.image_id.clone()) {
                return Err(Error::DuplicateImageId {
                    id: image.image_id.clone(),
                });
            }
        }
        Ok(Self {
            name: name.to_string(),
            classes,
            images,
        })
    }

    /// Number of ground-truth instances of `class` across all images.
    pub fn ground_truth_count(&self, class: ClassId) -> usize {
        self.images
            .iter()
            .map(|img| img.ground_truth.iter().filter(|g| g.class == class).count())
            .sum()
    }
}

fn parse_float(token: &str, line: usize, field: &'static str) -> Result<f64> {
    token.parse::<f64>().map_err(|_| Error::InvalidNumber {
        line,
        field,
        token: token.to_string(),
    })
}

fn check_range(
    value: f64,
    line: usize,
    field: &'static str,
    min_exclusive: bool,
) -> Result<f64> {
    let in_range = if min_exclusive {
        value > 0.0 && value <= 1.0
    } else {
        (0.0..=1.0).contains(&value)
    };
    if in_range {
        Ok(value)
    } else {
        Err(Error::OutOfRange {
            line,
            field,
            value,
            min: 0.0,
            max: 1.0,
        })
    }
}

struct ParsedBox {
    class: ClassId,
    bbox: BoundingBox,
    clamped: bool,
}

fn parse_box_fields(
    tokens: &[&str],
    line: usize,
    classes: &ClassTable,
) -> Result<ParsedBox> {
    let id: u32 = tokens[0].parse().map_err(|_| Error::InvalidNumber {
        line,
        field: "class id",
        token: tokens[0].to_string(),
    })?;
    let class = ClassId(id);
    if !classes.contains(class) {
        return Err(Error::UnknownClass { line, id });
    }
    let cx = check_range(parse_float(tokens[1], line, "cx")?, line, "cx", false)?;
    let cy = check_range(parse_float(tokens[2], line, "cy")?, line, "cy", false)?;
    let w = check_range(parse_float(tokens[3], line, "w")?, line, "w", true)?;
    let h = check_range(parse_float(tokens[4], line, "h")?, line, "h", true)?;
    let raw = BoundingBox::new(cx, cy, w, h).expect("fields validated above");
    let (bbox, clamped) = raw.clamp_to_unit();
    Ok(ParsedBox {
        class,
        bbox,
        clamped,
    })
}

/// Parses a YOLO label file: `class cx cy w h`, one object per line.
///
/// Blank lines are skipped; an empty file is a valid image with no objects.
/// Boxes whose corners spill past the unit square are clamped, with a
/// warning logged per file.
pub fn parse_label_file(text: &str, classes: &ClassTable) -> Result<Vec<GroundTruthInstance>> {
    let mut out = Vec::new();
    let mut clamped_lines = Vec::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let line = idx + 1;
        let tokens: Vec<&str> = raw_line.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        if tokens.len() != 5 {
            return Err(Error::FieldCount {
                line,
                expected: 5,
                found: tokens.len(),
            });
        }
        let parsed = parse_box_fields(&tokens, line, classes)?;
        if parsed.clamped {
            clamped_lines.push(line);
        }
        out.push(GroundTruthInstance {
            class: parsed.class,
            bbox: parsed.bbox,
        });
    }
    if !clamped_lines.is_empty() {
        log::warn!(
            "clamped {} box(es) to the unit square (lines {:?})",
            clamped_lines.len(),
            clamped_lines
        );
    }
    Ok(out)
}

/// Parses a prediction file: `class cx cy w h confidence`, order preserved.
pub fn parse_prediction_file(text: &str, classes: &ClassTable) -> Result<Vec<Detection>> {
    let mut out = Vec::new();
    let mut clamped_lines = Vec::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let line = idx + 1;
        let tokens: Vec<&str> = raw_line.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        if tokens.len() != 6 {
            return Err(Error::FieldCount {
                line,
                expected: 6,
                found: tokens.len(),
            });
        }
        let parsed = parse_box_fields(&tokens, line, classes)?;
        let confidence = check_range(
            parse_float(tokens[5], line, "confidence")?,
            line,
            "confidence",
            false,
        )?;
        if parsed.clamped {
            clamped_lines.push(line);
        }
        out.push(Detection {
            class: parsed.class,
            bbox: parsed.bbox,
            confidence,
        });
    }
    if !clamped_lines.is_empty() {
        log::warn!(
            "clamped {} box(es) to the unit square (lines {:?})",
            clamped_lines.len(),
            clamped_lines
        );
    }
    Ok(out)
}

/// Serializes ground truth back to label-file text (6 decimal places).
pub fn format_label_file(items: &[GroundTruthInstance]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&format!(
            "{} {:.6} {:.6} {:.6} {:.6}\n",
            item.class,
            item.bbox.cx(),
            item.bbox.cy(),
            item.bbox.w(),
            item.bbox.h()
        ));
    }
    out
}

/// Serializes detections back to prediction-file text (6 decimal places).
pub fn format_prediction_file(items: &[Detection]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&format!(
            "{} {:.6} {:.6} {:.6} {:.6} {:.6}\n",
            item.class,
            item.bbox.cx(),
            item.bbox.cy(),
            item.bbox.w(),
            item.bbox.h(),
            item.confidence
        ));
    }
    out
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

impl DatasetManifest {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = read_file(path)?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Loads a manifest and resolves every referenced label/prediction file.
///
/// Paths inside the manifest are taken relative to the manifest's own
/// directory. Images without a prediction entry get an empty detection
/// list and are flagged via [`ImageRecord::has_predictions`].
pub fn load_manifest(path: &Path) -> Result<Dataset> {
    let manifest = DatasetManifest::from_path(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    load_dataset(&manifest, base).map_err(|e| match e {
        e @ (Error::Io { .. } | Error::InFile { .. }) => e,
        other => other.in_file(path),
    })
}

/// Resolves a parsed manifest against `base` (usually the manifest's directory).
pub fn load_dataset(manifest: &DatasetManifest, base: &Path) -> Result<Dataset> {
    let classes = ClassTable::new(manifest.classes.clone())?;
    let mut images = Vec::with_capacity(manifest.images.len());
    for entry in &manifest.images {
        let label_path = base.join(&entry.labels);
        let label_text = read_file(&label_path)?;
        let ground_truth =
            parse_label_file(&label_text, &classes).map_err(|e| e.in_file(&label_path))?;
        let (detections, has_predictions) = match &entry.predictions {
            Some(rel) => {
                let pred_path = base.join(rel);
                let pred_text = read_file(&pred_path)?;
                let dets = parse_prediction_file(&pred_text, &classes)
                    .map_err(|e| e.in_file(&pred_path))?;
                (dets, true)
            }
            None => (Vec::new(), false),
        };
        images.push(ImageRecord {
            image_id: entry.id.clone(),
            ground_truth,
            detections,
            has_predictions,
        });
    }
    Dataset::new(&manifest.name, classes, images)
}
