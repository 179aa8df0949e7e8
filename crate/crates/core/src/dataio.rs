//! Fixed registries (keypoints, ethogram), the per-sequence annotation
//! document, detections documents and MOT-style CSV.
//!
//! All formats are UTF-8 text with `\n` newlines. JSON documents carry a
//! `schema_version` and reject unknown fields; parse failures report the
//! JSON path of the offending field. The JSON-Schema descriptions live in
//! `schemas/` next to this crate.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array4;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BoxXYXY, ImageSize};
use crate::metrics::{Keypoint, TrackedBox};

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_STRIDE: u64 = 10;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{field}: {message} (line {line}, column {column})")]
    Json { field: String, line: usize, column: usize, message: String },
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
    #[error("line {line}: {message}")]
    Csv { line: usize, message: String },
    #[error("unknown {what} {key:?}")]
    Unknown { what: &'static str, key: String },
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> DataError {
    DataError::Invalid { field: field.into(), message: message.into() }
}

pub fn read_text(path: &Path) -> Result<String, DataError> {
    std::fs::read_to_string(path).map_err(|source| DataError::Io { path: path.to_path_buf(), source })
}

pub fn write_text(path: &Path, text: &str) -> Result<(), DataError> {
    std::fs::write(path, text).map_err(|source| DataError::Io { path: path.to_path_buf(), source })
}

/// Deserializes with the JSON path of any failing field in the error.
pub fn from_json_str<T: serde::de::DeserializeOwned>(text: &str) -> Result<T, DataError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        let inner = e.into_inner();
        DataError::Json { field, line: inner.line(), column: inner.column(), message: inner.to_string() }
    })
}

pub fn to_json_string<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("documents serialize");
    s.push('\n');
    s
}

// ---------------------------------------------------------------- keypoints

pub const NUM_JOINTS: usize = 16;

/// Joint names in storage order.
pub const KEYPOINT_NAMES: [&str; NUM_JOINTS] = [
    "hip-root",
    "r-knee",
    "r-ankle",
    "l-knee",
    "l-ankle",
    "neck",
    "upper-lip",
    "lower-lip",
    "r-eye",
    "l-eye",
    "r-shoulder",
    "r-elbow",
    "r-wrist",
    "l-shoulder",
    "l-elbow",
    "l-wrist",
];

pub fn joint_index(name: &str) -> Result<usize, DataError> {
    KEYPOINT_NAMES
        .iter()
        .position(|n| *n == name)
        .ok_or_else(|| DataError::Unknown { what: "joint", key: name.to_string() })
}

// ---------------------------------------------------------------- ethogram

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Supercategory {
    Locomotion,
    Object,
    Social,
    Others,
}

impl Supercategory {
    pub const ALL: [Supercategory; 4] = [Supercategory::Locomotion, Supercategory::Object, Supercategory::Social, Supercategory::Others];
}

/// Role of a social class that has a named counterpart.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SocialRole {
    Performer,
    Receiver,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BehaviorClass {
    pub index: usize,
    pub name: &'static str,
    pub category: Supercategory,
    /// `(role, index of the opposite role)`
    pub pairing: Option<(SocialRole, usize)>,
}

const fn class(index: usize, name: &'static str, category: Supercategory, pairing: Option<(SocialRole, usize)>) -> BehaviorClass {
    BehaviorClass { index, name, category, pairing }
}

use SocialRole::{Performer as P, Receiver as R};
use Supercategory::{Locomotion as L, Object as O, Others as X, Social as S};

/// The 23 behavior classes.
pub static ETHOGRAM: [BehaviorClass; 23] = [
    class(0, "moving", L, None),
    class(1, "climbing", L, None),
    class(2, "resting", L, None),
    class(3, "sleeping", L, None),
    class(4, "solitary object playing", O, None),
    class(5, "eating", O, None),
    class(6, "manipulating object", O, None),
    class(7, "grooming", S, Some((P, 8))),
    class(8, "being groomed", S, Some((R, 7))),
    class(9, "aggressing", S, None),
    class(10, "embracing", S, None),
    class(11, "begging", S, Some((P, 12))),
    class(12, "being begged from", S, Some((R, 11))),
    class(13, "taking object", S, Some((P, 14))),
    class(14, "losing object", S, Some((R, 13))),
    class(15, "carrying", S, Some((P, 16))),
    class(16, "being carried", S, Some((R, 15))),
    class(17, "nursing", S, Some((P, 18))),
    class(18, "being nursed", S, Some((R, 17))),
    class(19, "playing", S, None),
    class(20, "touching", S, None),
    class(21, "erection", X, None),
    class(22, "displaying", X, None),
];

pub const NUM_BEHAVIORS: usize = 23;
pub const BEHAVIOR_MOVING: usize = 0;
pub const BEHAVIOR_RESTING: usize = 2;
pub const BEHAVIOR_EATING: usize = 5;
pub const BEHAVIOR_CARRYING: usize = 15;
pub const BEHAVIOR_PLAYING: usize = 19;

pub fn ethogram_lookup(index: usize) -> Result<&'static BehaviorClass, DataError> {
    ETHOGRAM.get(index).ok_or_else(|| DataError::Unknown { what: "behavior class", key: index.to_string() })
}

pub fn ethogram_by_name(name: &str) -> Result<&'static BehaviorClass, DataError> {
    ETHOGRAM
        .iter()
        .find(|c| c.name == name)
        .ok_or_else(|| DataError::Unknown { what: "behavior class", key: name.to_string() })
}

pub fn supercategory_indices(cat: Supercategory) -> Vec<usize> {
    ETHOGRAM.iter().filter(|c| c.category == cat).map(|c| c.index).collect()
}

/// Index of the opposite role for paired social classes.
pub fn counterpart(index: usize) -> Option<usize> {
    ETHOGRAM.get(index).and_then(|c| c.pairing).map(|(_, other)| other)
}

// ---------------------------------------------------------------- annotations

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoxVisibility {
    Full,
    Truncated,
    Occluded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceAnnotation {
    pub track_id: u64,
    pub name: Option<String>,
    pub bbox: BoxXYXY,
    pub visibility: BoxVisibility,
    pub pose: Option<Vec<Keypoint>>,
    /// Multi-hot over the ethogram.
    pub behaviors: [bool; NUM_BEHAVIORS],
}

impl InstanceAnnotation {
    pub fn active_behaviors(&self) -> Vec<usize> {
        (0..NUM_BEHAVIORS).filter(|&k| self.behaviors[k]).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceAnnotation {
    pub sequence_id: String,
    pub image_size: ImageSize,
    pub frame_count: u64,
    pub stride: u64,
    pub frames: BTreeMap<u64, Vec<InstanceAnnotation>>,
}

impl SequenceAnnotation {
    /// Every annotated box as a [`TrackedBox`] with 0/1 behavior scores.
    pub fn tracked_boxes(&self) -> Vec<TrackedBox> {
        self.frames
            .iter()
            .flat_map(|(&frame, list)| {
                list.iter().map(move |a| TrackedBox {
                    frame,
                    id: a.track_id,
                    bbox: a.bbox,
                    conf: Some(1.0),
                    name: a.name.clone(),
                    behaviors: Some(a.behaviors.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()),
                    pose: a.pose.clone(),
                })
            })
            .collect()
    }

    pub fn annotated_frames(&self) -> BTreeSet<u64> {
        self.frames.keys().copied().collect()
    }

    /// Identity names by track id.
    pub fn identities(&self) -> BTreeMap<u64, String> {
        let mut out = BTreeMap::new();
        for a in self.frames.values().flatten() {
            if let Some(n) = &a.name {
                out.insert(a.track_id, n.clone());
            }
        }
        out
    }

    pub fn box_count(&self) -> usize {
        self.frames.values().map(Vec::len).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnnotationFile {
    schema_version: u32,
    sequence_id: String,
    image_size: ImageSize,
    frame_count: u64,
    #[serde(default = "default_stride")]
    stride: u64,
    frames: Vec<AnnotatedFrame>,
}

fn default_stride() -> u64 {
    DEFAULT_STRIDE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnnotatedFrame {
    frame: u64,
    instances: Vec<InstanceRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceRecord {
    track_id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    #[serde(rename = "box")]
    bbox: [f64; 4],
    visibility: BoxVisibility,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pose: Option<Vec<(f64, f64, u8)>>,
    behaviors: Vec<usize>,
}

fn check_pose(field: &str, pose: &[(f64, f64, u8)]) -> Result<Vec<Keypoint>, DataError> {
    if pose.len() != NUM_JOINTS {
        return Err(invalid(field, format!("expected {NUM_JOINTS} joints, got {}", pose.len())));
    }
    pose.iter()
        .enumerate()
        .map(|(j, &(x, y, v))| {
            if v > 2 {
                return Err(invalid(format!("{field}[{j}]"), format!("visibility must be 0, 1 or 2, got {v}")));
            }
            if !x.is_finite() || !y.is_finite() {
                return Err(invalid(format!("{field}[{j}]"), "coordinates must be finite"));
            }
            Ok(Keypoint { x, y, v })
        })
        .collect()
}

fn check_box(field: &str, b: [f64; 4]) -> Result<BoxXYXY, DataError> {
    let bbox = BoxXYXY::new(b[0], b[1], b[2], b[3]).map_err(|e| invalid(field, e.to_string()))?;
    if bbox.is_degenerate() {
        return Err(invalid(field, "box has zero area"));
    }
    Ok(bbox)
}

impl SequenceAnnotation {
    fn from_file(f: AnnotationFile) -> Result<Self, DataError> {
        if f.schema_version != SCHEMA_VERSION {
            return Err(invalid("schema_version", format!("unsupported version {}", f.schema_version)));
        }
        f.image_size.validate().map_err(|e| invalid("image_size", e.to_string()))?;
        if f.stride == 0 {
            return Err(invalid("stride", "must be >= 1"));
        }
        let mut frames = BTreeMap::new();
        for (fi, fr) in f.frames.iter().enumerate() {
            let base = format!("frames[{fi}]");
            if fr.frame >= f.frame_count {
                return Err(invalid(format!("{base}.frame"), format!("frame {} is beyond frame_count {}", fr.frame, f.frame_count)));
            }
            if fr.frame % f.stride != 0 {
                return Err(invalid(format!("{base}.frame"), format!("frame {} is not a multiple of stride {}", fr.frame, f.stride)));
            }
            let mut ids = BTreeSet::new();
            let mut list = Vec::with_capacity(fr.instances.len());
            for (ii, r) in fr.instances.iter().enumerate() {
                let at = format!("{base}.instances[{ii}]");
                if !ids.insert(r.track_id) {
                    return Err(invalid(format!("{at}.track_id"), format!("track id {} repeats within the frame", r.track_id)));
                }
                let bbox = check_box(&format!("{at}.box"), r.bbox)?;
                let mut behaviors = [false; NUM_BEHAVIORS];
                for (bi, &k) in r.behaviors.iter().enumerate() {
                    if k >= NUM_BEHAVIORS {
                        return Err(invalid(format!("{at}.behaviors[{bi}]"), format!("behavior index {k} is out of range 0..{NUM_BEHAVIORS}")));
                    }
                    if behaviors[k] {
                        return Err(invalid(format!("{at}.behaviors[{bi}]"), format!("behavior index {k} repeats")));
                    }
                    behaviors[k] = true;
                }
                let pose = r.pose.as_deref().map(|p| check_pose(&format!("{at}.pose"), p)).transpose()?;
                list.push(InstanceAnnotation { track_id: r.track_id, name: r.name.clone(), bbox, visibility: r.visibility, pose, behaviors });
            }
            if frames.insert(fr.frame, list).is_some() {
                return Err(invalid(format!("{base}.frame"), format!("frame {} listed twice", fr.frame)));
            }
        }
        let seq = SequenceAnnotation { sequence_id: f.sequence_id, image_size: f.image_size, frame_count: f.frame_count, stride: f.stride, frames };
        let mut names: BTreeMap<u64, &str> = BTreeMap::new();
        for a in seq.frames.values().flatten() {
            if let Some(n) = a.name.as_deref() {
                if names.insert(a.track_id, n).is_some_and(|old| old != n) {
                    return Err(invalid("frames", format!("track {} carries two identity names", a.track_id)));
                }
            }
        }
        Ok(seq)
    }

    fn to_file(&self) -> AnnotationFile {
        AnnotationFile {
            schema_version: SCHEMA_VERSION,
            sequence_id: self.sequence_id.clone(),
            image_size: self.image_size,
            frame_count: self.frame_count,
            stride: self.stride,
            frames: self
                .frames
                .iter()
                .map(|(&frame, list)| AnnotatedFrame {
                    frame,
                    instances: list
                        .iter()
                        .map(|a| InstanceRecord {
                            track_id: a.track_id,
                            name: a.name.clone(),
                            bbox: [a.bbox.x1, a.bbox.y1, a.bbox.x2, a.bbox.y2],
                            visibility: a.visibility,
                            pose: a.pose.as_ref().map(|p| p.iter().map(|k| (k.x, k.y, k.v)).collect()),
                            behaviors: a.active_behaviors(),
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, DataError> {
        Self::from_file(from_json_str(text)?)
    }

    pub fn to_json(&self) -> String {
        to_json_string(&self.to_file())
    }
}

pub fn parse_annotations(path: &Path) -> Result<SequenceAnnotation, DataError> {
    SequenceAnnotation::from_json(&read_text(path)?)
}

pub fn write_annotations(path: &Path, seq: &SequenceAnnotation) -> Result<(), DataError> {
    write_text(path, &seq.to_json())
}

// ---------------------------------------------------------------- detections

/// One detection as stored on disk and fed to the tracker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionRecord {
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    pub class_conf: f64,
    pub behavior_scores: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub track_id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose: Option<Vec<(f64, f64, u8)>>,
}

impl DetectionRecord {
    pub fn bbox(&self) -> BoxXYXY {
        BoxXYXY { x1: self.bbox[0], y1: self.bbox[1], x2: self.bbox[2], y2: self.bbox[3] }
    }

    pub fn keypoints(&self) -> Option<Vec<Keypoint>> {
        self.pose.as_ref().map(|p| p.iter().map(|&(x, y, v)| Keypoint { x, y, v }).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionFrame {
    pub frame: u64,
    pub detections: Vec<DetectionRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionsFile {
    pub schema_version: u32,
    pub sequence_id: String,
    pub image_size: ImageSize,
    pub frames: Vec<DetectionFrame>,
}

impl DetectionsFile {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(invalid("schema_version", format!("unsupported version {}", self.schema_version)));
        }
        let mut last: Option<u64> = None;
        for (fi, fr) in self.frames.iter().enumerate() {
            if last.is_some_and(|l| fr.frame <= l) {
                return Err(invalid(format!("frames[{fi}].frame"), "frames must be strictly increasing"));
            }
            last = Some(fr.frame);
            for (di, d) in fr.detections.iter().enumerate() {
                let at = format!("frames[{fi}].detections[{di}]");
                check_box(&format!("{at}.box"), d.bbox)?;
                if !(0.0..=1.0).contains(&d.class_conf) {
                    return Err(invalid(format!("{at}.class_conf"), "must be in [0, 1]"));
                }
                if d.behavior_scores.len() != NUM_BEHAVIORS {
                    return Err(invalid(format!("{at}.behavior_scores"), format!("expected {NUM_BEHAVIORS} scores, got {}", d.behavior_scores.len())));
                }
                if let Some(bi) = d.behavior_scores.iter().position(|s| !(0.0..=1.0).contains(s)) {
                    return Err(invalid(format!("{at}.behavior_scores[{bi}]"), "must be in [0, 1]"));
                }
                if let Some(p) = &d.pose {
                    check_pose(&format!("{at}.pose"), p)?;
                }
            }
            let ids: Vec<u64> = fr.detections.iter().filter_map(|d| d.track_id).collect();
            if ids.iter().collect::<BTreeSet<_>>().len() != ids.len() {
                return Err(invalid(format!("frames[{fi}]"), "track ids repeat within the frame"));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, DataError> {
        let f: DetectionsFile = from_json_str(text)?;
        f.validate()?;
        Ok(f)
    }

    pub fn to_json(&self) -> String {
        to_json_string(self)
    }

    /// Detections that carry a track id, as tracked boxes.
    pub fn tracked_boxes(&self) -> Vec<TrackedBox> {
        self.frames
            .iter()
            .flat_map(|fr| {
                fr.detections.iter().filter_map(move |d| {
                    d.track_id.map(|id| TrackedBox {
                        frame: fr.frame,
                        id,
                        bbox: d.bbox(),
                        conf: Some(d.class_conf),
                        name: None,
                        behaviors: Some(d.behavior_scores.clone()),
                        pose: d.keypoints(),
                    })
                })
            })
            .collect()
    }
}

pub fn parse_detections(path: &Path) -> Result<DetectionsFile, DataError> {
    DetectionsFile::from_json(&read_text(path)?)
}

// ---------------------------------------------------------------- video

/// A `T x H x W x 3` clip stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoFile {
    pub schema_version: u32,
    pub shape: [usize; 4],
    pub data: Vec<f64>,
}

impl VideoFile {
    pub fn from_array(a: &Array4<f64>) -> Self {
        let d = a.dim();
        VideoFile { schema_version: SCHEMA_VERSION, shape: [d.0, d.1, d.2, d.3], data: a.iter().copied().collect() }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(invalid("schema_version", format!("unsupported version {}", self.schema_version)));
        }
        if self.shape[3] != 3 {
            return Err(invalid("shape[3]", format!("expected 3 channels, got {}", self.shape[3])));
        }
        let n: usize = self.shape.iter().product();
        if self.data.len() != n {
            return Err(invalid("data", format!("shape {:?} needs {n} values, got {}", self.shape, self.data.len())));
        }
        if let Some(i) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("data[{i}]"), "must be finite"));
        }
        Ok(())
    }

    pub fn to_array(&self) -> Array4<f64> {
        let [t, h, w, c] = self.shape;
        Array4::from_shape_vec((t, h, w, c), self.data.clone()).expect("validated shape")
    }

    pub fn from_json(text: &str) -> Result<Self, DataError> {
        let f: VideoFile = from_json_str(text)?;
        f.validate()?;
        Ok(f)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("videos serialize") + "\n"
    }
}

pub fn parse_video(path: &Path) -> Result<VideoFile, DataError> {
    VideoFile::from_json(&read_text(path)?)
}

// ---------------------------------------------------------------- MOT CSV

/// Renders `frame,id,x,y,w,h,conf,-1,-1,-1` rows with 1-based frame and id,
/// sorted by frame then id. Missing confidences are written as 1.
pub fn write_mot_csv(tracks: &[TrackedBox]) -> String {
    let mut rows: Vec<&TrackedBox> = tracks.iter().collect();
    rows.sort_by_key(|t| (t.frame, t.id));
    let mut out = String::new();
    for t in rows {
        let b = &t.bbox;
        writeln!(
            out,
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},-1,-1,-1",
            t.frame + 1,
            t.id + 1,
            b.x1,
            b.y1,
            b.width(),
            b.height(),
            t.conf.unwrap_or(1.0)
        )
        .expect("writing to a String");
    }
    out
}

pub fn parse_mot_csv(text: &str) -> Result<Vec<TrackedBox>, DataError> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| DataError::Csv { line: line_no, message };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 10 {
            return Err(err(format!("expected 10 fields, got {}", fields.len())));
        }
        let int = |i: usize, what: &str| -> Result<u64, DataError> {
            let v: u64 = fields[i].parse().map_err(|_| err(format!("{what} {:?} is not a positive integer", fields[i])))?;
            if v == 0 {
                return Err(err(format!("{what} is 1-based, got 0")));
            }
            Ok(v - 1)
        };
        let real = |i: usize, what: &str| -> Result<f64, DataError> {
            let v: f64 = fields[i].parse().map_err(|_| err(format!("{what} {:?} is not a number", fields[i])))?;
            if !v.is_finite() {
                return Err(err(format!("{what} is not finite")));
            }
            Ok(v)
        };
        let frame = int(0, "frame")?;
        let id = int(1, "id")?;
        let (x, y, w, h) = (real(2, "x")?, real(3, "y")?, real(4, "w")?, real(5, "h")?);
        let conf = real(6, "conf")?;
        let bbox = BoxXYXY::from_xywh(x, y, w, h).map_err(|e| err(e.to_string()))?;
        out.push(TrackedBox { frame, id, bbox, conf: Some(conf), name: None, behaviors: None, pose: None });
    }
    Ok(out)
}

pub fn read_mot_csv(path: &Path) -> Result<Vec<TrackedBox>, DataError> {
    parse_mot_csv(&read_text(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
  "schema_version": 1,
  "sequence_id": "s1",
  "image_size": {"width": 640, "height": 480},
  "frame_count": 30,
  "stride": 10,
  "frames": [
    {"frame": 10, "instances": [
      {"track_id": 3, "name": "Swela", "box": [10, 20, 110, 220], "visibility": "full", "behaviors": [15, 0]}
    ]}
  ]
}"#;

    #[test]
    fn minimal_round_trip() {
        let a = SequenceAnnotation::from_json(MINIMAL).unwrap();
        let inst = &a.frames[&10][0];
        // carrying + moving
        assert_eq!(inst.active_behaviors(), vec![0, 15]);
        let b = SequenceAnnotation::from_json(&a.to_json()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_json(), b.to_json());
        assert_eq!(a.identities()[&3], "Swela");
    }

    #[test]
    fn behavior_out_of_range_names_field() {
        let bad = MINIMAL.replace("[15, 0]", "[15, 23]");
        let err = SequenceAnnotation::from_json(&bad).unwrap_err();
        match err {
            DataError::Invalid { field, .. } => assert_eq!(field, "frames[0].instances[0].behaviors[1]"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn unknown_field_reports_path() {
        let bad = MINIMAL.replace("\"visibility\": \"full\"", "\"visibility\": \"full\", \"colour\": 1");
        match SequenceAnnotation::from_json(&bad).unwrap_err() {
            DataError::Json { field, line, .. } => {
                assert!(field.starts_with("frames[0].instances[0]"), "{field}");
                assert!(line > 1);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn invariants_enforced() {
        for (from, to) in [
            ("\"frame\": 10", "\"frame\": 15"),
            ("\"frame\": 10", "\"frame\": 30"),
            ("[10, 20, 110, 220]", "[10, 20, 10, 220]"),
            ("\"visibility\": \"full\"", "\"visibility\": \"hidden\""),
            ("\"schema_version\": 1", "\"schema_version\": 2"),
            ("[15, 0]", "[0, 0]"),
        ] {
            assert!(SequenceAnnotation::from_json(&MINIMAL.replace(from, to)).is_err(), "{to}");
        }
        let pose = MINIMAL.replace("\"behaviors\"", "\"pose\": [[1, 2, 3]], \"behaviors\"");
        assert!(SequenceAnnotation::from_json(&pose).is_err());
    }

    #[test]
    fn registry_sizes() {
        assert_eq!(KEYPOINT_NAMES.len(), 16);
        assert_eq!(joint_index("neck").unwrap(), 5);
        assert!(joint_index("tail").is_err());
        assert_eq!(ETHOGRAM.len(), 23);
        for (i, c) in ETHOGRAM.iter().enumerate() {
            assert_eq!(c.index, i);
        }
    }

    #[test]
    fn ethogram_examples() {
        let m = ethogram_lookup(0).unwrap();
        assert_eq!((m.name, m.category), ("moving", Supercategory::Locomotion));
        let g = ethogram_lookup(7).unwrap();
        assert_eq!((g.name, g.category), ("grooming", Supercategory::Social));
        assert_eq!(counterpart(7), Some(8));
        assert_eq!(ethogram_lookup(8).unwrap().name, "being groomed");
        assert_eq!(supercategory_indices(Supercategory::Others), vec![21, 22]);
        assert_eq!(ethogram_by_name("displaying").unwrap().index, 22);
        assert!(ethogram_lookup(23).is_err());
        assert!(ethogram_by_name("flying").is_err());
    }

    #[test]
    fn supercategories_partition() {
        let sets: Vec<Vec<usize>> = Supercategory::ALL.iter().map(|&c| supercategory_indices(c)).collect();
        assert_eq!(sets[0], (0..=3).collect::<Vec<_>>());
        assert_eq!(sets[1], (4..=6).collect::<Vec<_>>());
        assert_eq!(sets[2], (7..=20).collect::<Vec<_>>());
        assert_eq!(sets[3], vec![21, 22]);
    }

    #[test]
    fn pairs_are_involutions() {
        for c in &ETHOGRAM {
            if let Some((role, other)) = c.pairing {
                let o = &ETHOGRAM[other];
                let (orole, back) = o.pairing.unwrap();
                assert_eq!(back, c.index);
                assert_ne!(role, orole);
                assert_eq!(o.category, Supercategory::Social);
            }
        }
        let performers = ETHOGRAM.iter().filter(|c| matches!(c.pairing, Some((SocialRole::Performer, _)))).count();
        assert_eq!(performers, 5);
    }

    #[test]
    fn mot_csv_format() {
        let t = TrackedBox::new(0, 0, BoxXYXY::new(10.0, 20.0, 30.0, 40.0).unwrap()).with_conf(0.9);
        assert_eq!(write_mot_csv(&[t]), "1,1,10.000000,20.000000,20.000000,20.000000,0.900000,-1,-1,-1\n");
        assert_eq!(write_mot_csv(&[]), "");
        assert!(parse_mot_csv("").unwrap().is_empty());
    }

    #[test]
    fn mot_csv_round_trip() {
        let tracks = vec![
            TrackedBox::new(4, 2, BoxXYXY::new(1.5, 2.25, 11.5, 30.0).unwrap()).with_conf(0.5),
            TrackedBox::new(0, 7, BoxXYXY::new(0.0, 0.0, 5.0, 5.0).unwrap()).with_conf(1.0),
        ];
        let text = write_mot_csv(&tracks);
        let back = parse_mot_csv(&text).unwrap();
        assert_eq!(write_mot_csv(&back), text);
        assert_eq!(back[0].frame, 0);
        assert_eq!(back[1], tracks[0]);
    }

    #[test]
    fn mot_csv_errors_carry_line() {
        let text = "1,1,0,0,1,1,1,-1,-1,-1\n1,x,0,0,1,1,1,-1,-1,-1\n";
        assert!(matches!(parse_mot_csv(text), Err(DataError::Csv { line: 2, .. })));
        assert!(matches!(parse_mot_csv("0,1,0,0,1,1,1,-1,-1,-1"), Err(DataError::Csv { line: 1, .. })));
        assert!(matches!(parse_mot_csv("1,1,0,0,1"), Err(DataError::Csv { line: 1, .. })));
        assert!(matches!(parse_mot_csv("1,1,0,0,-1,1,1,-1,-1,-1"), Err(DataError::Csv { line: 1, .. })));
    }

    #[test]
    fn detections_validate() {
        let rec = DetectionRecord { bbox: [0.0, 0.0, 10.0, 10.0], class_conf: 0.8, behavior_scores: vec![0.1; 23], track_id: Some(1), pose: None };
        let mut f = DetectionsFile {
            schema_version: 1,
            sequence_id: "s".into(),
            image_size: ImageSize { width: 64, height: 64 },
            frames: vec![DetectionFrame { frame: 0, detections: vec![rec.clone()] }],
        };
        let back = DetectionsFile::from_json(&f.to_json()).unwrap();
        assert_eq!(back, f);
        assert_eq!(back.tracked_boxes().len(), 1);
        f.frames[0].detections[0].behavior_scores.pop();
        assert!(f.validate().is_err());
        f.frames[0].detections = vec![rec.clone(), rec];
        assert!(f.validate().is_err());
    }

    #[test]
    fn schema_file_lists_document_fields() {
        let schema: serde_json::Value = serde_json::from_str(include_str!("../schemas/annotations.schema.json")).unwrap();
        let doc: serde_json::Value = serde_json::from_str(&SequenceAnnotation::from_json(MINIMAL).unwrap().to_json()).unwrap();
        let props = schema["properties"].as_object().unwrap();
        for key in doc.as_object().unwrap().keys() {
            assert!(props.contains_key(key), "{key} missing from schema");
        }
        let inst_props = schema["$defs"]["instance"]["properties"].as_object().unwrap();
        for key in doc["frames"][0]["instances"][0].as_object().unwrap().keys() {
            assert!(inst_props.contains_key(key), "{key} missing from instance schema");
        }
    }

    #[test]
    fn video_round_trip_and_shape_checks() {
        let a = Array4::from_shape_fn((2, 4, 4, 3), |(t, y, x, c)| (t * 100 + y * 10 + x) as f64 + c as f64 * 0.25);
        let v = VideoFile::from_array(&a);
        let back = VideoFile::from_json(&v.to_json()).unwrap();
        assert_eq!(back.to_array(), a);
        let short = r#"{"schema_version": 1, "shape": [1, 2, 2, 3], "data": [0.0]}"#;
        assert!(matches!(VideoFile::from_json(short), Err(DataError::Invalid { field, .. }) if field == "data"));
        let gray = r#"{"schema_version": 1, "shape": [1, 1, 1, 1], "data": [0.0]}"#;
        assert!(matches!(VideoFile::from_json(gray), Err(DataError::Invalid { field, .. }) if field == "shape[3]"));
    }
}
