//! Versioned JSON file formats and number formatting shared by every writer.

use std::collections::BTreeMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{polyline_to_grid, ImageFrame, LaneGrid, Point, PolarAnchor, Pole, PoleGridLabels, PoleKind};
use crate::suppression::{Candidate, CandidateSet};

pub const FORMAT_VERSION: u32 = 1;

/// Round to nine significant digits. Idempotent, so values that went through
/// it once survive a text round trip bit for bit.
pub fn round9(v: f64) -> f64 {
    if !v.is_finite() || v == 0.0 {
        return v;
    }
    format!("{v:.8e}").parse().expect("formatted float parses")
}

pub type Meta = BTreeMap<String, serde_json::Value>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaneRecord {
    /// Image-coordinate `[x, y]` points, one per valid grid row.
    pub points: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

/// Scene or prediction file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub version: u32,
    pub frame: ImageFrame,
    pub lanes: Vec<LaneRecord>,
    #[serde(default)]
    pub meta: Meta,
}

impl SceneFile {
    pub fn from_lanes(frame: ImageFrame, lanes: &[LaneGrid], scores: Option<&[f64]>, meta: Meta) -> Self {
        let lanes = lanes
            .iter()
            .enumerate()
            .map(|(i, lane)| LaneRecord {
                points: lane.points().iter().map(|p| [round9(p.x), round9(p.y)]).collect(),
                score: scores.map(|s| round9(s[i])),
            })
            .collect();
        Self { version: FORMAT_VERSION, frame, lanes, meta }
    }

    /// Lanes whose points sit on grid rows are read back exactly; any other
    /// polyline is resampled onto the grid.
    pub fn lanes(&self) -> Result<Vec<LaneGrid>> {
        self.frame.validate()?;
        self.lanes.iter().map(|rec| record_to_grid(rec, &self.frame)).collect()
    }
}

fn record_to_grid(rec: &LaneRecord, frame: &ImageFrame) -> Result<LaneGrid> {
    let step = frame.row_step();
    let on_grid_row = |y: f64| -> Option<usize> {
        let idx = (y / step).round() as i64 - 1;
        (idx >= 0 && (idx as usize) < frame.n_rows && (frame.row_y(idx as usize) - y).abs() <= 1e-6 * step)
            .then_some(idx as usize)
    };
    let rows: Option<Vec<usize>> = rec.points.iter().map(|p| on_grid_row(p[1])).collect();
    if let Some(rows) = rows {
        let contiguous = rows.len() >= 2 && rows.windows(2).all(|w| w[1] == w[0] + 1);
        if contiguous {
            return LaneGrid::new(*frame, rows[0], rec.points.iter().map(|p| p[0]).collect());
        }
    }
    let pts: Vec<Point> = rec.points.iter().map(|p| Point::new(p[0], p[1])).collect();
    polyline_to_grid(&pts, frame)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateRecord {
    pub theta: f64,
    pub radius: f64,
    /// Cartesian position of the anchor's pole.
    pub pole: [f64; 2],
    pub start: usize,
    pub xs: Vec<f64>,
    pub score_o2m: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score_o2o: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateFile {
    pub version: u32,
    pub frame: ImageFrame,
    pub candidates: Vec<CandidateRecord>,
    #[serde(default)]
    pub meta: Meta,
}

impl CandidateFile {
    /// Values are stored as given; generators round them beforehand so that
    /// the text form is exact.
    pub fn from_set(frame: ImageFrame, set: &CandidateSet, meta: Meta) -> Self {
        let candidates = set
            .candidates
            .iter()
            .map(|c| CandidateRecord {
                theta: c.anchor.theta,
                radius: c.anchor.radius,
                pole: [c.anchor.pole.position.x, c.anchor.pole.position.y],
                start: c.lane.start(),
                xs: c.lane.xs().to_vec(),
                score_o2m: c.score_o2m,
                score_o2o: c.score_o2o,
            })
            .collect();
        Self { version: FORMAT_VERSION, frame, candidates, meta }
    }

    pub fn to_set(&self) -> Result<CandidateSet> {
        self.frame.validate()?;
        let candidates = self
            .candidates
            .iter()
            .map(|r| {
                let pole = Pole { position: Point::new(r.pole[0], r.pole[1]), kind: PoleKind::Global };
                Ok(Candidate {
                    anchor: PolarAnchor::new(r.theta, r.radius, pole),
                    lane: LaneGrid::new(self.frame, r.start, r.xs.clone())?,
                    score_o2m: r.score_o2m,
                    score_o2o: r.score_o2o,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        CandidateSet::new(candidates)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSelection {
    pub scene: usize,
    /// SHA-256 of the candidate set every mode consumed.
    pub candidates_sha256: String,
    pub selected: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionFile {
    pub version: u32,
    pub mode: String,
    pub scenes: Vec<SceneSelection>,
}

/// Local-pole targets for one scene. Missing distances (no lanes) are `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelsFile {
    pub version: u32,
    pub frame: ImageFrame,
    pub lambda_l: f64,
    pub grid_h: usize,
    pub grid_w: usize,
    pub r_hat: Vec<Option<f64>>,
    pub theta_hat: Vec<f64>,
    pub s_hat: Vec<u8>,
    #[serde(default)]
    pub meta: Meta,
}

impl LabelsFile {
    pub fn new(frame: ImageFrame, lambda_l: f64, labels: &PoleGridLabels, meta: Meta) -> Self {
        Self {
            version: FORMAT_VERSION,
            frame,
            lambda_l,
            grid_h: labels.grid_h,
            grid_w: labels.grid_w,
            r_hat: labels.r_hat.iter().map(|&r| r.is_finite().then(|| round9(r))).collect(),
            theta_hat: labels.theta_hat.iter().map(|&t| round9(t)).collect(),
            s_hat: labels.s_hat.clone(),
            meta,
        }
    }
}

#[derive(Deserialize)]
struct VersionProbe {
    version: Option<serde_json::Value>,
}

/// Strict parse of a versioned document. `context` names the source in
/// error messages.
pub fn parse_versioned<T: DeserializeOwned>(text: &str, context: &str) -> Result<T> {
    let probe: VersionProbe = serde_json::from_str(text)
        .map_err(|e| Error::Parse { context: context.to_string(), message: e.to_string() })?;
    match probe.version {
        Some(serde_json::Value::Number(n)) if n.as_u64() == Some(FORMAT_VERSION as u64) => {}
        Some(serde_json::Value::Number(n)) => {
            return Err(Error::Version {
                found: n.as_u64().map_or(u32::MAX, |v| v.min(u32::MAX as u64) as u32),
                expected: FORMAT_VERSION,
            })
        }
        _ => {
            return Err(Error::Parse {
                context: context.to_string(),
                message: "missing or non-numeric `version`".into(),
            })
        }
    }
    parse_strict(text, context)
}

/// Parse with field-path and line/column context on failure.
pub fn parse_strict<T: DeserializeOwned>(text: &str, context: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| Error::Parse {
        context: context.to_string(),
        message: format!("at `{}`: {}", e.path(), e.inner()),
    })
}

pub fn to_json_string<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("value serialises");
    s.push('\n');
    s
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.display().to_string(), source })
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|source| Error::Io { path: parent.display().to_string(), source })?;
    }
    std::fs::write(path, text).map_err(|source| Error::Io { path: path.display().to_string(), source })
}

pub fn read_versioned<T: DeserializeOwned>(path: &Path) -> Result<T> {
    parse_versioned(&read_text(path)?, &path.display().to_string())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &to_json_string(value))
}
