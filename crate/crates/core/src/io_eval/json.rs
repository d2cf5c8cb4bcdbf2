use std::io;
use std::path::Path;

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};

use super::{io_error, IoError, Result};
use crate::association::{Keyframe, Landmark, WeightMatrix};
use crate::generative::{squared_distance, PrototypeTable};
use crate::geometry::Se3Pose;
use crate::optimizer::Solution;
use crate::simulator::{Dataset, DatasetMeta, GroundTruth, Odometry};

pub const SCHEMA_VERSION: u64 = 1;

/// Pretty JSON with every float written in `{:.16e}` (17 significant digits),
/// which reads back to the identical `f64`. Non-finite floats become `null`.
struct CanonicalFormatter {
    pretty: PrettyFormatter<'static>,
}

impl CanonicalFormatter {
    fn new() -> Self {
        Self { pretty: PrettyFormatter::with_indent(b"  ") }
    }
}

impl Formatter for CanonicalFormatter {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        if value.is_finite() {
            write!(w, "{value:.16e}")
        } else {
            w.write_all(b"null")
        }
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, value as f64)
    }

    fn begin_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.pretty.begin_array(w)
    }

    fn end_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.pretty.end_array(w)
    }

    fn begin_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.pretty.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.pretty.end_array_value(w)
    }

    fn begin_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.pretty.begin_object(w)
    }

    fn end_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.pretty.end_object(w)
    }

    fn begin_object_key<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.pretty.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.pretty.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.pretty.end_object_value(w)
    }
}

/// Canonical text of any serializable value, newline terminated.
pub fn to_canonical_string<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, CanonicalFormatter::new());
    value
        .serialize(&mut ser)
        .map_err(|e| IoError::InvalidInput(e.to_string()))?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

fn parse_error(e: serde_json::Error) -> IoError {
    IoError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

#[derive(Deserialize)]
struct Header {
    schema_version: u64,
}

/// Syntax and version are checked before the typed pass, so a file from
/// another schema reports a version mismatch rather than a field error.
fn parse_versioned<T: DeserializeOwned>(text: &str) -> Result<T> {
    let header: Header = serde_json::from_str(text).map_err(parse_error)?;
    if header.schema_version != SCHEMA_VERSION {
        return Err(IoError::SchemaVersionMismatch {
            found: header.schema_version,
            expected: SCHEMA_VERSION,
        });
    }
    serde_json::from_str(text).map_err(parse_error)
}

#[derive(Serialize)]
struct DatasetOut<'a> {
    schema_version: u64,
    meta: &'a DatasetMeta,
    prototypes: &'a PrototypeTable,
    ground_truth: &'a GroundTruth,
    odometry: &'a Odometry,
    keyframes: &'a [Keyframe],
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetIn {
    #[allow(dead_code)]
    schema_version: u64,
    meta: DatasetMeta,
    prototypes: PrototypeTable,
    ground_truth: GroundTruth,
    odometry: Odometry,
    keyframes: Vec<Keyframe>,
}

pub fn dataset_to_string(d: &Dataset) -> Result<String> {
    to_canonical_string(&DatasetOut {
        schema_version: SCHEMA_VERSION,
        meta: &d.meta,
        prototypes: &d.prototypes,
        ground_truth: &d.ground_truth,
        odometry: &d.odometry,
        keyframes: &d.keyframes,
    })
}

pub fn dataset_from_str(text: &str) -> Result<Dataset> {
    let d: DatasetIn = parse_versioned(text)?;
    d.prototypes
        .validate()
        .map_err(|e| IoError::InvalidInput(format!("prototypes: {e}")))?;
    Ok(Dataset {
        meta: d.meta,
        prototypes: d.prototypes,
        ground_truth: d.ground_truth,
        odometry: d.odometry,
        keyframes: d.keyframes,
    })
}

/// Writes the dataset and returns the number of bytes written.
pub fn write_dataset(d: &Dataset, path: &Path) -> Result<usize> {
    let text = dataset_to_string(d)?;
    std::fs::write(path, &text).map_err(|e| io_error(path, e))?;
    Ok(text.len())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    dataset_from_str(&text)
}

/// Prototype whose means are closest to a landmark's feature estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelHint {
    pub category_id: u32,
    pub instance_id: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkRecord {
    pub id: u32,
    pub pose: Se3Pose,
    pub feature_c: Vec<f64>,
    pub feature_i: Vec<f64>,
    pub anchor_frame: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<LabelHint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightRecord {
    pub keyframe_id: usize,
    pub rows: Vec<Vec<f64>>,
    pub orphan_rows: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionRecord {
    pub schema_version: u64,
    pub trajectory: Vec<Se3Pose>,
    pub landmarks: Vec<LandmarkRecord>,
    pub weights: Vec<WeightRecord>,
    pub cost_history: Vec<f64>,
    pub lm_cost_history: Vec<Vec<f64>>,
}

fn nearest_label(table: &PrototypeTable, l: &Landmark) -> Option<LabelHint> {
    table
        .entries
        .iter()
        .filter(|p| p.mu_c.len() == l.feature_c.len() && p.mu_i.len() == l.feature_i.len())
        .map(|p| {
            let d = squared_distance(&p.mu_c, &l.feature_c) + squared_distance(&p.mu_i, &l.feature_i);
            (d, p)
        })
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, p)| LabelHint {
            category_id: p.category_id,
            instance_id: p.instance_id,
        })
}

impl SolutionRecord {
    /// Labels are attached when a prototype table is given.
    pub fn new(sol: &Solution, prototypes: Option<&PrototypeTable>) -> Self {
        let landmarks = sol
            .landmarks
            .iter()
            .map(|l| LandmarkRecord {
                id: l.id,
                pose: l.pose,
                feature_c: l.feature_c.clone(),
                feature_i: l.feature_i.clone(),
                anchor_frame: l.anchor_frame,
                label: prototypes.and_then(|t| nearest_label(t, l)),
            })
            .collect();
        let weights = sol
            .final_weights
            .iter()
            .map(|w| WeightRecord {
                keyframe_id: w.keyframe_id,
                rows: w
                    .weights
                    .row_iter()
                    .map(|r| r.iter().copied().collect())
                    .collect(),
                orphan_rows: w.orphan_rows.clone(),
            })
            .collect();
        Self {
            schema_version: SCHEMA_VERSION,
            trajectory: sol.trajectory.clone(),
            landmarks,
            weights,
            cost_history: sol.cost_history.clone(),
            lm_cost_history: sol.lm_cost_history.clone(),
        }
    }

    pub fn to_solution(&self) -> Result<Solution> {
        let mut final_weights = Vec::with_capacity(self.weights.len());
        for w in &self.weights {
            let ncols = w.rows.first().map_or(0, Vec::len);
            if w.rows.iter().any(|r| r.len() != ncols) {
                return Err(IoError::InvalidInput(format!(
                    "weight rows of keyframe {} have unequal lengths",
                    w.keyframe_id
                )));
            }
            let m = DMatrix::from_fn(w.rows.len(), ncols, |i, j| w.rows[i][j]);
            let mut wm = WeightMatrix::new(w.keyframe_id, m);
            wm.orphan_rows = w.orphan_rows.clone();
            final_weights.push(wm);
        }
        Ok(Solution {
            trajectory: self.trajectory.clone(),
            landmarks: self
                .landmarks
                .iter()
                .map(|l| Landmark {
                    id: l.id,
                    pose: l.pose,
                    feature_c: l.feature_c.clone(),
                    feature_i: l.feature_i.clone(),
                    anchor_frame: l.anchor_frame,
                })
                .collect(),
            final_weights,
            cost_history: self.cost_history.clone(),
            lm_cost_history: self.lm_cost_history.clone(),
        })
    }
}

pub fn solution_from_str(text: &str) -> Result<SolutionRecord> {
    parse_versioned(text)
}

pub fn write_solution(s: &SolutionRecord, path: &Path) -> Result<usize> {
    let text = to_canonical_string(s)?;
    std::fs::write(path, &text).map_err(|e| io_error(path, e))?;
    Ok(text.len())
}

pub fn read_solution(path: &Path) -> Result<SolutionRecord> {
    let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    solution_from_str(&text)
}
