//! Metric reports: JSON documents and fixed-width text tables in the
//! tracking, pose and behavior column layouts.

use serde::{Deserialize, Serialize};

use crate::metrics::{ApSummary, BehaviorMetrics};

/// All values are percentages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackingMetrics {
    pub hota: f64,
    pub det_a: f64,
    pub ass_a: f64,
    pub mota: f64,
    pub motp: f64,
    pub idf1: f64,
    /// Detection mAP of the same boxes; `None` without counted gt.
    pub map: Option<f64>,
    pub n_fp: f64,
    pub n_fn: f64,
    pub n_ids: f64,
}

/// All values are percentages; `None` marks splits without counted gt.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseMetrics {
    pub pck_005: Option<f64>,
    pub pck_01: Option<f64>,
    pub ap: Option<f64>,
    pub ap50: Option<f64>,
    pub ap75: Option<f64>,
    pub ap_m: Option<f64>,
    pub ap_l: Option<f64>,
    pub ar: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Tracking,
    Detection,
    Pose,
    Behavior,
}

impl std::str::FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tracking" => Ok(Task::Tracking),
            "detection" => Ok(Task::Detection),
            "pose" => Ok(Task::Pose),
            "behavior" => Ok(Task::Behavior),
            other => Err(format!("unknown task {other:?} (expected tracking, detection, pose or behavior)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub task: Task,
    pub sequences: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tracking: Option<TrackingMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detection: Option<ApSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose: Option<PoseMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub behavior: Option<BehaviorMetrics>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reports serialize");
        s.push('\n');
        s
    }

    /// The table matching the report's task.
    pub fn to_table(&self) -> String {
        match self.task {
            Task::Tracking => tracking_table(&[TrackingRow::from_metrics(&self.method, self.tracking.as_ref())]),
            Task::Detection => detection_table(&[(self.method.clone(), self.detection.unwrap_or_default())]),
            Task::Pose => pose_table(&[PoseRow::from_metrics(&self.method, "", self.pose.as_ref())]),
            Task::Behavior => behavior_table(&[BehaviorRow::from_metrics(&self.method, None, self.behavior.as_ref())]),
        }
    }
}

/// Smallest width of a numeric column.
const MIN_NUMERIC_WIDTH: usize = 6;
const GAP: &str = "  ";

/// A plain text table: text columns left-aligned, numeric columns
/// right-aligned, one rule under the header, no trailing spaces.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TextTable {
    pub headers: Vec<String>,
    pub numeric: Vec<bool>,
    pub rows: Vec<Vec<String>>,
}

impl TextTable {
    pub fn render(&self) -> String {
        let n = self.headers.len();
        let widths: Vec<usize> = (0..n)
            .map(|c| {
                let cells = self.rows.iter().map(|r| r[c].chars().count());
                let w = cells.chain([self.headers[c].chars().count()]).max().unwrap_or(0);
                if self.numeric[c] {
                    w.max(MIN_NUMERIC_WIDTH)
                } else {
                    w
                }
            })
            .collect();
        let line = |cells: &[String]| {
            let parts: Vec<String> = cells
                .iter()
                .enumerate()
                .map(|(c, s)| if self.numeric[c] { format!("{s:>w$}", w = widths[c]) } else { format!("{s:<w$}", w = widths[c]) })
                .collect();
            let mut l = parts.join(GAP).trim_end().to_string();
            l.push('\n');
            l
        };
        let mut out = line(&self.headers);
        let total = widths.iter().sum::<usize>() + GAP.len() * n.saturating_sub(1);
        out.push_str(&"-".repeat(total));
        out.push('\n');
        for r in &self.rows {
            out.push_str(&line(r));
        }
        out
    }
}

/// One decimal, or `-` when absent.
pub fn cell(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.1}"),
        None => "-".to_string(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackingRow {
    pub method: String,
    pub hota: Option<f64>,
    pub mota: Option<f64>,
    pub motp: Option<f64>,
    pub idf1: Option<f64>,
    pub map: Option<f64>,
    pub n_fp: Option<f64>,
    pub n_fn: Option<f64>,
    pub n_ids: Option<f64>,
}

impl TrackingRow {
    pub fn from_metrics(method: &str, m: Option<&TrackingMetrics>) -> Self {
        TrackingRow {
            method: method.to_string(),
            hota: m.map(|m| m.hota),
            mota: m.map(|m| m.mota),
            motp: m.map(|m| m.motp),
            idf1: m.map(|m| m.idf1),
            map: m.and_then(|m| m.map),
            n_fp: m.map(|m| m.n_fp),
            n_fn: m.map(|m| m.n_fn),
            n_ids: m.map(|m| m.n_ids),
        }
    }
}

pub const TRACKING_COLUMNS: [&str; 9] = ["Method", "HOTA", "MOTA", "MOTP", "IDF1", "mAP", "nFP", "nFN", "nIDs"];

pub fn tracking_table(rows: &[TrackingRow]) -> String {
    TextTable {
        headers: TRACKING_COLUMNS.iter().map(|s| s.to_string()).collect(),
        numeric: (0..TRACKING_COLUMNS.len()).map(|c| c > 0).collect(),
        rows: rows
            .iter()
            .map(|r| {
                let mut v = vec![r.method.clone()];
                v.extend([r.hota, r.mota, r.motp, r.idf1, r.map, r.n_fp, r.n_fn, r.n_ids].map(cell));
                v
            })
            .collect(),
    }
    .render()
}

pub const DETECTION_COLUMNS: [&str; 7] = ["Method", "mAP", "AP50", "AP75", "AP_M", "AP_L", "AR"];

pub fn detection_table(rows: &[(String, ApSummary)]) -> String {
    TextTable {
        headers: DETECTION_COLUMNS.iter().map(|s| s.to_string()).collect(),
        numeric: (0..DETECTION_COLUMNS.len()).map(|c| c > 0).collect(),
        rows: rows
            .iter()
            .map(|(m, a)| {
                let mut v = vec![m.clone()];
                v.extend([a.ap, a.ap50, a.ap75, a.ap_m, a.ap_l, a.ar].map(cell));
                v
            })
            .collect(),
    }
    .render()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseRow {
    pub method: String,
    pub backbone: String,
    pub values: [Option<f64>; 8],
}

impl PoseRow {
    pub fn from_metrics(method: &str, backbone: &str, m: Option<&PoseMetrics>) -> Self {
        let values = m.map_or([None; 8], |m| [m.pck_005, m.pck_01, m.ap, m.ap50, m.ap75, m.ap_m, m.ap_l, m.ar]);
        PoseRow { method: method.to_string(), backbone: backbone.to_string(), values }
    }
}

pub const POSE_COLUMNS: [&str; 10] = ["Method", "Backbone", "PCK@0.05", "PCK@0.1", "AP", "AP50", "AP75", "AP_M", "AP_L", "AR"];

pub fn pose_table(rows: &[PoseRow]) -> String {
    TextTable {
        headers: POSE_COLUMNS.iter().map(|s| s.to_string()).collect(),
        numeric: (0..POSE_COLUMNS.len()).map(|c| c > 1).collect(),
        rows: rows
            .iter()
            .map(|r| {
                let mut v = vec![r.method.clone(), r.backbone.clone()];
                v.extend(r.values.map(cell));
                v
            })
            .collect(),
    }
    .render()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorRow {
    pub method: String,
    pub module: Option<String>,
    pub map: Option<f64>,
    pub map_l: Option<f64>,
    pub map_o: Option<f64>,
    pub map_s: Option<f64>,
}

impl BehaviorRow {
    pub fn from_metrics(method: &str, module: Option<&str>, m: Option<&BehaviorMetrics>) -> Self {
        BehaviorRow {
            method: method.to_string(),
            module: module.map(str::to_string),
            map: m.and_then(|m| m.map),
            map_l: m.and_then(|m| m.map_l),
            map_o: m.and_then(|m| m.map_o),
            map_s: m.and_then(|m| m.map_s),
        }
    }
}

pub const BEHAVIOR_COLUMNS: [&str; 5] = ["Method", "mAP", "mAP_L", "mAP_O", "mAP_S"];

/// Behavior table; the Module column appears only when some row names one.
pub fn behavior_table(rows: &[BehaviorRow]) -> String {
    let with_module = rows.iter().any(|r| r.module.is_some());
    let mut headers = vec!["Method".to_string()];
    if with_module {
        headers.push("Module".to_string());
    }
    let text_cols = headers.len();
    headers.extend(BEHAVIOR_COLUMNS[1..].iter().map(|s| s.to_string()));
    TextTable {
        numeric: (0..headers.len()).map(|c| c >= text_cols).collect(),
        headers,
        rows: rows
            .iter()
            .map(|r| {
                let mut v = vec![r.method.clone()];
                if with_module {
                    v.push(r.module.clone().unwrap_or_default());
                }
                v.extend([r.map, r.map_l, r.map_o, r.map_s].map(cell));
                v
            })
            .collect(),
    }
    .render()
}
