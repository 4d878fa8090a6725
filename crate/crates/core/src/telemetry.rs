//! Telemetry ingestion: the fixed 18-column experiment schema, CSV loading
//! with header aliasing, per-frame validation, and row cleaning.
//!
//! An experiment is one flight's worth of uniformly sampled battery
//! telemetry. Files carry one header row and 18 numeric columns; missing
//! cells are empty or `NaN`. Column order in the file is arbitrary, the
//! loader maps everything onto the canonical order below.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::numeric::{compensated_mean, CompensatedSum};

/// Response plus seventeen predictors.
pub const COLUMN_COUNT: usize = 18;
/// Predictor columns: three powertrain state channels and fourteen battery
/// pack channels (six voltages, four currents, four temperatures).
pub const PREDICTOR_COUNT: usize = 17;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColumnRole {
    Response,
    State,
    Voltage,
    Current,
    Temperature,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SchemaColumn {
    pub name: &'static str,
    pub role: ColumnRole,
}

const COLUMNS: [SchemaColumn; COLUMN_COUNT] = [
    SchemaColumn { name: "remaining_time_s", role: ColumnRole::Response },
    SchemaColumn { name: "rpm", role: ColumnRole::State },
    SchemaColumn { name: "fmc", role: ColumnRole::State },
    SchemaColumn { name: "amc", role: ColumnRole::State },
    SchemaColumn { name: "llf20v", role: ColumnRole::Voltage },
    SchemaColumn { name: "ula20v", role: ColumnRole::Voltage },
    SchemaColumn { name: "lrf40v", role: ColumnRole::Voltage },
    SchemaColumn { name: "ura40v", role: ColumnRole::Voltage },
    SchemaColumn { name: "lrf20v", role: ColumnRole::Voltage },
    SchemaColumn { name: "ura20v", role: ColumnRole::Voltage },
    SchemaColumn { name: "llf20c", role: ColumnRole::Current },
    SchemaColumn { name: "ula20c", role: ColumnRole::Current },
    SchemaColumn { name: "lrf40c", role: ColumnRole::Current },
    SchemaColumn { name: "ura40c", role: ColumnRole::Current },
    SchemaColumn { name: "llf20t", role: ColumnRole::Temperature },
    SchemaColumn { name: "ula20t", role: ColumnRole::Temperature },
    SchemaColumn { name: "lrf40t", role: ColumnRole::Temperature },
    SchemaColumn { name: "ura40t", role: ColumnRole::Temperature },
];

/// Accepted long-form spellings for canonical column names, normalized to
/// lowercase with underscores. Upstream exports vary between the short
/// codes and descriptive names, and are inconsistent about front/forward.
const HEADER_ALIASES: [(&str, &str); 22] = [
    ("remaining_flying_time", "remaining_time_s"),
    ("remaining_flying_time_s", "remaining_time_s"),
    ("remaining_time", "remaining_time_s"),
    ("revolutions_per_minute", "rpm"),
    ("forward_motor_controller", "fmc"),
    ("forward_motor_controller_sensor", "fmc"),
    ("after_motor_controller", "amc"),
    ("after_motor_controller_sensor", "amc"),
    ("lower_left_front_battery_voltage", "llf20v"),
    ("upper_left_after_battery_voltage", "ula20v"),
    ("lower_right_front_series_combined_voltage", "lrf40v"),
    ("upper_right_after_series_combined_voltage", "ura40v"),
    ("lower_right_front_battery_voltage", "lrf20v"),
    ("upper_right_after_battery_voltage", "ura20v"),
    ("lower_left_forward_battery_current", "llf20c"),
    ("lower_left_front_battery_current", "llf20c"),
    ("upper_left_after_battery_current", "ula20c"),
    ("lower_right_after_series_combined_current", "lrf40c"),
    ("upper_right_after_series_combined_current", "ura40c"),
    ("lower_left_forward_battery_temperature", "llf20t"),
    ("upper_left_after_battery_temperature", "ula20t"),
    ("upper_right_after_series_combined_temperature", "ura40t"),
];

/// Canonical column names and roles for experiment files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnSchema {
    columns: &'static [SchemaColumn],
}

impl ColumnSchema {
    pub fn standard() -> Self {
        Self { columns: &COLUMNS }
    }

    pub fn columns(&self) -> &[SchemaColumn] {
        self.columns
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.columns.iter().map(|c| c.name)
    }

    pub fn response_name(&self) -> &'static str {
        self.columns[0].name
    }

    /// The seventeen predictor names in canonical order.
    pub fn predictor_names(&self) -> Vec<&'static str> {
        self.columns[1..].iter().map(|c| c.name).collect()
    }

    fn index_of(&self, canonical: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == canonical)
    }

    /// Maps a raw header cell to a canonical column name, accepting the
    /// canonical spelling in any case as well as the alias table.
    pub fn resolve_header(&self, raw: &str) -> Option<&'static str> {
        let normalized = normalize_header(raw);
        if let Some(idx) = self.index_of(&normalized) {
            return Some(self.columns[idx].name);
        }
        HEADER_ALIASES
            .iter()
            .find(|(alias, _)| *alias == normalized)
            .map(|(_, canonical)| *canonical)
    }
}

impl Default for ColumnSchema {
    fn default() -> Self {
        Self::standard()
    }
}

fn normalize_header(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut last_was_sep = true;
    for c in raw.trim().chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
            last_was_sep = false;
        } else if !last_was_sep {
            out.push('_');
            last_was_sep = true;
        }
    }
    while out.ends_with('_') {
        out.pop();
    }
    out
}

#[derive(Debug, thiserror::Error)]
pub enum TelemetryError {
    #[error("column {0:?} not found in header")]
    MissingColumn(String),
    #[error("{0}: no data rows")]
    EmptyFile(String),
    #[error("row {row}: expected {expected} columns, found {found}")]
    ColumnCountMismatch { row: usize, expected: usize, found: usize },
    #[error("experiment {0:?}: cleaning dropped every row")]
    AllRowsDropped(String),
    #[error("sample interval must be positive, got {0}")]
    InvalidInterval(f64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// One experiment's telemetry, stored row-major in canonical column order
/// (response first). Cells may be non-finite until the frame is cleaned;
/// `f64::NAN` encodes a missing cell.
#[derive(Debug, Clone, PartialEq)]
pub struct TelemetryFrame {
    experiment_id: String,
    sample_interval_s: f64,
    n_rows: usize,
    values: Vec<f64>,
}

impl TelemetryFrame {
    /// Builds a frame from rows already in canonical column order.
    pub fn from_rows(
        experiment_id: impl Into<String>,
        sample_interval_s: f64,
        rows: Vec<Vec<f64>>,
    ) -> Result<Self, TelemetryError> {
        if !(sample_interval_s > 0.0) {
            return Err(TelemetryError::InvalidInterval(sample_interval_s));
        }
        let mut values = Vec::with_capacity(rows.len() * COLUMN_COUNT);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != COLUMN_COUNT {
                return Err(TelemetryError::ColumnCountMismatch {
                    row: i + 1,
                    expected: COLUMN_COUNT,
                    found: row.len(),
                });
            }
            values.extend_from_slice(row);
        }
        Ok(Self {
            experiment_id: experiment_id.into(),
            sample_interval_s,
            n_rows: rows.len(),
            values,
        })
    }

    pub fn experiment_id(&self) -> &str {
        &self.experiment_id
    }

    pub fn sample_interval_s(&self) -> f64 {
        self.sample_interval_s
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.values[row * COLUMN_COUNT..(row + 1) * COLUMN_COUNT]
    }

    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.values[row * COLUMN_COUNT + col]
    }

    /// Response column (`remaining_time_s`).
    pub fn response(&self) -> Vec<f64> {
        (0..self.n_rows).map(|r| self.value(r, 0)).collect()
    }

    /// Predictor column `j` in canonical order, `j < PREDICTOR_COUNT`.
    pub fn predictor_column(&self, j: usize) -> Vec<f64> {
        assert!(j < PREDICTOR_COUNT);
        (0..self.n_rows).map(|r| self.value(r, j + 1)).collect()
    }
}

fn parse_cell(cell: &str) -> f64 {
    let trimmed = cell.trim();
    if trimmed.is_empty() {
        return f64::NAN;
    }
    trimmed.parse().unwrap_or(f64::NAN)
}

/// Loads one experiment CSV. Columns are matched by header name through the
/// alias table; unknown extra columns are ignored. Unparseable cells are
/// recorded as missing rather than failing the load. The experiment id is
/// the file stem.
pub fn load_experiment(
    path: &Path,
    schema: &ColumnSchema,
    sample_interval_s: f64,
) -> Result<TelemetryFrame, TelemetryError> {
    if !(sample_interval_s > 0.0) {
        return Err(TelemetryError::InvalidInterval(sample_interval_s));
    }
    let experiment_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.to_string_lossy().into_owned());

    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)?;
    let headers = reader.headers()?.clone();

    // slot_for[file column] = canonical column index; first match wins when
    // a name appears twice.
    let mut slot_for: Vec<Option<usize>> = vec![None; headers.len()];
    let mut seen = [false; COLUMN_COUNT];
    for (i, raw) in headers.iter().enumerate() {
        if let Some(canonical) = schema.resolve_header(raw) {
            let idx = schema.index_of(canonical).expect("canonical name");
            if !seen[idx] {
                seen[idx] = true;
                slot_for[i] = Some(idx);
            }
        }
    }
    for (idx, column) in schema.columns().iter().enumerate() {
        if !seen[idx] {
            return Err(TelemetryError::MissingColumn(column.name.to_string()));
        }
    }

    let mut values = Vec::new();
    let mut n_rows = 0usize;
    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != headers.len() {
            return Err(TelemetryError::ColumnCountMismatch {
                row: row_idx + 1,
                expected: headers.len(),
                found: record.len(),
            });
        }
        let mut row = [f64::NAN; COLUMN_COUNT];
        for (i, cell) in record.iter().enumerate() {
            if let Some(slot) = slot_for[i] {
                row[slot] = parse_cell(cell);
            }
        }
        values.extend_from_slice(&row);
        n_rows += 1;
    }
    if n_rows == 0 {
        return Err(TelemetryError::EmptyFile(experiment_id));
    }
    Ok(TelemetryFrame {
        experiment_id,
        sample_interval_s,
        n_rows,
        values,
    })
}

/// Writes a frame as CSV in canonical column order. Missing cells come out
/// as `NaN`, which the loader maps back to missing.
pub fn write_experiment_csv(frame: &TelemetryFrame, path: &Path) -> Result<(), TelemetryError> {
    let schema = ColumnSchema::standard();
    let mut out = String::new();
    let names: Vec<&str> = schema.names().collect();
    out.push_str(&names.join(","));
    out.push('\n');
    for row in 0..frame.n_rows() {
        let cells = frame.row(row);
        for (i, v) in cells.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Per-column summary over finite cells only. All three statistics are NaN
/// when a column has no finite cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub name: String,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

/// What `validate_frame` found. Missing counts NaN cells (empty, literal
/// NaN, or unparseable input); non-finite counts infinities that did parse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub experiment_id: String,
    pub n_rows: usize,
    pub missing_cells: usize,
    pub non_finite_cells: usize,
    pub negative_response_rows: usize,
    pub column_stats: Vec<ColumnStats>,
}

impl ValidationReport {
    /// True when every cell is finite and no response value is negative.
    pub fn is_clean(&self) -> bool {
        self.missing_cells == 0 && self.non_finite_cells == 0 && self.negative_response_rows == 0
    }
}

/// Summarizes a frame without modifying it.
pub fn validate_frame(frame: &TelemetryFrame) -> ValidationReport {
    let schema = ColumnSchema::standard();
    let mut missing = 0usize;
    let mut non_finite = 0usize;
    let mut negative_response = 0usize;
    let mut finite: Vec<Vec<f64>> = vec![Vec::new(); COLUMN_COUNT];
    for row in 0..frame.n_rows() {
        let cells = frame.row(row);
        if cells[0].is_finite() && cells[0] < 0.0 {
            negative_response += 1;
        }
        for (col, &v) in cells.iter().enumerate() {
            if v.is_nan() {
                missing += 1;
            } else if v.is_infinite() {
                non_finite += 1;
            } else {
                finite[col].push(v);
            }
        }
    }
    let column_stats = schema
        .names()
        .zip(&finite)
        .map(|(name, values)| ColumnStats {
            name: name.to_string(),
            min: values.iter().copied().fold(f64::NAN, f64::min),
            max: values.iter().copied().fold(f64::NAN, f64::max),
            mean: compensated_mean(values),
        })
        .collect();
    ValidationReport {
        experiment_id: frame.experiment_id().to_string(),
        n_rows: frame.n_rows(),
        missing_cells: missing,
        non_finite_cells: non_finite,
        negative_response_rows: negative_response,
        column_stats,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CleaningPolicy {
    /// Remove any row containing a defective cell.
    Drop,
    /// Linearly interpolate interior defective cells per column; rows whose
    /// defects cannot be interpolated (leading/trailing runs) are dropped.
    #[default]
    Interpolate,
}

/// Produces a frame with only finite cells and non-negative response
/// values. A cell is defective when it is non-finite or a negative
/// response. Surviving cells keep their loaded bit patterns; `Interpolate`
/// never extrapolates past the first or last good value of a column.
pub fn clean_frame(
    frame: &TelemetryFrame,
    policy: CleaningPolicy,
) -> Result<TelemetryFrame, TelemetryError> {
    let n = frame.n_rows();
    let defective = |row: usize, col: usize| -> bool {
        let v = frame.value(row, col);
        !v.is_finite() || (col == 0 && v < 0.0)
    };

    let mut values = frame.values.clone();
    if policy == CleaningPolicy::Interpolate {
        for col in 0..COLUMN_COUNT {
            let good: Vec<usize> = (0..n).filter(|&r| !defective(r, col)).collect();
            for pair in good.windows(2) {
                let (lo, hi) = (pair[0], pair[1]);
                if hi - lo < 2 {
                    continue;
                }
                let (a, b) = (frame.value(lo, col), frame.value(hi, col));
                for r in lo + 1..hi {
                    let t = (r - lo) as f64 / (hi - lo) as f64;
                    values[r * COLUMN_COUNT + col] = a + (b - a) * t;
                }
            }
        }
    }

    let mut kept = Vec::new();
    for row in 0..n {
        let cells = &values[row * COLUMN_COUNT..(row + 1) * COLUMN_COUNT];
        let ok = cells
            .iter()
            .enumerate()
            .all(|(col, &v)| v.is_finite() && (col != 0 || v >= 0.0));
        if ok {
            kept.extend_from_slice(cells);
        }
    }
    let kept_rows = kept.len() / COLUMN_COUNT;
    if kept_rows == 0 {
        return Err(TelemetryError::AllRowsDropped(
            frame.experiment_id().to_string(),
        ));
    }
    Ok(TelemetryFrame {
        experiment_id: frame.experiment_id().to_string(),
        sample_interval_s: frame.sample_interval_s(),
        n_rows: kept_rows,
        values: kept,
    })
}

/// Loads every `.csv` in a directory as one experiment each, sorted by
/// experiment id so corpus order is stable across platforms.
pub fn load_corpus(
    dir: &Path,
    schema: &ColumnSchema,
    sample_interval_s: f64,
) -> Result<Vec<TelemetryFrame>, TelemetryError> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")))
        .collect();
    paths.sort();
    let mut frames = Vec::with_capacity(paths.len());
    for path in paths {
        frames.push(load_experiment(&path, schema, sample_interval_s)?);
    }
    Ok(frames)
}

/// Compensated mean of a column over all rows; helper shared by the
/// summary paths.
pub fn column_mean(frame: &TelemetryFrame, col: usize) -> f64 {
    let mut acc = CompensatedSum::new();
    for row in 0..frame.n_rows() {
        acc.add(frame.value(row, col));
    }
    acc.value() / frame.n_rows() as f64
}
