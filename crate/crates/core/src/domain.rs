//! Shared vocabulary: diagnostic signals, mitigation actions, logged events,
//! effect estimates, and the fixed numeric encoding of signals.
//!
//! Encoded column layout for a schema with `H` hardware types and `S`
//! session types (width `11 + H + S`):
//!
//! | columns        | content                                            |
//! |----------------|----------------------------------------------------|
//! | 0              | `vm_count`                                         |
//! | 1              | `repeat_count`                                     |
//! | 2              | `has_important_workload` (0/1)                     |
//! | 3              | `network_ok` (0/1)                                 |
//! | 4              | `uncorrectable_tag` (0/1)                          |
//! | 5..=9          | error code one-hot: none, hw_failure, sw_fault, net_timeout, other |
//! | 10             | error code missing indicator                       |
//! | 11..11+H       | hardware type one-hot                              |
//! | 11+H..11+H+S   | session type one-hot                               |

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mitigation applied to an unhealthy node. The integer codes are persisted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum MitigationAction {
    Reboot = 0,
    Redeploy = 1,
}

impl MitigationAction {
    pub const ALL: [MitigationAction; 2] = [MitigationAction::Reboot, MitigationAction::Redeploy];

    pub fn code(self) -> u8 {
        self as u8
    }

    /// Treatment indicator used by the estimators (Redeploy = 1).
    pub fn indicator(self) -> f64 {
        f64::from(self.code())
    }

    pub fn other(self) -> Self {
        match self {
            MitigationAction::Reboot => MitigationAction::Redeploy,
            MitigationAction::Redeploy => MitigationAction::Reboot,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MitigationAction::Reboot => "Reboot",
            MitigationAction::Redeploy => "Redeploy",
        }
    }

    /// Action preferred by an effect estimate `tau = E[Y(Redeploy)] - E[Y(Reboot)]`.
    /// A tie goes to Reboot, which needs no spare capacity.
    pub fn preferred_by(tau: f64) -> Self {
        if tau < 0.0 {
            MitigationAction::Redeploy
        } else {
            MitigationAction::Reboot
        }
    }
}

impl From<MitigationAction> for u8 {
    fn from(a: MitigationAction) -> u8 {
        a.code()
    }
}

impl TryFrom<u8> for MitigationAction {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            0 => Ok(MitigationAction::Reboot),
            1 => Ok(MitigationAction::Redeploy),
            other => Err(format!("unknown mitigation action code {other}")),
        }
    }
}

impl std::fmt::Display for MitigationAction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Error code reported by node diagnostics. `None` means "diagnostics ran and
/// reported no error", which is distinct from the code being missing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    None,
    HwFailure,
    SwFault,
    NetTimeout,
    Other,
}

impl ErrorCode {
    pub const ALL: [ErrorCode; 5] = [
        ErrorCode::None,
        ErrorCode::HwFailure,
        ErrorCode::SwFault,
        ErrorCode::NetTimeout,
        ErrorCode::Other,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ErrorCode::None => "none",
            ErrorCode::HwFailure => "hw_failure",
            ErrorCode::SwFault => "sw_fault",
            ErrorCode::NetTimeout => "net_timeout",
            ErrorCode::Other => "other",
        }
    }
}

/// Observable diagnostic record for one unhealthy event.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticSignals {
    pub vm_count: u32,
    pub has_important_workload: bool,
    pub network_ok: bool,
    /// `None` when diagnostics could not produce a code.
    pub error_code: Option<ErrorCode>,
    /// Unhealthy events on this node in the trailing window.
    pub repeat_count: u32,
    pub uncorrectable_tag: bool,
    /// Index into the schema's hardware-type set.
    pub hardware_type: u16,
    /// Index into the schema's session-type set.
    pub session_type: u16,
}

impl DiagnosticSignals {
    /// True when the deterministic hardware signals are present.
    pub fn has_hardware_signal(&self) -> bool {
        self.uncorrectable_tag || self.error_code == Some(ErrorCode::HwFailure)
    }
}

/// One observational row: signals, the logged action, and its factual outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabeledEvent {
    pub event_id: String,
    pub node_id: String,
    pub timestamp: i64,
    pub signals: DiagnosticSignals,
    pub action: MitigationAction,
    /// Average VM downtime after mitigation (the outcome).
    pub avd: f64,
    pub interruptions: u32,
    pub blackout: f64,
    pub unallocatable: f64,
}

impl LabeledEvent {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("avd", self.avd),
            ("blackout", self.blackout),
            ("unallocatable", self.unallocatable),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Data(format!(
                    "event {}: {name} must be finite and non-negative, got {v}",
                    self.event_id
                )));
            }
        }
        Ok(())
    }
}

/// Individual treatment effect `tau = E[Y(Redeploy) | x] - E[Y(Reboot) | x]`
/// with its confidence bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IteEstimate {
    pub tau: f64,
    pub tau_lower: f64,
    pub tau_upper: f64,
    pub confidence_level: f64,
}

impl IteEstimate {
    /// Point estimate without an interval.
    pub fn point(tau: f64) -> Self {
        IteEstimate {
            tau,
            tau_lower: tau,
            tau_upper: tau,
            confidence_level: 0.0,
        }
    }

    /// Interval width `tau_upper - tau_lower`.
    pub fn width(&self) -> f64 {
        self.tau_upper - self.tau_lower
    }

    pub fn contains(&self, value: f64) -> bool {
        self.tau_lower <= value && value <= self.tau_upper
    }
}

/// Dense encoded feature row bound to the schema that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub schema_id: String,
}

/// Row-major matrix of encoded features.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureMatrix {
    data: Vec<f64>,
    n_cols: usize,
}

impl FeatureMatrix {
    pub fn new(n_cols: usize) -> Self {
        FeatureMatrix {
            data: Vec::new(),
            n_cols,
        }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let n_cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut m = FeatureMatrix::new(n_cols);
        for r in rows {
            m.push_row(r.as_ref())?;
        }
        Ok(m)
    }

    pub fn push_row(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.n_cols {
            return Err(Error::InvalidArgument(format!(
                "row has {} columns, matrix has {}",
                row.len(),
                self.n_cols
            )));
        }
        self.data.extend_from_slice(row);
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        if self.n_cols == 0 {
            0
        } else {
            self.data.len() / self.n_cols
        }
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n_cols + j]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.n_cols.max(1))
    }

    pub fn select_rows(&self, idx: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(idx.len() * self.n_cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        FeatureMatrix {
            data,
            n_cols: self.n_cols,
        }
    }
}

const NUMERIC_COLUMNS: [&str; 5] = [
    "vm_count",
    "repeat_count",
    "has_important_workload",
    "network_ok",
    "uncorrectable_tag",
];
const ERROR_CODE_START: usize = NUMERIC_COLUMNS.len();
const MISSING_COLUMN: usize = ERROR_CODE_START + ErrorCode::ALL.len();
const HARDWARE_START: usize = MISSING_COLUMN + 1;

/// Encoding layout. Two schemas with the same id encode identically.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSchema {
    pub hardware_types: u16,
    pub session_types: u16,
}

impl Default for FeatureSchema {
    fn default() -> Self {
        FeatureSchema {
            hardware_types: 4,
            session_types: 3,
        }
    }
}

impl FeatureSchema {
    pub fn new(hardware_types: u16, session_types: u16) -> Result<Self> {
        if hardware_types == 0 || session_types == 0 {
            return Err(Error::InvalidArgument(
                "categorical sets must be non-empty".into(),
            ));
        }
        Ok(FeatureSchema {
            hardware_types,
            session_types,
        })
    }

    pub fn id(&self) -> String {
        format!(
            "signals-v1/hw{}/sess{}",
            self.hardware_types, self.session_types
        )
    }

    pub fn width(&self) -> usize {
        HARDWARE_START + usize::from(self.hardware_types) + usize::from(self.session_types)
    }

    fn session_start(&self) -> usize {
        HARDWARE_START + usize::from(self.hardware_types)
    }

    pub fn column_names(&self) -> Vec<String> {
        let mut names: Vec<String> = NUMERIC_COLUMNS.iter().map(|s| s.to_string()).collect();
        names.extend(ErrorCode::ALL.iter().map(|c| format!("error_code={}", c.name())));
        names.push("error_code_missing".into());
        names.extend((0..self.hardware_types).map(|h| format!("hardware_type={h}")));
        names.extend((0..self.session_types).map(|s| format!("session_type={s}")));
        names
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.column_names().iter().position(|c| c == name)
    }

    pub fn check(&self, signals: &DiagnosticSignals) -> Result<()> {
        if signals.hardware_type >= self.hardware_types {
            return Err(Error::SchemaViolation(format!(
                "hardware_type {} outside 0..{}",
                signals.hardware_type, self.hardware_types
            )));
        }
        if signals.session_type >= self.session_types {
            return Err(Error::SchemaViolation(format!(
                "session_type {} outside 0..{}",
                signals.session_type, self.session_types
            )));
        }
        Ok(())
    }

    /// Writes the encoding of `signals` into `out`, which must be `width()` long.
    pub fn encode_into(&self, signals: &DiagnosticSignals, out: &mut [f64]) -> Result<()> {
        self.check(signals)?;
        debug_assert_eq!(out.len(), self.width());
        out.fill(0.0);
        out[0] = f64::from(signals.vm_count);
        out[1] = f64::from(signals.repeat_count);
        out[2] = f64::from(u8::from(signals.has_important_workload));
        out[3] = f64::from(u8::from(signals.network_ok));
        out[4] = f64::from(u8::from(signals.uncorrectable_tag));
        match signals.error_code {
            Some(code) => out[ERROR_CODE_START + code.index()] = 1.0,
            None => out[MISSING_COLUMN] = 1.0,
        }
        out[HARDWARE_START + usize::from(signals.hardware_type)] = 1.0;
        out[self.session_start() + usize::from(signals.session_type)] = 1.0;
        Ok(())
    }

    pub fn encode(&self, signals: &DiagnosticSignals) -> Result<FeatureVector> {
        let mut values = vec![0.0; self.width()];
        self.encode_into(signals, &mut values)?;
        Ok(FeatureVector {
            values,
            schema_id: self.id(),
        })
    }

    pub fn encode_all<'a, I>(&self, signals: I) -> Result<FeatureMatrix>
    where
        I: IntoIterator<Item = &'a DiagnosticSignals>,
    {
        let mut m = FeatureMatrix::new(self.width());
        let mut row = vec![0.0; self.width()];
        for s in signals {
            self.encode_into(s, &mut row)?;
            m.push_row(&row)?;
        }
        Ok(m)
    }

    /// Recovers the categorical fields from an encoded vector.
    pub fn decode_categoricals(&self, v: &FeatureVector) -> Result<(Option<ErrorCode>, u16, u16)> {
        if v.schema_id != self.id() || v.values.len() != self.width() {
            return Err(Error::SchemaViolation(format!(
                "vector from schema {} cannot be decoded by {}",
                v.schema_id,
                self.id()
            )));
        }
        let hot = |range: std::ops::Range<usize>| -> Result<Option<usize>> {
            let ones: Vec<usize> = range
                .clone()
                .filter(|&j| v.values[j] == 1.0)
                .map(|j| j - range.start)
                .collect();
            match ones.as_slice() {
                [] => Ok(None),
                [i] => Ok(Some(*i)),
                _ => Err(Error::SchemaViolation("one-hot block has several hot columns".into())),
            }
        };
        let code = hot(ERROR_CODE_START..MISSING_COLUMN)?.map(|i| ErrorCode::ALL[i]);
        if code.is_some() == (v.values[MISSING_COLUMN] == 1.0) {
            return Err(Error::SchemaViolation(
                "error code block and missing indicator disagree".into(),
            ));
        }
        let hw = hot(HARDWARE_START..self.session_start())?
            .ok_or_else(|| Error::SchemaViolation("no hardware type set".into()))?;
        let sess = hot(self.session_start()..self.width())?
            .ok_or_else(|| Error::SchemaViolation("no session type set".into()))?;
        Ok((code, hw as u16, sess as u16))
    }
}

/// Encodes signals under the default schema.
pub fn encode_features(signals: &DiagnosticSignals) -> Result<FeatureVector> {
    FeatureSchema::default().encode(signals)
}
