//! Files: JSONL datasets, the model container, the action log, experiment
//! configs and the model-update gate.
//!
//! Model container layout (little-endian):
//!
//! | bytes | content |
//! |-------|---------|
//! | 8 | magic `RMDYMDL\0` |
//! | 2 | format major |
//! | 2 | format minor |
//! | 8 | payload length `n` |
//! | n | JSON payload |
//! | 32 | SHA-256 of the payload |

use std::collections::HashSet;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::decision::{DecisionConfig, PolicyDecision};
use crate::dml::{psi_loss, train_dml, DmlConfig, DmlModel, FinalStageKind};
use crate::domain::LabeledEvent;
use crate::error::{Error, Result};
use crate::sim::SimConfig;

pub const MODEL_MAGIC: &[u8; 8] = b"RMDYMDL\0";
pub const FORMAT_MAJOR: u16 = 1;
pub const FORMAT_MINOR: u16 = 0;
const HEADER_LEN: usize = 20;
const DIGEST_LEN: usize = 32;

// ── JSONL ───────────────────────────────────────────────────────────────

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for row in rows {
        serde_json::to_writer(&mut w, row).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads one JSON value per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

/// Reads and validates a labelled dataset.
pub fn read_events(path: &Path) -> Result<Vec<LabeledEvent>> {
    let events: Vec<LabeledEvent> = read_jsonl(path)?;
    for e in &events {
        e.validate()?;
    }
    Ok(events)
}

// ── Model container ─────────────────────────────────────────────────────

pub fn encode_model(model: &DmlModel) -> Result<Vec<u8>> {
    let payload = serde_json::to_vec(model).map_err(|e| Error::Data(format!("model serialization: {e}")))?;
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len() + DIGEST_LEN);
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&FORMAT_MAJOR.to_le_bytes());
    out.extend_from_slice(&FORMAT_MINOR.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    out.extend_from_slice(&Sha256::digest(&payload));
    Ok(out)
}

pub fn decode_model(bytes: &[u8]) -> Result<DmlModel> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Checksum(format!("file too short ({} bytes)", bytes.len())));
    }
    if &bytes[..8] != MODEL_MAGIC {
        return Err(Error::Checksum("not a model file (bad magic)".into()));
    }
    let major = u16::from_le_bytes([bytes[8], bytes[9]]);
    let minor = u16::from_le_bytes([bytes[10], bytes[11]]);
    if major != FORMAT_MAJOR {
        return Err(Error::VersionMismatch {
            found: format!("{major}.{minor}"),
            expected: FORMAT_MAJOR,
        });
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().expect("eight bytes"));
    let expected_total = (HEADER_LEN as u64).checked_add(len).and_then(|v| v.checked_add(DIGEST_LEN as u64));
    if expected_total != Some(bytes.len() as u64) {
        return Err(Error::Checksum(format!(
            "length mismatch: header declares {len} payload bytes, file has {}",
            bytes.len()
        )));
    }
    let payload = &bytes[HEADER_LEN..HEADER_LEN + len as usize];
    if Sha256::digest(payload).as_slice() != &bytes[HEADER_LEN + len as usize..] {
        return Err(Error::Checksum("payload digest does not match".into()));
    }
    let model: DmlModel =
        serde_json::from_slice(payload).map_err(|e| Error::SchemaViolation(format!("model payload: {e}")))?;
    if model.schema.id() != model.schema_id {
        return Err(Error::SchemaViolation(format!(
            "schema id {} does not match layout {}",
            model.schema_id,
            model.schema.id()
        )));
    }
    Ok(model)
}

/// Writes `bytes` next to `path`, syncs, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)?;
        if let Ok(d) = File::open(dir) {
            let _ = d.sync_all();
        }
        Ok(())
    })();
    result.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub fn save_model(model: &DmlModel, path: &Path) -> Result<()> {
    write_atomic(path, &encode_model(model)?)
}

pub fn load_model(path: &Path) -> Result<DmlModel> {
    decode_model(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

// ── Action log ──────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionLogRecord {
    pub unhealthy_timestamp: i64,
    pub action_timestamp: i64,
    pub experiment_name: String,
    pub model_type: String,
    pub model_name: String,
    pub model_version: String,
    pub tau: Option<f64>,
    pub tau_lower: Option<f64>,
    pub tau_upper: Option<f64>,
    pub action: String,
    pub action_parameters: serde_json::Map<String, serde_json::Value>,
    pub source: String,
    pub reason: String,
    pub node_id: String,
    pub event_id: String,
}

/// Identity of the model and event a decision belongs to.
#[derive(Debug, Clone)]
pub struct DecisionContext<'a> {
    pub experiment_name: &'a str,
    pub model_name: &'a str,
    pub node_id: &'a str,
    pub event_id: &'a str,
    pub unhealthy_timestamp: i64,
    pub action_timestamp: i64,
}

impl ActionLogRecord {
    pub fn new(decision: &PolicyDecision, model: &DmlModel, ctx: &DecisionContext<'_>) -> Result<Self> {
        if ctx.action_timestamp < ctx.unhealthy_timestamp {
            return Err(Error::InvalidArgument("action timestamp precedes the unhealthy timestamp".into()));
        }
        let model_type = match model.final_stage_kind() {
            FinalStageKind::Linear => "linear",
            FinalStageKind::Forest => "forest",
        };
        Ok(ActionLogRecord {
            unhealthy_timestamp: ctx.unhealthy_timestamp,
            action_timestamp: ctx.action_timestamp,
            experiment_name: ctx.experiment_name.to_string(),
            model_type: model_type.to_string(),
            model_name: ctx.model_name.to_string(),
            model_version: model.metadata.version.clone(),
            tau: decision.ite.map(|i| i.tau),
            tau_lower: decision.ite.map(|i| i.tau_lower),
            tau_upper: decision.ite.map(|i| i.tau_upper),
            action: decision.action.name().to_string(),
            action_parameters: serde_json::Map::new(),
            source: decision.source.name().to_string(),
            reason: decision.reason.clone(),
            node_id: ctx.node_id.to_string(),
            event_id: ctx.event_id.to_string(),
        })
    }
}

/// Appends one JSON line and flushes.
pub fn log_action<W: Write>(record: &ActionLogRecord, sink: &mut W) -> Result<()> {
    let mut line = serde_json::to_vec(record).map_err(|e| Error::Data(format!("action record: {e}")))?;
    line.push(b'\n');
    sink.write_all(&line)
        .and_then(|_| sink.flush())
        .map_err(|e| Error::io("<action log>", e))
}

/// Append-only JSONL action log on disk.
pub struct ActionLogger {
    path: PathBuf,
    file: File,
}

impl ActionLogger {
    pub fn open(path: &Path) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(ActionLogger {
            path: path.to_path_buf(),
            file,
        })
    }

    pub fn log(&mut self, record: &ActionLogRecord) -> Result<()> {
        log_action(record, &mut self.file).map_err(|e| match e {
            Error::Io { source, .. } => Error::io(&self.path, source),
            other => other,
        })
    }
}

// ── Experiment config ───────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GateConfig {
    /// Candidate must beat the current ψ by at least this much.
    pub margin: f64,
}

impl Default for GateConfig {
    fn default() -> Self {
        GateConfig { margin: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Seed of the fresh events used by policy comparisons and A/B runs.
    pub seed: u64,
    pub policies: Vec<String>,
    /// Size of the dataset used to train an engine when none is supplied.
    pub training_events: usize,
    pub histogram_bins: usize,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            seed: 1,
            policies: ["oracle", "engine", "legacy", "always_reboot", "always_redeploy", "random"]
                .map(String::from)
                .to_vec(),
            training_events: 10_000,
            histogram_bins: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterpretConfig {
    pub depth: usize,
    pub bins: usize,
}

impl Default for InterpretConfig {
    fn default() -> Self {
        InterpretConfig { depth: 3, bins: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub action_log: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub simulation: SimConfig,
    pub dml: DmlConfig,
    pub decision: DecisionConfig,
    pub gate: GateConfig,
    pub evaluation: EvaluationConfig,
    pub interpret: InterpretConfig,
    pub paths: PathsConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "default".into(),
            simulation: SimConfig::default(),
            dml: DmlConfig::default(),
            decision: DecisionConfig::default(),
            gate: GateConfig::default(),
            evaluation: EvaluationConfig::default(),
            interpret: InterpretConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Named scenario presets.
    pub fn preset(name: &str) -> Result<Self> {
        let base = ExperimentConfig {
            name: name.to_string(),
            ..ExperimentConfig::default()
        };
        Ok(match name {
            "default" => base,
            "zero_effect" => ExperimentConfig {
                simulation: SimConfig::zero_effect(),
                ..base
            },
            "constant_effect" => ExperimentConfig {
                simulation: SimConfig::constant_effect(2.0),
                ..base
            },
            "two_regime" => {
                let mut cfg = ExperimentConfig {
                    simulation: SimConfig::two_regime(5.0),
                    ..base
                };
                // One regime boundary: every column is a split candidate and
                // shallow trees suffice.
                cfg.dml.forest.features_per_split = Some(cfg.dml.schema.width());
                cfg.dml.forest.max_depth = 3;
                cfg
            }
            "recurrence_heavy" => ExperimentConfig {
                simulation: SimConfig::recurrence_heavy(),
                ..base
            },
            other => return Err(Error::Config(format!("unknown preset {other:?}"))),
        })
    }

    pub const PRESETS: [&'static str; 5] = ["default", "zero_effect", "constant_effect", "two_regime", "recurrence_heavy"];

    pub fn validate(&self) -> Result<()> {
        self.simulation.validate()?;
        self.dml.validate()?;
        self.decision.validate()?;
        if self.simulation.schema() != self.dml.schema {
            return Err(Error::Config(format!(
                "simulation produces schema {} but dml.schema is {}",
                self.simulation.schema().id(),
                self.dml.schema.id()
            )));
        }
        if !(self.gate.margin.is_finite() && self.gate.margin >= 0.0) {
            return Err(Error::Config("gate.margin must be a non-negative number".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

pub fn load_decision_config(path: &Path) -> Result<DecisionConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cfg: DecisionConfig =
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}

// ── Model update gate ───────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateReport {
    pub deployed: bool,
    pub psi_current: Option<f64>,
    pub psi_candidate: Option<f64>,
    pub margin: f64,
    pub reason: String,
}

pub struct UpdateOutcome {
    /// The model that should be serving after the update.
    pub model: DmlModel,
    pub report: UpdateReport,
}

/// Trains a candidate on `recent` and deploys it only if its ψ on `holdout`
/// is at most the current ψ minus the margin. Ties keep the current model.
pub fn update_model(
    current: DmlModel,
    recent: &[LabeledEvent],
    holdout: &[LabeledEvent],
    gate: &GateConfig,
    dml: &DmlConfig,
) -> Result<UpdateOutcome> {
    let recent_ids: HashSet<&str> = recent.iter().map(|e| e.event_id.as_str()).collect();
    if holdout.iter().any(|e| recent_ids.contains(e.event_id.as_str())) {
        return Err(Error::InvalidArgument("holdout shares events with the recent window".into()));
    }
    let keep = |current: DmlModel, psi_current, psi_candidate, reason: String| UpdateOutcome {
        model: current,
        report: UpdateReport {
            deployed: false,
            psi_current,
            psi_candidate,
            margin: gate.margin,
            reason,
        },
    };
    if holdout.is_empty() {
        return Ok(keep(current, None, None, "insufficient data: empty holdout".into()));
    }
    let psi_current = psi_loss(&current, holdout)?;
    let candidate = match train_dml(recent, dml) {
        Ok(m) => m,
        Err(e) => return Ok(keep(current, Some(psi_current), None, format!("candidate training failed: {e}"))),
    };
    let psi_candidate = psi_loss(&candidate, holdout)?;
    if psi_candidate <= psi_current - gate.margin && psi_candidate < psi_current {
        Ok(UpdateOutcome {
            model: candidate,
            report: UpdateReport {
                deployed: true,
                psi_current: Some(psi_current),
                psi_candidate: Some(psi_candidate),
                margin: gate.margin,
                reason: format!("candidate psi {psi_candidate:.6} improves on {psi_current:.6}"),
            },
        })
    } else {
        Ok(keep(
            current,
            Some(psi_current),
            Some(psi_candidate),
            format!("candidate psi {psi_candidate:.6} does not improve on {psi_current:.6}"),
        ))
    }
}
