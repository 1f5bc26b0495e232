//! Two-stage double machine learning.
//!
//! Stage 1 cross-fits an outcome model `Ỹ = f(X)` and a propensity model
//! `Ã = g(X)`. Stage 2 regresses the outcome residual on the treatment
//! residual with an `X`-dependent slope `θ(X)`, either linear or a causal
//! forest.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{DiagnosticSignals, FeatureMatrix, FeatureSchema, IteEstimate, LabeledEvent, MitigationAction};
use crate::error::{Error, Result};
use crate::forest::{fit_forest, CausalForest, ForestParams, ResidualData};
use crate::learners::{crossfit_predict, ensemble_predict_row, make_folds, FittedLearner, LearnerConfig};
use crate::seeding::derive_seed;

pub const MIN_TRAINING_ROWS: usize = 50;
pub const ENGINE_VERSION: &str = concat!("causal-remedy/", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FinalStageKind {
    Linear,
    #[default]
    Forest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DmlConfig {
    pub folds: usize,
    pub seed: u64,
    pub schema: FeatureSchema,
    pub outcome_learner: LearnerConfig,
    pub propensity_learner: LearnerConfig,
    /// Propensities are clamped to `[floor, 1 - floor]`.
    pub propensity_floor: f64,
    pub final_stage: FinalStageKind,
    pub forest: ForestParams,
}

impl Default for DmlConfig {
    fn default() -> Self {
        DmlConfig {
            folds: 5,
            seed: 7,
            schema: FeatureSchema::default(),
            outcome_learner: LearnerConfig::default(),
            propensity_learner: LearnerConfig::default(),
            propensity_floor: 0.01,
            final_stage: FinalStageKind::Forest,
            forest: ForestParams::default(),
        }
    }
}

impl DmlConfig {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::Config(format!("folds must be at least 2, got {}", self.folds)));
        }
        if !(self.propensity_floor > 0.0 && self.propensity_floor < 0.5) {
            return Err(Error::Config("propensity_floor must lie in (0, 0.5)".into()));
        }
        if self.schema.hardware_types == 0 || self.schema.session_types == 0 {
            return Err(Error::Config("schema categories must be non-empty".into()));
        }
        self.outcome_learner.validate()?;
        self.propensity_learner.validate()?;
        self.forest.validate()
    }
}

/// `θ(x) = intercept + coefficients · x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearTheta {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    /// Ratio of the largest to the smallest retained singular value.
    pub condition_number: f64,
    /// Number of singular values above the pseudo-inverse cutoff.
    pub rank: usize,
}

impl LinearTheta {
    pub fn theta(&self, x: &[f64]) -> f64 {
        self.intercept + self.coefficients.iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }

    pub fn is_rank_deficient(&self) -> bool {
        self.rank < self.coefficients.len() + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FinalStage {
    Linear(LinearTheta),
    Forest(CausalForest),
}

impl FinalStage {
    pub fn kind(&self) -> FinalStageKind {
        match self {
            FinalStage::Linear(_) => FinalStageKind::Linear,
            FinalStage::Forest(_) => FinalStageKind::Forest,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingMetadata {
    pub seed: u64,
    pub n: usize,
    /// Latest event timestamp in the training data.
    pub timestamp: i64,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DmlModel {
    pub schema_id: String,
    pub schema: FeatureSchema,
    pub outcome_learners: Vec<FittedLearner>,
    pub propensity_learners: Vec<FittedLearner>,
    pub final_stage: FinalStage,
    pub metadata: TrainingMetadata,
}

/// Stage-1 output on a training set.
#[derive(Debug, Clone)]
pub struct Residualization {
    pub residuals: ResidualData,
    pub outcome_fit: Vec<f64>,
    pub propensity_fit: Vec<f64>,
    pub outcome_learners: Vec<FittedLearner>,
    pub propensity_learners: Vec<FittedLearner>,
}

fn check_training_set(events: &[LabeledEvent]) -> Result<()> {
    if events.len() < MIN_TRAINING_ROWS {
        return Err(Error::InsufficientData(format!(
            "training needs at least {MIN_TRAINING_ROWS} rows, got {}",
            events.len()
        )));
    }
    for e in events {
        e.validate()?;
    }
    let redeploys = events.iter().filter(|e| e.action == MitigationAction::Redeploy).count();
    if redeploys == 0 || redeploys == events.len() {
        let only = events[0].action;
        return Err(Error::DegenerateTreatment(format!("every training row used {only}")));
    }
    Ok(())
}

/// Cross-fits both nuisance models and returns the residuals.
pub fn residualize(events: &[LabeledEvent], config: &DmlConfig) -> Result<Residualization> {
    config.validate()?;
    check_training_set(events)?;
    let x = config.schema.encode_all(events.iter().map(|e| &e.signals))?;
    let y: Vec<f64> = events.iter().map(|e| e.avd).collect();
    let a: Vec<f64> = events.iter().map(|e| e.action.indicator()).collect();
    let folds = make_folds(events.len(), config.folds, config.seed)?;
    let (outcome, propensity) = rayon::join(
        || crossfit_predict(&x, &y, &folds, &config.outcome_learner, None, derive_seed(config.seed, &[1])),
        || {
            crossfit_predict(
                &x,
                &a,
                &folds,
                &config.propensity_learner,
                Some(config.propensity_floor),
                derive_seed(config.seed, &[2]),
            )
        },
    );
    let (outcome, propensity) = (outcome?, propensity?);
    let ry = y.iter().zip(&outcome.out_of_fold).map(|(v, f)| v - f).collect();
    let ra = a.iter().zip(&propensity.out_of_fold).map(|(v, g)| v - g).collect();
    Ok(Residualization {
        residuals: ResidualData::new(ry, ra, x)?,
        outcome_fit: outcome.out_of_fold,
        propensity_fit: propensity.out_of_fold,
        outcome_learners: outcome.learners,
        propensity_learners: propensity.learners,
    })
}

/// Least squares for `ry ≈ (c + β·x)·ra` through the SVD pseudo-inverse, so
/// collinear designs (one-hot groups) get the minimum-norm solution.
pub fn final_stage_linear(res: &ResidualData) -> Result<LinearTheta> {
    if !res.ra.iter().any(|&r| r != 0.0) {
        return Err(Error::DegenerateTreatment("every treatment residual is zero".into()));
    }
    let n = res.len();
    let p = res.features.n_cols() + 1;
    let design = DMatrix::from_fn(n, p, |i, j| {
        let v = if j == 0 { 1.0 } else { res.features.get(i, j - 1) };
        v * res.ra[i]
    });
    let target = DVector::from_column_slice(&res.ry);
    let svd = design.svd(true, true);
    let s_max = svd.singular_values.max();
    let cutoff = s_max * 1e-10 * (n.max(p) as f64);
    let retained: Vec<f64> = svd.singular_values.iter().copied().filter(|&s| s > cutoff).collect();
    let s_min = retained.iter().copied().fold(f64::INFINITY, f64::min);
    let solution = svd
        .solve(&target, cutoff)
        .map_err(|e| Error::DegenerateTreatment(format!("final-stage solve failed: {e}")))?;
    Ok(LinearTheta {
        intercept: solution[0],
        coefficients: solution.iter().skip(1).copied().collect(),
        condition_number: s_max / s_min,
        rank: retained.len(),
    })
}

/// Runs both stages on `events`.
pub fn train_dml(events: &[LabeledEvent], config: &DmlConfig) -> Result<DmlModel> {
    let stage1 = residualize(events, config)?;
    let final_stage = match config.final_stage {
        FinalStageKind::Linear => FinalStage::Linear(final_stage_linear(&stage1.residuals)?),
        FinalStageKind::Forest => FinalStage::Forest(fit_forest(
            &stage1.residuals,
            &config.forest,
            derive_seed(config.seed, &[3]),
        )?),
    };
    Ok(DmlModel {
        schema_id: config.schema.id(),
        schema: config.schema.clone(),
        outcome_learners: stage1.outcome_learners,
        propensity_learners: stage1.propensity_learners,
        final_stage,
        metadata: TrainingMetadata {
            seed: config.seed,
            n: events.len(),
            timestamp: events.iter().map(|e| e.timestamp).max().unwrap_or(0),
            version: ENGINE_VERSION.to_string(),
        },
    })
}

impl DmlModel {
    fn check_schema(&self) -> Result<()> {
        if self.schema.id() != self.schema_id {
            return Err(Error::SchemaViolation(format!(
                "model schema id {} does not match its layout {}",
                self.schema_id,
                self.schema.id()
            )));
        }
        Ok(())
    }

    fn check_width(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.schema.width() {
            return Err(Error::SchemaViolation(format!(
                "model {} expects {} features, got {}",
                self.schema_id,
                self.schema.width(),
                x.len()
            )));
        }
        Ok(())
    }

    pub fn encode(&self, signals: &DiagnosticSignals) -> Result<Vec<f64>> {
        self.check_schema()?;
        Ok(self.schema.encode(signals)?.values)
    }

    /// Point effect `θ(x)` on an encoded row.
    pub fn theta(&self, x: &[f64]) -> Result<f64> {
        self.check_width(x)?;
        match &self.final_stage {
            FinalStage::Linear(l) => Ok(l.theta(x)),
            FinalStage::Forest(f) => f.predict_tau(x),
        }
    }

    /// Effect estimate with interval on an encoded row.
    pub fn estimate_row(&self, x: &[f64]) -> Result<IteEstimate> {
        self.check_width(x)?;
        match &self.final_stage {
            FinalStage::Linear(l) => Ok(IteEstimate::point(l.theta(x))),
            FinalStage::Forest(f) => f.predict_tau_ci(x, f.params.confidence_level),
        }
    }

    /// Held-out nuisance predictions `(Ỹ, Ã)`, averaged over the fold learners.
    pub fn nuisance(&self, x: &[f64]) -> Result<(f64, f64)> {
        self.check_width(x)?;
        Ok((
            ensemble_predict_row(&self.outcome_learners, x),
            ensemble_predict_row(&self.propensity_learners, x),
        ))
    }

    pub fn final_stage_kind(&self) -> FinalStageKind {
        self.final_stage.kind()
    }
}

/// Individual effect estimate for one event. Forest models report an
/// interval; linear models report a zero-width one.
pub fn estimate_ite(model: &DmlModel, signals: &DiagnosticSignals) -> Result<IteEstimate> {
    model.estimate_row(&model.encode(signals)?)
}

pub fn estimate_ite_batch(model: &DmlModel, signals: &[DiagnosticSignals]) -> Result<Vec<IteEstimate>> {
    signals.par_iter().map(|s| estimate_ite(model, s)).collect()
}

/// Mean of `((Y − Ỹ) − θ(X)(A − Ã))²`.
pub fn psi_loss(model: &DmlModel, events: &[LabeledEvent]) -> Result<f64> {
    if events.is_empty() {
        return Err(Error::InsufficientData("psi loss needs at least one row".into()));
    }
    let terms: Vec<f64> = events
        .par_iter()
        .map(|e| {
            let x = model.encode(&e.signals)?;
            let (y_hat, a_hat) = model.nuisance(&x)?;
            let theta = model.theta(&x)?;
            Ok(((e.avd - y_hat) - theta * (e.action.indicator() - a_hat)).powi(2))
        })
        .collect::<Result<_>>()?;
    Ok(terms.iter().sum::<f64>() / terms.len() as f64)
}

/// ψ of an arbitrary effect function given residuals; used to score the true
/// effect against fitted models.
pub fn psi_of(ry: &[f64], ra: &[f64], theta: &[f64]) -> f64 {
    let n = ry.len();
    ry.iter()
        .zip(ra)
        .zip(theta)
        .map(|((y, a), t)| (y - t * a).powi(2))
        .sum::<f64>()
        / n as f64
}

/// Encoded features of a set of events under a model's schema.
pub fn encode_events(model: &DmlModel, events: &[LabeledEvent]) -> Result<FeatureMatrix> {
    model.check_schema()?;
    model.schema.encode_all(events.iter().map(|e| &e.signals))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::seeded_uniforms;
    use crate::sim::{generate_observational_dataset, SimConfig};
    use approx::assert_abs_diff_eq;

    fn signals(vm_count: u32) -> DiagnosticSignals {
        DiagnosticSignals {
            vm_count,
            ..DiagnosticSignals::default()
        }
    }

    fn event(i: usize, vm_count: u32, action: MitigationAction, avd: f64) -> LabeledEvent {
        LabeledEvent {
            event_id: format!("t{i}"),
            node_id: format!("n{i}"),
            timestamp: i as i64,
            signals: signals(vm_count),
            action,
            avd,
            interruptions: vm_count,
            blackout: 0.0,
            unallocatable: 0.0,
        }
    }

    fn fixed_model(y_hat: f64, a_hat: f64, theta: f64) -> DmlModel {
        let schema = FeatureSchema::default();
        let w = schema.width();
        DmlModel {
            schema_id: schema.id(),
            schema,
            outcome_learners: vec![FittedLearner::constant(y_hat, w); 2],
            propensity_learners: vec![FittedLearner::constant(a_hat, w); 2],
            final_stage: FinalStage::Linear(LinearTheta {
                intercept: theta,
                coefficients: vec![0.0; w],
                condition_number: 1.0,
                rank: w + 1,
            }),
            metadata: TrainingMetadata {
                seed: 0,
                n: 0,
                timestamp: 0,
                version: ENGINE_VERSION.into(),
            },
        }
    }

    #[test]
    fn psi_matches_four_row_hand_calculation() {
        // Ỹ = 3, Ã = 0.25, θ = 2.
        // rows (Y, A): (5,1) (1,0) (4,1) (2,0)
        // ry: 2, -2, 1, -1   ra: 0.75, -0.25, 0.75, -0.25
        // r - θ·ra: 0.5, -1.5, -0.5, -0.5 → squares 0.25, 2.25, 0.25, 0.25
        // mean = 3.0 / 4 = 0.75
        use MitigationAction::*;
        let events = vec![
            event(0, 1, Redeploy, 5.0),
            event(1, 1, Reboot, 1.0),
            event(2, 1, Redeploy, 4.0),
            event(3, 1, Reboot, 2.0),
        ];
        let psi = psi_loss(&fixed_model(3.0, 0.25, 2.0), &events).unwrap();
        assert_abs_diff_eq!(psi, 0.75, epsilon = 1e-12);
    }

    #[test]
    fn psi_is_zero_for_perfect_nuisance_and_null_effect() {
        let events: Vec<_> = (0..5).map(|i| event(i, 1, MitigationAction::Reboot, 4.0)).collect();
        assert_eq!(psi_loss(&fixed_model(4.0, 0.0, 0.0), &events).unwrap(), 0.0);
    }

    fn residuals(rows: &[Vec<f64>], ry: Vec<f64>, ra: Vec<f64>) -> ResidualData {
        ResidualData::new(ry, ra, FeatureMatrix::from_rows(rows).unwrap()).unwrap()
    }

    #[test]
    fn linear_stage_recovers_constant_effect() {
        let rows = vec![vec![0.0, 0.0]; 4];
        let ra = vec![0.5, -0.2, 0.3, -0.9];
        let ry = ra.iter().map(|a| 2.0 * a).collect();
        let fit = final_stage_linear(&residuals(&rows, ry, ra)).unwrap();
        assert_abs_diff_eq!(fit.intercept, 2.0, epsilon = 1e-8);
        assert!(fit.coefficients.iter().all(|b| b.abs() < 1e-8));
        assert!(fit.is_rank_deficient());
    }

    #[test]
    fn linear_stage_recovers_slope_in_x1() {
        // ry = (1 + x1)·ra exactly; the design [ra, x1·ra, x2·ra] has full
        // rank, so the normal equations give c = 1, β = (1, 0).
        let rows = vec![
            vec![0.0, 1.0],
            vec![1.0, 0.0],
            vec![2.0, 3.0],
            vec![-1.0, 2.0],
            vec![0.5, -1.0],
        ];
        let ra = vec![0.4, -0.6, 0.2, 0.7, -0.3];
        let ry = rows.iter().zip(&ra).map(|(r, a)| (1.0 + r[0]) * a).collect();
        let fit = final_stage_linear(&residuals(&rows, ry, ra)).unwrap();
        assert_abs_diff_eq!(fit.intercept, 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(fit.coefficients[0], 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(fit.coefficients[1], 0.0, epsilon = 1e-8);
        assert_eq!(fit.rank, 3);
    }

    #[test]
    fn zero_treatment_residuals_rejected() {
        let rows = vec![vec![1.0]; 3];
        let res = residuals(&rows, vec![1.0, 2.0, 3.0], vec![0.0; 3]);
        assert!(matches!(final_stage_linear(&res), Err(Error::DegenerateTreatment(_))));
    }

    #[test]
    fn training_preconditions() {
        let few: Vec<_> = (0..49).map(|i| event(i, 1, MitigationAction::Reboot, 1.0)).collect();
        assert!(matches!(train_dml(&few, &DmlConfig::default()), Err(Error::InsufficientData(_))));
        let one_action: Vec<_> = (0..60).map(|i| event(i, 1, MitigationAction::Reboot, 1.0)).collect();
        assert!(matches!(
            train_dml(&one_action, &DmlConfig::default()),
            Err(Error::DegenerateTreatment(_))
        ));
    }

    fn linear_config() -> DmlConfig {
        DmlConfig {
            final_stage: FinalStageKind::Linear,
            ..DmlConfig::default()
        }
    }

    #[test]
    fn linear_model_has_zero_width_interval() {
        let data = generate_observational_dataset(400, &SimConfig::constant_effect(2.0)).unwrap();
        let model = train_dml(&data.events, &linear_config()).unwrap();
        let est = estimate_ite(&model, &data.events[0].signals).unwrap();
        assert_eq!(est.tau_upper - est.tau_lower, 0.0);
        assert_eq!(est.tau, est.tau_lower);
    }

    #[test]
    fn randomized_null_effect_averages_zero() {
        let u = seeded_uniforms(99, 3 * 2000);
        let events: Vec<_> = u
            .chunks(3)
            .enumerate()
            .map(|(i, c)| {
                let action = if c[0] < 0.5 {
                    MitigationAction::Reboot
                } else {
                    MitigationAction::Redeploy
                };
                let vm = 1 + (c[1] * 8.0) as u32;
                event(i, vm, action, f64::from(vm) + 0.5 * c[2])
            })
            .collect();
        let model = train_dml(&events, &DmlConfig::default()).unwrap();
        let taus = estimate_ite_batch(&model, &events.iter().map(|e| e.signals.clone()).collect::<Vec<_>>()).unwrap();
        let mean = taus.iter().map(|t| t.tau).sum::<f64>() / taus.len() as f64;
        assert!(mean.abs() <= 0.1, "mean effect {mean}");
    }

    #[test]
    fn training_is_deterministic() {
        let data = generate_observational_dataset(300, &SimConfig::default()).unwrap();
        let a = train_dml(&data.events, &DmlConfig::default()).unwrap();
        let b = train_dml(&data.events, &DmlConfig::default()).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_eq!(a.metadata.timestamp, data.events.iter().map(|e| e.timestamp).max().unwrap());
    }

    #[test]
    fn foreign_schema_rejected() {
        let data = generate_observational_dataset(200, &SimConfig::default()).unwrap();
        let model = train_dml(&data.events, &linear_config()).unwrap();
        let mut odd = data.events[0].signals.clone();
        odd.hardware_type = 99;
        assert!(matches!(estimate_ite(&model, &odd), Err(Error::SchemaViolation(_))));
        assert!(matches!(model.theta(&[0.0; 3]), Err(Error::SchemaViolation(_))));
    }
}
