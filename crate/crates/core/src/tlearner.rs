//! T-learner composition: fit one base learner per treatment arm on a
//! shared encoding, then impute per-row effects as the prediction gap
//! between the two arms.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Encoder};
use crate::learners::{EstimatorConfig, FittedModel};
use crate::repnet::RepNetModel;
use crate::rng::substream_seed;
use crate::{Error, Result};

/// The two ways this crate produces a (mu0, mu1) predictor pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum PairPredictor {
    /// Independent fits per arm over a shared encoder.
    TLearner {
        f0: FittedModel,
        f1: FittedModel,
        encoder: Encoder,
    },
    /// Shared representation with two heads.
    #[serde(rename = "repnet")]
    RepNet(RepNetModel),
}

/// A fitted potential-outcome pair with provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomePairModel {
    pub predictor: PairPredictor,
    pub model_id: String,
    pub fit_seed: u64,
}

impl OutcomePairModel {
    /// Per-row predictions of both potential outcomes.
    pub fn predict_mu_pair(&self, data: &Dataset) -> Result<(Vec<f64>, Vec<f64>)> {
        match &self.predictor {
            PairPredictor::TLearner { f0, f1, encoder } => {
                let x = encoder.transform(data)?;
                Ok((f0.predict(&x)?, f1.predict(&x)?))
            }
            PairPredictor::RepNet(m) => m.predict_pair(data),
        }
    }

    pub fn encoder(&self) -> &Encoder {
        match &self.predictor {
            PairPredictor::TLearner { encoder, .. } => encoder,
            PairPredictor::RepNet(m) => &m.encoder,
        }
    }
}

/// On-disk envelope for pair models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairModelDocument {
    pub format_version: u32,
    pub model: OutcomePairModel,
}

impl PairModelDocument {
    pub const CURRENT_VERSION: u32 = 1;

    pub fn new(model: OutcomePairModel) -> Self {
        Self {
            format_version: Self::CURRENT_VERSION,
            model,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: PairModelDocument = serde_json::from_str(text)?;
        if doc.format_version != Self::CURRENT_VERSION {
            return Err(Error::Schema(format!(
                "unsupported pair model format version {}",
                doc.format_version
            )));
        }
        Ok(doc)
    }
}

/// Per-row imputed effects with provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CateTable {
    pub row_ids: Vec<usize>,
    pub school_ids: Vec<String>,
    pub tau_hat: Vec<f64>,
    pub model_id: String,
    pub seed: u64,
    /// 0 marks the point estimate; bootstrap replicates count from 1.
    pub replicate_id: u64,
}

impl CateTable {
    pub fn len(&self) -> usize {
        self.tau_hat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tau_hat.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.tau_hat.iter().sum::<f64>() / self.tau_hat.len() as f64
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["row_id", "school_id", "tau_hat", "model_id"])?;
        for i in 0..self.len() {
            w.write_record([
                self.row_ids[i].to_string(),
                self.school_ids[i].clone(),
                self.tau_hat[i].to_string(),
                self.model_id.clone(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Fit f0 on control rows and f1 on treated rows of `train`, with the
/// feature encoder fit on all training rows so both arms share one feature
/// space. Arm seeds derive from `seed` by arm index.
pub fn fit_t_learner(
    train: &Dataset,
    config: &EstimatorConfig,
    seed: u64,
) -> Result<OutcomePairModel> {
    let all_rows: Vec<usize> = (0..train.n_rows()).collect();
    let encoder = Encoder::fit(train, &all_rows, true)?;
    fit_t_learner_with_encoder(train, encoder, config, seed)
}

/// [`fit_t_learner`] with a caller-supplied encoder. Each arm's fit sees
/// only its own rows, so with the encoder held fixed, rows of the other arm
/// cannot influence it.
pub fn fit_t_learner_with_encoder(
    train: &Dataset,
    encoder: Encoder,
    config: &EstimatorConfig,
    seed: u64,
) -> Result<OutcomePairModel> {
    config.validate()?;
    let x = encoder.transform(train)?;
    let (codes, _) = train.school_codes();

    let mut arm_models = Vec::with_capacity(2);
    for (z, name) in [(0u8, "control"), (1u8, "treated")] {
        let rows = train.group_rows(z);
        if rows.is_empty() {
            return Err(Error::Fit(format!("{name} group (z={z}) is empty")));
        }
        let xg = x.select_rows(&rows);
        let yg: Vec<f64> = rows.iter().map(|&r| train.outcome()[r]).collect();
        let sg: Vec<u32> = rows.iter().map(|&r| codes[r]).collect();
        let model = config.fit(&xg, &yg, Some(&sg), substream_seed(seed, u64::from(z)))?;
        arm_models.push(model);
    }
    let f1 = arm_models.pop().expect("two arms");
    let f0 = arm_models.pop().expect("two arms");

    Ok(OutcomePairModel {
        model_id: format!("t_learner/{}", config.family()),
        fit_seed: seed,
        predictor: PairPredictor::TLearner { f0, f1, encoder },
    })
}

/// Impute per-row effects on `data` as `f1(x) - f0(x)`.
pub fn impute_cate(model: &OutcomePairModel, data: &Dataset) -> Result<CateTable> {
    let (mu0, mu1) = model.predict_mu_pair(data)?;
    Ok(CateTable {
        row_ids: (0..data.n_rows()).collect(),
        school_ids: data.school_ids().to_vec(),
        tau_hat: mu1.iter().zip(&mu0).map(|(a, b)| a - b).collect(),
        model_id: model.model_id.clone(),
        seed: model.fit_seed,
        replicate_id: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{
        generate_synthetic, EffectSpec, LinearSpec, PropensitySpec, SyntheticConfig,
    };
    use crate::learners::ridge_fit;

    fn ridge_config() -> EstimatorConfig {
        EstimatorConfig::Ridge { lambda: 1e-8 }
    }

    fn constant_effect_data(
        value: f64,
        baseline: LinearSpec,
        noise_sd: f64,
        n_schools: usize,
        per: usize,
        seed: u64,
    ) -> Dataset {
        let (d, _) = generate_synthetic(&SyntheticConfig {
            n_schools,
            students_per_school: per,
            effect: EffectSpec::Constant { value },
            baseline,
            propensity: PropensitySpec::Constant { value: 0.5 },
            noise_sd,
            seed,
        })
        .unwrap();
        d
    }

    #[test]
    fn outcome_equal_to_treatment_gives_unit_effect() {
        let d = constant_effect_data(1.0, LinearSpec::default(), 0.0, 8, 20, 3);
        let model = fit_t_learner(&d, &ridge_config(), 0).unwrap();
        let cate = impute_cate(&model, &d).unwrap();
        for t in &cate.tau_hat {
            assert!((t - 1.0).abs() < 1e-6, "tau {t}");
        }
    }

    #[test]
    fn null_effect_imputes_zero() {
        let baseline = LinearSpec {
            intercept: 2.0,
            terms: vec![("S3".into(), 0.3), ("X1".into(), -0.5), ("C2".into(), 0.1)],
        };
        let d = constant_effect_data(0.0, baseline, 0.0, 8, 20, 4);
        let model = fit_t_learner(&d, &ridge_config(), 0).unwrap();
        let cate = impute_cate(&model, &d).unwrap();
        for t in &cate.tau_hat {
            assert!(t.abs() < 1e-6, "tau {t}");
        }
    }

    #[test]
    fn constant_effect_recovered_at_scale() {
        let baseline = LinearSpec {
            intercept: 1.0,
            terms: vec![("S3".into(), 0.2), ("X1".into(), 0.5)],
        };
        let d = constant_effect_data(0.26, baseline, 0.5, 50, 200, 5);
        assert_eq!(d.n_rows(), 10_000);
        let model = fit_t_learner(&d, &ridge_config(), 0).unwrap();
        let cate = impute_cate(&model, &d).unwrap();
        let mean = cate.mean();
        assert!((mean - 0.26).abs() < 0.02, "mean tau {mean}");
    }

    #[test]
    fn identical_arm_models_impute_zero() {
        let d = constant_effect_data(0.4, LinearSpec::default(), 0.3, 5, 10, 6);
        let fitted = fit_t_learner(&d, &ridge_config(), 0).unwrap();
        let (f0, encoder) = match fitted.predictor {
            PairPredictor::TLearner { f0, encoder, .. } => (f0, encoder),
            _ => unreachable!(),
        };
        let twin = OutcomePairModel {
            predictor: PairPredictor::TLearner {
                f0: f0.clone(),
                f1: f0,
                encoder,
            },
            model_id: "twin".into(),
            fit_seed: 0,
        };
        let cate = impute_cate(&twin, &d).unwrap();
        assert!(cate.tau_hat.iter().all(|t| *t == 0.0));
    }

    #[test]
    fn intercept_shift_imputes_that_constant() {
        let d = constant_effect_data(0.0, LinearSpec::default(), 0.2, 5, 10, 7);
        let all: Vec<usize> = (0..d.n_rows()).collect();
        let encoder = Encoder::fit(&d, &all, true).unwrap();
        let x = encoder.transform(&d).unwrap();
        let base = ridge_fit(&x, d.outcome(), 0.1).unwrap();
        let mut shifted = base.clone();
        shifted.intercept += 0.75;
        let model = OutcomePairModel {
            predictor: PairPredictor::TLearner {
                f0: FittedModel::Ridge(base),
                f1: FittedModel::Ridge(shifted),
                encoder,
            },
            model_id: "shift".into(),
            fit_seed: 0,
        };
        let cate = impute_cate(&model, &d).unwrap();
        for t in &cate.tau_hat {
            assert!((t - 0.75).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_arm_is_a_fit_error_naming_the_group() {
        let (d, _) = generate_synthetic(&SyntheticConfig {
            n_schools: 4,
            students_per_school: 10,
            effect: EffectSpec::Constant { value: 0.2 },
            baseline: LinearSpec::default(),
            propensity: PropensitySpec::Constant { value: 0.98 },
            noise_sd: 0.1,
            seed: 1,
        })
        .unwrap();
        // Force an all-treated cohort by keeping only treated rows.
        let treated = d.group_rows(1);
        let only_treated = d.subset(&treated).unwrap();
        let err = fit_t_learner(&only_treated, &ridge_config(), 0).unwrap_err();
        match err {
            Error::Fit(msg) => assert!(msg.contains("control")),
            other => panic!("expected fit error, got {other:?}"),
        }
    }

    #[test]
    fn control_fit_ignores_treated_rows_given_fixed_encoder() {
        let d = constant_effect_data(0.3, LinearSpec::default(), 0.4, 6, 12, 8);
        let all: Vec<usize> = (0..d.n_rows()).collect();
        let encoder = Encoder::fit(&d, &all, true).unwrap();

        let full = fit_t_learner_with_encoder(&d, encoder.clone(), &ridge_config(), 9).unwrap();
        let drop_one: Vec<usize> = {
            let first_treated = d.group_rows(1)[0];
            (0..d.n_rows()).filter(|&r| r != first_treated).collect()
        };
        let smaller = d.subset(&drop_one).unwrap();
        let alt = fit_t_learner_with_encoder(&smaller, encoder, &ridge_config(), 9).unwrap();

        let (f0_full, f0_alt) = match (&full.predictor, &alt.predictor) {
            (
                PairPredictor::TLearner { f0: a, .. },
                PairPredictor::TLearner { f0: b, .. },
            ) => (a, b),
            _ => unreachable!(),
        };
        assert_eq!(f0_full, f0_alt);
    }

    #[test]
    fn outcome_shift_leaves_effects_unchanged() {
        let baseline = LinearSpec {
            intercept: 0.5,
            terms: vec![("C1".into(), 0.4)],
        };
        let d = constant_effect_data(0.26, baseline, 0.3, 8, 25, 10);
        let model = fit_t_learner(&d, &ridge_config(), 0).unwrap();
        let cate = impute_cate(&model, &d).unwrap();

        let shifted_outcome: Vec<f64> = d.outcome().iter().map(|y| y + 5.0).collect();
        let shifted = Dataset::from_parts(
            d.schema().clone(),
            d.covariate_values().to_vec(),
            d.treatment().to_vec(),
            shifted_outcome,
            d.school_ids().to_vec(),
        )
        .unwrap();
        let model2 = fit_t_learner(&shifted, &ridge_config(), 0).unwrap();
        let cate2 = impute_cate(&model2, &shifted).unwrap();
        for (a, b) in cate.tau_hat.iter().zip(&cate2.tau_hat) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn pair_model_document_roundtrip() {
        let d = constant_effect_data(0.2, LinearSpec::default(), 0.2, 4, 8, 11);
        let model = fit_t_learner(&d, &ridge_config(), 3).unwrap();
        let doc = PairModelDocument::new(model.clone());
        let json = doc.to_json().unwrap();
        let back = PairModelDocument::from_json(&json).unwrap();
        assert_eq!(back.model, model);
        assert!(json.contains("\"strategy\""));
    }

    #[test]
    fn cate_table_writes_csv() {
        let table = CateTable {
            row_ids: vec![0, 1],
            school_ids: vec!["s1".into(), "s2".into()],
            tau_hat: vec![0.25, -0.5],
            model_id: "t_learner/ridge".into(),
            seed: 7,
            replicate_id: 0,
        };
        let mut buf = Vec::new();
        table.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("row_id,school_id,tau_hat,model_id\n"));
        assert!(text.contains("0,s1,0.25,t_learner/ridge"));
    }
}
