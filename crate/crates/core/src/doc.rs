//! JSON documents: model exchange, scenarios, the delayed-loop export and
//! analysis reports.
//!
//! Matrices are row-major nested arrays. Numbers are written with the
//! shortest representation that reads back to the same f64, so a document
//! written and read again reproduces the in-memory values exactly.

use std::collections::BTreeMap;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::analysis::ClosedLoopModel;
use crate::attack::{AttackWindow, FdiaSpec};
use crate::detect::DetectorConfig;
use crate::error::{Error, Result};
use crate::model::{LoopGains, PlantModel};
use crate::numerics::{Matrix, Vector};
use crate::sim::{SafetyLimits, ScenarioConfig, Scheme, WatermarkConfig};

pub type Rows = Vec<Vec<f64>>;

pub fn matrix_to_rows(m: &Matrix) -> Rows {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn rows_to_matrix(key: &str, rows: &Rows) -> Result<Matrix> {
    let n_rows = rows.len();
    let n_cols = rows.first().map_or(0, Vec::len);
    if let Some(i) = rows.iter().position(|r| r.len() != n_cols) {
        return Err(Error::config(
            key,
            format!("row {i} has {} entries, expected {n_cols}", rows[i].len()),
        ));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::config(key, "entries must be finite"));
    }
    Ok(Matrix::from_row_iterator(
        n_rows,
        n_cols,
        rows.iter().flatten().copied(),
    ))
}

/// Parse JSON, reporting the path of the offending key on failure.
pub fn parse_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let key = if path == "." {
            "<document>".to_string()
        } else {
            path
        };
        Error::Config {
            key,
            reason: e.into_inner().to_string(),
        }
    })
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("documents always serialize")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDoc {
    pub a: Rows,
    pub b: Rows,
    pub c: Rows,
    pub gamma: Rows,
    pub sigma_n: Rows,
    pub sigma_v: Rows,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_gain: Option<Rows>,
    pub q_weight: Rows,
    pub r_weight: Rows,
}

impl ModelDoc {
    pub fn from_parts(model: &PlantModel, gains: &LoopGains) -> Self {
        Self {
            a: matrix_to_rows(&model.a),
            b: matrix_to_rows(&model.b),
            c: matrix_to_rows(&model.c),
            gamma: matrix_to_rows(&model.gamma),
            sigma_n: matrix_to_rows(&model.sigma_n),
            sigma_v: matrix_to_rows(&model.sigma_v),
            l: Some(matrix_to_rows(&gains.l)),
            k_gain: Some(matrix_to_rows(&gains.k_gain)),
            q_weight: matrix_to_rows(&gains.q_weight),
            r_weight: matrix_to_rows(&gains.r_weight),
        }
    }

    /// Build the plant and its gains. Riccati solutions are recomputed from
    /// the weights; `l` and `k_gain`, when present, are taken verbatim.
    pub fn to_parts(&self) -> Result<(PlantModel, LoopGains)> {
        let model = PlantModel::new(
            rows_to_matrix("a", &self.a)?,
            rows_to_matrix("b", &self.b)?,
            rows_to_matrix("c", &self.c)?,
            rows_to_matrix("gamma", &self.gamma)?,
            rows_to_matrix("sigma_n", &self.sigma_n)?,
            rows_to_matrix("sigma_v", &self.sigma_v)?,
        )?;
        let mut gains = LoopGains::compute(
            &model,
            rows_to_matrix("q_weight", &self.q_weight)?,
            rows_to_matrix("r_weight", &self.r_weight)?,
        )?;
        if let Some(l) = &self.l {
            let l = rows_to_matrix("l", l)?;
            if l.shape() != gains.l.shape() {
                return Err(Error::config(
                    "l",
                    format!("expected {:?}, got {:?}", gains.l.shape(), l.shape()),
                ));
            }
            gains.l = l;
        }
        if let Some(k) = &self.k_gain {
            let k = rows_to_matrix("k_gain", k)?;
            if k.shape() != gains.k_gain.shape() {
                return Err(Error::config(
                    "k_gain",
                    format!("expected {:?}, got {:?}", gains.k_gain.shape(), k.shape()),
                ));
            }
            gains.k_gain = k;
        }
        Ok((model, gains))
    }

    pub fn has_gains(&self) -> bool {
        self.l.is_some() && self.k_gain.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackDoc {
    pub a_attack: Rows,
    pub x_a_init: Vec<f64>,
    /// `[start, end]` pairs, inclusive; `end = null` means unbounded.
    pub windows: Vec<(u64, Option<u64>)>,
}

impl AttackDoc {
    pub fn from_spec(spec: &FdiaSpec) -> Self {
        Self {
            a_attack: matrix_to_rows(&spec.a_attack),
            x_a_init: spec.x_a_init.iter().copied().collect(),
            windows: spec.windows.iter().map(|w| (w.start, w.end)).collect(),
        }
    }

    pub fn to_spec(&self) -> Result<FdiaSpec> {
        FdiaSpec::new(
            rows_to_matrix("attack.a_attack", &self.a_attack)?,
            Vector::from_column_slice(&self.x_a_init),
            self.windows
                .iter()
                .map(|&(start, end)| AttackWindow { start, end })
                .collect(),
        )
        .map_err(|e| match e {
            Error::Config { key, reason } => Error::config(format!("attack.{key}"), reason),
            other => other,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDoc {
    pub scheme: Scheme,
    #[serde(default)]
    pub compensation: bool,
    pub model: ModelDoc,
    pub watermark: WatermarkConfig,
    #[serde(default)]
    pub attack: Option<AttackDoc>,
    #[serde(default)]
    pub detector: DetectorConfig,
    pub horizon: u64,
    pub noise_seed: u64,
    #[serde(default)]
    pub safety: Option<SafetyLimits>,
}

impl ScenarioDoc {
    pub fn from_config(cfg: &ScenarioConfig) -> Self {
        Self {
            scheme: cfg.scheme,
            compensation: cfg.compensation,
            model: ModelDoc::from_parts(&cfg.model, &cfg.gains),
            watermark: cfg.watermark.clone(),
            attack: cfg.attack.as_ref().map(AttackDoc::from_spec),
            detector: cfg.detector.clone(),
            horizon: cfg.horizon,
            noise_seed: cfg.noise_seed,
            safety: cfg.safety,
        }
    }

    pub fn to_config(&self) -> Result<ScenarioConfig> {
        let (model, gains) = self.model.to_parts().map_err(|e| match e {
            Error::Config { key, reason } => Error::config(format!("model.{key}"), reason),
            other => other,
        })?;
        let cfg = ScenarioConfig {
            scheme: self.scheme,
            compensation: self.compensation,
            model,
            gains,
            watermark: self.watermark.clone(),
            attack: self.attack.as_ref().map(AttackDoc::to_spec).transpose()?,
            detector: self.detector.clone(),
            horizon: self.horizon,
            noise_seed: self.noise_seed,
            safety: self.safety,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Delayed closed loop handed to the external LMI certifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LmiExportDoc {
    pub a0: Rows,
    pub a1: Rows,
    pub gamma0: Rows,
    pub e: Rows,
    pub e_c: Rows,
    pub sigma_n: Rows,
    pub sigma_v: Rows,
    pub c: Rows,
    pub hbar: u64,
}

impl LmiExportDoc {
    pub fn build(model_doc: &ModelDoc, hbar: i64) -> Result<Self> {
        if hbar < 0 {
            return Err(Error::config("hbar", "must be nonnegative"));
        }
        if !model_doc.has_gains() {
            return Err(Error::config(
                "l",
                "model document must carry both `l` and `k_gain`",
            ));
        }
        let (model, gains) = model_doc.to_parts()?;
        let n = model.state_dim();
        let cl = ClosedLoopModel::build(&model, &gains, &Matrix::zeros(n, n))?;
        Ok(Self {
            a0: matrix_to_rows(&cl.a0_delay),
            a1: matrix_to_rows(&cl.a1_delay),
            gamma0: matrix_to_rows(&cl.gamma0_delay),
            e: matrix_to_rows(&cl.e_selector),
            e_c: matrix_to_rows(&cl.e_complement),
            sigma_n: matrix_to_rows(&model.sigma_n),
            sigma_v: matrix_to_rows(&model.sigma_v),
            c: matrix_to_rows(&model.c),
            hbar: hbar as u64,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub value: serde_json::Value,
    /// Formula or method the value comes from.
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std_error: Option<serde_json::Value>,
}

/// Analysis results keyed by quantity name.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    #[serde(flatten)]
    pub entries: BTreeMap<String, ReportEntry>,
}

impl Report {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(
        &mut self,
        key: impl Into<String>,
        value: impl Serialize,
        source: impl Into<String>,
    ) {
        self.entries.insert(
            key.into(),
            ReportEntry {
                value: serde_json::to_value(value).expect("serializable"),
                source: source.into(),
                std_error: None,
            },
        );
    }

    pub fn insert_with_error(
        &mut self,
        key: impl Into<String>,
        value: impl Serialize,
        std_error: impl Serialize,
        source: impl Into<String>,
    ) {
        self.entries.insert(
            key.into(),
            ReportEntry {
                value: serde_json::to_value(value).expect("serializable"),
                source: source.into(),
                std_error: Some(serde_json::to_value(std_error).expect("serializable")),
            },
        );
    }

    pub fn get_f64(&self, key: &str) -> Option<f64> {
        self.entries.get(key)?.value.as_f64()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::burst_preset_fig6;
    use crate::model::pendulum_preset;

    fn scenario() -> ScenarioConfig {
        let (model, gains) = pendulum_preset().unwrap();
        ScenarioConfig {
            scheme: Scheme::NewDw,
            compensation: true,
            model,
            gains,
            watermark: WatermarkConfig {
                seed: 1,
                sigma_w: vec![1e-4, 1e-4],
            },
            attack: Some(burst_preset_fig6()),
            detector: DetectorConfig::default(),
            horizon: 1000,
            noise_seed: 17,
            safety: Some(SafetyLimits::default()),
        }
    }

    #[test]
    fn model_round_trip_is_exact() {
        let (model, gains) = pendulum_preset().unwrap();
        let text = to_json(&ModelDoc::from_parts(&model, &gains));
        let doc: ModelDoc = parse_json(&text).unwrap();
        let (m2, g2) = doc.to_parts().unwrap();
        assert_eq!(m2, model);
        assert_eq!(g2, gains);
    }

    #[test]
    fn scenario_round_trip_is_exact() {
        let cfg = scenario();
        let text = to_json(&ScenarioDoc::from_config(&cfg));
        let back = parse_json::<ScenarioDoc>(&text)
            .unwrap()
            .to_config()
            .unwrap();
        assert_eq!(back, cfg);
        let mut persistent = cfg.clone();
        persistent.attack = Some(FdiaSpec::persistent_preset());
        persistent.compensation = false;
        let text = to_json(&ScenarioDoc::from_config(&persistent));
        assert!(text.contains("null"));
        assert_eq!(
            parse_json::<ScenarioDoc>(&text)
                .unwrap()
                .to_config()
                .unwrap(),
            persistent
        );
    }

    #[test]
    fn parse_errors_name_the_key() {
        let cfg = scenario();
        let mut value = serde_json::to_value(ScenarioDoc::from_config(&cfg)).unwrap();
        value["horizon"] = serde_json::json!("many");
        let err = parse_json::<ScenarioDoc>(&value.to_string()).unwrap_err();
        assert!(
            matches!(&err, Error::Config { key, .. } if key == "horizon"),
            "{err}"
        );

        let mut value = serde_json::to_value(ScenarioDoc::from_config(&cfg)).unwrap();
        value["detector"]["window_T"] = serde_json::json!(-1);
        let err = parse_json::<ScenarioDoc>(&value.to_string()).unwrap_err();
        assert!(
            matches!(&err, Error::Config { key, .. } if key == "detector.window_T"),
            "{err}"
        );

        let mut doc = ScenarioDoc::from_config(&cfg);
        doc.horizon = 0;
        assert!(matches!(doc.to_config(), Err(Error::Config { key, .. }) if key == "horizon"));

        let mut doc = ScenarioDoc::from_config(&cfg);
        doc.model.a[1].pop();
        assert!(matches!(doc.to_config(), Err(Error::Config { key, .. }) if key == "model.a"));
    }

    #[test]
    fn lmi_export_shapes() {
        let (model, gains) = pendulum_preset().unwrap();
        let doc = ModelDoc::from_parts(&model, &gains);
        let lmi = LmiExportDoc::build(&doc, 4).unwrap();
        assert_eq!((lmi.a0.len(), lmi.a0[0].len()), (8, 8));
        assert_eq!((lmi.a1.len(), lmi.a1[0].len()), (8, 4));
        assert_eq!((lmi.e.len(), lmi.e[0].len()), (4, 8));
        assert_eq!(lmi.hbar, 4);
        assert_eq!(LmiExportDoc::build(&doc, 0).unwrap().hbar, 0);
        assert!(matches!(
            LmiExportDoc::build(&doc, -1),
            Err(Error::Config { .. })
        ));
        let mut no_gains = doc.clone();
        no_gains.l = None;
        assert!(LmiExportDoc::build(&no_gains, 4).is_err());
        let back: LmiExportDoc = parse_json(&to_json(&lmi)).unwrap();
        assert_eq!(back, lmi);
    }

    #[test]
    fn report_layout() {
        let mut r = Report::new();
        r.insert("normal_residual_trace", 2.5e-5, "tr(L Sigma_o L^T)");
        r.insert_with_error("cross_1", vec![1.0, 2.0], vec![0.1, 0.1], "monte carlo");
        let v: serde_json::Value = serde_json::from_str(&to_json(&r)).unwrap();
        assert_eq!(v["normal_residual_trace"]["value"], 2.5e-5);
        assert!(v["normal_residual_trace"].get("std_error").is_none());
        assert_eq!(v["cross_1"]["std_error"][1], 0.1);
        assert_eq!(r.get_f64("normal_residual_trace"), Some(2.5e-5));
    }
}
