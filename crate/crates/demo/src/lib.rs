//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Each exported function takes a synthetic-benchmark config as JSON (any
//! missing field falls back to the default config), regenerates the data and
//! returns a JSON string for the page to plot.

use clsood::calibration::{beta_grid, estimate_beta, sweep_beta, ClsVariant};
use clsood::metrics::{auroc, fpr_at_tpr, roc_curve, RocPoint, FPR95_LEVEL};
use clsood::scoring::{context_score, cosine_logits, energy, max_logit, LogitMatrix, Method, ScoreVector};
use clsood::synth::{self, SynthConfig, SynthDataset};
use clsood::{EmbeddingMatrix, LabelVector, PromptBank};
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn parse_config(config_json: &str) -> Result<SynthConfig, String> {
    if config_json.trim().is_empty() {
        return Ok(synth::default_config());
    }
    let value: serde_json::Value = serde_json::from_str(config_json).map_err(|e| e.to_string())?;
    if !value.is_object() {
        return Err("config must be a JSON object".into());
    }
    serde_json::from_value(value).map_err(|e| e.to_string())
}

struct Split {
    logits: LogitMatrix,
    context: ScoreVector,
}

impl Split {
    fn new(images: &EmbeddingMatrix, bank: &PromptBank) -> clsood::Result<Self> {
        Ok(Self {
            logits: cosine_logits(images, bank)?,
            context: context_score(images, bank)?,
        })
    }

    fn base(&self, variant: ClsVariant, tau: f64) -> clsood::Result<ScoreVector> {
        match variant {
            ClsVariant::MaxLogit => Ok(max_logit(&self.logits)),
            ClsVariant::Energy => energy(&self.logits, tau),
        }
    }

    fn cls(&self, variant: ClsVariant, beta: f64, tau: f64) -> clsood::Result<Vec<f64>> {
        Ok(variant.score(&self.logits, &self.context, beta, tau)?.values)
    }
}

struct Bench {
    train: Split,
    id: Split,
    near: Split,
    far: Split,
    tau: f64,
}

impl Bench {
    fn new(config_json: &str) -> Result<Self, String> {
        let config = parse_config(config_json)?;
        let ds: SynthDataset = synth::generate(&config).map_err(|e| e.to_string())?;
        let split = |m: &EmbeddingMatrix| Split::new(m, &ds.bank).map_err(|e| e.to_string());
        Ok(Self {
            train: split(&ds.train)?,
            id: split(&ds.test_id)?,
            near: split(&ds.near_ood)?,
            far: split(&ds.far_ood)?,
            tau: ds.bank.temperature_energy(),
        })
    }

    fn beta(&self, variant: ClsVariant) -> Result<f64, String> {
        let base = self.train.base(variant, self.tau).map_err(|e| e.to_string())?;
        estimate_beta(&self.train.context, &base)
            .map(|c| c.beta)
            .map_err(|e| e.to_string())
    }
}

#[derive(Serialize)]
struct Detection {
    method: Method,
    split: &'static str,
    auroc: f64,
    fpr95: f64,
}

#[derive(Serialize)]
struct Scatter {
    context: Vec<f64>,
    max_logit: Vec<f64>,
}

#[derive(Serialize)]
struct Overview {
    beta_cls_m: f64,
    beta_cls_e: f64,
    scatter_id: Scatter,
    scatter_near: Scatter,
    scatter_far: Scatter,
    detection: Vec<Detection>,
}

fn scatter(split: &Split) -> Scatter {
    Scatter {
        context: split.context.values.clone(),
        max_logit: max_logit(&split.logits).values,
    }
}

fn detection(method: Method, split: &'static str, id: &[f64], ood: &[f64]) -> Result<Detection, String> {
    let err = |e: clsood::Error| e.to_string();
    Ok(Detection {
        method,
        split,
        auroc: auroc(id, ood).map_err(err)?,
        fpr95: fpr_at_tpr(id, ood, FPR95_LEVEL).map_err(err)?.fpr,
    })
}

/// Context-vs-MaxLogit scatter per split, the estimated betas and a
/// detection table for MaxLogit, Energy, CLS-M and CLS-E.
pub fn overview_json(config_json: &str) -> Result<String, String> {
    let b = Bench::new(config_json)?;
    let beta_m = b.beta(ClsVariant::MaxLogit)?;
    let beta_e = b.beta(ClsVariant::Energy)?;
    let mut rows = Vec::new();
    for (name, ood) in [("near", &b.near), ("far", &b.far)] {
        for (method, variant, beta) in [
            (Method::MaxLogit, ClsVariant::MaxLogit, 0.0),
            (Method::ClsM, ClsVariant::MaxLogit, beta_m),
            (Method::Energy, ClsVariant::Energy, 0.0),
            (Method::ClsE, ClsVariant::Energy, beta_e),
        ] {
            let id = b.id.cls(variant, beta, b.tau).map_err(|e| e.to_string())?;
            let o = ood.cls(variant, beta, b.tau).map_err(|e| e.to_string())?;
            rows.push(detection(method, name, &id, &o)?);
        }
    }
    let out = Overview {
        beta_cls_m: beta_m,
        beta_cls_e: beta_e,
        scatter_id: scatter(&b.id),
        scatter_near: scatter(&b.near),
        scatter_far: scatter(&b.far),
        detection: rows,
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

fn parse_variant(variant: &str) -> Result<ClsVariant, String> {
    variant.parse().map_err(|e: clsood::Error| e.to_string())
}

/// Near-OOD AUROC of a CLS variant over `beta in [0, max_beta]`, with the
/// estimated beta marked.
pub fn sweep_json(config_json: &str, variant: &str, max_beta: f64, step: f64) -> Result<String, String> {
    let variant = parse_variant(variant)?;
    let b = Bench::new(config_json)?;
    let estimated = b.beta(variant)?;
    let grid = beta_grid(0.0, max_beta, step).map_err(|e| e.to_string())?;
    let logits = b.id.logits.concat(&b.near.logits).map_err(|e| e.to_string())?;
    let context = ScoreVector::new(
        Method::Context,
        [b.id.context.values.clone(), b.near.context.values.clone()].concat(),
    );
    let mask = LabelVector::new([vec![1; b.id.context.len()], vec![0; b.near.context.len()]].concat());
    let curve =
        sweep_beta(&logits, &context, &mask, &grid, variant, b.tau, Some(estimated)).map_err(|e| e.to_string())?;
    let id = b.id.cls(variant, estimated, b.tau).map_err(|e| e.to_string())?;
    let near = b.near.cls(variant, estimated, b.tau).map_err(|e| e.to_string())?;
    let estimated_auroc = auroc(&id, &near).map_err(|e| e.to_string())?;
    serde_json::to_string(&serde_json::json!({
        "curve": curve,
        "estimated_auroc": estimated_auroc,
    }))
    .map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct RocSet {
    beta: f64,
    baseline: Vec<RocPoint>,
    cls: Vec<RocPoint>,
}

/// Near-OOD ROC curves of the base score and its CLS variant. A `beta` of
/// `None` uses the estimate from the training split.
pub fn roc_json(config_json: &str, variant: &str, beta: Option<f64>) -> Result<String, String> {
    let variant = parse_variant(variant)?;
    let b = Bench::new(config_json)?;
    let beta = match beta {
        Some(v) => v,
        None => b.beta(variant)?,
    };
    let curve = |beta: f64| -> Result<Vec<RocPoint>, String> {
        let id = b.id.cls(variant, beta, b.tau).map_err(|e| e.to_string())?;
        let near = b.near.cls(variant, beta, b.tau).map_err(|e| e.to_string())?;
        roc_curve(&id, &near).map_err(|e| e.to_string())
    };
    let out = RocSet {
        beta,
        baseline: curve(0.0)?,
        cls: curve(beta)?,
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn overview(config_json: &str) -> Result<String, JsValue> {
    overview_json(config_json).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn sweep(config_json: &str, variant: &str, max_beta: f64, step: f64) -> Result<String, JsValue> {
    sweep_json(config_json, variant, max_beta, step).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn roc(config_json: &str, variant: &str, beta: Option<f64>) -> Result<String, JsValue> {
    roc_json(config_json, variant, beta).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn default_config() -> String {
    serde_json::to_string(&synth::default_config()).unwrap()
}
