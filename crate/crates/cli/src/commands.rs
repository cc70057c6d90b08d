use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clsood::calibration::{self, beta_grid, ClsVariant};
use clsood::metrics::{compare_methods, evaluate};
use clsood::scoring::{self, mean_distance_to_train, Shrinkage};
use clsood::store::{format_sig9, load_score_csv, score_csv_string};
use clsood::synth::{self, SynthConfig};
use clsood::{LabelVector, Method};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{CliError, CliResult};
use crate::pipeline::{self, read_bank, read_embeddings, read_labels, BetaSource, Pipeline};
use crate::{
    CalibrateArgs, CompareArgs, DistanceArgs, EvalArgs, Format, GenSynthArgs, ScoreArgs, ScoringInputs, SweepArgs,
    Variant,
};

fn to_json<T: Serialize>(value: &T) -> CliResult<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn emit(text: &str, out: Option<&Path>) -> CliResult<()> {
    match out {
        Some(path) => fs::write(path, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

/// `scores.csv` -> `scores.meta.json`.
pub fn sidecar_path(out: &Path) -> PathBuf {
    out.with_extension("meta.json")
}

impl From<Variant> for ClsVariant {
    fn from(v: Variant) -> Self {
        match v {
            Variant::ClsM => ClsVariant::MaxLogit,
            Variant::ClsE => ClsVariant::Energy,
        }
    }
}

pub fn gen_synth(args: GenSynthArgs) -> CliResult<()> {
    let mut config = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::from(e).context(path.display()))?;
            serde_json::from_str::<SynthConfig>(&text)
                .map_err(|e| CliError::usage(e.to_string()).context(path.display()))?
        }
        None => synth::default_config(),
    };
    macro_rules! apply {
        ($($flag:ident => $field:ident),* $(,)?) => {
            $(if let Some(v) = args.$flag { config.$field = v; })*
        };
    }
    apply!(
        seed => seed,
        dim => dim,
        classes => n_classes,
        train_per_class => n_train_per_class,
        n_test_id => n_test_id,
        n_near_ood => n_near_ood,
        n_far_ood => n_far_ood,
        class_alignment => class_alignment,
        context_id => context_alignment_id,
        context_near => context_alignment_near,
        context_far => context_alignment_far,
        sigma => noise_sigma,
        strength_min => signal_strength_min,
    );
    let dataset = synth::generate(&config)?;
    dataset.write_to(&args.out)?;
    emit(&to_json(&config)?, None)
}

fn build_pipeline(inputs: &ScoringInputs) -> CliResult<Pipeline> {
    let bank = read_bank(&inputs.bank)?;
    let train = inputs.train.as_deref().map(read_embeddings).transpose()?;
    let labels = inputs.train_labels.as_deref().map(read_labels).transpose()?;
    Ok(Pipeline::new(
        bank,
        train,
        labels,
        inputs.beta,
        inputs.knn_k,
        inputs.shrinkage,
    ))
}

pub fn score(args: ScoreArgs) -> CliResult<()> {
    let images = read_embeddings(&args.images)?;
    let mut pipeline = build_pipeline(&args.inputs)?;
    let (scores, beta) = pipeline.score(args.method, &images)?;
    let text = match args.format {
        Format::Csv => score_csv_string(scores.values()),
        Format::Json => to_json(&scores)?,
    };
    fs::write(&args.out, text)?;
    let temperature = match args.method {
        Method::Energy | Method::ClsE => Some(pipeline.bank.temperature_energy()),
        Method::Msp | Method::Mcm => Some(pipeline.bank.temperature_mcm()),
        _ => None,
    };
    let mut meta = json!({
        "method": scores.method,
        "n": scores.len(),
        "temperature": temperature,
    });
    if let Some(info) = beta {
        let obj = meta.as_object_mut().unwrap();
        for (k, v) in serde_json::to_value(info)?.as_object().unwrap() {
            obj.insert(k.clone(), v.clone());
        }
    }
    fs::write(sidecar_path(&args.out), to_json(&meta)?)?;
    Ok(())
}

pub fn calibrate(args: CalibrateArgs) -> CliResult<()> {
    let train = read_embeddings(&args.train)?;
    let bank = read_bank(&args.bank)?;
    let result = pipeline::calibrate(&train, &bank, args.variant.into())?;
    emit(&to_json(&result)?, args.out.as_deref())
}

fn read_scores(path: &Path) -> CliResult<Vec<f64>> {
    let scores = load_score_csv(path).map_err(|e| CliError::from(e).context(path.display()))?;
    if scores.is_empty() {
        return Err(CliError::usage("no scores").context(path.display()));
    }
    Ok(scores)
}

pub fn eval(args: EvalArgs) -> CliResult<()> {
    let id = read_scores(&args.id)?;
    let ood = read_scores(&args.ood)?;
    let report = evaluate(args.method, &id, &ood, &args.levels)?;
    let text = match args.format {
        Format::Json => to_json(&report)?,
        Format::Csv => {
            let mut s = String::from("auroc,level,fpr,threshold,n_id,n_ood\n");
            for r in &report.fpr_at_tpr {
                s.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    format_sig9(report.auroc),
                    format_sig9(r.level),
                    format_sig9(r.fpr),
                    format_sig9(r.threshold),
                    report.n_id,
                    report.n_ood
                ));
            }
            s
        }
    };
    emit(&text, args.out.as_deref())
}

fn parse_grid(spec: &str) -> CliResult<Vec<f64>> {
    let parts: Vec<f64> = spec
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::usage(format!("grid must be min:max:step, got {spec:?}")))?;
    match parts[..] {
        [min, max, step] => Ok(beta_grid(min, max, step)?),
        _ => Err(CliError::usage(format!("grid must be min:max:step, got {spec:?}"))),
    }
}

pub fn sweep_beta(args: SweepArgs) -> CliResult<()> {
    let grid = parse_grid(&args.grid)?;
    let bank = read_bank(&args.bank)?;
    let id = read_embeddings(&args.id_images)?;
    let ood = read_embeddings(&args.ood_images)?;
    let variant: ClsVariant = args.variant.into();
    let estimated = match args.train.as_deref() {
        Some(path) => {
            let train = read_embeddings(path)?;
            match pipeline::calibrate(&train, &bank, variant) {
                Ok(c) => Some(c.beta),
                Err(clsood::Error::DegenerateVariance(_)) => {
                    eprintln!("warning: constant training context scores; no estimated beta marker");
                    None
                }
                Err(e) => return Err(e.into()),
            }
        }
        None => None,
    };
    let logits = scoring::cosine_logits(&id, &bank)?.concat(&scoring::cosine_logits(&ood, &bank)?)?;
    let context = scoring::ScoreVector::new(
        Method::Context,
        [
            scoring::context_score(&id, &bank)?.values,
            scoring::context_score(&ood, &bank)?.values,
        ]
        .concat(),
    );
    let mask = LabelVector::binary([vec![1; id.rows()], vec![0; ood.rows()]].concat())?;
    let tau = bank.temperature_energy();
    let curve = calibration::sweep_beta(&logits, &context, &mask, &grid, variant, tau, estimated)?;
    let estimated_auroc = match estimated {
        Some(beta) => {
            let s = variant.score(&logits, &context, beta, tau)?;
            let (i, o) = s.split_by_mask(&mask)?;
            Some(clsood::auroc(&i, &o)?)
        }
        None => None,
    };
    let text = match args.format {
        Format::Csv => curve.to_csv(),
        Format::Json => to_json(&curve)?,
    };
    fs::write(&args.out, text)?;
    let meta = json!({
        "variant": curve.variant,
        "estimated_beta": curve.estimated_beta,
        "estimated_auroc": estimated_auroc,
        "argmax_beta": curve.argmax_beta,
        "argmax_auroc": curve.argmax_auroc,
    });
    fs::write(sidecar_path(&args.out), to_json(&meta)?)?;
    Ok(())
}

pub fn diagnose_distance(args: DistanceArgs) -> CliResult<()> {
    let train = read_embeddings(&args.train)?;
    let mut out = BTreeMap::new();
    for path in &args.queries {
        let queries = read_embeddings(path)?;
        let d = mean_distance_to_train(&train, &queries).map_err(|e| CliError::from(e).context(path.display()))?;
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        let key = if out.contains_key(&stem) {
            path.display().to_string()
        } else {
            stem
        };
        out.insert(key, d);
    }
    emit(&to_json(&out)?, args.out.as_deref())
}

/// Inputs of `compare`. Relative paths resolve against the manifest's
/// directory.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub bank: PathBuf,
    pub id: PathBuf,
    pub ood: PathBuf,
    #[serde(default)]
    pub train: Option<PathBuf>,
    #[serde(default)]
    pub train_labels: Option<PathBuf>,
    pub methods: Vec<Method>,
    pub baseline: Method,
    #[serde(default = "default_beta")]
    pub beta: BetaSource,
    #[serde(default = "default_knn_k")]
    pub knn_k: usize,
    #[serde(default)]
    pub shrinkage: Option<f64>,
}

fn default_beta() -> BetaSource {
    BetaSource::Estimated
}

fn default_knn_k() -> usize {
    1
}

pub fn compare(args: CompareArgs) -> CliResult<()> {
    let text = fs::read_to_string(&args.manifest).map_err(|e| CliError::from(e).context(args.manifest.display()))?;
    let manifest: RunManifest =
        serde_json::from_str(&text).map_err(|e| CliError::usage(e.to_string()).context(args.manifest.display()))?;
    let base = args.manifest.parent().unwrap_or_else(|| Path::new("."));
    let path = |p: &Path| pipeline::resolve(base, p);

    let bank = read_bank(&path(&manifest.bank))?;
    let id = read_embeddings(&path(&manifest.id))?;
    let ood = read_embeddings(&path(&manifest.ood))?;
    let train = manifest
        .train
        .as_deref()
        .map(|p| read_embeddings(&path(p)))
        .transpose()?;
    let labels = manifest
        .train_labels
        .as_deref()
        .map(|p| read_labels(&path(p)))
        .transpose()?;
    let shrinkage = manifest.shrinkage.map(Shrinkage::Fixed).unwrap_or(Shrinkage::Auto);
    let mut pipeline = Pipeline::new(bank, train, labels, manifest.beta, manifest.knn_k, shrinkage);

    let mut sets = Vec::with_capacity(manifest.methods.len());
    for &method in &manifest.methods {
        let (id_scores, _) = pipeline.score(method, &id)?;
        let (ood_scores, _) = pipeline.score(method, &ood)?;
        sets.push((method, id_scores.values, ood_scores.values));
    }
    let borrowed: Vec<_> = sets.iter().map(|(m, i, o)| (*m, i.as_slice(), o.as_slice())).collect();
    let table = compare_methods(&borrowed, manifest.baseline)?;
    let text = match args.format {
        Format::Csv => table.to_csv(),
        Format::Json => to_json(&table)?,
    };
    emit(&text, args.out.as_deref())
}
