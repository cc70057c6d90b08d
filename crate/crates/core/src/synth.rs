//! Seeded synthetic embedding benchmark.
//!
//! Class prompt `i` is the basis vector `e_i` and the context embedding is
//! `e_K`. Every sample is
//!
//! ```text
//! normalize(s * (a * e_y + g * e_K) + sigma * eps),   eps ~ N(0, I / D)
//! ```
//!
//! so `sigma` is the expected norm of the noise. `s ~ U[signal_strength_min, 1]`
//! is a per-sample signal strength: weak samples are dominated by noise and
//! have both a low class logit and a low context score, which is what makes
//! the two scores correlate within the ID data. With `sigma = 0` the strength
//! cancels in the normalization.
//!
//! * ID (train and test): `a = class_alignment`, `g = context_alignment_id`,
//!   `y` the sample's class (round-robin for the test split);
//! * near OOD: `a = class_alignment / 2` towards a uniformly drawn prompt,
//!   `g = context_alignment_near`;
//! * far OOD: `a = 0`, `g = context_alignment_far`.
//!
//! Randomness comes from a single ChaCha8 stream seeded with
//! `ChaCha8Rng::seed_from_u64(seed)`, consumed in the order train, test ID,
//! near OOD, far OOD. Per sample the draws are: prompt index (near OOD only,
//! `gen_range(0..K)`), strength (`gen_range(min..=1.0)`), then `D` noise
//! coordinates from `rand_distr::StandardNormal`.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::{
    save_embeddings, save_labels, save_prompt_bank, EmbeddingMatrix, LabelVector, PromptBank,
    DEFAULT_TEMPERATURE_ENERGY, DEFAULT_TEMPERATURE_MCM,
};

/// Missing fields take their [`default_config`] values when deserializing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub dim: usize,
    pub n_classes: usize,
    pub n_train_per_class: usize,
    pub n_test_id: usize,
    pub n_near_ood: usize,
    pub n_far_ood: usize,
    pub class_alignment: f64,
    pub context_alignment_id: f64,
    pub context_alignment_near: f64,
    pub context_alignment_far: f64,
    pub noise_sigma: f64,
    pub signal_strength_min: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        default_config()
    }
}

pub fn default_config() -> SynthConfig {
    SynthConfig {
        dim: 64,
        n_classes: 10,
        n_train_per_class: 16,
        n_test_id: 500,
        n_near_ood: 500,
        n_far_ood: 500,
        class_alignment: 0.7,
        context_alignment_id: 0.4,
        context_alignment_near: 0.6,
        context_alignment_far: 0.05,
        noise_sigma: 0.25,
        signal_strength_min: 0.1,
        seed: 7,
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::ConfigInvariantViolation(msg));
        if self.n_classes == 0 {
            return fail("n_classes must be at least 1".into());
        }
        if self.dim < self.n_classes + 2 {
            return fail(format!(
                "dim ({}) must be at least n_classes + 2 ({})",
                self.dim,
                self.n_classes + 2
            ));
        }
        let unit = [
            ("class_alignment", self.class_alignment),
            ("context_alignment_id", self.context_alignment_id),
            ("context_alignment_near", self.context_alignment_near),
            ("context_alignment_far", self.context_alignment_far),
        ];
        for (name, v) in unit {
            if !(0.0..=1.0).contains(&v) {
                return fail(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        // Per split, using the class alignment that split actually receives.
        let a = self.class_alignment;
        let splits = [
            ("id", a, self.context_alignment_id),
            ("near", a / 2.0, self.context_alignment_near),
            ("far", 0.0, self.context_alignment_far),
        ];
        for (name, a, g) in splits {
            let total = a * a + g * g;
            if total > 1.0 {
                return fail(format!("{name} split: squared alignments sum to {total} > 1"));
            }
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return fail(format!("noise_sigma must be finite and >= 0, got {}", self.noise_sigma));
        }
        if !(0.0..=1.0).contains(&self.signal_strength_min) {
            return fail(format!(
                "signal_strength_min must lie in [0, 1], got {}",
                self.signal_strength_min
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub config: SynthConfig,
    pub train: EmbeddingMatrix,
    pub train_labels: LabelVector,
    pub test_id: EmbeddingMatrix,
    pub test_id_labels: LabelVector,
    pub near_ood: EmbeddingMatrix,
    pub far_ood: EmbeddingMatrix,
    pub bank: PromptBank,
}

struct Sampler {
    rng: ChaCha8Rng,
    dim: usize,
    context_axis: usize,
    sigma: f64,
    strength_min: f64,
}

impl Sampler {
    fn draw(&mut self, class_axis: Option<usize>, a: f64, g: f64, out: &mut Vec<f32>) -> Result<()> {
        let strength = self.rng.gen_range(self.strength_min..=1.0);
        let scale = self.sigma / (self.dim as f64).sqrt();
        let mut v: Vec<f64> = (0..self.dim)
            .map(|_| scale * self.rng.sample::<f64, _>(StandardNormal))
            .collect();
        if let Some(axis) = class_axis {
            v[axis] += strength * a;
        }
        v[self.context_axis] += strength * g;
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm <= crate::store::MIN_ROW_NORM {
            return Err(Error::ConfigInvariantViolation(
                "sample has zero norm; raise noise_sigma or an alignment".into(),
            ));
        }
        out.extend(v.iter().map(|x| (x / norm) as f32));
        Ok(())
    }
}

fn basis(rows: usize, dim: usize, axis: impl Fn(usize) -> usize) -> Result<EmbeddingMatrix> {
    let mut values = vec![0.0f32; rows * dim];
    for r in 0..rows {
        values[r * dim + axis(r)] = 1.0;
    }
    EmbeddingMatrix::new(rows, dim, values)
}

pub fn generate(config: &SynthConfig) -> Result<SynthDataset> {
    config.validate()?;
    let (d, k) = (config.dim, config.n_classes);
    let mut s = Sampler {
        rng: ChaCha8Rng::seed_from_u64(config.seed),
        dim: d,
        context_axis: k,
        sigma: config.noise_sigma,
        strength_min: config.signal_strength_min,
    };
    let a = config.class_alignment;

    let mut train = Vec::new();
    let mut train_labels = Vec::new();
    for class in 0..k {
        for _ in 0..config.n_train_per_class {
            s.draw(Some(class), a, config.context_alignment_id, &mut train)?;
            train_labels.push(class as u32 + 1);
        }
    }

    let mut test_id = Vec::new();
    let mut test_id_labels = Vec::new();
    for i in 0..config.n_test_id {
        let class = i % k;
        s.draw(Some(class), a, config.context_alignment_id, &mut test_id)?;
        test_id_labels.push(class as u32 + 1);
    }

    let mut near = Vec::new();
    for _ in 0..config.n_near_ood {
        let class = s.rng.gen_range(0..k);
        s.draw(Some(class), a / 2.0, config.context_alignment_near, &mut near)?;
    }

    let mut far = Vec::new();
    for _ in 0..config.n_far_ood {
        s.draw(None, 0.0, config.context_alignment_far, &mut far)?;
    }

    let bank = PromptBank::new(
        basis(k, d, |r| r)?,
        basis(1, d, |_| k)?,
        (0..k).map(|i| format!("class_{i}")).collect(),
        DEFAULT_TEMPERATURE_ENERGY,
        DEFAULT_TEMPERATURE_MCM,
    )?;

    Ok(SynthDataset {
        config: config.clone(),
        train: EmbeddingMatrix::new(train_labels.len(), d, train)?,
        train_labels: LabelVector::classes(train_labels, k as u32)?,
        test_id: EmbeddingMatrix::new(config.n_test_id, d, test_id)?,
        test_id_labels: LabelVector::new(test_id_labels),
        near_ood: EmbeddingMatrix::new(config.n_near_ood, d, near)?,
        far_ood: EmbeddingMatrix::new(config.n_far_ood, d, far)?,
        bank,
    })
}

/// File names written by [`SynthDataset::write_to`].
pub const LAYOUT: [&str; 9] = [
    "train.emb",
    "train_labels.csv",
    "test_id.emb",
    "near_ood.emb",
    "far_ood.emb",
    "prompts.emb",
    "context.emb",
    "manifest.json",
    "config.json",
];

impl SynthDataset {
    /// Writes the dataset into `dir` (created if missing) using [`LAYOUT`].
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        save_embeddings(&self.train, dir.join("train.emb"))?;
        save_labels(&self.train_labels, dir.join("train_labels.csv"))?;
        save_embeddings(&self.test_id, dir.join("test_id.emb"))?;
        save_embeddings(&self.near_ood, dir.join("near_ood.emb"))?;
        save_embeddings(&self.far_ood, dir.join("far_ood.emb"))?;
        save_prompt_bank(
            &self.bank,
            dir.join("manifest.json"),
            dir.join("prompts.emb"),
            dir.join("context.emb"),
        )?;
        let mut f = fs::File::create(dir.join("config.json"))?;
        serde_json::to_writer_pretty(&mut f, &self.config)?;
        f.write_all(b"\n")?;
        Ok(())
    }
}
