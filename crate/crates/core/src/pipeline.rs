//! Training, page-level prediction and evaluation.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use log::{debug, info};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::augment::{
    apply_affine, apply_drop, sample_drop_plan, AffineRanges, DropPlan, SegmentProfile,
};
use crate::error::{Error, Result};
use crate::ink::{InkPage, PseudoCharacter};
use crate::nn::{self, Network, NetworkSpec, Tensor4};
use crate::preprocess::{preprocess_page, PreprocessConfig};
use crate::rng::{pair, stream, Purpose, Rng};
use crate::signature::{channel_count, rasterize, FeatureMapStack};
use crate::GRID_SIZE;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Signature truncation level; 0 trains on the bitmap alone.
    pub level: usize,
    /// Half-width of the per-point signature window, in resampled points.
    pub window: usize,
    pub batch_size: usize,
    pub epochs: usize,
    /// Iterations per epoch; by default one pass over the training characters.
    pub iterations_per_epoch: Option<usize>,
    pub affine: bool,
    pub affine_ranges: AffineRanges,
    pub drop_segment: bool,
    pub seed: u64,
    pub width_multiplier: f64,
    /// Dropout rates on the inputs of the last weight layers.
    pub dropout: Vec<f64>,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Factor applied to the learning rate when validation loss stalls.
    pub lr_decay: f64,
    /// Epochs without validation improvement before decaying.
    pub patience: usize,
    /// Trailing share of each writer's characters held out for validation.
    pub validation_fraction: f64,
    pub preprocess: PreprocessConfig,
    /// Skip empty regions in convolutions. Results are unchanged.
    pub sparse: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            level: 2,
            window: 2,
            batch_size: 100,
            epochs: 10,
            iterations_per_epoch: None,
            affine: true,
            affine_ranges: AffineRanges::default(),
            drop_segment: true,
            seed: 0,
            width_multiplier: 0.2,
            dropout: vec![0.3, 0.4, 0.5, 0.5],
            learning_rate: 0.01,
            momentum: 0.9,
            lr_decay: 0.1,
            patience: 5,
            validation_fraction: 0.1,
            preprocess: PreprocessConfig::default(),
            sparse: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.level > 5 {
            return bad("signature level above 5 is not supported");
        }
        if !(self.width_multiplier > 0.0) {
            return bad("width_multiplier must be positive");
        }
        if !(self.learning_rate >= 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return bad("learning_rate must be >= 0 and momentum in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad("validation_fraction must lie in [0, 1)");
        }
        if self.iterations_per_epoch == Some(0) {
            return bad("iterations_per_epoch must be at least 1");
        }
        self.preprocess.validate()
    }
}

/// Per-channel mean and deviation over the foreground pixels of the
/// training characters. Channel 0 (the bitmap) is left as is.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl Standardization {
    pub fn identity(channels: usize) -> Self {
        Standardization {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    /// Accumulates in f64, one character at a time in input order.
    pub fn fit(stacks: impl IntoIterator<Item = FeatureMapStack>, channels: usize) -> Self {
        let mut sum = vec![0.0f64; channels];
        let mut sq = vec![0.0f64; channels];
        let mut count = 0usize;
        for s in stacks {
            let fg: Vec<usize> = s.foreground().collect();
            count += fg.len();
            for ch in 1..channels {
                let plane = s.channel(ch);
                for &i in &fg {
                    let v = plane[i] as f64;
                    sum[ch] += v;
                    sq[ch] += v * v;
                }
            }
        }
        let mut out = Self::identity(channels);
        if count == 0 {
            return out;
        }
        let n = count as f64;
        for ch in 1..channels {
            let mean = sum[ch] / n;
            let var = (sq[ch] / n - mean * mean).max(0.0);
            out.mean[ch] = mean as f32;
            out.std[ch] = if var.sqrt() > 1e-8 {
                var.sqrt() as f32
            } else {
                1.0
            };
        }
        out
    }

    /// Standardizes foreground pixels in place; background stays zero.
    pub fn apply(&self, stack: &mut FeatureMapStack) {
        let fg: Vec<usize> = stack.foreground().collect();
        for ch in 1..stack.channels() {
            let (m, s) = (self.mean[ch], self.std[ch]);
            let plane = stack.channel_mut(ch);
            for &i in &fg {
                plane[i] = (plane[i] - m) / s;
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub iteration_loss: Vec<f32>,
    pub epoch_loss: Vec<f64>,
    pub validation_loss: Vec<f64>,
    pub learning_rate: Vec<f64>,
}

/// A network together with everything needed to feed it.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub network: Network<f32>,
    /// Writer ids in class order (sorted).
    pub labels: Vec<String>,
    pub standardization: Standardization,
    pub config: TrainConfig,
    pub history: TrainingHistory,
}

#[derive(Serialize, Deserialize)]
struct ModelMetadata {
    labels: Vec<String>,
    standardization: Standardization,
    config: TrainConfig,
    history: TrainingHistory,
}

impl TrainedModel {
    pub fn new(
        network: Network<f32>,
        labels: Vec<String>,
        standardization: Standardization,
        config: TrainConfig,
    ) -> Result<Self> {
        let spec = network.spec();
        if labels.len() != spec.classes {
            return Err(Error::Config(format!(
                "{} labels for a {}-class network",
                labels.len(),
                spec.classes
            )));
        }
        let channels = channel_count(config.level);
        if spec.input_channels != channels || standardization.mean.len() != channels {
            return Err(Error::Config(format!(
                "level {} needs {channels} input channels",
                config.level
            )));
        }
        Ok(TrainedModel {
            network,
            labels,
            standardization,
            config,
            history: TrainingHistory::default(),
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = ModelMetadata {
            labels: self.labels.clone(),
            standardization: self.standardization.clone(),
            config: self.config.clone(),
            history: self.history.clone(),
        };
        let value = serde_json::to_value(&meta).map_err(Error::json)?;
        nn::write_model(&self.network, &value)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (network, value) = nn::read_model::<f32>(bytes)?;
        let meta: ModelMetadata = serde_json::from_value(value)
            .map_err(|e| Error::ModelFormat(format!("bad metadata: {e}")))?;
        let mut model = TrainedModel::new(network, meta.labels, meta.standardization, meta.config)?;
        model.history = meta.history;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Standardized feature maps of one character.
    pub fn features(&self, c: &PseudoCharacter) -> FeatureMapStack {
        let mut s = rasterize(c, self.config.level, self.config.window);
        self.standardization.apply(&mut s);
        s
    }

    fn batch(&self, chars: &[PseudoCharacter]) -> Result<Tensor4<f32>> {
        let stacks: Vec<FeatureMapStack> = chars.par_iter().map(|c| self.features(c)).collect();
        stack_batch(stacks, self.config.level)
    }

    /// Softmax outputs for each character, `chars.len() × classes`.
    pub fn char_probabilities(&self, chars: &[PseudoCharacter]) -> Result<Vec<f32>> {
        let mut out = Vec::with_capacity(chars.len() * self.labels.len());
        for chunk in chars.chunks(64) {
            out.extend(self.network.predict(&self.batch(chunk)?)?);
        }
        Ok(out)
    }
}

fn stack_batch(stacks: Vec<FeatureMapStack>, level: usize) -> Result<Tensor4<f32>> {
    let shape = [stacks.len(), channel_count(level), GRID_SIZE, GRID_SIZE];
    let mut data = Vec::with_capacity(shape.iter().product());
    for s in stacks {
        data.extend(s.into_data());
    }
    Tensor4::from_vec(shape, data)
}

/// Characters of a set of pages with their writer ids, in page order.
pub fn preprocess_pages(
    pages: &[InkPage],
    config: &PreprocessConfig,
) -> Result<Vec<Vec<PseudoCharacter>>> {
    pages
        .par_iter()
        .map(|p| preprocess_page(p, config))
        .collect()
}

struct Sample<'a> {
    character: &'a PseudoCharacter,
    label: usize,
}

fn augment_one(
    c: &PseudoCharacter,
    config: &TrainConfig,
    rng: &mut Rng,
) -> Result<PseudoCharacter> {
    let mut out = if config.drop_segment {
        let plan = sample_drop_plan(&SegmentProfile::of(c), rng);
        apply_drop(c, &plan)?
    } else {
        c.clone()
    };
    if config.affine {
        out = apply_affine(&out, &config.affine_ranges.sample(rng));
    }
    Ok(out)
}

/// Trains a writer classifier on the characters of `pages`.
///
/// Classes are the sorted distinct writer ids. The last
/// `validation_fraction` of each writer's characters (in page order) drive
/// the learning-rate schedule. Every random choice comes from a stream keyed
/// by `config.seed`, so equal inputs give bit-identical models.
pub fn train(config: &TrainConfig, pages: &[InkPage]) -> Result<TrainedModel> {
    config.validate()?;
    let per_page = preprocess_pages(pages, &config.preprocess)?;
    let labels: Vec<String> = pages
        .iter()
        .map(|p| p.writer_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if labels.len() < 2 {
        return Err(Error::Config(format!(
            "training needs at least two writers, found {}",
            labels.len()
        )));
    }
    let index: BTreeMap<&str, usize> = labels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();

    let mut by_writer: Vec<Vec<&PseudoCharacter>> = vec![Vec::new(); labels.len()];
    for (page, chars) in pages.iter().zip(&per_page) {
        by_writer[index[page.writer_id.as_str()]].extend(chars);
    }
    let mut train_set = Vec::new();
    let mut val_set = Vec::new();
    for (label, chars) in by_writer.iter().enumerate() {
        if chars.is_empty() {
            return Err(Error::Config(format!(
                "writer `{}` has no characters after preprocessing",
                labels[label]
            )));
        }
        let held = ((chars.len() as f64 * config.validation_fraction).floor() as usize)
            .min(chars.len() - 1);
        let (tr, va) = chars.split_at(chars.len() - held);
        train_set.extend(tr.iter().map(|&c| Sample {
            character: c,
            label,
        }));
        val_set.extend(va.iter().map(|&c| Sample {
            character: c,
            label,
        }));
    }
    info!(
        "{} writers, {} training and {} validation characters",
        labels.len(),
        train_set.len(),
        val_set.len()
    );

    let channels = channel_count(config.level);
    let stats = Standardization::fit(
        train_set
            .iter()
            .map(|s| rasterize(s.character, config.level, config.window)),
        channels,
    );
    let mut spec = NetworkSpec::standard(channels, labels.len(), config.width_multiplier);
    spec.dropout = config.dropout.clone();
    info!("network {}", spec.describe());
    let mut network = Network::<f32>::new(spec, config.seed)?;
    network.sparse = config.sparse;
    let mut model = TrainedModel::new(network, labels, stats, config.clone())?;

    let val_chars: Vec<PseudoCharacter> = val_set.iter().map(|s| s.character.clone()).collect();
    let val_labels: Vec<usize> = val_set.iter().map(|s| s.label).collect();

    let per_epoch = config
        .iterations_per_epoch
        .unwrap_or_else(|| train_set.len().div_ceil(config.batch_size));
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut shuffles = 0u64;
    let mut lr = config.learning_rate;
    let mut best = f64::INFINITY;
    let mut stalled = 0;
    let mut history = TrainingHistory::default();

    for epoch in 0..config.epochs {
        let mut epoch_sum = 0.0;
        for step in 0..per_epoch {
            let iteration = epoch * per_epoch + step;
            let mut picks = Vec::with_capacity(config.batch_size);
            while picks.len() < config.batch_size {
                if cursor == order.len() {
                    order = (0..train_set.len()).collect();
                    order.shuffle(&mut stream(config.seed, Purpose::Shuffle, shuffles));
                    shuffles += 1;
                    cursor = 0;
                }
                picks.push(order[cursor]);
                cursor += 1;
            }
            let stacks = picks
                .par_iter()
                .enumerate()
                .map(|(slot, &i)| {
                    let mut rng = stream(
                        config.seed,
                        Purpose::Augment,
                        pair(iteration as u64, slot as u64),
                    );
                    let c = augment_one(train_set[i].character, config, &mut rng)?;
                    Ok(model.features(&c))
                })
                .collect::<Result<Vec<_>>>()?;
            let x = stack_batch(stacks, config.level)?;
            let y: Vec<usize> = picks.iter().map(|&i| train_set[i].label).collect();
            let mut rng = stream(config.seed, Purpose::Dropout, iteration as u64);
            let loss = model
                .network
                .train_step(&x, &y, lr as f32, config.momentum as f32, &mut rng)
                .map_err(|e| match e {
                    Error::NonFiniteLoss { detail, .. } => {
                        Error::NonFiniteLoss { iteration, detail }
                    }
                    other => other,
                })?;
            debug!("iteration {iteration}: loss {loss:.5}");
            history.iteration_loss.push(loss);
            epoch_sum += loss as f64;
        }
        let epoch_loss = epoch_sum / per_epoch.max(1) as f64;
        history.epoch_loss.push(epoch_loss);
        history.learning_rate.push(lr);

        if val_chars.is_empty() {
            info!("epoch {}: train loss {epoch_loss:.4}, lr {lr}", epoch + 1);
            continue;
        }
        let probs = model.char_probabilities(&val_chars)?;
        let classes = model.labels.len();
        let val_loss = val_labels
            .iter()
            .enumerate()
            .map(|(i, &l)| -(probs[i * classes + l].max(1e-12) as f64).ln())
            .sum::<f64>()
            / val_labels.len() as f64;
        history.validation_loss.push(val_loss);
        info!(
            "epoch {}: train loss {epoch_loss:.4}, validation loss {val_loss:.4}, lr {lr}",
            epoch + 1
        );
        if val_loss < best - 1e-6 {
            best = val_loss;
            stalled = 0;
        } else {
            stalled += 1;
            if stalled >= config.patience.max(1) {
                lr *= config.lr_decay;
                stalled = 0;
                info!("validation loss stalled, learning rate now {lr}");
            }
        }
    }
    model.history = history;
    Ok(model)
}

/// Writer probabilities for one page.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PagePrediction {
    pub page_id: String,
    pub probabilities: Vec<f64>,
    /// Writer ids by descending probability, ties by label order.
    pub ranking: Vec<String>,
}

impl PagePrediction {
    /// 1-based rank of a writer, if it is a known label.
    pub fn rank_of(&self, writer: &str) -> Option<usize> {
        self.ranking.iter().position(|w| w == writer).map(|r| r + 1)
    }
}

/// Stable 64-bit FNV-1a over a character's coordinates, used to key its
/// test-time random stream independently of its position on the page.
fn character_key(c: &PseudoCharacter) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for s in &c.strokes {
        for p in &s.points {
            for b in
                p.x.to_bits()
                    .to_le_bytes()
                    .into_iter()
                    .chain(p.y.to_bits().to_le_bytes())
            {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h ^= 0xff;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Page prediction with a caller-supplied drop-plan sampler.
pub fn predict_page_with<F>(
    model: &TrainedModel,
    page_id: &str,
    chars: &[PseudoCharacter],
    drop_tests: usize,
    seed: u64,
    sampler: F,
) -> Result<PagePrediction>
where
    F: Fn(&SegmentProfile, &mut Rng) -> DropPlan + Sync,
{
    if chars.is_empty() {
        return Err(Error::EmptyPage(page_id.to_string()));
    }
    if drop_tests == 0 {
        return Err(Error::Config("drop_tests must be at least 1".into()));
    }
    let variants: Vec<PseudoCharacter> = if drop_tests == 1 {
        chars.to_vec()
    } else {
        chars
            .par_iter()
            .flat_map_iter(|c| {
                let key = character_key(c);
                let profile = SegmentProfile::of(c);
                let sampler = &sampler;
                (0..drop_tests).map(move |t| {
                    let mut rng = stream(seed, Purpose::TestDrop, pair(key, t as u64));
                    apply_drop(c, &sampler(&profile, &mut rng))
                })
            })
            .collect::<Result<_>>()?
    };
    let probs = model.char_probabilities(&variants)?;
    let classes = model.labels.len();

    // Mean over the drop variants of each character, then over characters.
    let mut page = vec![0.0f64; classes];
    for per_char in probs.chunks(drop_tests * classes) {
        let mut mean = vec![0.0f64; classes];
        for row in per_char.chunks(classes) {
            for (m, &p) in mean.iter_mut().zip(row) {
                *m += p as f64;
            }
        }
        for (acc, m) in page.iter_mut().zip(mean) {
            *acc += m / drop_tests as f64;
        }
    }
    page.iter_mut().for_each(|p| *p /= chars.len() as f64);

    let mut order: Vec<usize> = (0..classes).collect();
    order.sort_by(|&a, &b| page[b].total_cmp(&page[a]).then(a.cmp(&b)));
    Ok(PagePrediction {
        page_id: page_id.to_string(),
        probabilities: page,
        ranking: order.into_iter().map(|i| model.labels[i].clone()).collect(),
    })
}

/// Averages character softmax outputs over a page. With `drop_tests > 1`
/// each character contributes the mean over that many random DropSegment
/// variants.
pub fn predict_page(
    model: &TrainedModel,
    page_id: &str,
    chars: &[PseudoCharacter],
    drop_tests: usize,
    seed: u64,
) -> Result<PagePrediction> {
    predict_page_with(model, page_id, chars, drop_tests, seed, |p, rng| {
        sample_drop_plan(p, rng)
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PageResult {
    pub page_id: String,
    pub writer_id: String,
    /// 1-based rank of the true writer.
    pub rank: usize,
    pub predicted: String,
    pub characters: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub top1: f64,
    pub top10: f64,
    pub pages: Vec<PageResult>,
    pub config: serde_json::Value,
}

impl EvalReport {
    /// Share of pages whose writer is within the first `k` ranks.
    pub fn top_k(&self, k: usize) -> f64 {
        if self.pages.is_empty() {
            return 0.0;
        }
        self.pages.iter().filter(|p| p.rank <= k).count() as f64 / self.pages.len() as f64
    }
}

/// Evaluates page-level identification on labelled test pages.
pub fn evaluate(
    model: &TrainedModel,
    pages: &[InkPage],
    drop_tests: usize,
    seed: u64,
) -> Result<EvalReport> {
    if let Some(p) = pages.iter().find(|p| !model.labels.contains(&p.writer_id)) {
        return Err(Error::UnknownWriter(p.writer_id.clone()));
    }
    let chars = preprocess_pages(pages, &model.config.preprocess)?;
    evaluate_characters(model, pages, &chars, drop_tests, seed)
}

/// [`evaluate`] on pages that were already preprocessed.
pub fn evaluate_characters(
    model: &TrainedModel,
    pages: &[InkPage],
    chars: &[Vec<PseudoCharacter>],
    drop_tests: usize,
    seed: u64,
) -> Result<EvalReport> {
    let mut results = Vec::with_capacity(pages.len());
    for (page, cs) in pages.iter().zip(chars) {
        if !model.labels.contains(&page.writer_id) {
            return Err(Error::UnknownWriter(page.writer_id.clone()));
        }
        let pred = predict_page(model, &page.page_id, cs, drop_tests, seed)?;
        results.push(PageResult {
            page_id: page.page_id.clone(),
            writer_id: page.writer_id.clone(),
            rank: pred.rank_of(&page.writer_id).expect("known writer"),
            predicted: pred.ranking[0].clone(),
            characters: cs.len(),
        });
    }
    let mut report = EvalReport {
        top1: 0.0,
        top10: 0.0,
        pages: results,
        config: json!({
            "drop_tests": drop_tests,
            "seed": seed,
            "network": model.network.spec().describe(),
            "level": model.config.level,
            "window": model.config.window,
            "writers": model.labels.len(),
        }),
    };
    report.top1 = report.top_k(1);
    report.top10 = report.top_k(10);
    Ok(report)
}
