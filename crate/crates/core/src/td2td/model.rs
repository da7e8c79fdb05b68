use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, LabeledSample};
use super::grid::{GridSpec, ReachabilityGrid};
use crate::error::{Error, Result};
use crate::nn::{masked_mse, Adam, AdamConfig, Checkpoint, DecoderSpec, GridDecoder, Graph, Tensor};
use crate::rng::rng_from;

/// Target for valid cells whose measurement failed (a fall): above the
/// reachability threshold with margin.
pub const FALL_IMPUTE: f64 = 0.30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub test_fraction: f64,
    pub seed: u64,
    /// Shuffle labels across training samples (a control run that should
    /// not generalize).
    pub permute_labels: bool,
    pub stem_hidden: usize,
}

impl Default for ModelTrainConfig {
    fn default() -> Self {
        ModelTrainConfig {
            epochs: 200,
            batch_size: 32,
            learning_rate: 1e-3,
            test_fraction: 0.2,
            seed: 0,
            permute_labels: false,
            stem_hidden: 64,
        }
    }
}

/// Decoder plus the input standardization fitted on its training set.
#[derive(Debug, Clone, PartialEq)]
pub struct ReachabilityModel {
    pub grid: GridSpec,
    pub decoder: GridDecoder,
    pub input_mean: Vec<f64>,
    pub input_std: Vec<f64>,
}

pub const MODEL_KIND: &str = "td2td";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelHeader {
    kind: String,
    grid: GridSpec,
    decoder: DecoderSpec,
}

impl ReachabilityModel {
    pub fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.input_mean)
            .zip(&self.input_std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    fn input_tensor(&self, xs: &[&[f64]]) -> Result<Tensor> {
        let d = self.input_mean.len();
        let mut rows = Vec::with_capacity(xs.len());
        for x in xs {
            if x.len() != d {
                return Err(Error::shape(format!("model expects {d} features, got {}", x.len())));
            }
            rows.push(self.standardize(x));
        }
        Tensor::from_rows(&rows)
    }

    /// Raw predictions `[N, size²]`, masked cells included.
    pub fn predict_raw(&self, xs: &[&[f64]]) -> Result<Tensor> {
        self.decoder.predict(&self.input_tensor(xs)?)
    }

    pub fn predict_grid(&self, x: &[f64]) -> Result<ReachabilityGrid> {
        let out = self.predict_raw(&[x])?;
        ReachabilityGrid::from_prediction(self.grid, out.into_data())
    }

    pub fn checkpoint(&self, config_hash: &str) -> Checkpoint {
        let header = serde_json::to_value(ModelHeader {
            kind: MODEL_KIND.into(),
            grid: self.grid,
            decoder: self.decoder.spec().clone(),
        })
        .expect("header serializes");
        let mut ck = Checkpoint::new(header, config_hash);
        ck.extend_prefixed("decoder", self.decoder.params().names().iter().zip(self.decoder.params().tensors()));
        ck.push("input/mean", Tensor::row(&self.input_mean));
        ck.push("input/std", Tensor::row(&self.input_std));
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let h: ModelHeader =
            serde_json::from_value(ck.header.clone()).map_err(|e| Error::format(format!("model header: {e}")))?;
        if h.kind != MODEL_KIND {
            return Err(Error::format(format!("expected a {MODEL_KIND} checkpoint, found {:?}", h.kind)));
        }
        let mut decoder = GridDecoder::new(h.decoder, 0)?;
        decoder.params_mut().load(ck.with_prefix("decoder"))?;
        let get = |n: &str| {
            ck.get(n)
                .map(|t| t.data().to_vec())
                .ok_or_else(|| Error::format(format!("missing {n}")))
        };
        let input_mean = get("input/mean")?;
        let input_std = get("input/std")?;
        if input_mean.len() != decoder.spec().input_dim || input_std.len() != input_mean.len() {
            return Err(Error::shape("input standardization does not match decoder"));
        }
        Ok(ReachabilityModel {
            grid: h.grid,
            decoder,
            input_mean,
            input_std,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub train_samples: usize,
    pub test_samples: usize,
    pub train_loss: Vec<f64>,
    /// Masked MSE on held-out samples over measured cells.
    pub test_mse: f64,
    /// MSE of the best input-independent predictor on the held-out set: the
    /// mean over cells of the across-sample label variance.
    pub label_variance: f64,
}

fn targets(samples: &[&LabeledSample], impute: bool) -> (Tensor, Tensor) {
    let cells = samples[0].y.errors.len();
    let mut y = Vec::with_capacity(samples.len() * cells);
    let mut m = Vec::with_capacity(samples.len() * cells);
    for s in samples {
        for (e, &valid) in s.y.errors.iter().zip(&s.y.mask) {
            let (v, w) = match (valid, e.is_finite()) {
                (false, _) => (0.0, 0.0),
                (true, true) => (*e, 1.0),
                (true, false) if impute => (FALL_IMPUTE, 1.0),
                (true, false) => (0.0, 0.0),
            };
            y.push(v);
            m.push(w);
        }
    }
    let n = samples.len();
    (Tensor::from_parts(vec![n, cells], y), Tensor::from_parts(vec![n, cells], m))
}

/// Mean over cells of the across-sample variance, using measured cells only.
pub fn per_cell_variance(samples: &[&LabeledSample]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let cells = samples[0].y.errors.len();
    let mut total = 0.0;
    let mut used = 0usize;
    for c in 0..cells {
        let vals: Vec<f64> = samples
            .iter()
            .filter(|s| s.y.mask[c])
            .map(|s| s.y.errors[c])
            .filter(|e| e.is_finite())
            .collect();
        if vals.is_empty() {
            continue;
        }
        let n = vals.len() as f64;
        let m = vals.iter().sum::<f64>() / n;
        total += vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
        used += 1;
    }
    total / used.max(1) as f64
}

/// Splits indices `0..n` deterministically; the first part is the train set.
pub fn split_indices(n: usize, test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::config("test_fraction must lie in [0, 1)"));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_from(seed, &[0x5917]));
    let n_test = (n as f64 * test_fraction).round() as usize;
    let test = idx.split_off(n - n_test.min(n));
    if idx.is_empty() || test.is_empty() {
        return Err(Error::input(format!(
            "split of {n} samples at test fraction {test_fraction} leaves an empty side"
        )));
    }
    Ok((idx, test))
}

/// Fits a [`GridDecoder`] with masked squared error. Failed cells are
/// imputed at [`FALL_IMPUTE`] for training and excluded from evaluation.
pub fn train_model(dataset: &Dataset, cfg: &ModelTrainConfig) -> Result<(ReachabilityModel, ModelReport)> {
    if dataset.samples.is_empty() {
        return Err(Error::input("dataset is empty"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::config("batch_size must be positive"));
    }
    let (train_idx, test_idx) = split_indices(dataset.samples.len(), cfg.test_fraction, cfg.seed)?;
    let d = dataset.obs_dim;
    let train: Vec<&LabeledSample> = train_idx.iter().map(|&i| &dataset.samples[i]).collect();
    let test: Vec<&LabeledSample> = test_idx.iter().map(|&i| &dataset.samples[i]).collect();

    let n = train.len() as f64;
    let mut mean = vec![0.0; d];
    for s in &train {
        for (m, v) in mean.iter_mut().zip(&s.x) {
            *m += v / n;
        }
    }
    let mut std = vec![0.0; d];
    for s in &train {
        for ((sd, v), m) in std.iter_mut().zip(&s.x).zip(&mean) {
            *sd += (v - m).powi(2) / n;
        }
    }
    // constant features pass through centred
    let std: Vec<f64> = std.into_iter().map(|v| if v > 1e-12 { v.sqrt() } else { 1.0 }).collect();

    let mut spec = DecoderSpec::for_grid(d, dataset.spec.size);
    spec.stem_hidden = cfg.stem_hidden;
    let mut model = ReachabilityModel {
        grid: dataset.spec,
        decoder: GridDecoder::new(spec, cfg.seed)?,
        input_mean: mean,
        input_std: std,
    };

    let mut rng = rng_from(cfg.seed, &[0x7EA1]);
    let xs: Vec<&[f64]> = train.iter().map(|s| s.x.as_slice()).collect();
    let mut ys: Vec<&LabeledSample> = train.clone();
    if cfg.permute_labels {
        ys.shuffle(&mut rng);
    }
    let mut opt = Adam::new(
        AdamConfig {
            learning_rate: cfg.learning_rate,
            ..Default::default()
        },
        model.decoder.params(),
    );
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut train_loss = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let bx: Vec<&[f64]> = chunk.iter().map(|&i| xs[i]).collect();
            let by: Vec<&LabeledSample> = chunk.iter().map(|&i| ys[i]).collect();
            let input = model.input_tensor(&bx)?;
            let (target, mask) = targets(&by, true);
            let grads = {
                let mut g = Graph::new(model.decoder.params());
                let x = g.input(input);
                let pred = model.decoder.forward_graph(&mut g, x)?;
                let loss = masked_mse(&mut g, pred, &target, &mask)?;
                let v = g.value(loss).data()[0];
                if !v.is_finite() {
                    return Err(Error::NonFinite("decoder loss".into()));
                }
                total += v * chunk.len() as f64;
                g.backward(loss)?
            };
            opt.update(model.decoder.params_mut(), &grads)?;
        }
        train_loss.push(total / train.len() as f64);
    }

    let test_mse = evaluate_mse(&model, &test)?;
    let report = ModelReport {
        train_samples: train.len(),
        test_samples: test.len(),
        train_loss,
        test_mse,
        label_variance: per_cell_variance(&test),
    };
    Ok((model, report))
}

/// Masked MSE over measured cells of `samples`.
pub fn evaluate_mse(model: &ReachabilityModel, samples: &[&LabeledSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::input("no samples to evaluate"));
    }
    let xs: Vec<&[f64]> = samples.iter().map(|s| s.x.as_slice()).collect();
    let pred = model.predict_raw(&xs)?;
    let (target, mask) = targets(samples, false);
    let mut se = 0.0;
    let mut count = 0.0;
    for ((p, t), m) in pred.data().iter().zip(target.data()).zip(mask.data()) {
        se += m * (p - t).powi(2);
        count += m;
    }
    Ok(se / count.max(1.0))
}
