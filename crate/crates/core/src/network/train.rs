use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{flip_odd, fuse, softmax, softmax_xent, FusedScore, MlpGrads, MlpParams};
use crate::data::{Label, PairSample};
use crate::error::{Error, Result};
use crate::grassmann::Aisc;
use crate::pipeline::{extract_features, PairFeatures, Standardizer};

/// How the two comparison features are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionMode {
    /// One classifier per branch; probabilities are mixed.
    Score,
    /// One classifier over the concatenated features.
    Concat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub l2_penalty: f64,
    pub hidden_dims: Vec<usize>,
    pub fusion: FusionMode,
    /// Weight of the appearance probability in score fusion.
    pub fusion_weight: f64,
    /// Remove the landmark centroid before the Grassmann map.
    pub centering: bool,
    /// L2-normalise appearance vectors before the product.
    pub normalize_appearance: bool,
    /// Standardise each input feature with training-set statistics.
    pub standardize_inputs: bool,
    /// Make shape predictions independent of pair order. Swapping a pair
    /// negates `B`, so `B` is sign-flipped at random during training and
    /// predictions average the two signs.
    pub symmetric_pairs: bool,
    /// Also backpropagate into the landmark and appearance inputs every epoch
    /// (reported in the history; the inputs are data and are not updated).
    pub propagate_input_gradients: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            epochs: 20,
            batch_size: 16,
            seed: 0,
            l2_penalty: 0.1,
            hidden_dims: vec![64, 16],
            fusion: FusionMode::Score,
            fusion_weight: 0.5,
            centering: true,
            normalize_appearance: false,
            standardize_inputs: true,
            symmetric_pairs: true,
            propagate_input_gradients: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be finite and nonnegative, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.l2_penalty >= 0.0 && self.l2_penalty.is_finite()) {
            return Err(Error::Config(format!("l2_penalty must be nonnegative, got {}", self.l2_penalty)));
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.fusion_weight) {
            return Err(Error::Config(format!(
                "fusion_weight {} is outside [0, 1]",
                self.fusion_weight
            )));
        }
        Ok(())
    }

    fn layer_dims(&self, input: usize) -> Vec<usize> {
        std::iter::once(input)
            .chain(self.hidden_dims.iter().copied())
            .chain(std::iter::once(2))
            .collect()
    }
}

/// A classifier together with the input standardisation it was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub net: MlpParams,
    pub standardizer: Standardizer,
    /// Leading inputs that change sign when the pair is swapped; when
    /// nonzero, predictions average over both signs.
    pub odd_inputs: usize,
}

impl Branch {
    /// Probability of the kin class.
    pub fn kin_probability(&self, raw: &[f64]) -> Result<f64> {
        let x = self.standardizer.apply(raw);
        let p = softmax(&self.net.predict(&x)?)[1];
        if self.odd_inputs == 0 {
            return Ok(p);
        }
        let q = softmax(&self.net.predict(&flip_odd(&x, self.odd_inputs))?)[1];
        Ok(0.5 * (p + q))
    }
}

/// A trained verification model.
#[derive(Debug, Clone, PartialEq)]
pub struct PairModel {
    pub config: TrainConfig,
    pub landmark_count: usize,
    pub appearance_dim: Option<usize>,
    /// Score fusion: classifier over flattened `B`.
    pub shape: Option<Branch>,
    /// Score fusion: classifier over `a ∘ b`.
    pub appearance: Option<Branch>,
    /// Concat fusion: classifier over both features.
    pub joint: Option<Branch>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub shape_loss: Option<f64>,
    pub appearance_loss: Option<f64>,
    pub joint_loss: Option<f64>,
    /// Mean Frobenius norm of `∂L/∂S` over both shapes of every pair.
    pub shape_input_grad_norm: Option<f64>,
}

impl PairModel {
    pub fn features(&self, sample: &PairSample) -> Result<PairFeatures> {
        extract_features(sample, &Aisc::new(self.config.centering), self.config.normalize_appearance)
    }

    pub fn predict(&self, sample: &PairSample) -> Result<FusedScore> {
        self.predict_features(&self.features(sample)?)
    }

    pub fn predict_features(&self, f: &PairFeatures) -> Result<FusedScore> {
        if f.shape.len() != self.landmark_count * self.landmark_count {
            return Err(Error::Shape(format!(
                "model expects {} landmarks",
                self.landmark_count
            )));
        }
        if f.appearance.as_ref().map(Vec::len) != self.appearance_dim {
            return Err(Error::Shape("appearance inputs do not match the model".into()));
        }
        match self.config.fusion {
            FusionMode::Score => {
                let shape = self.shape.as_ref().ok_or_else(missing)?;
                let p_shape = shape.kin_probability(&f.shape)?;
                let p_appearance = match (&self.appearance, &f.appearance) {
                    (Some(b), Some(x)) => Some(b.kin_probability(x)?),
                    _ => None,
                };
                let p_fused = match p_appearance {
                    Some(pa) => fuse(pa, p_shape, self.config.fusion_weight)?,
                    None => p_shape,
                };
                Ok(FusedScore {
                    p_appearance,
                    p_shape: Some(p_shape),
                    p_fused,
                })
            }
            FusionMode::Concat => {
                let joint = self.joint.as_ref().ok_or_else(missing)?;
                let p = joint.kin_probability(&concat(f))?;
                Ok(FusedScore {
                    p_appearance: None,
                    p_shape: None,
                    p_fused: p,
                })
            }
        }
    }
}

fn missing() -> Error {
    Error::State("model is missing the branch required by its fusion mode".into())
}

fn concat(f: &PairFeatures) -> Vec<f64> {
    let mut x = f.shape.clone();
    if let Some(a) = &f.appearance {
        x.extend_from_slice(a);
    }
    x
}

/// Inputs of one branch, already standardised.
struct BranchData {
    branch: Branch,
    inputs: Vec<Vec<f64>>,
    grads: MlpGrads,
}

impl BranchData {
    fn new(raw: Vec<Vec<f64>>, odd: usize, config: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let dim = raw[0].len();
        let odd = if config.symmetric_pairs { odd } else { 0 };
        let standardizer = if config.standardize_inputs {
            Standardizer::fit_odd(raw.iter().map(Vec::as_slice), dim, odd)
        } else {
            Standardizer::identity(dim)
        };
        let inputs = raw.iter().map(|x| standardizer.apply(x)).collect();
        let net = MlpParams::init(&config.layer_dims(dim), rng)?;
        let grads = MlpGrads::zeros_like(&net);
        Ok(BranchData {
            branch: Branch {
                net,
                standardizer,
                odd_inputs: odd,
            },
            inputs,
            grads,
        })
    }

    /// One SGD step over `batch`; returns the summed loss before the update.
    fn step(&mut self, batch: &[usize], labels: &[usize], flips: &[bool], config: &TrainConfig) -> Result<f64> {
        self.grads.clear();
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        let odd = self.branch.odd_inputs;
        for &i in batch {
            let (logits, cache) = if odd > 0 && flips[i] {
                self.branch.net.forward(&flip_odd(&self.inputs[i], odd))?
            } else {
                self.branch.net.forward(&self.inputs[i])?
            };
            let (l, g) = softmax_xent(&logits, labels[i]);
            loss += l;
            self.branch.net.backward_into(&cache, &g, &mut self.grads, scale, false)?;
        }
        self.branch.net.sgd_step(&self.grads, config.learning_rate, config.l2_penalty);
        Ok(loss)
    }
}

/// Trains the verification model with mini-batch SGD.
///
/// Deterministic given `config.seed`: the same samples and configuration give
/// bit-identical parameters and history.
pub fn train(samples: &[PairSample], config: &TrainConfig) -> Result<(PairModel, Vec<EpochStats>)> {
    config.validate()?;
    let kin = samples.iter().filter(|s| s.label == Label::Kin).count();
    let non_kin = samples.len() - kin;
    if kin < 2 || non_kin < 2 {
        return Err(Error::Data(format!(
            "training needs at least 2 samples per class, got {kin} kin and {non_kin} non-kin"
        )));
    }
    let with_appearance = samples.iter().filter(|s| s.appearance.is_some()).count();
    if with_appearance != 0 && with_appearance != samples.len() {
        return Err(Error::Data(format!(
            "{with_appearance} of {} pairs carry appearance vectors; need all or none",
            samples.len()
        )));
    }

    let aisc = Aisc::new(config.centering);
    let features: Vec<PairFeatures> = samples
        .iter()
        .map(|s| extract_features(s, &aisc, config.normalize_appearance))
        .collect::<Result<_>>()?;
    let shape_dim = features[0].shape.len();
    if features.iter().any(|f| f.shape.len() != shape_dim) {
        return Err(Error::Data("pairs have different landmark counts".into()));
    }
    let appearance_dim = features[0].appearance.as_ref().map(Vec::len);
    if features.iter().any(|f| f.appearance.as_ref().map(Vec::len) != appearance_dim) {
        return Err(Error::Data("pairs have different appearance dimensions".into()));
    }
    let labels: Vec<usize> = samples.iter().map(|s| s.label.class_index()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut shape = None;
    let mut appearance = None;
    let mut joint = None;
    match config.fusion {
        FusionMode::Score => {
            shape = Some(BranchData::new(
                features.iter().map(|f| f.shape.clone()).collect(),
                shape_dim,
                config,
                &mut rng,
            )?);
            if appearance_dim.is_some() {
                appearance = Some(BranchData::new(
                    features.iter().map(|f| f.appearance.clone().expect("checked")).collect(),
                    0,
                    config,
                    &mut rng,
                )?);
            }
        }
        FusionMode::Concat => {
            joint = Some(BranchData::new(features.iter().map(concat).collect(), shape_dim, config, &mut rng)?);
        }
    }
    drop(features);

    let mut model = PairModel {
        config: config.clone(),
        landmark_count: samples[0].shape_a.landmark_count(),
        appearance_dim,
        shape: None,
        appearance: None,
        joint: None,
    };
    let n = samples.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let flips: Vec<bool> = if config.symmetric_pairs {
            (0..n).map(|_| rng.gen()).collect()
        } else {
            Vec::new()
        };
        let mut sums = [0.0f64; 3];
        for batch in order.chunks(config.batch_size) {
            for (slot, data) in [&mut shape, &mut appearance, &mut joint].into_iter().enumerate() {
                if let Some(d) = data.as_mut() {
                    sums[slot] += d.step(batch, &labels, &flips, config)?;
                }
            }
        }
        let mean = |slot: usize, present: bool| present.then(|| sums[slot] / n as f64);
        let mut stats = EpochStats {
            epoch,
            shape_loss: mean(0, shape.is_some()),
            appearance_loss: mean(1, appearance.is_some()),
            joint_loss: mean(2, joint.is_some()),
            shape_input_grad_norm: None,
        };
        for (name, v) in [
            ("shape", stats.shape_loss),
            ("appearance", stats.appearance_loss),
            ("joint", stats.joint_loss),
        ] {
            if let Some(v) = v {
                if !v.is_finite() {
                    return Err(Error::Divergence {
                        epoch,
                        message: format!("{name} loss is {v}"),
                    });
                }
            }
        }
        for (name, data) in [("shape", &shape), ("appearance", &appearance), ("joint", &joint)] {
            if data.as_ref().is_some_and(|d| !d.branch.net.is_finite()) {
                return Err(Error::Divergence {
                    epoch,
                    message: format!("{name} network has non-finite parameters"),
                });
            }
        }
        if config.propagate_input_gradients {
            model.shape = shape.as_ref().map(|d| d.branch.clone());
            model.appearance = appearance.as_ref().map(|d| d.branch.clone());
            model.joint = joint.as_ref().map(|d| d.branch.clone());
            let mut total = 0.0;
            for s in samples {
                let (_, g) = model.loss_and_input_gradients(s)?;
                total += g.shape_a.frobenius_norm() + g.shape_b.frobenius_norm();
            }
            let norm = total / (2 * n) as f64;
            if !norm.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    message: format!("input gradient norm is {norm}"),
                });
            }
            stats.shape_input_grad_norm = Some(norm);
        }
        history.push(stats);
    }
    model.shape = shape.map(|d| d.branch);
    model.appearance = appearance.map(|d| d.branch);
    model.joint = joint.map(|d| d.branch);
    Ok((model, history))
}
