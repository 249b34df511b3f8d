//! Deterministic training: cropping/masking augmentation, the AdamW
//! optimizer with warmup + cosine learning-rate schedule, checkpointing, and
//! the step loop itself.
//!
//! Determinism contract: given the same [`PipelineConfig`] and dataset, the
//! loss trace and final parameters are bit-identical across runs, and a run
//! interrupted at any step and resumed from its checkpoint reproduces the
//! uninterrupted trace exactly. This works because no RNG state is carried
//! between steps — every random decision (epoch shuffling, crop placement,
//! mask jitter, dropout) draws from a fresh generator derived from
//! `(seed, stream, step)`, so a resumed run re-derives the same streams.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{s, Array3, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::labelgen::{jitter_mask, mask_implant, rasterize_implant, MaskingConfig};
use crate::manifest::{ManifestEntry, Split};
use crate::metrics::{binarize, dice_score, iou_score};
use crate::network::ImplantNet;
use crate::objectives::{total_loss_grad, LossOptions};
use crate::slope::slopes_from_label;
use crate::volume::{load_landmarks, BinaryMask, SlopePair, VoxelVolume};

/// Training hyperparameters. Masking and loss settings ride along because
/// they shape every training sample.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Samples accumulated per optimizer step.
    pub batch_size: usize,
    /// Peak learning rate reached at the end of warmup.
    pub base_lr: f64,
    /// Decoupled weight decay.
    pub weight_decay: f64,
    /// Steps of linear learning-rate ramp from zero.
    pub warmup_steps: usize,
    /// Total optimizer steps.
    pub total_steps: usize,
    /// Spatial size of training crops; each side must be a multiple of 16
    /// so crops survive the four pooling stages.
    pub crop_size: [usize; 3],
    /// Master seed for initialization and every random stream.
    pub seed: u64,
    /// Probability that a crop is forced to cover a foreground voxel;
    /// 0 disables oversampling.
    pub fg_oversample: f64,
    /// Evaluate on the training set every this many steps (0 = never).
    pub eval_every: usize,
    /// Stop early once evaluation Dice reaches this value (0 disables).
    pub target_dice: f64,
    /// Companion slope requirement for early stopping (0 = Dice alone).
    pub target_slope_mae: f64,
    pub masking: MaskingConfig,
    pub loss: LossOptions,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 4,
            base_lr: 3e-4,
            weight_decay: 5e-5,
            warmup_steps: 50,
            total_steps: 1000,
            crop_size: [32, 32, 32],
            seed: 0,
            fg_oversample: 0.5,
            eval_every: 0,
            target_dice: 0.0,
            target_slope_mae: 0.0,
            masking: MaskingConfig::default(),
            loss: LossOptions::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::Config(format!(
                "base_lr must be positive and finite, got {}",
                self.base_lr
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!(
                "weight_decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        if self.total_steps == 0 {
            return Err(Error::Config("total_steps must be >= 1".into()));
        }
        if self.warmup_steps >= self.total_steps {
            return Err(Error::Config(format!(
                "warmup_steps ({}) must be < total_steps ({})",
                self.warmup_steps, self.total_steps
            )));
        }
        for &c in &self.crop_size {
            if c == 0 || c % 16 != 0 {
                return Err(Error::Config(format!(
                    "crop_size sides must be nonzero multiples of 16, got {:?}",
                    self.crop_size
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.fg_oversample) {
            return Err(Error::Config(format!(
                "fg_oversample must lie in [0, 1], got {}",
                self.fg_oversample
            )));
        }
        if !(0.0..=1.0).contains(&self.target_dice) {
            return Err(Error::Config(format!(
                "target_dice must lie in [0, 1], got {}",
                self.target_dice
            )));
        }
        if !(self.target_slope_mae >= 0.0) {
            return Err(Error::Config(format!(
                "target_slope_mae must be >= 0, got {}",
                self.target_slope_mae
            )));
        }
        self.masking.validate()
    }
}

/// Learning rate at a 1-based optimizer step: linear ramp 0 → `base_lr`
/// over `warmup_steps`, then cosine annealing back to zero at `total_steps`.
/// The two pieces agree at the boundary.
pub fn lr_at(step: usize, config: &TrainConfig) -> Result<f64> {
    if step > config.total_steps {
        return Err(Error::Config(format!(
            "step {} beyond total_steps {}",
            step, config.total_steps
        )));
    }
    let warmup = config.warmup_steps;
    if step < warmup {
        return Ok(config.base_lr * step as f64 / warmup as f64);
    }
    let t = (step - warmup) as f64 / (config.total_steps - warmup) as f64;
    Ok(config.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * t).cos()))
}

// ---------------------------------------------------------------------------
// Derived random streams

const STREAM_EPOCH: u64 = 1;
const STREAM_SAMPLE: u64 = 2;
const STREAM_DROPOUT: u64 = 3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stateless generator for `(seed, stream, index)`; equal inputs yield equal
/// streams, which is what makes checkpoint resumption exact.
fn derive_rng(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    let h = splitmix64(splitmix64(splitmix64(seed) ^ stream) ^ index);
    ChaCha8Rng::seed_from_u64(h)
}

/// Sample visiting order for one epoch: a seeded permutation of the dataset.
fn epoch_order(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut derive_rng(seed, STREAM_EPOCH, epoch));
    idx
}

// ---------------------------------------------------------------------------
// Sample preparation

/// One dataset record: a scan and its implant label at full size.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub volume: VoxelVolume,
    pub label: BinaryMask,
    pub patient: String,
}

/// One network-ready training example.
#[derive(Debug, Clone)]
pub struct CropSample {
    /// Masked intensity crop.
    pub input: Array3<f32>,
    /// Label crop aligned with `input`.
    pub target: BinaryMask,
    /// Slope ground truth from the full, uncropped label.
    pub slopes: SlopePair,
}

fn pad_to<A: Clone + num_traits::Zero>(a: &Array3<A>, out: [usize; 3]) -> Array3<A> {
    let (d, h, w) = a.dim();
    if [d, h, w] == out {
        return a.clone();
    }
    let off = [(out[0] - d) / 2, (out[1] - h) / 2, (out[2] - w) / 2];
    let mut b = Array3::zeros((out[0], out[1], out[2]));
    b.slice_mut(s![
        off[0]..off[0] + d,
        off[1]..off[1] + h,
        off[2]..off[2] + w
    ])
    .assign(a);
    b
}

/// Choose a crop origin, optionally forcing coverage of a foreground voxel.
///
/// Draw order is fixed (oversample coin, then per-axis choices z, y, x) so a
/// seeded generator reproduces placements exactly.
fn pick_origin(
    label: &Array3<u8>,
    crop: [usize; 3],
    fg_oversample: f64,
    rng: &mut impl Rng,
) -> [usize; 3] {
    let (d, h, w) = label.dim();
    let max_o = [d - crop[0], h - crop[1], w - crop[2]];
    if fg_oversample > 0.0 && rng.random_bool(fg_oversample) {
        let fg: Vec<[usize; 3]> = label
            .indexed_iter()
            .filter(|&(_, &v)| v == 1)
            .map(|((z, y, x), _)| [z, y, x])
            .collect();
        if !fg.is_empty() {
            let v = fg[rng.random_range(0..fg.len())];
            let mut origin = [0usize; 3];
            for a in 0..3 {
                // Origins for which the crop covers v[a], clamped to bounds.
                let lo = (v[a] + 1).saturating_sub(crop[a]).min(max_o[a]);
                let hi = v[a].min(max_o[a]);
                origin[a] = rng.random_range(lo..=hi);
            }
            return origin;
        }
    }
    [
        rng.random_range(0..=max_o[0]),
        rng.random_range(0..=max_o[1]),
        rng.random_range(0..=max_o[2]),
    ]
}

/// Build one training example: jitter the implant mask, blank the volume
/// under it, take an aligned random crop (zero-padding volumes smaller than
/// the crop), and attach slope ground truth computed from the full label.
pub fn make_training_sample(
    volume: &VoxelVolume,
    label: &BinaryMask,
    config: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<CropSample> {
    if volume.shape() != label.shape() {
        return Err(Error::ShapeMismatch {
            left: volume.shape(),
            right: label.shape(),
        });
    }
    let slopes = slopes_from_label(label)?;
    let jittered = jitter_mask(label, &config.masking, rng);
    let masked = mask_implant(volume, &jittered, &config.masking)?;

    let crop = config.crop_size;
    let shape = volume.shape();
    let padded = [
        shape[0].max(crop[0]),
        shape[1].max(crop[1]),
        shape[2].max(crop[2]),
    ];
    let vol = pad_to(masked.data(), padded);
    let lab = pad_to(label.data(), padded);

    let o = pick_origin(&lab, crop, config.fg_oversample, rng);
    let window = s![o[0]..o[0] + crop[0], o[1]..o[1] + crop[1], o[2]..o[2] + crop[2]];
    let input = vol.slice(window).to_owned();
    let target = BinaryMask::new(lab.slice(window).to_owned())?;
    Ok(CropSample {
        input,
        target,
        slopes,
    })
}

/// Load every entry of `split`, rasterizing the union of its annotated
/// implants into the label.
pub fn load_dataset(
    entries: &[ManifestEntry],
    split: Split,
    radius: f64,
) -> Result<Vec<TrainingSample>> {
    let mut out = Vec::new();
    for e in entries.iter().filter(|e| e.split == split) {
        let volume = VoxelVolume::load(&e.volume)?;
        let triples = load_landmarks(&e.landmarks)?;
        let shape = volume.shape();
        let mut lab = Array3::<u8>::zeros((shape[0], shape[1], shape[2]));
        for t in &triples {
            let m = rasterize_implant(t, shape, radius)?;
            lab.zip_mut_with(m.data(), |a, &b| *a |= b);
        }
        out.push(TrainingSample {
            volume,
            label: BinaryMask::new(lab)?,
            patient: e.patient.clone(),
        });
    }
    if out.is_empty() {
        return Err(Error::Config(format!("manifest has no '{split}' entries")));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Optimizer

/// AdamW with decoupled weight decay. State is kept in f32 so checkpoints
/// restore it bit-for-bit; the arithmetic runs in f64.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f32>,
    v: Vec<f32>,
}

impl AdamW {
    pub fn new(n: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn from_state(m: Vec<f32>, v: Vec<f32>) -> Result<Self> {
        if m.len() != v.len() {
            return Err(Error::Config(format!(
                "optimizer moment lengths differ: {} vs {}",
                m.len(),
                v.len()
            )));
        }
        Ok(Self {
            m,
            v,
            ..Self::new(0)
        })
    }

    pub fn state(&self) -> (&[f32], &[f32]) {
        (&self.m, &self.v)
    }

    /// Apply one update; `t` is the 1-based step index used for bias
    /// correction. From a fresh state, zero gradients with zero weight decay
    /// leave the parameters untouched.
    pub fn step(&mut self, params: &mut [f32], grads: &[f32], lr: f64, weight_decay: f64, t: usize) {
        assert_eq!(params.len(), self.m.len(), "optimizer/parameter length");
        assert_eq!(params.len(), grads.len(), "gradient/parameter length");
        assert!(t >= 1, "step index is 1-based");
        let bc1 = 1.0 - self.beta1.powi(t as i32);
        let bc2 = 1.0 - self.beta2.powi(t as i32);
        for i in 0..params.len() {
            let g = grads[i] as f64;
            let m = self.beta1 * self.m[i] as f64 + (1.0 - self.beta1) * g;
            let v = self.beta2 * self.v[i] as f64 + (1.0 - self.beta2) * g * g;
            self.m[i] = m as f32;
            self.v[i] = v as f32;
            let update = (m / bc1) / ((v / bc2).sqrt() + self.eps);
            let p = params[i] as f64;
            params[i] = (p - lr * (update + weight_decay * p)) as f32;
        }
    }
}

// ---------------------------------------------------------------------------
// Checkpoints

const CKPT_MAGIC: &[u8; 4] = b"IPCK";
const CKPT_VERSION: u32 = 1;

/// Serialized training state. The fingerprint is the canonical config text;
/// resuming under a different configuration is refused.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub fingerprint: String,
    pub params: Vec<f32>,
    pub opt_m: Vec<f32>,
    pub opt_v: Vec<f32>,
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(CKPT_MAGIC)?;
    w.write_u32::<LittleEndian>(CKPT_VERSION)?;
    w.write_u64::<LittleEndian>(ckpt.step)?;
    let fp = ckpt.fingerprint.as_bytes();
    w.write_u32::<LittleEndian>(fp.len() as u32)?;
    w.write_all(fp)?;
    w.write_u64::<LittleEndian>(ckpt.params.len() as u64)?;
    for arr in [&ckpt.params, &ckpt.opt_m, &ckpt.opt_v] {
        assert_eq!(arr.len(), ckpt.params.len(), "checkpoint array lengths");
        for &x in arr.iter() {
            w.write_f32::<LittleEndian>(x)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bad = |reason: &str| Error::format(path, reason);
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| bad("truncated header"))?;
    if &magic != CKPT_MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != CKPT_VERSION {
        return Err(bad(&format!("unsupported checkpoint version {version}")));
    }
    let step = r.read_u64::<LittleEndian>()?;
    let fp_len = r.read_u32::<LittleEndian>()? as usize;
    let mut fp = vec![0u8; fp_len];
    r.read_exact(&mut fp)
        .map_err(|_| bad("truncated fingerprint"))?;
    let fingerprint =
        String::from_utf8(fp).map_err(|_| bad("fingerprint is not valid UTF-8"))?;
    let n = r.read_u64::<LittleEndian>()? as usize;
    let mut read_arr = |what: &str| -> Result<Vec<f32>> {
        let mut a = vec![0f32; n];
        r.read_f32_into::<LittleEndian>(&mut a)
            .map_err(|_| Error::format(path, format!("truncated {what}")))?;
        Ok(a)
    };
    let params = read_arr("parameters")?;
    let opt_m = read_arr("first moments")?;
    let opt_v = read_arr("second moments")?;
    Ok(Checkpoint {
        step,
        fingerprint,
        params,
        opt_m,
        opt_v,
    })
}

// ---------------------------------------------------------------------------
// The training loop

/// Loss record for one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub lr: f64,
    pub dice: f64,
    pub ce: f64,
    pub slope: f64,
    pub total: f64,
}

/// Mean metrics over a dataset; `slope_mae` is present only when the slope
/// branch produced predictions for every sample.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub dice: f64,
    pub iou: f64,
    pub slope_mae: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSummary {
    pub steps: usize,
    pub stopped_early: bool,
    pub eval: Option<EvalMetrics>,
}

pub struct Trainer {
    net: ImplantNet,
    pub params: Vec<f32>,
    opt: AdamW,
    step: usize,
    config: PipelineConfig,
    fingerprint: String,
}

impl Trainer {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let fingerprint = config.to_text();
        let net = ImplantNet::new(config.network.clone())?;
        let params = net.init_params::<f32>(config.train.seed);
        let opt = AdamW::new(params.len());
        Ok(Self {
            net,
            params,
            opt,
            step: 0,
            config,
            fingerprint,
        })
    }

    /// Restore a trainer from a checkpoint written under the same
    /// configuration.
    pub fn resume(config: PipelineConfig, path: &Path) -> Result<Self> {
        let ckpt = load_checkpoint(path)?;
        let mut t = Self::new(config)?;
        if ckpt.fingerprint != t.fingerprint {
            return Err(Error::CheckpointMismatch(
                "checkpoint was written under a different configuration".into(),
            ));
        }
        if ckpt.params.len() != t.params.len() {
            return Err(Error::CheckpointMismatch(format!(
                "parameter count {} does not match network ({})",
                ckpt.params.len(),
                t.params.len()
            )));
        }
        t.params = ckpt.params;
        t.opt = AdamW::from_state(ckpt.opt_m, ckpt.opt_v)?;
        t.step = ckpt.step as usize;
        Ok(t)
    }

    pub fn net(&self) -> &ImplantNet {
        &self.net
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    /// Completed optimizer steps.
    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let (m, v) = self.opt.state();
        Checkpoint {
            step: self.step as u64,
            fingerprint: self.fingerprint.clone(),
            params: self.params.clone(),
            opt_m: m.to_vec(),
            opt_v: v.to_vec(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(path, &self.checkpoint())
    }

    /// Run one optimizer step: accumulate gradients over a batch of freshly
    /// augmented crops, then update.
    pub fn train_step(&mut self, data: &[TrainingSample]) -> Result<StepLog> {
        if data.is_empty() {
            return Err(Error::Config("training dataset is empty".into()));
        }
        let t = &self.config.train;
        let step = self.step + 1;
        if step > t.total_steps {
            return Err(Error::Config(format!(
                "training already finished at step {}",
                self.step
            )));
        }
        let n = data.len();
        let batch = t.batch_size;
        let inv_batch = 1.0 / batch as f64;

        let mut grads = vec![0f32; self.params.len()];
        let mut acc = StepLog {
            step,
            lr: 0.0,
            dice: 0.0,
            ce: 0.0,
            slope: 0.0,
            total: 0.0,
        };

        for i in 0..batch {
            // Global position in the shuffled sample sequence; epochs are
            // seeded permutations of the dataset.
            let c = (step - 1) * batch + i;
            let order = epoch_order(n, t.seed, (c / n) as u64);
            let sample = &data[order[c % n]];

            let mut sample_rng = derive_rng(t.seed, STREAM_SAMPLE, c as u64);
            let crop = make_training_sample(&sample.volume, &sample.label, t, &mut sample_rng)?;
            let x = crop.input.clone().insert_axis(Axis(0));

            let mut dropout_rng = derive_rng(t.seed, STREAM_DROPOUT, c as u64);
            let (out, cache) = self.net.forward(&self.params, &x, true, &mut dropout_rng)?;
            let pred = out.probs.index_axis(Axis(0), 0).to_owned();

            let (slope_pred, use_spb) = match out.slopes {
                Some([a, b]) => (SlopePair::new(f64::from(a), f64::from(b))?, true),
                None => (SlopePair::new(0.0, 0.0)?, false),
            };
            let (terms, seg_grad, slope_grad) =
                total_loss_grad(&pred, &crop.target, slope_pred, crop.slopes, use_spb, &t.loss)?;

            let scale = inv_batch as f32;
            let d_probs = (seg_grad * scale).insert_axis(Axis(0));
            let d_slopes = use_spb.then(|| {
                [
                    (slope_grad[0] * inv_batch) as f32,
                    (slope_grad[1] * inv_batch) as f32,
                ]
            });
            self.net
                .backward(&self.params, &mut grads, &x, &cache, &d_probs, d_slopes);

            acc.dice += terms.dice * inv_batch;
            acc.ce += terms.ce * inv_batch;
            acc.slope += terms.slope * inv_batch;
            acc.total += terms.total * inv_batch;
        }

        let lr = lr_at(step, t)?;
        self.opt
            .step(&mut self.params, &grads, lr, t.weight_decay, step);
        self.step = step;
        acc.lr = lr;
        Ok(acc)
    }

    /// Score the current parameters on foreground-centered crops: the volume
    /// is masked with the true label (no jitter) and cropped around the
    /// label centroid, mirroring the training distribution without its
    /// randomness.
    pub fn evaluate(&self, data: &[TrainingSample]) -> Result<EvalMetrics> {
        if data.is_empty() {
            return Err(Error::Config("evaluation dataset is empty".into()));
        }
        let t = &self.config.train;
        let eval_masking = MaskingConfig {
            max_offset: 0,
            ..t.masking.clone()
        };
        let mut dice = 0.0;
        let mut iou = 0.0;
        let mut maes = Vec::new();
        for sample in data {
            let slopes_gt = slopes_from_label(&sample.label)?;
            let masked = mask_implant(&sample.volume, &sample.label, &eval_masking)?;

            let crop = t.crop_size;
            let shape = sample.volume.shape();
            let padded = [
                shape[0].max(crop[0]),
                shape[1].max(crop[1]),
                shape[2].max(crop[2]),
            ];
            let vol = pad_to(masked.data(), padded);
            let lab = pad_to(sample.label.data(), padded);

            let o = centroid_origin(&lab, crop);
            let window = s![
                o[0]..o[0] + crop[0],
                o[1]..o[1] + crop[1],
                o[2]..o[2] + crop[2]
            ];
            let x = vol.slice(window).to_owned().insert_axis(Axis(0));
            let target = BinaryMask::new(lab.slice(window).to_owned())?;

            let out = self.net.infer(&self.params, &x)?;
            let pred = binarize(&out.probs.index_axis(Axis(0), 0).to_owned(), 0.5)?;
            dice += dice_score(&pred, &target)?;
            iou += iou_score(&pred, &target)?;
            if let Some([a, b]) = out.slopes {
                let mae = ((f64::from(a) - slopes_gt.k1).abs()
                    + (f64::from(b) - slopes_gt.k2).abs())
                    / 2.0;
                maes.push(mae);
            }
        }
        let n = data.len() as f64;
        let slope_mae = (maes.len() == data.len())
            .then(|| maes.iter().sum::<f64>() / maes.len() as f64);
        Ok(EvalMetrics {
            dice: dice / n,
            iou: iou / n,
            slope_mae,
        })
    }

    /// Train until `total_steps` or until evaluation meets the configured
    /// targets, invoking `on_step` after every optimizer step.
    pub fn run(
        &mut self,
        data: &[TrainingSample],
        mut on_step: impl FnMut(&StepLog),
    ) -> Result<TrainSummary> {
        let total = self.config.train.total_steps;
        let mut last_eval = None;
        let mut stopped_early = false;
        while self.step < total {
            let log = self.train_step(data)?;
            on_step(&log);
            let t = &self.config.train;
            if t.eval_every > 0 && (self.step % t.eval_every == 0 || self.step == total) {
                let ev = self.evaluate(data)?;
                last_eval = Some(ev);
                let dice_met = t.target_dice > 0.0 && ev.dice >= t.target_dice;
                let slope_met = t.target_slope_mae <= 0.0
                    || ev.slope_mae.is_none_or(|m| m <= t.target_slope_mae);
                if dice_met && slope_met {
                    stopped_early = self.step < total;
                    break;
                }
            }
        }
        Ok(TrainSummary {
            steps: self.step,
            stopped_early,
            eval: last_eval,
        })
    }
}

/// Origin of the crop centered on the label centroid, clamped to bounds.
fn centroid_origin(label: &Array3<u8>, crop: [usize; 3]) -> [usize; 3] {
    let (d, h, w) = label.dim();
    let dims = [d, h, w];
    let mut sum = [0usize; 3];
    let mut count = 0usize;
    for ((z, y, x), &v) in label.indexed_iter() {
        if v == 1 {
            sum[0] += z;
            sum[1] += y;
            sum[2] += x;
            count += 1;
        }
    }
    let mut origin = [0usize; 3];
    for a in 0..3 {
        let center = if count > 0 {
            sum[a] / count
        } else {
            dims[a] / 2
        };
        origin[a] = center
            .saturating_sub(crop[a] / 2)
            .min(dims[a] - crop[a]);
    }
    origin
}

/// Train from scratch, writing `checkpoint.bin`, `loss_log.jsonl` and
/// `summary.json` into `out_dir`.
pub fn train(
    data: &[TrainingSample],
    config: &PipelineConfig,
    out_dir: &Path,
) -> Result<TrainSummary> {
    std::fs::create_dir_all(out_dir)?;
    let mut trainer = Trainer::new(config.clone())?;
    let log_path = out_dir.join("loss_log.jsonl");
    let mut log = BufWriter::new(std::fs::File::create(&log_path)?);
    let mut log_err = None;
    let summary = trainer.run(data, |s| {
        if log_err.is_none() {
            if let Err(e) = serde_json::to_writer(&mut log, s).map_err(std::io::Error::from) {
                log_err = Some(e);
            } else if let Err(e) = log.write_all(b"\n") {
                log_err = Some(e);
            }
        }
    })?;
    if let Some(e) = log_err {
        return Err(e.into());
    }
    log.flush()?;
    trainer.save(&out_dir.join("checkpoint.bin"))?;
    std::fs::write(
        out_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary).map_err(std::io::Error::from)?,
    )?;
    Ok(summary)
}
