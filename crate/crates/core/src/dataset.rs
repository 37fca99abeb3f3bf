//! Feature-sequence datasets: synthetic scenario generation, the on-disk
//! container, and sensor-style corruption applied in feature space.

use std::fs;
use std::path::Path;

use ndarray::{s, Array1, Array2, Array3, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: &str = "1";

/// Default extreme value used by impulse corruption.
pub const DEFAULT_IMPULSE_MAGNITUDE: f64 = 3.0;

/// One video, reduced to per-frame global and per-object feature vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    pub fps: f64,
    /// `N x d_img`
    pub image_feats: Array2<f64>,
    /// `N x K x d_obj`
    pub object_feats: Array3<f64>,
    /// `N x K`, true where the object slot is occupied.
    pub object_mask: Array2<bool>,
}

impl FeatureSequence {
    pub fn frames(&self) -> usize {
        self.image_feats.nrows()
    }

    pub fn d_img(&self) -> usize {
        self.image_feats.ncols()
    }

    pub fn d_obj(&self) -> usize {
        self.object_feats.dim().2
    }

    pub fn max_objects(&self) -> usize {
        self.object_feats.dim().1
    }

    pub fn image(&self, frame: usize) -> ArrayView1<'_, f64> {
        self.image_feats.row(frame)
    }

    pub fn objects(&self, frame: usize) -> ArrayView2<'_, f64> {
        self.object_feats.slice(s![frame, .., ..])
    }

    pub fn mask(&self, frame: usize) -> ArrayView1<'_, bool> {
        self.object_mask.row(frame)
    }

    pub fn duration_secs(&self) -> f64 {
        self.frames() as f64 / self.fps
    }

    pub fn validate(&self, allow_empty_frames: bool) -> Result<()> {
        let n = self.frames();
        let (n_obj, k, _) = self.object_feats.dim();
        if n == 0 {
            return Err(Error::Domain("sequence has no frames".into()));
        }
        if k == 0 {
            return Err(Error::Domain("sequence has no object slots".into()));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(Error::Domain(format!("fps must be positive, got {}", self.fps)));
        }
        if n_obj != n || self.object_mask.dim() != (n, k) {
            return Err(Error::Domain(format!(
                "frame count mismatch: image {n}, objects {n_obj}, mask {:?}",
                self.object_mask.dim()
            )));
        }
        if !self
            .image_feats
            .iter()
            .chain(self.object_feats.iter())
            .all(|v| v.is_finite())
        {
            return Err(Error::Domain("non-finite feature value".into()));
        }
        if !allow_empty_frames {
            if let Some(frame) = (0..n).find(|&f| !self.mask(f).iter().any(|&m| m)) {
                return Err(Error::EmptyFrame { frame: Some(frame) });
            }
        }
        Ok(())
    }
}

/// Video-level label. `accident_frame` is 1-based and 0 for negatives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioLabel {
    pub positive: bool,
    pub accident_frame: usize,
}

impl ScenarioLabel {
    pub fn negative() -> Self {
        Self {
            positive: false,
            accident_frame: 0,
        }
    }

    pub fn positive(accident_frame: usize) -> Self {
        Self {
            positive: true,
            accident_frame,
        }
    }

    pub fn validate(&self, frames: usize) -> Result<()> {
        if self.positive != (self.accident_frame >= 1) {
            return Err(Error::Domain(format!(
                "label inconsistent: positive={} accident_frame={}",
                self.positive, self.accident_frame
            )));
        }
        if self.accident_frame > frames {
            return Err(Error::Domain(format!(
                "accident frame {} beyond sequence length {frames}",
                self.accident_frame
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub sequence: FeatureSequence,
    pub label: ScenarioLabel,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub generation_seed: Option<u64>,
    pub allow_empty_frames: bool,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, generation_seed: Option<u64>) -> Result<Self> {
        let dataset = Self {
            samples,
            generation_seed,
            allow_empty_frames: false,
        };
        dataset.validate()?;
        Ok(dataset)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn d_img(&self) -> usize {
        self.samples[0].sequence.d_img()
    }

    pub fn d_obj(&self) -> usize {
        self.samples[0].sequence.d_obj()
    }

    pub fn max_objects(&self) -> usize {
        self.samples[0].sequence.max_objects()
    }

    pub fn fps(&self) -> f64 {
        self.samples[0].sequence.fps
    }

    pub fn count_positive(&self) -> usize {
        self.samples.iter().filter(|s| s.label.positive).count()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            generation_seed: self.generation_seed,
            allow_empty_frames: self.allow_empty_frames,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .samples
            .first()
            .ok_or_else(|| Error::Domain("dataset is empty".into()))?;
        let (d_img, d_obj, k, fps) = (
            first.sequence.d_img(),
            first.sequence.d_obj(),
            first.sequence.max_objects(),
            first.sequence.fps,
        );
        for (i, sample) in self.samples.iter().enumerate() {
            let seq = &sample.sequence;
            let ctx = |e: Error| Error::Domain(format!("sequence {i}: {e}"));
            seq.validate(self.allow_empty_frames).map_err(ctx)?;
            sample.label.validate(seq.frames()).map_err(ctx)?;
            if seq.d_img() != d_img || seq.d_obj() != d_obj || seq.max_objects() != k {
                return Err(Error::Domain(format!(
                    "sequence {i}: dims (d_img={}, d_obj={}, K={}) differ from dataset (d_img={d_img}, d_obj={d_obj}, K={k})",
                    seq.d_img(),
                    seq.d_obj(),
                    seq.max_objects()
                )));
            }
            if seq.fps != fps {
                return Err(Error::Domain(format!(
                    "sequence {i}: fps {} differs from dataset fps {fps}",
                    seq.fps
                )));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Synthetic generation

/// Parameters of the synthetic scenario generator.
///
/// Features are unit scale: a static per-sequence offset with std
/// `sqrt(1 - noise_floor^2)` plus per-frame noise with std `noise_floor`.
/// Positives carry a cue ramp along a fixed direction in the first
/// `cue_dims` components of the image features and of one "risk" object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub n_pos: usize,
    pub n_neg: usize,
    pub frames: usize,
    pub fps: f64,
    pub d_img: usize,
    pub d_obj: usize,
    pub max_objects: usize,
    pub min_objects: usize,
    pub cue_dims: usize,
    /// The ramp begins this many frames before the accident frame.
    pub ramp_start: usize,
    /// Cue amplitude gained per frame once the ramp has begun.
    pub ramp_slope: f64,
    pub cue_cap: f64,
    pub noise_floor: f64,
    /// Inclusive range for the 1-based accident frame of positives.
    pub accident_min: usize,
    pub accident_max: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self::dad_like()
    }
}

impl GenConfig {
    /// 100 frames at 20 fps.
    pub fn dad_like() -> Self {
        Self {
            n_pos: 100,
            n_neg: 100,
            frames: 100,
            fps: 20.0,
            d_img: 64,
            d_obj: 64,
            max_objects: 5,
            min_objects: 2,
            cue_dims: 8,
            ramp_start: 70,
            ramp_slope: 0.1,
            cue_cap: 2.5,
            noise_floor: 0.8,
            accident_min: 80,
            accident_max: 95,
        }
    }

    /// 50 frames at 10 fps.
    pub fn ccd_like() -> Self {
        Self {
            frames: 50,
            fps: 10.0,
            ramp_start: 35,
            ramp_slope: 0.2,
            accident_min: 40,
            accident_max: 47,
            ..Self::dad_like()
        }
    }

    /// Full-size feature widths; not exercised by the test suite.
    pub fn full_scale() -> Self {
        Self {
            d_img: 4096,
            d_obj: 4096,
            max_objects: 19,
            ..Self::dad_like()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "dad-like" => Ok(Self::dad_like()),
            "ccd-like" => Ok(Self::ccd_like()),
            "full-scale" => Ok(Self::full_scale()),
            other => Err(Error::Config(format!(
                "unknown preset {other:?} (expected dad-like, ccd-like or full-scale)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_pos + self.n_neg == 0 {
            return fail("n_pos + n_neg must be positive".into());
        }
        if self.frames == 0 || self.d_img == 0 || self.d_obj == 0 || self.max_objects == 0 {
            return fail("frames, d_img, d_obj and max_objects must be positive".into());
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return fail(format!("fps must be positive, got {}", self.fps));
        }
        if self.ramp_start >= self.frames {
            return fail(format!(
                "ramp_start ({}) must be smaller than frames ({})",
                self.ramp_start, self.frames
            ));
        }
        if self.min_objects == 0 || self.min_objects > self.max_objects {
            return fail(format!(
                "min_objects must lie in [1, {}], got {}",
                self.max_objects, self.min_objects
            ));
        }
        if self.cue_dims == 0 || self.cue_dims > self.d_img.min(self.d_obj) {
            return fail(format!(
                "cue_dims must lie in [1, {}], got {}",
                self.d_img.min(self.d_obj),
                self.cue_dims
            ));
        }
        if self.n_pos > 0
            && (self.accident_min == 0 || self.accident_min > self.accident_max || self.accident_max > self.frames)
        {
            return fail(format!(
                "accident frame range [{}, {}] must lie within [1, {}]",
                self.accident_min, self.accident_max, self.frames
            ));
        }
        if !(0.0..=1.0).contains(&self.noise_floor) {
            return fail(format!("noise_floor must lie in [0, 1], got {}", self.noise_floor));
        }
        if !(self.ramp_slope.is_finite() && self.ramp_slope >= 0.0 && self.cue_cap >= 0.0) {
            return fail("ramp_slope and cue_cap must be non-negative".into());
        }
        Ok(())
    }

    /// Cue amplitude at 0-based frame `index` for a positive with 1-based
    /// accident frame `accident_frame`.
    pub fn cue_amplitude(&self, index: usize, accident_frame: usize) -> f64 {
        let begin = accident_frame as f64 - 1.0 - self.ramp_start as f64;
        (self.ramp_slope * (index as f64 - begin)).clamp(0.0, self.cue_cap)
    }
}

/// Deterministic per-stream rng derived from a seed and a stream index.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn unit_direction(rng: &mut ChaCha8Rng, dims: usize) -> Array1<f64> {
    loop {
        let v: Array1<f64> = Array1::from_shape_simple_fn(dims, || StandardNormal.sample(rng));
        let norm = v.dot(&v).sqrt();
        if norm > 1e-6 {
            return v / norm;
        }
    }
}

/// Generates a labelled synthetic dataset; positives first, then negatives.
pub fn gen_synthetic(config: &GenConfig, seed: u64) -> Result<Dataset> {
    config.validate()?;
    let mut dir_rng = stream_rng(seed, 0);
    let image_dir = unit_direction(&mut dir_rng, config.cue_dims);
    let object_dir = unit_direction(&mut dir_rng, config.cue_dims);

    let total = config.n_pos + config.n_neg;
    let samples = (0..total)
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64 + 1);
            let label = if i < config.n_pos {
                ScenarioLabel::positive(rng.random_range(config.accident_min..=config.accident_max))
            } else {
                ScenarioLabel::negative()
            };
            let sequence = gen_sequence(config, &label, &image_dir, &object_dir, &mut rng);
            Sample { sequence, label }
        })
        .collect();
    Dataset::new(samples, Some(seed))
}

fn gen_sequence(
    config: &GenConfig,
    label: &ScenarioLabel,
    image_dir: &Array1<f64>,
    object_dir: &Array1<f64>,
    rng: &mut ChaCha8Rng,
) -> FeatureSequence {
    let n = config.frames;
    let k = config.max_objects;
    let scene_std = (1.0 - config.noise_floor * config.noise_floor).max(0.0).sqrt();
    let normal = |rng: &mut ChaCha8Rng, std: f64| -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        z * std
    };

    let image_offset: Vec<f64> = (0..config.d_img).map(|_| normal(rng, scene_std)).collect();
    let mut image_feats = Array2::zeros((n, config.d_img));
    for mut row in image_feats.rows_mut() {
        for (v, off) in row.iter_mut().zip(&image_offset) {
            *v = off + normal(rng, config.noise_floor);
        }
    }

    let present = rng.random_range(config.min_objects..=k);
    let mut slots: Vec<usize> = (0..k).collect();
    for i in (1..k).rev() {
        let j = rng.random_range(0..=i);
        slots.swap(i, j);
    }
    let slots = &slots[..present];
    let risk_slot = slots[rng.random_range(0..present)];

    let mut object_feats = Array3::zeros((n, k, config.d_obj));
    let mut object_mask = Array2::from_elem((n, k), false);
    for &slot in slots {
        let offset: Vec<f64> = (0..config.d_obj).map(|_| normal(rng, scene_std)).collect();
        for frame in 0..n {
            object_mask[[frame, slot]] = true;
            for (c, off) in offset.iter().enumerate() {
                object_feats[[frame, slot, c]] = off + normal(rng, config.noise_floor);
            }
        }
    }

    if label.positive {
        for frame in 0..n {
            let amp = config.cue_amplitude(frame, label.accident_frame);
            if amp == 0.0 {
                continue;
            }
            for c in 0..config.cue_dims {
                image_feats[[frame, c]] += amp * image_dir[c];
                object_feats[[frame, risk_slot, c]] += amp * object_dir[c];
            }
        }
    }

    FeatureSequence {
        fps: config.fps,
        image_feats,
        object_feats,
        object_mask,
    }
}

// ---------------------------------------------------------------------------
// On-disk container

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileHeader {
    d_img: usize,
    d_obj: usize,
    k: usize,
    fps: f64,
    #[serde(default)]
    allow_empty_frames: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileRecord {
    label: ScenarioLabel,
    frames: usize,
    image_feats: Vec<Vec<f64>>,
    object_feats: Vec<Vec<Vec<f64>>>,
    object_mask: Vec<Vec<bool>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileDataset {
    version: String,
    header: FileHeader,
    generation_seed: Option<u64>,
    sequences: Vec<FileRecord>,
}

/// Writes the dataset as a versioned JSON container. Floats use shortest
/// round-trip formatting so `load(save(d)) == d`.
pub fn save(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = FileDataset {
        version: FORMAT_VERSION.to_string(),
        header: FileHeader {
            d_img: dataset.d_img(),
            d_obj: dataset.d_obj(),
            k: dataset.max_objects(),
            fps: dataset.fps(),
            allow_empty_frames: dataset.allow_empty_frames,
        },
        generation_seed: dataset.generation_seed,
        sequences: dataset
            .samples
            .iter()
            .map(|s| {
                let seq = &s.sequence;
                FileRecord {
                    label: s.label,
                    frames: seq.frames(),
                    image_feats: seq.image_feats.rows().into_iter().map(|r| r.to_vec()).collect(),
                    object_feats: seq
                        .object_feats
                        .outer_iter()
                        .map(|frame| frame.rows().into_iter().map(|r| r.to_vec()).collect())
                        .collect(),
                    object_mask: seq.object_mask.rows().into_iter().map(|r| r.to_vec()).collect(),
                }
            })
            .collect(),
    };
    let text = serde_json::to_string(&file).map_err(|e| Error::Numeric(format!("cannot serialise dataset: {e}")))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(&text).map_err(|message| Error::parse(path, message))
}

fn parse(text: &str) -> std::result::Result<Dataset, String> {
    let file: FileDataset = serde_json::from_str(text).map_err(|e| e.to_string())?;
    if file.version != FORMAT_VERSION {
        return Err(format!(
            "unsupported version {:?} (expected {FORMAT_VERSION:?})",
            file.version
        ));
    }
    let h = &file.header;
    if file.sequences.is_empty() {
        return Err("dataset contains no sequences".into());
    }
    let mut samples = Vec::with_capacity(file.sequences.len());
    for (i, rec) in file.sequences.into_iter().enumerate() {
        let bad = |m: String| format!("sequence {i}: {m}");
        let n = rec.frames;
        if rec.image_feats.len() != n || rec.object_feats.len() != n || rec.object_mask.len() != n {
            return Err(bad(format!("expected {n} frames in every array")));
        }
        let mut image_feats = Array2::zeros((n, h.d_img));
        for (f, row) in rec.image_feats.iter().enumerate() {
            if row.len() != h.d_img {
                return Err(bad(format!(
                    "frame {f}: image width {} != d_img {}",
                    row.len(),
                    h.d_img
                )));
            }
            image_feats.row_mut(f).assign(&ArrayView1::from(row.as_slice()));
        }
        let mut object_feats = Array3::zeros((n, h.k, h.d_obj));
        let mut object_mask = Array2::from_elem((n, h.k), false);
        for f in 0..n {
            if rec.object_feats[f].len() != h.k || rec.object_mask[f].len() != h.k {
                return Err(bad(format!("frame {f}: object slot count differs from K={}", h.k)));
            }
            for (slot, vec) in rec.object_feats[f].iter().enumerate() {
                if vec.len() != h.d_obj {
                    return Err(bad(format!(
                        "frame {f} object {slot}: width {} != d_obj {}",
                        vec.len(),
                        h.d_obj
                    )));
                }
                object_feats
                    .slice_mut(s![f, slot, ..])
                    .assign(&ArrayView1::from(vec.as_slice()));
                object_mask[[f, slot]] = rec.object_mask[f][slot];
            }
        }
        samples.push(Sample {
            sequence: FeatureSequence {
                fps: h.fps,
                image_feats,
                object_feats,
                object_mask,
            },
            label: rec.label,
        });
    }
    let dataset = Dataset {
        samples,
        generation_seed: file.generation_seed,
        allow_empty_frames: h.allow_empty_frames,
    };
    dataset.validate().map_err(|e| e.to_string())?;
    Ok(dataset)
}

// ---------------------------------------------------------------------------
// Corruption

/// Adds independent N(0, sigma^2) noise to every feature component.
pub fn inject_gaussian(seq: &FeatureSequence, sigma: f64, seed: u64) -> Result<FeatureSequence> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::Domain(format!("sigma must be non-negative, got {sigma}")));
    }
    let mut out = seq.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in out.image_feats.iter_mut().chain(out.object_feats.iter_mut()) {
        let z: f64 = StandardNormal.sample(&mut rng);
        *v += sigma * z;
    }
    Ok(out)
}

/// Replaces each feature component with probability `fraction` by `+magnitude`
/// or `-magnitude` (fair coin).
pub fn inject_impulse(seq: &FeatureSequence, fraction: f64, magnitude: f64, seed: u64) -> Result<FeatureSequence> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Domain(format!("fraction must lie in [0, 1], got {fraction}")));
    }
    let mut out = seq.clone();
    if fraction == 0.0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for frame in 0..out.frames() {
        let image = out.image_feats.row_mut(frame).into_iter();
        let objects = out.object_feats.slice_mut(s![frame, .., ..]).into_iter();
        for v in image.chain(objects) {
            if rng.random_bool(fraction) {
                *v = if rng.random_bool(0.5) { magnitude } else { -magnitude };
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Corruption {
    Gaussian { sigma: f64 },
    Impulse { fraction: f64, magnitude: f64 },
}

impl Corruption {
    pub fn apply(&self, seq: &FeatureSequence, seed: u64) -> Result<FeatureSequence> {
        match *self {
            Corruption::Gaussian { sigma } => inject_gaussian(seq, sigma, seed),
            Corruption::Impulse { fraction, magnitude } => inject_impulse(seq, fraction, magnitude, seed),
        }
    }

    /// Parses `gaussian:<sigma>` or `impulse:<fraction>[:<magnitude>]`.
    pub fn parse(spec: &str) -> Result<Self> {
        let parts: Vec<&str> = spec.split(':').collect();
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::Config(format!("invalid number {s:?} in noise spec {spec:?}")))
        };
        match parts.as_slice() {
            ["gaussian", sigma] => Ok(Corruption::Gaussian { sigma: num(sigma)? }),
            ["impulse", fraction] => Ok(Corruption::Impulse {
                fraction: num(fraction)?,
                magnitude: DEFAULT_IMPULSE_MAGNITUDE,
            }),
            ["impulse", fraction, magnitude] => Ok(Corruption::Impulse {
                fraction: num(fraction)?,
                magnitude: num(magnitude)?,
            }),
            _ => Err(Error::Config(format!(
                "noise spec {spec:?} must be gaussian:<sigma> or impulse:<fraction>[:<magnitude>]"
            ))),
        }
    }
}

/// Applies `corruption` to every sequence, seeding each from `(seed, index)`.
pub fn corrupt_dataset(dataset: &Dataset, corruption: Corruption, seed: u64) -> Result<Dataset> {
    let samples = dataset
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let sub_seed = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64);
            Ok(Sample {
                sequence: corruption.apply(&s.sequence, sub_seed)?,
                label: s.label,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        samples,
        ..dataset.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::average_precision;

    fn small() -> GenConfig {
        GenConfig {
            n_pos: 3,
            n_neg: 3,
            frames: 12,
            d_img: 4,
            d_obj: 3,
            max_objects: 3,
            cue_dims: 2,
            ramp_start: 6,
            accident_min: 8,
            accident_max: 11,
            ..GenConfig::dad_like()
        }
    }

    #[test]
    fn negatives_only() {
        let d = gen_synthetic(
            &GenConfig {
                n_pos: 0,
                n_neg: 5,
                ..small()
            },
            1,
        )
        .unwrap();
        assert_eq!(d.len(), 5);
        assert!(d
            .samples
            .iter()
            .all(|s| !s.label.positive && s.label.accident_frame == 0));
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(
            gen_synthetic(&small(), 42).unwrap(),
            gen_synthetic(&small(), 42).unwrap()
        );
        assert_ne!(
            gen_synthetic(&small(), 42).unwrap(),
            gen_synthetic(&small(), 43).unwrap()
        );
    }

    #[test]
    fn invalid_configs() {
        assert!(gen_synthetic(
            &GenConfig {
                n_pos: 0,
                n_neg: 0,
                ..small()
            },
            0
        )
        .is_err());
        assert!(gen_synthetic(
            &GenConfig {
                ramp_start: 12,
                ..small()
            },
            0
        )
        .is_err());
        assert!(gen_synthetic(&GenConfig { d_img: 0, ..small() }, 0).is_err());
    }

    /// Linear score on the planted subspace: the cue direction is estimated
    /// from one half of the positives, the other half is scored by the peak
    /// 5-frame moving average of the projection relative to the first frames.
    #[test]
    fn planted_cue_is_linearly_separable() {
        let cfg = GenConfig {
            n_pos: 50,
            n_neg: 50,
            ..GenConfig::dad_like()
        };
        let fit = gen_synthetic(
            &GenConfig {
                n_pos: 50,
                n_neg: 0,
                ..cfg.clone()
            },
            9,
        )
        .unwrap();
        let d = gen_synthetic(&cfg, 9).unwrap();
        let c = cfg.cue_dims;
        let mut dir = Array1::<f64>::zeros(c);
        for s in &fit.samples {
            let img = &s.sequence.image_feats;
            let tau = s.label.accident_frame;
            for j in 0..c {
                dir[j] += img[[tau - 1, j]] - img[[0, j]];
            }
        }
        dir /= dir.dot(&dir).sqrt();
        let scores: Vec<f64> = d
            .samples
            .iter()
            .map(|s| {
                let proj: Vec<f64> = (0..s.sequence.frames())
                    .map(|t| (0..c).map(|j| s.sequence.image_feats[[t, j]] * dir[j]).sum())
                    .collect();
                let base = proj[..5].iter().sum::<f64>() / 5.0;
                proj.windows(5)
                    .map(|w| w.iter().sum::<f64>() / 5.0 - base)
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        let labels: Vec<bool> = d.samples.iter().map(|s| s.label.positive).collect();
        let ap = average_precision(&scores, &labels).unwrap();
        assert!(ap >= 0.95, "AP {ap}");
    }

    #[test]
    fn round_trip_is_exact() {
        let d = gen_synthetic(&small(), 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.json");
        save(&d, &p).unwrap();
        assert_eq!(load(&p).unwrap(), d);
    }

    #[test]
    fn truncated_file_is_a_parse_error() {
        let d = gen_synthetic(&small(), 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.json");
        save(&d, &p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        fs::write(&p, &text[..text.len() / 2]).unwrap();
        assert!(matches!(load(&p), Err(Error::Parse { .. })));
    }

    #[test]
    fn mismatched_width_names_the_sequence() {
        let d = gen_synthetic(&small(), 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.json");
        save(&d, &p).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&p).unwrap()).unwrap();
        v["sequences"][2]["image_feats"][0]
            .as_array_mut()
            .unwrap()
            .push(0.5.into());
        fs::write(&p, v.to_string()).unwrap();
        match load(&p) {
            Err(Error::Parse { message, .. }) => assert!(message.contains("sequence 2"), "{message}"),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn wrong_version_is_rejected() {
        let d = gen_synthetic(&small(), 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.json");
        save(&d, &p).unwrap();
        let text = fs::read_to_string(&p)
            .unwrap()
            .replacen("\"version\":\"1\"", "\"version\":\"9\"", 1);
        fs::write(&p, text).unwrap();
        assert!(load(&p).is_err());
    }

    #[test]
    fn gaussian_identity_and_extremes() {
        let d = gen_synthetic(&small(), 5).unwrap();
        let seq = &d.samples[0].sequence;
        assert_eq!(&inject_gaussian(seq, 0.0, 1).unwrap(), seq);
        let loud = inject_gaussian(seq, 20.0, 1).unwrap();
        assert!(loud
            .image_feats
            .iter()
            .chain(loud.object_feats.iter())
            .all(|v| v.is_finite()));
        assert_eq!(loud.object_mask, seq.object_mask);
        assert!(inject_gaussian(seq, -1.0, 1).is_err());
    }

    #[test]
    fn gaussian_std_matches_sigma() {
        let seq = FeatureSequence {
            fps: 10.0,
            image_feats: Array2::zeros((100, 50)),
            object_feats: Array3::zeros((100, 1, 50)),
            object_mask: Array2::from_elem((100, 1), true),
        };
        let out = inject_gaussian(&seq, 5.0, 3).unwrap();
        let diffs: Vec<f64> = out.image_feats.iter().copied().collect();
        let n = diffs.len() as f64;
        let mean = diffs.iter().sum::<f64>() / n;
        let std = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let se = 5.0 / (2.0 * (n - 1.0)).sqrt();
        assert!((std - 5.0).abs() < 3.0 * se, "std {std}");
    }

    #[test]
    fn impulse_counts_follow_binomial() {
        let seq = FeatureSequence {
            fps: 10.0,
            image_feats: Array2::zeros((100, 50)),
            object_feats: Array3::zeros((100, 1, 50)),
            object_mask: Array2::from_elem((100, 1), true),
        };
        let out = inject_impulse(&seq, 0.2, 3.0, 4).unwrap();
        let replaced = out
            .image_feats
            .iter()
            .chain(out.object_feats.iter())
            .filter(|&&v| v != 0.0)
            .count() as f64;
        let sd = (1e4f64 * 0.2 * 0.8).sqrt();
        assert!((replaced - 2000.0).abs() < 3.0 * sd, "{replaced}");
        assert!(out.image_feats.iter().all(|&v| v == 0.0 || v.abs() == 3.0));

        let all = inject_impulse(&seq, 1.0, 3.0, 4).unwrap();
        assert!(all
            .image_feats
            .iter()
            .chain(all.object_feats.iter())
            .all(|v| v.abs() == 3.0));
        assert_eq!(inject_impulse(&seq, 0.0, 3.0, 4).unwrap(), seq);
        assert!(inject_impulse(&seq, 1.5, 3.0, 4).is_err());
    }

    #[test]
    fn corruption_spec_parsing() {
        assert_eq!(
            Corruption::parse("gaussian:5.0").unwrap(),
            Corruption::Gaussian { sigma: 5.0 }
        );
        assert_eq!(
            Corruption::parse("impulse:0.2").unwrap(),
            Corruption::Impulse {
                fraction: 0.2,
                magnitude: DEFAULT_IMPULSE_MAGNITUDE
            }
        );
        assert!(Corruption::parse("blur:1").is_err());
    }

    #[test]
    fn empty_frames_rejected_by_default() {
        let mut d = gen_synthetic(&small(), 5).unwrap();
        d.samples[1].sequence.object_mask.row_mut(3).fill(false);
        match d.validate() {
            Err(e) => assert!(e.to_string().contains("frame 3"), "{e}"),
            Ok(()) => panic!("empty frame accepted"),
        }
        d.allow_empty_frames = true;
        assert!(d.validate().is_ok());
    }
}
