//! Motor babbling, normalization, downsampling and dataset persistence.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

use crate::arm_scene::{JointVector, SceneConfig, SceneError};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("motor component {index} = {value} outside [-1, 1]")]
    MotorOutOfRange { index: usize, value: f64 },
    #[error("sensory component {index} = {value} outside [0, 1]")]
    SensoryOutOfRange { index: usize, value: f64 },
    #[error("sensory data length {got} does not match dims {h}x{w}x3")]
    SensoryLength { h: usize, w: usize, got: usize },
    #[error("joint range {index} has zero or negative width")]
    DegenerateRange { index: usize },
    #[error("joint angle {index} = {value} outside its range [{lo}, {hi}]")]
    AngleOutOfRange {
        index: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("downsample factor {factor} does not divide dims {h}x{w}")]
    IndivisibleDims {
        h: usize,
        w: usize,
        factor: usize,
    },
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("malformed dataset header (bad magic)")]
    MalformedHeader,
    #[error("unsupported dataset version {0}")]
    VersionMismatch(u32),
    #[error("truncated dataset payload")]
    Truncated,
    #[error("trailing bytes after dataset payload")]
    TrailingData,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Normalized joint configuration, every component in [-1, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct MotorState {
    pub values: Vec<f64>,
}

impl MotorState {
    pub fn new(values: Vec<f64>) -> Result<Self, DatasetError> {
        for (index, &value) in values.iter().enumerate() {
            if !(-1.0..=1.0).contains(&value) {
                return Err(DatasetError::MotorOutOfRange { index, value });
            }
        }
        Ok(Self { values })
    }
}

/// An H x W RGB image with components in [0, 1], stored row-major with
/// interleaved channels.
#[derive(Clone, Debug, PartialEq)]
pub struct SensoryState {
    pub h: usize,
    pub w: usize,
    pub values: Vec<f64>,
}

impl SensoryState {
    pub fn new(h: usize, w: usize, values: Vec<f64>) -> Result<Self, DatasetError> {
        if values.len() != 3 * h * w {
            return Err(DatasetError::SensoryLength {
                h,
                w,
                got: values.len(),
            });
        }
        for (index, &value) in values.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(DatasetError::SensoryOutOfRange { index, value });
            }
        }
        Ok(Self { h, w, values })
    }

    pub fn component_count(&self) -> usize {
        self.values.len()
    }
}

/// One training sample. The ground-truth mask is evaluation-only metadata;
/// training never sees it.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetRecord {
    pub motor: MotorState,
    pub sensory: SensoryState,
    pub gt_mask: Vec<bool>,
}

/// Uniform i.i.d. joint configurations, deterministic per seed.
pub fn sample_motor_babble(
    count: usize,
    ranges: &[(f64, f64)],
    seed: u64,
) -> Result<Vec<JointVector>, DatasetError> {
    for (index, &(lo, hi)) in ranges.iter().enumerate() {
        if lo > hi {
            return Err(DatasetError::DegenerateRange { index });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| JointVector {
            angles: ranges
                .iter()
                .map(|&(lo, hi)| if hi > lo { rng.gen_range(lo..hi) } else { lo })
                .collect(),
        })
        .collect())
}

/// Affine map sending each joint range [lo, hi] onto [-1, 1].
pub fn normalize_motor(
    joints: &JointVector,
    ranges: &[(f64, f64)],
) -> Result<MotorState, DatasetError> {
    debug_assert_eq!(joints.angles.len(), ranges.len());
    let mut values = Vec::with_capacity(joints.angles.len());
    for (index, (&value, &(lo, hi))) in joints.angles.iter().zip(ranges).enumerate() {
        if hi <= lo {
            return Err(DatasetError::DegenerateRange { index });
        }
        if value < lo || value > hi {
            return Err(DatasetError::AngleOutOfRange {
                index,
                value,
                lo,
                hi,
            });
        }
        values.push(2.0 * (value - lo) / (hi - lo) - 1.0);
    }
    MotorState::new(values)
}

/// Inverse of [`normalize_motor`].
pub fn denormalize_motor(
    motor: &MotorState,
    ranges: &[(f64, f64)],
) -> Result<JointVector, DatasetError> {
    let mut angles = Vec::with_capacity(motor.values.len());
    for (index, (&value, &(lo, hi))) in motor.values.iter().zip(ranges).enumerate() {
        if hi <= lo {
            return Err(DatasetError::DegenerateRange { index });
        }
        angles.push(lo + (value + 1.0) * 0.5 * (hi - lo));
    }
    Ok(JointVector { angles })
}

/// Box-filter downsampling: each output component is the mean of its f x f
/// input block, per channel.
pub fn downsample(image: &SensoryState, factor: usize) -> Result<SensoryState, DatasetError> {
    if factor == 0 || image.h % factor != 0 || image.w % factor != 0 {
        return Err(DatasetError::IndivisibleDims {
            h: image.h,
            w: image.w,
            factor,
        });
    }
    if factor == 1 {
        return Ok(image.clone());
    }
    let (oh, ow) = (image.h / factor, image.w / factor);
    let norm = 1.0 / (factor * factor) as f64;
    let mut out = vec![0.0; 3 * oh * ow];
    for oy in 0..oh {
        for ox in 0..ow {
            for c in 0..3 {
                let mut acc = 0.0;
                for dy in 0..factor {
                    for dx in 0..factor {
                        acc += image.values[((oy * factor + dy) * image.w + ox * factor + dx) * 3
                            + c];
                    }
                }
                out[(oy * ow + ox) * 3 + c] = acc * norm;
            }
        }
    }
    SensoryState::new(oh, ow, out)
}

/// Mask downsampling by logical OR: any covered input component covers the
/// output component, so the ground-truth body is never under-counted.
pub fn downsample_mask(
    mask: &[bool],
    h: usize,
    w: usize,
    factor: usize,
) -> Result<Vec<bool>, DatasetError> {
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(DatasetError::IndivisibleDims { h, w, factor });
    }
    let (oh, ow) = (h / factor, w / factor);
    let mut out = vec![false; 3 * oh * ow];
    for oy in 0..oh {
        for ox in 0..ow {
            for c in 0..3 {
                let mut any = false;
                'block: for dy in 0..factor {
                    for dx in 0..factor {
                        if mask[((oy * factor + dy) * w + ox * factor + dx) * 3 + c] {
                            any = true;
                            break 'block;
                        }
                    }
                }
                out[(oy * ow + ox) * 3 + c] = any;
            }
        }
    }
    Ok(out)
}

/// Renders `n` records: babbled pose, fresh-seed background, composition,
/// box/OR downsampling, motor normalization. Each record derives from an
/// independent seed stream, so generation parallelizes without changing the
/// result.
pub fn generate_dataset(
    n: usize,
    scene: &SceneConfig,
    factor: usize,
    seed: u64,
) -> Result<Vec<DatasetRecord>, DatasetError> {
    scene.validate()?;
    if factor == 0 || scene.canvas.0 % factor != 0 || scene.canvas.1 % factor != 0 {
        return Err(DatasetError::IndivisibleDims {
            h: scene.canvas.0,
            w: scene.canvas.1,
            factor,
        });
    }
    let mut seed_rng = ChaCha8Rng::seed_from_u64(seed);
    let seeds: Vec<(u64, u64)> = (0..n).map(|_| (seed_rng.gen(), seed_rng.gen())).collect();

    seeds
        .into_par_iter()
        .map(|(pose_seed, bg_seed)| {
            let pose = sample_motor_babble(1, &scene.joint_ranges, pose_seed)?
                .pop()
                .expect("one babble sample");
            let scene_out = scene.render(pose, bg_seed)?;
            let sensory = downsample(&scene_out.image, factor)?;
            let gt_mask = downsample_mask(
                &scene_out.body_mask,
                scene_out.image.h,
                scene_out.image.w,
                factor,
            )?;
            let motor = normalize_motor(&scene_out.joint_vector, &scene.joint_ranges)?;
            Ok(DatasetRecord {
                motor,
                sensory,
                gt_mask,
            })
        })
        .collect()
}

const MAGIC: &[u8; 4] = b"SMBI";
const VERSION: u32 = 1;

/// Writes records little-endian: magic, version, n, H, W, N_m, then per
/// record the motor (f32), the image (f32) and the mask as packed bits
/// (LSB-first within each byte, component order matching the image).
pub fn write_dataset<W: Write>(mut w: W, records: &[DatasetRecord]) -> Result<(), DatasetError> {
    let (h, wd, nm) = match records.first() {
        Some(r) => (r.sensory.h, r.sensory.w, r.motor.values.len()),
        None => (0, 0, 0),
    };
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for v in [records.len() as u32, h as u32, wd as u32, nm as u32] {
        w.write_all(&v.to_le_bytes())?;
    }
    for r in records {
        for &m in &r.motor.values {
            w.write_all(&(m as f32).to_le_bytes())?;
        }
        for &s in &r.sensory.values {
            w.write_all(&(s as f32).to_le_bytes())?;
        }
        let mut packed = vec![0u8; r.gt_mask.len().div_ceil(8)];
        for (i, &bit) in r.gt_mask.iter().enumerate() {
            if bit {
                packed[i / 8] |= 1 << (i % 8);
            }
        }
        w.write_all(&packed)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset<R: Read>(mut r: R) -> Result<Vec<DatasetRecord>, DatasetError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut cur = 0usize;

    fn need<'a>(bytes: &'a [u8], cur: &mut usize, n: usize) -> Result<&'a [u8], DatasetError> {
        if *cur + n > bytes.len() {
            return Err(DatasetError::Truncated);
        }
        let s = &bytes[*cur..*cur + n];
        *cur += n;
        Ok(s)
    }
    fn read_u32(bytes: &[u8], cur: &mut usize) -> Result<u32, DatasetError> {
        Ok(u32::from_le_bytes(need(bytes, cur, 4)?.try_into().unwrap()))
    }

    if need(&bytes, &mut cur, 4).map_err(|_| DatasetError::MalformedHeader)? != &MAGIC[..] {
        return Err(DatasetError::MalformedHeader);
    }
    let version = read_u32(&bytes, &mut cur)?;
    if version != VERSION {
        return Err(DatasetError::VersionMismatch(version));
    }
    let n = read_u32(&bytes, &mut cur)? as usize;
    let h = read_u32(&bytes, &mut cur)? as usize;
    let w = read_u32(&bytes, &mut cur)? as usize;
    let nm = read_u32(&bytes, &mut cur)? as usize;

    let mut records = Vec::with_capacity(n);
    for _ in 0..n {
        let motor_bytes = need(&bytes, &mut cur, 4 * nm)?;
        let motor = MotorState::new(
            motor_bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
        )?;
        let image_bytes = need(&bytes, &mut cur, 4 * 3 * h * w)?;
        let sensory = SensoryState::new(
            h,
            w,
            image_bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
        )?;
        let mask_bytes = need(&bytes, &mut cur, (3 * h * w).div_ceil(8))?;
        let gt_mask = (0..3 * h * w)
            .map(|i| mask_bytes[i / 8] & (1 << (i % 8)) != 0)
            .collect();
        records.push(DatasetRecord {
            motor,
            sensory,
            gt_mask,
        });
    }
    if cur != bytes.len() {
        return Err(DatasetError::TrailingData);
    }
    Ok(records)
}

pub fn save_dataset(records: &[DatasetRecord], path: &Path) -> Result<(), DatasetError> {
    write_dataset(BufWriter::new(File::create(path)?), records)
}

pub fn load_dataset(path: &Path) -> Result<Vec<DatasetRecord>, DatasetError> {
    read_dataset(BufReader::new(File::open(path)?))
}
