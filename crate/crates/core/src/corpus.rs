//! Synthetic two-accent corpus generation, the frame stack-and-decimate
//! pipeline, and dataset serialization.
//!
//! Each accent draws phone frames from shared prototypes; a configured
//! fraction of the prototypes is shifted for the UK accent, so the two
//! accents overlap except on the shifted phones.

use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ctc::LabelSequence;
use crate::error::{Error, Result};
use crate::model::Accent;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"AAMDSET1";
const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Utterance {
    pub id: String,
    pub accent: Accent,
    /// Raw T×F feature matrix (before stacking).
    pub features: Tensor,
    pub labels: LabelSequence,
}

#[derive(Clone, Debug)]
pub struct Corpus {
    pub feature_dim: usize,
    pub phones_us: usize,
    pub phones_uk: usize,
    pub utterances: Vec<Utterance>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    /// Phone inventory size, same for both accents; heads still use
    /// disjoint index spaces.
    pub num_phones: usize,
    /// Raw feature dimension before stacking.
    pub feature_dim: usize,
    pub frames_per_phone: (usize, usize),
    pub phones_per_utterance: (usize, usize),
    /// Standard deviation of prototype components.
    pub prototype_scale: f64,
    /// Accent shift magnitude in units of the prototype scale.
    pub accent_shift: f64,
    /// Fraction of phones whose UK prototype is shifted.
    pub shifted_fraction: f64,
    pub noise_sigma: f64,
    pub utterances_per_accent: usize,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            num_phones: 12,
            feature_dim: 40,
            frames_per_phone: (2, 5),
            phones_per_utterance: (3, 12),
            prototype_scale: 1.0,
            accent_shift: 1.5,
            shifted_fraction: 0.4,
            noise_sigma: 0.2,
            utterances_per_accent: 400,
            seed: 1234,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_phones == 0 || self.feature_dim == 0 || self.utterances_per_accent == 0 {
            return Err(Error::Config("counts and dimensions must be >= 1".into()));
        }
        let (flo, fhi) = self.frames_per_phone;
        let (plo, phi) = self.phones_per_utterance;
        if flo < 2 || flo > fhi || plo < 1 || plo > phi {
            return Err(Error::Config(format!(
                "empty or infeasible ranges: frames {:?}, phones {:?}",
                self.frames_per_phone, self.phones_per_utterance
            )));
        }
        if self.noise_sigma <= 0.0 {
            return Err(Error::Config("noise sigma must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.shifted_fraction) || self.shifted_fraction == 0.0 {
            return Err(Error::Config("shifted fraction must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

fn gaussian(rng: &mut impl Rng) -> f64 {
    // Box-Muller; two uniforms per draw keeps the stream simple and
    // reproducible.
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// The per-phone emission prototypes for both accents, as drawn by
/// [`generate_corpus`] for the same config (US first, UK second). The first
/// `round(num_phones * shifted_fraction)` UK prototypes carry the accent
/// offset; the rest are shared.
pub fn accent_prototypes(config: &GeneratorConfig) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    draw_prototypes(config, &mut rng)
}

fn draw_prototypes(
    config: &GeneratorConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let dim = config.feature_dim;

    // Shared unit-scale prototypes (random directions normalized to the
    // prototype scale); a fixed subset gets an accent offset for UK.
    let mut prototypes = Vec::with_capacity(config.num_phones);
    for _ in 0..config.num_phones {
        let mut p: Vec<f64> = (0..dim).map(|_| gaussian(rng)).collect();
        let norm = p.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        p.iter_mut().for_each(|x| *x *= config.prototype_scale / norm);
        prototypes.push(p);
    }
    let shifted_count =
        ((config.num_phones as f64 * config.shifted_fraction).round() as usize).max(1);
    let mut uk_prototypes = prototypes.clone();
    for proto in uk_prototypes.iter_mut().take(shifted_count) {
        // The offset direction is drawn in the full feature space, so accent
        // variation overlaps the phone-discriminating directions: the trunk
        // has to represent the shifted cluster positions to decode the
        // shifted accent, which is what lets a branch read accent back out.
        let dir: Vec<f64> = (0..dim).map(|_| gaussian(rng)).collect();
        let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        let scale = config.accent_shift * config.prototype_scale / norm;
        for (p, d) in proto.iter_mut().zip(&dir) {
            *p += scale * d;
        }
    }
    Ok((prototypes, uk_prototypes))
}

/// Deterministic synthetic corpus. Label sequences are CTC-feasible for
/// their stacked frame counts by construction: duplicate-adjacent phones
/// are given at least four raw frames, so T_stacked >= L + duplicates.
pub fn generate_corpus(config: &GeneratorConfig) -> Result<Corpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let dim = config.feature_dim;
    let (prototypes, uk_prototypes) = draw_prototypes(config, &mut rng)?;
    let shifted_count =
        ((config.num_phones as f64 * config.shifted_fraction).round() as usize).max(1);

    let (plo, phi) = config.phones_per_utterance;
    let (flo, fhi) = config.frames_per_phone;
    let mut utterances = Vec::with_capacity(2 * config.utterances_per_accent);
    for accent in [Accent::Us, Accent::Uk] {
        let protos = match accent {
            Accent::Us => &prototypes,
            Accent::Uk => &uk_prototypes,
        };
        for n in 0..config.utterances_per_accent {
            let len = rng.gen_range(plo..=phi);
            // Sequences are drawn conditioned on containing at least one
            // shift-eligible phone, for both accents alike so the label
            // distributions stay accent-symmetric. Without this a short
            // utterance can consist entirely of shared phones and carry no
            // accent evidence at all.
            let labels: LabelSequence = loop {
                let candidate: LabelSequence =
                    (0..len).map(|_| rng.gen_range(1..=config.num_phones)).collect();
                if candidate.iter().any(|&p| p <= shifted_count) {
                    break candidate;
                }
            };
            let mut rows: Vec<f64> = Vec::new();
            let mut frames = 0usize;
            for (i, &phone) in labels.iter().enumerate() {
                let mut count = rng.gen_range(flo..=fhi);
                if i > 0 && labels[i - 1] == phone {
                    count = count.max(4);
                }
                let proto = &protos[phone - 1];
                for _ in 0..count {
                    rows.extend(proto.iter().map(|&p| p + gaussian(&mut rng) * config.noise_sigma));
                    frames += 1;
                }
            }
            let mut features = Tensor::from_vec(frames, dim, rows)?;
            // Per-utterance mean subtraction (cepstral-mean analogue).
            for d in 0..dim {
                let mean: f64 =
                    (0..frames).map(|t| features.at(t, d)).sum::<f64>() / frames as f64;
                for t in 0..frames {
                    *features.at_mut(t, d) -= mean;
                }
            }
            utterances.push(Utterance {
                id: format!("{}-{n:04}", accent.name().to_lowercase()),
                accent,
                features,
                labels,
            });
        }
    }
    Ok(Corpus {
        feature_dim: dim,
        phones_us: config.num_phones,
        phones_uk: config.num_phones,
        utterances,
    })
}

/// Stack neighboring frames and keep every alternate one: T×F becomes
/// ⌈T/2⌉×2F. An odd final frame is paired with a repeat of itself.
pub fn stack_and_decimate(raw: &Tensor) -> Result<Tensor> {
    let frames = raw.rows();
    if frames == 0 {
        return Err(Error::InvalidInput("stack_and_decimate of empty sequence".into()));
    }
    let dim = raw.cols();
    let out_frames = frames.div_ceil(2);
    let mut data = Vec::with_capacity(out_frames * 2 * dim);
    for k in 0..out_frames {
        data.extend_from_slice(raw.row(2 * k));
        let second = if 2 * k + 1 < frames { 2 * k + 1 } else { 2 * k };
        data.extend_from_slice(raw.row(second));
    }
    Tensor::from_vec(out_frames, 2 * dim, data)
}

pub fn write_dataset(corpus: &Corpus, path: &Path) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.write_all(MAGIC)?;
    buf.write_u32::<LittleEndian>(FORMAT_VERSION)?;
    buf.write_u32::<LittleEndian>(corpus.feature_dim as u32)?;
    buf.write_u32::<LittleEndian>(corpus.phones_us as u32)?;
    buf.write_u32::<LittleEndian>(corpus.phones_uk as u32)?;
    buf.write_u64::<LittleEndian>(corpus.utterances.len() as u64)?;
    for utt in &corpus.utterances {
        buf.write_u32::<LittleEndian>(utt.id.len() as u32)?;
        buf.write_all(utt.id.as_bytes())?;
        buf.write_u8(match utt.accent {
            Accent::Us => 1,
            Accent::Uk => 0,
        })?;
        buf.write_u32::<LittleEndian>(utt.features.rows() as u32)?;
        buf.write_u32::<LittleEndian>(utt.labels.len() as u32)?;
        for &l in &utt.labels {
            buf.write_u32::<LittleEndian>(l as u32)?;
        }
        for &v in utt.features.data() {
            buf.write_f64::<LittleEndian>(v)?;
        }
    }
    std::fs::write(path, buf)?;
    Ok(())
}

fn parse_err(cursor: &Cursor<Vec<u8>>, message: impl Into<String>) -> Error {
    Error::Parse {
        offset: cursor.position(),
        message: message.into(),
    }
}

macro_rules! read_or {
    ($cursor:expr, $method:ident, $what:expr) => {
        match $cursor.$method::<LittleEndian>() {
            Ok(v) => v,
            Err(_) => return Err(parse_err($cursor, concat!("truncated ", $what))),
        }
    };
}

pub fn read_dataset(path: &Path) -> Result<Corpus> {
    let bytes = std::fs::read(path)?;
    let mut cursor = Cursor::new(bytes);
    let mut magic = [0u8; 8];
    if cursor.read_exact(&mut magic).is_err() || &magic != MAGIC {
        return Err(parse_err(&cursor, "bad magic"));
    }
    let version = read_or!(&mut cursor, read_u32, "version");
    if version != FORMAT_VERSION {
        return Err(parse_err(&cursor, format!("unsupported version {version}")));
    }
    let feature_dim = read_or!(&mut cursor, read_u32, "feature dim") as usize;
    let phones_us = read_or!(&mut cursor, read_u32, "US inventory") as usize;
    let phones_uk = read_or!(&mut cursor, read_u32, "UK inventory") as usize;
    let count = read_or!(&mut cursor, read_u64, "record count") as usize;
    let mut utterances = Vec::with_capacity(count);
    for _ in 0..count {
        let id_len = read_or!(&mut cursor, read_u32, "id length") as usize;
        let mut id_bytes = vec![0u8; id_len];
        if cursor.read_exact(&mut id_bytes).is_err() {
            return Err(parse_err(&cursor, "truncated id"));
        }
        let id = String::from_utf8(id_bytes)
            .map_err(|_| parse_err(&cursor, "id is not valid UTF-8"))?;
        let accent = match cursor.read_u8() {
            Ok(1) => Accent::Us,
            Ok(0) => Accent::Uk,
            Ok(b) => return Err(parse_err(&cursor, format!("bad accent byte {b}"))),
            Err(_) => return Err(parse_err(&cursor, "truncated accent byte")),
        };
        let frames = read_or!(&mut cursor, read_u32, "frame count") as usize;
        let label_len = read_or!(&mut cursor, read_u32, "label count") as usize;
        let mut labels = Vec::with_capacity(label_len);
        for _ in 0..label_len {
            labels.push(read_or!(&mut cursor, read_u32, "label") as usize);
        }
        let mut values = vec![0.0f64; frames * feature_dim];
        for v in values.iter_mut() {
            *v = read_or!(&mut cursor, read_f64, "feature value");
        }
        let features = Tensor::from_vec(frames, feature_dim, values)?;
        utterances.push(Utterance {
            id,
            accent,
            features,
            labels,
        });
    }
    Ok(Corpus {
        feature_dim,
        phones_us,
        phones_uk,
        utterances,
    })
}
