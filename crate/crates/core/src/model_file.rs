//! Binary on-disk format for trained models.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic          4 bytes,  "TGRK"
//! version        u32
//! flags          u8        bit 0: group emissions present
//!                          bit 1: planted per-image topic assignments follow
//! config         topics u32, use_groups u8, max_iters u32, rel_tol f64,
//!                seed u64, prob_floor f64, threads u32
//! tag table      count u32, then per entry: byte length u32 + UTF-8 bytes
//! group table    same encoding
//! user table     same encoding
//! tag emissions  tags x topics f64, row-major
//! group matrix   groups x topics f64, only when flag bit 0 is set
//! user mixtures  topics x users f64
//! user prior     users f64
//! assignments    only when flag bit 1 is set: count u32, then per image:
//!                id string, tag-slot topic list (count u32 + u32 each),
//!                group-slot topic list (same)
//! ```
//!
//! Floats round-trip bitwise, so saving and reloading a model reproduces it
//! exactly. Readers reject wrong magic, unsupported versions, truncation,
//! trailing bytes, and any payload that fails model validation.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};

use crate::corpus::{DenseIndex, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, TopicModel};
use crate::synth::ImageAssignments;

/// First four bytes of every model file.
pub const MAGIC: [u8; 4] = *b"TGRK";
/// The only format version this build writes and reads.
pub const FORMAT_VERSION: u32 = 1;

const FLAG_GROUPS: u8 = 1 << 0;
const FLAG_PLANTED: u8 = 1 << 1;

/// Serialize a model without planted assignments.
pub fn model_to_bytes(model: &TopicModel) -> Vec<u8> {
    encode(model, None)
}

/// Serialize a model together with the per-image topic assignments that
/// generated its corpus.
pub fn planted_to_bytes(model: &TopicModel, assignments: &[ImageAssignments]) -> Vec<u8> {
    encode(model, Some(assignments))
}

/// Deserialize a model; `origin` labels errors (a path, or "<memory>").
/// Planted assignments, if present, are parsed and discarded.
pub fn model_from_bytes(bytes: &[u8], origin: &str) -> Result<TopicModel> {
    decode(bytes, origin).map(|(model, _)| model)
}

/// Deserialize a model that must carry planted assignments.
pub fn planted_from_bytes(bytes: &[u8], origin: &str) -> Result<(TopicModel, Vec<ImageAssignments>)> {
    let (model, assignments) = decode(bytes, origin)?;
    match assignments {
        Some(assignments) => Ok((model, assignments)),
        None => Err(file_error(origin, "file carries no planted assignments")),
    }
}

/// Write a model file. The write is not atomic; callers that need
/// crash-safety should write to a temporary file and rename.
pub fn save_model(model: &TopicModel, path: &Path) -> Result<()> {
    fs::write(path, model_to_bytes(model)).map_err(|e| Error::io(path, e))
}

/// Write a model file with planted assignments.
pub fn save_planted(model: &TopicModel, assignments: &[ImageAssignments], path: &Path) -> Result<()> {
    fs::write(path, planted_to_bytes(model, assignments)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<TopicModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    model_from_bytes(&bytes, &path.display().to_string())
}

pub fn load_planted(path: &Path) -> Result<(TopicModel, Vec<ImageAssignments>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    planted_from_bytes(&bytes, &path.display().to_string())
}

fn file_error(origin: &str, message: impl Into<String>) -> Error {
    Error::ModelFile {
        path: PathBuf::from(origin),
        message: message.into(),
    }
}

fn encode(model: &TopicModel, assignments: Option<&[ImageAssignments]>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());

    let mut flags = 0u8;
    if model.group_emissions().is_some() {
        flags |= FLAG_GROUPS;
    }
    if assignments.is_some() {
        flags |= FLAG_PLANTED;
    }
    out.push(flags);

    let config = model.config();
    out.extend_from_slice(&(config.topics as u32).to_le_bytes());
    out.push(config.use_groups as u8);
    out.extend_from_slice(&(config.max_iters as u32).to_le_bytes());
    out.extend_from_slice(&config.rel_tol.to_le_bytes());
    out.extend_from_slice(&config.seed.to_le_bytes());
    out.extend_from_slice(&config.prob_floor.to_le_bytes());
    out.extend_from_slice(&(config.threads as u32).to_le_bytes());

    let vocab = model.vocab();
    write_table(&mut out, &vocab.tags);
    write_table(&mut out, &vocab.groups);
    write_table(&mut out, &vocab.users);

    write_matrix(&mut out, model.tag_emissions().as_standard_layout().as_slice().unwrap());
    if let Some(groups) = model.group_emissions() {
        write_matrix(&mut out, groups.as_standard_layout().as_slice().unwrap());
    }
    write_matrix(&mut out, model.user_mixtures().as_standard_layout().as_slice().unwrap());
    write_matrix(&mut out, model.user_prior().as_standard_layout().as_slice().unwrap());

    if let Some(assignments) = assignments {
        out.extend_from_slice(&(assignments.len() as u32).to_le_bytes());
        for image in assignments {
            write_string(&mut out, &image.image_id);
            out.extend_from_slice(&(image.tag_topics.len() as u32).to_le_bytes());
            for &z in &image.tag_topics {
                out.extend_from_slice(&(z as u32).to_le_bytes());
            }
            out.extend_from_slice(&(image.group_topics.len() as u32).to_le_bytes());
            for &z in &image.group_topics {
                out.extend_from_slice(&(z as u32).to_le_bytes());
            }
        }
    }
    out
}

fn write_string(out: &mut Vec<u8>, value: &str) {
    out.extend_from_slice(&(value.len() as u32).to_le_bytes());
    out.extend_from_slice(value.as_bytes());
}

fn write_table(out: &mut Vec<u8>, table: &DenseIndex) {
    out.extend_from_slice(&(table.len() as u32).to_le_bytes());
    for value in table.iter() {
        write_string(out, value);
    }
}

fn write_matrix(out: &mut Vec<u8>, values: &[f64]) {
    for value in values {
        out.extend_from_slice(&value.to_le_bytes());
    }
}

/// Checked reader over the raw bytes.
struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a str,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&end| end <= self.bytes.len())
            .ok_or_else(|| {
                file_error(
                    self.origin,
                    format!("truncated: wanted {n} bytes at offset {}", self.pos),
                )
            })?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn read_u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn read_u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn read_u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn read_f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn read_string(&mut self) -> Result<String> {
        let len = self.read_u32()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| file_error(self.origin, "string is not valid UTF-8"))
    }

    fn read_table(&mut self) -> Result<DenseIndex> {
        let count = self.read_u32()? as usize;
        let mut table = DenseIndex::default();
        for _ in 0..count {
            let value = self.read_string()?;
            if table.index_of(&value).is_some() {
                return Err(file_error(
                    self.origin,
                    format!("duplicate vocabulary entry {value:?}"),
                ));
            }
            table.insert(&value);
        }
        Ok(table)
    }

    fn read_floats(&mut self, count: usize) -> Result<Vec<f64>> {
        let mut values = Vec::with_capacity(count);
        for _ in 0..count {
            values.push(self.read_f64()?);
        }
        Ok(values)
    }
}

fn decode(bytes: &[u8], origin: &str) -> Result<(TopicModel, Option<Vec<ImageAssignments>>)> {
    let mut cursor = Cursor { bytes, pos: 0, origin };

    if cursor.take(4)? != MAGIC {
        return Err(file_error(origin, "bad magic; not a model file"));
    }
    let version = cursor.read_u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::FormatVersion {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    let flags = cursor.read_u8()?;
    if flags & !(FLAG_GROUPS | FLAG_PLANTED) != 0 {
        return Err(file_error(origin, format!("unknown flag bits {flags:#010b}")));
    }

    let topics = cursor.read_u32()? as usize;
    let use_groups = match cursor.read_u8()? {
        0 => false,
        1 => true,
        other => return Err(file_error(origin, format!("use_groups byte must be 0 or 1, got {other}"))),
    };
    let max_iters = cursor.read_u32()? as usize;
    let rel_tol = cursor.read_f64()?;
    let seed = cursor.read_u64()?;
    let prob_floor = cursor.read_f64()?;
    let threads = cursor.read_u32()? as usize;
    let config = ModelConfig {
        topics,
        use_groups,
        max_iters,
        rel_tol,
        seed,
        prob_floor,
        threads,
    };

    let tags = cursor.read_table()?;
    let groups = cursor.read_table()?;
    let users = cursor.read_table()?;
    let (q, p, n) = (tags.len(), groups.len(), users.len());
    let vocab = Vocabulary { tags, groups, users };

    let tag_emissions = Array2::from_shape_vec((q, topics), cursor.read_floats(q * topics)?)
        .expect("shape matches vector length");
    let group_emissions = if flags & FLAG_GROUPS != 0 {
        let matrix = Array2::from_shape_vec((p, topics), cursor.read_floats(p * topics)?)
            .expect("shape matches vector length");
        Some(matrix)
    } else {
        None
    };
    let user_mixtures = Array2::from_shape_vec((topics, n), cursor.read_floats(topics * n)?)
        .expect("shape matches vector length");
    let user_prior = Array1::from_vec(cursor.read_floats(n)?);

    let assignments = if flags & FLAG_PLANTED != 0 {
        let count = cursor.read_u32()? as usize;
        let mut assignments = Vec::with_capacity(count);
        for _ in 0..count {
            let image_id = cursor.read_string()?;
            let tag_topics = read_topic_list(&mut cursor, topics)?;
            let group_topics = read_topic_list(&mut cursor, topics)?;
            assignments.push(ImageAssignments {
                image_id,
                tag_topics,
                group_topics,
            });
        }
        Some(assignments)
    } else {
        None
    };

    if cursor.pos != bytes.len() {
        return Err(file_error(
            origin,
            format!("{} trailing bytes after the payload", bytes.len() - cursor.pos),
        ));
    }

    let model = TopicModel::from_parts(
        config,
        vocab,
        tag_emissions,
        group_emissions,
        user_mixtures,
        user_prior,
    )
    .map_err(|e| file_error(origin, e.to_string()))?;
    Ok((model, assignments))
}

fn read_topic_list(cursor: &mut Cursor<'_>, topics: usize) -> Result<Vec<usize>> {
    let count = cursor.read_u32()? as usize;
    let mut list = Vec::with_capacity(count);
    for _ in 0..count {
        let z = cursor.read_u32()? as usize;
        if z >= topics {
            return Err(file_error(
                cursor.origin,
                format!("planted topic {z} out of range for {topics} topics"),
            ));
        }
        list.push(z);
    }
    Ok(list)
}
