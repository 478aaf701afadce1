//! Self-describing model checkpoint: architecture config, every named
//! parameter tensor, the training α, and the optimizer state.
//!
//! Byte layout (all integers little-endian, values f64 LE):
//!   magic "AAMCKPT1" | version u32 | kind u8 | AmConfig (8 × u32)
//!   | alpha f64 | adam step u64 | param count u32
//!   | per param: name_len u32, name bytes, rows u32, cols u32,
//!                values, adam first moment, adam second moment

use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::model::{AmConfig, ModelKind};
use crate::optim::AdamState;
use crate::params::ParamStore;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"AAMCKPT1";
const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub config: AmConfig,
    pub alpha: f64,
    pub params: ParamStore,
    pub adam: AdamState,
}

fn kind_byte(kind: ModelKind) -> u8 {
    match kind {
        ModelKind::AspecUs => 0,
        ModelKind::AspecUk => 1,
        ModelKind::Mtlp => 2,
        ModelKind::Joint => 3,
        ModelKind::Aid => 4,
    }
}

fn kind_from_byte(b: u8) -> Option<ModelKind> {
    Some(match b {
        0 => ModelKind::AspecUs,
        1 => ModelKind::AspecUk,
        2 => ModelKind::Mtlp,
        3 => ModelKind::Joint,
        4 => ModelKind::Aid,
        _ => return None,
    })
}

fn write_tensor(buf: &mut Vec<u8>, t: &Tensor) -> Result<()> {
    for &v in t.data() {
        buf.write_f64::<LittleEndian>(v)?;
    }
    Ok(())
}

pub fn save(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.write_all(MAGIC)?;
    buf.write_u32::<LittleEndian>(FORMAT_VERSION)?;
    buf.write_u8(kind_byte(checkpoint.kind))?;
    let c = &checkpoint.config;
    for v in [
        c.feature_dim,
        c.num_trunk_layers,
        c.trunk_hidden,
        c.projection_units,
        c.phones_us,
        c.phones_uk,
        c.aid_branch_layer,
        c.aid_branch_hidden,
    ] {
        buf.write_u32::<LittleEndian>(v as u32)?;
    }
    buf.write_f64::<LittleEndian>(checkpoint.alpha)?;
    buf.write_u64::<LittleEndian>(checkpoint.adam.step)?;
    buf.write_u32::<LittleEndian>(checkpoint.params.len() as u32)?;
    for (name, entry) in checkpoint.params.iter() {
        buf.write_u32::<LittleEndian>(name.len() as u32)?;
        buf.write_all(name.as_bytes())?;
        buf.write_u32::<LittleEndian>(entry.value.rows() as u32)?;
        buf.write_u32::<LittleEndian>(entry.value.cols() as u32)?;
        write_tensor(&mut buf, &entry.value)?;
        let (m, v) = checkpoint
            .adam
            .moments
            .get(name)
            .ok_or_else(|| Error::Contract(format!("no optimizer state for `{name}`")))?;
        write_tensor(&mut buf, m)?;
        write_tensor(&mut buf, v)?;
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

fn read_tensor(cursor: &mut Cursor<Vec<u8>>, rows: usize, cols: usize) -> Result<Tensor> {
    let mut values = vec![0.0f64; rows * cols];
    for v in values.iter_mut() {
        *v = cursor
            .read_f64::<LittleEndian>()
            .map_err(|_| parse_err(cursor, "truncated tensor"))?;
    }
    Tensor::from_vec(rows, cols, values)
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)?;
    let mut cursor = Cursor::new(bytes);
    let mut magic = [0u8; 8];
    if cursor.read_exact(&mut magic).is_err() || &magic != MAGIC {
        return Err(parse_err(&cursor, "bad magic"));
    }
    let version = cursor
        .read_u32::<LittleEndian>()
        .map_err(|_| parse_err(&cursor, "truncated version"))?;
    if version != FORMAT_VERSION {
        return Err(parse_err(&cursor, format!("unsupported version {version}")));
    }
    let kind_b = cursor
        .read_u8()
        .map_err(|_| parse_err(&cursor, "truncated kind"))?;
    let kind = kind_from_byte(kind_b)
        .ok_or_else(|| parse_err(&cursor, format!("bad model kind {kind_b}")))?;
    let mut fields = [0usize; 8];
    for f in fields.iter_mut() {
        *f = cursor
            .read_u32::<LittleEndian>()
            .map_err(|_| parse_err(&cursor, "truncated config"))? as usize;
    }
    let config = AmConfig {
        feature_dim: fields[0],
        num_trunk_layers: fields[1],
        trunk_hidden: fields[2],
        projection_units: fields[3],
        phones_us: fields[4],
        phones_uk: fields[5],
        aid_branch_layer: fields[6],
        aid_branch_hidden: fields[7],
    };
    let alpha = cursor
        .read_f64::<LittleEndian>()
        .map_err(|_| parse_err(&cursor, "truncated alpha"))?;
    let step = cursor
        .read_u64::<LittleEndian>()
        .map_err(|_| parse_err(&cursor, "truncated step"))?;
    let count = cursor
        .read_u32::<LittleEndian>()
        .map_err(|_| parse_err(&cursor, "truncated param count"))? as usize;

    let mut params = ParamStore::new();
    let mut adam = AdamState {
        step,
        moments: Default::default(),
    };
    for _ in 0..count {
        let name_len = cursor
            .read_u32::<LittleEndian>()
            .map_err(|_| parse_err(&cursor, "truncated name length"))? as usize;
        let mut name_bytes = vec![0u8; name_len];
        if cursor.read_exact(&mut name_bytes).is_err() {
            return Err(parse_err(&cursor, "truncated name"));
        }
        let name = String::from_utf8(name_bytes)
            .map_err(|_| parse_err(&cursor, "name is not valid UTF-8"))?;
        let rows = cursor
            .read_u32::<LittleEndian>()
            .map_err(|_| parse_err(&cursor, "truncated shape"))? as usize;
        let cols = cursor
            .read_u32::<LittleEndian>()
            .map_err(|_| parse_err(&cursor, "truncated shape"))? as usize;
        let value = read_tensor(&mut cursor, rows, cols)?;
        let m = read_tensor(&mut cursor, rows, cols)?;
        let v = read_tensor(&mut cursor, rows, cols)?;
        params.insert(name.clone(), value);
        adam.moments.insert(name, (m, v));
    }
    Ok(Checkpoint {
        kind,
        config,
        alpha,
        params,
        adam,
    })
}
