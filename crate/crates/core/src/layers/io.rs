//! Binary checkpoint and feature files, little-endian throughout.
//!
//! Checkpoint (`EGCP`): magic, version `u32`, layer count `u32`, then per
//! layer `F, F′, H, B, |A|` as `u32`, one `u8` tag per aggregator, one `u8`
//! weight-activation tag, the bases (`B` blocks of `(F′/H) × F`, row-major),
//! `Φ` (`(H·|A|·B) × F`, rows ordered head, aggregator, basis) and the
//! weighting bias. A `u8` readout flag follows; when set, readout input and
//! output widths as `u32`, the `out × in` weight and the bias.
//!
//! Features (`EGCF`): magic, `n` as `u64`, `F` as `u32`, `n × F` `f32` values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{EgcConfig, EgcModel, EgcParams, Linear, WeightActivation};
use crate::error::Result;
use crate::graph::io::LeReader;
use crate::kernels::Aggregator;
use crate::matrix::Matrix;

const CHECKPOINT_MAGIC: &[u8; 4] = b"EGCP";
const CHECKPOINT_VERSION: u32 = 1;
const FEATURES_MAGIC: &[u8; 4] = b"EGCF";

fn put_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| crate::EgcError::config(format!("{v} does not fit the u32 header field")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_f32s<W: Write>(w: &mut W, values: &[f32]) -> Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_checkpoint<W: Write>(model: &EgcModel<f32>, w: W) -> Result<()> {
    model.validate()?;
    let mut w = BufWriter::new(w);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    put_u32(&mut w, model.layers.len())?;
    for l in &model.layers {
        let c = &l.config;
        for v in [c.in_dim, c.out_dim, c.heads, c.bases, c.aggs.len()] {
            put_u32(&mut w, v)?;
        }
        for a in &c.aggs {
            w.write_all(&[a.tag()])?;
        }
        w.write_all(&[c.activation.tag()])?;
        for t in &l.theta {
            put_f32s(&mut w, t.as_slice())?;
        }
        put_f32s(&mut w, l.phi.as_slice())?;
        put_f32s(&mut w, &l.bias)?;
    }
    match &model.readout {
        Some(r) => {
            w.write_all(&[1])?;
            put_u32(&mut w, r.in_dim())?;
            put_u32(&mut w, r.out_dim())?;
            put_f32s(&mut w, r.weight.as_slice())?;
            put_f32s(&mut w, &r.bias)?;
        }
        None => w.write_all(&[0])?,
    }
    w.flush()?;
    Ok(())
}

fn get_u32<R: Read>(r: &mut LeReader<R>) -> Result<usize> {
    Ok(r.u32()? as usize)
}

fn get_matrix<R: Read>(r: &mut LeReader<R>, rows: usize, cols: usize) -> Result<Matrix<f32>> {
    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| r.err(format!("{rows}x{cols} block too large")))?;
    Matrix::from_vec(rows, cols, r.f32_vec(len)?)
}

pub fn read_checkpoint<R: Read>(r: R) -> Result<EgcModel<f32>> {
    let mut r = LeReader::new(r, "checkpoint");
    r.expect_magic(CHECKPOINT_MAGIC)?;
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(r.err(format!("unsupported version {version}")));
    }
    let num_layers = get_u32(&mut r)?;
    let mut layers = Vec::with_capacity(num_layers.min(64));
    for k in 0..num_layers {
        let (f, fp, h, b, na) = (
            get_u32(&mut r)?,
            get_u32(&mut r)?,
            get_u32(&mut r)?,
            get_u32(&mut r)?,
            get_u32(&mut r)?,
        );
        let aggs = (0..na)
            .map(|_| {
                let tag = r.u8()?;
                Aggregator::from_tag(tag).ok_or_else(|| r.err(format!("layer {k}: unknown aggregator tag {tag}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let tag = r.u8()?;
        let activation =
            WeightActivation::from_tag(tag).ok_or_else(|| r.err(format!("layer {k}: unknown activation tag {tag}")))?;
        let config = EgcConfig {
            in_dim: f,
            out_dim: fp,
            heads: h,
            bases: b,
            aggs,
            activation,
        };
        config
            .validate()
            .map_err(|e| r.err(format!("layer {k}: {e}")))?;
        let theta = (0..b)
            .map(|_| get_matrix(&mut r, config.head_dim(), f))
            .collect::<Result<Vec<_>>>()?;
        let phi = get_matrix(&mut r, config.weight_cols(), f)?;
        let bias = r.f32_vec(config.weight_cols())?;
        layers.push(EgcParams::from_parts(config, theta, phi, bias)?);
    }
    let readout = match r.u8()? {
        0 => None,
        1 => {
            let (i, o) = (get_u32(&mut r)?, get_u32(&mut r)?);
            let weight = get_matrix(&mut r, o, i)?;
            let bias = r.f32_vec(o)?;
            Some(Linear { weight, bias })
        }
        other => return Err(r.err(format!("invalid readout flag {other}"))),
    };
    r.expect_eof()?;
    EgcModel::new(layers, readout)
}

pub fn save_checkpoint(model: &EgcModel<f32>, path: &Path) -> Result<()> {
    write_checkpoint(model, File::create(path)?)
}

pub fn load_checkpoint(path: &Path) -> Result<EgcModel<f32>> {
    read_checkpoint(BufReader::new(File::open(path)?))
}

pub fn write_features<W: Write>(x: &Matrix<f32>, w: W) -> Result<()> {
    let mut w = BufWriter::new(w);
    w.write_all(FEATURES_MAGIC)?;
    w.write_all(&(x.rows() as u64).to_le_bytes())?;
    put_u32(&mut w, x.cols())?;
    put_f32s(&mut w, x.as_slice())?;
    w.flush()?;
    Ok(())
}

pub fn read_features<R: Read>(r: R) -> Result<Matrix<f32>> {
    let mut r = LeReader::new(r, "features");
    r.expect_magic(FEATURES_MAGIC)?;
    let n = r.len_u64()?;
    let f = get_u32(&mut r)?;
    let x = get_matrix(&mut r, n, f)?;
    r.expect_eof()?;
    Ok(x)
}

pub fn save_features(x: &Matrix<f32>, path: &Path) -> Result<()> {
    write_features(x, File::create(path)?)
}

pub fn load_features(path: &Path) -> Result<Matrix<f32>> {
    read_features(BufReader::new(File::open(path)?))
}
