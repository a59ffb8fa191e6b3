//! Checkpoint files: a versioned text header with the architecture, then one
//! line of decimal values per tensor. Values carry 17 significant digits and
//! reload bit-exactly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::{Affine, Mat, ModelConfig, ModelParams};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

fn bad(message: impl Into<String>) -> Error {
    Error::IncompatibleCheckpoint(message.into())
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    let c = &params.config;
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "mtml-checkpoint v{CHECKPOINT_FORMAT_VERSION}")?;
    writeln!(w, "input_dim {}", c.input_dim)?;
    let hidden: Vec<String> = c.hidden_dims.iter().map(|d| d.to_string()).collect();
    writeln!(w, "hidden_dims {}", hidden.join(" "))?;
    writeln!(w, "feature_dim {}", c.feature_dim)?;
    let heads: Vec<String> = c.heads.iter().map(|n| n.to_string()).collect();
    writeln!(w, "heads {}", heads.join(" "))?;
    writeln!(w, "init_scale {}", fmt_real(c.init_scale))?;
    writeln!(w, "seed {}", c.seed)?;

    let write_affine = |w: &mut BufWriter<File>, name: &str, a: &Affine| -> Result<()> {
        writeln!(
            w,
            "tensor {name}.weight {} {}",
            a.weight.rows, a.weight.cols
        )?;
        let row: Vec<String> = a.weight.data.iter().map(|&x| fmt_real(x)).collect();
        writeln!(w, "{}", row.join(" "))?;
        writeln!(w, "tensor {name}.bias {}", a.bias.len())?;
        let row: Vec<String> = a.bias.iter().map(|&x| fmt_real(x)).collect();
        writeln!(w, "{}", row.join(" "))?;
        Ok(())
    };
    for (l, a) in params.encoder.iter().enumerate() {
        write_affine(&mut w, &format!("encoder.{l}"), a)?;
    }
    for (p, a) in params.heads.iter().enumerate() {
        write_affine(&mut w, &format!("head.{p}"), a)?;
    }
    writeln!(w, "end")?;
    w.flush()?;
    Ok(())
}

struct LineReader {
    lines: std::io::Lines<BufReader<File>>,
}

impl LineReader {
    fn next(&mut self) -> Result<String> {
        match self.lines.next() {
            Some(line) => Ok(line?),
            None => Err(bad("file truncated")),
        }
    }

    /// Next line of form `key v1 v2 ...`, checked against `key`.
    fn keyed(&mut self, key: &str) -> Result<Vec<String>> {
        let line = self.next()?;
        let mut parts = line.split_whitespace().map(str::to_string);
        match parts.next() {
            Some(k) if k == key => Ok(parts.collect()),
            Some(k) => Err(bad(format!("expected `{key}`, found `{k}`"))),
            None => Err(bad(format!("expected `{key}`, found blank line"))),
        }
    }
}

fn parse_usizes(values: &[String]) -> Result<Vec<usize>> {
    values
        .iter()
        .map(|v| {
            v.parse::<usize>()
                .map_err(|_| bad(format!("bad integer `{v}`")))
        })
        .collect()
}

fn read_values(reader: &mut LineReader, expected: usize, name: &str) -> Result<Vec<f64>> {
    let line = reader.next()?;
    let values: Vec<f64> = line
        .split_whitespace()
        .map(|v| {
            v.parse::<f64>()
                .map_err(|_| bad(format!("bad real in {name}")))
        })
        .collect::<Result<_>>()?;
    if values.len() != expected {
        return Err(bad(format!(
            "{name} holds {} values, expected {expected}",
            values.len()
        )));
    }
    if values.iter().any(|x| !x.is_finite()) {
        return Err(bad(format!("non-finite value in {name}")));
    }
    Ok(values)
}

fn read_affine(
    reader: &mut LineReader,
    name: &str,
    fan_in: usize,
    fan_out: usize,
) -> Result<Affine> {
    let header = reader.keyed("tensor")?;
    if header.len() != 3 || header[0] != format!("{name}.weight") {
        return Err(bad(format!("expected tensor {name}.weight")));
    }
    let dims = parse_usizes(&header[1..])?;
    if dims != [fan_in, fan_out] {
        return Err(bad(format!(
            "{name}.weight is {}x{}, config wants {fan_in}x{fan_out}",
            dims[0], dims[1]
        )));
    }
    let data = read_values(reader, fan_in * fan_out, &format!("{name}.weight"))?;

    let header = reader.keyed("tensor")?;
    if header.len() != 2 || header[0] != format!("{name}.bias") {
        return Err(bad(format!("expected tensor {name}.bias")));
    }
    if parse_usizes(&header[1..])? != [fan_out] {
        return Err(bad(format!("{name}.bias length mismatch")));
    }
    let bias = read_values(reader, fan_out, &format!("{name}.bias"))?;
    Ok(Affine {
        weight: Mat {
            rows: fan_in,
            cols: fan_out,
            data,
        },
        bias,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let mut reader = LineReader {
        lines: BufReader::new(File::open(path)?).lines(),
    };
    let magic = reader.next()?;
    let expected = format!("mtml-checkpoint v{CHECKPOINT_FORMAT_VERSION}");
    if magic != expected {
        return Err(bad(format!("bad magic `{magic}`")));
    }
    let input_dim = parse_usizes(&reader.keyed("input_dim")?)?
        .first()
        .copied()
        .ok_or_else(|| bad("missing input_dim"))?;
    let hidden_dims = parse_usizes(&reader.keyed("hidden_dims")?)?;
    let feature_dim = parse_usizes(&reader.keyed("feature_dim")?)?
        .first()
        .copied()
        .ok_or_else(|| bad("missing feature_dim"))?;
    let heads = parse_usizes(&reader.keyed("heads")?)?;
    let init_scale_raw = reader.keyed("init_scale")?;
    let init_scale: f64 = init_scale_raw
        .first()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| bad("missing init_scale"))?;
    let seed = reader
        .keyed("seed")?
        .first()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| bad("missing seed"))?;

    let config = ModelConfig {
        input_dim,
        hidden_dims,
        feature_dim,
        heads,
        init_scale,
        seed,
    };
    config
        .validate()
        .map_err(|e| bad(format!("invalid config: {e}")))?;

    let mut dims = vec![config.input_dim];
    dims.extend_from_slice(&config.hidden_dims);
    dims.push(config.feature_dim);
    let mut encoder = Vec::new();
    for (l, w) in dims.windows(2).enumerate() {
        encoder.push(read_affine(
            &mut reader,
            &format!("encoder.{l}"),
            w[0],
            w[1],
        )?);
    }
    let mut head_params = Vec::new();
    for (p, &n) in config.heads.iter().enumerate() {
        head_params.push(read_affine(
            &mut reader,
            &format!("head.{p}"),
            config.feature_dim,
            n,
        )?);
    }
    if reader.next()? != "end" {
        return Err(bad("missing end marker"));
    }
    Ok(ModelParams {
        config,
        encoder,
        heads: head_params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{forward_shared, init_params};
    use std::io::Read as _;

    fn params() -> ModelParams {
        init_params(&ModelConfig {
            input_dim: 6,
            hidden_dims: vec![4],
            feature_dim: 3,
            heads: vec![2, 5],
            init_scale: 0.8,
            seed: 21,
        })
        .unwrap()
    }

    #[test]
    fn round_trip_is_lossless() {
        let p = params();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&p, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(p, loaded);
    }

    #[test]
    fn loaded_params_reproduce_features_exactly() {
        let p = params();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&p, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        let x = vec![0.1, -0.2, 0.3, 0.4, -0.5, 0.6];
        assert_eq!(
            forward_shared(&p, &x).unwrap(),
            forward_shared(&loaded, &x).unwrap()
        );
    }

    #[test]
    fn truncated_file_is_incompatible() {
        let p = params();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&p, &path).unwrap();
        let mut text = String::new();
        File::open(&path)
            .unwrap()
            .read_to_string(&mut text)
            .unwrap();
        let cut = text.len() / 2;
        std::fs::write(&path, &text[..cut]).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(Error::IncompatibleCheckpoint(_))
        ));
    }

    #[test]
    fn version_bump_is_incompatible() {
        let p = params();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&p, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, text.replace("v1", "v2")).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(Error::IncompatibleCheckpoint(_))
        ));
    }

    #[test]
    fn empty_hidden_dims_round_trip() {
        let p = init_params(&ModelConfig {
            input_dim: 3,
            hidden_dims: vec![],
            feature_dim: 3,
            heads: vec![4],
            init_scale: 1.0,
            seed: 2,
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("flat.ckpt");
        save_checkpoint(&p, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), p);
    }
}
