//! Line-delimited dataset files.
//!
//! Header line: `version,M,F,N_1,...,N_M`. One sample per line after that:
//! `camera_id,person_label,global_id,f_1,...,f_F` with `-` for a missing
//! global id. Reals are written with 17 significant digits, which parses back
//! to the identical f64.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::{CameraView, IcsDataset, Sample};

pub const DATASET_FORMAT_VERSION: u32 = 1;

/// 17 significant digits: enough to reconstruct any f64 exactly.
pub(crate) fn format_real(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

pub fn save_dataset(dataset: &IcsDataset, path: &Path) -> Result<()> {
    dataset.validate()?;
    let mut w = BufWriter::new(File::create(path)?);
    let mut header = format!(
        "{},{},{}",
        DATASET_FORMAT_VERSION, dataset.num_cameras, dataset.feature_dim
    );
    for view in &dataset.cameras {
        header.push_str(&format!(",{}", view.num_identities));
    }
    writeln!(w, "{header}")?;
    for view in &dataset.cameras {
        for s in &view.samples {
            let gid = match s.global_id {
                Some(g) => g.to_string(),
                None => "-".to_string(),
            };
            write!(w, "{},{},{}", s.camera_id, s.person_label, gid)?;
            for x in &s.features {
                write!(w, ",{}", format_real(*x))?;
            }
            writeln!(w)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<IcsDataset> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines().enumerate();

    let header = match lines.next() {
        Some((_, line)) => line.map_err(Error::Io)?,
        None => return Err(parse_err(1, "empty file")),
    };
    let fields: Vec<&str> = header.split(',').collect();
    if fields.len() < 3 {
        return Err(parse_err(1, "header needs version,M,F,N_1..N_M"));
    }
    let version: u32 = fields[0]
        .trim()
        .parse()
        .map_err(|_| parse_err(1, format!("bad version `{}`", fields[0])))?;
    if version != DATASET_FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let num_cameras: usize = fields[1]
        .trim()
        .parse()
        .map_err(|_| parse_err(1, format!("bad camera count `{}`", fields[1])))?;
    let feature_dim: usize = fields[2]
        .trim()
        .parse()
        .map_err(|_| parse_err(1, format!("bad feature dim `{}`", fields[2])))?;
    if fields.len() != 3 + num_cameras {
        return Err(parse_err(
            1,
            format!("expected {} identity counts", num_cameras),
        ));
    }
    let mut cameras: Vec<CameraView> = Vec::with_capacity(num_cameras);
    for (i, field) in fields[3..].iter().enumerate() {
        let n: usize = field
            .trim()
            .parse()
            .map_err(|_| parse_err(1, format!("bad identity count `{field}`")))?;
        cameras.push(CameraView {
            camera_id: i + 1,
            num_identities: n,
            samples: Vec::new(),
        });
    }

    for (idx, line) in lines {
        let lineno = idx + 1;
        let line = line.map_err(Error::Io)?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 + feature_dim {
            return Err(parse_err(
                lineno,
                format!(
                    "expected {} fields, found {}",
                    3 + feature_dim,
                    fields.len()
                ),
            ));
        }
        let camera_id: usize = fields[0]
            .trim()
            .parse()
            .map_err(|_| parse_err(lineno, format!("bad camera id `{}`", fields[0])))?;
        if camera_id == 0 || camera_id > num_cameras {
            return Err(parse_err(
                lineno,
                format!("camera id {camera_id} out of range"),
            ));
        }
        let person_label: usize = fields[1]
            .trim()
            .parse()
            .map_err(|_| parse_err(lineno, format!("bad label `{}`", fields[1])))?;
        if person_label >= cameras[camera_id - 1].num_identities {
            return Err(parse_err(
                lineno,
                format!(
                    "label {person_label} >= {} declared for camera {camera_id}",
                    cameras[camera_id - 1].num_identities
                ),
            ));
        }
        let global_id = match fields[2].trim() {
            "-" => None,
            text => Some(
                text.parse::<usize>()
                    .map_err(|_| parse_err(lineno, format!("bad global id `{text}`")))?,
            ),
        };
        let mut features = Vec::with_capacity(feature_dim);
        for field in &fields[3..] {
            let x: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(lineno, format!("bad real `{field}`")))?;
            features.push(x);
        }
        cameras[camera_id - 1].samples.push(Sample {
            features,
            person_label,
            camera_id,
            global_id,
        });
    }

    let ground_truth = IcsDataset::ground_truth_from_samples(&cameras);
    let dataset = IcsDataset {
        num_cameras,
        feature_dim,
        cameras,
        ground_truth,
    };
    dataset.validate().map_err(|e| match e {
        Error::Io(io) => Error::Io(io),
        other => Error::Parse {
            line: 0,
            message: other.to_string(),
        },
    })?;
    Ok(dataset)
}
