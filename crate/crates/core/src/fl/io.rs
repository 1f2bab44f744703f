//! Feature-file ingestion.
//!
//! Binary layout: `b"FMKT"`, then `n`, `d` and a label flag as little-endian
//! `u32`, then `n * d` little-endian `f32` values row by row, then `n`
//! little-endian `u32` labels when the flag is nonzero. The CSV form has a
//! header `f0,...,f{d-1}[,label]`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;

use super::FlError;
use crate::ot::DiscreteMeasure;

const MAGIC: &[u8; 4] = b"FMKT";

pub fn write_fmkt(path: &Path, data: &DiscreteMeasure) -> Result<(), FlError> {
    let mut w = BufWriter::new(File::create(path)?);
    encode_fmkt(&mut w, data)?;
    w.flush()?;
    Ok(())
}

pub fn encode_fmkt<W: Write>(w: &mut W, data: &DiscreteMeasure) -> Result<(), FlError> {
    let as_u32 = |v: usize| u32::try_from(v).map_err(|_| FlError::Format(format!("{v} exceeds u32")));
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(as_u32(data.len())?)?;
    w.write_u32::<LittleEndian>(as_u32(data.dim())?)?;
    w.write_u32::<LittleEndian>(u32::from(data.labels().is_some()))?;
    for &v in data.points() {
        w.write_f32::<LittleEndian>(v as f32)?;
    }
    if let Some(labels) = data.labels() {
        for &y in labels {
            w.write_u32::<LittleEndian>(as_u32(y)?)?;
        }
    }
    Ok(())
}

pub fn read_fmkt(path: &Path) -> Result<DiscreteMeasure, FlError> {
    decode_fmkt(&mut BufReader::new(File::open(path)?))
}

pub fn decode_fmkt<R: Read>(r: &mut R) -> Result<DiscreteMeasure, FlError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(FlError::Format(format!("bad magic {magic:?}")));
    }
    let n = r.read_u32::<LittleEndian>()? as usize;
    let d = r.read_u32::<LittleEndian>()? as usize;
    let labelled = r.read_u32::<LittleEndian>()? != 0;
    let mut values = vec![0f32; n * d];
    r.read_f32_into::<LittleEndian>(&mut values)?;
    let labels = if labelled {
        let mut l = vec![0u32; n];
        r.read_u32_into::<LittleEndian>(&mut l)?;
        Some(l.into_iter().map(|y| y as usize).collect())
    } else {
        None
    };
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(FlError::Format(format!("{} trailing bytes", rest.len())));
    }
    let points = Array2::from_shape_vec((n, d), values.into_iter().map(f64::from).collect())
        .map_err(|e| FlError::Format(e.to_string()))?;
    Ok(DiscreteMeasure::uniform(points, labels)?)
}

pub fn write_csv(path: &Path, data: &DiscreteMeasure) -> Result<(), FlError> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (0..data.dim()).map(|j| format!("f{j}")).collect();
    if data.labels().is_some() {
        header.push("label".into());
    }
    w.write_record(&header)?;
    for i in 0..data.len() {
        let mut rec: Vec<String> = data.point(i).iter().map(|v| v.to_string()).collect();
        if let Some(l) = data.labels() {
            rec.push(l[i].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<DiscreteMeasure, FlError> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let labelled = header.iter().last() == Some("label");
    let d = header.len() - usize::from(labelled);
    for (j, name) in header.iter().take(d).enumerate() {
        if name != format!("f{j}") {
            return Err(FlError::Format(format!("unexpected column {name:?} at position {j}")));
        }
    }
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let parse_err = |e: &dyn std::fmt::Display| FlError::Format(format!("row {}: {e}", line + 1));
        for field in rec.iter().take(d) {
            values.push(field.trim().parse::<f64>().map_err(|e| parse_err(&e))?);
        }
        if labelled {
            labels.push(rec[d].trim().parse::<usize>().map_err(|e| parse_err(&e))?);
        }
    }
    let n = if d == 0 { 0 } else { values.len() / d };
    let points = Array2::from_shape_vec((n, d), values).map_err(|e| FlError::Format(e.to_string()))?;
    Ok(DiscreteMeasure::uniform(points, labelled.then_some(labels))?)
}

/// Dispatch on extension: `.csv` is text, anything else binary.
pub fn read_features(path: &Path) -> Result<DiscreteMeasure, FlError> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => read_csv(path),
        _ => read_fmkt(path),
    }
}

pub fn write_features(path: &Path, data: &DiscreteMeasure) -> Result<(), FlError> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => write_csv(path, data),
        _ => write_fmkt(path, data),
    }
}
