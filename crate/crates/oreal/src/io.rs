//! Flat binary containers for checkpointing and dataset persistence.
//!
//! Every container starts with a 4-byte ASCII magic followed by three
//! little-endian `u32` header fields, then a row-major little-endian payload:
//!
//! | magic  | header             | payload                                  |
//! |--------|--------------------|------------------------------------------|
//! | `ORPM` | h, w, num_classes  | `f32 * h*w*C` probabilities              |
//! | `ORLM` | h, w, num_classes  | `i32 * h*w` labels, -1 = unlabeled       |
//! | `ORSP` | h, w, K            | `i32 * h*w` superpixel assignment        |
//! | `ORIM` | h, w, channels     | `f32 * h*w*channels` color values        |
//! | `ORWT` | C, dim, 2          | `f64 * 2*C*dim` weights then shadow      |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::maps::{GroundTruthMask, Image, PartialLabelMap, ProbabilityMap};
use crate::model::ClassifierWeights;
use crate::superpixel::SuperpixelPartition;

const MAGIC_PROB: &[u8; 4] = b"ORPM";
const MAGIC_LABEL: &[u8; 4] = b"ORLM";
const MAGIC_PARTITION: &[u8; 4] = b"ORSP";
const MAGIC_IMAGE: &[u8; 4] = b"ORIM";
const MAGIC_WEIGHTS: &[u8; 4] = b"ORWT";

struct Container {
    header: [u32; 3],
    payload: Vec<u8>,
}

fn write_container(path: &Path, magic: &[u8; 4], header: [u32; 3], payload: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut go = || -> std::io::Result<()> {
        w.write_all(magic)?;
        for v in header {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(payload)?;
        w.flush()
    };
    go().map_err(|e| Error::io(path, e))
}

fn read_container(path: &Path, magic: &[u8; 4]) -> Result<Container> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut found = [0u8; 4];
    r.read_exact(&mut found).map_err(|e| Error::io(path, e))?;
    if &found != magic {
        return Err(Error::BadContainer(format!(
            "{}: magic {:?}, expected {:?}",
            path.display(),
            String::from_utf8_lossy(&found),
            String::from_utf8_lossy(magic),
        )));
    }
    let mut header = [0u32; 3];
    for h in &mut header {
        let mut buf = [0u8; 4];
        r.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
        *h = u32::from_le_bytes(buf);
    }
    let mut payload = Vec::new();
    r.read_to_end(&mut payload).map_err(|e| Error::io(path, e))?;
    Ok(Container { header, payload })
}

fn expect_payload(path: &Path, payload: &[u8], bytes: usize) -> Result<()> {
    if payload.len() != bytes {
        return Err(Error::BadContainer(format!(
            "{}: payload has {} bytes, expected {}",
            path.display(),
            payload.len(),
            bytes
        )));
    }
    Ok(())
}

fn f32s_to_bytes(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn i32s_to_bytes(values: &[i32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn bytes_to_f32s(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

fn bytes_to_i32s(bytes: &[u8]) -> Vec<i32> {
    bytes
        .chunks_exact(4)
        .map(|c| i32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

pub fn write_probability_map(path: &Path, pm: &ProbabilityMap) -> Result<()> {
    write_container(
        path,
        MAGIC_PROB,
        [pm.height as u32, pm.width as u32, pm.num_classes as u32],
        &f32s_to_bytes(&pm.probs),
    )
}

pub fn read_probability_map(path: &Path) -> Result<ProbabilityMap> {
    let c = read_container(path, MAGIC_PROB)?;
    let [h, w, classes] = c.header.map(|v| v as usize);
    expect_payload(path, &c.payload, h * w * classes * 4)?;
    Ok(ProbabilityMap::new(h, w, classes, bytes_to_f32s(&c.payload)))
}

/// Label maps (full or partial) share one encoding; a full mask is a map
/// without -1 entries.
pub fn write_label_map(path: &Path, map: &PartialLabelMap) -> Result<()> {
    write_container(
        path,
        MAGIC_LABEL,
        [map.height as u32, map.width as u32, map.num_classes as u32],
        &i32s_to_bytes(map.raw()),
    )
}

pub fn read_label_map(path: &Path) -> Result<PartialLabelMap> {
    let c = read_container(path, MAGIC_LABEL)?;
    let [h, w, classes] = c.header.map(|v| v as usize);
    expect_payload(path, &c.payload, h * w * 4)?;
    let labels = bytes_to_i32s(&c.payload);
    if let Some(&bad) = labels.iter().find(|&&l| l < -1 || l >= classes as i32) {
        return Err(Error::BadContainer(format!(
            "{}: label {} out of range for {} classes",
            path.display(),
            bad,
            classes
        )));
    }
    Ok(PartialLabelMap::from_raw(h, w, classes, labels))
}

pub fn write_mask(path: &Path, mask: &GroundTruthMask) -> Result<()> {
    let raw: Vec<i32> = mask.labels.iter().map(|&l| l as i32).collect();
    write_container(
        path,
        MAGIC_LABEL,
        [
            mask.height as u32,
            mask.width as u32,
            mask.num_classes as u32,
        ],
        &i32s_to_bytes(&raw),
    )
}

pub fn read_mask(path: &Path) -> Result<GroundTruthMask> {
    let map = read_label_map(path)?;
    let labels: Vec<u32> = map
        .raw()
        .iter()
        .map(|&l| {
            if l < 0 {
                Err(Error::BadContainer(format!(
                    "{}: unlabeled pixel in a full mask",
                    path.display()
                )))
            } else {
                Ok(l as u32)
            }
        })
        .collect::<Result<_>>()?;
    Ok(GroundTruthMask::new(
        map.height,
        map.width,
        map.num_classes,
        labels,
    ))
}

pub fn write_partition(path: &Path, part: &SuperpixelPartition) -> Result<()> {
    let raw: Vec<i32> = part.assignment().iter().map(|&s| s as i32).collect();
    write_container(
        path,
        MAGIC_PARTITION,
        [
            part.height as u32,
            part.width as u32,
            part.num_superpixels() as u32,
        ],
        &i32s_to_bytes(&raw),
    )
}

pub fn read_partition(path: &Path) -> Result<SuperpixelPartition> {
    let c = read_container(path, MAGIC_PARTITION)?;
    let [h, w, k] = c.header.map(|v| v as usize);
    expect_payload(path, &c.payload, h * w * 4)?;
    let assignment: Vec<u32> = bytes_to_i32s(&c.payload)
        .into_iter()
        .map(|s| {
            if s < 0 || s >= k as i32 {
                Err(Error::BadContainer(format!(
                    "{}: superpixel id {} out of range for K={}",
                    path.display(),
                    s,
                    k
                )))
            } else {
                Ok(s as u32)
            }
        })
        .collect::<Result<_>>()?;
    SuperpixelPartition::from_assignment(h, w, k, assignment)
}

pub fn write_image(path: &Path, image: &Image) -> Result<()> {
    write_container(
        path,
        MAGIC_IMAGE,
        [image.height as u32, image.width as u32, 3],
        &f32s_to_bytes(&image.data),
    )
}

pub fn read_image(path: &Path) -> Result<Image> {
    let c = read_container(path, MAGIC_IMAGE)?;
    let [h, w, channels] = c.header.map(|v| v as usize);
    if channels != 3 {
        return Err(Error::BadContainer(format!(
            "{}: {} channels, expected 3",
            path.display(),
            channels
        )));
    }
    expect_payload(path, &c.payload, h * w * 3 * 4)?;
    Ok(Image::new(h, w, bytes_to_f32s(&c.payload)))
}

pub fn write_weights(path: &Path, weights: &ClassifierWeights) -> Result<()> {
    let mut payload = Vec::with_capacity(16 * weights.matrix.len());
    for v in weights.matrix.iter().chain(weights.shadow.iter()) {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    write_container(
        path,
        MAGIC_WEIGHTS,
        [weights.num_classes as u32, weights.dim as u32, 2],
        &payload,
    )
}

pub fn read_weights(path: &Path) -> Result<ClassifierWeights> {
    let c = read_container(path, MAGIC_WEIGHTS)?;
    let classes = c.header[0] as usize;
    let dim = c.header[1] as usize;
    let n = classes * dim;
    expect_payload(path, &c.payload, 2 * n * 8)?;
    let values: Vec<f64> = c
        .payload
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes([b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7]]))
        .collect();
    Ok(ClassifierWeights {
        num_classes: classes,
        dim,
        matrix: values[..n].to_vec(),
        shadow: values[n..].to_vec(),
    })
}
