//! Image and label I/O: binary P6 PPM images, a labels CSV
//! (`filename,<label_0>,...`) and a dataset manifest JSON.

use super::{Dataset, LabeledImage};
use crate::error::{OlrError, Result};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

/// Written next to the images; records how the set was produced.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub image_size: (usize, usize, usize),
    pub num_labels: usize,
    pub label_names: Vec<String>,
    pub seed: u64,
}

/// Write an `[h, w, 3]` image in `[0, 1]` as binary P6, maxval 255.
pub fn save_ppm(path: &Path, image: &Tensor<f32>) -> Result<()> {
    let shape = image.shape();
    if shape.len() != 3 || shape[2] != 3 {
        return Err(OlrError::Shape(format!("P6 images must be [h, w, 3], got {shape:?}")));
    }
    let (h, w) = (shape[0], shape[1]);
    let mut buf = Vec::with_capacity(20 + h * w * 3);
    write!(buf, "P6\n{w} {h}\n255\n").expect("write to vec");
    for &v in image.data() {
        buf.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
    }
    std::fs::write(path, buf).map_err(|e| OlrError::io(path, e))
}

/// Read a binary P6 PPM (maxval 255) into `[h, w, 3]` reals in `[0, 1]`.
pub fn load_ppm(path: &Path) -> Result<Tensor<f32>> {
    let bytes = std::fs::read(path).map_err(|e| OlrError::io(path, e))?;
    let mut pos = 0usize;

    let mut next_token = |bytes: &[u8]| -> Result<String> {
        // Skip whitespace and '#' comments.
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(OlrError::format(path, format!("unexpected end of header at offset {start}")));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };

    let magic = next_token(&bytes)?;
    if magic != "P6" {
        return Err(OlrError::format(path, format!("expected P6 magic, got {magic:?}")));
    }
    let w: usize = next_token(&bytes)?
        .parse()
        .map_err(|_| OlrError::format(path, "invalid width"))?;
    let h: usize = next_token(&bytes)?
        .parse()
        .map_err(|_| OlrError::format(path, "invalid height"))?;
    let maxval: usize = next_token(&bytes)?
        .parse()
        .map_err(|_| OlrError::format(path, "invalid maxval"))?;
    if maxval != 255 {
        return Err(OlrError::format(path, format!("only maxval 255 supported, got {maxval}")));
    }
    // Exactly one whitespace byte separates the header from pixel data.
    pos += 1;
    let need = h * w * 3;
    if bytes.len() < pos + need {
        return Err(OlrError::format(
            path,
            format!("truncated pixel data at offset {pos}: need {need} bytes, have {}", bytes.len() - pos),
        ));
    }
    let data: Vec<f32> =
        bytes[pos..pos + need].iter().map(|&b| b as f32 / 255.0).collect();
    Tensor::new(vec![h, w, 3], data)
}

/// Write images, `labels.csv` and `manifest.json` into `dir`.
pub fn save_dataset(dir: &Path, dataset: &Dataset, seed: u64) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| OlrError::io(dir, e))?;
    let mut csv = String::new();
    csv.push_str("filename");
    for name in &dataset.label_names {
        csv.push(',');
        csv.push_str(name);
    }
    csv.push('\n');
    for img in &dataset.images {
        save_ppm(&dir.join(&img.name), &img.pixels)?;
        csv.push_str(&img.name);
        for &l in &img.labels {
            csv.push(',');
            csv.push_str(if l != 0 { "1" } else { "0" });
        }
        csv.push('\n');
    }
    let csv_path = dir.join("labels.csv");
    std::fs::write(&csv_path, csv).map_err(|e| OlrError::io(&csv_path, e))?;
    let manifest = DatasetManifest {
        image_size: dataset.image_size,
        num_labels: dataset.label_names.len(),
        label_names: dataset.label_names.clone(),
        seed,
    };
    let manifest_path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| OlrError::format(&manifest_path, e.to_string()))?;
    std::fs::write(&manifest_path, json).map_err(|e| OlrError::io(&manifest_path, e))?;
    Ok(())
}

/// Load a directory of images plus a `labels.csv`.
///
/// CSV label values follow the face-attribute convention `{-1, 0, 1}`,
/// mapped to binary `{0, 0, 1}`. Every image file present in the directory
/// must have a CSV row; an empty directory yields an empty dataset.
pub fn load_image_directory(dir: &Path) -> Result<Dataset> {
    let mut image_files: Vec<String> = Vec::new();
    if dir.is_dir() {
        for entry in std::fs::read_dir(dir).map_err(|e| OlrError::io(dir, e))? {
            let entry = entry.map_err(|e| OlrError::io(dir, e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if name.to_ascii_lowercase().ends_with(".ppm") {
                image_files.push(name);
            }
        }
    }
    image_files.sort();

    let csv_path = dir.join("labels.csv");
    if !csv_path.is_file() {
        if image_files.is_empty() {
            return Ok(Dataset { images: Vec::new(), label_names: Vec::new(), image_size: (0, 0, 0) });
        }
        return Err(OlrError::MissingArtifact(csv_path));
    }
    let text = std::fs::read_to_string(&csv_path).map_err(|e| OlrError::io(&csv_path, e))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| OlrError::format(&csv_path, "empty labels CSV"))?;
    let mut cols = header.split(',');
    let first = cols.next().unwrap_or_default();
    if first != "filename" {
        return Err(OlrError::format(
            &csv_path,
            format!("first header column must be 'filename', got {first:?}"),
        ));
    }
    let label_names: Vec<String> = cols.map(|c| c.trim().to_string()).collect();

    let mut rows: std::collections::BTreeMap<String, Vec<u8>> = std::collections::BTreeMap::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let fname = parts.next().unwrap_or_default().trim().to_string();
        let labels: Vec<u8> = parts
            .map(|p| match p.trim() {
                "1" => Ok(1u8),
                "0" | "-1" => Ok(0u8),
                other => Err(OlrError::format(
                    &csv_path,
                    format!("line {}: label value {other:?} not in {{-1, 0, 1}}", lineno + 2),
                )),
            })
            .collect::<Result<_>>()?;
        if labels.len() != label_names.len() {
            return Err(OlrError::format(
                &csv_path,
                format!(
                    "line {}: {} label values for {} label columns",
                    lineno + 2,
                    labels.len(),
                    label_names.len()
                ),
            ));
        }
        rows.insert(fname, labels);
    }

    let mut images = Vec::with_capacity(image_files.len());
    let mut image_size = (0, 0, 0);
    for (id, fname) in image_files.iter().enumerate() {
        let labels = rows.get(fname).cloned().ok_or_else(|| {
            OlrError::Dataset(format!("no labels row for image file {fname} in {}", csv_path.display()))
        })?;
        let pixels = load_ppm(&dir.join(fname))?;
        let shape = pixels.shape();
        image_size = (shape[0], shape[1], shape[2]);
        images.push(LabeledImage { pixels, labels, id: id as u64, name: fname.clone() });
    }
    Ok(Dataset { images, label_names, image_size })
}
