//! File plumbing shared by the commands: JSONL framing and PNG decode into
//! the library's RGB buffer type.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use blip3_forge::imaging::ImageBuffer;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::errors::{CliError, CliResult};

fn run_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Run(format!("{}: {e}", path.display()))
}

/// Reads a JSONL file into typed records. Blank lines are skipped; a missing
/// or malformed line fails the run with its line number.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> CliResult<Vec<T>> {
    let file = File::open(path).map_err(|e| run_err(path, e))?;
    let mut out = Vec::new();
    for (ln, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| run_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row = serde_json::from_str(&line)
            .map_err(|e| run_err(path, format!("line {}: {e}", ln + 1)))?;
        out.push(row);
    }
    Ok(out)
}

/// Writes records as JSONL, one compact JSON document per line.
pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    let file = File::create(path).map_err(|e| run_err(path, e))?;
    let mut w = BufWriter::new(file);
    for row in rows {
        let line = serde_json::to_string(row).map_err(|e| run_err(path, e))?;
        w.write_all(line.as_bytes()).map_err(|e| run_err(path, e))?;
        w.write_all(b"\n").map_err(|e| run_err(path, e))?;
    }
    w.flush().map_err(|e| run_err(path, e))
}

/// Reads raw text lines (the unit of mixing); blank lines are dropped.
pub fn read_lines(path: &Path) -> CliResult<Vec<String>> {
    let file = File::open(path).map_err(|e| run_err(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| run_err(path, e))?;
        if !line.trim().is_empty() {
            out.push(line);
        }
    }
    Ok(out)
}

/// Decodes a PNG (or any supported raster) into an RGB buffer.
pub fn load_image(path: &Path) -> CliResult<ImageBuffer> {
    let img = image::open(path).map_err(|e| run_err(path, e))?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    ImageBuffer::from_raw(w, h, rgb.into_raw()).map_err(CliError::from)
}

/// Encodes an RGB buffer as PNG.
pub fn save_image(path: &Path, img: &ImageBuffer) -> CliResult<()> {
    image::save_buffer(
        path,
        img.as_bytes(),
        img.width(),
        img.height(),
        image::ExtendedColorType::Rgb8,
    )
    .map_err(|e| run_err(path, e))
}

/// Writes a two-column CSV of (step, loss) rows for external plotting.
pub fn write_loss_csv(path: &Path, rows: &[(usize, f64)]) -> CliResult<()> {
    let mut text = String::from("step,loss\n");
    for (step, loss) in rows {
        text.push_str(&format!("{step},{loss}\n"));
    }
    std::fs::write(path, text).map_err(|e| run_err(path, e))
}
