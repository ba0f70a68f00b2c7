//! PRONOSTIA acceleration files: `hour,minute,second,microsecond,h_acc,v_acc`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{default_channel_names, Dataset, Window};
use crate::error::{Error, Result};

const TIMESTAMP_FIELDS: usize = 4;

/// Parses one `acc_XXXXX.csv` file into a 2-channel window with id 0.
///
/// Some files in the public release use `;` instead of `,`; both are accepted.
pub fn parse_pronostia_file(text: &str, expected_len: usize) -> Result<Window> {
    let mut horizontal = Vec::with_capacity(expected_len);
    let mut vertical = Vec::with_capacity(expected_len);
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split([',', ';']).map(str::trim).collect();
        if fields.len() < TIMESTAMP_FIELDS + 2 {
            return Err(Error::MalformedFile(format!(
                "line {}: expected {} fields, found {}",
                lineno + 1,
                TIMESTAMP_FIELDS + 2,
                fields.len()
            )));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| {
                    Error::MalformedFile(format!("line {}: bad acceleration value {s:?}", lineno + 1))
                })
        };
        horizontal.push(parse(fields[TIMESTAMP_FIELDS])?);
        vertical.push(parse(fields[TIMESTAMP_FIELDS + 1])?);
    }
    if horizontal.len() != expected_len {
        return Err(Error::MalformedFile(format!(
            "expected {expected_len} rows, found {}",
            horizontal.len()
        )));
    }
    Window::new(0, vec![horizontal, vertical], None)
}

/// Serialises a 2-channel window in the PRONOSTIA layout. Values are written
/// with shortest round-trip formatting, so parsing the output is lossless.
pub fn write_pronostia_file(window: &Window) -> Result<String> {
    if window.channels() != 2 {
        return Err(Error::Shape(format!(
            "PRONOSTIA files carry 2 channels, window has {}",
            window.channels()
        )));
    }
    let mut out = String::new();
    for t in 0..window.len() {
        // 25.6 kHz sampling: one sample every 39.0625 microseconds.
        let micros = (t as f64 * 39.0625) as u64;
        let _ = writeln!(
            out,
            "0,0,{},{},{},{}",
            micros / 1_000_000,
            micros % 1_000_000,
            window.values[0][t],
            window.values[1][t]
        );
    }
    Ok(out)
}

/// Loads every `acc_*.csv` in `dir`, in lexicographic file-name order.
pub fn load_pronostia_dir(dir: &Path, expected_len: usize) -> Result<Dataset> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.starts_with("acc_") && name.ends_with(".csv") {
            files.push((name, entry.path()));
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(Error::InsufficientData(format!(
            "no acc_*.csv files in {}",
            dir.display()
        )));
    }
    let mut windows = Vec::with_capacity(files.len());
    for (i, (name, path)) in files.iter().enumerate() {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut w = parse_pronostia_file(&text, expected_len)
            .map_err(|e| Error::MalformedFile(format!("{name}: {e}")))?;
        w.id = i as u64;
        windows.push(w);
    }
    Dataset::new(default_channel_names(2), expected_len, windows)
}
