//! State files, stream logs and report output.

use std::fs::{File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sksv::graph::{edge_row_index, EdgeUpdate};
use sksv::turnstile::{decode_state, MatrixUpdate, SketchState, StreamMode};
use tempfile::NamedTempFile;

use crate::manifest::RunManifest;
use crate::{Failure, EXIT_INGEST};

/// An open state file holding an advisory lock until dropped.
pub struct LockedState {
    _file: File,
    pub bytes: Vec<u8>,
}

/// Opens `path` and takes an exclusive (or shared) advisory lock.
pub fn lock_state(path: &Path, exclusive: bool) -> Result<LockedState, Failure> {
    let mut file = OpenOptions::new()
        .read(true)
        .write(exclusive)
        .open(path)
        .map_err(|e| Failure::ingest(format!("cannot open state {}: {e}", path.display())))?;
    let locked = if exclusive { file.lock() } else { file.lock_shared() };
    locked.map_err(|e| Failure::ingest(format!("cannot lock {}: {e}", path.display())))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)?;
    Ok(LockedState { _file: file, bytes })
}

pub fn read_state(path: &Path, manifest: &mut RunManifest) -> Result<(SketchState, StreamMode), Failure> {
    let locked = lock_state(path, false)?;
    manifest.input(path, &locked.bytes);
    let (state, mode) = decode_state(&locked.bytes)?;
    manifest.config = Some(state.config().clone());
    Ok((state, mode))
}

/// Writes `bytes` to `path` through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut tmp = NamedTempFile::new_in(&dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .map_err(|e| Failure::ingest(format!("cannot replace {}: {}", path.display(), e.error)))?;
    Ok(())
}

/// Pretty JSON to `out`, or to standard output.
pub fn emit_report<T: Serialize>(report: &T, out: Option<&Path>, manifest: &mut RunManifest) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(report).expect("report serialization is infallible");
    text.push('\n');
    match out {
        Some(p) => {
            write_atomic(p, text.as_bytes())?;
            manifest.output(p);
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
        }
    }
    Ok(())
}

/// Reads a JSONL source; `None` or `-` means standard input.
pub fn read_source(path: Option<&Path>, manifest: &mut RunManifest) -> Result<Vec<u8>, Failure> {
    let mut bytes = Vec::new();
    match path {
        Some(p) if p != Path::new("-") => {
            File::open(p)
                .and_then(|mut f| f.read_to_end(&mut bytes))
                .map_err(|e| Failure::ingest(format!("cannot read {}: {e}", p.display())))?;
            manifest.input(p, &bytes);
        }
        _ => {
            std::io::stdin().lock().read_to_end(&mut bytes)?;
            manifest.input(Path::new("-"), &bytes);
        }
    }
    Ok(bytes)
}

/// Parsed stream records, in either mode.
#[derive(Debug)]
pub enum Records {
    Matrix(Vec<MatrixUpdate>),
    Edges(Vec<EdgeUpdate>),
}

impl Records {
    pub fn len(&self) -> usize {
        match self {
            Records::Matrix(v) => v.len(),
            Records::Edges(v) => v.len(),
        }
    }
}

/// Parses and validates every nonblank line. With `skip`, bad lines are
/// counted and returned as messages; otherwise the first one aborts.
pub fn parse_stream(
    bytes: &[u8],
    mode: StreamMode,
    shape: (usize, usize),
    skip: bool,
) -> Result<(Records, Vec<String>), Failure> {
    let text = std::str::from_utf8(bytes).map_err(|e| Failure::ingest(format!("stream is not UTF-8: {e}")))?;
    let (rows, cols) = shape;
    let mut rejected = Vec::new();
    let mut matrix = Vec::new();
    let mut edges = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed = match mode {
            StreamMode::Matrix => MatrixUpdate::from_json_line(line).and_then(|u| {
                if u.row >= rows || u.col >= cols {
                    Err(sksv::Error::Domain(format!("entry ({}, {}) outside {rows}x{cols}", u.row, u.col)))
                } else if !u.delta.is_finite() {
                    Err(sksv::Error::Domain(format!("non-finite delta {}", u.delta)))
                } else {
                    matrix.push(u);
                    Ok(())
                }
            }),
            StreamMode::Graph => EdgeUpdate::from_json_line(line).and_then(|e| {
                edge_row_index(e.u, e.v, cols)?;
                if !e.delta.is_finite() {
                    return Err(sksv::Error::Domain(format!("non-finite delta {}", e.delta)));
                }
                edges.push(e);
                Ok(())
            }),
        };
        if let Err(e) = parsed {
            let msg = format!("line {}: {e}", i + 1);
            if !skip {
                return Err(Failure::new(EXIT_INGEST, msg));
            }
            rejected.push(msg);
        }
    }
    let records = match mode {
        StreamMode::Matrix => Records::Matrix(matrix),
        StreamMode::Graph => Records::Edges(edges),
    };
    Ok((records, rejected))
}
