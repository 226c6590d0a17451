//! Newline-delimited JSON record files: one object per line.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NdjsonError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Parse {
        path: PathBuf,
        line: usize,
        source: serde_json::Error,
    },
    #[error("serialize: {0}")]
    Serialize(#[from] serde_json::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> NdjsonError + '_ {
    move |source| NdjsonError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads every non-blank line as one `T`.
pub fn read<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>, NdjsonError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|source| NdjsonError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                source,
            })?,
        );
    }
    Ok(out)
}

/// Serializes records to the exact bytes `write` would produce.
pub fn to_bytes<T: Serialize>(items: &[T]) -> Result<Vec<u8>, NdjsonError> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item)?;
        buf.push(b'\n');
    }
    Ok(buf)
}

pub fn write<T: Serialize>(path: impl AsRef<Path>, items: &[T]) -> Result<(), NdjsonError> {
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io_err(path))?;
    }
    let bytes = to_bytes(items)?;
    std::fs::write(path, bytes).map_err(io_err(path))
}

pub fn append<T: Serialize>(path: impl AsRef<Path>, item: &T) -> Result<(), NdjsonError> {
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io_err(path))?;
    }
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer(&mut w, item)?;
    w.write_all(b"\n").map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Row {
        id: u32,
        text: String,
    }

    #[test]
    fn write_append_read() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/rows.ndjson");
        write(&path, &[Row { id: 1, text: "a\nb".into() }]).unwrap();
        append(&path, &Row { id: 2, text: "c".into() }).unwrap();
        let rows: Vec<Row> = read(&path).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].text, "a\nb");
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ndjson");
        std::fs::write(&path, "{\"id\":1,\"text\":\"x\"}\n\nnot json\n").unwrap();
        match read::<Row>(&path) {
            Err(NdjsonError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }
}
