//! JSON-lines helpers shared by every file format in the crate.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// Parses one JSON value per non-blank line.
pub fn read_jsonl<R: Read, V: DeserializeOwned>(reader: R) -> Result<Vec<V>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(value);
    }
    Ok(out)
}

pub fn read_jsonl_file<V: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<V>> {
    read_jsonl(File::open(path)?)
}

pub fn write_jsonl<W: Write, V: Serialize>(writer: W, values: impl IntoIterator<Item = V>) -> Result<()> {
    let mut w = BufWriter::new(writer);
    for v in values {
        serde_json::to_writer(&mut w, &v).map_err(|e| Error::Io(e.into()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_jsonl_file<V: Serialize>(path: impl AsRef<Path>, values: impl IntoIterator<Item = V>) -> Result<()> {
    write_jsonl(File::create(path)?, values)
}

pub fn write_json_file<V: Serialize>(path: impl AsRef<Path>, value: &V) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::Io(e.into()))?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json_file<V: DeserializeOwned>(path: impl AsRef<Path>) -> Result<V> {
    let file = File::open(path)?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::Parse {
        line: e.line(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reports_line_numbers() {
        let src = "{\"a\":1}\n\n{\"a\":\n";
        let err = read_jsonl::<_, serde_json::Value>(src.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }));
    }

    #[test]
    fn skips_blank_lines() {
        let src = "1\n\n2\n";
        let v: Vec<i32> = read_jsonl(src.as_bytes()).unwrap();
        assert_eq!(v, vec![1, 2]);
    }
}
