//! JSON-lines dataset files: one schema header line, then one
//! [`TrainingSample`] per line.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainingSample;
use crate::error::{Error, Result};

pub const SCHEMA: &str = "brexit.training-sample";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub schema: String,
    pub version: u32,
    pub fields: Vec<String>,
    pub count: usize,
}

pub fn write_dataset<'a>(
    path: &Path,
    samples: impl ExactSizeIterator<Item = &'a TrainingSample>,
) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    let mut w = BufWriter::new(file);
    let header = Header {
        schema: SCHEMA.into(),
        version: SCHEMA_VERSION,
        fields: ["state", "mcts_policy", "opponent_records", "value_target"]
            .map(String::from)
            .to_vec(),
        count: samples.len(),
    };
    let io = |e| Error::io(&tmp, e);
    writeln!(
        w,
        "{}",
        serde_json::to_string(&header).expect("header serializes")
    )
    .map_err(io)?;
    for s in samples {
        writeln!(
            w,
            "{}",
            serde_json::to_string(s).expect("sample serializes")
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)?;
    drop(w);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<Vec<TrainingSample>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let bad =
        |line: usize, msg: String| Error::Dataset(format!("{}:{line}: {msg}", path.display()));
    let first = lines
        .next()
        .ok_or_else(|| bad(1, "missing header".into()))?
        .map_err(|e| Error::io(path, e))?;
    let header: Header = serde_json::from_str(&first).map_err(|e| bad(1, e.to_string()))?;
    if header.schema != SCHEMA || header.version != SCHEMA_VERSION {
        return Err(bad(
            1,
            format!("unsupported schema {} v{}", header.schema, header.version),
        ));
    }
    let mut out = Vec::with_capacity(header.count);
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        out.push(serde_json::from_str(&line).map_err(|e| bad(i + 2, e.to_string()))?);
    }
    if out.len() != header.count {
        return Err(bad(
            1,
            format!("header promises {} rows, found {}", header.count, out.len()),
        ));
    }
    Ok(out)
}
