//! Newline-delimited JSON corpus files.
//!
//! Line 1 is `{"version":1,"n_classes":C,"class_names":[...]}`; every
//! following line is one record.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Corpus, PatentRecord};
use crate::error::{Error, Result};

pub const CORPUS_FORMAT_VERSION: u64 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u64,
    n_classes: usize,
    class_names: Vec<String>,
}

fn parse_err(line: usize, message: impl ToString) -> Error {
    Error::Parse {
        line,
        message: message.to_string(),
    }
}

pub fn write_corpus<W: Write>(corpus: &Corpus, mut out: W) -> std::io::Result<()> {
    let header = Header {
        version: CORPUS_FORMAT_VERSION,
        n_classes: corpus.n_classes(),
        class_names: corpus.class_names.clone(),
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for r in &corpus.records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_corpus(corpus, &mut buf).map_err(|e| Error::io(path, e))?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&text)
}

/// Parses corpus text. Errors carry the 1-based line number.
pub fn parse_corpus(text: &str) -> Result<Corpus> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, first) = lines.next().ok_or_else(|| parse_err(1, "missing header line"))?;
    let header: Header = serde_json::from_str(first).map_err(|e| parse_err(1, e))?;
    if header.version != CORPUS_FORMAT_VERSION {
        return Err(Error::Version {
            found: header.version,
            expected: CORPUS_FORMAT_VERSION,
        });
    }
    if header.n_classes != header.class_names.len() {
        return Err(parse_err(
            1,
            format!(
                "n_classes is {} but {} class names are listed",
                header.n_classes,
                header.class_names.len()
            ),
        ));
    }

    let mut records = Vec::new();
    let mut seen = BTreeSet::new();
    for (line, raw) in lines {
        if raw.trim().is_empty() {
            return Err(parse_err(line, "empty record line"));
        }
        let record: PatentRecord = serde_json::from_str(raw).map_err(|e| parse_err(line, e))?;
        record
            .validate(header.n_classes)
            .map_err(|e| parse_err(line, e))?;
        if !seen.insert(record.id.clone()) {
            return Err(parse_err(line, format!("duplicate record id {:?}", record.id)));
        }
        records.push(record);
    }
    Corpus::new(records, header.class_names)
}
