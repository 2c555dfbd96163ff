use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use crate::ingest::IngestError;

pub(crate) fn file_label(path: &Path) -> String {
    path.display().to_string()
}

pub(crate) fn open_reader(path: &Path) -> Result<csv::Reader<BufReader<File>>, IngestError> {
    let file = File::open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            IngestError::MissingFile {
                path: path.to_path_buf(),
            }
        } else {
            IngestError::Io {
                file: file_label(path),
                source: e,
            }
        }
    })?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(BufReader::with_capacity(1 << 16, file)))
}

pub(crate) fn open_writer(path: &Path) -> Result<csv::Writer<File>, IngestError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| IngestError::Io {
                file: file_label(parent),
                source: e,
            })?;
        }
    }
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| csv_error(path, e))
}

pub(crate) fn csv_error(path: &Path, err: csv::Error) -> IngestError {
    let line = err.position().map(|p| p.line()).unwrap_or(0);
    match err.into_kind() {
        csv::ErrorKind::Io(source) => IngestError::Io {
            file: file_label(path),
            source,
        },
        other => IngestError::MalformedRow {
            file: file_label(path),
            line,
            reason: format!("{other:?}"),
        },
    }
}

/// Column positions resolved from a header row by name.
pub(crate) struct Columns {
    idx: Vec<Option<usize>>,
}

impl Columns {
    pub(crate) fn resolve(
        path: &Path,
        headers: &csv::StringRecord,
        required: &[&str],
        optional: &[&str],
    ) -> Result<Self, IngestError> {
        let find = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim().trim_start_matches('\u{feff}') == name)
        };
        let mut idx = Vec::with_capacity(required.len() + optional.len());
        for name in required {
            match find(name) {
                Some(i) => idx.push(Some(i)),
                None => {
                    return Err(IngestError::MalformedRow {
                        file: file_label(path),
                        line: 1,
                        reason: format!("missing required column '{name}'"),
                    })
                }
            }
        }
        for name in optional {
            idx.push(find(name));
        }
        Ok(Self { idx })
    }

    /// Field `n` in declaration order (required first, then optional); empty when the
    /// optional column is absent.
    pub(crate) fn get<'r>(&self, record: &'r csv::StringRecord, n: usize) -> &'r str {
        self.idx[n]
            .and_then(|i| record.get(i))
            .map(str::trim)
            .unwrap_or("")
    }
}

pub(crate) fn finish_writer(mut w: csv::Writer<File>, path: &Path) -> Result<(), IngestError> {
    w.flush().map_err(|e| IngestError::Io {
        file: file_label(path),
        source: e,
    })
}

/// Writes a whole table of already formatted cells.
pub(crate) fn write_table<I, R>(path: &Path, header: &[&str], rows: I) -> Result<(), IngestError>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let mut w = open_writer(path)?;
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.write_record(row).map_err(|e| csv_error(path, e))?;
    }
    finish_writer(w, path)
}
