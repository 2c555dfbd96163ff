//! Stage transaction files.
//!
//! Fixed column order, one stage per line, empty field = absent optional:
//!
//! ```text
//! card_id,journey_id,stage_index,service_date,board_stop,alight_stop,board_time,alight_time,
//! mode,route_id,direction_id,device_id,fare_product,fare_paid,distance_m
//! ```
//!
//! `service_date` is `YYYY-MM-DD`; times are integer seconds since service-day midnight.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use chrono::NaiveDate;

use super::{FareProduct, IngestError, Mode, Stage};
use crate::csvutil::{file_label, open_reader};

pub const STAGE_HEADER: [&str; 15] = [
    "card_id",
    "journey_id",
    "stage_index",
    "service_date",
    "board_stop",
    "alight_stop",
    "board_time",
    "alight_time",
    "mode",
    "route_id",
    "direction_id",
    "device_id",
    "fare_product",
    "fare_paid",
    "distance_m",
];

/// What to do with a row that fails validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ErrorPolicy {
    #[default]
    Fatal,
    Skip,
}

/// Streaming stage iterator. Memory use is one record buffer regardless of file size.
pub struct StageReader<R: Read = BufReader<File>> {
    rdr: csv::Reader<R>,
    record: csv::ByteRecord,
    file: String,
    policy: ErrorPolicy,
    skipped: u64,
    rows: u64,
    header_checked: bool,
    failed: bool,
}

/// Opens `path` for streaming.
pub fn load_stages(path: impl AsRef<Path>, policy: ErrorPolicy) -> Result<StageReader, IngestError> {
    let path = path.as_ref();
    let rdr = open_reader(path)?;
    Ok(StageReader::new(rdr, file_label(path), policy))
}

impl<R: Read> StageReader<R> {
    pub fn from_reader(reader: R, label: impl Into<String>, policy: ErrorPolicy) -> Self {
        let rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        Self::new(rdr, label.into(), policy)
    }

    fn new(rdr: csv::Reader<R>, file: String, policy: ErrorPolicy) -> Self {
        Self {
            rdr,
            record: csv::ByteRecord::new(),
            file,
            policy,
            skipped: 0,
            rows: 0,
            header_checked: false,
            failed: false,
        }
    }

    /// Rows dropped under [`ErrorPolicy::Skip`].
    pub fn skipped(&self) -> u64 {
        self.skipped
    }

    /// Rows successfully delivered so far.
    pub fn rows(&self) -> u64 {
        self.rows
    }

    fn check_header(&mut self) -> Result<(), IngestError> {
        let headers = self.rdr.byte_headers().map_err(|e| IngestError::MalformedRow {
            file: self.file.clone(),
            line: 1,
            reason: e.to_string(),
        })?;
        let matches = headers.len() == STAGE_HEADER.len()
            && headers.iter().zip(STAGE_HEADER).enumerate().all(|(i, (h, want))| {
                let h = if i == 0 { h.strip_prefix(b"\xef\xbb\xbf").unwrap_or(h) } else { h };
                h == want.as_bytes()
            });
        if !matches {
            return Err(IngestError::MalformedRow {
                file: self.file.clone(),
                line: 1,
                reason: format!("header must be {}", STAGE_HEADER.join(",")),
            });
        }
        Ok(())
    }
}

fn text(field: &[u8]) -> Result<&str, String> {
    std::str::from_utf8(field).map_err(|_| "invalid UTF-8".to_string())
}

fn opt_text(field: &[u8]) -> Result<Option<String>, String> {
    if field.is_empty() {
        Ok(None)
    } else {
        text(field).map(|s| Some(s.to_string()))
    }
}

fn required(field: &[u8], name: &str) -> Result<String, String> {
    if field.is_empty() {
        return Err(format!("{name} is empty"));
    }
    text(field).map(str::to_string)
}

fn num<T: std::str::FromStr>(field: &[u8], name: &str) -> Result<T, String> {
    text(field)?
        .parse()
        .map_err(|_| format!("{name} '{}' is not a valid number", String::from_utf8_lossy(field)))
}

fn opt_num<T: std::str::FromStr>(field: &[u8], name: &str) -> Result<Option<T>, String> {
    if field.is_empty() {
        Ok(None)
    } else {
        num(field, name).map(Some)
    }
}

pub(crate) fn parse_stage(rec: &csv::ByteRecord) -> Result<Stage, String> {
    if rec.len() != STAGE_HEADER.len() {
        return Err(format!("expected {} fields, found {}", STAGE_HEADER.len(), rec.len()));
    }
    let stage_index: u32 = num(&rec[2], "stage_index")?;
    if stage_index == 0 {
        return Err("stage_index must be >= 1".into());
    }
    let service_date = NaiveDate::parse_from_str(text(&rec[3])?, "%Y-%m-%d")
        .map_err(|_| format!("service_date '{}' is not YYYY-MM-DD", String::from_utf8_lossy(&rec[3])))?;
    let board_time: u32 = num(&rec[6], "board_time")?;
    let alight_time: Option<u32> = opt_num(&rec[7], "alight_time")?;
    if let Some(at) = alight_time {
        if at <= board_time {
            return Err(format!("alight_time {at} is not after board_time {board_time}"));
        }
    }
    let mode: Mode = text(&rec[8])?.parse()?;
    let direction_id = match &rec[10] {
        b"" => None,
        b"0" => Some(0),
        b"1" => Some(1),
        other => return Err(format!("direction_id '{}' not 0|1", String::from_utf8_lossy(other))),
    };
    let fare_product: FareProduct = text(&rec[12])?.parse()?;
    let distance_m: Option<f64> = opt_num(&rec[14], "distance_m")?;
    if let Some(d) = distance_m {
        if !(d.is_finite() && d >= 0.0) {
            return Err(format!("distance_m {d} must be a finite non-negative number"));
        }
    }
    Ok(Stage {
        card_id: required(&rec[0], "card_id")?,
        journey_id: required(&rec[1], "journey_id")?,
        stage_index,
        service_date,
        board_stop: required(&rec[4], "board_stop")?,
        alight_stop: opt_text(&rec[5])?,
        board_time,
        alight_time,
        mode,
        route_id: opt_text(&rec[9])?,
        direction_id,
        device_id: required(&rec[11], "device_id")?,
        fare_product,
        fare_paid: num(&rec[13], "fare_paid")?,
        distance_m,
    })
}

impl<R: Read> Iterator for StageReader<R> {
    type Item = Result<Stage, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        if !self.header_checked {
            self.header_checked = true;
            if let Err(e) = self.check_header() {
                self.failed = true;
                return Some(Err(e));
            }
        }
        loop {
            match self.rdr.read_byte_record(&mut self.record) {
                Ok(false) => return None,
                Ok(true) => {
                    let line = self.record.position().map(|p| p.line()).unwrap_or(0);
                    match parse_stage(&self.record) {
                        Ok(stage) => {
                            self.rows += 1;
                            return Some(Ok(stage));
                        }
                        Err(reason) => {
                            if self.policy == ErrorPolicy::Skip {
                                self.skipped += 1;
                                log::debug!("{}:{line}: skipping malformed stage: {reason}", self.file);
                                continue;
                            }
                            self.failed = true;
                            return Some(Err(IngestError::MalformedRow {
                                file: self.file.clone(),
                                line,
                                reason,
                            }));
                        }
                    }
                }
                Err(e) => {
                    let line = e.position().map(|p| p.line()).unwrap_or(0);
                    if self.policy == ErrorPolicy::Skip && !matches!(e.kind(), csv::ErrorKind::Io(_)) {
                        self.skipped += 1;
                        continue;
                    }
                    self.failed = true;
                    return Some(Err(IngestError::MalformedRow {
                        file: self.file.clone(),
                        line,
                        reason: e.to_string(),
                    }));
                }
            }
        }
    }
}

/// Buffered stage serializer producing the documented column layout.
pub struct StageWriter<W: Write> {
    inner: csv::Writer<W>,
    file: String,
}

impl StageWriter<BufWriter<File>> {
    pub fn create(path: impl AsRef<Path>) -> Result<Self, IngestError> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| IngestError::Io {
            file: file_label(path),
            source: e,
        })?;
        StageWriter::new(BufWriter::with_capacity(1 << 16, file), file_label(path))
    }
}

impl<W: Write> StageWriter<W> {
    pub fn new(writer: W, label: impl Into<String>) -> Result<Self, IngestError> {
        let mut inner = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(writer);
        let file = label.into();
        inner.write_record(STAGE_HEADER).map_err(|e| IngestError::MalformedRow {
            file: file.clone(),
            line: 1,
            reason: e.to_string(),
        })?;
        Ok(Self { inner, file })
    }

    pub fn write(&mut self, s: &Stage) -> Result<(), IngestError> {
        let opt = |v: &Option<String>| v.clone().unwrap_or_default();
        let record = [
            s.card_id.clone(),
            s.journey_id.clone(),
            s.stage_index.to_string(),
            s.service_date.format("%Y-%m-%d").to_string(),
            s.board_stop.clone(),
            opt(&s.alight_stop),
            s.board_time.to_string(),
            s.alight_time.map(|t| t.to_string()).unwrap_or_default(),
            s.mode.as_str().to_string(),
            opt(&s.route_id),
            s.direction_id.map(|d| d.to_string()).unwrap_or_default(),
            s.device_id.clone(),
            s.fare_product.as_str().to_string(),
            s.fare_paid.to_string(),
            s.distance_m.map(|d| d.to_string()).unwrap_or_default(),
        ];
        self.inner.write_record(&record).map_err(|e| IngestError::Io {
            file: self.file.clone(),
            source: std::io::Error::other(e),
        })
    }

    pub fn finish(mut self) -> Result<W, IngestError> {
        self.inner.flush().map_err(|e| IngestError::Io {
            file: self.file.clone(),
            source: e,
        })?;
        self.inner.into_inner().map_err(|e| IngestError::Io {
            file: self.file.clone(),
            source: std::io::Error::other(e.to_string()),
        })
    }
}

pub fn write_stages<'a>(
    stages: impl IntoIterator<Item = &'a Stage>,
    path: impl AsRef<Path>,
) -> Result<(), IngestError> {
    let mut w = StageWriter::create(path)?;
    for s in stages {
        w.write(s)?;
    }
    w.finish().map(|_| ())
}
