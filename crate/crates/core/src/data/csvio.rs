//! CSV ingestion and export.
//!
//! Dataset header, exactly: `participant_id,date,sex,label,f00,...,f19`.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::record::{Dataset, Record, Sex};
use crate::io::write_atomic;
use crate::{Error, Result, NUM_FEATURES};

pub fn dataset_header() -> Vec<String> {
    let mut h: Vec<String> = ["participant_id", "date", "sex", "label"].iter().map(|s| s.to_string()).collect();
    h.extend((0..NUM_FEATURES).map(|i| format!("f{i:02}")));
    h
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedRow {
    /// 1-based line number in the file (the header is line 1).
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub dataset: Dataset,
    pub rejected: Vec<RejectedRow>,
}

fn parse_row(row: &csv::StringRecord) -> std::result::Result<Record, String> {
    let participant_id = row[0].trim().to_string();
    if participant_id.is_empty() {
        return Err("empty participant_id".into());
    }
    let date = NaiveDate::parse_from_str(row[1].trim(), "%Y-%m-%d").map_err(|e| format!("bad date {:?}: {e}", &row[1]))?;
    let sex: Sex = row[2].trim().parse().map_err(|e: Error| e.to_string())?;
    let label = match row[3].trim() {
        "0" => 0,
        "1" => 1,
        other => return Err(format!("label {other:?} is not 0 or 1")),
    };
    let mut features = [0.0; NUM_FEATURES];
    for (i, f) in features.iter_mut().enumerate() {
        let raw = row[4 + i].trim();
        let v: f64 = raw.parse().map_err(|_| format!("feature f{i:02} {raw:?} is missing or not a number"))?;
        if !v.is_finite() {
            return Err(format!("feature f{i:02} is not finite"));
        }
        *f = v;
    }
    Ok(Record { participant_id, date, features, label, sex })
}

/// Parse a dataset CSV. Rows with missing or non-finite features, unknown sex
/// codes, or malformed dates/labels are rejected and reported; a duplicated
/// `(participant, day)` fails the whole ingestion.
pub fn read_dataset<R: Read>(reader: R) -> Result<Ingested> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let expected = dataset_header();
    if header != expected {
        return Err(Error::Validation(format!("header must be `{}`, got `{}`", expected.join(","), header.join(","))));
    }
    let mut records = Vec::new();
    let mut rejected = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let line = row.position().map_or(i as u64 + 2, |p| p.line());
        if row.len() != expected.len() {
            rejected.push(RejectedRow { line, reason: format!("expected {} fields, got {}", expected.len(), row.len()) });
            continue;
        }
        match parse_row(&row) {
            Ok(r) => records.push(r),
            Err(reason) => rejected.push(RejectedRow { line, reason }),
        }
    }
    Ok(Ingested { dataset: Dataset::new(records)?, rejected })
}

pub fn ingest_csv(path: &Path) -> Result<Ingested> {
    read_dataset(std::fs::File::open(path)?)
}

pub fn write_dataset<W: Write>(dataset: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(dataset_header())?;
    for r in dataset.records() {
        let mut row = vec![r.participant_id.clone(), r.date.format("%Y-%m-%d").to_string(), r.sex.to_string(), r.label.to_string()];
        row.extend(r.features.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn dataset_to_csv_bytes(dataset: &Dataset) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_dataset(dataset, &mut buf)?;
    Ok(buf)
}

pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    write_atomic(path, &dataset_to_csv_bytes(dataset)?)
}

/// Confirmed positive days, `participant_id,date`.
pub fn read_confirmed_days<R: Read>(reader: R) -> Result<BTreeMap<String, Vec<NaiveDate>>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header != ["participant_id", "date"] {
        return Err(Error::Validation(format!("confirmed-day header must be `participant_id,date`, got `{}`", header.join(","))));
    }
    let mut out: BTreeMap<String, Vec<NaiveDate>> = BTreeMap::new();
    for row in rdr.records() {
        let row = row?;
        let date = NaiveDate::parse_from_str(row[1].trim(), "%Y-%m-%d")
            .map_err(|e| Error::Validation(format!("bad confirmed date {:?}: {e}", &row[1])))?;
        out.entry(row[0].trim().to_string()).or_default().push(date);
    }
    for days in out.values_mut() {
        days.sort();
        days.dedup();
    }
    Ok(out)
}

pub fn write_confirmed_days(confirmed: &BTreeMap<String, Vec<NaiveDate>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["participant_id", "date"])?;
    for (id, days) in confirmed {
        for d in days {
            w.write_record([id.as_str(), &d.format("%Y-%m-%d").to_string()])?;
        }
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Ground-truth sidecar, `participant_id,true_cluster`.
pub fn write_ground_truth(truth: &BTreeMap<String, usize>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["participant_id", "true_cluster"])?;
    for (id, c) in truth {
        w.write_record([id.as_str(), &c.to_string()])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn read_ground_truth<R: Read>(reader: R) -> Result<BTreeMap<String, usize>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = BTreeMap::new();
    for row in rdr.records() {
        let row = row?;
        let c: usize = row[1].trim().parse().map_err(|_| Error::Validation(format!("bad cluster id {:?}", &row[1])))?;
        out.insert(row[0].trim().to_string(), c);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(id: &str, date: &str, sex: &str, label: &str, f0: &str) -> String {
        let mut cols = vec![id.to_string(), date.to_string(), sex.to_string(), label.to_string(), f0.to_string()];
        cols.extend((1..NUM_FEATURES).map(|i| format!("{}.5", i)));
        cols.join(",")
    }

    fn csv_text(rows: &[String]) -> String {
        let mut s = dataset_header().join(",");
        for r in rows {
            s.push('\n');
            s.push_str(r);
        }
        s.push('\n');
        s
    }

    #[test]
    fn header_only_is_empty_dataset() {
        let ing = read_dataset(csv_text(&[]).as_bytes()).unwrap();
        assert!(ing.dataset.is_empty());
        assert!(ing.rejected.is_empty());
    }

    #[test]
    fn nan_row_is_rejected_and_counted() {
        let text = csv_text(&[line("P1", "2022-01-01", "F", "0", "1.0"), line("P1", "2022-01-02", "F", "0", "NaN")]);
        let ing = read_dataset(text.as_bytes()).unwrap();
        assert_eq!(ing.dataset.len(), 1);
        assert_eq!(ing.rejected.len(), 1);
        assert_eq!(ing.rejected[0].line, 3);
    }

    #[test]
    fn missing_feature_and_unknown_sex_are_rejected() {
        let text = csv_text(&[line("P1", "2022-01-01", "X", "0", "1.0"), line("P1", "2022-01-02", "F", "0", "")]);
        let ing = read_dataset(text.as_bytes()).unwrap();
        assert_eq!(ing.dataset.len(), 0);
        assert_eq!(ing.rejected.len(), 2);
    }

    #[test]
    fn duplicate_pair_fails_ingestion() {
        let text = csv_text(&[line("P1", "2022-01-01", "F", "0", "1.0"), line("P1", "2022-01-01", "F", "1", "2.0")]);
        match read_dataset(text.as_bytes()) {
            Err(Error::DuplicateRecord { participant, date }) => assert_eq!((participant.as_str(), date.as_str()), ("P1", "2022-01-01")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn wrong_header_is_rejected() {
        let text = "participant_id,date,label,sex\n";
        assert!(matches!(read_dataset(text.as_bytes()), Err(Error::Validation(_))));
    }

    #[test]
    fn write_then_read_preserves_values() {
        let text = csv_text(&[line("P1", "2022-01-01", "M", "1", "0.1"), line("P2", "2022-03-05", "F", "0", "-3.25e-7")]);
        let d = read_dataset(text.as_bytes()).unwrap().dataset;
        let bytes = dataset_to_csv_bytes(&d).unwrap();
        let back = read_dataset(bytes.as_slice()).unwrap().dataset;
        assert_eq!(d, back);
    }

    #[test]
    fn confirmed_days_parse() {
        let text = "participant_id,date\nP1,2022-01-05\nP1,2022-01-01\nP2,2022-02-02\n";
        let c = read_confirmed_days(text.as_bytes()).unwrap();
        assert_eq!(c["P1"].len(), 2);
        assert!(c["P1"][0] < c["P1"][1]);
        let bytes = write_confirmed_days(&c).unwrap();
        assert_eq!(read_confirmed_days(bytes.as_slice()).unwrap(), c);
    }
}
