use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::nn::TrainData;
use crate::{Error, Matrix, Result, NUM_FEATURES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Sex {
    F,
    M,
}

impl fmt::Display for Sex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sex::F => "F",
            Sex::M => "M",
        })
    }
}

impl FromStr for Sex {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "F" => Ok(Sex::F),
            "M" => Ok(Sex::M),
            other => Err(Error::Validation(format!("unknown sex code {other:?}"))),
        }
    }
}

/// One participant-day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub participant_id: String,
    pub date: NaiveDate,
    pub features: [f64; NUM_FEATURES],
    pub label: u8,
    pub sex: Sex,
}

impl Record {
    pub fn validate(&self) -> Result<()> {
        if let Some(i) = self.features.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "{} {}: feature f{i:02} is not finite",
                self.participant_id, self.date
            )));
        }
        if self.label > 1 {
            return Err(Error::Validation(format!("{} {}: label {} outside {{0,1}}", self.participant_id, self.date, self.label)));
        }
        Ok(())
    }
}

/// Immutable, sorted collection of participant-days.
///
/// Records are kept ordered by `(participant_id, date)`; each
/// `(participant, day)` pair appears once and every participant has a single
/// sex.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    records: Vec<Record>,
    roster: BTreeMap<String, Sex>,
}

impl Dataset {
    pub fn new(mut records: Vec<Record>) -> Result<Self> {
        records.sort_by(|a, b| a.participant_id.cmp(&b.participant_id).then(a.date.cmp(&b.date)));
        let mut roster = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            r.validate()?;
            if i > 0 {
                let prev = &records[i - 1];
                if prev.participant_id == r.participant_id && prev.date == r.date {
                    return Err(Error::DuplicateRecord { participant: r.participant_id.clone(), date: r.date.to_string() });
                }
            }
            match roster.get(&r.participant_id) {
                Some(&sex) if sex != r.sex => {
                    return Err(Error::Validation(format!("participant {} has conflicting sex codes", r.participant_id)));
                }
                Some(_) => {}
                None => {
                    roster.insert(r.participant_id.clone(), r.sex);
                }
            }
        }
        Ok(Self { records, roster })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn roster(&self) -> &BTreeMap<String, Sex> {
        &self.roster
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Sorted participant ids.
    pub fn participant_ids(&self) -> Vec<String> {
        self.roster.keys().cloned().collect()
    }

    pub fn participant_set(&self) -> BTreeSet<String> {
        self.roster.keys().cloned().collect()
    }

    pub fn date_span(&self) -> Option<(NaiveDate, NaiveDate)> {
        let lo = self.records.iter().map(|r| r.date).min()?;
        let hi = self.records.iter().map(|r| r.date).max()?;
        Some((lo, hi))
    }

    /// Row indices grouped by participant, in roster order.
    pub fn rows_by_participant(&self) -> BTreeMap<String, Vec<usize>> {
        let mut out: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, r) in self.records.iter().enumerate() {
            out.entry(r.participant_id.clone()).or_default().push(i);
        }
        out
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let records: Vec<Record> = indices.iter().map(|&i| self.records[i].clone()).collect();
        Dataset::new(records).expect("subset of a valid dataset is valid")
    }

    pub fn filter(&self, mut keep: impl FnMut(&Record) -> bool) -> Dataset {
        let records: Vec<Record> = self.records.iter().filter(|r| keep(r)).cloned().collect();
        Dataset::new(records).expect("subset of a valid dataset is valid")
    }

    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        let mut records = self.records.clone();
        records.extend(other.records.iter().cloned());
        Dataset::new(records)
    }

    pub fn feature_matrix(&self) -> Matrix {
        let mut data = Vec::with_capacity(self.records.len() * NUM_FEATURES);
        for r in &self.records {
            data.extend_from_slice(&r.features);
        }
        Matrix::from_vec(self.records.len(), NUM_FEATURES, data).expect("features are finite")
    }

    pub fn labels(&self) -> Vec<u8> {
        self.records.iter().map(|r| r.label).collect()
    }

    pub fn sexes(&self) -> Vec<Sex> {
        self.records.iter().map(|r| r.sex).collect()
    }

    /// Rows for training. Participant keys index into `participants` (usually
    /// the sorted ids of the dataset the model was fitted on); record keys are
    /// row indices into `self`.
    pub fn to_train_data(&self, participants: &[String]) -> Result<TrainData> {
        let index: BTreeMap<&str, usize> = participants.iter().enumerate().map(|(i, p)| (p.as_str(), i)).collect();
        let keys = self
            .records
            .iter()
            .map(|r| {
                index
                    .get(r.participant_id.as_str())
                    .copied()
                    .ok_or_else(|| Error::Unrouted(r.participant_id.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        TrainData::with_keys(self.feature_matrix(), self.labels(), keys, (0..self.len()).collect())
    }
}

#[cfg(test)]
pub(crate) fn record(id: &str, date: &str, label: u8, sex: Sex) -> Record {
    Record {
        participant_id: id.to_string(),
        date: date.parse().unwrap(),
        features: [0.0; NUM_FEATURES],
        label,
        sex,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sorts_and_builds_roster() {
        let d = Dataset::new(vec![
            record("B", "2022-01-02", 0, Sex::M),
            record("A", "2022-01-03", 1, Sex::F),
            record("B", "2022-01-01", 0, Sex::M),
        ])
        .unwrap();
        let ids: Vec<_> = d.records().iter().map(|r| (r.participant_id.as_str(), r.date.to_string())).collect();
        assert_eq!(ids, vec![("A", "2022-01-03".into()), ("B", "2022-01-01".into()), ("B", "2022-01-02".into())]);
        assert_eq!(d.roster().len(), 2);
    }

    #[test]
    fn duplicate_day_is_rejected_by_name() {
        let err = Dataset::new(vec![record("A", "2022-01-01", 0, Sex::F), record("A", "2022-01-01", 1, Sex::F)]).unwrap_err();
        match err {
            Error::DuplicateRecord { participant, date } => {
                assert_eq!(participant, "A");
                assert_eq!(date, "2022-01-01");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn conflicting_sex_is_rejected() {
        assert!(Dataset::new(vec![record("A", "2022-01-01", 0, Sex::F), record("A", "2022-01-02", 0, Sex::M)]).is_err());
    }

    #[test]
    fn train_data_keys_follow_roster() {
        let d = Dataset::new(vec![record("A", "2022-01-01", 0, Sex::F), record("C", "2022-01-01", 1, Sex::M)]).unwrap();
        let roster = vec!["A".to_string(), "B".to_string(), "C".to_string()];
        let t = d.to_train_data(&roster).unwrap();
        assert_eq!(t.participants, vec![0, 2]);
        assert_eq!(t.labels, vec![0, 1]);
        assert!(matches!(d.to_train_data(&roster[..2]), Err(Error::Unrouted(_))));
    }
}
