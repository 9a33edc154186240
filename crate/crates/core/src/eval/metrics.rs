use std::ops::Add;

use serde::{Deserialize, Serialize};

use crate::data::Sex;
use crate::{Error, Result};

/// Confusion counts with label 1 as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

impl Add for Confusion {
    type Output = Confusion;

    fn add(self, o: Confusion) -> Confusion {
        Confusion { tp: self.tp + o.tp, fp: self.fp + o.fp, fn_: self.fn_ + o.fn_, tn: self.tn + o.tn }
    }
}

pub fn confusion_counts(predictions: &[u8], labels: &[u8]) -> Result<Confusion> {
    if predictions.len() != labels.len() {
        return Err(Error::Validation(format!("{} predictions for {} labels", predictions.len(), labels.len())));
    }
    let mut c = Confusion::default();
    for (&p, &y) in predictions.iter().zip(labels) {
        match (p, y) {
            (1, 1) => c.tp += 1,
            (1, 0) => c.fp += 1,
            (0, 1) => c.fn_ += 1,
            (0, 0) => c.tn += 1,
            _ => return Err(Error::Validation(format!("prediction {p} / label {y} outside {{0,1}}"))),
        }
    }
    Ok(c)
}

/// Percentages in `[0, 100]`. A 0/0 ratio is reported as 0 and flagged.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub sensitivity: f64,
    pub accuracy: f64,
    pub precision_zero_division: bool,
    pub sensitivity_zero_division: bool,
    /// The group had no rows; every metric is 0.
    pub empty: bool,
}

impl Metrics {
    pub fn get(&self, m: Metric) -> f64 {
        match m {
            Metric::Precision => self.precision,
            Metric::Sensitivity => self.sensitivity,
            Metric::Accuracy => self.accuracy,
        }
    }

    pub fn flagged(&self) -> bool {
        self.precision_zero_division || self.sensitivity_zero_division || self.empty
    }
}

fn pct(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (100.0 * num as f64 / den as f64, false)
    }
}

pub fn metrics_from_confusion(c: &Confusion) -> Result<Metrics> {
    if c.total() == 0 {
        return Err(Error::Validation("metrics of an empty confusion matrix".into()));
    }
    let (precision, pz) = pct(c.tp, c.tp + c.fp);
    let (sensitivity, sz) = pct(c.tp, c.tp + c.fn_);
    let (accuracy, _) = pct(c.tp + c.tn, c.total());
    Ok(Metrics { precision, sensitivity, accuracy, precision_zero_division: pz, sensitivity_zero_division: sz, empty: false })
}

/// Metrics of a possibly empty group: empty gives all zeros, flagged.
pub fn group_metrics(c: &Confusion) -> Metrics {
    if c.total() == 0 {
        Metrics { empty: true, ..Metrics::default() }
    } else {
        metrics_from_confusion(c).expect("non-empty")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Precision,
    Sensitivity,
    Accuracy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Female,
    Male,
    Overall,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Precision, Metric::Sensitivity, Metric::Accuracy];

    pub fn label(self) -> &'static str {
        match self {
            Metric::Precision => "precision",
            Metric::Sensitivity => "sensitivity",
            Metric::Accuracy => "accuracy",
        }
    }
}

impl Group {
    pub const ALL: [Group; 3] = [Group::Female, Group::Male, Group::Overall];

    pub fn label(self) -> &'static str {
        match self {
            Group::Female => "female",
            Group::Male => "male",
            Group::Overall => "overall",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub female: Metrics,
    pub male: Metrics,
    pub overall: Metrics,
    pub female_confusion: Confusion,
    pub male_confusion: Confusion,
    pub overall_confusion: Confusion,
}

impl GroupMetrics {
    pub fn get(&self, g: Group) -> &Metrics {
        match g {
            Group::Female => &self.female,
            Group::Male => &self.male,
            Group::Overall => &self.overall,
        }
    }

    pub fn confusion(&self, g: Group) -> Confusion {
        match g {
            Group::Female => self.female_confusion,
            Group::Male => self.male_confusion,
            Group::Overall => self.overall_confusion,
        }
    }

    pub fn from_confusions(female: Confusion, male: Confusion) -> Self {
        let overall = female + male;
        Self {
            female: group_metrics(&female),
            male: group_metrics(&male),
            overall: group_metrics(&overall),
            female_confusion: female,
            male_confusion: male,
            overall_confusion: overall,
        }
    }
}

/// Metrics for female rows, male rows and all rows, each computed on its own.
pub fn grouped_metrics(predictions: &[u8], labels: &[u8], sexes: &[Sex]) -> Result<GroupMetrics> {
    if predictions.len() != labels.len() || labels.len() != sexes.len() {
        return Err(Error::Validation(format!(
            "misaligned inputs: {} predictions, {} labels, {} sexes",
            predictions.len(),
            labels.len(),
            sexes.len()
        )));
    }
    let pick = |want: Sex| -> Result<Confusion> {
        let (p, y): (Vec<u8>, Vec<u8>) =
            predictions.iter().zip(labels).zip(sexes).filter(|(_, &s)| s == want).map(|((&p, &y), _)| (p, y)).unzip();
        confusion_counts(&p, &y)
    };
    Ok(GroupMetrics::from_confusions(pick(Sex::F)?, pick(Sex::M)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_counted_fixture() {
        let preds = [1, 1, 1, 0, 0, 0, 0, 0, 0, 0];
        let labels = [1, 0, 1, 1, 0, 0, 0, 0, 0, 0];
        let c = confusion_counts(&preds, &labels).unwrap();
        assert_eq!(c, Confusion { tp: 2, fp: 1, fn_: 1, tn: 6 });
        let m = metrics_from_confusion(&c).unwrap();
        assert_eq!(format!("{:.2} {:.2} {:.2}", m.precision, m.sensitivity, m.accuracy), "66.67 66.67 80.00");
        assert!(!m.flagged());
    }

    #[test]
    fn trivial_confusions() {
        assert_eq!(confusion_counts(&[0, 0, 0, 0], &[1, 1, 1, 1]).unwrap().fn_, 4);
        let c = confusion_counts(&[1, 0, 1], &[1, 0, 1]).unwrap();
        assert_eq!((c.fp, c.fn_), (0, 0));
        let m = metrics_from_confusion(&c).unwrap();
        assert_eq!((m.precision, m.sensitivity, m.accuracy), (100.0, 100.0, 100.0));
        assert!(confusion_counts(&[1], &[1, 0]).is_err());
    }

    #[test]
    fn zero_division_is_zero_and_flagged() {
        let m = metrics_from_confusion(&Confusion { tp: 0, fp: 0, fn_: 3, tn: 5 }).unwrap();
        assert_eq!(m.precision, 0.0);
        assert!(m.precision_zero_division && !m.sensitivity_zero_division);
        let m = metrics_from_confusion(&Confusion { tp: 0, fp: 2, fn_: 0, tn: 5 }).unwrap();
        assert_eq!(m.sensitivity, 0.0);
        assert!(m.sensitivity_zero_division);
        assert!(metrics_from_confusion(&Confusion::default()).is_err());
    }

    #[test]
    fn all_male_rows() {
        let g = grouped_metrics(&[1, 0, 1], &[1, 0, 0], &[Sex::M; 3]).unwrap();
        assert!(g.female.empty);
        assert_eq!((g.female.precision, g.female.sensitivity, g.female.accuracy), (0.0, 0.0, 0.0));
        assert_eq!(g.overall.precision, g.male.precision);
        assert_eq!(g.overall.accuracy, g.male.accuracy);
    }

    #[test]
    fn missed_female_positives_pull_overall_between() {
        // Male: 2 positives found. Female: 2 positives missed.
        let preds = [1, 1, 0, 0, 0, 0];
        let labels = [1, 1, 0, 1, 1, 0];
        let sexes = [Sex::M, Sex::M, Sex::M, Sex::F, Sex::F, Sex::F];
        let g = grouped_metrics(&preds, &labels, &sexes).unwrap();
        assert_eq!(g.male.sensitivity, 100.0);
        assert_eq!(g.female.sensitivity, 0.0);
        assert_eq!(g.overall.sensitivity, 50.0);
        // Female precision is 0/0 and flagged; overall precision is 100.
        assert!(g.female.precision_zero_division);
        assert_eq!(g.overall.precision, 100.0);
        assert_eq!(g.overall_confusion, g.female_confusion + g.male_confusion);
    }

    #[test]
    fn symmetric_groups_agree() {
        let preds = [1, 0, 1, 0];
        let labels = [1, 1, 1, 1];
        let g = grouped_metrics(&preds, &labels, &[Sex::F, Sex::F, Sex::M, Sex::M]).unwrap();
        assert_eq!(g.female, g.male);
        assert_eq!(g.female.sensitivity, g.overall.sensitivity);
    }
}
