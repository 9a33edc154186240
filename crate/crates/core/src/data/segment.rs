//! Gap segmentation and positive-label window expansion.

use std::collections::BTreeMap;

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use super::record::{Dataset, Record};
use crate::{Error, Result};

/// Segments shorter than this many days are discarded.
pub const MIN_SEGMENT_DAYS: usize = 3;
/// A confirmed day marks this many days on either side as positive.
pub const LABEL_HALF_WINDOW_DAYS: i64 = 3;

/// Consecutive days of one participant.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub participant_id: String,
    pub records: Vec<Record>,
}

impl Segment {
    pub fn start(&self) -> NaiveDate {
        self.records[0].date
    }

    pub fn end(&self) -> NaiveDate {
        self.records[self.records.len() - 1].date
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn contains(&self, day: NaiveDate) -> bool {
        day >= self.start() && day <= self.end()
    }

    pub fn days(&self) -> Vec<NaiveDate> {
        self.records.iter().map(|r| r.date).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SegmentationStats {
    pub kept_segments: usize,
    pub dropped_segments: usize,
    pub dropped_records: usize,
}

/// Split each participant's days wherever consecutive records are two or more
/// days apart, discarding segments shorter than [`MIN_SEGMENT_DAYS`].
pub fn segment_by_gaps(dataset: &Dataset) -> (Vec<Segment>, SegmentationStats) {
    let mut segments = Vec::new();
    let mut stats = SegmentationStats::default();
    let flush = |run: Vec<Record>, segments: &mut Vec<Segment>, stats: &mut SegmentationStats| {
        if run.is_empty() {
            return;
        }
        if run.len() >= MIN_SEGMENT_DAYS {
            stats.kept_segments += 1;
            segments.push(Segment { participant_id: run[0].participant_id.clone(), records: run });
        } else {
            stats.dropped_segments += 1;
            stats.dropped_records += run.len();
        }
    };
    // Records are sorted by (participant, date).
    let mut run: Vec<Record> = Vec::new();
    for r in dataset.records() {
        let continues = run
            .last()
            .is_some_and(|prev| prev.participant_id == r.participant_id && (r.date - prev.date).num_days() <= 1);
        if !continues {
            flush(std::mem::take(&mut run), &mut segments, &mut stats);
        }
        run.push(r.clone());
    }
    flush(run, &mut segments, &mut stats);
    (segments, stats)
}

/// Reset the segment's labels and mark every day within
/// [`LABEL_HALF_WINDOW_DAYS`] of a confirmed day positive, clipped to the
/// segment. Windows from nearby confirmed days merge.
pub fn expand_labels(segment: &Segment, confirmed_days: &[NaiveDate]) -> Result<Segment> {
    if let Some(d) = confirmed_days.iter().find(|d| !segment.contains(**d)) {
        return Err(Error::Validation(format!(
            "confirmed day {d} lies outside segment {}..{} of {}",
            segment.start(),
            segment.end(),
            segment.participant_id
        )));
    }
    let half = Duration::days(LABEL_HALF_WINDOW_DAYS);
    let mut out = segment.clone();
    for r in &mut out.records {
        r.label = u8::from(confirmed_days.iter().any(|&c| r.date >= c - half && r.date <= c + half));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LabelPipelineStats {
    pub segmentation: SegmentationStats,
    /// Confirmed days that fell outside every kept segment.
    pub unmatched_confirmed: usize,
    pub positive_records: usize,
}

/// Segment, then (when confirmed days are given) expand labels inside each
/// kept segment. Without confirmed days the existing row labels are kept.
pub fn label_pipeline(dataset: &Dataset, confirmed: Option<&BTreeMap<String, Vec<NaiveDate>>>) -> Result<(Dataset, LabelPipelineStats)> {
    let (segments, segmentation) = segment_by_gaps(dataset);
    let mut stats = LabelPipelineStats { segmentation, ..Default::default() };
    let mut records = Vec::new();
    let mut matched = 0;
    for seg in segments {
        let seg = match confirmed {
            Some(map) => {
                let days: Vec<NaiveDate> = map
                    .get(&seg.participant_id)
                    .map(|d| d.iter().copied().filter(|d| seg.contains(*d)).collect())
                    .unwrap_or_default();
                matched += days.len();
                expand_labels(&seg, &days)?
            }
            None => seg,
        };
        records.extend(seg.records);
    }
    if let Some(map) = confirmed {
        stats.unmatched_confirmed = map.values().map(Vec::len).sum::<usize>() - matched;
    }
    let out = Dataset::new(records)?;
    stats.positive_records = out.records().iter().filter(|r| r.label == 1).count();
    Ok((out, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::record::{record, Sex};

    fn day(n: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2022, 1, n).unwrap()
    }

    fn participant(days: &[u32]) -> Dataset {
        Dataset::new(days.iter().map(|&d| record("P", &day(d).to_string(), 0, Sex::F)).collect()).unwrap()
    }

    fn segment(first: u32, last: u32) -> Segment {
        let d = participant(&(first..=last).collect::<Vec<_>>());
        Segment { participant_id: "P".into(), records: d.records().to_vec() }
    }

    fn positives(s: &Segment) -> Vec<u32> {
        use chrono::Datelike;
        s.records.iter().filter(|r| r.label == 1).map(|r| r.date.day()).collect()
    }

    #[test]
    fn gap_splits_segments() {
        let (segs, stats) = segment_by_gaps(&participant(&[1, 2, 3, 5, 6, 7, 8]));
        let spans: Vec<_> = segs.iter().map(|s| (s.start(), s.end())).collect();
        assert_eq!(spans, vec![(day(1), day(3)), (day(5), day(8))]);
        assert_eq!(stats.dropped_segments, 0);
    }

    #[test]
    fn short_runs_are_dropped() {
        let (segs, stats) = segment_by_gaps(&participant(&[1, 2]));
        assert!(segs.is_empty());
        assert_eq!((stats.dropped_segments, stats.dropped_records), (1, 2));
    }

    #[test]
    fn consecutive_days_form_one_segment() {
        let (segs, _) = segment_by_gaps(&participant(&(1..=10).collect::<Vec<_>>()));
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].len(), 10);
    }

    #[test]
    fn participants_never_share_a_segment() {
        let d = Dataset::new(vec![
            record("A", "2022-01-01", 0, Sex::F),
            record("A", "2022-01-02", 0, Sex::F),
            record("A", "2022-01-03", 0, Sex::F),
            record("B", "2022-01-04", 0, Sex::M),
            record("B", "2022-01-05", 0, Sex::M),
            record("B", "2022-01-06", 0, Sex::M),
        ])
        .unwrap();
        assert_eq!(segment_by_gaps(&d).0.len(), 2);
    }

    #[test]
    fn one_confirmed_day_becomes_seven() {
        let s = expand_labels(&segment(5, 20), &[day(10)]).unwrap();
        assert_eq!(positives(&s), (7..=13).collect::<Vec<_>>());
    }

    #[test]
    fn window_clips_at_segment_start() {
        let s = expand_labels(&segment(1, 10), &[day(1)]).unwrap();
        assert_eq!(positives(&s), vec![1, 2, 3, 4]);
    }

    #[test]
    fn overlapping_windows_union() {
        let s = expand_labels(&segment(1, 25), &[day(10), day(12)]).unwrap();
        assert_eq!(positives(&s), (7..=15).collect::<Vec<_>>());
    }

    #[test]
    fn confirmed_day_outside_segment_errors() {
        assert!(expand_labels(&segment(5, 10), &[day(11)]).is_err());
    }

    #[test]
    fn pipeline_expands_within_kept_segments() {
        let d = participant(&[1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 20, 21]);
        let confirmed = BTreeMap::from([("P".to_string(), vec![day(5), day(21)])]);
        let (out, stats) = label_pipeline(&d, Some(&confirmed)).unwrap();
        assert_eq!(out.len(), 10);
        assert_eq!(stats.unmatched_confirmed, 1);
        assert_eq!(stats.positive_records, 7);
    }
}
