//! Plot data: exact t-SNE of train and test rows coloured by elbow-epoch
//! loss, and per-participant loss histograms by cluster. Both can be written
//! as CSV or as a minimal standalone SVG.

pub mod histogram;
pub mod tsne;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

pub use histogram::{histogram_csv, participant_loss_histogram, HistogramSpec};
pub use tsne::{conditional_probabilities, joint_probabilities, kl_divergence, tsne_embed, Affinities, TsneConfig, TsneResult};

use crate::clustering::Standardizer;
use crate::data::Dataset;
use crate::nn::{softmax_cross_entropy, EpochTrace};
use crate::strategies::RoutingTable;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Per-row loss, or each participant's mean loss on its rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossColoring {
    #[default]
    PerSample,
    ParticipantMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingPoint {
    pub participant_id: String,
    pub date: NaiveDate,
    pub split: Split,
    pub x: f64,
    pub y: f64,
    pub loss: f64,
}

/// t-SNE of standardized train (and test) rows, coloured by loss at the
/// elbow epoch: traced training losses for train rows, losses under the
/// elbow snapshot for test rows.
pub fn elbow_embedding(
    train: &Dataset,
    test: Option<&Dataset>,
    routing: &RoutingTable,
    elbow_trace: &EpochTrace,
    config: &TsneConfig,
    coloring: LossColoring,
) -> Result<(Vec<EmbeddingPoint>, TsneResult)> {
    let snapshot = routing.snapshot.as_ref().ok_or_else(|| Error::Validation("routing table carries no elbow snapshot".into()))?;
    let record_losses = elbow_trace.record_losses();
    let mut rows = Vec::new();
    for (i, r) in train.records().iter().enumerate() {
        let loss = *record_losses.get(&i).ok_or_else(|| Error::Contract(format!("no traced loss for training row {i}")))?;
        rows.push((r, Split::Train, loss));
    }
    if let Some(test) = test.filter(|t| !t.is_empty()) {
        let (losses, _) = softmax_cross_entropy(&snapshot.params.logits(&test.feature_matrix())?, &test.labels())?;
        rows.extend(test.records().iter().zip(losses).map(|(r, l)| (r, Split::Test, l)));
    }
    if coloring == LossColoring::ParticipantMean {
        let mut acc: BTreeMap<(String, Split), (f64, usize)> = BTreeMap::new();
        for (r, s, l) in &rows {
            let e = acc.entry((r.participant_id.clone(), *s)).or_default();
            e.0 += l;
            e.1 += 1;
        }
        for (r, s, l) in rows.iter_mut() {
            let (sum, n) = acc[&(r.participant_id.clone(), *s)];
            *l = sum / n as f64;
        }
    }
    let train_rows: Vec<Vec<f64>> = train.records().iter().map(|r| r.features.to_vec()).collect();
    let standardizer = Standardizer::fit(&train_rows)?;
    let points: Vec<Vec<f64>> = rows.iter().map(|(r, _, _)| standardizer.apply_one(&r.features)).collect::<Result<_>>()?;
    let result = tsne_embed(&points, config)?;
    let out = rows
        .iter()
        .zip(&result.coords)
        .map(|((r, s, l), c)| EmbeddingPoint { participant_id: r.participant_id.clone(), date: r.date, split: *s, x: c[0], y: c[1], loss: *l })
        .collect();
    Ok((out, result))
}

/// `participant_id,date,split,x,y,loss`.
pub fn embedding_csv(points: &[EmbeddingPoint]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["participant_id", "date", "split", "x", "y", "loss"]).expect("in-memory write");
    for p in points {
        let split = match p.split {
            Split::Train => "train",
            Split::Test => "test",
        };
        w.write_record([p.participant_id.clone(), p.date.to_string(), split.to_string(), p.x.to_string(), p.y.to_string(), p.loss.to_string()])
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory write")).expect("utf-8")
}

/// Dark purple at 0, yellow at 1.
fn ramp(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", lerp(68.0, 253.0), lerp(1.0, 231.0), lerp(84.0, 37.0))
}

const CLUSTER_COLOURS: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

pub fn embedding_svg(points: &[EmbeddingPoint]) -> String {
    let (w, h, pad) = (640.0, 640.0, 20.0);
    let mut s = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n");
    s.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    if points.is_empty() {
        s.push_str("</svg>\n");
        return s;
    }
    let fold = |f: fn(&EmbeddingPoint) -> f64| {
        points.iter().map(f).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
    };
    let (x0, x1) = fold(|p| p.x);
    let (y0, y1) = fold(|p| p.y);
    let (l0, l1) = fold(|p| p.loss);
    let scale = |v: f64, lo: f64, hi: f64, size: f64| if hi > lo { pad + (v - lo) / (hi - lo) * (size - 2.0 * pad) } else { size / 2.0 };
    for p in points {
        let t = if l1 > l0 { (p.loss - l0) / (l1 - l0) } else { 0.0 };
        let shape = match p.split {
            Split::Train => "circle",
            Split::Test => "rect",
        };
        let (cx, cy) = (scale(p.x, x0, x1, w), h - scale(p.y, y0, y1, h));
        if shape == "circle" {
            let _ = writeln!(s, "<circle cx=\"{cx:.2}\" cy=\"{cy:.2}\" r=\"3\" fill=\"{}\"/>", ramp(t));
        } else {
            let _ = writeln!(s, "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"5\" height=\"5\" fill=\"{}\"/>", cx - 2.5, cy - 2.5, ramp(t));
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Stacked bars, one colour per cluster.
pub fn histogram_svg(h: &HistogramSpec) -> String {
    let (w, ht, pad) = (640.0, 400.0, 30.0);
    let mut s = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{ht}\" viewBox=\"0 0 {w} {ht}\">\n");
    s.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    let max = h.counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let bar_w = (w - 2.0 * pad) / h.bins() as f64;
    for (b, per) in h.cluster_counts.iter().enumerate() {
        let mut base = ht - pad;
        for (c, &n) in per.iter().enumerate() {
            if n == 0 {
                continue;
            }
            let bh = n as f64 / max * (ht - 2.0 * pad);
            base -= bh;
            let _ = writeln!(
                s,
                "<rect x=\"{:.2}\" y=\"{base:.2}\" width=\"{:.2}\" height=\"{bh:.2}\" fill=\"{}\"/>",
                pad + b as f64 * bar_w,
                bar_w * 0.9,
                CLUSTER_COLOURS[c % CLUSTER_COLOURS.len()]
            );
        }
    }
    let _ = writeln!(s, "<text x=\"{pad}\" y=\"{}\" font-size=\"12\">{:.4}</text>", ht - 8.0, h.edges[0]);
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"end\">{:.4}</text>", w - pad, ht - 8.0, h.edges[h.bins()]);
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SynthConfig};
    use crate::nn::TrainConfig;
    use crate::strategies::{route_by_loss, KChoice, RoutingOptions};

    #[test]
    fn embedding_rows_cover_train_and_test() {
        let d = synth_generate(&SynthConfig { participants: 6, days: 12, ..SynthConfig::default() }).unwrap().dataset;
        let (train, test) = crate::data::temporal_split(&d, "2021-07-06".parse().unwrap());
        let cfg = TrainConfig { epochs: 5, ..TrainConfig::default() };
        let lr = route_by_loss(&train, Some(&test), &cfg, KChoice::Fixed(2), &RoutingOptions::default()).unwrap();
        let elbow = lr.table.elbow.as_ref().unwrap().epoch;
        let ts = TsneConfig { perplexity: 5.0, iterations: 100, ..TsneConfig::default() };
        let (pts, _) = elbow_embedding(&train, Some(&test), &lr.table, &lr.traces[elbow - 1], &ts, LossColoring::PerSample).unwrap();
        assert_eq!(pts.len(), d.len());
        assert!(pts.iter().all(|p| p.x.is_finite() && p.loss >= 0.0));
        let csv = embedding_csv(&pts);
        assert_eq!(csv.lines().next(), Some("participant_id,date,split,x,y,loss"));
        assert!(embedding_svg(&pts).contains("<circle"));
        let (means, _) = elbow_embedding(&train, Some(&test), &lr.table, &lr.traces[elbow - 1], &ts, LossColoring::ParticipantMean).unwrap();
        let first = &means[0];
        assert!(means.iter().filter(|p| p.participant_id == first.participant_id && p.split == first.split).all(|p| p.loss == first.loss));
    }

    #[test]
    fn ramp_endpoints() {
        assert_eq!(ramp(0.0), "#440154");
        assert_eq!(ramp(1.0), "#fde725");
    }
}
