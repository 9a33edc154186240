//! Table-shaped CSV and Markdown renderings of run reports.

use super::metrics::{Group, Metric};
use super::protocol::RunReport;

pub fn table_header() -> Vec<String> {
    let mut h = vec!["strategy".to_string()];
    for m in Metric::ALL {
        for g in Group::ALL {
            h.push(format!("{}_{}", m.label(), g.label()));
        }
    }
    h
}

/// `mean(std)` with two decimals.
pub fn format_cell(mean: f64, std: f64) -> String {
    format!("{mean:.2}({std:.2})")
}

fn row(report: &RunReport) -> Vec<String> {
    let mut r = vec![report.strategy.clone()];
    for m in Metric::ALL {
        for g in Group::ALL {
            let c = report.cell(m, g);
            r.push(format_cell(c.mean, c.std));
        }
    }
    r
}

pub fn table_csv(reports: &[RunReport]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(table_header()).expect("in-memory write");
    for rep in reports {
        w.write_record(row(rep)).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory write")).expect("utf-8")
}

pub fn table_markdown(reports: &[RunReport]) -> String {
    let mut out = String::from("| MLP |");
    for m in Metric::ALL {
        for g in Group::ALL {
            let cap = |s: &str| s[..1].to_uppercase() + &s[1..];
            out.push_str(&format!(" {} {} |", cap(m.label()), cap(g.label())));
        }
    }
    out.push('\n');
    out.push_str(&"|---".repeat(10));
    out.push_str("|\n");
    for rep in reports {
        out.push_str(&format!("| {} |", row(rep).join(" | ")));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_matches_table_layout() {
        let h = table_header();
        assert_eq!(h.len(), 10);
        assert_eq!(h[0], "strategy");
        assert_eq!(h[1], "precision_female");
        assert_eq!(h[3], "precision_overall");
        assert_eq!(h[4], "sensitivity_female");
        assert_eq!(h[9], "accuracy_overall");
    }

    #[test]
    fn cell_format() {
        assert_eq!(format_cell(48.923, 34.8449), "48.92(34.84)");
        assert_eq!(format_cell(0.0, 0.0), "0.00(0.00)");
    }
}
