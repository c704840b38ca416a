//! Tabular reports: transfer tables (horizon rows, strategy columns) and
//! baseline tables (model rows, per-horizon MAE/RMSE/R² columns).

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{format_rate, improving_rate, Scores};
use crate::error::{Error, Result};

/// Known result producers, in report order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Producer {
    Base,
    FT,
    FTF,
    SB,
    OneStep,
    HA,
    VAR,
    RF,
}

impl Producer {
    pub const ALL: [Producer; 8] = [
        Producer::Base,
        Producer::FT,
        Producer::FTF,
        Producer::SB,
        Producer::OneStep,
        Producer::HA,
        Producer::VAR,
        Producer::RF,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Producer::Base => "Base",
            Producer::FT => "FT",
            Producer::FTF => "FTF",
            Producer::SB => "SB",
            Producer::OneStep => "OneStep",
            Producer::HA => "HA",
            Producer::VAR => "VAR",
            Producer::RF => "RF",
        }
    }

    pub fn parse(label: &str) -> Option<Producer> {
        Producer::ALL.into_iter().find(|p| p.label() == label)
    }

    /// Name used in the baseline comparison table.
    pub fn display_name(self) -> &'static str {
        match self {
            Producer::Base => "LSTM-Base",
            Producer::FT => "LSTM-FT",
            Producer::FTF => "LSTM-FTF",
            Producer::SB => "LSTM-SB",
            Producer::OneStep => "One Step",
            Producer::HA => "HA",
            Producer::VAR => "VAR",
            Producer::RF => "RF",
        }
    }

    pub fn is_transfer_variant(self) -> bool {
        matches!(self, Producer::FT | Producer::FTF | Producer::SB)
    }

    /// Row order of the baseline table: classical models first.
    fn baseline_table_rank(self) -> usize {
        match self {
            Producer::OneStep => 0,
            Producer::HA => 1,
            Producer::VAR => 2,
            Producer::RF => 3,
            Producer::Base => 4,
            Producer::FT => 5,
            Producer::FTF => 6,
            Producer::SB => 7,
        }
    }
}

/// One line of the JSON/CSV report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub mode: String,
    pub horizon_minutes: u32,
    pub producer: String,
    pub mae: f64,
    pub rmse: f64,
    pub r2: Option<f64>,
    pub improving_rate_vs: Option<String>,
    pub improving_rate_pct: Option<f64>,
    pub n_stations: usize,
    pub n_targets: usize,
    pub seed: u64,
    pub config_hash: String,
}

impl MetricsRow {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        mode: impl Into<String>,
        horizon_minutes: u32,
        producer: Producer,
        scores: Scores,
        n_stations: usize,
        n_targets: usize,
        seed: u64,
        config_hash: impl Into<String>,
    ) -> Self {
        Self {
            mode: mode.into(),
            horizon_minutes,
            producer: producer.label().to_string(),
            mae: scores.mae,
            rmse: scores.rmse,
            r2: scores.r2,
            improving_rate_vs: None,
            improving_rate_pct: None,
            n_stations,
            n_targets,
            seed,
            config_hash: config_hash.into(),
        }
    }

    fn producer_key(&self) -> (usize, String) {
        match Producer::parse(&self.producer) {
            Some(p) => (p as usize, String::new()),
            None => (usize::MAX, self.producer.clone()),
        }
    }
}

/// Fills improving rates of FT/FTF/SB rows against the same-mode,
/// same-horizon Base row.
pub fn attach_improving_rates(rows: &mut [MetricsRow]) -> Result<()> {
    let bases: Vec<(String, u32, f64)> = rows
        .iter()
        .filter(|r| r.producer == Producer::Base.label())
        .map(|r| (r.mode.clone(), r.horizon_minutes, r.mae))
        .collect();
    for row in rows.iter_mut() {
        let is_variant = Producer::parse(&row.producer).is_some_and(Producer::is_transfer_variant);
        if !is_variant {
            continue;
        }
        if let Some((_, _, base)) = bases
            .iter()
            .find(|(m, h, _)| *m == row.mode && *h == row.horizon_minutes)
        {
            row.improving_rate_pct = Some(improving_rate(*base, row.mae)?);
            row.improving_rate_vs = Some(Producer::Base.label().to_string());
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportLayout {
    Transfer,
    Baselines,
    #[default]
    Both,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedReport {
    pub text: String,
    pub json: String,
    pub csv: String,
}

fn sorted_rows(rows: &[MetricsRow]) -> Vec<MetricsRow> {
    let mut rows = rows.to_vec();
    rows.sort_by(|a, b| {
        (&a.mode, a.horizon_minutes, a.producer_key()).cmp(&(
            &b.mode,
            b.horizon_minutes,
            b.producer_key(),
        ))
    });
    rows
}

fn find<'a>(
    rows: &'a [MetricsRow],
    mode: &str,
    horizon: u32,
    producer: &str,
) -> Option<&'a MetricsRow> {
    rows.iter()
        .find(|r| r.mode == mode && r.horizon_minutes == horizon && r.producer == producer)
}

fn cell(value: Option<f64>) -> String {
    value.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"))
}

fn transfer_table(out: &mut String, rows: &[MetricsRow], mode: &str) {
    let horizons: BTreeSet<u32> = rows
        .iter()
        .filter(|r| r.mode == mode)
        .map(|r| r.horizon_minutes)
        .collect();
    let variants: Vec<Producer> = [Producer::FT, Producer::FTF, Producer::SB]
        .into_iter()
        .filter(|p| {
            rows.iter()
                .any(|r| r.mode == mode && r.producer == p.label())
        })
        .collect();
    let has_base = rows
        .iter()
        .any(|r| r.mode == mode && r.producer == Producer::Base.label());
    if !has_base && variants.is_empty() {
        return;
    }
    let _ = writeln!(out, "Transfer learning results, target mode: {mode}");
    let mut head1 = format!("{:<8}{:>10}", "Period", "LSTM-Base");
    let mut head2 = format!("{:<8}{:>10}", "", "MAE");
    for v in &variants {
        let _ = write!(head1, "{:>10}{:>16}", v.label(), "");
        let _ = write!(head2, "{:>10}{:>16}", "MAE", "Improving rate");
    }
    let _ = writeln!(out, "{}", head1.trim_end());
    let _ = writeln!(out, "{head2}");
    for h in horizons {
        let base = find(rows, mode, h, Producer::Base.label()).map(|r| r.mae);
        let mut line = format!("{:<8}{:>10}", format!("{h}min"), cell(base));
        for v in &variants {
            let row = find(rows, mode, h, v.label());
            let rate = row
                .and_then(|r| r.improving_rate_pct)
                .map_or_else(|| "-".to_string(), format_rate);
            let _ = write!(line, "{:>10}{:>16}", cell(row.map(|r| r.mae)), rate);
        }
        let _ = writeln!(out, "{line}");
    }
    out.push('\n');
}

fn baseline_table(out: &mut String, rows: &[MetricsRow], mode: &str) {
    let horizons: BTreeSet<u32> = rows
        .iter()
        .filter(|r| r.mode == mode)
        .map(|r| r.horizon_minutes)
        .collect();
    let mut producers: Vec<(usize, String, String)> = rows
        .iter()
        .filter(|r| r.mode == mode)
        .map(|r| match Producer::parse(&r.producer) {
            Some(p) => (
                p.baseline_table_rank(),
                r.producer.clone(),
                p.display_name().to_string(),
            ),
            None => (usize::MAX, r.producer.clone(), r.producer.clone()),
        })
        .collect();
    producers.sort();
    producers.dedup();

    let _ = writeln!(out, "Prediction results of different models, mode: {mode}");
    let mut head1 = format!("{:<12}", "Model");
    let mut head2 = format!("{:<12}", "");
    for h in &horizons {
        let _ = write!(head1, "{:>10}{:>10}{:>10}", format!("{h}min"), "", "");
        let _ = write!(head2, "{:>10}{:>10}{:>10}", "MAE", "RMSE", "R2");
    }
    let _ = writeln!(out, "{}", head1.trim_end());
    let _ = writeln!(out, "{head2}");
    for (_, label, display) in &producers {
        let mut line = format!("{display:<12}");
        for &h in &horizons {
            match find(rows, mode, h, label) {
                Some(r) => {
                    let r2 =
                        r.r2.map_or_else(|| "n/a".to_string(), |v| format!("{v:.3}"));
                    let _ = write!(
                        line,
                        "{:>10}{:>10}{:>10}",
                        format!("{:.3}", r.mae),
                        format!("{:.3}", r.rmse),
                        r2
                    );
                }
                None => {
                    let _ = write!(line, "{:>10}{:>10}{:>10}", "-", "-", "-");
                }
            }
        }
        let _ = writeln!(out, "{line}");
    }
    out.push('\n');
}

fn csv_field(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

/// Renders rows as aligned text tables, pretty JSON and CSV.
///
/// JSON and CSV carry full precision; the text tables show three decimals and
/// one-decimal improving rates.
pub fn render_report(rows: &[MetricsRow], layout: ReportLayout) -> Result<RenderedReport> {
    if rows.is_empty() {
        return Err(Error::data("no results to report"));
    }
    let rows = sorted_rows(rows);
    let modes: BTreeSet<&str> = rows.iter().map(|r| r.mode.as_str()).collect();

    let mut text = String::new();
    if matches!(layout, ReportLayout::Transfer | ReportLayout::Both) {
        for mode in &modes {
            transfer_table(&mut text, &rows, mode);
        }
    }
    if matches!(layout, ReportLayout::Baselines | ReportLayout::Both) {
        for mode in &modes {
            baseline_table(&mut text, &rows, mode);
        }
    }

    let mut json = serde_json::to_string_pretty(&rows)?;
    json.push('\n');

    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record([
        "mode",
        "horizon_minutes",
        "producer",
        "mae",
        "rmse",
        "r2",
        "improving_rate_vs",
        "improving_rate_pct",
        "n_stations",
        "n_targets",
        "seed",
        "config_hash",
    ])?;
    for r in &rows {
        writer.write_record([
            r.mode.clone(),
            r.horizon_minutes.to_string(),
            r.producer.clone(),
            format!("{:?}", r.mae),
            format!("{:?}", r.rmse),
            csv_field(r.r2),
            r.improving_rate_vs.clone().unwrap_or_default(),
            csv_field(r.improving_rate_pct),
            r.n_stations.to_string(),
            r.n_targets.to_string(),
            r.seed.to_string(),
            r.config_hash.clone(),
        ])?;
    }
    let csv = String::from_utf8(
        writer
            .into_inner()
            .map_err(|e| Error::Internal(e.to_string()))?,
    )
    .map_err(|e| Error::Internal(e.to_string()))?;
    Ok(RenderedReport { text, json, csv })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(mode: &str, h: u32, p: Producer, mae: f64) -> MetricsRow {
        MetricsRow::new(
            mode,
            h,
            p,
            Scores {
                mae,
                rmse: mae * 2.0,
                r2: Some(0.5),
            },
            10,
            20,
            7,
            "abc",
        )
    }

    fn two_mode_rows() -> Vec<MetricsRow> {
        let mut rows = Vec::new();
        for mode in ["taxi", "bike"] {
            for (k, h) in [60, 15, 45, 30].into_iter().enumerate() {
                let base = 1.0 + k as f64;
                rows.push(row(mode, h, Producer::FT, base * 0.9));
                rows.push(row(mode, h, Producer::Base, base));
                rows.push(row(mode, h, Producer::SB, base * 1.2));
                rows.push(row(mode, h, Producer::HA, base * 1.1));
            }
        }
        attach_improving_rates(&mut rows).unwrap();
        rows
    }

    #[test]
    fn two_modes_four_horizons() {
        let report = render_report(&two_mode_rows(), ReportLayout::Transfer).unwrap();
        let blocks: Vec<&str> = report
            .text
            .split("Transfer learning results")
            .skip(1)
            .collect();
        assert_eq!(blocks.len(), 2);
        for block in blocks {
            let data: Vec<&str> = block.lines().filter(|l| l.contains("min ")).collect();
            assert_eq!(data.len(), 4, "{block}");
            assert!(data[0].starts_with("15min"));
            assert!(data[3].starts_with("60min"));
        }
        assert!(report.text.contains("10.0%"));
        assert!(report.text.contains("-20.0%"));
    }

    #[test]
    fn single_horizon_single_row() {
        let mut rows = vec![
            row("bike", 15, Producer::Base, 0.206),
            row("bike", 15, Producer::FT, 0.161),
        ];
        attach_improving_rates(&mut rows).unwrap();
        let report = render_report(&rows, ReportLayout::Transfer).unwrap();
        let data: Vec<&str> = report
            .text
            .lines()
            .filter(|l| l.starts_with("15min"))
            .collect();
        assert_eq!(data.len(), 1);
        assert!(
            data[0].contains("0.206") && data[0].contains("0.161") && data[0].contains("21.8%")
        );
        assert!(!report.text.contains("30min"));
    }

    #[test]
    fn json_and_text_agree() {
        let report = render_report(&two_mode_rows(), ReportLayout::Both).unwrap();
        let parsed: Vec<MetricsRow> = serde_json::from_str(&report.json).unwrap();
        assert_eq!(parsed.len(), 32);
        for r in &parsed {
            assert!(report.text.contains(&format!("{:.3}", r.mae)));
            assert!(report.text.contains(&format!("{:.3}", r.rmse)));
            if let Some(p) = r.improving_rate_pct {
                assert!(report.text.contains(&format_rate(p)));
            }
        }
        assert_eq!(report.csv.lines().count(), 33);
        // Deterministic order: modes sorted, then horizon, then producer.
        assert_eq!(parsed[0].mode, "bike");
        assert_eq!(parsed[0].horizon_minutes, 15);
        assert_eq!(parsed[0].producer, "Base");
    }

    #[test]
    fn improving_rates_only_for_variants() {
        let rows = two_mode_rows();
        for r in &rows {
            let expect = matches!(r.producer.as_str(), "FT" | "SB");
            assert_eq!(r.improving_rate_pct.is_some(), expect, "{r:?}");
        }
    }

    #[test]
    fn empty_input_errors() {
        assert!(render_report(&[], ReportLayout::Both).is_err());
    }

    #[test]
    fn baseline_table_lists_models() {
        let report = render_report(&two_mode_rows(), ReportLayout::Baselines).unwrap();
        let first = report.text.split("\n\n").next().unwrap();
        let names: Vec<&str> = first
            .lines()
            .skip(3)
            .map(|l| l.split_whitespace().next().unwrap())
            .collect();
        assert_eq!(names, vec!["HA", "LSTM-Base", "LSTM-FT", "LSTM-SB"]);
    }
}
