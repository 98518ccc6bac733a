//! Separation between the atypical and noisy rank distributions.
//!
//! The headline scalar is the rank-form AUROC: the probability that a
//! uniformly drawn atypical example out-ranks a uniformly drawn noisy one,
//! ties counting one half. It is computed exactly from integer pair counts.

use std::fmt::Write as _;
use std::io::Write;

use crate::dataset::Tag;
use crate::error::{Error, Result};
use crate::tracking::{EpochRow, RankTable};

pub const REPORT_HEADER: &str =
    "epoch,auroc,iqr_overlap,atypical_q1,atypical_med,atypical_q3,noisy_q1,noisy_med,noisy_q3";
pub const COMPARISON_HEADER: &str = "epoch,variant,auroc,iqr_overlap";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubsetSummary {
    pub epoch: usize,
    pub tag: Tag,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
}

/// Inclusive linear-interpolation quantile of an ascending slice.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn members<T: Copy>(values: &[T], tags: &[Tag], tag: Tag) -> Vec<T> {
    values
        .iter()
        .zip(tags)
        .filter(|(_, &t)| t == tag)
        .map(|(&v, _)| v)
        .collect()
}

/// Quartiles of the ranks of one stratum.
pub fn subset_summary(epoch: usize, ranks: &[usize], tags: &[Tag], tag: Tag) -> Result<SubsetSummary> {
    if ranks.len() != tags.len() {
        return Err(Error::contract("rank row and tag list differ in length"));
    }
    let mut values: Vec<f64> = members(ranks, tags, tag).into_iter().map(|r| r as f64).collect();
    if values.is_empty() {
        return Err(Error::contract(format!("no {tag} examples")));
    }
    values.sort_by(f64::total_cmp);
    Ok(SubsetSummary {
        epoch,
        tag,
        min: values[0],
        q1: quantile(&values, 0.25),
        median: quantile(&values, 0.5),
        q3: quantile(&values, 0.75),
        max: values[values.len() - 1],
        mean: values.iter().sum::<f64>() / values.len() as f64,
    })
}

/// Twice the Mann-Whitney count of `positive > negative` pairs (ties
/// count once), and the number of pairs.
fn doubled_wins<T: PartialOrd + Copy>(positive: &[T], negative: &[T]) -> (u64, u64) {
    let mut neg = negative.to_vec();
    neg.sort_by(|a, b| a.partial_cmp(b).expect("comparable values"));
    let wins = positive
        .iter()
        .map(|p| {
            let below = neg.partition_point(|n| n < p);
            let tied = neg[below..].partition_point(|n| n <= p);
            2 * below as u64 + tied as u64
        })
        .sum();
    (wins, positive.len() as u64 * negative.len() as u64)
}

/// Exact AUROC of `positive` scores against `negative` scores.
pub fn auroc_between<T: PartialOrd + Copy>(positive: &[T], negative: &[T]) -> Result<f64> {
    if positive.is_empty() || negative.is_empty() {
        return Err(Error::contract("AUROC needs both groups non-empty"));
    }
    let (wins, pairs) = doubled_wins(positive, negative);
    Ok(wins as f64 / (2 * pairs) as f64)
}

/// AUROC with atypical ranks as positives and noisy ranks as negatives.
pub fn auroc(ranks: &[usize], tags: &[Tag]) -> Result<f64> {
    if ranks.len() != tags.len() {
        return Err(Error::contract("rank row and tag list differ in length"));
    }
    let atypical = members(ranks, tags, Tag::Atypical);
    let noisy = members(ranks, tags, Tag::Noisy);
    if atypical.is_empty() || noisy.is_empty() {
        return Err(Error::contract(
            "AUROC needs both atypical and noisy examples",
        ));
    }
    auroc_between(&atypical, &noisy)
}

/// Length of the intersection of the two interquartile intervals, over `n`.
pub fn iqr_overlap(a: &SubsetSummary, b: &SubsetSummary, n: usize) -> f64 {
    let overlap = a.q3.min(b.q3) - a.q1.max(b.q1);
    overlap.max(0.0) / n as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeparationRow {
    pub epoch: usize,
    pub auroc: f64,
    pub iqr_overlap: f64,
    pub atypical: SubsetSummary,
    pub noisy: SubsetSummary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeparationReport {
    pub n: usize,
    pub rows: Vec<SeparationRow>,
}

impl SeparationReport {
    pub fn final_row(&self) -> &SeparationRow {
        self.rows.last().expect("report has at least one epoch")
    }

    pub fn write_csv(&self, mut out: impl Write, metadata: &[(String, String)]) -> std::io::Result<()> {
        for (k, v) in metadata {
            writeln!(out, "# {k}={v}")?;
        }
        writeln!(out, "{REPORT_HEADER}")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{:.6},{:.6},{:.2},{:.2},{:.2},{:.2},{:.2},{:.2}",
                r.epoch,
                r.auroc,
                r.iqr_overlap,
                r.atypical.q1,
                r.atypical.median,
                r.atypical.q3,
                r.noisy.q1,
                r.noisy.median,
                r.noisy.q3
            )?;
        }
        Ok(())
    }

    /// Box plot of both strata per epoch: atypical on the left of each
    /// epoch slot, noisy on the right.
    pub fn to_svg(&self, title: &str) -> String {
        const W: f64 = 900.0;
        const H: f64 = 420.0;
        const LEFT: f64 = 60.0;
        const TOP: f64 = 40.0;
        const BOTTOM: f64 = 50.0;
        let plot_w = W - LEFT - 20.0;
        let plot_h = H - TOP - BOTTOM;
        let max_rank = (self.n.max(2) - 1) as f64;
        let y = |rank: f64| TOP + plot_h * (1.0 - rank / max_rank);
        let slot = plot_w / self.rows.len().max(1) as f64;
        let box_w = (slot * 0.35).max(1.0);

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
            W / 2.0,
            escape(title)
        );
        let _ = writeln!(
            s,
            r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{}" stroke="black"/>"#,
            TOP + plot_h
        );
        let _ = writeln!(
            s,
            r#"<line x1="{LEFT}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/>"#,
            TOP + plot_h,
            LEFT + plot_w
        );
        for frac in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let rank = frac * max_rank;
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{:.1}" text-anchor="end">{:.0}</text>"#,
                LEFT - 6.0,
                y(rank) + 4.0,
                rank
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="15" y="{:.1}" transform="rotate(-90 15 {:.1})" text-anchor="middle">MSP rank</text>"#,
            TOP + plot_h / 2.0,
            TOP + plot_h / 2.0
        );
        for (i, row) in self.rows.iter().enumerate() {
            let x0 = LEFT + slot * i as f64;
            for (j, (summary, colour)) in [(&row.atypical, "#1f77b4"), (&row.noisy, "#d62728")]
                .into_iter()
                .enumerate()
            {
                let cx = x0 + slot * (0.3 + 0.4 * j as f64);
                let _ = writeln!(
                    s,
                    r#"<g class="{}" data-epoch="{}"><line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="{colour}"/><rect x="{:.2}" y="{:.2}" width="{box_w:.2}" height="{:.2}" fill="{colour}" fill-opacity="0.35" stroke="{colour}"/><line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{colour}" stroke-width="2"/></g>"#,
                    summary.tag,
                    row.epoch,
                    y(summary.max),
                    y(summary.min),
                    cx - box_w / 2.0,
                    y(summary.q3),
                    (y(summary.q1) - y(summary.q3)).max(0.5),
                    cx - box_w / 2.0,
                    y(summary.median),
                    cx + box_w / 2.0,
                    y(summary.median),
                );
            }
            if self.rows.len() <= 30 || row.epoch % 5 == 0 {
                let _ = writeln!(
                    s,
                    r#"<text x="{:.2}" y="{:.1}" text-anchor="middle">{}</text>"#,
                    x0 + slot / 2.0,
                    TOP + plot_h + 16.0,
                    row.epoch
                );
            }
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">epoch</text>"#,
            LEFT + plot_w / 2.0,
            H - 12.0
        );
        let _ = writeln!(
            s,
            r##"<rect x="{0:.1}" y="28" width="10" height="10" fill="#1f77b4"/><text x="{1:.1}" y="37">atypical</text><rect x="{2:.1}" y="28" width="10" height="10" fill="#d62728"/><text x="{3:.1}" y="37">noisy</text>"##,
            W - 170.0,
            W - 155.0,
            W - 95.0,
            W - 80.0
        );
        s.push_str("</svg>\n");
        s
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Per-epoch AUROC and IQR overlap of atypical versus noisy ranks.
pub fn separation_report(table: &RankTable, tags: &[Tag]) -> Result<SeparationReport> {
    if table.ranks.is_empty() {
        return Err(Error::contract("rank table has no epochs"));
    }
    let n = tags.len();
    let rows = table
        .epochs
        .iter()
        .zip(&table.ranks)
        .map(|(&epoch, ranks)| {
            let atypical = subset_summary(epoch, ranks, tags, Tag::Atypical)?;
            let noisy = subset_summary(epoch, ranks, tags, Tag::Noisy)?;
            Ok(SeparationRow {
                epoch,
                auroc: auroc(ranks, tags)?,
                iqr_overlap: iqr_overlap(&atypical, &noisy, n),
                atypical,
                noisy,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SeparationReport { n, rows })
}

/// Median MSP of one stratum in one epoch row.
pub fn stratum_median(msp: &[f64], tags: &[Tag], tag: Tag) -> Result<f64> {
    let mut values = members(msp, tags, tag);
    if values.is_empty() {
        return Err(Error::contract(format!("no {tag} examples")));
    }
    values.sort_by(f64::total_cmp);
    Ok(quantile(&values, 0.5))
}

/// Noisy-stratum median MSP at the end of warmup, and the mean of the
/// per-epoch noisy medians over the final quarter of training (epochs
/// after `floor(3E / 4)`).
pub fn noisy_msp_trend(rows: &[EpochRow], tags: &[Tag], warmup_epochs: usize) -> Result<(f64, f64)> {
    let last = rows
        .last()
        .ok_or_else(|| Error::contract("trace has no epochs"))?
        .epoch;
    let at_warmup = rows
        .iter()
        .find(|r| r.epoch == warmup_epochs)
        .ok_or_else(|| Error::contract(format!("trace has no epoch {warmup_epochs}")))?;
    let early = stratum_median(&at_warmup.msp, tags, Tag::Noisy)?;
    let cutoff = 3 * last / 4;
    let late: Vec<f64> = rows
        .iter()
        .filter(|r| r.epoch > cutoff)
        .map(|r| stratum_median(&r.msp, tags, Tag::Noisy))
        .collect::<Result<_>>()?;
    Ok((early, late.iter().sum::<f64>() / late.len() as f64))
}

/// Writes the `(epoch, variant)` comparison table for several reports.
pub fn write_comparison(
    mut out: impl Write,
    metadata: &[(String, String)],
    reports: &[(String, SeparationReport)],
) -> std::io::Result<()> {
    for (k, v) in metadata {
        writeln!(out, "# {k}={v}")?;
    }
    writeln!(out, "{COMPARISON_HEADER}")?;
    let max_rows = reports.iter().map(|(_, r)| r.rows.len()).max().unwrap_or(0);
    for i in 0..max_rows {
        for (variant, report) in reports {
            if let Some(row) = report.rows.get(i) {
                writeln!(
                    out,
                    "{},{variant},{:.6},{:.6}",
                    row.epoch, row.auroc, row.iqr_overlap
                )?;
            }
        }
    }
    Ok(())
}
