//! Per-epoch softmax probability of each example's training label, and
//! the dataset-wide ranks derived from it.

use std::io::{BufRead, Write};

use serde::Deserialize;

use crate::dataset::{StratifiedDataset, Tag};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::{softmax, Tensor};

pub const TRACE_HEADER: &str = "epoch,example_id,subset,msp,rank";

const EVAL_BATCH: usize = 256;

/// MSP of every example against its assigned label, on un-augmented
/// features. Indexed by example id.
pub fn record_msp(model: &Model, dataset: &StratifiedDataset) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(dataset.len());
    for chunk in dataset.examples.chunks(EVAL_BATCH) {
        let batch: Vec<&Tensor> = chunk.iter().map(|e| &e.features).collect();
        let logits = model.logits(&batch)?;
        let classes = logits.shape()[1];
        for (e, row) in chunk.iter().zip(logits.data().chunks_exact(classes)) {
            out.push(softmax(row)[e.assigned_label]);
        }
    }
    Ok(out)
}

/// Rank of every entry: 0 for the lowest MSP, ties by ascending id.
pub fn rank_examples(msp: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..msp.len()).collect();
    order.sort_by(|&a, &b| msp[a].total_cmp(&msp[b]).then(a.cmp(&b)));
    let mut ranks = vec![0; msp.len()];
    for (rank, id) in order.into_iter().enumerate() {
        ranks[id] = rank;
    }
    ranks
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub msp: Vec<f64>,
}

/// MSP history for one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct MspTrace {
    tags: Vec<Tag>,
    rows: Vec<EpochRow>,
}

/// Rank rows by epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct RankTable {
    pub epochs: Vec<usize>,
    pub ranks: Vec<Vec<usize>>,
}

impl MspTrace {
    pub fn new(tags: Vec<Tag>) -> Self {
        Self {
            tags,
            rows: Vec::new(),
        }
    }

    pub fn for_dataset(dataset: &StratifiedDataset) -> Self {
        Self::new(dataset.tags())
    }

    pub fn tags(&self) -> &[Tag] {
        &self.tags
    }

    pub fn rows(&self) -> &[EpochRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    /// Appends an already computed row. Epochs must strictly increase.
    pub fn push_row(&mut self, epoch: usize, msp: Vec<f64>) -> Result<()> {
        if msp.len() != self.tags.len() {
            return Err(Error::contract(format!(
                "epoch {epoch} row covers {} examples, trace has {}",
                msp.len(),
                self.tags.len()
            )));
        }
        if let Some(last) = self.rows.last() {
            if epoch <= last.epoch {
                return Err(Error::contract(format!(
                    "epoch {epoch} recorded after epoch {}",
                    last.epoch
                )));
            }
        }
        if let Some(bad) = msp.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::contract(format!("msp {bad} outside [0, 1]")));
        }
        self.rows.push(EpochRow { epoch, msp });
        Ok(())
    }

    /// Evaluates `model` on the dataset and records the row for `epoch`.
    pub fn record(&mut self, model: &Model, dataset: &StratifiedDataset, epoch: usize) -> Result<()> {
        let row = record_msp(model, dataset)?;
        self.push_row(epoch, row)
    }

    /// Most recent row as an `(id, msp)` table.
    pub fn last_table(&self) -> Option<Vec<(usize, f64)>> {
        self.rows
            .last()
            .map(|r| r.msp.iter().copied().enumerate().collect())
    }

    pub fn rank_table(&self) -> RankTable {
        RankTable {
            epochs: self.rows.iter().map(|r| r.epoch).collect(),
            ranks: self.rows.iter().map(|r| rank_examples(&r.msp)).collect(),
        }
    }

    /// Writes the trace CSV, preceded by `# key=value` metadata lines.
    pub fn write_csv(&self, mut out: impl Write, metadata: &[(String, String)]) -> std::io::Result<()> {
        for (k, v) in metadata {
            writeln!(out, "# {k}={v}")?;
        }
        writeln!(out, "{TRACE_HEADER}")?;
        for row in &self.rows {
            let ranks = rank_examples(&row.msp);
            for (id, (&msp, &rank)) in row.msp.iter().zip(&ranks).enumerate() {
                writeln!(
                    out,
                    "{},{},{},{:.6},{}",
                    row.epoch, id, self.tags[id], msp, rank
                )?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
struct TraceRecord {
    epoch: usize,
    example_id: usize,
    subset: Tag,
    msp: f64,
    rank: usize,
}

/// A trace read back from CSV: MSPs as printed, ranks as recorded.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceFile {
    pub metadata: Vec<(String, String)>,
    pub tags: Vec<Tag>,
    pub msp: Vec<EpochRow>,
    pub ranks: RankTable,
}

impl TraceFile {
    pub fn meta(&self, key: &str) -> Option<&str> {
        crate::csvio::meta(&self.metadata, key)
    }
}

/// Parses a trace CSV, checking that every epoch covers every id once.
pub fn read_trace(input: impl BufRead) -> Result<TraceFile> {
    let (metadata, body) = crate::csvio::split_preamble(input)?;
    let records: Vec<TraceRecord> = crate::csvio::parse_rows(&body, TRACE_HEADER, "trace")?;
    let bad = |detail: String| Error::format("trace", detail);

    let first_epoch = records.first().map(|r| r.epoch);
    let n = records
        .iter()
        .take_while(|r| Some(r.epoch) == first_epoch)
        .count();
    let mut tags = Vec::with_capacity(n);
    let mut msp_rows = Vec::new();
    let mut ranks = RankTable {
        epochs: Vec::new(),
        ranks: Vec::new(),
    };
    if n == 0 {
        return Ok(TraceFile {
            metadata,
            tags,
            msp: msp_rows,
            ranks,
        });
    }
    if !records.len().is_multiple_of(n) {
        return Err(bad(format!("{} rows is not a multiple of {n} examples", records.len())));
    }
    for (block, chunk) in records.chunks(n).enumerate() {
        let epoch = chunk[0].epoch;
        if block > 0 && epoch <= ranks.epochs[block - 1] {
            return Err(bad(format!("epoch {epoch} out of order")));
        }
        let mut msp = Vec::with_capacity(n);
        let mut rank = Vec::with_capacity(n);
        let mut seen = vec![false; n];
        for (i, r) in chunk.iter().enumerate() {
            if r.epoch != epoch || r.example_id != i {
                return Err(bad(format!(
                    "epoch {epoch}: expected example {i}, found epoch {} example {}",
                    r.epoch, r.example_id
                )));
            }
            if r.rank >= n || std::mem::replace(&mut seen[r.rank], true) {
                return Err(bad(format!("epoch {epoch}: ranks are not a permutation")));
            }
            if block == 0 {
                tags.push(r.subset);
            } else if tags[i] != r.subset {
                return Err(bad(format!("example {i} changes subset across epochs")));
            }
            msp.push(r.msp);
            rank.push(r.rank);
        }
        msp_rows.push(EpochRow { epoch, msp });
        ranks.epochs.push(epoch);
        ranks.ranks.push(rank);
    }
    Ok(TraceFile {
        metadata,
        tags,
        msp: msp_rows,
        ranks,
    })
}
