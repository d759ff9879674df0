//! Chain traces (JSON Lines), design tables (CSV) and refusal reports.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::design::DesignVector;
use crate::error::{Error, Result};
use crate::initsearch::SupportResult;
use crate::sampler::ChainRecord;

/// A distinct design from a chain with its repeat count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniqueDesign {
    pub x: DesignVector,
    pub likelihood: f64,
    pub multiplicity: usize,
}

/// Collapses repeated chain states, ranked by likelihood (descending),
/// first occurrence breaking ties.
pub fn dedup_records(records: &[ChainRecord]) -> Vec<UniqueDesign> {
    let mut out: Vec<UniqueDesign> = Vec::new();
    for r in records {
        match out.iter_mut().find(|u| u.x == r.x) {
            Some(u) => u.multiplicity += 1,
            None => out.push(UniqueDesign {
                x: r.x.clone(),
                likelihood: r.likelihood,
                multiplicity: 1,
            }),
        }
    }
    // stable sort keeps first-seen order among equal likelihoods
    out.sort_by(|a, b| b.likelihood.total_cmp(&a.likelihood));
    out
}

pub fn write_trace_jsonl(path: &Path, records: &[ChainRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace_jsonl(path: &Path) -> Result<Vec<ChainRecord>> {
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

/// Ranked design table: a `# config <hash>` comment line, then
/// `rank,likelihood,multiplicity,x_1..x_d`.
pub fn write_designs_csv(path: &Path, designs: &[UniqueDesign], config_hash: &str) -> Result<()> {
    let mut file = BufWriter::new(File::create(path)?);
    writeln!(file, "# config {config_hash}")?;
    let d = designs.first().map_or(0, |u| u.x.dim());
    let mut w = csv::Writer::from_writer(file);
    let mut header = vec!["rank".to_string(), "likelihood".into(), "multiplicity".into()];
    header.extend((1..=d).map(|i| format!("x_{i}")));
    w.write_record(&header)?;
    for (rank, u) in designs.iter().enumerate() {
        let mut row = vec![(rank + 1).to_string(), format!("{}", u.likelihood), u.multiplicity.to_string()];
        row.extend(u.x.as_slice().iter().map(|v| format!("{v}")));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the `x_*` columns of a design table, skipping `#` comments. Any
/// CSV with `x_1..x_d` headers is accepted.
pub fn read_designs_csv(path: &Path) -> Result<Vec<DesignVector>> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let cols: Vec<usize> = r
        .headers()?
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with("x_"))
        .map(|(i, _)| i)
        .collect();
    if cols.is_empty() {
        return Err(Error::InvalidInput(format!("{} has no x_* columns", path.display())));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let x = cols
            .iter()
            .map(|&i| {
                rec[i]
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| Error::InvalidInput(format!("bad number {:?} in {}", &rec[i], path.display())))
            })
            .collect::<Result<Vec<f64>>>()?;
        out.push(DesignVector::new(x));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefusalReport {
    pub refused: bool,
    pub reason: String,
    pub iterations_used: usize,
    pub best_objective: f64,
    pub config_hash: String,
}

impl RefusalReport {
    pub fn from_support(s: &SupportResult, config_hash: &str) -> Self {
        Self {
            refused: true,
            reason: "no design with nonzero likelihood found within the search budget".into(),
            iterations_used: s.iterations_used,
            best_objective: s.best_objective,
            config_hash: config_hash.into(),
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}
