use std::io::Write;

use serde::Serialize;

use crate::detection::ObjectAnnotation;
use crate::error::{Error, Result};

/// Per-class tallies for each annotation source, plus totals.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CountTable {
    pub class_names: Vec<String>,
    pub sources: Vec<String>,
    /// `counts[class][source]`.
    pub counts: Vec<Vec<u64>>,
    /// Classes flagged as members of the subset column, if any.
    pub subset: Option<Vec<bool>>,
}

impl CountTable {
    pub fn class_total(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn source_total(&self, source: usize) -> u64 {
        self.counts.iter().map(|row| row[source]).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Sum of class totals over the subset; `None` without a subset.
    pub fn subset_total(&self) -> Option<u64> {
        self.subset.as_ref().map(|s| {
            (0..self.class_names.len())
                .filter(|&c| s[c])
                .map(|c| self.class_total(c))
                .sum()
        })
    }

    /// CSV with one row per class, source columns, a total column, an
    /// optional subset marker column and a closing totals row.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["class".to_string()];
        header.extend(self.sources.iter().cloned());
        header.push("total".into());
        if self.subset.is_some() {
            header.push("subset".into());
        }
        out.write_record(&header).map_err(csv_err)?;
        for (c, name) in self.class_names.iter().enumerate() {
            let mut row = vec![name.clone()];
            row.extend(self.counts[c].iter().map(u64::to_string));
            row.push(self.class_total(c).to_string());
            if let Some(s) = &self.subset {
                row.push(if s[c] { "x".into() } else { String::new() });
            }
            out.write_record(&row).map_err(csv_err)?;
        }
        let mut row = vec!["total".to_string()];
        row.extend((0..self.sources.len()).map(|s| self.source_total(s).to_string()));
        row.push(self.total().to_string());
        if let Some(t) = self.subset_total() {
            row.push(t.to_string());
        }
        out.write_record(&row).map_err(csv_err)?;
        out.flush().map_err(|e| Error::input(e.to_string()))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::input(format!("writing count table: {e}"))
}

/// Tally annotations per class and source.
///
/// `subset` lists the class ids of an optional sub-dataset column.
pub fn count_table(
    sources: &[(&str, &[ObjectAnnotation])],
    class_names: &[String],
    subset: Option<&[usize]>,
) -> Result<CountTable> {
    let k = class_names.len();
    let mut counts = vec![vec![0u64; sources.len()]; k];
    for (s, (name, anns)) in sources.iter().enumerate() {
        for a in anns.iter() {
            if a.class_id >= k {
                return Err(Error::input(format!(
                    "source {name} has class {} but only {k} class names",
                    a.class_id
                )));
            }
            counts[a.class_id][s] += 1;
        }
    }
    let subset = match subset {
        Some(ids) => {
            let mut flags = vec![false; k];
            for &c in ids {
                *flags
                    .get_mut(c)
                    .ok_or_else(|| Error::config(format!("subset class {c} out of range")))? = true;
            }
            Some(flags)
        }
        None => None,
    };
    Ok(CountTable {
        class_names: class_names.to_vec(),
        sources: sources.iter().map(|(n, _)| n.to_string()).collect(),
        counts,
        subset,
    })
}
