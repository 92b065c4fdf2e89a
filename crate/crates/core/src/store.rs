//! JSON-lines prediction store.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detection::Detection;
use crate::error::{Error, Result};

/// One persisted detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub image_id: String,
    pub class_id: usize,
    pub score: f64,
    pub x: f64,
    pub y: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    /// Grid cell `[row, col]` that emitted the detection.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell: Option<[usize; 2]>,
    pub model_tag: String,
    pub run_id: String,
}

impl PredictionRecord {
    pub fn new(d: &Detection, model_tag: &str, run_id: &str) -> Self {
        Self {
            image_id: d.image_id.clone(),
            class_id: d.class_id,
            score: d.score,
            x: d.x,
            y: d.y,
            w: d.w,
            h: d.h,
            cell: d.cell,
            model_tag: model_tag.to_owned(),
            run_id: run_id.to_owned(),
        }
    }

    pub fn detection(&self) -> Detection {
        Detection {
            image_id: self.image_id.clone(),
            class_id: self.class_id,
            score: self.score,
            x: self.x,
            y: self.y,
            w: self.w,
            h: self.h,
            cell: self.cell,
        }
    }
}

pub fn write_predictions<W: Write>(w: W, records: &[PredictionRecord]) -> Result<()> {
    let mut w = BufWriter::new(w);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io("<predictions>", e))?;
    }
    w.flush().map_err(|e| Error::io("<predictions>", e))
}

pub fn write_predictions_file(path: &Path, records: &[PredictionRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_predictions(file, records).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

/// Read a store, rejecting scores outside `[0, 1]`. Blank lines are skipped.
pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let rec: PredictionRecord = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        if !(0.0..=1.0).contains(&rec.score) {
            return Err(parse_err(format!("score {} outside [0, 1]", rec.score)));
        }
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(score: f64) -> PredictionRecord {
        PredictionRecord {
            image_id: "img#0".into(),
            class_id: 1,
            score,
            x: 10.25,
            y: 3.0,
            w: None,
            h: None,
            cell: Some([0, 1]),
            model_tag: "toy".into(),
            run_id: "abc".into(),
        }
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.jsonl");
        let recs = vec![record(0.75), record(1.0)];
        write_predictions_file(&path, &recs).unwrap();
        assert_eq!(read_predictions(&path).unwrap(), recs);
        let first = std::fs::read_to_string(&path).unwrap();
        assert!(first.starts_with(
            r#"{"image_id":"img#0","class_id":1,"score":0.75,"x":10.25,"y":3.0,"cell":[0,1],"model_tag":"toy","run_id":"abc"}"#
        ));
        assert_eq!(recs[0].detection().annotation().x, 10.25);
    }

    #[test]
    fn bad_lines_are_located() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.jsonl");
        let good = serde_json::to_string(&record(0.5)).unwrap();
        let bad = serde_json::to_string(&record(1.5)).unwrap();
        std::fs::write(&path, format!("{good}\n\n{bad}\n")).unwrap();
        match read_predictions(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        std::fs::write(&path, "{not json\n").unwrap();
        assert!(matches!(read_predictions(&path), Err(Error::Parse { line: 1, .. })));
    }
}
