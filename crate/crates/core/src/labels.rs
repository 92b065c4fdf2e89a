//! Label CSV: `image_id,class_id,x,y[,w,h]`, one row per annotation, header required.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::detection::ObjectAnnotation;
use crate::error::{Error, Result};

/// Annotations grouped by image id. Within an image, input order is kept.
pub type LabelSet = BTreeMap<String, Vec<ObjectAnnotation>>;

pub fn read_labels(path: &Path) -> Result<LabelSet> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_labels(file, path)
}

pub fn parse_labels<R: Read>(reader: R, origin: &Path) -> Result<LabelSet> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    let names: Vec<&str> = headers.iter().collect();
    let boxed = match names.as_slice() {
        ["image_id", "class_id", "x", "y"] => false,
        ["image_id", "class_id", "x", "y", "w", "h"] => true,
        _ => {
            return Err(parse_err(
                1,
                format!("expected header image_id,class_id,x,y[,w,h], found {}", names.join(",")),
            ))
        }
    };
    let mut out = LabelSet::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| parse_err(line, e.to_string()))?;
        let field = |idx: usize| rec.get(idx).unwrap_or_default();
        let num = |idx: usize, name: &str| -> Result<f64> {
            let v: f64 = field(idx)
                .parse()
                .map_err(|_| parse_err(line, format!("{name}: not a number: {:?}", field(idx))))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("{name}: value must be finite")));
            }
            Ok(v)
        };
        let image_id = field(0).to_string();
        if image_id.is_empty() {
            return Err(parse_err(line, "empty image_id".into()));
        }
        let class_id: usize = field(1)
            .parse()
            .map_err(|_| parse_err(line, format!("class_id: not an integer: {:?}", field(1))))?;
        let (x, y) = (num(2, "x")?, num(3, "y")?);
        // Point rows in a box file leave w and h empty.
        let ann = if boxed && !(field(4).is_empty() && field(5).is_empty()) {
            let (w, h) = (num(4, "w")?, num(5, "h")?);
            if w <= 0.0 || h <= 0.0 {
                return Err(parse_err(line, "w and h must be positive".into()));
            }
            ObjectAnnotation::boxed(class_id, x, y, w, h)
        } else {
            ObjectAnnotation::point(class_id, x, y)
        };
        out.entry(image_id).or_default().push(ann);
    }
    Ok(out)
}

/// Write labels in image-id order. Box columns are emitted when any annotation
/// is a box; point rows then leave them empty.
pub fn write_labels<W: Write>(writer: W, labels: &LabelSet) -> Result<()> {
    let boxed = labels.values().flatten().any(ObjectAnnotation::is_box);
    let mut wtr = csv::Writer::from_writer(writer);
    let csv_err = |e: csv::Error| Error::input(format!("csv write: {e}"));
    if boxed {
        wtr.write_record(["image_id", "class_id", "x", "y", "w", "h"])
            .map_err(csv_err)?;
    } else {
        wtr.write_record(["image_id", "class_id", "x", "y"]).map_err(csv_err)?;
    }
    for (id, anns) in labels {
        for a in anns {
            let mut row = vec![id.clone(), a.class_id.to_string(), a.x.to_string(), a.y.to_string()];
            if boxed {
                row.push(a.w.map(|v| v.to_string()).unwrap_or_default());
                row.push(a.h.map(|v| v.to_string()).unwrap_or_default());
            }
            wtr.write_record(&row).map_err(csv_err)?;
        }
    }
    wtr.flush().map_err(|e| Error::input(format!("csv flush: {e}")))?;
    Ok(())
}

pub fn write_labels_file(path: &Path, labels: &LabelSet) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_labels(std::io::BufWriter::new(file), labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_points_and_groups_by_image() {
        let text = "image_id,class_id,x,y\na,0,1.5,2\nb,1,3,4\na,2,5,6\n";
        let set = parse_labels(text.as_bytes(), Path::new("t.csv")).unwrap();
        assert_eq!(set.len(), 2);
        assert_eq!(set["a"].len(), 2);
        assert_eq!(set["a"][1], ObjectAnnotation::point(2, 5.0, 6.0));
    }

    #[test]
    fn parses_boxes() {
        let text = "image_id,class_id,x,y,w,h\na,0,10,20,5,6\n";
        let set = parse_labels(text.as_bytes(), Path::new("t.csv")).unwrap();
        assert_eq!(set["a"][0], ObjectAnnotation::boxed(0, 10.0, 20.0, 5.0, 6.0));
    }

    #[test]
    fn reports_line_numbers() {
        let text = "image_id,class_id,x,y\na,0,1,2\na,zero,1,2\n";
        match parse_labels(text.as_bytes(), Path::new("t.csv")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let missing_header = "a,0,1,2\n";
        assert!(matches!(
            parse_labels(missing_header.as_bytes(), Path::new("t.csv")),
            Err(Error::Parse { line: 1, .. })
        ));
        let thousands = "image_id,class_id,x,y\na,0,\"1,000\",2\n";
        assert!(parse_labels(thousands.as_bytes(), Path::new("t.csv")).is_err());
    }

    #[test]
    fn mixed_points_and_boxes_round_trip() {
        let mut set = LabelSet::new();
        set.insert(
            "t".into(),
            vec![
                ObjectAnnotation::point(0, 5.0, 6.0),
                ObjectAnnotation::boxed(1, 50.0, 60.0, 8.0, 4.0),
            ],
        );
        let mut buf = Vec::new();
        write_labels(&mut buf, &set).unwrap();
        assert!(String::from_utf8_lossy(&buf).contains("t,0,5,6,,\n"));
        assert_eq!(parse_labels(buf.as_slice(), Path::new("t.csv")).unwrap(), set);
        let half = "image_id,class_id,x,y,w,h\na,0,1,2,3,\n";
        assert!(parse_labels(half.as_bytes(), Path::new("t.csv")).is_err());
    }

    #[test]
    fn write_then_read() {
        let mut set = LabelSet::new();
        set.insert("img-1".into(), vec![ObjectAnnotation::point(1, 0.1, 223.75)]);
        set.insert("img-0".into(), vec![ObjectAnnotation::point(0, 12.0, 3.0)]);
        let mut buf = Vec::new();
        write_labels(&mut buf, &set).unwrap();
        assert_eq!(parse_labels(buf.as_slice(), Path::new("x")).unwrap(), set);
    }
}
