//! Line-oriented dataset file.
//!
//! ```text
//! {"format":"uaware-seg","version":1,"n_subjects":2,"n_frames":8,"height":16,"width":16,"n_classes":4,"seed":0}
//! {"id":"S000","label":1,"contraction":0.31,"noise":0.01,"frames":"AAAB..."}
//! {"id":"S001","label":0,"contraction":0.04,"noise":0.01,"frames":"AAAA..."}
//! ```
//!
//! `frames` is the standard base64 encoding of one byte per pixel, frames
//! back to back, each row-major.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{DataError, Dataset, FrameDims, SegSequence, SubjectMeta};

const FORMAT: &str = "uaware-seg";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    n_subjects: usize,
    n_frames: usize,
    height: usize,
    width: usize,
    n_classes: usize,
    seed: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    label: u8,
    contraction: f64,
    noise: f64,
    frames: String,
}

pub fn write_dataset_to<W: Write>(dataset: &Dataset, mut out: W) -> Result<(), DataError> {
    let d = dataset.dims;
    let header = Header {
        format: FORMAT.into(),
        version: VERSION,
        n_subjects: dataset.len(),
        n_frames: d.n_frames,
        height: d.height,
        width: d.width,
        n_classes: d.n_classes,
        seed: dataset.seed,
    };
    serde_json::to_writer(&mut out, &header).map_err(std::io::Error::from)?;
    out.write_all(b"\n")?;
    for s in &dataset.subjects {
        let rec = Record {
            id: s.id.clone(),
            label: s.label as u8,
            contraction: s.meta.contraction,
            noise: s.meta.noise,
            frames: STANDARD.encode(s.pixels()),
        };
        serde_json::to_writer(&mut out, &rec).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<(), DataError> {
    write_dataset_to(dataset, BufWriter::new(File::create(path)?))
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset, DataError> {
    read_dataset_from(BufReader::new(File::open(path)?))
}

pub fn read_dataset_from<R: Read>(input: R) -> Result<Dataset, DataError> {
    let mut lines = BufReader::new(input).lines();
    let header_line = lines
        .next()
        .ok_or_else(|| DataError::MalformedHeader("empty file".into()))??;
    let header: Header = serde_json::from_str(&header_line)
        .map_err(|e| DataError::MalformedHeader(e.to_string()))?;
    if header.format != FORMAT {
        return Err(DataError::MalformedHeader(format!(
            "format tag {:?}, expected {FORMAT:?}",
            header.format
        )));
    }
    if header.version != VERSION {
        return Err(DataError::UnsupportedVersion(header.version));
    }
    let dims = FrameDims {
        n_frames: header.n_frames,
        height: header.height,
        width: header.width,
        n_classes: header.n_classes,
    };
    if dims.n_frames == 0 || dims.height == 0 || dims.width == 0 || dims.n_classes == 0 {
        return Err(DataError::MalformedHeader("zero-sized dimension".into()));
    }
    let payload_len = dims.n_frames * dims.pixels();

    let mut subjects = Vec::with_capacity(header.n_subjects);
    for (index, line) in lines.enumerate() {
        let line = line?;
        if index >= header.n_subjects {
            if line.trim().is_empty() {
                continue;
            }
            return Err(DataError::RecordCount {
                expected: header.n_subjects,
                found: index + 1,
            });
        }
        subjects.push(parse_record(index, &line, &dims, payload_len)?);
    }
    if subjects.len() != header.n_subjects {
        return Err(DataError::RecordCount {
            expected: header.n_subjects,
            found: subjects.len(),
        });
    }
    Ok(Dataset {
        dims,
        seed: header.seed,
        subjects,
    })
}

fn parse_record(
    index: usize,
    line: &str,
    dims: &FrameDims,
    payload_len: usize,
) -> Result<SegSequence, DataError> {
    let malformed = |reason: String| DataError::MalformedRecord { index, reason };
    let rec: Record = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
    let label = match rec.label {
        0 => false,
        1 => true,
        other => return Err(malformed(format!("label {other} is not 0 or 1"))),
    };
    let pixels = STANDARD
        .decode(rec.frames.as_bytes())
        .map_err(|e| malformed(format!("frames: {e}")))?;
    if pixels.len() < payload_len {
        return Err(DataError::TruncatedPayload {
            index,
            expected: payload_len,
            found: pixels.len(),
        });
    }
    if pixels.len() > payload_len {
        return Err(DataError::DimensionMismatch {
            index,
            what: "payload length",
            expected: payload_len,
            found: pixels.len(),
        });
    }
    if let Some(&value) = pixels.iter().find(|&&v| v as usize >= dims.n_classes) {
        return Err(DataError::InvalidClass {
            index,
            value,
            n_classes: dims.n_classes,
        });
    }
    Ok(SegSequence {
        id: rec.id,
        label,
        meta: SubjectMeta {
            contraction: rec.contraction,
            noise: rec.noise,
        },
        n_frames: dims.n_frames,
        height: dims.height,
        width: dims.width,
        pixels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, GenConfig};

    fn small() -> Dataset {
        generate_dataset(&GenConfig {
            n_subjects: 5,
            seed: 9,
            ..GenConfig::default()
        })
        .unwrap()
    }

    fn to_string(ds: &Dataset) -> String {
        let mut buf = Vec::new();
        write_dataset_to(ds, &mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn round_trip() {
        let ds = small();
        let text = to_string(&ds);
        assert_eq!(read_dataset_from(text.as_bytes()).unwrap(), ds);
    }

    #[test]
    fn empty_dataset_is_a_valid_file() {
        let ds = Dataset {
            dims: small().dims,
            seed: 3,
            subjects: vec![],
        };
        let text = to_string(&ds);
        assert!(text.contains("\"n_subjects\":0"));
        assert_eq!(read_dataset_from(text.as_bytes()).unwrap(), ds);
    }

    #[test]
    fn out_of_range_class_names_the_record() {
        let mut ds = small();
        ds.subjects[2].pixels[17] = 7;
        let text = to_string(&ds);
        match read_dataset_from(text.as_bytes()) {
            Err(DataError::InvalidClass { index, value, .. }) => {
                assert_eq!((index, value), (2, 7));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn truncated_payload_and_count_errors_are_distinct() {
        let ds = small();
        let text = to_string(&ds);
        let mut lines: Vec<String> = text.lines().map(String::from).collect();

        let mut rec: Record = serde_json::from_str(&lines[2]).unwrap();
        let short = &STANDARD.decode(&rec.frames).unwrap()[..100];
        rec.frames = STANDARD.encode(short);
        let mut cut = lines.clone();
        cut[2] = serde_json::to_string(&rec).unwrap();
        assert!(matches!(
            read_dataset_from(cut.join("\n").as_bytes()),
            Err(DataError::TruncatedPayload { index: 1, .. })
        ));

        lines.pop();
        assert!(matches!(
            read_dataset_from(lines.join("\n").as_bytes()),
            Err(DataError::RecordCount { expected: 5, found: 4 })
        ));
    }

    #[test]
    fn header_errors() {
        assert!(matches!(
            read_dataset_from("".as_bytes()),
            Err(DataError::MalformedHeader(_))
        ));
        assert!(matches!(
            read_dataset_from("not json\n".as_bytes()),
            Err(DataError::MalformedHeader(_))
        ));
        let text = to_string(&small()).replacen("\"version\":1", "\"version\":9", 1);
        assert!(matches!(
            read_dataset_from(text.as_bytes()),
            Err(DataError::UnsupportedVersion(9))
        ));
    }

    #[test]
    fn malformed_record_reports_index() {
        let text = to_string(&small());
        let mut lines: Vec<&str> = text.lines().collect();
        lines[4] = "{\"id\":\"x\"}";
        assert!(matches!(
            read_dataset_from(lines.join("\n").as_bytes()),
            Err(DataError::MalformedRecord { index: 3, .. })
        ));
    }
}
