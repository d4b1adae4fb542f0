use std::io::{Read, Write};

use super::metrics::csv_err;
use crate::error::{Error, Result};
use crate::preprocess::SegmentPair;

/// Row count per label when the batch is empty.
pub const DEFAULT_SEG_LEN: usize = 450;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRow {
    /// `reference` or `twin`.
    pub label: String,
    pub subject_id: String,
    pub values: Vec<f64>,
}

fn header(len: usize) -> Vec<String> {
    let mut h = vec!["label".to_string(), "subject_id".to_string()];
    h.extend((0..len).map(|i| format!("v{i}")));
    h
}

/// Writes every reference segment, then every twin segment, as one CSV row
/// each. Values are stored at single precision.
pub fn export_embeddings<W: Write>(out: W, pairs: &[SegmentPair], twins: &[Vec<f64>]) -> Result<()> {
    if pairs.len() != twins.len() {
        return Err(Error::shape(
            "export_embeddings",
            format!("{} reference segments vs {} twins", pairs.len(), twins.len()),
        ));
    }
    let len = pairs.first().map_or(DEFAULT_SEG_LEN, SegmentPair::len);
    if let Some(i) = (0..pairs.len()).find(|&i| pairs[i].len() != len || twins[i].len() != len) {
        return Err(Error::shape(
            "export_embeddings",
            format!("segment {i} is not {len} samples long"),
        ));
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header(len)).map_err(csv_err)?;
    let rows = pairs
        .iter()
        .map(|p| ("reference", p, &p.ppg))
        .chain(pairs.iter().zip(twins).map(|(p, t)| ("twin", p, t)));
    for (label, p, values) in rows {
        let mut rec = Vec::with_capacity(len + 2);
        rec.push(label.to_string());
        rec.push(p.subject_id.clone());
        rec.extend(values.iter().map(|&v| (v as f32).to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::invalid(format!("csv: {e}")))?;
    Ok(())
}

pub fn read_embeddings<R: Read>(input: R) -> Result<Vec<EmbeddingRow>> {
    let mut r = csv::Reader::from_reader(input);
    let width = r.headers().map_err(csv_err)?.len();
    if width < 2 {
        return Err(Error::invalid("embedding CSV needs label and subject_id columns"));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let values = rec
            .iter()
            .skip(2)
            .map(|v| v.parse::<f64>().map_err(|e| Error::invalid(format!("bad value {v:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(EmbeddingRow {
            label: rec[0].to_string(),
            subject_id: rec[1].to_string(),
            values,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(subject: &str, seed: usize) -> SegmentPair {
        SegmentPair {
            radio: vec![0.0; 900],
            n_rows: 2,
            magnitude: vec![0.0; 450],
            ppg: (0..450).map(|i| ((i * 7 + seed) as f64 * 0.37).sin() * 2.5).collect(),
            subject_id: subject.into(),
            segment_index: seed,
            augmented: false,
            vitals: None,
        }
    }

    #[test]
    fn twenty_four_pairs_give_forty_eight_rows() {
        let pairs: Vec<SegmentPair> = (0..24).map(|i| pair(if i % 2 == 0 { "S01" } else { "S02" }, i)).collect();
        let twins: Vec<Vec<f64>> = pairs.iter().map(|p| p.ppg.iter().map(|v| v * 0.9 + 0.01).collect()).collect();
        let mut buf = Vec::new();
        export_embeddings(&mut buf, &pairs, &twins).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        let first = text.lines().next().unwrap();
        assert!(first.starts_with("label,subject_id,v0,v1,"));
        assert!(first.ends_with(",v449"));
        assert_eq!(text.lines().count(), 49);

        let rows = read_embeddings(buf.as_slice()).unwrap();
        assert_eq!(rows.len(), 48);
        assert_eq!(rows.iter().filter(|r| r.label == "twin").count(), 24);
        for (i, r) in rows.iter().enumerate() {
            let src = if i < 24 { &pairs[i].ppg } else { &twins[i - 24] };
            assert_eq!(r.values.len(), 450);
            for (a, b) in r.values.iter().zip(src) {
                assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0), "{a} vs {b}");
            }
        }
        assert_eq!(rows[1].subject_id, "S02");
    }

    #[test]
    fn empty_input_writes_header_only() {
        let mut buf = Vec::new();
        export_embeddings(&mut buf, &[], &[]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert_eq!(text.trim_end().split(',').count(), 452);
        assert!(read_embeddings(text.as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn count_mismatch_is_rejected() {
        let mut buf = Vec::new();
        assert!(export_embeddings(&mut buf, &[pair("S01", 0)], &[]).is_err());
        assert!(export_embeddings(&mut buf, &[pair("S01", 0)], &[vec![0.0; 3]]).is_err());
    }
}
