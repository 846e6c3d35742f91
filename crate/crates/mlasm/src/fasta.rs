//! Minimal FASTA reader/writer.
//!
//! Headers start with '>', sequence lines are uppercase ACGT and may span
//! multiple lines. Any other character is rejected.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::model::{base_index, Assembly, ReadSet};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FastaRecord {
    pub header: String,
    pub seq: String,
}

pub fn read_fasta<R: BufRead>(reader: R) -> Result<Vec<FastaRecord>> {
    let mut records: Vec<FastaRecord> = Vec::new();
    let mut current: Option<FastaRecord> = None;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        if let Some(h) = line.strip_prefix('>') {
            if let Some(rec) = current.take() {
                if rec.seq.is_empty() {
                    return Err(Error::Fasta {
                        line: lineno,
                        msg: format!("record {:?} has no sequence", rec.header),
                    });
                }
                records.push(rec);
            }
            current = Some(FastaRecord {
                header: h.trim().to_string(),
                seq: String::new(),
            });
        } else {
            let rec = current.as_mut().ok_or(Error::Fasta {
                line: lineno + 1,
                msg: "sequence line before first header".into(),
            })?;
            for b in line.bytes() {
                if base_index(b).is_none() {
                    return Err(Error::Fasta {
                        line: lineno + 1,
                        msg: format!("invalid character {:?}", b as char),
                    });
                }
            }
            rec.seq.push_str(line);
        }
    }
    if let Some(rec) = current.take() {
        if rec.seq.is_empty() {
            return Err(Error::Fasta {
                line: 0,
                msg: format!("record {:?} has no sequence", rec.header),
            });
        }
        records.push(rec);
    }
    Ok(records)
}

pub fn write_fasta<W: Write>(mut writer: W, records: &[FastaRecord]) -> Result<()> {
    for rec in records {
        writeln!(writer, ">{}", rec.header)?;
        // 70-column wrapping, conventional and diff-friendly.
        let bytes = rec.seq.as_bytes();
        for chunk in bytes.chunks(70) {
            writer.write_all(chunk)?;
            writeln!(writer)?;
        }
    }
    Ok(())
}

/// Reads a FASTA file as a read set; ids follow record order.
pub fn read_reads<R: BufRead>(reader: R) -> Result<ReadSet> {
    let records = read_fasta(reader)?;
    ReadSet::from_seqs(records.into_iter().map(|r| r.seq))
}

pub fn write_reads<W: Write>(writer: W, reads: &ReadSet) -> Result<()> {
    let records: Vec<FastaRecord> = reads
        .reads()
        .iter()
        .map(|r| FastaRecord {
            header: format!("read_{}", r.id),
            seq: r.seq.clone(),
        })
        .collect();
    write_fasta(writer, &records)
}

/// Writes contigs, one record each, flagged circular in the header.
pub fn write_contigs<W: Write>(writer: W, assembly: &Assembly) -> Result<()> {
    let records: Vec<FastaRecord> = assembly
        .contigs
        .iter()
        .enumerate()
        .map(|(i, c)| FastaRecord {
            header: format!("contig_{} circular=true length={}", i, c.len()),
            seq: c.clone(),
        })
        .collect();
    write_fasta(writer, &records)
}

pub fn read_assembly<R: BufRead>(reader: R) -> Result<Assembly> {
    let records = read_fasta(reader)?;
    Assembly::new(records.into_iter().map(|r| r.seq).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    #[test]
    fn round_trip() {
        let rs = ReadSet::from_seqs(["ACGT", "GGTTAACC", "A"]).unwrap();
        let mut buf = Vec::new();
        write_reads(&mut buf, &rs).unwrap();
        let back = read_reads(Cursor::new(buf)).unwrap();
        assert_eq!(rs, back);
    }

    #[test]
    fn multiline_sequences_concatenate() {
        let input = ">r0\nACGT\nACGT\n>r1\nTT\n";
        let recs = read_fasta(Cursor::new(input)).unwrap();
        assert_eq!(recs[0].seq, "ACGTACGT");
        assert_eq!(recs[1].seq, "TT");
    }

    #[test]
    fn rejects_invalid_characters() {
        assert!(read_fasta(Cursor::new(">r\nACGN\n")).is_err());
        assert!(read_fasta(Cursor::new(">r\nacgt\n")).is_err());
    }

    #[test]
    fn rejects_headerless_sequence() {
        assert!(read_fasta(Cursor::new("ACGT\n")).is_err());
    }

    #[test]
    fn rejects_empty_record() {
        assert!(read_fasta(Cursor::new(">r0\n>r1\nAC\n")).is_err());
    }

    #[test]
    fn contig_headers_flag_circularity() {
        let a = Assembly::new(vec!["ACGT".into()]).unwrap();
        let mut buf = Vec::new();
        write_contigs(&mut buf, &a).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("circular=true"));
        assert!(text.contains("length=4"));
    }
}
