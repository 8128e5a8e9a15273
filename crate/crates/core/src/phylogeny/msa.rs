use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use crate::dna::{self, MISSING};
use crate::error::{Error, Result};

/// Aligned clonal sequences, stored encoded (0..=3 for ACGT, 4 for N and gaps).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Msa {
    ids: Vec<String>,
    rows: Vec<Vec<u8>>,
    /// Optional 1-based inclusive column interval of interest (e.g. CDR3).
    pub region: Option<(usize, usize)>,
}

impl Msa {
    pub fn new(ids: Vec<String>, seqs: &[impl AsRef<str>]) -> Result<Self> {
        let rows = seqs
            .iter()
            .zip(&ids)
            .map(|(s, id)| {
                s.as_ref()
                    .bytes()
                    .enumerate()
                    .map(|(i, c)| {
                        dna::encode(c).ok_or_else(|| Error::Format {
                            what: "alignment",
                            message: format!(
                                "sequence {id:?} position {}: invalid character {:?}",
                                i + 1,
                                c as char
                            ),
                        })
                    })
                    .collect::<Result<Vec<u8>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_encoded(ids, rows)
    }

    pub fn from_encoded(ids: Vec<String>, rows: Vec<Vec<u8>>) -> Result<Self> {
        if ids.len() != rows.len() {
            return Err(Error::arg("identifier and sequence counts differ"));
        }
        let mut seen = HashSet::new();
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::Format {
                    what: "alignment",
                    message: format!("duplicate identifier {id:?}"),
                });
            }
        }
        if let Some(first) = rows.first() {
            if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != first.len()) {
                return Err(Error::Format {
                    what: "alignment",
                    message: format!(
                        "sequence {:?} has length {}, expected {}",
                        ids[i],
                        r.len(),
                        first.len()
                    ),
                });
            }
        }
        if rows.iter().flatten().any(|&s| s > MISSING) {
            return Err(Error::arg("encoded states must be in 0..=4"));
        }
        Ok(Self {
            ids,
            rows,
            region: None,
        })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn rows(&self) -> &[Vec<u8>] {
        &self.rows
    }

    pub fn n_seqs(&self) -> usize {
        self.ids.len()
    }

    pub fn n_columns(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn row_index(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    pub fn sequence(&self, row: usize) -> String {
        dna::decode_all(&self.rows[row])
    }

    /// Copy without the row named `id` (no-op when absent).
    pub fn without(&self, id: &str) -> Msa {
        let keep: Vec<usize> = (0..self.n_seqs()).filter(|&i| self.ids[i] != id).collect();
        Msa {
            ids: keep.iter().map(|&i| self.ids[i].clone()).collect(),
            rows: keep.iter().map(|&i| self.rows[i].clone()).collect(),
            region: self.region,
        }
    }

    /// Copy with an extra row appended.
    pub fn with_row(&self, id: &str, encoded: Vec<u8>) -> Result<Msa> {
        let mut ids = self.ids.clone();
        let mut rows = self.rows.clone();
        ids.push(id.to_string());
        rows.push(encoded);
        let mut msa = Msa::from_encoded(ids, rows)?;
        msa.region = self.region;
        Ok(msa)
    }

    /// Frequencies of A, C, G, T over all unambiguous characters, with a
    /// pseudocount of one per base.
    pub fn base_frequencies(&self) -> [f64; 4] {
        let mut counts = [1.0; 4];
        for &s in self.rows.iter().flatten() {
            if s < MISSING {
                counts[s as usize] += 1.0;
            }
        }
        let total: f64 = counts.iter().sum();
        counts.map(|c| c / total)
    }

    pub fn parse_fasta(text: &str) -> Result<Msa> {
        let mut ids = Vec::new();
        let mut seqs: Vec<String> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(header) = line.strip_prefix('>') {
                let id = header.split_whitespace().next().unwrap_or_default();
                if id.is_empty() {
                    return Err(Error::Format {
                        what: "FASTA",
                        message: format!("line {}: empty identifier", lineno + 1),
                    });
                }
                ids.push(id.to_string());
                seqs.push(String::new());
            } else {
                let seq = seqs.last_mut().ok_or_else(|| Error::Format {
                    what: "FASTA",
                    message: format!("line {}: sequence before first header", lineno + 1),
                })?;
                seq.push_str(line);
            }
        }
        Msa::new(ids, &seqs)
    }

    pub fn read_fasta(path: &Path) -> Result<Msa> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Msa::parse_fasta(&text)
    }

    pub fn to_fasta(&self) -> String {
        let mut out = String::new();
        for (id, row) in self.ids.iter().zip(&self.rows) {
            let _ = writeln!(out, ">{id}\n{}", dna::decode_all(row));
        }
        out
    }
}
