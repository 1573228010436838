//! Alignment ingestion (Stockholm, aligned FASTA), gap-based cleaning and
//! binary functional splits by marker column.
//!
//! Column indices are 0-based throughout the library. The CLI and the
//! config file speak 1-based positions and convert at the boundary.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::alphabet::{classify_symbol, residue_char, AminoAcid, Residue, ResidueSet};
use crate::error::{HopgenError, Result};

/// Named, equal-length rows over the 20-letter alphabet plus gap.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alignment {
    ids: Vec<String>,
    rows: Vec<Vec<Residue>>,
}

impl Alignment {
    pub fn new(ids: Vec<String>, rows: Vec<Vec<Residue>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(HopgenError::Alignment("alignment has no sequences".into()));
        }
        if ids.len() != rows.len() {
            return Err(HopgenError::Alignment(format!(
                "{} ids for {} rows",
                ids.len(),
                rows.len()
            )));
        }
        let width = rows[0].len();
        if width == 0 {
            return Err(HopgenError::Alignment("alignment has no columns".into()));
        }
        if let Some((i, row)) = rows.iter().enumerate().find(|(_, r)| r.len() != width) {
            return Err(HopgenError::Alignment(format!(
                "ragged alignment: '{}' has length {}, expected {width}",
                ids[i],
                row.len()
            )));
        }
        let mut seen = HashMap::with_capacity(ids.len());
        for id in &ids {
            if seen.insert(id.as_str(), ()).is_some() {
                return Err(HopgenError::Alignment(format!("duplicate sequence id '{id}'")));
            }
        }
        Ok(Alignment { ids, rows })
    }

    /// Builds an alignment from strings; handy for fixtures.
    pub fn from_strings<S: AsRef<str>>(seqs: &[(S, S)]) -> Result<Self> {
        let mut ids = Vec::with_capacity(seqs.len());
        let mut rows = Vec::with_capacity(seqs.len());
        for (id, s) in seqs {
            ids.push(id.as_ref().to_string());
            rows.push(parse_residues(s.as_ref(), 0)?);
        }
        Alignment::new(ids, rows)
    }

    /// Number of sequences K.
    pub fn num_seqs(&self) -> usize {
        self.rows.len()
    }

    /// Aligned length L.
    pub fn width(&self) -> usize {
        self.rows[0].len()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn rows(&self) -> &[Vec<Residue>] {
        &self.rows
    }

    pub fn row(&self, k: usize) -> &[Residue] {
        &self.rows[k]
    }

    pub fn column(&self, col: usize) -> impl Iterator<Item = Residue> + '_ {
        self.rows.iter().map(move |r| r[col])
    }

    /// Rows at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Alignment> {
        let ids = indices.iter().map(|&i| self.ids[i].clone()).collect();
        let rows = indices.iter().map(|&i| self.rows[i].clone()).collect();
        Alignment::new(ids, rows)
    }

    pub fn to_fasta(&self) -> String {
        let mut out = String::new();
        for (id, row) in self.ids.iter().zip(&self.rows) {
            let _ = writeln!(out, ">{id}");
            out.extend(row.iter().map(|&r| residue_char(r)));
            out.push('\n');
        }
        out
    }
}

fn parse_residues(s: &str, line: usize) -> Result<Vec<Residue>> {
    s.chars()
        .map(|c| classify_symbol(c).map_err(|bad| HopgenError::parse(line, format!("invalid residue symbol '{bad}'"))))
        .collect()
}

/// Parses a Stockholm 1.0 document.
///
/// Sequence lines wrapped across blank-line separated blocks are
/// concatenated per id. `#=GF`, `#=GS`, `#=GR`, `#=GC` markup and other
/// comment lines are ignored. Parsing stops at the `//` terminator.
pub fn parse_stockholm(text: &str) -> Result<Alignment> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end()));

    let header = lines.by_ref().find(|(_, l)| !l.trim().is_empty());
    match header {
        Some((_, l)) if l.trim_start().starts_with("# STOCKHOLM 1.") => {}
        Some((n, _)) => return Err(HopgenError::parse(n, "missing '# STOCKHOLM 1.0' header")),
        None => return Err(HopgenError::parse(0, "empty Stockholm document")),
    }

    let mut order: Vec<String> = Vec::new();
    let mut seqs: HashMap<String, Vec<Residue>> = HashMap::new();
    // ids seen in the current block, with the chunk they contributed
    let mut block: HashMap<String, String> = HashMap::new();

    for (n, line) in lines {
        if line == "//" {
            break;
        }
        if line.trim().is_empty() {
            block.clear();
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let mut fields = line.split_whitespace();
        let (Some(id), Some(chunk), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(HopgenError::parse(n, "expected '<id> <aligned sequence>'"));
        };
        if let Some(prev) = block.get(id) {
            if prev == chunk {
                continue;
            }
            return Err(HopgenError::parse(
                n,
                format!("duplicate id '{id}' with conflicting residues"),
            ));
        }
        block.insert(id.to_string(), chunk.to_string());
        let residues = parse_residues(chunk, n)?;
        match seqs.get_mut(id) {
            Some(row) => row.extend(residues),
            None => {
                order.push(id.to_string());
                seqs.insert(id.to_string(), residues);
            }
        }
    }

    if order.is_empty() {
        return Err(HopgenError::parse(0, "Stockholm document contains no sequences"));
    }
    let rows = order.iter().map(|id| seqs.remove(id).unwrap_or_default()).collect();
    Alignment::new(order, rows)
}

/// Parses aligned FASTA. Records may span several lines.
pub fn parse_fasta(text: &str) -> Result<Alignment> {
    let mut ids = Vec::new();
    let mut rows: Vec<Vec<Residue>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(header) = line.strip_prefix('>') {
            let id = header.split_whitespace().next().unwrap_or("");
            if id.is_empty() {
                return Err(HopgenError::parse(n, "FASTA record without identifier"));
            }
            ids.push(id.to_string());
            rows.push(Vec::new());
        } else {
            let Some(row) = rows.last_mut() else {
                return Err(HopgenError::parse(n, "sequence data before first '>' header"));
            };
            row.extend(parse_residues(line, n)?);
        }
    }
    if ids.is_empty() {
        return Err(HopgenError::parse(0, "empty FASTA file"));
    }
    let width = rows[0].len();
    if let Some(i) = rows.iter().position(|r| r.len() != width) {
        return Err(HopgenError::Alignment(format!(
            "unequal FASTA record lengths: '{}' has {} columns, expected {width}",
            ids[i],
            rows[i].len()
        )));
    }
    Alignment::new(ids, rows)
}

fn gap_fraction<I: Iterator<Item = Residue>>(cells: I) -> f64 {
    let (mut gaps, mut total) = (0usize, 0usize);
    for c in cells {
        total += 1;
        gaps += usize::from(c.is_none());
    }
    if total == 0 {
        0.0
    } else {
        gaps as f64 / total as f64
    }
}

/// Drops columns whose gap fraction exceeds `col_gap_max`, then sequences
/// whose gap fraction over the surviving columns exceeds `seq_gap_max`.
/// Both thresholds are strict. Survivor order is preserved.
pub fn clean_alignment(aln: &Alignment, col_gap_max: f64, seq_gap_max: f64) -> Result<Alignment> {
    let keep_cols: Vec<usize> = (0..aln.width())
        .filter(|&c| gap_fraction(aln.column(c)) <= col_gap_max)
        .collect();
    if keep_cols.is_empty() {
        return Err(HopgenError::Alignment("cleaning removed every column".into()));
    }
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    for (id, row) in aln.ids.iter().zip(&aln.rows) {
        let kept: Vec<Residue> = keep_cols.iter().map(|&c| row[c]).collect();
        if gap_fraction(kept.iter().copied()) <= seq_gap_max {
            ids.push(id.clone());
            rows.push(kept);
        }
    }
    if rows.is_empty() {
        return Err(HopgenError::Alignment("cleaning removed every sequence".into()));
    }
    Alignment::new(ids, rows)
}

pub const DEFAULT_COL_GAP_MAX: f64 = 0.5;
pub const DEFAULT_SEQ_GAP_MAX: f64 = 0.3;

/// Designated/background partition of an alignment's rows by the residue
/// found at one marker column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionalSplit {
    pub marker_position: usize,
    pub marker_residues: ResidueSet,
    /// Row indices of designated sequences, ascending.
    pub designated: Vec<usize>,
    pub num_seqs: usize,
}

impl FunctionalSplit {
    /// A split over `num_seqs` patterns with an explicit designated set.
    pub fn from_indices(
        num_seqs: usize,
        designated: Vec<usize>,
        marker_position: usize,
        marker_residues: ResidueSet,
    ) -> Result<Self> {
        let mut designated = designated;
        designated.sort_unstable();
        designated.dedup();
        if designated.last().is_some_and(|&i| i >= num_seqs) {
            return Err(HopgenError::Config(format!(
                "designated index out of range for {num_seqs} sequences"
            )));
        }
        Ok(FunctionalSplit {
            marker_position,
            marker_residues,
            designated,
            num_seqs,
        })
    }

    pub fn k_des(&self) -> usize {
        self.designated.len()
    }

    pub fn k_bg(&self) -> usize {
        self.num_seqs - self.designated.len()
    }

    pub fn mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.num_seqs];
        for &i in &self.designated {
            m[i] = true;
        }
        m
    }

    pub fn background(&self) -> Vec<usize> {
        let mask = self.mask();
        (0..self.num_seqs).filter(|&i| !mask[i]).collect()
    }

    /// Multiplicity conditioning needs both groups populated.
    pub fn is_usable_for_conditioning(&self) -> bool {
        self.k_des() >= 1 && self.k_bg() >= 1
    }
}

pub fn make_split(aln: &Alignment, marker_position: usize, marker_residues: ResidueSet) -> Result<FunctionalSplit> {
    if marker_position >= aln.width() {
        return Err(HopgenError::Config(format!(
            "marker position {} outside alignment of width {}",
            marker_position + 1,
            aln.width()
        )));
    }
    if marker_residues.is_empty() {
        return Err(HopgenError::Config("marker residue set is empty".into()));
    }
    let designated = aln
        .column(marker_position)
        .enumerate()
        .filter(|(_, r)| marker_residues.matches(*r))
        .map(|(i, _)| i)
        .collect();
    Ok(FunctionalSplit {
        marker_position,
        marker_residues,
        designated,
        num_seqs: aln.num_seqs(),
    })
}

/// Column with the highest frequency of `target`; ties go to the lowest
/// index.
pub fn find_marker_column(aln: &Alignment, target: AminoAcid) -> Result<usize> {
    let mut best: Option<(usize, usize)> = None;
    for col in 0..aln.width() {
        let count = aln.column(col).filter(|r| *r == Some(target)).count();
        if count > 0 && best.is_none_or(|(_, c)| count > c) {
            best = Some((col, count));
        }
    }
    best.map(|(col, _)| col)
        .ok_or_else(|| HopgenError::Alignment(format!("residue {target} does not occur in any column")))
}
