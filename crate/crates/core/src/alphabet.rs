//! The 20-letter amino-acid alphabet and residue sets.
//!
//! Channel order is fixed (A R N D C Q E G H I L K M F P S T W Y V) and is
//! part of the persisted model format: one-hot index `20 * position +
//! channel` always refers to the same residue.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::HopgenError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum AminoAcid {
    Ala = 0,
    Arg,
    Asn,
    Asp,
    Cys,
    Gln,
    Glu,
    Gly,
    His,
    Ile,
    Leu,
    Lys,
    Met,
    Phe,
    Pro,
    Ser,
    Thr,
    Trp,
    Tyr,
    Val,
}

pub const ALPHABET_SIZE: usize = 20;

/// One-letter codes in channel order.
pub const CHANNEL_ORDER: &str = "ARNDCQEGHILKMFPSTWYV";

impl AminoAcid {
    pub const ALL: [AminoAcid; ALPHABET_SIZE] = [
        AminoAcid::Ala,
        AminoAcid::Arg,
        AminoAcid::Asn,
        AminoAcid::Asp,
        AminoAcid::Cys,
        AminoAcid::Gln,
        AminoAcid::Glu,
        AminoAcid::Gly,
        AminoAcid::His,
        AminoAcid::Ile,
        AminoAcid::Leu,
        AminoAcid::Lys,
        AminoAcid::Met,
        AminoAcid::Phe,
        AminoAcid::Pro,
        AminoAcid::Ser,
        AminoAcid::Thr,
        AminoAcid::Trp,
        AminoAcid::Tyr,
        AminoAcid::Val,
    ];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    #[inline]
    pub fn from_index(i: usize) -> Option<AminoAcid> {
        Self::ALL.get(i).copied()
    }

    pub fn to_char(self) -> char {
        CHANNEL_ORDER.as_bytes()[self.index()] as char
    }

    /// Case-insensitive lookup of a canonical one-letter code.
    pub fn from_char(c: char) -> Option<AminoAcid> {
        let upper = c.to_ascii_uppercase();
        CHANNEL_ORDER
            .bytes()
            .position(|b| b as char == upper)
            .and_then(Self::from_index)
    }
}

impl fmt::Display for AminoAcid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_char())
    }
}

/// Alignment cell: an amino acid or a gap (`None`).
pub type Residue = Option<AminoAcid>;

/// Classify an alignment character.
///
/// `Ok(None)` is a gap. Gap characters `-` and `.` and the ambiguity codes
/// B J O U X Z all collapse to gap, since the encoding has no channel for
/// them. Anything else is rejected.
pub fn classify_symbol(c: char) -> Result<Residue, char> {
    match c.to_ascii_uppercase() {
        '-' | '.' | 'B' | 'J' | 'O' | 'U' | 'X' | 'Z' => Ok(None),
        other => AminoAcid::from_char(other).map(Some).ok_or(c),
    }
}

pub fn residue_char(r: Residue) -> char {
    r.map_or('-', AminoAcid::to_char)
}

pub fn sequence_string(seq: &[AminoAcid]) -> String {
    seq.iter().map(|a| a.to_char()).collect()
}

/// Uniform access to the amino acid of a cell, gap-aware.
pub trait AsResidue: Copy {
    fn amino(self) -> Option<AminoAcid>;
}

impl AsResidue for AminoAcid {
    #[inline]
    fn amino(self) -> Option<AminoAcid> {
        Some(self)
    }
}

impl AsResidue for Option<AminoAcid> {
    #[inline]
    fn amino(self) -> Option<AminoAcid> {
        self
    }
}

/// A nonempty-or-empty set of amino acids stored as a 20-bit mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct ResidueSet(u32);

impl ResidueSet {
    pub fn empty() -> Self {
        ResidueSet(0)
    }

    pub fn from_residues<I: IntoIterator<Item = AminoAcid>>(it: I) -> Self {
        it.into_iter().fold(ResidueSet(0), |s, a| s.with(a))
    }

    pub fn with(self, a: AminoAcid) -> Self {
        ResidueSet(self.0 | (1 << a.index()))
    }

    #[inline]
    pub fn contains(self, a: AminoAcid) -> bool {
        self.0 & (1 << a.index()) != 0
    }

    /// Gaps never belong to a residue set.
    #[inline]
    pub fn matches<R: AsResidue>(self, r: R) -> bool {
        r.amino().is_some_and(|a| self.contains(a))
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn iter(self) -> impl Iterator<Item = AminoAcid> {
        AminoAcid::ALL.into_iter().filter(move |a| self.contains(*a))
    }
}

impl FromStr for ResidueSet {
    type Err = HopgenError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut set = ResidueSet::empty();
        for c in s.chars().filter(|c| !matches!(c, ',' | ' ')) {
            let a = AminoAcid::from_char(c)
                .ok_or_else(|| HopgenError::Config(format!("'{c}' is not a canonical amino acid")))?;
            set = set.with(a);
        }
        if set.is_empty() {
            return Err(HopgenError::Config("empty residue set".into()));
        }
        Ok(set)
    }
}

impl fmt::Display for ResidueSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for a in self.iter() {
            write!(f, "{a}")?;
        }
        Ok(())
    }
}

impl Serialize for ResidueSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for ResidueSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
