use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Modality {
    Text,
    Audio,
    Visual,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Text, Modality::Audio, Modality::Visual];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn code(self) -> char {
        match self {
            Self::Text => 't',
            Self::Audio => 'a',
            Self::Visual => 'v',
        }
    }

    /// Accepts `t`/`l` (text, language), `a` and `v`.
    pub fn from_code(c: char) -> Result<Self> {
        match c {
            't' | 'l' => Ok(Self::Text),
            'a' => Ok(Self::Audio),
            'v' => Ok(Self::Visual),
            _ => Err(Error::Pattern(format!("unknown modality code {c:?}"))),
        }
    }
}

/// One conversation: `N` utterances with raw features for every modality.
/// The generator always fills all three; masking is carried separately by a
/// [`MissingPattern`] so the held-back ground truth stays available.
#[derive(Debug, Clone, PartialEq)]
pub struct MultimodalSample {
    pub id: u64,
    pub modalities: [DenseMatrix<f64>; 3],
    pub label: f64,
}

impl MultimodalSample {
    pub fn new(id: u64, modalities: [DenseMatrix<f64>; 3], label: f64) -> Result<Self> {
        let n = modalities[0].rows();
        if n == 0 {
            return Err(Error::Empty("sample has no utterances".into()));
        }
        for (m, x) in Modality::ALL.iter().zip(&modalities) {
            if x.rows() != n {
                return Err(Error::Shape(format!("modality {m:?} has {} utterances, expected {n}", x.rows())));
            }
            if x.cols() == 0 {
                return Err(Error::Shape(format!("modality {m:?} has zero feature dim")));
            }
        }
        Ok(Self { id, modalities, label })
    }

    #[inline]
    pub fn utterances(&self) -> usize {
        self.modalities[0].rows()
    }

    #[inline]
    pub fn get(&self, m: Modality) -> &DenseMatrix<f64> {
        &self.modalities[m.index()]
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.modalities[0].cols(), self.modalities[1].cols(), self.modalities[2].cols()]
    }
}

/// Availability indicator over the three modalities; at least one is
/// observed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MissingPattern {
    available: [bool; 3],
}

impl MissingPattern {
    pub fn new(available: [bool; 3]) -> Result<Self> {
        if !available.iter().any(|&a| a) {
            return Err(Error::Pattern("at least one modality must be observed".into()));
        }
        Ok(Self { available })
    }

    pub fn complete() -> Self {
        Self { available: [true; 3] }
    }

    /// The availability sets in table order: `{t}, {v}, {a}, {t,v}, {t,a},
    /// {v,a}, {t,v,a}`.
    pub fn all_fixed() -> [MissingPattern; 7] {
        let p = |t, a, v| MissingPattern { available: [t, a, v] };
        [
            p(true, false, false),
            p(false, false, true),
            p(false, true, false),
            p(true, false, true),
            p(true, true, false),
            p(false, true, true),
            p(true, true, true),
        ]
    }

    #[inline]
    pub fn is_available(&self, m: Modality) -> bool {
        self.available[m.index()]
    }

    pub fn available(&self) -> [bool; 3] {
        self.available
    }

    pub fn observed(&self) -> Vec<Modality> {
        Modality::ALL.into_iter().filter(|&m| self.is_available(m)).collect()
    }

    pub fn missing(&self) -> Vec<Modality> {
        Modality::ALL.into_iter().filter(|&m| !self.is_available(m)).collect()
    }

    pub fn is_complete(&self) -> bool {
        self.available.iter().all(|&a| a)
    }
}

impl fmt::Display for MissingPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let codes: Vec<String> = self.observed().iter().map(|m| m.code().to_string()).collect();
        write!(f, "{{{}}}", codes.join(","))
    }
}

/// Parses `{t,v}`, `t,v`, `tv` or `{l,v,a}`; the order of codes is free.
impl FromStr for MissingPattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut available = [false; 3];
        for c in s.chars().filter(|c| !matches!(c, '{' | '}' | ',' | ' ')) {
            let m = Modality::from_code(c)?;
            if available[m.index()] {
                return Err(Error::Pattern(format!("modality {c:?} listed twice in {s:?}")));
            }
            available[m.index()] = true;
        }
        Self::new(available)
    }
}

impl Serialize for MissingPattern {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for MissingPattern {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Per-modality `N x d` encodings in the shared space; `None` marks a
/// modality that was not encoded.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedModalities {
    pub blocks: [Option<DenseMatrix<f64>>; 3],
}

impl EncodedModalities {
    pub fn get(&self, m: Modality) -> Option<&DenseMatrix<f64>> {
        self.blocks[m.index()].as_ref()
    }

    pub fn present(&self) -> Vec<Modality> {
        Modality::ALL.into_iter().filter(|&m| self.blocks[m.index()].is_some()).collect()
    }

    /// `(N, d)` shared by every present block.
    pub fn shape(&self) -> Option<(usize, usize)> {
        self.blocks.iter().flatten().next().map(DenseMatrix::shape)
    }

    /// Row-wise mean over the given modalities.
    pub fn mean_of(&self, mods: &[Modality]) -> Result<DenseMatrix<f64>> {
        let blocks: Vec<&DenseMatrix<f64>> = mods.iter().filter_map(|&m| self.get(m)).collect();
        if blocks.is_empty() || blocks.len() != mods.len() {
            return Err(Error::Empty("conditioning needs every listed modality encoded".into()));
        }
        let (n, d) = blocks[0].shape();
        let inv = 1.0 / blocks.len() as f64;
        Ok(DenseMatrix::from_fn(n, d, |i, j| blocks.iter().map(|b| b[(i, j)]).sum::<f64>() * inv))
    }
}
