use std::fmt;
use std::str::FromStr;

use crate::domain_mix::DomainTag;
use crate::error::{DtsError, Result};

/// Which domains make up a group's batch.
///
/// Pairs contribute `k` samples of each tag; singletons contribute `2k`
/// samples of their one tag.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DataCombination {
    tags: Vec<DomainTag>,
}

/// Number of samples of each domain in one batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BatchCounts {
    pub s: usize,
    pub st: usize,
    pub tt: usize,
}

impl BatchCounts {
    pub fn source_images(&self) -> usize {
        self.s + self.st
    }

    pub fn target_images(&self) -> usize {
        self.st + 2 * self.tt
    }

    pub fn total(&self) -> usize {
        self.s + self.st + self.tt
    }
}

impl DataCombination {
    pub fn new(tags: &[DomainTag]) -> Result<Self> {
        match tags {
            [_] => {}
            [a, b] if a != b => {}
            _ => {
                return Err(DtsError::Config(format!(
                    "a combination needs one or two distinct domains, got {tags:?}"
                )))
            }
        }
        Ok(Self {
            tags: tags.to_vec(),
        })
    }

    /// `{S, ⟨S,T⟩}`: the first group and the single-model baseline.
    pub fn group1() -> Self {
        Self::new(&[DomainTag::S, DomainTag::ST]).unwrap()
    }

    /// `{S, ⟨T,T⟩}`.
    pub fn setting_a() -> Self {
        Self::new(&[DomainTag::S, DomainTag::TT]).unwrap()
    }

    /// `{⟨S,T⟩, ⟨T,T⟩}`.
    pub fn setting_b() -> Self {
        Self::new(&[DomainTag::ST, DomainTag::TT]).unwrap()
    }

    pub fn tt_only() -> Self {
        Self::new(&[DomainTag::TT]).unwrap()
    }

    pub fn st_only() -> Self {
        Self::new(&[DomainTag::ST]).unwrap()
    }

    /// Supervised source-only training.
    pub fn source_only() -> Self {
        Self::new(&[DomainTag::S]).unwrap()
    }

    pub fn tags(&self) -> &[DomainTag] {
        &self.tags
    }

    pub fn contains(&self, tag: DomainTag) -> bool {
        self.tags.contains(&tag)
    }

    pub fn counts(&self, k: usize) -> BatchCounts {
        let per = if self.tags.len() == 1 { 2 * k } else { k };
        let n = |t| if self.contains(t) { per } else { 0 };
        BatchCounts {
            s: n(DomainTag::S),
            st: n(DomainTag::ST),
            tt: n(DomainTag::TT),
        }
    }

    /// Expected share of target pixels when ⟨S,T⟩ masks cover
    /// `source_cover` of the image.
    pub fn expected_target_fraction(&self, source_cover: f64) -> f64 {
        let per: f64 = self
            .tags
            .iter()
            .map(|t| match t {
                DomainTag::S => 0.0,
                DomainTag::ST => 1.0 - source_cover,
                DomainTag::TT => 1.0,
            })
            .sum();
        per / self.tags.len() as f64
    }
}

impl fmt::Display for DataCombination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = if *self == Self::group1() {
            "group1"
        } else if *self == Self::setting_a() {
            "A"
        } else if *self == Self::setting_b() {
            "B"
        } else if *self == Self::tt_only() {
            "tt-only"
        } else if *self == Self::st_only() {
            "st-only"
        } else if *self == Self::source_only() {
            "source-only"
        } else {
            let parts: Vec<String> = self.tags.iter().map(|t| t.to_string()).collect();
            return f.write_str(&parts.join("+"));
        };
        f.write_str(name)
    }
}

impl FromStr for DataCombination {
    type Err = DtsError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "group1" => Self::group1(),
            "A" | "a" => Self::setting_a(),
            "B" | "b" => Self::setting_b(),
            "tt-only" => Self::tt_only(),
            "st-only" => Self::st_only(),
            "source-only" => Self::source_only(),
            other => {
                let tags = other
                    .split('+')
                    .map(|t| match t.trim() {
                        "S" => Ok(DomainTag::S),
                        "ST" => Ok(DomainTag::ST),
                        "TT" => Ok(DomainTag::TT),
                        bad => Err(DtsError::Config(format!(
                            "unknown domain `{bad}` in combination `{s}`"
                        ))),
                    })
                    .collect::<Result<Vec<_>>>()?;
                Self::new(&tags)?
            }
        })
    }
}
