use std::fmt;
use std::str::FromStr;

use super::combination::DataCombination;
use crate::domain_mix::DomainTag;
use crate::error::{DtsError, Result};

/// Which network of which group, and from which point in the iteration.
///
/// Inside iteration `t`, group 1 is updated before group 2, so group 1 only
/// ever sees group 2 as it was after iteration `t - 1` (`Current`), while
/// group 2 sees group 1 after its update (`Next`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelRef {
    Group1Teacher,
    Group1Student,
    Group2Teacher,
    Group2Student,
}

impl ModelRef {
    pub fn group(self) -> u8 {
        match self {
            ModelRef::Group1Teacher | ModelRef::Group1Student => 1,
            ModelRef::Group2Teacher | ModelRef::Group2Student => 2,
        }
    }

    pub fn is_teacher(self) -> bool {
        matches!(self, ModelRef::Group1Teacher | ModelRef::Group2Teacher)
    }
}

impl fmt::Display for ModelRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelRef::Group1Teacher => "g1_teacher",
            ModelRef::Group1Student => "g1_student",
            ModelRef::Group2Teacher => "g2_teacher",
            ModelRef::Group2Student => "g2_student",
        })
    }
}

/// Pseudo-label sources of both groups.
///
/// Each group splits its target slots between its own teacher and one
/// model of the other group. `own_teacher = false` hands every slot to the
/// external model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RoutingPolicy {
    /// Group 2's model that supplements group 1's teacher.
    pub group1_external: ModelRef,
    /// Group 1's model that supplements group 2's teacher.
    pub group2_external: ModelRef,
    pub own_teacher: bool,
    /// When false, group 1 labels everything with its own teacher and
    /// information flows from group 1 to group 2 only.
    pub bidirectional: bool,
}

/// The named routing grid; `Row5` is the default.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RoutingPreset {
    Row1,
    Row2,
    Row3,
    Row4,
    Row5,
}

impl RoutingPreset {
    pub const ALL: [RoutingPreset; 5] =
        [Self::Row1, Self::Row2, Self::Row3, Self::Row4, Self::Row5];

    pub fn policy(self, bidirectional: bool) -> RoutingPolicy {
        use ModelRef::*;
        let (g1, g2, own) = match self {
            RoutingPreset::Row1 => (Group2Teacher, Group1Teacher, false),
            RoutingPreset::Row2 => (Group2Student, Group1Teacher, true),
            RoutingPreset::Row3 => (Group2Teacher, Group1Teacher, true),
            RoutingPreset::Row4 => (Group2Student, Group1Student, true),
            RoutingPreset::Row5 => (Group2Teacher, Group1Student, true),
        };
        RoutingPolicy {
            group1_external: g1,
            group2_external: g2,
            own_teacher: own,
            bidirectional,
        }
    }
}

impl fmt::Display for RoutingPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RoutingPreset::Row5 => f.write_str("default"),
            other => write!(f, "table5-row{}", *other as usize + 1),
        }
    }
}

impl FromStr for RoutingPreset {
    type Err = DtsError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "default" | "table5-row5" => RoutingPreset::Row5,
            "table5-row1" => RoutingPreset::Row1,
            "table5-row2" => RoutingPreset::Row2,
            "table5-row3" => RoutingPreset::Row3,
            "table5-row4" => RoutingPreset::Row4,
            other => {
                return Err(DtsError::Config(format!(
                    "unknown routing `{other}` (default, table5-row1 ... table5-row5)"
                )))
            }
        })
    }
}

impl Default for RoutingPolicy {
    fn default() -> Self {
        RoutingPreset::Row5.policy(true)
    }
}

impl RoutingPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.group1_external.group() != 2 || self.group2_external.group() != 1 {
            return Err(DtsError::Config(
                "each group's external pseudo-label model must belong to the other group".into(),
            ));
        }
        if !self.own_teacher && !self.bidirectional {
            return Err(DtsError::Config(
                "group 1 has no pseudo-label source: unidirectional routing needs the own teacher"
                    .into(),
            ));
        }
        Ok(())
    }

    /// Pseudo-label source of each target slot of a group's batch.
    ///
    /// Target slots are ordered as the batch consumes them: one per ⟨S,T⟩
    /// sample, then two per ⟨T,T⟩ sample. When a combination has both
    /// kinds, ⟨S,T⟩ slots go to the own teacher and ⟨T,T⟩ slots to the
    /// external model; otherwise the first half goes to the own teacher and
    /// the second half to the external model.
    ///
    /// `peer_present = false` (group 2 disabled) routes everything to the
    /// own teacher.
    pub fn plan(
        &self,
        group: u8,
        combination: &DataCombination,
        k: usize,
        peer_present: bool,
    ) -> Vec<ModelRef> {
        let counts = combination.counts(k);
        let n = counts.target_images();
        let own = if group == 1 {
            ModelRef::Group1Teacher
        } else {
            ModelRef::Group2Teacher
        };
        let external = if group == 1 {
            self.group1_external
        } else {
            self.group2_external
        };
        if !peer_present || (group == 1 && !self.bidirectional) {
            return vec![own; n];
        }
        if !self.own_teacher {
            return vec![external; n];
        }
        let own_slots =
            if combination.contains(DomainTag::ST) && combination.contains(DomainTag::TT) {
                counts.st
            } else {
                n - n / 2
            };
        (0..n)
            .map(|i| if i < own_slots { own } else { external })
            .collect()
    }
}
