use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub const NUM_SED: usize = 4;
pub const NUM_SOC: usize = 3;
pub const NUM_JOINT: usize = NUM_SED * NUM_SOC;

/// Self-reported sedentary activity. `Other` is accepted at ingestion and
/// excluded from modeling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SedentaryLabel {
    #[serde(rename = "AL")]
    AttendingLecture,
    #[serde(rename = "E")]
    Eating,
    #[serde(rename = "R")]
    Relaxing,
    #[serde(rename = "S")]
    Studying,
    #[serde(rename = "OTHER")]
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SocialLabel {
    #[serde(rename = "A")]
    Alone,
    #[serde(rename = "WSEIC")]
    WithSomeoneEngaged,
    #[serde(rename = "WSNEIC")]
    WithSomeoneNotEngaged,
}

/// Class order used by the models (and the confusion matrices).
pub const SED_CLASSES: [SedentaryLabel; NUM_SED] =
    [SedentaryLabel::AttendingLecture, SedentaryLabel::Eating, SedentaryLabel::Relaxing, SedentaryLabel::Studying];
pub const SOC_CLASSES: [SocialLabel; NUM_SOC] =
    [SocialLabel::Alone, SocialLabel::WithSomeoneEngaged, SocialLabel::WithSomeoneNotEngaged];

impl SedentaryLabel {
    pub fn code(self) -> &'static str {
        match self {
            Self::AttendingLecture => "AL",
            Self::Eating => "E",
            Self::Relaxing => "R",
            Self::Studying => "S",
            Self::Other => "OTHER",
        }
    }

    /// Model class index; `None` for `Other`.
    pub fn index(self) -> Option<u8> {
        SED_CLASSES.iter().position(|&c| c == self).map(|i| i as u8)
    }
}

impl SocialLabel {
    pub fn code(self) -> &'static str {
        match self {
            Self::Alone => "A",
            Self::WithSomeoneEngaged => "WSEIC",
            Self::WithSomeoneNotEngaged => "WSNEIC",
        }
    }

    pub fn index(self) -> u8 {
        SOC_CLASSES.iter().position(|&c| c == self).expect("every social label has a class") as u8
    }
}

impl FromStr for SedentaryLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [SED_CLASSES.as_slice(), &[Self::Other]]
            .concat()
            .into_iter()
            .find(|l| l.code() == s)
            .ok_or_else(|| format!("unknown sedentary label `{s}`"))
    }
}

impl FromStr for SocialLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SOC_CLASSES.into_iter().find(|l| l.code() == s).ok_or_else(|| format!("unknown social label `{s}`"))
    }
}

impl fmt::Display for SedentaryLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl fmt::Display for SocialLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// `(sed, soc)` class indices, or `None` if the pair is excluded.
pub fn encode_labels(sed: SedentaryLabel, soc: SocialLabel) -> Option<(u8, u8)> {
    Some((sed.index()?, soc.index()))
}

pub fn decode_labels(sed: u8, soc: u8) -> Option<(SedentaryLabel, SocialLabel)> {
    Some((*SED_CLASSES.get(sed as usize)?, *SOC_CLASSES.get(soc as usize)?))
}

/// Joint class in `0..12`, sedentary-major.
pub fn joint_class(sed: u8, soc: u8) -> usize {
    sed as usize * NUM_SOC + soc as usize
}
