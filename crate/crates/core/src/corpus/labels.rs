use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Source corpus an utterance was taken from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Dataset {
    KSUEmotion,
    ANAD,
    QCRI,
    SARA,
    MDAS,
    KSU,
}

impl Dataset {
    pub const ALL: [Dataset; 6] = [
        Dataset::KSUEmotion,
        Dataset::ANAD,
        Dataset::QCRI,
        Dataset::SARA,
        Dataset::MDAS,
        Dataset::KSU,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Dataset::KSUEmotion => "KSUEmotion",
            Dataset::ANAD => "ANAD",
            Dataset::QCRI => "QCRI",
            Dataset::SARA => "SARA",
            Dataset::MDAS => "MDAS",
            Dataset::KSU => "KSU",
        }
    }
}

impl fmt::Display for Dataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Dataset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Dataset::ALL
            .iter()
            .copied()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| format!("unknown dataset {s:?}"))
    }
}

macro_rules! label_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident = $text:literal $(| $alias:literal)*),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        pub enum $name {
            $(
                #[serde(rename = $text $(, alias = $alias)*)]
                $variant,
            )+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text,)+
                }
            }

            pub fn index(self) -> usize {
                self as usize
            }

            pub fn from_index(i: usize) -> Option<Self> {
                Self::ALL.get(i).copied()
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($text $(| $alias)* => Ok($name::$variant),)+
                    _ => Err(format!(concat!("unknown ", stringify!($name), " label {:?}"), s)),
                }
            }
        }
    };
}

label_enum!(Gender { M = "M", F = "F" });

label_enum!(
    /// `GUL` is accepted as an input spelling of the Gulf dialect and normalized to `GLF`.
    Dialect {
        MSA = "MSA",
        LEV = "LEV",
        GLF = "GLF" | "GUL",
        NOR = "NOR",
        EGY = "EGY",
    }
);

label_enum!(Emotion {
    NEU = "NEU",
    SAD = "SAD",
    HAP = "HAP",
    SUR = "SUR",
    ANG = "ANG",
    QUES = "QUES",
});

/// One of the three classification tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Gender,
    Emotion,
    Dialect,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Gender, Task::Emotion, Task::Dialect];

    /// Position in [`Task::ALL`].
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn num_classes(self) -> usize {
        self.class_names().len()
    }

    pub fn class_names(self) -> Vec<&'static str> {
        match self {
            Task::Gender => Gender::ALL.iter().map(|l| l.as_str()).collect(),
            Task::Emotion => Emotion::ALL.iter().map(|l| l.as_str()).collect(),
            Task::Dialect => Dialect::ALL.iter().map(|l| l.as_str()).collect(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Gender => "gender",
            Task::Emotion => "emotion",
            Task::Dialect => "dialect",
        }
    }

    /// Single-letter code used on the command line (`g`, `e`, `d`).
    pub fn code(self) -> char {
        match self {
            Task::Gender => 'g',
            Task::Emotion => 'e',
            Task::Dialect => 'd',
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "g" | "gender" => Ok(Task::Gender),
            "e" | "emotion" => Ok(Task::Emotion),
            "d" | "dialect" => Ok(Task::Dialect),
            _ => Err(format!("unknown task {s:?}")),
        }
    }
}

/// Partition an utterance is assigned to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SetName {
    Train,
    Dev,
    Test,
}

impl SetName {
    pub const ALL: [SetName; 3] = [SetName::Train, SetName::Dev, SetName::Test];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SetName::Train => "train",
            SetName::Dev => "dev",
            SetName::Test => "test",
        }
    }
}

impl fmt::Display for SetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gulf_alias_normalizes() {
        assert_eq!("GUL".parse::<Dialect>().unwrap(), Dialect::GLF);
        assert_eq!("GLF".parse::<Dialect>().unwrap(), Dialect::GLF);
        assert_eq!(Dialect::GLF.as_str(), "GLF");
        let d: Dialect = serde_json::from_str("\"GUL\"").unwrap();
        assert_eq!(d, Dialect::GLF);
    }

    #[test]
    fn class_counts() {
        assert_eq!(Task::Gender.num_classes(), 2);
        assert_eq!(Task::Emotion.num_classes(), 6);
        assert_eq!(Task::Dialect.num_classes(), 5);
    }

    #[test]
    fn unknown_labels_rejected() {
        assert!("X".parse::<Gender>().is_err());
        assert!("LAV".parse::<Dialect>().is_err());
        assert!("FEAR".parse::<Emotion>().is_err());
    }
}
