use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Social dimension a metric run is scoped to. Anything outside the built-in
/// set becomes [`BiasCategory::Custom`], which is how user-defined constructs
/// (e.g. neo-pronoun classes) enter the engine.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BiasCategory {
    Gender,
    Race,
    Religion,
    Profession,
    Age,
    Health,
    Nationality,
    Custom(String),
}

impl BiasCategory {
    pub fn as_str(&self) -> &str {
        match self {
            BiasCategory::Gender => "gender",
            BiasCategory::Race => "race",
            BiasCategory::Religion => "religion",
            BiasCategory::Profession => "profession",
            BiasCategory::Age => "age",
            BiasCategory::Health => "health",
            BiasCategory::Nationality => "nationality",
            BiasCategory::Custom(label) => label,
        }
    }
}

impl fmt::Display for BiasCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BiasCategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let label = s.trim().to_lowercase();
        Ok(match label.as_str() {
            "" => return Err("bias category must be non-empty".into()),
            "gender" => BiasCategory::Gender,
            "race" => BiasCategory::Race,
            "religion" => BiasCategory::Religion,
            "profession" => BiasCategory::Profession,
            "age" => BiasCategory::Age,
            "health" => BiasCategory::Health,
            "nationality" => BiasCategory::Nationality,
            _ => BiasCategory::Custom(label),
        })
    }
}

impl Serialize for BiasCategory {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for BiasCategory {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn custom_labels_are_lowercased() {
        assert_eq!(
            "Neo-Pronouns".parse::<BiasCategory>().unwrap(),
            BiasCategory::Custom("neo-pronouns".into())
        );
        assert_eq!("RACE".parse::<BiasCategory>().unwrap(), BiasCategory::Race);
        assert!("  ".parse::<BiasCategory>().is_err());
    }

    #[test]
    fn serializes_as_plain_string() {
        let json = serde_json::to_string(&BiasCategory::Custom("caste".into())).unwrap();
        assert_eq!(json, "\"caste\"");
        let back: BiasCategory = serde_json::from_str("\"religion\"").unwrap();
        assert_eq!(back, BiasCategory::Religion);
    }
}
