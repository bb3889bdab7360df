//! Quote features: named numeric or categorical values.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FeatureValue {
    Num(f64),
    Cat(String),
    Missing,
}

impl FeatureValue {
    pub fn as_num(&self) -> Option<f64> {
        match self {
            FeatureValue::Num(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_cat(&self) -> Option<&str> {
        match self {
            FeatureValue::Cat(s) => Some(s),
            _ => None,
        }
    }

    /// Stable textual key used for table lookups.
    pub fn key(&self) -> String {
        match self {
            FeatureValue::Num(v) => format!("{v}"),
            FeatureValue::Cat(s) => s.clone(),
            FeatureValue::Missing => String::new(),
        }
    }
}

impl From<f64> for FeatureValue {
    fn from(v: f64) -> Self {
        FeatureValue::Num(v)
    }
}

impl From<&str> for FeatureValue {
    fn from(v: &str) -> Self {
        FeatureValue::Cat(v.to_string())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(BTreeMap<String, FeatureValue>);

impl FeatureVector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: &str, value: impl Into<FeatureValue>) -> Self {
        self.0.insert(name.to_string(), value.into());
        self
    }

    pub fn insert(&mut self, name: &str, value: FeatureValue) {
        self.0.insert(name.to_string(), value);
    }

    /// Value of `name`; absent features read as missing.
    pub fn get(&self, name: &str) -> &FeatureValue {
        self.0.get(name).unwrap_or(&FeatureValue::Missing)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &FeatureValue)> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl FromIterator<(String, FeatureValue)> for FeatureVector {
    fn from_iter<I: IntoIterator<Item = (String, FeatureValue)>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Numeric,
    Categorical,
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureKind::Numeric => write!(f, "numeric"),
            FeatureKind::Categorical => write!(f, "categorical"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub features: Vec<(String, FeatureKind)>,
}

impl FeatureSchema {
    pub fn new(features: Vec<(String, FeatureKind)>) -> Self {
        Self { features }
    }

    /// Infers kinds from example rows: a feature is numeric if every present
    /// value is a number.
    pub fn infer<'a>(rows: impl IntoIterator<Item = &'a FeatureVector>) -> Result<Self> {
        let mut kinds: BTreeMap<String, FeatureKind> = BTreeMap::new();
        for row in rows {
            for (name, value) in row.iter() {
                let kind = match value {
                    FeatureValue::Num(_) => FeatureKind::Numeric,
                    FeatureValue::Cat(_) => FeatureKind::Categorical,
                    FeatureValue::Missing => continue,
                };
                match kinds.get(name) {
                    Some(&k) if k != kind => {
                        return Err(Error::invalid(format!(
                            "feature {name} mixes numeric and categorical values"
                        )))
                    }
                    _ => {
                        kinds.insert(name.clone(), kind);
                    }
                }
            }
        }
        Ok(Self {
            features: kinds.into_iter().collect(),
        })
    }

    /// Checks every present value matches its declared kind.
    pub fn check(&self, x: &FeatureVector) -> Result<()> {
        for (name, kind) in &self.features {
            let ok = match (kind, x.get(name)) {
                (_, FeatureValue::Missing) => true,
                (FeatureKind::Numeric, FeatureValue::Num(v)) => v.is_finite(),
                (FeatureKind::Categorical, FeatureValue::Cat(_)) => true,
                _ => false,
            };
            if !ok {
                return Err(Error::invalid(format!(
                    "feature {name} is not a valid {kind} value"
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_shape() {
        let x = FeatureVector::new()
            .with("region", "north")
            .with("distance", 12.5)
            .with("promo", FeatureValue::Missing);
        let s = serde_json::to_string(&x).unwrap();
        assert_eq!(s, r#"{"distance":12.5,"promo":null,"region":"north"}"#);
        let back: FeatureVector = serde_json::from_str(&s).unwrap();
        assert_eq!(back, x);
    }

    #[test]
    fn schema_inference_and_check() {
        let rows = [
            FeatureVector::new().with("a", 1.0).with("b", "x"),
            FeatureVector::new().with("a", 2.0),
        ];
        let schema = FeatureSchema::infer(&rows).unwrap();
        assert_eq!(
            schema.features,
            vec![
                ("a".to_string(), FeatureKind::Numeric),
                ("b".to_string(), FeatureKind::Categorical)
            ]
        );
        assert!(schema
            .check(&FeatureVector::new().with("a", "oops"))
            .is_err());
        assert!(schema.check(&FeatureVector::new()).is_ok());
        let mixed = [
            FeatureVector::new().with("a", 1.0),
            FeatureVector::new().with("a", "z"),
        ];
        assert!(FeatureSchema::infer(&mixed).is_err());
    }
}
