//! Label space shared by datasets, datastores, and models.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered set of class names; label indices refer to this ordering.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct LabelSpace {
    names: Vec<String>,
}

impl LabelSpace {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.len() < 2 {
            return Err(Error::InvalidConfig(format!(
                "label space needs at least 2 classes, got {}",
                names.len()
            )));
        }
        for (i, name) in names.iter().enumerate() {
            if name.is_empty() {
                return Err(Error::InvalidConfig(format!("class {i} has an empty name")));
            }
            if names[..i].contains(name) {
                return Err(Error::InvalidConfig(format!(
                    "duplicate class name {name:?}"
                )));
            }
        }
        Ok(Self { names })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

impl TryFrom<Vec<String>> for LabelSpace {
    type Error = String;

    fn try_from(names: Vec<String>) -> std::result::Result<Self, String> {
        LabelSpace::new(names).map_err(|e| e.to_string())
    }
}

impl From<LabelSpace> for Vec<String> {
    fn from(l: LabelSpace) -> Self {
        l.names
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space(names: &[&str]) -> Result<LabelSpace> {
        LabelSpace::new(names.iter().map(|s| s.to_string()).collect())
    }

    #[test]
    fn valid_space() {
        let l = space(&["neg", "pos"]).unwrap();
        assert_eq!(l.len(), 2);
        assert_eq!(l.name(1), "pos");
        assert_eq!(l.index_of("neg"), Some(0));
        assert_eq!(l.index_of("missing"), None);
    }

    #[test]
    fn rejects_single_class() {
        assert!(space(&["only"]).is_err());
    }

    #[test]
    fn rejects_duplicates() {
        assert!(space(&["a", "a"]).is_err());
    }

    #[test]
    fn rejects_empty_name() {
        assert!(space(&["a", ""]).is_err());
    }

    #[test]
    fn serde_is_plain_array() {
        let l = space(&["x", "y"]).unwrap();
        assert_eq!(serde_json::to_string(&l).unwrap(), r#"["x","y"]"#);
    }
}
