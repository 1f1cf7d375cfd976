//! The 17-attribute camouflage taxonomy.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Number of attributes in every taxonomy.
pub const ATTRIBUTE_COUNT: usize = 17;

const DEFAULT_TAXONOMY: &str = include_str!("../../../configs/taxonomy.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Category {
    /// Surrounding factors.
    SF,
    /// Camouflaged object-self factors.
    COF,
    /// Imaging quality factors.
    IQF,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::SF, Category::COF, Category::IQF];

    /// Plot colour, as an SVG hex string.
    pub fn color(self) -> &'static str {
        match self {
            Category::SF => "#1f5fbf",
            Category::COF => "#2e9b3a",
            Category::IQF => "#c8322d",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Category::SF => "SF",
            Category::COF => "COF",
            Category::IQF => "IQF",
        })
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "SF" => Ok(Category::SF),
            "COF" => Ok(Category::COF),
            "IQF" => Ok(Category::IQF),
            other => Err(Error::Taxonomy(format!("unknown category `{other}` (expected SF, COF or IQF)"))),
        }
    }
}

/// Ordered attribute identifiers with their categories.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(String, Category)>", into = "Vec<(String, Category)>")]
pub struct AttributeTaxonomy {
    attributes: Vec<String>,
    categories: Vec<Category>,
}

impl AttributeTaxonomy {
    pub fn new(entries: Vec<(String, Category)>) -> Result<Self> {
        if entries.len() != ATTRIBUTE_COUNT {
            return Err(Error::Taxonomy(format!(
                "expected {ATTRIBUTE_COUNT} attributes, found {}",
                entries.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for (name, _) in &entries {
            let valid = !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
            if !valid {
                return Err(Error::Taxonomy(format!("invalid attribute identifier `{name}`")));
            }
            if !seen.insert(name.as_str()) {
                return Err(Error::Taxonomy(format!("attribute `{name}` listed twice")));
            }
        }
        let (attributes, categories) = entries.into_iter().unzip();
        Ok(Self { attributes, categories })
    }

    /// Parses `name = CATEGORY` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (name, cat) = line
                .split_once('=')
                .ok_or_else(|| Error::Taxonomy(format!("line {}: expected `attribute = CATEGORY`", no + 1)))?;
            entries.push((name.trim().to_string(), cat.trim().parse()?));
        }
        Self::new(entries)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Serialises back into the line format accepted by [`parse`](Self::parse).
    pub fn to_config_string(&self) -> String {
        self.attributes
            .iter()
            .zip(&self.categories)
            .map(|(n, c)| format!("{n} = {c}\n"))
            .collect()
    }

    pub fn names(&self) -> &[String] {
        &self.attributes
    }

    pub fn category(&self, index: usize) -> Category {
        self.categories[index]
    }

    pub fn categories(&self) -> &[Category] {
        &self.categories
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a == name)
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }
}

impl Default for AttributeTaxonomy {
    fn default() -> Self {
        Self::parse(DEFAULT_TAXONOMY).expect("shipped taxonomy is valid")
    }
}

impl TryFrom<Vec<(String, Category)>> for AttributeTaxonomy {
    type Error = Error;

    fn try_from(v: Vec<(String, Category)>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<AttributeTaxonomy> for Vec<(String, Category)> {
    fn from(t: AttributeTaxonomy) -> Self {
        t.attributes.into_iter().zip(t.categories).collect()
    }
}
