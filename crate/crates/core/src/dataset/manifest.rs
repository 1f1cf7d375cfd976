//! Line-delimited JSON manifests.
//!
//! An optional first line `{"split": "train" | "val" | "test"}` sets the
//! split (default `train`). Every other non-blank line is one record:
//!
//! ```json
//! {"image": "img/0.png", "mask": "mask/0.png", "fixation": "fix/0.png",
//!  "description": "...", "attributes": {"color_matching": 0.3, ...}}
//! ```
//!
//! `fixation` and `description` may be omitted. Relative paths resolve
//! against the manifest's directory.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::taxonomy::AttributeTaxonomy;
use crate::{Error, Result};

/// Accepted range for the raw sum of a record's attribute proportions.
pub const ATTRIBUTE_SUM_RANGE: (f64, f64) = (0.98, 1.02);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

/// One annotated sample as listed in a manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub image: PathBuf,
    pub mask: PathBuf,
    pub fixation: Option<PathBuf>,
    pub description: String,
    /// Proportions in taxonomy order, summing to 1.
    pub attributes: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    /// Directory relative paths are resolved against.
    pub root: PathBuf,
    pub split: Split,
    pub entries: Vec<ManifestEntry>,
}

/// Whether referenced raster files must exist when loading.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileCheck {
    Require,
    Skip,
}

impl DatasetManifest {
    /// Loads and validates a manifest; every referenced file must exist.
    pub fn load(path: &Path, taxonomy: &AttributeTaxonomy) -> Result<Self> {
        Self::load_with(path, taxonomy, FileCheck::Require)
    }

    pub fn load_with(path: &Path, taxonomy: &AttributeTaxonomy, check: FileCheck) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let manifest = Self::parse(&text, root, taxonomy, path)?;
        if check == FileCheck::Require {
            for (i, e) in manifest.entries.iter().enumerate() {
                let files = [("image", Some(&e.image)), ("mask", Some(&e.mask)), ("fixation", e.fixation.as_ref())];
                for (field, p) in files {
                    if let Some(p) = p {
                        if !manifest.resolve(p).is_file() {
                            return Err(Error::Schema {
                                path: path.to_path_buf(),
                                record: i + 1,
                                field: field.into(),
                                message: format!("file {} not found", manifest.resolve(p).display()),
                            });
                        }
                    }
                }
            }
        }
        Ok(manifest)
    }

    /// Parses manifest text. `source` is only used in error messages.
    pub fn parse(text: &str, root: PathBuf, taxonomy: &AttributeTaxonomy, source: &Path) -> Result<Self> {
        let mut split = Split::Train;
        let mut entries = Vec::new();
        let mut first = true;
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let record = entries.len() + 1;
            let schema = |field: &str, message: String| Error::Schema {
                path: source.to_path_buf(),
                record,
                field: field.into(),
                message,
            };
            let value: Value = serde_json::from_str(line).map_err(|e| schema("<record>", e.to_string()))?;
            let Value::Object(obj) = value else {
                return Err(schema("<record>", "expected a JSON object".into()));
            };
            if first && obj.len() == 1 && obj.contains_key("split") {
                let s = obj["split"].as_str().ok_or_else(|| schema("split", "expected a string".into()))?;
                split = s.parse().map_err(|_| schema("split", format!("unknown split `{s}`")))?;
                first = false;
                continue;
            }
            first = false;
            entries.push(parse_record(&obj, taxonomy, source, record)?);
        }
        Ok(Self { root, split, entries })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    /// Writes the manifest in the format [`load`](Self::load) reads.
    pub fn write(&self, path: &Path, taxonomy: &AttributeTaxonomy) -> Result<()> {
        let mut out = Vec::new();
        writeln!(out, "{}", serde_json::json!({ "split": self.split })).expect("write to Vec");
        for e in &self.entries {
            out.extend_from_slice(record_line(e, taxonomy).as_bytes());
            out.push(b'\n');
        }
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn record_line(e: &ManifestEntry, taxonomy: &AttributeTaxonomy) -> String {
    let mut obj = Map::new();
    obj.insert("image".into(), Value::String(path_string(&e.image)));
    obj.insert("mask".into(), Value::String(path_string(&e.mask)));
    if let Some(f) = &e.fixation {
        obj.insert("fixation".into(), Value::String(path_string(f)));
    }
    obj.insert("description".into(), Value::String(e.description.clone()));
    let attrs: Map<String, Value> = taxonomy
        .names()
        .iter()
        .zip(&e.attributes)
        .map(|(n, &v)| (n.clone(), Value::from(v)))
        .collect();
    obj.insert("attributes".into(), Value::Object(attrs));
    Value::Object(obj).to_string()
}

fn path_string(p: &Path) -> String {
    p.to_string_lossy().replace('\\', "/")
}

const KNOWN_FIELDS: [&str; 5] = ["image", "mask", "fixation", "description", "attributes"];

fn parse_record(obj: &Map<String, Value>, taxonomy: &AttributeTaxonomy, source: &Path, record: usize) -> Result<ManifestEntry> {
    let schema = |field: &str, message: String| Error::Schema {
        path: source.to_path_buf(),
        record,
        field: field.into(),
        message,
    };
    if let Some(k) = obj.keys().find(|k| !KNOWN_FIELDS.contains(&k.as_str())) {
        return Err(schema(k, "unknown field".into()));
    }
    let string = |field: &str, required: bool| -> Result<Option<String>> {
        match obj.get(field) {
            None | Some(Value::Null) if !required => Ok(None),
            None | Some(Value::Null) => Err(schema(field, "missing".into())),
            Some(Value::String(s)) if s.is_empty() && field != "description" => Err(schema(field, "empty path".into())),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(_) => Err(schema(field, "expected a string".into())),
        }
    };
    let image = PathBuf::from(string("image", true)?.unwrap());
    let mask = PathBuf::from(string("mask", true)?.unwrap());
    let fixation = string("fixation", false)?.map(PathBuf::from);
    let description = string("description", false)?.unwrap_or_default();

    let attrs = match obj.get("attributes") {
        Some(Value::Object(m)) => m,
        Some(_) => return Err(schema("attributes", "expected an object".into())),
        None => return Err(schema("attributes", "missing".into())),
    };
    let mut by_name = BTreeMap::new();
    for (k, v) in attrs {
        let field = format!("attributes.{k}");
        if taxonomy.index_of(k).is_none() {
            return Err(schema(&field, "not in the taxonomy".into()));
        }
        let x = v.as_f64().ok_or_else(|| schema(&field, "expected a number".into()))?;
        if !x.is_finite() || x < 0.0 {
            return Err(schema(&field, format!("proportion {x} is not a nonnegative finite number")));
        }
        by_name.insert(k.as_str(), x);
    }
    let mut values = Vec::with_capacity(taxonomy.len());
    for name in taxonomy.names() {
        match by_name.get(name.as_str()) {
            Some(&v) => values.push(v),
            None => return Err(schema(&format!("attributes.{name}"), "missing attribute".into())),
        }
    }
    let attributes = normalize_attributes(values).map_err(|sum| Error::AttributeSum {
        path: source.to_path_buf(),
        record,
        sum,
    })?;
    Ok(ManifestEntry {
        image,
        mask,
        fixation,
        description,
        attributes,
    })
}

/// Checks the raw sum against [`ATTRIBUTE_SUM_RANGE`] and rescales to unit
/// sum. Vectors already summing to 1 within 1e-12 are returned unchanged,
/// which keeps write/load round trips exact. Errors carry the raw sum.
pub fn normalize_attributes(mut v: Vec<f64>) -> std::result::Result<Vec<f64>, f64> {
    let sum: f64 = v.iter().sum();
    if !(ATTRIBUTE_SUM_RANGE.0..=ATTRIBUTE_SUM_RANGE.1).contains(&sum) {
        return Err(sum);
    }
    if (sum - 1.0).abs() > 1e-12 {
        v.iter_mut().for_each(|x| *x /= sum);
    }
    Ok(v)
}
