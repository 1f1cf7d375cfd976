use serde::{Deserialize, Serialize};

use super::manifest::DatasetManifest;
use crate::taxonomy::AttributeTaxonomy;
use crate::{Error, Result};

/// Per-attribute summary across a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeStat {
    pub name: String,
    pub category: String,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub max: f64,
}

/// Mean, population standard deviation and maximum of every attribute.
pub fn attribute_statistics(manifest: &DatasetManifest, taxonomy: &AttributeTaxonomy) -> Result<Vec<AttributeStat>> {
    let rows: Vec<&[f64]> = manifest.entries.iter().map(|e| e.attributes.as_slice()).collect();
    statistics_of(&rows, taxonomy)
}

/// Same as [`attribute_statistics`] over raw vectors in taxonomy order.
pub fn statistics_of(rows: &[&[f64]], taxonomy: &AttributeTaxonomy) -> Result<Vec<AttributeStat>> {
    if rows.is_empty() {
        return Err(Error::Empty("manifest"));
    }
    let n = rows.len() as f64;
    Ok((0..taxonomy.len())
        .map(|j| {
            let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
            let max = rows.iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max);
            AttributeStat {
                name: taxonomy.names()[j].clone(),
                category: taxonomy.category(j).to_string(),
                mean,
                std: var.sqrt(),
                max,
            }
        })
        .collect())
}
