use std::path::Path;

use anyhow::Context;

use indusite::dataset::{export_training_bundle, Catalog, Partition, SplitAssignment, SPLITS_FILE};

use crate::config::{echo_config, RunConfig};
use crate::Outcome;

pub fn run(cfg: &RunConfig, partition: &str, splits: Option<&Path>) -> anyhow::Result<Outcome> {
    let dir = cfg.catalog_dir()?;
    let catalog = Catalog::load(dir)?;
    let partition: Partition = partition.parse()?;
    let splits_path = splits.map(Path::to_path_buf).unwrap_or_else(|| dir.join(SPLITS_FILE));
    let split = SplitAssignment::load(&splits_path)
        .with_context(|| format!("loading split {}", splits_path.display()))?;
    let members: Vec<_> = catalog
        .observations
        .iter()
        .filter(|o| split.partition_of(&o.site_id) == Some(partition))
        .cloned()
        .collect();
    let out = cfg.out.clone().context("--out is required for bundle")?;
    let (h, w) = cfg.resample;
    let manifest = export_training_bundle(&members, &cfg.raster_root()?, h, w, &out)?;
    let summary = format!(
        "{} observations in {} site batches written to {}",
        manifest.observations,
        manifest.batches.len(),
        out.display()
    );
    echo_config(&out, "bundle", cfg)?;
    Ok(Outcome {
        items: members.len(),
        failures: 0,
        summary,
    })
}
