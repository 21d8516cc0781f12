use indusite::dataset::{split_by_site, Catalog, Partition, SPLITS_FILE};

use crate::config::{echo_config, RunConfig};
use crate::output::{num, write_csv};
use crate::Outcome;

pub fn run(cfg: &RunConfig) -> anyhow::Result<Outcome> {
    let catalog = Catalog::load(cfg.catalog_dir()?)?;
    let counts = catalog.image_counts();
    let split = split_by_site(&counts, cfg.fractions, cfg.seed)?;
    let out = cfg.out_dir()?;
    split.save(&out.join(SPLITS_FILE))?;

    let images = split.image_counts(&counts);
    let total: usize = images.iter().sum();
    let rows = Partition::ALL.iter().enumerate().map(|(k, p)| {
        let sites = split.assignments.values().filter(|q| *q == p).count();
        vec![
            p.as_str().to_string(),
            sites.to_string(),
            images[k].to_string(),
            num(cfg.fractions[k] * total as f64),
        ]
    });
    write_csv(&out.join("split_summary.csv"), &["partition", "sites", "images", "target_images"], rows)?;
    let summary = format!(
        "train {} / validation {} / test {} images across {} sites",
        images[0],
        images[1],
        images[2],
        counts.len()
    );
    echo_config(&out, "split", cfg)?;
    Ok(Outcome {
        items: counts.len(),
        failures: 0,
        summary,
    })
}
