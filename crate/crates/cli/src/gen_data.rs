//! `gen-data`: write synthetic domain datasets as CSV files with a JSON
//! manifest per group.

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use fedtp_core::data::{
    default_group_m, default_group_s, generate_synthetic, save_csv, DatasetManifest,
    DomainFileEntry, GroupSpec, ShiftSpec,
};
use fedtp_core::harness::ShiftProfile;
use fedtp_core::seed::derive_str;
use fedtp_core::Real;

use crate::config;
use crate::RunArgs;

pub const GENERATOR_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenDataConfig {
    #[serde(default = "default_groups")]
    pub groups: Vec<GroupSpec>,
    #[serde(default)]
    pub shift: ShiftProfile,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_subspace_seed")]
    pub subspace_seed: u64,
}

fn default_groups() -> Vec<GroupSpec> {
    vec![default_group_m(), default_group_s()]
}
fn default_seed() -> u64 {
    7001
}
fn default_subspace_seed() -> u64 {
    9001
}

impl Default for GenDataConfig {
    fn default() -> Self {
        Self {
            groups: default_groups(),
            shift: ShiftProfile::default(),
            seed: default_seed(),
            subspace_seed: default_subspace_seed(),
        }
    }
}

pub fn run(args: &RunArgs) -> Result<()> {
    let mut cfg: GenDataConfig = match &args.config {
        Some(path) => config::load_with_overrides(path, &args.overrides)?,
        None => {
            let mut doc = serde_json::to_value(GenDataConfig::default())?;
            for o in &args.overrides {
                config::apply_override(&mut doc, o)?;
            }
            serde_json::from_value(doc)?
        }
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let dir = crate::out_dir(args, cfg.seed)?;

    for group in &cfg.groups {
        let group_dir = dir.join(&group.name);
        std::fs::create_dir_all(&group_dir)?;
        let stream = derive_str(cfg.seed, "group-data", &[&group.name], &[]);
        let spec = ShiftSpec {
            group: group.name.clone(),
            num_classes: group.num_classes,
            feature_dim: cfg.shift.feature_dim,
            subspace_dim: cfg.shift.subspace_dim,
            subspace_seed: cfg.subspace_seed,
            seed: stream,
            class_sep: cfg.shift.class_sep,
            within_scale: cfg.shift.within_scale,
            offset_scale: cfg.shift.offset_scale,
            nuisance_dim: cfg.shift.nuisance_dim,
            nuisance_scale: cfg.shift.nuisance_scale,
            noise_scale: cfg.shift.noise_scale,
            domain_offsets: None,
        };
        let sizes: Vec<(String, usize)> = group
            .domains
            .iter()
            .map(|d| (d.name.clone(), d.size))
            .collect();
        let datasets = generate_synthetic::<Real>(&spec, &sizes)
            .with_context(|| format!("generating group {}", group.name))?;
        let mut entries = Vec::new();
        for ds in &datasets {
            let file = format!("{}.csv", ds.domain);
            save_csv(ds, &group_dir.join(&file))?;
            entries.push(DomainFileEntry {
                name: ds.domain.clone(),
                size: ds.len(),
                file,
            });
        }
        let manifest = DatasetManifest {
            group: group.name.clone(),
            num_classes: group.num_classes,
            feature_dim: cfg.shift.feature_dim,
            seed: cfg.seed,
            subspace_seed: cfg.subspace_seed,
            generator_version: GENERATOR_VERSION,
            domains: entries,
        };
        manifest.save(&group_dir.join("manifest.json"))?;
        println!(
            "group {}: {} domains -> {}",
            group.name,
            datasets.len(),
            group_dir.display()
        );
    }
    Ok(())
}
