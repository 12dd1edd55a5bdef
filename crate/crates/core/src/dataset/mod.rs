//! Labelled dataset generation.
//!
//! Layout under the output directory:
//!
//! ```text
//! manifest.jsonl         one SampleRecord per line, sorted by id
//! config.toml            the resolved configuration
//! raw/<base_id>.png      native-resolution render of each base list
//! <split>/<id>.png       preprocessed 128×128 images (base and rotated variants)
//! ```
//!
//! Base ids are `m<M>-<index:06>`; rotated variants append `-r<k>`.
//! Every random draw comes from a per-sample stream, so the output is
//! identical for any thread count.

mod config;
mod manifest;

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

pub use config::{DatasetConfig, Split, SplitKind, SplitSpec};
pub use manifest::{read_manifest, write_manifest, DatasetManifest, SampleRecord};

use crate::elastic::ForceList;
use crate::error::{Error, Result};
use crate::render::{preprocess, render, IntensityImage};
use crate::rng::{self, Domain};
use crate::sampler;

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const RAW_DIR: &str = "raw";

pub fn base_id(m: usize, index: usize) -> String {
    format!("m{m}-{index:06}")
}

pub fn variant_id(base: &str, k: usize) -> String {
    format!("{base}-r{k}")
}

pub fn raw_image_path(base: &str) -> String {
    format!("{RAW_DIR}/{base}.png")
}

/// Shuffles `base_ids` with `rng` and hands out contiguous runs of the
/// given sizes; ids beyond the total stay unassigned.
pub fn split_assign<R: Rng + ?Sized>(base_ids: &[String], sizes: &[SplitSpec], rng: &mut R) -> Result<BTreeMap<String, Split>> {
    let total: usize = sizes.iter().map(|s| s.size).sum();
    if total > base_ids.len() {
        return Err(Error::Config(format!(
            "split sizes sum to {total} but only {} base samples exist",
            base_ids.len()
        )));
    }
    let mut order: Vec<&String> = base_ids.iter().collect();
    order.shuffle(rng);
    let mut out = BTreeMap::new();
    let mut cursor = order.into_iter();
    for spec in sizes {
        for id in cursor.by_ref().take(spec.size) {
            out.insert(id.clone(), spec.split());
        }
    }
    Ok(out)
}

/// Base ids in generation order, without rendering anything.
pub fn plan_base_ids(config: &DatasetConfig) -> Vec<String> {
    config
        .sampler
        .force_counts()
        .flat_map(|m| (0..config.per_m_count).map(move |i| base_id(m, i)))
        .collect()
}

struct BaseJob {
    m: usize,
    index: usize,
    split: Split,
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))
}

/// Generates every image and the manifest under `config.output_dir`.
pub fn generate(config: &DatasetConfig) -> Result<DatasetManifest> {
    config.validate()?;
    let root = config.output_dir.as_path();
    create_dir(&root.join(RAW_DIR))?;
    for s in &config.splits {
        create_dir(&root.join(s.split().to_string()))?;
    }

    let mut jobs = Vec::with_capacity(config.base_count());
    for m in config.sampler.force_counts() {
        let ids: Vec<String> = (0..config.per_m_count).map(|i| base_id(m, i)).collect();
        let mut split_rng = rng::stream(config.seed, Domain::Split, m, 0);
        let splits = split_assign(&ids, &config.splits, &mut split_rng)?;
        for (index, id) in ids.iter().enumerate() {
            jobs.push(BaseJob { m, index, split: splits[id] });
        }
    }

    let sampler_config = config.sampler_config();
    let per_job: Vec<Vec<SampleRecord>> = jobs
        .par_iter()
        .map(|job| generate_base(job, config, &sampler_config, root))
        .collect::<Result<_>>()?;

    let manifest = DatasetManifest::new(per_job.into_iter().flatten().collect());
    write_manifest(&manifest, &root.join(MANIFEST_FILE))?;
    let resolved = config.to_toml_string()?;
    std::fs::write(root.join("config.toml"), resolved)
        .map_err(|e| Error::io("writing config.toml", e))?;
    Ok(manifest)
}

fn generate_base(job: &BaseJob, config: &DatasetConfig, sampler_config: &sampler::SamplerConfig, root: &Path) -> Result<Vec<SampleRecord>> {
    let base = base_id(job.m, job.index);
    let sampled = sampler::sample_indexed(job.m, job.index as u64, sampler_config)?;
    let raw = render(&sampled.forces, &config.particle, &config.image);
    raw.write_png(&root.join(raw_image_path(&base)))?;

    let mut angle_rng = rng::stream(config.seed, Domain::Augmentation, job.m, job.index as u64);
    let mut records = Vec::with_capacity(1 + config.augmentation_count);
    let variants = std::iter::once((base.clone(), 0.0)).chain(
        (1..=config.augmentation_count).map(|k| (variant_id(&base, k), angle_rng.random_range(0.0..TAU))),
    );
    for (id, rotation) in variants {
        let image = preprocess(&raw, rotation, &config.preprocess)?;
        let image_path = format!("{}/{id}.png", job.split);
        image.write_png(&root.join(&image_path))?;
        let forces = if rotation == 0.0 { sampled.forces.clone() } else { sampled.forces.rotated(rotation) };
        records.push(SampleRecord {
            id,
            particle_radius: config.particle.radius,
            m: job.m,
            forces: forces.into_vec(),
            base_id: base.clone(),
            rotation,
            image_path,
            split: job.split,
        });
    }
    Ok(records)
}

/// Re-renders the image a record should point at: the parent's labels,
/// rendered and pushed through the preprocessing chain at the record's
/// rotation.
pub fn reproduce_record_image(manifest: &DatasetManifest, record: &SampleRecord, config: &DatasetConfig) -> Result<IntensityImage> {
    let parent = manifest
        .get(&record.base_id)
        .ok_or_else(|| Error::Config(format!("base record {} missing", record.base_id)))?;
    let forces = ForceList::new(parent.forces.clone())?;
    let raw = render(&forces, &config.particle, &config.image);
    preprocess(&raw, record.rotation, &config.preprocess)
}
