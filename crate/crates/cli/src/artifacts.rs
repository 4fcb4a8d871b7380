//! Reading inputs and persisting split directories.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use nuisance_core::splits::SplitPlan;
use nuisance_core::{
    ingest_reviews, read_jsonl, read_jsonl_in_space, synth_generate, write_jsonl, Dataset, PlanRecord,
    ReviewFields, SplitResult,
};

use crate::config::{DatasetSource, InputFormat};

pub const PLAN_FILE: &str = "plan.toml";
pub const TRAIN_FILE: &str = "train.jsonl";
pub const TEST_SAME_FILE: &str = "test_same.jsonl";
pub const TEST_SHIFTED_FILE: &str = "test_shifted.jsonl";

pub fn load_input(format: InputFormat, path: &Path) -> Result<Dataset> {
    let d = match format {
        InputFormat::Jsonl => read_jsonl(path)?,
        InputFormat::Yelp => ingest_reviews(path, &ReviewFields::default())?,
        InputFormat::Amazon => ingest_reviews(path, &ReviewFields::amazon())?,
        InputFormat::Synth => anyhow::bail!("synth datasets have no input file"),
    };
    Ok(d)
}

pub fn load_source(src: &DatasetSource) -> Result<Dataset> {
    match (src.format, &src.path, &src.synth) {
        (InputFormat::Synth, _, Some(spec)) => Ok(synth_generate(spec)?),
        (format, Some(path), _) => {
            load_input(format, path).with_context(|| format!("loading {}", path.display()))
        }
        _ => anyhow::bail!("dataset {} is missing its input", src.name),
    }
}

/// Writes the three partitions and the plan. `space` supplies the label and
/// nuisance names the plan indices refer to.
pub fn save_split(dir: &Path, sr: &SplitResult, space: &Dataset) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let record = sr.plan.to_record(space);
    fs::write(dir.join(PLAN_FILE), toml::to_string(&record)?)?;
    write_jsonl(&sr.train, dir.join(TRAIN_FILE))?;
    write_jsonl(&sr.test_same, dir.join(TEST_SAME_FILE))?;
    write_jsonl(&sr.test_shifted, dir.join(TEST_SHIFTED_FILE))?;
    Ok(())
}

pub fn load_split(dir: &Path) -> Result<SplitResult> {
    let plan_path = dir.join(PLAN_FILE);
    let text = fs::read_to_string(&plan_path).with_context(|| format!("reading {}", plan_path.display()))?;
    let record: PlanRecord = toml::from_str(&text).with_context(|| format!("parsing {}", plan_path.display()))?;
    let part = |name: &str| -> Result<Dataset> {
        let p = dir.join(name);
        read_jsonl_in_space(&p, &record.label_space, &record.nuisance_space)
            .with_context(|| format!("reading {}", p.display()))
    };
    Ok(SplitResult {
        train: part(TRAIN_FILE)?,
        test_same: part(TEST_SAME_FILE)?,
        test_shifted: part(TEST_SHIFTED_FILE)?,
        plan: SplitPlan::from_record(&record)?,
    })
}
