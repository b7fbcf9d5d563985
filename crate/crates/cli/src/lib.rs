//! Batch front end for the fusion3d pipeline.
//!
//! Every command reads one [`RunConfig`] (JSON file plus flag overrides),
//! writes its outputs once under the output directory, and returns an
//! [`Outcome`]. [`exit_code`] maps results to the process exit status.

pub mod commands;
pub mod config;
pub mod draw;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

pub use config::{input_error, InputError, ManifestHeader, Overrides, RunConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// Some scenes failed; the rest were processed.
    Partial,
}

/// 0 success, 1 partial failure, 2 usage or input error.
pub fn exit_code(result: &anyhow::Result<Outcome>) -> i32 {
    match result {
        Ok(Outcome::Success) => 0,
        Ok(Outcome::Partial) => 1,
        Err(e) if e.downcast_ref::<InputError>().is_some() => 2,
        Err(_) => 1,
    }
}

#[derive(Debug, Parser)]
#[command(name = "fusion3d", version, about = "LiDAR-camera fusion toolkit: augmentation, projection, evaluation")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// JSON run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Run seed (default 7).
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Paste database samples into scenes with occlusion-aware selection.
    Augment,
    /// Draw projected voxel centers and GT wireframes onto a scene image.
    Project {
        /// Frame id, e.g. 000000.
        #[arg(long, value_name = "ID")]
        scene: String,
    },
    /// Score a detections file against the labels of the configured scenes.
    Eval {
        /// Candidate JSON with a frame_id per record.
        #[arg(long, value_name = "PATH")]
        detections: PathBuf,
    },
    /// Train the confidence rectifier on synthetic candidates and report AP.
    FcrDemo,
    /// Per-scale voxel occupancy and image sampling statistics.
    VoxelStats,
    /// Write a synthetic KITTI-layout corpus and its sample database.
    Synth {
        #[arg(long, default_value_t = 20)]
        scenes: usize,
        /// Scenes harvested into the database (not written as scenes).
        #[arg(long, default_value_t = 20)]
        db_scenes: usize,
    },
    /// Harvest a sample database from the configured scenes.
    BuildDb,
}

pub fn run(cli: Cli) -> anyhow::Result<Outcome> {
    let overrides = Overrides {
        seed: cli.common.seed,
        out: cli.common.out.clone(),
        jobs: cli.common.jobs,
    };
    let cfg = RunConfig::load(cli.common.config.as_deref(), &overrides)?;
    let work = || match &cli.command {
        Command::Augment => commands::cmd_augment(&cfg),
        Command::Project { scene } => commands::cmd_project(&cfg, scene),
        Command::Eval { detections } => commands::cmd_eval(&cfg, detections),
        Command::FcrDemo => commands::cmd_fcr_demo(&cfg),
        Command::VoxelStats => commands::cmd_voxel_stats(&cfg),
        Command::Synth { scenes, db_scenes } => commands::cmd_synth(&cfg, *scenes, *db_scenes),
        Command::BuildDb => commands::cmd_build_db(&cfg),
    };
    match cfg.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build()?.install(work),
        None => work(),
    }
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, bytes).map_err(|e| anyhow::anyhow!("cannot write {}: {e}", path.display()))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}
