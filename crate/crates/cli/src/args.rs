use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use hdrfuse::{Error, Result};

use crate::commands;
use crate::config::{Device, MaskMode, Pipeline, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "hdrfuse", version, about = "Segmentation-guided HDR deghosting")]
pub struct Cli {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub device: Option<Device>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Default)]
pub struct StackArgs {
    /// Directory with `ldr_00.png`, `ldr_01.png`, ...
    #[arg(long)]
    pub stack: Option<PathBuf>,
    /// Comma-separated exposure values of `--stack`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub ev: Option<Vec<i32>>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct MaskArgs {
    #[arg(long, value_enum)]
    pub masks: Option<MaskMode>,
    #[arg(long)]
    pub seg_ckpt: Option<PathBuf>,
    /// Threshold of the difference segmenter.
    #[arg(long)]
    pub tau: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic scenes and a manifest.
    Synth {
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        size: Option<usize>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        ev: Option<Vec<i32>>,
        #[arg(long)]
        occlusion: bool,
    },
    /// Emit motion masks for each stack.
    Segment {
        #[command(flatten)]
        stack: StackArgs,
        #[command(flatten)]
        masks: MaskArgs,
    },
    /// Train the motion segmenter.
    TrainSeg {
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Train the fusion network.
    TrainFusion {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        val_manifest: Option<PathBuf>,
        #[command(flatten)]
        masks: MaskArgs,
    },
    /// Merge stacks into HDR images.
    Fuse {
        #[arg(long, value_enum)]
        method: Option<Pipeline>,
        #[command(flatten)]
        stack: StackArgs,
        #[command(flatten)]
        masks: MaskArgs,
        /// Fusion checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Score predictions against ground truth.
    Eval {
        #[arg(long)]
        pred: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// CSV of externally computed HDR-VDP-2 scores.
        #[arg(long)]
        hdr_vdp2: Option<PathBuf>,
    },
    /// Run one row of the ablation table.
    Ablate {
        #[arg(long)]
        preset: String,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        val_manifest: Option<PathBuf>,
    },
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn set_opt<T>(slot: &mut Option<T>, v: Option<T>) {
    if v.is_some() {
        *slot = v;
    }
}

impl StackArgs {
    fn apply(self, cfg: &mut RunConfig) {
        set_opt(&mut cfg.data.stack_dir, self.stack);
        set_opt(&mut cfg.data.stack_ev, self.ev);
        set_opt(&mut cfg.data.val_manifest, self.manifest);
    }
}

impl MaskArgs {
    fn apply(self, cfg: &mut RunConfig) {
        set(&mut cfg.masks, self.masks);
        set_opt(&mut cfg.checkpoints.segmenter, self.seg_ckpt);
        set(&mut cfg.diff_threshold, self.tau);
    }
}

impl Cli {
    /// Base configuration: a preset for `ablate`, else `--config`, else defaults.
    fn base_config(&self) -> Result<RunConfig> {
        match (&self.command, &self.config) {
            (Command::Ablate { .. }, Some(_)) => Err(Error::BadConfig(
                "ablate takes its configuration from the preset".into(),
            )),
            (Command::Ablate { preset, .. }, None) => RunConfig::preset(preset),
            (_, Some(path)) => RunConfig::load(path),
            (_, None) => Ok(RunConfig::default()),
        }
    }

    pub fn run(self) -> Result<()> {
        let mut cfg = self.base_config()?;
        set(&mut cfg.seed, self.seed);
        set(&mut cfg.out_dir, self.out);
        set(&mut cfg.device, self.device);
        match self.command {
            Command::Synth {
                count,
                size,
                ev,
                occlusion,
            } => {
                set(&mut cfg.synth.count, count);
                set(&mut cfg.synth.size, size);
                set(&mut cfg.synth.ev_bias, ev);
                cfg.synth.occlusion |= occlusion;
                let path = commands::cmd_synth(&mut cfg)?;
                println!("wrote {} scenes, manifest {}", cfg.synth.count, path.display());
            }
            Command::Segment { stack, masks } => {
                stack.apply(&mut cfg);
                masks.apply(&mut cfg);
                commands::cmd_segment(&mut cfg)?;
                println!("masks written to {}", cfg.out_dir.display());
            }
            Command::TrainSeg { manifest } => {
                set_opt(&mut cfg.data.train_manifest, manifest);
                let report = commands::cmd_train_seg(&mut cfg)?;
                println!(
                    "segmenter trained, final loss {:.6}",
                    report.final_loss().unwrap_or(f64::NAN)
                );
            }
            Command::TrainFusion {
                manifest,
                val_manifest,
                masks,
            } => {
                set_opt(&mut cfg.data.train_manifest, manifest);
                set_opt(&mut cfg.data.val_manifest, val_manifest);
                masks.apply(&mut cfg);
                let report = commands::cmd_train_fusion(&mut cfg)?;
                println!(
                    "fusion network trained, final loss {:.6}",
                    report.final_loss().unwrap_or(f64::NAN)
                );
            }
            Command::Fuse {
                method,
                stack,
                masks,
                checkpoint,
            } => {
                set(&mut cfg.pipeline, method);
                if cfg.pipeline == Pipeline::Classical && masks.masks.is_none() && self.config.is_none() {
                    cfg.masks = MaskMode::Difference;
                }
                stack.apply(&mut cfg);
                masks.apply(&mut cfg);
                set_opt(&mut cfg.checkpoints.fusion, checkpoint);
                for p in commands::cmd_fuse(&mut cfg)? {
                    println!("{}", p.display());
                }
            }
            Command::Eval {
                pred,
                manifest,
                hdr_vdp2,
            } => {
                set_opt(&mut cfg.data.pred_dir, pred);
                set_opt(&mut cfg.data.val_manifest, manifest);
                set_opt(&mut cfg.data.hdr_vdp2, hdr_vdp2);
                let report = commands::cmd_eval(&mut cfg)?;
                print!("{}", report.to_csv());
            }
            Command::Ablate {
                preset,
                manifest,
                val_manifest,
            } => {
                set_opt(&mut cfg.data.train_manifest, manifest);
                set_opt(&mut cfg.data.val_manifest, val_manifest);
                let report = commands::cmd_ablate(&mut cfg, &preset)?;
                print!(
                    "{}",
                    commands::ablation_row(&preset, cfg.description.as_deref().unwrap_or(""), &report)
                );
            }
        }
        Ok(())
    }
}
