use std::fmt;
use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use lungsed::model::dilation_schedule;

use crate::io::load_model;
use crate::Result;

#[derive(Debug, Clone, Args)]
pub struct InfoArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Print JSON instead of text.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BranchInfo {
    pub base: usize,
    pub dilations: Vec<usize>,
    pub receptive_radius: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelInfo {
    pub param_count: usize,
    pub input_dim: usize,
    pub filters: usize,
    pub kernel: usize,
    pub layers_per_branch: usize,
    pub fusion: String,
    pub classifier: Vec<usize>,
    pub branches: Vec<BranchInfo>,
    pub task: String,
}

/// `1234567` as `1,234,567`.
fn grouped(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(c);
    }
    out
}

impl fmt::Display for ModelInfo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "parameters: {}", grouped(self.param_count))?;
        writeln!(f, "task: {}", self.task)?;
        writeln!(
            f,
            "input width {}, {} filters, kernel {}, {} layers per branch, fusion {}",
            self.input_dim, self.filters, self.kernel, self.layers_per_branch, self.fusion
        )?;
        writeln!(f, "classifier widths: {:?}", self.classifier)?;
        for (i, b) in self.branches.iter().enumerate() {
            writeln!(
                f,
                "branch {i}: base {}, dilations {:?}, receptive radius {} frames",
                b.base, b.dilations, b.receptive_radius
            )?;
        }
        Ok(())
    }
}

/// Architecture summary of a checkpoint.
pub fn cmd_info(args: &InfoArgs) -> Result<ModelInfo> {
    let (model, cfg) = load_model(&args.model)?;
    let c = &model.config;
    Ok(ModelInfo {
        param_count: model.param_count(),
        input_dim: c.input_dim,
        filters: c.filters,
        kernel: c.kernel,
        layers_per_branch: c.layers_per_branch,
        fusion: c.fusion.to_string(),
        classifier: c.classifier_hidden.clone(),
        branches: c
            .dilation_bases
            .iter()
            .enumerate()
            .map(|(i, &base)| BranchInfo {
                base,
                dilations: dilation_schedule(base, c.layers_per_branch),
                receptive_radius: c.receptive_radius(i),
            })
            .collect(),
        task: cfg.task().to_string(),
    })
}
