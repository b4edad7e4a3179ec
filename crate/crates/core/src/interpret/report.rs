use serde::{Deserialize, Serialize};

use super::{branch_attributions, matrix_csv, sum_maps, AttributionMap, InterpretError, Result};
use crate::features::FeatureWindow;
use crate::model::MultiBranchTCN;

/// Attributions with magnitude below this are treated as absent.
const NEGLIGIBLE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SalientCell {
    pub frame: usize,
    pub column: usize,
    pub value: f64,
}

/// Everything needed to plot one window's interpretation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpretationReport {
    pub recording_id: String,
    pub window_index: usize,
    pub start_s: f64,
    pub probability: f64,
    pub logit: f64,
    pub baseline_logit: f64,
    pub steps: usize,
    pub fraction: f64,
    pub input_attribution: AttributionMap,
    /// Final-layer conductance of each branch.
    pub branch_conductance: Vec<AttributionMap>,
    /// The `ceil(fraction * cells)` cells of largest absolute input
    /// attribution, in row-major order.
    pub salient: Vec<SalientCell>,
    /// Set when every attribution is negligible, as for an untrained or
    /// all-zero model.
    pub negligible: bool,
}

impl InterpretationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// `frames x dim` matrix with 1 on salient cells.
    pub fn mask(&self) -> Vec<f64> {
        let m = &self.input_attribution;
        let mut out = vec![0.0; m.frames * m.dim];
        for c in &self.salient {
            out[c.frame * m.dim + c.column] = 1.0;
        }
        out
    }

    /// `(file name, contents)` for every matrix, named
    /// `{recording_id}.{window_index}.{method}.csv`.
    pub fn csv_files(&self) -> Vec<(String, String)> {
        let stem = format!("{}.{}", self.recording_id, self.window_index);
        let mut out = vec![(
            format!("{stem}.{}.csv", self.input_attribution.method.as_str()),
            self.input_attribution.to_csv(),
        )];
        for m in &self.branch_conductance {
            out.push((
                format!("{stem}.{}_branch{}.csv", m.method.as_str(), m.branch.unwrap_or(0)),
                m.to_csv(),
            ));
        }
        out.push((
            format!("{stem}.salient_mask.csv"),
            matrix_csv(&self.mask(), self.input_attribution.dim),
        ));
        out
    }
}

/// Top `ceil(fraction * n)` cells by absolute value; ties keep row-major
/// order.
pub fn top_fraction(map: &AttributionMap, fraction: f64) -> Result<Vec<SalientCell>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(InterpretError::BadFraction(fraction));
    }
    let n = map.values.len();
    // the tolerance keeps products like 0.05 * 780 from rounding up past an integer
    let keep = ((fraction * n as f64 - 1e-9).ceil() as usize).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| map.values[b].abs().total_cmp(&map.values[a].abs()));
    order.truncate(keep);
    order.sort_unstable();
    Ok(order
        .into_iter()
        .map(|i| SalientCell {
            frame: i / map.dim,
            column: i % map.dim,
            value: map.values[i],
        })
        .collect())
}

/// Input attribution, final-layer branch conductance and the salient mask
/// for window `window_index` of a featurized recording.
pub fn interpretation_report(
    model: &MultiBranchTCN,
    windows: &[FeatureWindow],
    window_index: usize,
    fraction: f64,
    steps: usize,
) -> Result<InterpretationReport> {
    let x = windows.get(window_index).ok_or(InterpretError::BadWindow {
        index: window_index,
        count: windows.len(),
    })?;
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(InterpretError::BadFraction(fraction));
    }
    let mut branch_conductance = branch_attributions(model, x, None, steps)?;
    let last = model.config.layers_per_branch - 1;
    for m in &mut branch_conductance {
        m.layer = Some(last);
    }
    let input_attribution = sum_maps(&branch_conductance);
    let salient = top_fraction(&input_attribution, fraction)?;
    let logit = input_attribution.target;
    Ok(InterpretationReport {
        recording_id: x.source_id.clone(),
        window_index,
        start_s: x.start_s,
        probability: 1.0 / (1.0 + (-logit).exp()),
        logit,
        baseline_logit: input_attribution.baseline_target,
        steps,
        fraction,
        negligible: input_attribution.values.iter().all(|v| v.abs() < NEGLIGIBLE),
        input_attribution,
        branch_conductance,
        salient,
    })
}
