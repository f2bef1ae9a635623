//! Finite-difference gradient checker.
//!
//! Compares analytic gradients against central differences
//! `(f(p+eps) - f(p-eps)) / (2 eps)` over a seeded sample of coordinates in
//! each parameter block. The loss closure must be deterministic given fixed
//! noise inputs, or the comparison is meaningless.

use rand::Rng;

use crate::error::Result;

use super::layer::DenseLayer;
use super::rng::seeded_rng;

/// One named view over a parameter tensor and its gradient buffer.
pub struct ParamBlock<'a> {
    pub name: String,
    pub values: &'a mut [f64],
    pub grads: &'a mut [f64],
}

/// Anything whose parameters can be walked block by block in a stable order.
pub trait ParamBlocks {
    fn visit_param_blocks(&mut self, f: &mut dyn FnMut(ParamBlock<'_>));
}

impl ParamBlocks for DenseLayer {
    fn visit_param_blocks(&mut self, f: &mut dyn FnMut(ParamBlock<'_>)) {
        visit_layer_blocks(self, "layer", f);
    }
}

/// Walks the `w` and `b` blocks of a layer under `prefix`.
pub fn visit_layer_blocks(
    layer: &mut DenseLayer,
    prefix: &str,
    f: &mut dyn FnMut(ParamBlock<'_>),
) {
    let (w, b, grad_w, grad_b) = layer.split_params_mut();
    f(ParamBlock {
        name: format!("{prefix}.w"),
        values: w,
        grads: grad_w,
    });
    f(ParamBlock {
        name: format!("{prefix}.b"),
        values: b,
        grads: grad_b,
    });
}

#[derive(Debug, Clone)]
pub struct WorstCoord {
    pub block: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coords_checked: usize,
    pub worst: Option<WorstCoord>,
}

impl GradCheckReport {
    pub fn passes(&self, threshold: f64) -> bool {
        self.max_rel_error < threshold
    }
}

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / denom
}

fn block_lengths<M: ParamBlocks>(model: &mut M) -> Vec<(String, usize)> {
    let mut out = Vec::new();
    model.visit_param_blocks(&mut |b| out.push((b.name, b.values.len())));
    out
}

fn nudge<M: ParamBlocks>(model: &mut M, block_idx: usize, coord: usize, delta: f64) {
    let mut i = 0;
    model.visit_param_blocks(&mut |b| {
        if i == block_idx {
            b.values[coord] += delta;
        }
        i += 1;
    });
}

fn read_grad<M: ParamBlocks>(model: &mut M, block_idx: usize, coord: usize) -> f64 {
    let mut i = 0;
    let mut g = 0.0;
    model.visit_param_blocks(&mut |b| {
        if i == block_idx {
            g = b.grads[coord];
        }
        i += 1;
    });
    g
}

/// Checks analytic gradients of `model` against central differences.
///
/// `backward_fn` must zero the gradient buffers and fill them with the
/// analytic gradient of the same scalar that `loss_fn` evaluates. Up to
/// `max_coords_per_block` coordinates are sampled per block using `seed`.
/// Returns the worst relative error found and where it was.
pub fn gradient_check<M: ParamBlocks>(
    model: &mut M,
    mut loss_fn: impl FnMut(&mut M) -> Result<f64>,
    mut backward_fn: impl FnMut(&mut M) -> Result<()>,
    eps: f64,
    max_coords_per_block: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    backward_fn(model)?;
    let blocks = block_lengths(model);

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        coords_checked: 0,
        worst: None,
    };

    for (block_idx, (name, len)) in blocks.iter().enumerate() {
        if *len == 0 {
            continue;
        }
        let mut rng = seeded_rng(seed, "gradcheck", &[block_idx as u64]);
        let coords: Vec<usize> = if *len <= max_coords_per_block {
            (0..*len).collect()
        } else {
            (0..max_coords_per_block)
                .map(|_| rng.gen_range(0..*len))
                .collect()
        };
        for coord in coords {
            let analytic = read_grad(model, block_idx, coord);
            nudge(model, block_idx, coord, eps);
            let plus = loss_fn(model)?;
            nudge(model, block_idx, coord, -2.0 * eps);
            let minus = loss_fn(model)?;
            nudge(model, block_idx, coord, eps);
            let numeric = (plus - minus) / (2.0 * eps);
            let err = rel_error(analytic, numeric);
            report.coords_checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some(WorstCoord {
                    block: name.clone(),
                    index: coord,
                    analytic,
                    numeric,
                });
            }
        }
    }
    Ok(report)
}
