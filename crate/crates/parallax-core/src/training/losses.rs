//! Training losses: L1 on the three reconstructions plus a gradient-map
//! perceptual proxy, all computed in the configured loss value range.

use super::TrainConfig;
use crate::autodiff::{Tape, Var};
use crate::frame::ValueRange;
use crate::model::ForwardPass;
use serde::Serialize;

/// Tape handles for the loss terms.
pub struct LossVars {
    pub l1_aux: Var,
    pub l1_layered: Var,
    pub l1_final: Var,
    pub perceptual: Var,
    pub total: Var,
}

/// Scalar loss values for logging.
#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct LossReport {
    pub l1_aux: f32,
    pub l1_layered: f32,
    pub l1_final: f32,
    pub perceptual: f32,
    pub total: f32,
}

impl LossReport {
    pub fn non_finite_component(&self) -> Option<&'static str> {
        [
            (self.l1_aux, "l1_aux"),
            (self.l1_layered, "l1_layered"),
            (self.l1_final, "l1_final"),
            (self.perceptual, "perceptual"),
            (self.total, "total"),
        ]
        .into_iter()
        .find(|(v, _)| !v.is_finite())
        .map(|(_, name)| name)
    }
}

fn to_loss_range(tape: &Tape, x: Var, from: ValueRange, to: ValueRange) -> Var {
    let scale = to.width() / from.width();
    let shift = to.lo - from.lo * scale;
    tape.affine(x, scale, shift)
}

fn l1(tape: &Tape, a: Var, b: Var) -> Var {
    tape.mean_all(tape.abs(tape.sub(a, b)))
}

/// Mean L1 between the horizontal and vertical forward-difference maps of
/// two image stacks: a pluggable stand-in for a learned perceptual metric.
fn gradient_proxy(tape: &Tape, a: Var, b: Var) -> Var {
    let gx = l1(tape, tape.diff(a, 2), tape.diff(b, 2));
    let gy = l1(tape, tape.diff(a, 1), tape.diff(b, 1));
    let sum = tape.add(gx, gy);
    tape.affine(sum, 0.5, 0.0)
}

/// Build the weighted training loss. Holes in the layered reconstruction are
/// compared as-is, which pushes hole-filling pressure onto later layers and
/// the fusion stage.
pub fn compute_loss_vars(
    tape: &Tape,
    fp: &ForwardPass,
    gt_right: Var,
    input_range: ValueRange,
    cfg: &TrainConfig,
) -> LossVars {
    let to = cfg.loss_value_range;
    let gt = to_loss_range(tape, gt_right, input_range, to);
    let aux = to_loss_range(tape, fp.aux_right, input_range, to);
    let lay = to_loss_range(tape, fp.layered_right, input_range, to);
    let fin = to_loss_range(tape, fp.final_right, input_range, to);

    let l1_aux = l1(tape, aux, gt);
    let l1_layered = l1(tape, lay, gt);
    let l1_final = l1(tape, fin, gt);
    let perceptual = gradient_proxy(tape, fin, gt);

    let mut total = tape.affine(l1_aux, cfg.lambda_aux, 0.0);
    total = tape.add(total, tape.affine(l1_layered, cfg.lambda_layered, 0.0));
    total = tape.add(total, tape.affine(l1_final, cfg.lambda_final, 0.0));
    total = tape.add(total, tape.affine(perceptual, cfg.lambda_perceptual, 0.0));

    LossVars {
        l1_aux,
        l1_layered,
        l1_final,
        perceptual,
        total,
    }
}

impl LossVars {
    pub fn report(&self, tape: &Tape) -> LossReport {
        let scalar = |v: Var| tape.value(v)[[]];
        LossReport {
            l1_aux: scalar(self.l1_aux),
            l1_layered: scalar(self.l1_layered),
            l1_final: scalar(self.l1_final),
            perceptual: scalar(self.perceptual),
            total: scalar(self.total),
        }
    }
}
