use serde::{Deserialize, Serialize};

use crate::diff::{sigmoid, softplus, Tensor};
use crate::primdict::{EffectiveDict, EVENT_EPS};

/// One realized placement and the geometry read off its atom.
#[derive(Clone, Debug, PartialEq)]
pub struct Event {
    pub atom: usize,
    pub onset: usize,
    pub prob: f64,
    /// Straight-through width `w̄` as a real (integer-valued unless relaxed).
    pub width_value: f64,
    /// Integer width used for indexing.
    pub width: usize,
    pub soft_width: f64,
    /// First column of the effective atom.
    pub start: Vec<f64>,
    /// Column `w̄ - 1` of the effective atom.
    pub end: Vec<f64>,
}

impl Event {
    pub fn offset(&self) -> f64 {
        self.onset as f64 + self.width_value
    }

    /// Hard interval `[onset, onset + w̄)`.
    pub fn interval(&self) -> (usize, usize) {
        (self.onset, self.onset + self.width)
    }
}

/// Weights of the legality energy and its event-geometry term.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeoParams {
    /// Temporal-gap weight.
    pub eta: f64,
    /// Overlap weight.
    pub rho: f64,
    /// Continuity temperature of the ownership term.
    pub tau: f64,
    pub lambda_s: f64,
    pub lambda_p: f64,
    pub lambda_g: f64,
}

impl Default for GeoParams {
    fn default() -> Self {
        Self {
            eta: 0.1,
            rho: 1.0,
            tau: 0.1,
            lambda_s: 0.1,
            lambda_p: 0.1,
            lambda_g: 1.0,
        }
    }
}

/// How the gap `|·|` and the overlap `max(0, ·)` are evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Surrogate {
    /// Exact piecewise-linear terms on integer intervals.
    Exact,
    /// `sqrt(z² + δ²)` for the gap and `softplus(βz)/β` on soft widths for
    /// the overlap.
    Smooth,
}

pub const GAP_DELTA: f64 = 1e-3;
pub const OVERLAP_SHARPNESS: f64 = 20.0;

/// Every entry above [`EVENT_EPS`], sorted by onset then atom. Entries are
/// clamped into `[0, 1]` for the probability.
pub fn extract_events(r: &Tensor, dict: &EffectiveDict) -> Vec<Event> {
    let (m, l) = r.dims2();
    let mut out = Vec::new();
    for k in 0..l {
        for j in 0..m {
            let p = r.at2(j, k).clamp(0.0, 1.0);
            if p <= EVENT_EPS {
                continue;
            }
            let width = dict.widths[j];
            out.push(Event {
                atom: j,
                onset: k,
                prob: p,
                width_value: dict.width_values[j],
                width,
                soft_width: dict.soft_widths[j],
                start: dict.column(j, 0),
                end: dict.column(j, width - 1),
            });
        }
    }
    out
}

/// Length of the intersection of the two events' integer intervals.
pub fn overlap(e: &Event, f: &Event) -> f64 {
    let (a0, a1) = e.interval();
    let (b0, b1) = f.interval();
    a1.min(b1).saturating_sub(a0.max(b0)) as f64
}

/// Smooth overlap on soft widths, `softplus(β z)/β` with
/// `z = min(end, end') - max(onset, onset')`.
pub fn overlap_soft(e: &Event, f: &Event) -> f64 {
    let z = overlap_arg(e, f).0;
    softplus(OVERLAP_SHARPNESS * z) / OVERLAP_SHARPNESS
}

/// `(z, ∂z/∂w_e, ∂z/∂w_f)`
fn overlap_arg(e: &Event, f: &Event) -> (f64, f64, f64) {
    let end_e = e.onset as f64 + e.soft_width;
    let end_f = f.onset as f64 + f.soft_width;
    let start = e.onset.max(f.onset) as f64;
    if end_e <= end_f {
        (end_e - start, 1.0, 0.0)
    } else {
        (end_f - start, 0.0, 1.0)
    }
}

/// Partial derivatives of one pair cost.
#[derive(Clone, Debug, Default)]
pub struct PairGrad {
    pub d_end_first: Vec<f64>,
    pub d_start_second: Vec<f64>,
    pub d_width_value_first: f64,
    pub d_soft_width_first: f64,
    pub d_soft_width_second: f64,
}

/// Compatibility cost of `e` followed by `f`: endpoint mismatch, temporal
/// gap and overlap.
pub fn pair_cost(e: &Event, f: &Event, params: &GeoParams, surrogate: Surrogate) -> f64 {
    pair_cost_grad(e, f, params, surrogate, false).0
}

pub fn pair_cost_grad(
    e: &Event,
    f: &Event,
    params: &GeoParams,
    surrogate: Surrogate,
    want_grad: bool,
) -> (f64, PairGrad) {
    let mut grad = PairGrad::default();
    let mut spatial = 0.0;
    if want_grad {
        grad.d_end_first = Vec::with_capacity(e.end.len());
        grad.d_start_second = Vec::with_capacity(e.end.len());
    }
    for (b, a) in e.end.iter().zip(&f.start) {
        let d = b - a;
        spatial += d * d;
        if want_grad {
            grad.d_end_first.push(2.0 * d);
            grad.d_start_second.push(-2.0 * d);
        }
    }
    let z = f.onset as f64 - e.offset();
    let (gap, ovl) = match surrogate {
        Surrogate::Exact => (z.abs(), overlap(e, f)),
        Surrogate::Smooth => {
            let s = (z * z + GAP_DELTA * GAP_DELTA).sqrt();
            let (oz, de, df) = overlap_arg(e, f);
            if want_grad {
                grad.d_width_value_first = -params.eta * z / s;
                let dsp = sigmoid(OVERLAP_SHARPNESS * oz);
                grad.d_soft_width_first = params.rho * dsp * de;
                grad.d_soft_width_second = params.rho * dsp * df;
            }
            (s, softplus(OVERLAP_SHARPNESS * oz) / OVERLAP_SHARPNESS)
        }
    };
    if want_grad && surrogate == Surrogate::Exact {
        grad.d_width_value_first = -params.eta * z.signum() * (z != 0.0) as u8 as f64;
    }
    (spatial + params.eta * gap + params.rho * ovl, grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn ev(onset: usize, width: usize, start: &[f64], end: &[f64]) -> Event {
        Event {
            atom: 0,
            onset,
            prob: 1.0,
            width_value: width as f64,
            width,
            soft_width: width as f64,
            start: start.to_vec(),
            end: end.to_vec(),
        }
    }

    #[test]
    fn overlap_lengths() {
        let z = [0.0, 0.0];
        assert_eq!(overlap(&ev(2, 4, &z, &z), &ev(4, 3, &z, &z)), 2.0);
        assert_eq!(overlap(&ev(0, 3, &z, &z), &ev(5, 3, &z, &z)), 0.0);
        assert_eq!(overlap(&ev(2, 4, &z, &z), &ev(2, 4, &z, &z)), 4.0);
    }

    #[test]
    fn soft_overlap_tracks_hard() {
        let z = [0.0];
        for (a, b) in [((2, 4), (4, 3)), ((0, 3), (5, 3)), ((2, 4), (2, 4)), ((0, 3), (3, 2))] {
            let (e, f) = (ev(a.0, a.1, &z, &z), ev(b.0, b.1, &z, &z));
            assert!((overlap(&e, &f) - overlap_soft(&e, &f)).abs() <= 1.0 / OVERLAP_SHARPNESS);
        }
    }

    #[test]
    fn pair_cost_examples() {
        let p = GeoParams {
            eta: 0.1,
            rho: 3.0,
            ..Default::default()
        };
        let o = [0.5, -0.5];
        // endpoint-matched and contiguous
        let c = pair_cost(&ev(0, 3, &o, &o), &ev(3, 2, &o, &o), &p, Surrogate::Exact);
        assert_eq!(c, 0.0);
        // gap of two
        let c = pair_cost(&ev(0, 3, &o, &o), &ev(5, 2, &o, &o), &p, Surrogate::Exact);
        assert!((c - 0.2).abs() < 1e-12);
        // endpoint mismatch (0.3, 0.4)
        let e = ev(0, 3, &[0.0, 0.0], &[0.3, 0.4]);
        let f = ev(3, 2, &[0.0, 0.0], &[0.0, 0.0]);
        assert!((pair_cost(&e, &f, &p, Surrogate::Exact) - 0.25).abs() < 1e-12);
    }
}
