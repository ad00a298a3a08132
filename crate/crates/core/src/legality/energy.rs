use serde::{Deserialize, Serialize};

use super::events::{GeoParams, Surrogate};
use super::geo::psi_geo;
use crate::diff::Tensor;
use crate::primdict::{synthesize, EffectiveDict};

/// The four terms of the legality energy and their weighted sum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub rec: f64,
    pub sparse: f64,
    pub prim: f64,
    pub geo: f64,
    pub total: f64,
}

impl EnergyBreakdown {
    pub fn new(rec: f64, sparse: f64, prim: f64, geo: f64, params: &GeoParams) -> Self {
        Self {
            rec,
            sparse,
            prim,
            geo,
            total: rec
                + params.lambda_s * sparse
                + params.lambda_p * prim
                + params.lambda_g * geo,
        }
    }
}

/// Continuity weights `ω_t = exp(-‖x_{t+1} - x_t‖ / τ)` for `t = 0..L-1`.
pub fn continuity_weights(x: &Tensor, tau: f64) -> Vec<f64> {
    let (c, l) = x.dims2();
    (0..l.saturating_sub(1))
        .map(|t| {
            let d2: f64 = (0..c)
                .map(|ci| {
                    let d = x.at2(ci, t + 1) - x.at2(ci, t);
                    d * d
                })
                .sum();
            (-d2.sqrt() / tau).exp()
        })
        .collect()
}

/// Ownership changes weighted by the trajectory's own continuity:
/// `Σ_t ω_t ‖π_{t+1} - π_t‖₁` with `π_t` the gate column.
pub fn psi_prim(gate: &Tensor, x: &Tensor, tau: f64) -> f64 {
    let (m, l) = gate.dims2();
    continuity_weights(x, tau)
        .iter()
        .enumerate()
        .map(|(t, w)| {
            w * (0..m)
                .map(|j| (gate.at2(j, t + 1) - gate.at2(j, t)).abs())
                .sum::<f64>()
        })
        .take(l.saturating_sub(1))
        .sum()
}

/// Exact legality energy of placement `r` with ownership `gate`.
pub fn psi_total(
    r: &Tensor,
    gate: &Tensor,
    x: &Tensor,
    dict: &EffectiveDict,
    params: &GeoParams,
) -> EnergyBreakdown {
    let xhat = synthesize(r, gate, &dict.masked, &dict.widths);
    let rec = x.zip_map(&xhat, |a, b| (a - b) * (a - b)).sum();
    let sparse = r.data().iter().map(|v| v.abs()).sum();
    let prim = psi_prim(gate, x, params.tau);
    let geo = psi_geo(r, dict, params, Surrogate::Exact);
    EnergyBreakdown::new(rec, sparse, prim, geo, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::primdict::wta_gate;

    #[test]
    fn ownership_switch_costs() {
        let mut gate = Tensor::zeros(&[2, 4]);
        for t in 0..4 {
            gate.set2(0, t, 1.0);
        }
        let still = Tensor::zeros(&[1, 4]);
        assert_eq!(psi_prim(&gate, &still, 0.1), 0.0);

        let mut switched = Tensor::zeros(&[2, 4]);
        switched.set2(0, 0, 1.0);
        switched.set2(0, 1, 1.0);
        switched.set2(1, 2, 1.0);
        switched.set2(1, 3, 1.0);
        assert_eq!(psi_prim(&switched, &still, 0.1), 2.0);

        // ‖Δx‖ = τ at the switching step
        let tau = 0.1;
        let x = Tensor::from_vec(&[1, 4], vec![0.0, 0.0, tau, tau]);
        let v = psi_prim(&switched, &x, tau);
        assert!((v - 2.0 * (-1.0f64).exp()).abs() < 1e-12);
        assert!((v - 0.7358).abs() < 1e-4);
    }

    #[test]
    fn exact_single_event_reconstruction() {
        let atoms = Tensor::from_vec(&[1, 2, 3], vec![1., 2., 3., -1., 0., 1.]);
        let dict = EffectiveDict {
            masked: atoms,
            soft_widths: vec![3.0],
            width_values: vec![3.0],
            widths: vec![3],
        };
        let mut r = Tensor::zeros(&[1, 6]);
        r.set2(0, 1, 1.0);
        let gate = wta_gate(&r, &dict.widths, &r, &[0.0]);
        let x = synthesize(&r, &gate, &dict.masked, &dict.widths);
        let p = GeoParams {
            lambda_s: 0.1,
            ..Default::default()
        };
        let e = psi_total(&r, &gate, &x, &dict, &p);
        assert_eq!(e.rec, 0.0);
        assert_eq!(e.sparse, 1.0);
        assert_eq!(e.geo, 0.0);
        // the gate switches on at t=1 and off at t=4; x moves there
        let expect = 0.1 + p.lambda_p * e.prim;
        assert!((e.total - expect).abs() < 1e-12);

        // an event spanning the whole timeline never changes ownership
        let mut r = Tensor::zeros(&[1, 3]);
        r.set2(0, 0, 1.0);
        let gate = wta_gate(&r, &dict.widths, &r, &[0.0]);
        let x = synthesize(&r, &gate, &dict.masked, &dict.widths);
        let e = psi_total(&r, &gate, &x, &dict, &p);
        assert_eq!((e.rec, e.sparse, e.prim, e.geo), (0.0, 1.0, 0.0, 0.0));
        assert!((e.total - 0.1).abs() < 1e-15);
    }

    #[test]
    fn empty_placement_energies() {
        let dict = EffectiveDict {
            masked: Tensor::zeros(&[2, 2, 3]),
            soft_widths: vec![3.0; 2],
            width_values: vec![3.0; 2],
            widths: vec![3; 2],
        };
        let r = Tensor::zeros(&[2, 5]);
        let x0 = Tensor::zeros(&[2, 5]);
        let p = GeoParams::default();
        assert_eq!(psi_total(&r, &r, &x0, &dict, &p).total, 0.0);
        let x = Tensor::from_vec(&[2, 5], (0..10).map(|i| i as f64 * 0.1).collect());
        let e = psi_total(&r, &r, &x, &dict, &p);
        assert!((e.total - x.sq_norm()).abs() < 1e-12);
    }
}
