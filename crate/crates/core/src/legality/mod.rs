//! Placement legality energy: reconstruction, event budget, primitive
//! integrity and vacancy-weighted event geometry.

mod energy;
mod events;
mod geo;
pub mod ops;

pub use energy::{continuity_weights, psi_prim, psi_total, EnergyBreakdown};
pub use events::{
    extract_events, overlap, overlap_soft, pair_cost, pair_cost_grad, Event, GeoParams, PairGrad,
    Surrogate, GAP_DELTA, OVERLAP_SHARPNESS,
};
pub use geo::{
    psi_geo, psi_geo_bruteforce, psi_geo_bruteforce_events, psi_geo_events, psi_geo_with_grad,
    EventGrad, BRUTEFORCE_EVENT_LIMIT,
};
