//! Masked motion-primitive dictionary: width parameterization, binary
//! onset placement, winner-take-all ownership and compositional synthesis.

mod atoms;
pub mod ops;
mod placement;

pub use atoms::{
    effective_atom, length_mask, soft_width, st_round, width_index, Atom, Dictionary,
    EffectiveAtom, EffectiveDict, MaskMode,
};
pub use placement::{
    sample_placements, soft_gate, synthesize, synthesize_state, wta_gate, PlacementState,
    EVENT_EPS,
};
