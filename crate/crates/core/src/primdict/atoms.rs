use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::diff::{sigmoid, Tensor};
use crate::error::{Error, Result};

/// One dictionary atom: raw content plus its width and gate parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Atom {
    /// `[C, K]`
    pub content: Tensor,
    pub width_param: f64,
    pub gate_priority: f64,
}

/// An atom after applying its length mask.
#[derive(Clone, Debug, PartialEq)]
pub struct EffectiveAtom {
    /// `[C, K]`
    pub masked: Tensor,
    pub soft_width: f64,
    pub width: usize,
    pub mask: Vec<f64>,
}

/// `1 + (K-1)·σ(φ)`, strictly inside `(1, K)` for finite `φ`.
pub fn soft_width(phi: f64, k: usize) -> f64 {
    1.0 + (k as f64 - 1.0) * sigmoid(phi)
}

/// Sharpened-sigmoid mask `m_s = σ(α(w - s - 1/2))` for `s = 0..K`.
pub fn length_mask(w: f64, k: usize, alpha: f64) -> Vec<f64> {
    (0..k)
        .map(|s| sigmoid(alpha * (w - s as f64 - 0.5)))
        .collect()
}

/// Round half up, the forward value of the straight-through width.
pub fn st_round(x: f64) -> f64 {
    (x + 0.5).floor()
}

/// Integer width used for index arithmetic, clamped to `[1, K]`.
pub fn width_index(w: f64, k: usize) -> usize {
    (st_round(w).max(1.0) as usize).min(k)
}

pub fn effective_atom(atom: &Atom, alpha: f64) -> EffectiveAtom {
    let (c, k) = atom.content.dims2();
    let w = soft_width(atom.width_param, k);
    let mask = length_mask(w, k, alpha);
    let mut masked = atom.content.clone();
    for ci in 0..c {
        for (s, m) in mask.iter().enumerate() {
            masked.data_mut()[ci * k + s] *= m;
        }
    }
    EffectiveAtom {
        masked,
        soft_width: w,
        width: width_index(w, k),
        mask,
    }
}

/// Whether atoms carry a learnable length mask or always span all `K`
/// columns (the mask ablation).
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskMode {
    Learned,
    Off,
}

/// `M` atoms stored as stacked parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Dictionary {
    /// `[M, C, K]`
    pub content: Tensor,
    /// `[M]` width parameters φ.
    pub phi: Tensor,
    /// `[M]` gate priorities γ.
    pub gamma: Tensor,
}

/// Masked dictionary with the widths the downstream terms consume.
#[derive(Clone, Debug, PartialEq)]
pub struct EffectiveDict {
    /// `[M, C, K]`
    pub masked: Tensor,
    pub soft_widths: Vec<f64>,
    /// Forward value of the straight-through width (an integer unless the
    /// evaluation is relaxed).
    pub width_values: Vec<f64>,
    pub widths: Vec<usize>,
}

impl EffectiveDict {
    pub fn n_atoms(&self) -> usize {
        self.masked.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.masked.shape()[1]
    }

    pub fn max_width(&self) -> usize {
        self.masked.shape()[2]
    }

    /// Column `s` of atom `j`.
    pub fn column(&self, j: usize, s: usize) -> Vec<f64> {
        (0..self.channels())
            .map(|c| self.masked.at3(j, c, s))
            .collect()
    }
}

impl Dictionary {
    /// Content `N(0, 0.1²)`, φ `N(0, 1)`, γ zero.
    pub fn init(m: usize, c: usize, k: usize, rng: &mut impl Rng) -> Self {
        let content_dist = Normal::new(0.0, 0.1).unwrap();
        let phi_dist = Normal::new(0.0, 1.0).unwrap();
        let content = (0..m * c * k).map(|_| content_dist.sample(rng)).collect();
        let phi = (0..m).map(|_| phi_dist.sample(rng)).collect();
        Self {
            content: Tensor::from_vec(&[m, c, k], content),
            phi: Tensor::vector(phi),
            gamma: Tensor::zeros(&[m]),
        }
    }

    pub fn from_atoms(atoms: &[Atom]) -> Result<Self> {
        let first = atoms
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty dictionary".into()))?;
        let (c, k) = first.content.dims2();
        let mut content = Vec::with_capacity(atoms.len() * c * k);
        for a in atoms {
            if a.content.dims2() != (c, k) {
                return Err(Error::Shape("atoms must share [C, K]".into()));
            }
            content.extend_from_slice(a.content.data());
        }
        Ok(Self {
            content: Tensor::from_vec(&[atoms.len(), c, k], content),
            phi: Tensor::vector(atoms.iter().map(|a| a.width_param).collect()),
            gamma: Tensor::vector(atoms.iter().map(|a| a.gate_priority).collect()),
        })
    }

    pub fn n_atoms(&self) -> usize {
        self.content.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.content.shape()[1]
    }

    pub fn max_width(&self) -> usize {
        self.content.shape()[2]
    }

    pub fn atom(&self, j: usize) -> Atom {
        let (c, k) = (self.channels(), self.max_width());
        let data = self.content.data()[j * c * k..(j + 1) * c * k].to_vec();
        Atom {
            content: Tensor::from_vec(&[c, k], data),
            width_param: self.phi.data()[j],
            gate_priority: self.gamma.data()[j],
        }
    }

    pub fn effective(&self, alpha: f64, mode: MaskMode) -> EffectiveDict {
        let (m, c, k) = (self.n_atoms(), self.channels(), self.max_width());
        match mode {
            MaskMode::Off => EffectiveDict {
                masked: self.content.clone(),
                soft_widths: vec![k as f64; m],
                width_values: vec![k as f64; m],
                widths: vec![k; m],
            },
            MaskMode::Learned => {
                let mut masked = Vec::with_capacity(m * c * k);
                let mut soft_widths = Vec::with_capacity(m);
                let mut widths = Vec::with_capacity(m);
                for j in 0..m {
                    let e = effective_atom(&self.atom(j), alpha);
                    masked.extend_from_slice(e.masked.data());
                    soft_widths.push(e.soft_width);
                    widths.push(e.width);
                }
                EffectiveDict {
                    masked: Tensor::from_vec(&[m, c, k], masked),
                    width_values: widths.iter().map(|&w| w as f64).collect(),
                    soft_widths,
                    widths,
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn soft_width_values() {
        assert_eq!(soft_width(0.0, 9), 5.0);
        assert!((soft_width(50.0, 9) - 9.0).abs() < 1e-9);
        assert!((soft_width(-50.0, 9) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn mask_at_known_points() {
        let m = length_mask(5.0, 8, 10.0);
        assert!((m[4] - 0.993_307_149_075_715_2).abs() < 1e-12);
        assert!((m[5] - 0.006_692_850_924_284_856).abs() < 1e-12);
        assert!(m.windows(2).all(|w| w[0] >= w[1]) && m[0] > m[7]);
        // strict ordering and open range where σ does not saturate in f64
        let m = length_mask(4.2, 8, 1.0);
        assert!(m.windows(2).all(|w| w[0] > w[1]));
        assert!(m.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn steep_mask_is_an_indicator() {
        let m = length_mask(3.3, 6, 1e4);
        let hard: Vec<f64> = (0..6).map(|s| if (s as f64) < 2.8 { 1.0 } else { 0.0 }).collect();
        for (a, b) in m.iter().zip(hard) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn rounding_ties_go_up() {
        assert_eq!(st_round(4.5), 5.0);
        assert_eq!(st_round(4.49), 4.0);
        assert_eq!(width_index(5.0, 9), 5);
        assert_eq!(width_index(0.2, 9), 1);
    }

    #[test]
    fn hard_mask_effective_atom() {
        // w = 3 exactly: φ with σ(φ) = 2/5 for K = 6
        let phi = (0.4f64 / 0.6).ln();
        let atom = Atom {
            content: Tensor::full(&[2, 6], 1.0),
            width_param: phi,
            gate_priority: 0.0,
        };
        let e = effective_atom(&atom, 1e4);
        assert!((e.soft_width - 3.0).abs() < 1e-12);
        assert_eq!(e.width, 3);
        for c in 0..2 {
            for s in 0..6 {
                let want = if s < 3 { 1.0 } else { 0.0 };
                assert!((e.masked.at2(c, s) - want).abs() < 1e-9);
            }
        }
        let e0 = effective_atom(
            &Atom {
                width_param: 0.0,
                ..atom.clone()
            },
            10.0,
        );
        assert_eq!(e0.width, 4); // K=6: w = 1 + 5/2 = 3.5 -> 4
        let nine = Atom {
            content: Tensor::zeros(&[1, 9]),
            width_param: 0.0,
            gate_priority: 0.0,
        };
        assert_eq!(effective_atom(&nine, 10.0).width, 5);
    }

    #[test]
    fn mask_off_spans_everything() {
        let mut rng = rand::thread_rng();
        let d = Dictionary::init(3, 2, 5, &mut rng);
        let e = d.effective(10.0, MaskMode::Off);
        assert_eq!(e.widths, vec![5; 3]);
        assert_eq!(e.masked, d.content);
    }
}
