use serde::{Deserialize, Serialize};

use crate::diff::Tensor;
use crate::error::{Error, Result};

/// Per-bin smoothing mass added before renormalizing.
pub const SMOOTHING: f64 = 1e-10;
const MAX_CELLS: usize = 1 << 20;

/// Common grid for the position and displacement histograms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinSpec {
    /// Bins per axis.
    pub bins: usize,
    pub pos_lo: Vec<f64>,
    pub pos_hi: Vec<f64>,
    pub disp_lo: Vec<f64>,
    pub disp_hi: Vec<f64>,
}

fn percentile(sorted: &[f64], pct: f64) -> f64 {
    let pos = pct / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn range(mut values: Vec<f64>, lo_pct: f64, hi_pct: f64) -> (f64, f64) {
    values.sort_by(f64::total_cmp);
    let lo = percentile(&values, lo_pct);
    let hi = percentile(&values, hi_pct);
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

impl BinSpec {
    /// Grid spanning the `[lo_pct, hi_pct]` percentile range of the real
    /// set on every axis.
    pub fn from_real(real: &[Tensor], bins: usize, lo_pct: f64, hi_pct: f64) -> Result<Self> {
        let c = check_set(real, "real")?;
        if bins == 0 || !(0.0..hi_pct).contains(&lo_pct) || hi_pct > 100.0 {
            return Err(Error::InvalidArgument(format!(
                "bins={bins}, percentiles [{lo_pct}, {hi_pct}]"
            )));
        }
        let mut spec = Self {
            bins,
            pos_lo: vec![],
            pos_hi: vec![],
            disp_lo: vec![],
            disp_hi: vec![],
        };
        for ci in 0..c {
            let pos: Vec<f64> = real.iter().flat_map(|x| x.row(ci).to_vec()).collect();
            let disp: Vec<f64> = real
                .iter()
                .flat_map(|x| x.row(ci).windows(2).map(|w| w[1] - w[0]).collect::<Vec<_>>())
                .collect();
            let (lo, hi) = range(pos, lo_pct, hi_pct);
            spec.pos_lo.push(lo);
            spec.pos_hi.push(hi);
            let (lo, hi) = if disp.is_empty() { (-0.5, 0.5) } else { range(disp, lo_pct, hi_pct) };
            spec.disp_lo.push(lo);
            spec.disp_hi.push(hi);
        }
        spec.cells()?;
        Ok(spec)
    }

    /// The fixed featurization: 32 bins over the 1st–99th percentiles.
    pub fn standard(real: &[Tensor]) -> Result<Self> {
        Self::from_real(real, 32, 1.0, 99.0)
    }

    pub fn channels(&self) -> usize {
        self.pos_lo.len()
    }

    /// Cells per histogram channel (`bins^C`).
    pub fn cells(&self) -> Result<usize> {
        let mut n = 1usize;
        for _ in 0..self.channels() {
            n = n.saturating_mul(self.bins);
        }
        if n > MAX_CELLS {
            return Err(Error::InvalidArgument(format!(
                "{} bins over {} channels is too fine a grid",
                self.bins,
                self.channels()
            )));
        }
        Ok(n)
    }

    fn bin(&self, v: f64, lo: f64, hi: f64) -> usize {
        let b = ((v - lo) / (hi - lo) * self.bins as f64).floor();
        b.clamp(0.0, (self.bins - 1) as f64) as usize
    }

    fn cell(&self, point: impl Iterator<Item = f64>, lo: &[f64], hi: &[f64]) -> usize {
        point
            .enumerate()
            .fold(0, |acc, (ci, v)| acc * self.bins + self.bin(v, lo[ci], hi[ci]))
    }

    /// Normalized two-channel histogram of a trajectory set: positions in
    /// the first half, per-step displacements in the second, each channel
    /// carrying half the mass. Out-of-range values fall in the edge bins.
    pub fn histogram(&self, set: &[Tensor]) -> Result<Vec<f64>> {
        let c = check_set(set, "trajectory")?;
        if c != self.channels() {
            return Err(Error::Shape(format!(
                "{c} channels against a {}-channel grid",
                self.channels()
            )));
        }
        let n = self.cells()?;
        let mut pos = vec![0.0; n];
        let mut disp = vec![0.0; n];
        for x in set {
            let t = x.dims2().1;
            for s in 0..t {
                pos[self.cell((0..c).map(|ci| x.at2(ci, s)), &self.pos_lo, &self.pos_hi)] += 1.0;
                if s + 1 < t {
                    let d = (0..c).map(|ci| x.at2(ci, s + 1) - x.at2(ci, s));
                    disp[self.cell(d, &self.disp_lo, &self.disp_hi)] += 1.0;
                }
            }
        }
        let mut out = Vec::with_capacity(2 * n);
        for channel in [pos, disp] {
            let total: f64 = channel.iter().sum();
            let scale = if total > 0.0 { 0.5 / total } else { 0.0 };
            out.extend(channel.iter().map(|v| v * scale));
        }
        Ok(out)
    }
}

fn check_set(set: &[Tensor], what: &str) -> Result<usize> {
    let first = set
        .first()
        .ok_or_else(|| Error::InvalidArgument(format!("empty {what} set")))?;
    let c = first.dims2().0;
    if set.iter().any(|x| x.rank() != 2 || x.dims2().0 != c || x.dims2().1 == 0) {
        return Err(Error::Shape(format!("{what} set mixes channel counts")));
    }
    Ok(c)
}

/// Base-2 Jensen–Shannon divergence of two histograms after adding
/// [`SMOOTHING`] to every bin and renormalizing.
pub fn jsd_histograms(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len(), "histograms of different sizes");
    let smooth = |h: &[f64]| {
        let total: f64 = h.iter().sum::<f64>() + SMOOTHING * h.len() as f64;
        h.iter().map(|v| (v + SMOOTHING) / total).collect::<Vec<_>>()
    };
    let (p, q) = (smooth(p), smooth(q));
    let mut out = 0.0;
    for (&a, &b) in p.iter().zip(&q) {
        let m = 0.5 * (a + b);
        out += 0.5 * (a * (a / m).log2() + b * (b / m).log2());
    }
    out.clamp(0.0, 1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JsdReport {
    pub jsd_bits: f64,
    pub bins: BinSpec,
    pub n_generated: usize,
    pub n_real: usize,
}

/// JSD between the binned feature distributions of two trajectory sets.
pub fn jsd(generated: &[Tensor], real: &[Tensor], bins: &BinSpec) -> Result<JsdReport> {
    let p = bins.histogram(generated)?;
    let q = bins.histogram(real)?;
    Ok(JsdReport {
        jsd_bits: jsd_histograms(&p, &q),
        bins: bins.clone(),
        n_generated: generated.len(),
        n_real: real.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(c0: f64, slope: f64, t: usize) -> Tensor {
        Tensor::from_vec(
            &[2, t],
            (0..t)
                .map(|s| c0 + slope * s as f64)
                .chain((0..t).map(|s| -c0 + 0.5 * slope * s as f64))
                .collect(),
        )
    }

    #[test]
    fn identical_sets_give_zero() {
        let set: Vec<Tensor> = (0..20).map(|i| line(i as f64 * 0.1, 0.3, 12)).collect();
        let spec = BinSpec::standard(&set).unwrap();
        let r = jsd(&set, &set, &spec).unwrap();
        assert!(r.jsd_bits <= 1e-6, "{}", r.jsd_bits);
        assert_eq!(r.n_real, 20);
    }

    #[test]
    fn disjoint_supports_give_one() {
        let p = [0.5, 0.5, 0.0, 0.0];
        let q = [0.0, 0.0, 0.5, 0.5];
        assert!((jsd_histograms(&p, &q) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn symmetric_exactly() {
        let a: Vec<Tensor> = (0..10).map(|i| line(i as f64 * 0.2, 0.1, 9)).collect();
        let b: Vec<Tensor> = (0..15).map(|i| line(1.0 - i as f64 * 0.05, -0.2, 9)).collect();
        let spec = BinSpec::standard(&b).unwrap();
        assert_eq!(
            jsd(&a, &b, &spec).unwrap().jsd_bits,
            jsd(&b, &a, &spec).unwrap().jsd_bits
        );
    }

    #[test]
    fn grid_spans_percentiles() {
        let set = vec![Tensor::from_vec(&[1, 101], (0..=100).map(|v| v as f64).collect())];
        let spec = BinSpec::standard(&set).unwrap();
        assert!((spec.pos_lo[0] - 1.0).abs() < 1e-12);
        assert!((spec.pos_hi[0] - 99.0).abs() < 1e-12);
        // constant displacements get a unit-wide grid around them
        assert!((spec.disp_lo[0] - 0.5).abs() < 1e-12 && (spec.disp_hi[0] - 1.5).abs() < 1e-12);
        assert!(BinSpec::from_real(&set, 0, 1.0, 99.0).is_err());
        assert!(BinSpec::standard(&[]).is_err());
    }
}
