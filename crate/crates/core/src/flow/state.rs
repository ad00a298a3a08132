use crate::diff::Tensor;
use crate::error::{Error, Result};

/// One point on the straight path from noise `z0` to placement `r1`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowState {
    pub z0: Tensor,
    pub t: f64,
    pub zt: Tensor,
    pub target_vel: Tensor,
    pub sigma: f64,
}

/// `Z_t = (1-t) Z0 + t R1` with velocity `R1 - Z0`.
pub fn interpolate(z0: &Tensor, r1: &Tensor, t: f64, sigma: f64) -> Result<FlowState> {
    if z0.shape() != r1.shape() {
        return Err(Error::Shape(format!(
            "interpolate: {:?} vs {:?}",
            z0.shape(),
            r1.shape()
        )));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!("t = {t} outside [0, 1]")));
    }
    Ok(FlowState {
        z0: z0.clone(),
        t,
        zt: z0.zip_map(r1, |a, b| (1.0 - t) * a + t * b),
        target_vel: r1.zip_map(z0, |b, a| b - a),
        sigma,
    })
}

/// One-shot clean estimate `Z_t + (1-t) v`; at `t = 1` this is `Z_t`.
pub fn endpoint_estimate(zt: &Tensor, t: f64, v: &Tensor) -> Tensor {
    if t >= 1.0 {
        return zt.clone();
    }
    zt.zip_map(v, |z, v| z + (1.0 - t) * v)
}

/// Guided velocity `v_u + g (v_c - v_u)`.
pub fn cfg_combine(v_cond: &Tensor, v_uncond: &Tensor, g: f64) -> Tensor {
    v_cond.zip_map(v_uncond, |c, u| u + g * (c - u))
}

/// 1 where the value reaches `threshold`, else 0.
pub fn binarize(z: &Tensor, threshold: f64) -> Tensor {
    z.map(|v| if v >= threshold { 1.0 } else { 0.0 })
}

/// Explicit Euler from `t = 0` to `t = 1` on the grid `i/steps`.
pub fn integrate(
    z0: &Tensor,
    steps: usize,
    mut field: impl FnMut(&Tensor, f64) -> Result<Tensor>,
) -> Result<Tensor> {
    if steps == 0 {
        return Err(Error::InvalidArgument("steps must be at least 1".into()));
    }
    let dt = 1.0 / steps as f64;
    let mut z = z0.clone();
    for i in 0..steps {
        let v = field(&z, i as f64 * dt)?;
        z.axpy(dt, &v);
        if !z.all_finite() {
            return Err(Error::Integration { step: i });
        }
    }
    Ok(z)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t2(v: &[f64]) -> Tensor {
        Tensor::from_vec(&[1, v.len()], v.to_vec())
    }

    #[test]
    fn interpolant_ends() {
        let z0 = t2(&[0.3, -1.0, 2.0]);
        let r1 = t2(&[1.0, 0.0, 1.0]);
        assert_eq!(interpolate(&z0, &r1, 0.0, 1.0).unwrap().zt, z0);
        assert_eq!(interpolate(&z0, &r1, 1.0, 1.0).unwrap().zt, r1);
        let mid = interpolate(&z0, &r1, 0.5, 1.0).unwrap();
        assert_eq!(mid.zt, t2(&[0.65, -0.5, 1.5]));
        assert_eq!(mid.target_vel, interpolate(&z0, &r1, 0.9, 1.0).unwrap().target_vel);
        assert!(interpolate(&z0, &t2(&[1.0]), 0.5, 1.0).is_err());
        assert!(interpolate(&z0, &r1, 1.5, 1.0).is_err());
    }

    #[test]
    fn endpoint_cases() {
        let z0 = t2(&[0.3, -1.0]);
        let r1 = t2(&[1.0, 0.0]);
        let s = interpolate(&z0, &r1, 0.25, 1.0).unwrap();
        let e = endpoint_estimate(&s.zt, s.t, &s.target_vel);
        assert!(e.zip_map(&r1, |a, b| (a - b).abs()).max_abs() < 1e-15);
        assert_eq!(endpoint_estimate(&z0, 0.0, &t2(&[0.0, 0.0])), z0);
        assert_eq!(endpoint_estimate(&z0, 1.0, &t2(&[5.0, 5.0])), z0);
    }

    #[test]
    fn guidance_formula() {
        let c = t2(&[1.0, 2.0]);
        let u = t2(&[0.5, -1.0]);
        assert_eq!(cfg_combine(&c, &u, 1.0), c);
        assert_eq!(cfg_combine(&c, &u, 0.0), u);
        assert_eq!(cfg_combine(&c, &u, 2.0), t2(&[1.5, 5.0]));
        assert_eq!(cfg_combine(&c, &c, 7.3), c);
    }

    #[test]
    fn binarize_rule() {
        let z = t2(&[0.5, 0.49, 0.7, -2.0]);
        let b = binarize(&z, 0.5);
        assert_eq!(b, t2(&[1.0, 0.0, 1.0, 0.0]));
        assert_eq!(binarize(&b, 0.5), b);
        assert_eq!(binarize(&t2(&[0.49; 3]), 0.5).sum(), 0.0);
    }

    #[test]
    fn euler_cases() {
        let z0 = t2(&[0.1, -0.2]);
        let c = t2(&[1.0, 3.0]);
        for steps in [1, 4, 50] {
            let z = integrate(&z0, steps, |_, _| Ok(c.clone())).unwrap();
            assert!((z.at2(0, 0) - 1.1).abs() < 1e-12 && (z.at2(0, 1) - 2.8).abs() < 1e-12);
        }
        let one = integrate(&z0, 1, |z, t| Ok(z.map(|v| v + t + 1.0))).unwrap();
        assert_eq!(one, z0.map(|a| a + (a + 1.0)));
        let err = integrate(&z0, 5, |z, t| {
            Ok(if t > 0.3 { z.map(|_| f64::NAN) } else { z.clone() })
        });
        assert!(matches!(err, Err(Error::Integration { step: 2 })));
        assert!(integrate(&z0, 0, |z, _| Ok(z.clone())).is_err());
    }
}
