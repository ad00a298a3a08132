use crate::diff::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

/// Adam moments for a list of dense tensors sharing one step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl Adam {
    pub fn new(params: &[Tensor]) -> Self {
        Self {
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            t: 0,
        }
    }

    pub fn step(&mut self, lr: f64, params: &mut [Tensor], grads: &[Tensor]) {
        let lrs = vec![lr; params.len()];
        self.step_each(&lrs, params, grads);
    }

    /// One step with a separate learning rate per tensor.
    pub fn step_each(&mut self, lrs: &[f64], params: &mut [Tensor], grads: &[Tensor]) {
        self.t += 1;
        for (((p, g), (m, v)), &lr) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
            .zip(lrs)
        {
            update(lr, self.t, p.data_mut(), g.data(), m.data_mut(), v.data_mut());
        }
    }
}

/// Adam moments for a table of per-sample rows, each with its own step
/// count, so a row only advances when its sample is in the batch.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseAdam {
    pub m: Tensor,
    pub v: Tensor,
    pub t: Vec<u64>,
}

impl SparseAdam {
    pub fn new(table: &Tensor) -> Self {
        Self {
            m: Tensor::zeros(table.shape()),
            v: Tensor::zeros(table.shape()),
            t: vec![0; table.shape()[0]],
        }
    }

    pub fn step_row(&mut self, lr: f64, table: &mut Tensor, row: usize, grad: &[f64]) {
        let n = grad.len();
        let r = row * n..(row + 1) * n;
        self.t[row] += 1;
        update(
            lr,
            self.t[row],
            &mut table.data_mut()[r.clone()],
            grad,
            &mut self.m.data_mut()[r.clone()],
            &mut self.v.data_mut()[r],
        );
    }
}

fn update(lr: f64, t: u64, p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]) {
    let c1 = 1.0 - BETA1.powi(t as i32);
    let c2 = 1.0 - BETA2.powi(t as i32);
    for i in 0..p.len() {
        m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
        v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
        p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + EPS);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = vec![Tensor::vector(vec![1.0, -2.0, 0.5])];
        let g = vec![Tensor::vector(vec![0.3, -4.0, 0.0])];
        let mut opt = Adam::new(&p);
        opt.step(0.1, &mut p, &g);
        let want = [0.9, -1.9, 0.5];
        for (a, b) in p[0].data().iter().zip(want) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_lr_is_identity() {
        let init = Tensor::vector(vec![1.0, 2.0]);
        let mut p = vec![init.clone()];
        let mut opt = Adam::new(&p);
        for _ in 0..5 {
            opt.step(0.0, &mut p, &[Tensor::vector(vec![1.0, -1.0])]);
        }
        assert_eq!(p[0], init);
    }

    #[test]
    fn sparse_rows_advance_independently() {
        let mut table = Tensor::zeros(&[3, 2]);
        let mut opt = SparseAdam::new(&table);
        opt.step_row(0.5, &mut table, 1, &[1.0, -1.0]);
        opt.step_row(0.5, &mut table, 1, &[1.0, -1.0]);
        assert_eq!(opt.t, vec![0, 2, 0]);
        assert_eq!(table.row(0), &[0.0, 0.0]);
        assert!((table.at2(1, 0) + 1.0).abs() < 1e-6);
        assert!((table.at2(1, 1) - 1.0).abs() < 1e-6);
    }
}
