//! Adam optimizer over a fixed list of tensors.

use super::matrix::Mat;

#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Mat>,
    v: Vec<Mat>,
}

impl Adam {
    pub fn new(lr: f64, shapes: &[(usize, usize)]) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: shapes.iter().map(|&(r, c)| Mat::zeros(r, c)).collect(),
            v: shapes.iter().map(|&(r, c)| Mat::zeros(r, c)).collect(),
        }
    }

    pub fn for_tensors(lr: f64, tensors: &[(&'static str, &Mat)]) -> Self {
        let shapes: Vec<(usize, usize)> =
            tensors.iter().map(|(_, t)| (t.rows(), t.cols())).collect();
        Adam::new(lr, &shapes)
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One update. `params` and `grads` must be aligned with the shapes this
    /// optimizer was built from.
    pub fn step(&mut self, mut params: Vec<&mut Mat>, grads: &[&Mat]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let pd = p.data_mut();
            let gd = g.data();
            let md = m.data_mut();
            let vd = v.data_mut();
            for i in 0..pd.len() {
                md[i] = self.beta1 * md[i] + (1.0 - self.beta1) * gd[i];
                vd[i] = self.beta2 * vd[i] + (1.0 - self.beta2) * gd[i] * gd[i];
                let mhat = md[i] / b1t;
                let vhat = vd[i] / b2t;
                pd[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_a_quadratic() {
        // f(x) = (x - 3)^2, df/dx = 2(x - 3)
        let mut x = Mat::from_vec(1, 1, vec![0.0]);
        let mut opt = Adam::new(0.1, &[(1, 1)]);
        for _ in 0..500 {
            let g = Mat::from_vec(1, 1, vec![2.0 * (x.data()[0] - 3.0)]);
            opt.step(vec![&mut x], &[&g]);
        }
        assert!((x.data()[0] - 3.0).abs() < 1e-3);
    }
}
