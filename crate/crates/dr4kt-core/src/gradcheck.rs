//! Central finite-difference verification of hand-written gradients.

use crate::nn::{Mat, ParamTensors};

/// Floor applied to the denominator of the relative error so finite-difference
/// noise on near-zero gradients does not register as failure; differences
/// below the floor are effectively measured on an absolute scale.
pub const REL_ERROR_FLOOR: f64 = 1e-4;

/// Snapshot the tensors of a gradient container, aligned with `tensors()`.
pub fn tensor_clones<T: ParamTensors>(t: &T) -> Vec<Mat> {
    t.tensors().into_iter().map(|(_, m)| m.clone()).collect()
}

/// Compare analytic gradients against central finite differences of `loss`,
/// perturbing every parameter element by +/- `step`. Returns the maximum
/// relative error over all elements.
pub fn finite_diff_max_rel_error<M, F>(
    model: &mut M,
    analytic: &[Mat],
    mut loss: F,
    step: f64,
) -> f64
where
    M: ParamTensors,
    F: FnMut(&M) -> f64,
{
    let n_tensors = model.tensors().len();
    assert_eq!(analytic.len(), n_tensors, "gradient/tensor list mismatch");
    let mut max_rel: f64 = 0.0;
    for ti in 0..n_tensors {
        let n = model.tensors()[ti].1.len();
        debug_assert_eq!(analytic[ti].len(), n);
        for i in 0..n {
            let orig = model.tensors()[ti].1.data()[i];
            model.tensors_mut()[ti].1.data_mut()[i] = orig + step;
            let plus = loss(model);
            model.tensors_mut()[ti].1.data_mut()[i] = orig - step;
            let minus = loss(model);
            model.tensors_mut()[ti].1.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let ana = analytic[ti].data()[i];
            let denom = ana.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
            let rel = (ana - numeric).abs() / denom;
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    max_rel
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Quadratic {
        x: Mat,
    }

    impl ParamTensors for Quadratic {
        fn tensors(&self) -> Vec<(&'static str, &Mat)> {
            vec![("x", &self.x)]
        }
        fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Mat)> {
            vec![("x", &mut self.x)]
        }
    }

    #[test]
    fn detects_correct_and_incorrect_gradients() {
        let mut model = Quadratic {
            x: Mat::from_vec(1, 3, vec![0.5, -1.0, 2.0]),
        };
        // loss = sum x_i^2, correct gradient 2x.
        let good = Mat::from_vec(1, 3, vec![1.0, -2.0, 4.0]);
        let err = finite_diff_max_rel_error(&mut model, &[good], |m| m.x.norm_sq(), 1e-5);
        assert!(err < 1e-8, "err = {err}");

        let bad = Mat::from_vec(1, 3, vec![1.0, -2.0, 3.0]);
        let err = finite_diff_max_rel_error(&mut model, &[bad], |m| m.x.norm_sq(), 1e-5);
        assert!(err > 0.1, "err = {err}");
    }
}
