use num_complex::Complex64;

/// Named real parameter array with its gradient accumulator. Complex
/// parameters occupy interleaved (re, im) pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub grad: Vec<f64>,
}

impl ParamTensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, values: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), values.len(), "shape does not match value count");
        let grad = vec![0.0; values.len()];
        Self { name: name.into(), shape, values, grad }
    }

    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self::new(name, shape, vec![0.0; n])
    }

    /// A vector of complex values, shape `[n, 2]`.
    pub fn from_complex(name: impl Into<String>, values: &[Complex64]) -> Self {
        let flat = values.iter().flat_map(|z| [z.re, z.im]).collect();
        Self::new(name, vec![values.len(), 2], flat)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn complex_len(&self) -> usize {
        self.values.len() / 2
    }

    pub fn complex(&self, i: usize) -> Complex64 {
        Complex64::new(self.values[2 * i], self.values[2 * i + 1])
    }

    pub fn to_complex(&self) -> Vec<Complex64> {
        self.values.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect()
    }

    pub fn set_complex(&mut self, i: usize, z: Complex64) {
        self.values[2 * i] = z.re;
        self.values[2 * i + 1] = z.im;
    }

    pub fn add_complex_grad(&mut self, grads: &[Complex64]) {
        for (g, z) in self.grad.chunks_exact_mut(2).zip(grads) {
            g[0] += z.re;
            g[1] += z.im;
        }
    }

    pub fn complex_grad(&self) -> Vec<Complex64> {
        self.grad.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().chain(&self.grad).all(|v| v.is_finite())
    }
}

/// `weight · Σ values²` over `tensors`, accumulating `2·weight·value` into
/// their gradients.
pub fn l2_penalty(tensors: &mut [&mut ParamTensor], weight: f64) -> f64 {
    assert!(weight >= 0.0, "L2 weight must be non-negative");
    if weight == 0.0 {
        return 0.0;
    }
    let mut total = 0.0;
    for t in tensors.iter_mut() {
        for (v, g) in t.values.iter().zip(t.grad.iter_mut()) {
            total += v * v;
            *g += 2.0 * weight * v;
        }
    }
    weight * total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::finite_diff_check;

    #[test]
    fn complex_round_trip() {
        let z = [Complex64::new(1.0, -2.0), Complex64::new(0.5, 0.25)];
        let t = ParamTensor::from_complex("taps", &z);
        assert_eq!(t.shape, vec![2, 2]);
        assert_eq!(t.to_complex(), z.to_vec());
    }

    #[test]
    fn l2_examples() {
        let mut t = ParamTensor::new("w", vec![1], vec![2.0]);
        assert_eq!(l2_penalty(&mut [&mut t], 0.0), 0.0);
        assert_eq!(t.grad, vec![0.0]);
        assert_eq!(l2_penalty(&mut [&mut t], 0.5), 2.0);
        assert_eq!(t.grad, vec![2.0]);
    }

    #[test]
    fn l2_gradient_matches_finite_differences() {
        let vals = vec![0.3, -1.2, 2.5, 0.01];
        let mut t = ParamTensor::new("w", vec![4], vals.clone());
        l2_penalty(&mut [&mut t], 0.7);
        let r = finite_diff_check(
            |p| {
                let mut u = ParamTensor::new("w", vec![4], p.to_vec());
                l2_penalty(&mut [&mut u], 0.7)
            },
            &vals,
            &t.grad,
            1e-5,
        );
        assert!(r.max_rel_err < 1e-9, "{r:?}");
    }
}
