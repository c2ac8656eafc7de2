//! Spectral normalization by warm-started power iteration.

use super::mlp::MlpParams;
use crate::error::{Error, Result};

/// Relative change of the singular value estimate at which iteration stops.
const POWER_TOL: f64 = 1e-9;
/// Cap on power iterations per layer and call.
const POWER_MAX: usize = 2000;

/// Per-layer singular vector estimates carried across calls.
#[derive(Debug, Clone, Default)]
pub struct SpectralNormState {
    pub left: Vec<Vec<f64>>,
    pub right: Vec<Vec<f64>>,
    /// Power iterations used for each layer in the last call.
    pub iterations: Vec<usize>,
    /// Estimated top singular value of each layer before the last rescale.
    pub sigma: Vec<f64>,
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Divides every weight matrix by its estimated top singular value.
///
/// Runs at least `n_power_iters` iterations per layer and continues until the
/// estimate settles, so the certificate holds even from a cold start. Zero
/// matrices are left unchanged.
pub fn spectral_normalize(
    params: &MlpParams,
    state: &mut SpectralNormState,
    n_power_iters: usize,
) -> Result<MlpParams> {
    if n_power_iters == 0 {
        return Err(Error::Domain(
            "at least one power iteration is required".into(),
        ));
    }
    let n = params.layers.len();
    if state.left.len() != n {
        state.left = params
            .layers
            .iter()
            .map(|l| vec![1.0 / (l.rows as f64).sqrt(); l.rows])
            .collect();
        // A non-symmetric start avoids landing orthogonal to the top direction.
        state.right = params
            .layers
            .iter()
            .map(|l| (0..l.cols).map(|j| 1.0 + 0.1 * j as f64).collect())
            .collect();
    }
    state.iterations = vec![0; n];
    state.sigma = vec![0.0; n];
    let mut out = params.clone();
    for (k, layer) in out.layers.iter_mut().enumerate() {
        if layer.cols == 0 {
            continue;
        }
        let (r, c) = (layer.rows, layer.cols);
        let u = &mut state.left[k];
        let v = &mut state.right[k];
        if normalize(v) == 0.0 {
            v.iter_mut().for_each(|x| *x = 1.0);
            normalize(v);
        }
        let mut sigma = 0.0;
        let mut it = 0;
        while it < POWER_MAX {
            it += 1;
            for i in 0..r {
                u[i] = (0..c).map(|j| layer.w[i * c + j] * v[j]).sum();
            }
            let s_u = normalize(u);
            for j in 0..c {
                v[j] = (0..r).map(|i| layer.w[i * c + j] * u[i]).sum();
            }
            let s = normalize(v);
            if s_u == 0.0 || s == 0.0 {
                sigma = 0.0;
                break;
            }
            let settled = (s - sigma).abs() <= POWER_TOL * s;
            sigma = s;
            if it >= n_power_iters && settled {
                break;
            }
        }
        state.iterations[k] = it;
        state.sigma[k] = sigma;
        if sigma > 0.0 {
            layer.w.iter_mut().for_each(|w| *w /= sigma);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::RandomSource;
    use crate::neuralgan::mlp::{Activation, Layer};

    fn two_by_two(w: Vec<f64>) -> MlpParams {
        MlpParams::from_layers(
            vec![Layer::new(2, 2, w, vec![0.0; 2]).unwrap()],
            Activation::Tanh,
        )
        .unwrap()
    }

    #[test]
    fn diagonal_is_divided_by_its_largest_entry() {
        let mut st = SpectralNormState::default();
        let out = spectral_normalize(&two_by_two(vec![3.0, 0.0, 0.0, 1.0]), &mut st, 1).unwrap();
        let want = [1.0, 0.0, 0.0, 1.0 / 3.0];
        for (a, b) in out.layers[0].w.iter().zip(want) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
        // Oracle: exact SVD of the input.
        assert!((st.sigma[0] - 3.0).abs() < 1e-8);
    }

    #[test]
    fn normalized_matrix_is_a_fixed_point() {
        let w = vec![0.6, 0.8, -0.8, 0.6];
        let mut st = SpectralNormState::default();
        let out = spectral_normalize(&two_by_two(w.clone()), &mut st, 5).unwrap();
        let again = spectral_normalize(&out, &mut st, 20).unwrap();
        for (a, b) in again.layers[0].w.iter().zip(&w) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_matrix_is_unchanged() {
        let mut st = SpectralNormState::default();
        let net = two_by_two(vec![0.0; 4]);
        assert_eq!(spectral_normalize(&net, &mut st, 1).unwrap(), net);
        assert!(spectral_normalize(&net, &mut st, 0).is_err());
    }

    #[test]
    fn product_bound_after_normalization() {
        let mut rng = RandomSource::new(4);
        for act in [Activation::Tanh, Activation::Relu, Activation::LeakyRelu] {
            let net = MlpParams::new(&[2, 16, 16, 1], act, &mut rng).unwrap();
            let mut st = SpectralNormState::default();
            let out = spectral_normalize(&net, &mut st, 1).unwrap();
            for s in out.singular_values() {
                assert!(s <= 1.0 + 1e-3, "{s}");
            }
            assert!(out.lipschitz_bound() <= 1.0 + 1e-2);
        }
    }
}
