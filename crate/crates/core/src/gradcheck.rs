//! Central-difference gradient checking for anything built on [`Graph`].
//!
//! Inputs that should be checked too can be registered as parameters under
//! any name and fetched with [`Graph::param`].

use crate::autograd::{Graph, Var};
use crate::error::{MuseError, Result};
use crate::params::ParamStore;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    /// Entries compared (entries where both gradients sit below the floor are skipped).
    pub checked: usize,
    pub max_rel_error: f64,
    /// `name[index]` of the entry with the largest error.
    pub worst: Option<String>,
}

/// Evenly spaced entry indices, at most `probes` of them.
fn probe_indices(n: usize, probes: usize) -> Vec<usize> {
    if n <= probes || probes < 2 {
        return (0..n.min(probes.max(n * usize::from(probes >= n)))).collect();
    }
    let mut v: Vec<usize> = (0..probes).map(|k| k * (n - 1) / (probes - 1)).collect();
    v.dedup();
    v
}

/// Compares the tape's gradients of `loss` against `(f(w+eps) - f(w-eps)) / 2 eps`
/// for up to `probes` entries of every parameter that receives a gradient.
pub fn check_gradients<F>(params: &ParamStore, eps: f64, abs_floor: f64, probes: usize, loss: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    let eval = |p: &ParamStore| -> Result<f64> {
        let mut g = Graph::with_params(p);
        let l = loss(&mut g)?;
        Ok(g.value(l).item())
    };
    let mut g = Graph::with_params(params);
    let l = loss(&mut g)?;
    if g.shape(l) != (1, 1) {
        return Err(MuseError::Shape(format!("loss must be a scalar, got {:?}", g.shape(l))));
    }
    let grads = g.backward(l).into_params();
    let mut out = GradCheck {
        checked: 0,
        max_rel_error: 0.0,
        worst: None,
    };
    let mut p = params.clone();
    for (name, grad) in &grads {
        for k in probe_indices(grad.data().len(), probes) {
            let base = params.get(name).expect("gradient for a known parameter").data()[k];
            p.get_mut(name).expect("present").data_mut()[k] = base + eps;
            let up = eval(&p)?;
            p.get_mut(name).expect("present").data_mut()[k] = base - eps;
            let down = eval(&p)?;
            p.get_mut(name).expect("present").data_mut()[k] = base;
            let numeric = (up - down) / (2.0 * eps);
            let analytic = grad.data()[k];
            let scale = analytic.abs().max(numeric.abs());
            if scale < abs_floor {
                continue;
            }
            out.checked += 1;
            let rel = (analytic - numeric).abs() / scale;
            if rel > out.max_rel_error {
                out.max_rel_error = rel;
                out.worst = Some(format!("{name}[{k}]"));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Matrix;

    #[test]
    fn probes_are_spread_and_bounded() {
        assert_eq!(probe_indices(3, 5), vec![0, 1, 2]);
        assert_eq!(probe_indices(10, 3), vec![0, 4, 9]);
        assert_eq!(probe_indices(1, 3), vec![0]);
    }

    #[test]
    fn quadratic_passes_and_wrong_gradient_would_show() {
        let mut p = ParamStore::new();
        p.insert("w", Matrix::from_rows(&[vec![0.3, -1.2, 2.0]]).unwrap());
        let r = check_gradients(&p, 1e-4, 1e-9, 8, |g| {
            let w = g.param("w")?;
            let sq = g.mul(w, w);
            Ok(g.weighted_sum(sq, Matrix::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap()))
        })
        .unwrap();
        assert_eq!(r.checked, 3);
        assert!(r.max_rel_error < 1e-8);
    }
}
