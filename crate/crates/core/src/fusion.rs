//! Scalar gate fusing the image-conditioned and OCR-conditioned encoder streams.
//!
//! Both streams are mean-pooled over unpadded positions, the pooled vectors are
//! concatenated and passed through `FC1 -> tanh -> FC2 -> sigmoid` to produce
//! one weight `lambda` per sample:
//!
//! ```text
//! C_T = lambda * z_img + z_ocr          (r x d_T)
//! ```
//!
//! Posts without OCR text have no OCR keys; their `z_ocr` is zero and a
//! learned null vector replaces the pooled OCR summary.

use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Var};
use crate::error::{MuseError, Result};
use crate::layers;
use crate::params::ParamStore;
use crate::tensor::Matrix;

pub const PREFIX: &str = "gate";

pub fn init(store: &mut ParamStore, rng: &mut ChaCha8Rng, width: usize, hidden: usize) {
    layers::init_linear(store, rng, &format!("{PREFIX}.fc1"), 2 * width, hidden);
    layers::init_linear(store, rng, &format!("{PREFIX}.fc2"), hidden, 1);
    store.init_uniform(rng, &format!("{PREFIX}.null_ocr"), 1, width, width);
}

/// Returns the fused `r x d_T` representation and the `1 x 1` gate node.
pub fn gate_graph(g: &mut Graph, z_img: Var, z_ocr: Option<Var>, mask: &[bool]) -> Result<(Var, Var)> {
    if let Some(z) = z_ocr {
        if g.shape(z) != g.shape(z_img) {
            return Err(MuseError::Shape(format!(
                "z_img is {:?} but z_ocr is {:?}",
                g.shape(z_img),
                g.shape(z)
            )));
        }
    }
    let pooled_img = g.mean_rows(z_img, mask)?;
    let pooled_ocr = match z_ocr {
        Some(z) => g.mean_rows(z, mask)?,
        None => g.param(&format!("{PREFIX}.null_ocr"))?,
    };
    let u = g.concat_cols(&[pooled_img, pooled_ocr]);
    let h = layers::linear(g, &format!("{PREFIX}.fc1"), u)?;
    let h = g.tanh(h);
    let s = layers::linear(g, &format!("{PREFIX}.fc2"), h)?;
    let lambda = g.sigmoid(s);
    let weighted = g.scale_by(z_img, lambda);
    let fused = match z_ocr {
        Some(z) => g.add(weighted, z),
        None => weighted,
    };
    Ok((fused, lambda))
}

/// Evaluates the gate on plain matrices; `z_ocr = None` means no OCR text.
pub fn gate_forward(
    z_img: &Matrix,
    z_ocr: Option<&Matrix>,
    mask: &[bool],
    params: &ParamStore,
) -> Result<(Matrix, f64)> {
    let mut g = Graph::with_params(params);
    let zi = g.input(z_img.clone());
    let zo = z_ocr.map(|z| g.input(z.clone()));
    let (c_t, lambda) = gate_graph(&mut g, zi, zo, mask)?;
    Ok((g.value(c_t).clone(), g.value(lambda).item()))
}
