mod common;

use common::*;
use muse_core::gradcheck::check_gradients;
use muse_core::model::{Model, Prepared, Variant};
use muse_core::params::ParamStore;
use muse_core::training::{sample_gradients, Phase, TrainConfig};

const EPS: f64 = 1e-3;
const REL_TOL: f64 = 1e-4;
/// Below this magnitude both gradients count as zero.
const ABS_FLOOR: f64 = 1e-7;

fn setup(variant: Variant, label: bool) -> (Model, ParamStore, Prepared) {
    let mut samples = explanation_samples(true);
    if label {
        samples = samples.into_iter().map(|s| s.with_label(true)).collect();
    }
    let ds = dataset(samples);
    let v = vocab(&ds);
    let m = model(model_config(variant, 8, 2), &v);
    let params = m.init_params(5);
    let x = m.prepare(&ds.samples[0], &v, &extractor()).unwrap();
    (m, params, x)
}

/// Largest relative error between the tape and central differences over the
/// whole model, a few entries of every parameter.
fn check(phase: Phase, variant: Variant) -> f64 {
    let (m, params, x) = setup(variant, phase == Phase::Pretrain);
    let r = check_gradients(&params, EPS, ABS_FLOOR, 3, |g| match phase {
        Phase::Finetune => m.lm_loss_graph(g, &x),
        Phase::Pretrain => m.cls_loss_graph(g, &x),
    })
    .unwrap();
    assert!(r.checked > 0);
    assert!(r.max_rel_error < REL_TOL, "{phase:?} {variant:?}: {r:?}");
    r.max_rel_error
}

#[test]
fn finetune_gradients_match_finite_differences() {
    for variant in [Variant::Base, Variant::Ocr] {
        let worst = check(Phase::Finetune, variant);
        eprintln!("finetune {variant:?}: max relative error {worst:e}");
    }
}

#[test]
fn pretrain_gradients_match_finite_differences() {
    for variant in [Variant::Base, Variant::Ocr] {
        let worst = check(Phase::Pretrain, variant);
        eprintln!("pretrain {variant:?}: max relative error {worst:e}");
    }
}

#[test]
fn lm_loss_decreases_over_fifty_descent_steps() {
    let (m, mut params, x) = setup(Variant::Ocr, false);
    let cfg = TrainConfig::default();
    let mut prev = f64::INFINITY;
    for step in 0..50 {
        let (loss, grads) = sample_gradients(&m, &params, &cfg, &x).unwrap();
        assert!(loss < prev, "step {step}: {loss} after {prev}");
        prev = loss;
        for (name, g) in grads {
            let p = params.get_mut(&name).unwrap();
            for (w, d) in p.data_mut().iter_mut().zip(g.data()) {
                *w -= 0.05 * d;
            }
        }
    }
}

mod components {
    use muse_core::autograd::Graph;
    use muse_core::encoder::{self, CrossModalConfig, KeyValues};
    use muse_core::generator::{self, DecoderConfig};
    use muse_core::gradcheck::{check_gradients, GradCheck};
    use muse_core::params::ParamStore;
    use muse_core::tensor::Matrix;
    use muse_core::{fusion, Result};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::{ABS_FLOOR, EPS, REL_TOL};

    const R: usize = 4;
    const Q: usize = 3;
    const D: usize = 8;
    const KV: usize = 6;
    const VOCAB: usize = 7;

    fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn cfg() -> CrossModalConfig {
        CrossModalConfig {
            text_width: D,
            kv_width: KV,
            heads: 2,
            depth: 1,
        }
    }

    /// Parameters plus the inputs registered as `in.text`, `in.image`, `in.ocr`.
    fn store() -> (ParamStore, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut p = ParamStore::new();
        encoder::init(&mut p, &mut rng, "enc", &cfg());
        fusion::init(&mut p, &mut rng, D, D);
        generator::init(&mut p, &mut rng, &dcfg());
        p.insert("in.text", random(&mut rng, R, D));
        p.insert("in.image", random(&mut rng, Q, KV));
        p.insert("in.ocr", random(&mut rng, R, D));
        (p, rng)
    }

    fn dcfg() -> DecoderConfig {
        DecoderConfig {
            width: D,
            heads: 2,
            layers: 1,
            vocab_size: VOCAB,
            max_positions: R + 1,
        }
    }

    const MASK: [bool; R] = [true, true, true, false];

    fn assert_ok(what: &str, r: Result<GradCheck>) {
        let r = r.unwrap();
        eprintln!(
            "{what}: {} entries, max relative error {:e} at {:?}",
            r.checked, r.max_rel_error, r.worst
        );
        assert!(r.checked > 0);
        assert!(r.max_rel_error < REL_TOL, "{what}: {r:?}");
    }

    #[test]
    fn cross_modal_attention() {
        let (p, mut rng) = store();
        let probe = random(&mut rng, R, D);
        assert_ok(
            "cross_modal_attention",
            check_gradients(&p, EPS, ABS_FLOOR, 4, |g: &mut Graph| {
                let t = g.param("in.text")?;
                let i = g.param("in.image")?;
                let kv = KeyValues {
                    features: i,
                    mask: None,
                };
                let tr = encoder::attention_graph(g, "enc.l0", t, &MASK, kv, &cfg())?;
                Ok(g.weighted_sum(tr.z, probe.clone()))
            }),
        );
    }

    #[test]
    fn encoder_forward() {
        let (p, mut rng) = store();
        let probe = random(&mut rng, 2 * R, D);
        assert_ok(
            "encoder_forward",
            check_gradients(&p, EPS, ABS_FLOOR, 4, |g: &mut Graph| {
                let t = g.param("in.text")?;
                let i = g.param("in.image")?;
                let kv = KeyValues {
                    features: i,
                    mask: None,
                };
                let (c, _) = encoder::forward_graph(g, "enc", t, &MASK, kv, &cfg())?;
                Ok(g.weighted_sum(c, probe.clone()))
            }),
        );
    }

    #[test]
    fn gate_forward() {
        let (p, mut rng) = store();
        let probe = random(&mut rng, R, D);
        for with_ocr in [true, false] {
            assert_ok(
                "gate_forward",
                check_gradients(&p, EPS, ABS_FLOOR, 4, |g: &mut Graph| {
                    let zi = g.param("in.text")?;
                    let zo = if with_ocr { Some(g.param("in.ocr")?) } else { None };
                    let (c, _) = fusion::gate_graph(g, zi, zo, &MASK)?;
                    Ok(g.weighted_sum(c, probe.clone()))
                }),
            );
        }
    }

    #[test]
    fn decode_step() {
        let (p, _) = store();
        let prefix = [1u32, 4, 5, 2];
        let targets: Vec<Option<usize>> = vec![Some(4), Some(5), Some(2), Some(3)];
        assert_ok(
            "decode_step",
            check_gradients(&p, EPS, ABS_FLOOR, 4, |g: &mut Graph| {
                let e = g.param("in.ocr")?;
                let logits = generator::logits_graph(g, &prefix, e, &MASK, &dcfg())?;
                g.cross_entropy(logits, &targets)
            }),
        );
    }

    #[test]
    fn classify_sarcasm() {
        let (mut p, mut rng) = store();
        p.insert(format!("{}.w", generator::CLS_HEAD), random(&mut rng, D, 1));
        p.insert(format!("{}.b", generator::CLS_HEAD), random(&mut rng, 1, 1));
        assert_ok(
            "classify_sarcasm",
            check_gradients(&p, EPS, ABS_FLOOR, 4, |g: &mut Graph| {
                let e = g.param("in.ocr")?;
                let logit = generator::classify_graph(g, e, &MASK)?;
                Ok(g.bce_with_logits(logit, 1.0))
            }),
        );
    }
}
