//! Finite-difference verification of the analytic backward pass.
//!
//! Runs a micro model at f64 and compares every analytic gradient against a
//! central finite difference of the loss.

use modelizer::model::{cross_entropy, ModelConfig, Seq2Seq};

fn loss_of(model: &mut Seq2Seq<f64>, src: &[usize], tgt_in: &[usize], tgt_out: &[usize]) -> f64 {
    let state = model.forward(src, tgt_in, None);
    let (loss, count, _) = cross_entropy(&state.logits, tgt_out);
    loss / count as f64
}

#[test]
fn analytic_gradients_match_finite_differences() {
    let cfg = ModelConfig {
        encoder_layers: 1,
        decoder_layers: 1,
        embedding_size: 8,
        feedforward_size: 16,
        attention_heads: 2,
        dropout: 0.0,
        context_window: 16,
    };
    let mut model: Seq2Seq<f64> = Seq2Seq::init(cfg, 12, 12, 42).unwrap();

    let src = vec![4usize, 7, 9, 5];
    let tgt_in = vec![1usize, 6, 8, 10];
    let tgt_out = vec![6usize, 8, 10, 2];

    // Analytic gradients of the token-mean loss.
    model.zero_grads();
    let state = model.forward(&src, &tgt_in, None);
    let (_, count, dlogits) = cross_entropy(&state.logits, &tgt_out);
    let scaled = dlogits.mapv(|d| d / count as f64);
    model.backward(&state, &scaled);

    let analytic: Vec<Vec<f64>> = model
        .params_mut()
        .iter()
        .map(|p| p.g.iter().copied().collect())
        .collect();

    let h = 1e-5;
    let mut checked = 0usize;
    let mut max_rel = 0.0f64;
    let n_params = analytic.len();
    for pi in 0..n_params {
        let n_elems = analytic[pi].len();
        for ei in 0..n_elems {
            let orig = {
                let mut params = model.params_mut();
                let slice = params[pi].w.as_slice_mut().unwrap();
                let orig = slice[ei];
                slice[ei] = orig + h;
                orig
            };
            let up = loss_of(&mut model, &src, &tgt_in, &tgt_out);
            {
                let mut params = model.params_mut();
                params[pi].w.as_slice_mut().unwrap()[ei] = orig - h;
            }
            let down = loss_of(&mut model, &src, &tgt_in, &tgt_out);
            {
                let mut params = model.params_mut();
                params[pi].w.as_slice_mut().unwrap()[ei] = orig;
            }
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[pi][ei];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            let rel = (a - numeric).abs() / denom;
            if rel > max_rel {
                max_rel = rel;
            }
            assert!(
                rel < 1e-4 || (a - numeric).abs() < 1e-8,
                "gradient mismatch: param {pi} elem {ei}: analytic {a} vs numeric {numeric} (rel {rel})"
            );
            checked += 1;
        }
    }
    assert!(checked > 1000, "too few parameters checked: {checked}");
    eprintln!("checked {checked} parameters, max relative error {max_rel:.3e}");
}
