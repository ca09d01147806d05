//! Shared test helpers: random fills and a central-finite-difference
//! gradient checker usable by every layer's unit tests.

use ndarray::ArrayD;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::nn::param::Params;

pub(crate) fn fill_random(a: &mut ArrayD<f64>, rng: &mut impl Rng, scale: f64) {
    a.mapv_inplace(|_| rng.gen_range(-scale..scale));
}

/// Asserts |a − b| ≤ tol · max(1, |a|, |b|): relative error with an absolute
/// floor so near-zero gradients don't divide by zero.
pub(crate) fn assert_close(analytic: f64, numeric: f64, tol: f64, what: &str) {
    let denom = 1.0f64.max(analytic.abs()).max(numeric.abs());
    assert!(
        (analytic - numeric).abs() <= tol * denom,
        "{what}: analytic {analytic} vs numeric {numeric} (tol {tol})"
    );
}

fn subsample(n: usize, max: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if n <= max {
        (0..n).collect()
    } else {
        rand::seq::index::sample(rng, n, max).into_vec()
    }
}

/// Checks a layer's backward pass against central finite differences of the
/// scalar loss L = Σ y ⊙ ξ for a fixed random ξ.
///
/// `forward` must run the layer in training mode (so `backward` has its
/// cache); both closures are re-invoked freely during the numeric passes.
/// Checks the input gradient and every parameter (subsampled to at most 40
/// coordinates per tensor).
pub(crate) fn gradcheck_scalar_loss<L: Params>(
    layer: &mut L,
    x: ArrayD<f64>,
    forward: impl Fn(&mut L, &ArrayD<f64>) -> ArrayD<f64>,
    backward: impl Fn(&mut L, &ArrayD<f64>) -> ArrayD<f64>,
    rng: &mut ChaCha8Rng,
    step: f64,
    tol: f64,
) {
    layer.zero_grad();
    let y = forward(layer, &x);
    let mut xi = ArrayD::zeros(y.raw_dim());
    fill_random(&mut xi, rng, 1.0);
    let dx = backward(layer, &xi);
    assert_eq!(dx.shape(), x.shape(), "input gradient shape");

    let loss = |layer: &mut L, x: &ArrayD<f64>| -> f64 { (&forward(layer, x) * &xi).sum() };

    // Input gradient.
    let dx_flat = dx.as_slice().expect("standard layout");
    for idx in subsample(x.len(), 40, rng) {
        let mut xp = x.clone();
        xp.as_slice_mut().unwrap()[idx] += step;
        let up = loss(layer, &xp);
        xp.as_slice_mut().unwrap()[idx] -= 2.0 * step;
        let down = loss(layer, &xp);
        let numeric = (up - down) / (2.0 * step);
        assert_close(dx_flat[idx], numeric, tol, &format!("d/dx[{idx}]"));
    }

    // Parameter gradients. Collect analytic copies first, then perturb.
    let mut analytic: Vec<(String, Vec<f64>)> = Vec::new();
    layer.visit("", &mut |name, p| {
        analytic.push((name.to_string(), p.grad.iter().copied().collect()));
    });
    for (name, grads) in analytic {
        for idx in subsample(grads.len(), 40, rng) {
            nudge_param(layer, &name, idx, step);
            let up = loss(layer, &x);
            nudge_param(layer, &name, idx, -2.0 * step);
            let down = loss(layer, &x);
            nudge_param(layer, &name, idx, step); // restore
            let numeric = (up - down) / (2.0 * step);
            assert_close(grads[idx], numeric, tol, &format!("d/d{name}[{idx}]"));
        }
    }
}

pub(crate) fn nudge_param<L: Params>(layer: &mut L, name: &str, idx: usize, delta: f64) {
    let mut found = false;
    layer.visit_mut("", &mut |n, p| {
        if n == name {
            p.value.as_slice_mut().expect("standard layout")[idx] += delta;
            found = true;
        }
    });
    assert!(found, "parameter {name} not found");
}
