//! Finite-difference checks of every hand-written adjoint.

use crate::attack::{total_loss, AttackConfig, LossKind, TargetFeatures};
use crate::descriptor::DescriptorNetwork;
use crate::numerics::{
    bilinear_resize, bilinear_resize_grad, conv2d_forward, conv2d_input_grad, global_avg_pool,
    global_avg_pool_grad, l2_normalize, l2_normalize_grad, relu, relu_grad, ConvLayer, NumericsError,
    SplitMix64, Tensor,
};

const STEP: f64 = 1e-5;

/// `max_i |grad_i - fd_i| / max_i |fd_i|` over every `stride`-th coordinate.
pub fn fd_relative_error(x: &Tensor, grad: &Tensor, f: impl Fn(&Tensor) -> f64, stride: usize) -> f64 {
    let (mut err, mut scale) = (0.0f64, 0.0f64);
    for i in (0..x.len()).step_by(stride.max(1)) {
        let mut p = x.clone();
        p.data_mut()[i] += STEP;
        let mut m = x.clone();
        m.data_mut()[i] -= STEP;
        let fd = (f(&p) - f(&m)) / (2.0 * STEP);
        err = err.max((fd - grad.data()[i]).abs());
        scale = scale.max(fd.abs());
    }
    err / scale.max(1e-12)
}

/// Compares `u . (f(x + hv) - f(x - hv)) / 2h` with `v . backward(x, u)`.
fn directional(
    x: &Tensor,
    forward: impl Fn(&Tensor) -> Result<Tensor, NumericsError>,
    backward: impl Fn(&Tensor, &Tensor) -> Result<Tensor, NumericsError>,
    rng: &mut SplitMix64,
) -> Result<f64, NumericsError> {
    let y = forward(x)?;
    let (w, h, c) = y.dims();
    let u = rng.tensor(w, h, c, -1.0, 1.0);
    let (xw, xh, xc) = x.dims();
    let v = rng.tensor(xw, xh, xc, -1.0, 1.0);
    let shifted = |sign: f64| {
        let mut p = x.clone();
        for (a, b) in p.data_mut().iter_mut().zip(v.data()) {
            *a += sign * STEP * b;
        }
        p
    };
    let fd = (forward(&shifted(1.0))?.dot(&u) - forward(&shifted(-1.0))?.dot(&u)) / (2.0 * STEP);
    let an = backward(x, &u)?.dot(&v);
    Ok((fd - an).abs() / fd.abs().max(an.abs()).max(1e-12))
}

/// Directional gradient error for each layer on a random `side x side` input.
pub fn layer_gradient_errors(seed: u64, side: usize) -> Result<Vec<(&'static str, f64)>, NumericsError> {
    let mut rng = SplitMix64::new(seed);
    let x = rng.tensor(side, side, 3, -1.0, 1.0);
    let kernels: Vec<f64> = (0..4 * 3 * 9).map(|_| rng.uniform(-0.5, 0.5)).collect();
    let bias: Vec<f64> = (0..4).map(|_| rng.uniform(-0.1, 0.1)).collect();
    let layer = ConvLayer::new(4, 3, 3, 2, 1, kernels, bias)?;
    // Shift away from zero so the ReLU kinks stay outside the FD stencil.
    let rx = x.map(|v| if v.abs() < 1e-3 { v + 1e-2 } else { v });
    let pooled = global_avg_pool(&rng.tensor(2, 2, 5, 0.1, 1.0));
    let (ow, oh) = (side / 2 + 1, side + 3);
    Ok(vec![
        (
            "conv2d",
            directional(
                &x,
                |t| conv2d_forward(t, &layer),
                |t, u| conv2d_input_grad(t, &layer, u),
                &mut rng,
            )?,
        ),
        ("relu", directional(&rx, |t| Ok(relu(t)), relu_grad, &mut rng)?),
        (
            "global_avg_pool",
            directional(&x, |t| Ok(global_avg_pool(t)), global_avg_pool_grad, &mut rng)?,
        ),
        (
            "l2_normalize",
            directional(&pooled, l2_normalize, l2_normalize_grad, &mut rng)?,
        ),
        (
            "bilinear_resize",
            directional(
                &x,
                |t| Ok(bilinear_resize(t, ow, oh)),
                bilinear_resize_grad,
                &mut rng,
            )?,
        ),
    ])
}

/// FD error of the total attack loss for `loss` on random `side x side` images.
pub fn loss_gradient_error(
    net: &DescriptorNetwork,
    loss: LossKind,
    seed: u64,
    side: usize,
    stride: usize,
) -> Result<f64, crate::attack::AttackError> {
    let mut rng = SplitMix64::new(seed);
    let target = rng.tensor(side, side, 3, 0.0, 1.0);
    let carrier = rng.tensor(side, side, 3, 0.0, 1.0);
    let x = rng.tensor(side, side, 3, 0.0, 1.0);
    let cfg = AttackConfig {
        lambda: 0.01,
        s: side,
        ..AttackConfig::with_loss(loss)
    };
    let feats = TargetFeatures::new(net, &target, cfg.s, &cfg.bins)?;
    let eval = total_loss(&cfg, net, &x, &carrier, &feats)?;
    let f = |p: &Tensor| {
        total_loss(&cfg, net, p, &carrier, &feats)
            .map(|t| t.total)
            .unwrap_or(f64::NAN)
    };
    Ok(fd_relative_error(&x, &eval.grad, f, stride))
}
