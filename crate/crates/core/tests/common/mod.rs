#![allow(dead_code)]

use upcore::sandbox::{Grads, SandboxModel};

/// Central differences of `loss` with respect to every parameter.
pub fn numeric_grad(model: &SandboxModel, eps: f64, loss: impl Fn(&SandboxModel) -> f64) -> Grads {
    let mut out = Grads {
        embed: model.embed.clone(),
        w1: model.w1.clone(),
        b1: model.b1.clone(),
        w2: model.w2.clone(),
        b2: model.b2.clone(),
    };
    let mut probe = model.clone();
    let sizes: Vec<usize> = probe
        .param_slices_mut()
        .iter()
        .map(|(_, s)| s.len())
        .collect();
    let mut flat = Vec::new();
    for (tensor, &len) in sizes.iter().enumerate() {
        for i in 0..len {
            let orig = probe.param_slices_mut()[tensor].1[i];
            probe.param_slices_mut()[tensor].1[i] = orig + eps;
            let up = loss(&probe);
            probe.param_slices_mut()[tensor].1[i] = orig - eps;
            let down = loss(&probe);
            probe.param_slices_mut()[tensor].1[i] = orig;
            flat.push((up - down) / (2.0 * eps));
        }
    }
    let mut it = flat.into_iter();
    for g in [
        out.embed.as_slice_mut().unwrap(),
        out.w1.as_slice_mut().unwrap(),
        out.b1.as_slice_mut().unwrap(),
        out.w2.as_slice_mut().unwrap(),
        out.b2.as_slice_mut().unwrap(),
    ] {
        for v in g.iter_mut() {
            *v = it.next().unwrap();
        }
    }
    out
}

/// Largest entrywise `|a - n| / max(|a|, |n|)`, with a floor on the
/// denominator so exact zeros compare absolutely.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-7))
        .fold(0.0, f64::max)
}
