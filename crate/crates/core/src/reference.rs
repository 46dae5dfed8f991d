//! Independent brute-force reference implementations used by the test
//! suites. These deliberately share no code with the production paths
//! they are checked against: plain f64 scalar loops only.

use crate::numerics::tensor::{backward, Tensor};

/// Contrastive loss computed exactly as the definition reads: per-example
/// numerator exp(z1_i . z2_i / tau), one shared denominator summing
/// exp(z1_j . z2_k / tau) over all (j, k) pairs.
pub fn infonce_brute_force(z1: &[Vec<f32>], z2: &[Vec<f32>], tau: f32) -> f64 {
    assert_eq!(z1.len(), z2.len());
    let n = z1.len();
    let tau = tau as f64;
    let dot = |a: &[f32], b: &[f32]| -> f64 {
        a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
    };
    let mut denom = 0.0f64;
    for j in 0..n {
        for k in 0..n {
            denom += (dot(&z1[j], &z2[k]) / tau).exp();
        }
    }
    let mut loss = 0.0f64;
    for i in 0..n {
        let num = (dot(&z1[i], &z2[i]) / tau).exp();
        loss += (num / denom).ln();
    }
    -loss / n as f64
}

/// Scalar GAE recursion in f64. `dones[t]` marks the transition at t as
/// terminal; `bootstrap` is V(s_T) for the truncated tail.
pub fn gae_reference(
    rewards: &[f32],
    values: &[f32],
    dones: &[bool],
    bootstrap: f32,
    gamma: f32,
    lambda: f32,
) -> (Vec<f64>, Vec<f64>) {
    let t_max = rewards.len();
    assert_eq!(values.len(), t_max);
    assert_eq!(dones.len(), t_max);
    let (gamma, lambda) = (gamma as f64, lambda as f64);
    let mut adv = vec![0.0f64; t_max];
    let mut next_adv = 0.0f64;
    for t in (0..t_max).rev() {
        let mask = if dones[t] { 0.0 } else { 1.0 };
        let next_value = if t + 1 < t_max { values[t + 1] as f64 } else { bootstrap as f64 };
        let delta = rewards[t] as f64 + gamma * next_value * mask - values[t] as f64;
        next_adv = delta + gamma * lambda * mask * next_adv;
        adv[t] = next_adv;
    }
    let ret: Vec<f64> = adv.iter().zip(values).map(|(a, &v)| a + v as f64).collect();
    (adv, ret)
}

/// Running standard deviation oracle (plain two-pass over the prefix).
pub fn running_std_reference(seen: &[f32]) -> f64 {
    if seen.len() < 2 {
        return 1.0;
    }
    let n = seen.len() as f64;
    let mean = seen.iter().map(|&v| v as f64).sum::<f64>() / n;
    let ss: f64 = seen.iter().map(|&v| (v as f64 - mean).powi(2)).sum();
    (ss / (n - 1.0)).sqrt()
}

/// Result of one finite-difference gradient comparison.
#[derive(Debug)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub checked: usize,
}

/// Central finite-difference check of `backward` for an arbitrary op.
///
/// `f` maps the inputs to the op output; the check contracts the output
/// with fixed random-ish coefficients to a scalar, compares the analytic
/// gradient of that scalar against central differences with step `h`,
/// component by component. The error metric is relative with an absolute
/// floor: |fd - an| / max(|fd|, |an|, floor), so near-zero gradients are
/// held to an absolute tolerance of tol * floor instead of blowing up.
pub fn fd_gradcheck(
    inputs: &[Tensor],
    f: &dyn Fn(&[Tensor]) -> Tensor,
    h: f64,
    floor: f64,
) -> GradCheck {
    let out = f(inputs);
    // fixed deterministic coefficients, nothing special about the constants
    let coef: Vec<f32> = (0..out.len())
        .map(|i| 0.35 + 0.6 * (((i * 2654435761) % 1000) as f32) / 1000.0 - 0.65)
        .map(|c| if c.abs() < 0.1 { 0.3 } else { c })
        .collect();
    let coef_t = Tensor::from_vec(out.shape(), coef.clone());
    let loss = out.mul(&coef_t).sum_all();
    for t in inputs {
        t.zero_grad();
    }
    backward(&loss).expect("gradcheck loss must be scalar");

    // scalarized objective for differencing, accumulated in f64
    let eval = |ins: &[Tensor]| -> f64 {
        let o = crate::numerics::no_grad(|| f(ins));
        o.to_vec().iter().zip(&coef).map(|(&v, &c)| v as f64 * c as f64).sum()
    };

    let mut max_rel = 0.0f64;
    let mut checked = 0usize;
    for (ti, t) in inputs.iter().enumerate() {
        if !t.requires_grad() {
            continue;
        }
        let analytic = t.grad().unwrap_or_else(|| vec![0.0; t.len()]);
        let base = t.to_vec();
        for ci in 0..base.len() {
            let mut plus = base.clone();
            plus[ci] += h as f32;
            let mut minus = base.clone();
            minus[ci] -= h as f32;

            let rebuild = |vals: &[f32]| -> Vec<Tensor> {
                inputs
                    .iter()
                    .enumerate()
                    .map(|(k, orig)| {
                        if k == ti {
                            Tensor::var(orig.shape(), vals.to_vec())
                        } else {
                            orig.clone()
                        }
                    })
                    .collect()
            };
            let fp = eval(&rebuild(&plus));
            let fm = eval(&rebuild(&minus));
            let fd = (fp - fm) / (2.0 * h);
            let an = analytic[ci] as f64;
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(floor);
            if rel > max_rel {
                max_rel = rel;
            }
            checked += 1;
        }
    }
    GradCheck { max_rel_err: max_rel, checked }
}
