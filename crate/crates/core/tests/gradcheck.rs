//! Central finite-difference gradient checks for every differentiable op,
//! 100 random instances each, relative error < 1e-3.

use crl_core::numerics::{
    conv2d, dense, global_avg_pool, group_norm, gru_cell, max_pool2, ConvGeom, Tensor,
};
use crl_core::reference::fd_gradcheck;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-3;
const TOL: f64 = 1e-3;
const FLOOR: f64 = 0.25;
const CASES: usize = 100;

fn var(rng: &mut ChaCha8Rng, shape: &[usize], lo: f32, hi: f32) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::var(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect())
}

/// Uniform values that stay at least `margin` away from any kink at `at`.
fn var_away_from(rng: &mut ChaCha8Rng, shape: &[usize], at: f32, margin: f32) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f32> = (0..n)
        .map(|_| {
            let mut v: f32 = rng.gen_range(-1.0..1.0);
            while (v - at).abs() < margin {
                v = rng.gen_range(-1.0..1.0);
            }
            v
        })
        .collect();
    Tensor::var(shape, data)
}

fn run(name: &str, mut case: impl FnMut(&mut ChaCha8Rng, usize) -> (Vec<Tensor>, Box<dyn Fn(&[Tensor]) -> Tensor>)) {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed + name.len() as u64);
    let mut worst = 0.0f64;
    for i in 0..CASES {
        let (inputs, f) = case(&mut rng, i);
        let res = fd_gradcheck(&inputs, f.as_ref(), H, FLOOR);
        assert!(res.checked > 0, "{name}: case {i} checked nothing");
        assert!(
            res.max_rel_err < TOL,
            "{name}: case {i} rel err {} >= {TOL}",
            res.max_rel_err
        );
        worst = worst.max(res.max_rel_err);
    }
    println!("gradcheck {name}: worst rel err {worst:.2e} over {CASES} cases");
}

#[test]
fn grad_elementwise_add_sub_mul() {
    run("add", |rng, _| {
        let a = var(rng, &[3, 4], -1.0, 1.0);
        let b = var(rng, &[3, 4], -1.0, 1.0);
        (vec![a, b], Box::new(|t| t[0].add(&t[1])))
    });
    run("sub", |rng, _| {
        let a = var(rng, &[2, 5], -1.0, 1.0);
        let b = var(rng, &[2, 5], -1.0, 1.0);
        (vec![a, b], Box::new(|t| t[0].sub(&t[1])))
    });
    run("mul", |rng, _| {
        let a = var(rng, &[7], -1.0, 1.0);
        let b = var(rng, &[7], -1.0, 1.0);
        (vec![a, b], Box::new(|t| t[0].mul(&t[1])))
    });
}

#[test]
fn grad_scalar_ops() {
    run("scale", |rng, _| {
        (vec![var(rng, &[6], -1.0, 1.0)], Box::new(|t| t[0].scale(-1.7)))
    });
    run("add_scalar", |rng, _| {
        (vec![var(rng, &[6], -1.0, 1.0)], Box::new(|t| t[0].add_scalar(0.31)))
    });
    run("sum_mean", |rng, _| {
        (vec![var(rng, &[4, 3], -1.0, 1.0)], Box::new(|t| t[0].mean_all().add(&t[0].sum_all())))
    });
}

#[test]
fn grad_nonlinearities() {
    run("relu", |rng, _| {
        (vec![var_away_from(rng, &[3, 5], 0.0, 0.05)], Box::new(|t| t[0].relu()))
    });
    run("exp", |rng, _| {
        (vec![var(rng, &[8], -1.0, 1.0)], Box::new(|t| t[0].exp()))
    });
    run("log", |rng, _| {
        (vec![var(rng, &[8], 0.2, 3.0)], Box::new(|t| t[0].log()))
    });
    run("sigmoid", |rng, _| {
        (vec![var(rng, &[8], -2.0, 2.0)], Box::new(|t| t[0].sigmoid()))
    });
    run("tanh", |rng, _| {
        (vec![var(rng, &[8], -2.0, 2.0)], Box::new(|t| t[0].tanh()))
    });
    run("softmax", |rng, _| {
        (vec![var(rng, &[3, 4], -2.0, 2.0)], Box::new(|t| t[0].softmax_rows()))
    });
    run("log_softmax", |rng, _| {
        (vec![var(rng, &[3, 4], -2.0, 2.0)], Box::new(|t| t[0].log_softmax_rows()))
    });
    run("l2_normalize", |rng, _| {
        (vec![var(rng, &[3, 6], 0.3, 1.5)], Box::new(|t| t[0].l2_normalize_rows()))
    });
}

#[test]
fn grad_min_clamp() {
    run("minimum", |rng, _| {
        // keep the two sides separated so the active branch is stable under h
        let a = var(rng, &[9], -1.0, 1.0);
        let b: Vec<f32> = a.to_vec().iter().map(|&v| v + if v > 0.0 { 0.3 } else { -0.3 }).collect();
        let b = Tensor::var(&[9], b);
        (vec![a, b], Box::new(|t| t[0].minimum(&t[1])))
    });
    run("clamp", |rng, _| {
        let t = var_away_from(rng, &[10], 0.5, 0.05);
        let t2 = Tensor::var(&[10], t.to_vec().iter().map(|&v| if (v + 0.5).abs() < 0.05 { v + 0.2 } else { v }).collect());
        (vec![t2], Box::new(|t| t[0].clamp(-0.5, 0.5)))
    });
}

#[test]
fn grad_matmul_family() {
    run("matmul", |rng, _| {
        let a = var(rng, &[3, 4], -1.0, 1.0);
        let b = var(rng, &[4, 2], -1.0, 1.0);
        (vec![a, b], Box::new(|t| t[0].matmul(&t[1])))
    });
    run("matmul_nt", |rng, _| {
        let a = var(rng, &[3, 4], -1.0, 1.0);
        let b = var(rng, &[5, 4], -1.0, 1.0);
        (vec![a, b], Box::new(|t| t[0].matmul_nt(&t[1])))
    });
    run("dense", |rng, _| {
        let x = var(rng, &[3, 5], -1.0, 1.0);
        let w = var(rng, &[4, 5], -1.0, 1.0);
        let b = var(rng, &[4], -0.5, 0.5);
        (vec![x, w, b], Box::new(|t| dense(&t[0], &t[1], &t[2])))
    });
    run("add_bias", |rng, _| {
        let x = var(rng, &[4, 3], -1.0, 1.0);
        let b = var(rng, &[3], -1.0, 1.0);
        (vec![x, b], Box::new(|t| t[0].add_bias(&t[1])))
    });
    run("scale_rows", |rng, _| {
        let x = var(rng, &[4, 3], -1.0, 1.0);
        let s = var(rng, &[4], -1.0, 1.0);
        (vec![x, s], Box::new(|t| t[0].scale_rows(&t[1])))
    });
}

#[test]
fn grad_structural() {
    run("concat_cols", |rng, _| {
        let a = var(rng, &[3, 2], -1.0, 1.0);
        let b = var(rng, &[3, 4], -1.0, 1.0);
        (vec![a, b], Box::new(|t| t[0].concat_cols(&t[1])))
    });
    run("slice_cols", |rng, _| {
        (vec![var(rng, &[3, 6], -1.0, 1.0)], Box::new(|t| t[0].slice_cols(1, 4)))
    });
    run("gather_cols", |rng, i| {
        let x = var(rng, &[4, 3], -1.0, 1.0);
        let idx: Vec<usize> = (0..4).map(|r| (r + i) % 3).collect();
        (vec![x], Box::new(move |t| t[0].gather_cols(&idx)))
    });
    run("diag", |rng, _| {
        (vec![var(rng, &[4, 4], -1.0, 1.0)], Box::new(|t| t[0].diag()))
    });
    run("reshape", |rng, _| {
        (vec![var(rng, &[2, 6], -1.0, 1.0)], Box::new(|t| t[0].reshape(&[3, 4])))
    });
}

#[test]
fn grad_conv2d_configs() {
    let geoms = [
        ConvGeom { in_c: 2, in_h: 6, in_w: 6, out_c: 3, kh: 3, kw: 3, stride: 1, pad: 1 },
        ConvGeom { in_c: 2, in_h: 6, in_w: 6, out_c: 2, kh: 3, kw: 3, stride: 2, pad: 0 },
        ConvGeom { in_c: 3, in_h: 5, in_w: 4, out_c: 2, kh: 1, kw: 1, stride: 1, pad: 0 },
        ConvGeom { in_c: 1, in_h: 5, in_w: 5, out_c: 2, kh: 3, kw: 3, stride: 2, pad: 1 },
    ];
    for (gi, geom) in geoms.iter().enumerate() {
        let g = *geom;
        run(&format!("conv2d[{gi}]"), move |rng, _| {
            let x = var(rng, &[2, g.in_c, g.in_h, g.in_w], -1.0, 1.0);
            let w = var(rng, &[g.out_c, g.patch_len()], -0.5, 0.5);
            let b = var(rng, &[g.out_c], -0.2, 0.2);
            (vec![x, w, b], Box::new(move |t| conv2d(&t[0], &t[1], &t[2], g)))
        });
    }
}

#[test]
fn grad_group_norm() {
    run("group_norm", |rng, _| {
        let x = var(rng, &[2, 4, 3, 3], -1.0, 1.0);
        let gamma = var(rng, &[4], 0.5, 1.5);
        let beta = var(rng, &[4], -0.5, 0.5);
        (vec![x, gamma, beta], Box::new(|t| group_norm(&t[0], &t[1], &t[2], 2, 1e-5)))
    });
}

#[test]
fn grad_max_pool() {
    run("max_pool2", |rng, _| {
        // resample until every 2x2 window has a clear winner
        loop {
            let x = var(rng, &[1, 2, 4, 4], -1.0, 1.0);
            let v = x.to_vec();
            let mut ok = true;
            for c in 0..2 {
                for oy in 0..2 {
                    for ox in 0..2 {
                        let mut vals: Vec<f32> = (0..4)
                            .map(|i| v[c * 16 + (oy * 2 + i / 2) * 4 + ox * 2 + i % 2])
                            .collect();
                        vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
                        if vals[0] - vals[1] < 0.05 {
                            ok = false;
                        }
                    }
                }
            }
            if ok {
                return (vec![x], Box::new(|t: &[Tensor]| max_pool2(&t[0])) as Box<dyn Fn(&[Tensor]) -> Tensor>);
            }
        }
    });
}

#[test]
fn grad_global_avg_pool() {
    run("global_avg_pool", |rng, _| {
        (vec![var(rng, &[2, 3, 4, 4], -1.0, 1.0)], Box::new(|t| global_avg_pool(&t[0])))
    });
}

#[test]
fn grad_gru_cell() {
    run("gru_cell", |rng, _| {
        let (n, i, h) = (2, 3, 4);
        let x = var(rng, &[n, i], -1.0, 1.0);
        let hh = var(rng, &[n, h], -1.0, 1.0);
        let wx = var(rng, &[3 * h, i], -0.5, 0.5);
        let wh = var(rng, &[3 * h, h], -0.5, 0.5);
        let bx = var(rng, &[3 * h], -0.2, 0.2);
        let bh = var(rng, &[3 * h], -0.2, 0.2);
        (
            vec![x, hh, wx, wh, bx, bh],
            Box::new(|t| gru_cell(&t[0], &t[1], &t[2], &t[3], &t[4], &t[5])),
        )
    });
}
