mod common;

use common::*;
use proptest::prelude::*;
use simulst::autodiff::{kernels, Tape, Tensor};

#[test]
fn every_op_passes_finite_differences() {
    for seed in [1u64, 2, 3] {
        for (name, report) in op_gradient_cases(seed) {
            assert!(report.passed, "{name} (seed {seed}): {report:?}");
        }
    }
}

#[test]
fn sigmoid_layer_sum_matches_finite_differences() {
    let mut r = rng(11);
    let w = uniform(&mut r, 12, -1.0, 1.0);
    let x = uniform(&mut r, 4, -1.0, 1.0);
    let report = check_gradients(
        &[(vec![3, 4], w), (vec![4, 1], x)],
        11,
        |t, v| {
            let wx = t.matmul(v[0], v[1]).unwrap();
            let s = t.sigmoid(wx);
            t.sum(s)
        },
        |x| {
            let wx = matmul64(&x[0], &x[1], 3, 4, 1);
            vec![wx.iter().map(|&v| sigmoid64(v)).sum()]
        },
    );
    assert!(report.passed, "{report:?}");
}

fn matmul_loop(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0f32;
            for p in 0..k {
                acc += a[i * k + p] * b[p * n + j];
            }
            out[i * n + j] = acc;
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv_loop(
    x: &[f32],
    k: &[f32],
    (cin, h, w): (usize, usize, usize),
    (cout, kh, kw): (usize, usize, usize),
    stride: usize,
    pad: usize,
) -> Vec<f32> {
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0f32; cout * ho * wo];
    for co in 0..cout {
        for y in 0..ho {
            for xo in 0..wo {
                let mut acc = 0.0f32;
                for ci in 0..cin {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (y * stride + ky) as isize - pad as isize;
                            let ix = (xo * stride + kx) as isize - pad as isize;
                            if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                acc += k[((co * cin + ci) * kh + ky) * kw + kx]
                                    * x[(ci * h + iy as usize) * w + ix as usize];
                            }
                        }
                    }
                }
                out[(co * ho + y) * wo + xo] = acc;
            }
        }
    }
    out
}

fn pool_loop(x: &[f32], c: usize, h: usize, w: usize) -> Vec<f32> {
    let mut out = Vec::new();
    for ch in 0..c {
        for y in 0..h / 2 {
            for xo in 0..w / 2 {
                let mut m = x[(ch * h + 2 * y) * w + 2 * xo];
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let v = x[(ch * h + 2 * y + dy) * w + 2 * xo + dx];
                    if v > m {
                        m = v;
                    }
                }
                out.push(m);
            }
        }
    }
    out
}

#[test]
fn matmul_matches_triple_loop() {
    let mut r = rng(5);
    let a = uniform(&mut r, 12, -1.0, 1.0);
    let b = uniform(&mut r, 8, -1.0, 1.0);
    assert_eq!(kernels::matmul(&a, &b, 3, 4, 2), matmul_loop(&a, &b, 3, 4, 2));
}

#[test]
fn conv_matches_nested_loop_exactly() {
    let mut r = rng(6);
    let x = uniform(&mut r, 2 * 8 * 8, -1.0, 1.0);
    let k = uniform(&mut r, 3 * 2 * 9, -1.0, 1.0);
    let mut t = Tape::new();
    let xv = t.leaf(Tensor::new(vec![2, 8, 8], x.clone()).unwrap(), false);
    let kv = t.leaf(Tensor::new(vec![3, 2, 3, 3], k.clone()).unwrap(), false);
    for (stride, pad) in [(1, 1), (1, 0), (2, 1)] {
        let y = t.conv2d(xv, kv, None, stride, pad).unwrap();
        assert_eq!(t.value(y), &conv_loop(&x, &k, (2, 8, 8), (3, 3, 3), stride, pad)[..]);
    }
}

#[test]
fn maxpool_matches_window_max() {
    let mut r = rng(7);
    let x = uniform(&mut r, 36, -1.0, 1.0);
    let mut t = Tape::new();
    let xv = t.leaf(Tensor::new(vec![1, 6, 6], x.clone()).unwrap(), false);
    let y = t.maxpool2d(xv).unwrap();
    assert_eq!(t.value(y), &pool_loop(&x, 1, 6, 6)[..]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conv_and_pool_equal_oracles(
        cin in 1usize..3, cout in 1usize..3, h in 2usize..9, w in 2usize..9,
        pad in 0usize..2, seed in any::<u64>()
    ) {
        prop_assume!(h + 2 * pad >= 3 && w + 2 * pad >= 3);
        let mut r = rng(seed);
        let x = uniform(&mut r, cin * h * w, -1.0, 1.0);
        let k = uniform(&mut r, cout * cin * 9, -1.0, 1.0);
        let mut t = Tape::inference();
        let xv = t.leaf(Tensor::new(vec![cin, h, w], x.clone()).unwrap(), false);
        let kv = t.leaf(Tensor::new(vec![cout, cin, 3, 3], k.clone()).unwrap(), false);
        let y = t.conv2d(xv, kv, None, 1, pad).unwrap();
        prop_assert_eq!(t.value(y), &conv_loop(&x, &k, (cin, h, w), (cout, 3, 3), 1, pad)[..]);
        let p = t.maxpool2d(xv).unwrap();
        prop_assert_eq!(t.value(p), &pool_loop(&x, cin, h, w)[..]);
    }

    #[test]
    fn forward_is_deterministic(seed in any::<u64>()) {
        let mut r = rng(seed);
        let x = uniform(&mut r, 64, -1.0, 1.0);
        let run = |x: &[f32]| {
            let mut t = Tape::new();
            let xv = t.leaf(Tensor::new(vec![1, 8, 8], x.to_vec()).unwrap(), true);
            let s = t.softmax(xv).unwrap();
            let th = t.tanh(s);
            let p = t.maxpool2d(th).unwrap();
            t.value(p).iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        };
        prop_assert_eq!(run(&x), run(&x));
    }
}
