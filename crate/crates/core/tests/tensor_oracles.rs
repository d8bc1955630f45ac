use pcn_ta::tensor::{self, Tensor};
use proptest::prelude::*;

fn naive_conv(x: &Tensor, k: &Tensor, b: &Tensor) -> Vec<f64> {
    let (c_in, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (c_out, ks) = (k.shape()[0], k.shape()[2]);
    let (oh, ow) = (h - ks + 1, w - ks + 1);
    let mut out = vec![0.0; c_out * oh * ow];
    for o in 0..c_out {
        for y in 0..oh {
            for xx in 0..ow {
                let mut acc = b.data()[o];
                for c in 0..c_in {
                    for ky in 0..ks {
                        for kx in 0..ks {
                            acc += x.data()[(c * h + y + ky) * w + xx + kx]
                                * k.data()[((o * c_in + c) * ks + ky) * ks + kx];
                        }
                    }
                }
                out[(o * oh + y) * ow + xx] = acc;
            }
        }
    }
    out
}

fn naive_dense(x: &[f64], w: &Tensor, b: &Tensor) -> Vec<f64> {
    let (rows, cols) = (w.shape()[0], w.shape()[1]);
    (0..rows)
        .map(|r| b.data()[r] + (0..cols).map(|c| w.data()[r * cols + c] * x[c]).sum::<f64>())
        .collect()
}

fn tensor_of(shape: Vec<usize>) -> impl Strategy<Value = Tensor> {
    let n: usize = shape.iter().product();
    prop::collection::vec(-2.0f64..2.0, n).prop_map(move |d| Tensor::new(shape.clone(), d).unwrap())
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn conv_matches_naive_loops_on_2x8x8() {
    let mut seed = 17u64;
    let mut next = || {
        seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((seed >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    };
    let x = Tensor::new(vec![2, 8, 8], (0..128).map(|_| next()).collect()).unwrap();
    let k = Tensor::new(vec![3, 2, 3, 3], (0..54).map(|_| next()).collect()).unwrap();
    let b = Tensor::vector(&[next(), next(), next()]);
    let y = tensor::conv2d_forward(&x, &k, &b).unwrap();
    assert_eq!(y.shape(), &[3, 6, 6]);
    assert!(close(y.data(), &naive_conv(&x, &k, &b), 1e-9));
}

proptest! {
    #[test]
    fn conv_matches_naive_loops(
        (x, k, b) in (1usize..4, 1usize..4, 1usize..4, 0usize..4, 0usize..4).prop_flat_map(|(c_in, c_out, ks, dh, dw)| {
            (tensor_of(vec![c_in, ks + dh, ks + dw]), tensor_of(vec![c_out, c_in, ks, ks]), tensor_of(vec![c_out]))
        })
    ) {
        let y = tensor::conv2d_forward(&x, &k, &b).unwrap();
        prop_assert!(close(y.data(), &naive_conv(&x, &k, &b), 1e-9));
    }

    #[test]
    fn dense_matches_naive_loops(
        (x, w, b) in (1usize..8, 1usize..8).prop_flat_map(|(n_in, n_out)| {
            (tensor_of(vec![n_in]), tensor_of(vec![n_out, n_in]), tensor_of(vec![n_out]))
        })
    ) {
        let y = tensor::dense_forward(&x, &w, &b).unwrap();
        prop_assert!(close(y.data(), &naive_dense(x.data(), &w, &b), 1e-9));
    }

    #[test]
    fn maxpool_is_window_max_and_vjp_conserves_mass(
        (x, u) in (1usize..3, 1usize..4, 1usize..4).prop_flat_map(|(c, hh, ww)| {
            (tensor_of(vec![c, 2 * hh, 2 * ww]), tensor_of(vec![c, hh, ww]))
        })
    ) {
        let (y, idx) = tensor::maxpool_forward(&x, 2).unwrap();
        let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        for ch in 0..c {
            for oy in 0..h / 2 {
                for ox in 0..w / 2 {
                    let window = [(0, 0), (0, 1), (1, 0), (1, 1)]
                        .map(|(dy, dx)| x.data()[(ch * h + 2 * oy + dy) * w + 2 * ox + dx]);
                    let m = window.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    prop_assert_eq!(y.data()[(ch * (h / 2) + oy) * (w / 2) + ox], m);
                }
            }
        }
        let dx = tensor::maxpool_vjp(&idx, &u).unwrap();
        prop_assert!((dx.sum() - u.sum()).abs() < 1e-12);
        prop_assert_eq!(dx.data().iter().filter(|v| **v != 0.0).count(), u.data().iter().filter(|v| **v != 0.0).count());
    }

    #[test]
    fn relu_identity_away_from_zero(x in tensor_of(vec![16])) {
        let r = tensor::relu(&x);
        let d = tensor::relu_deriv(&x);
        for ((&xi, &ri), &di) in x.data().iter().zip(r.data()).zip(d.data()) {
            if xi != 0.0 {
                prop_assert_eq!(ri - xi * di, 0.0);
            }
        }
    }

    #[test]
    fn operations_are_bit_deterministic(
        (x, k, b) in (tensor_of(vec![2, 6, 6]), tensor_of(vec![2, 2, 3, 3]), tensor_of(vec![2]))
    ) {
        let a = tensor::conv2d_forward(&x, &k, &b).unwrap();
        let c = tensor::conv2d_forward(&x, &k, &b).unwrap();
        prop_assert_eq!(a.data(), c.data());
        let u = a.map(|v| v.sin());
        prop_assert_eq!(tensor::conv2d_vjp(&x, &k, &u).unwrap(), tensor::conv2d_vjp(&x, &k, &u).unwrap());
    }
}
