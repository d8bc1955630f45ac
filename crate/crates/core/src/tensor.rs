//! Dense single-sample tensors and the layer primitives shared by predictive
//! coding inference and backpropagation.
//!
//! Every forward primitive has a matching vector-Jacobian product (VJP). All
//! functions are pure: they allocate their outputs and never touch shared
//! state, so identical inputs give bit-identical results.

use std::fmt;

use crate::error::{Error, Result};

/// Row-major `f64` array with an explicit shape.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::dim("Tensor::new", format!("zero-sized dimension in {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::dim(
                "Tensor::new",
                format!("shape {shape:?} holds {n} elements, got {}", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    /// 1-D tensor from a slice.
    pub fn vector(values: &[f64]) -> Self {
        Tensor {
            shape: vec![values.len()],
            data: values.to_vec(),
        }
    }

    /// 2-D tensor from row slices. Panics on ragged input.
    pub fn matrix(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == cols), "ragged matrix");
        Tensor {
            shape: vec![rows.len(), cols],
            data: rows.iter().flat_map(|r| r.iter().copied()).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Same data under a new shape with the same element count.
    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::dim(
                "reshape",
                format!("cannot view {:?} as {shape:?}", self.shape),
            ));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    fn check_same(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::dim(
                op,
                format!("lhs {:?} vs rhs {:?}", self.shape, other.shape),
            ));
        }
        Ok(())
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same(other, "sub")?;
        Ok(self.zip_map(other, |a, b| a - b))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same(other, "add")?;
        Ok(self.zip_map(other, |a, b| a + b))
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &Tensor) -> Result<()> {
        self.check_same(other, "axpy")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&self, alpha: f64) -> Tensor {
        self.map(|v| alpha * v)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// Infinity norm.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        if self.len() != other.len() {
            return Err(Error::dim(
                "dot",
                format!("lengths {} vs {}", self.len(), other.len()),
            ));
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Index of the largest element; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        best
    }
}

/// `W·x + b`. `x` may have any shape holding `in` elements (flatten is implicit).
pub fn dense_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (out, inp) = dense_dims(x, w, b, "dense_forward")?;
    let xd = x.data();
    let wd = w.data();
    let mut y = b.data().to_vec();
    for (o, yo) in y.iter_mut().enumerate() {
        let row = &wd[o * inp..(o + 1) * inp];
        *yo += row.iter().zip(xd).map(|(a, b)| a * b).sum::<f64>();
    }
    Ok(Tensor {
        shape: vec![out],
        data: y,
    })
}

fn dense_dims(x: &Tensor, w: &Tensor, b: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    if w.shape().len() != 2 {
        return Err(Error::dim(op, format!("weight W must be 2-D, got {:?}", w.shape())));
    }
    let (out, inp) = (w.shape()[0], w.shape()[1]);
    if x.len() != inp {
        return Err(Error::dim(
            op,
            format!("input x has {} elements, W {:?} expects {inp}", x.len(), w.shape()),
        ));
    }
    if b.shape() != [out] {
        return Err(Error::dim(
            op,
            format!("bias b {:?} does not match W {:?}", b.shape(), w.shape()),
        ));
    }
    Ok((out, inp))
}

/// Adjoint of [`dense_forward`]: returns `(Wᵀu, u ⊗ x, u)`. `dX` takes the shape of `x`.
pub fn dense_vjp(x: &Tensor, w: &Tensor, upstream: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    if w.shape().len() != 2 {
        return Err(Error::dim("dense_vjp", format!("weight W must be 2-D, got {:?}", w.shape())));
    }
    let (out, inp) = (w.shape()[0], w.shape()[1]);
    if x.len() != inp || upstream.shape() != [out] {
        return Err(Error::dim(
            "dense_vjp",
            format!(
                "x {:?}, W {:?}, upstream {:?} do not conform",
                x.shape(),
                w.shape(),
                upstream.shape()
            ),
        ));
    }
    let u = upstream.data();
    let wd = w.data();
    let xd = x.data();
    let mut dx = vec![0.0; inp];
    let mut dw = vec![0.0; out * inp];
    for o in 0..out {
        let uo = u[o];
        if uo == 0.0 {
            continue;
        }
        let row = &wd[o * inp..(o + 1) * inp];
        for (d, &wv) in dx.iter_mut().zip(row) {
            *d += wv * uo;
        }
        for (d, &xv) in dw[o * inp..(o + 1) * inp].iter_mut().zip(xd) {
            *d = uo * xv;
        }
    }
    Ok((
        Tensor {
            shape: x.shape().to_vec(),
            data: dx,
        },
        Tensor {
            shape: vec![out, inp],
            data: dw,
        },
        upstream.clone(),
    ))
}

/// Input half of [`dense_vjp`]: `Wᵀu` shaped like `input_shape`.
pub fn dense_vjp_input(input_shape: &[usize], w: &Tensor, upstream: &Tensor) -> Result<Tensor> {
    let n: usize = input_shape.iter().product();
    if w.shape().len() != 2 || w.shape()[1] != n || upstream.shape() != [w.shape()[0]] {
        return Err(Error::dim(
            "dense_vjp_input",
            format!(
                "input {input_shape:?}, W {:?}, upstream {:?} do not conform",
                w.shape(),
                upstream.shape()
            ),
        ));
    }
    let mut dx = vec![0.0; n];
    for (o, &uo) in upstream.data().iter().enumerate() {
        if uo == 0.0 {
            continue;
        }
        for (d, &wv) in dx.iter_mut().zip(&w.data()[o * n..(o + 1) * n]) {
            *d += wv * uo;
        }
    }
    Ok(Tensor {
        shape: input_shape.to_vec(),
        data: dx,
    })
}

/// Output spatial size of a valid stride-1 convolution.
pub fn conv_output_hw(h: usize, w: usize, k: usize) -> Option<(usize, usize)> {
    if k == 0 || h < k || w < k {
        None
    } else {
        Some((h - k + 1, w - k + 1))
    }
}

struct ConvDims {
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    k: usize,
    oh: usize,
    ow: usize,
}

fn conv_dims(x: &Tensor, k: &Tensor, op: &'static str) -> Result<ConvDims> {
    let (xs, ks) = (x.shape(), k.shape());
    if xs.len() != 3 || ks.len() != 4 {
        return Err(Error::dim(
            op,
            format!("expected x [C,H,W] and K [O,C,k,k], got {xs:?} and {ks:?}"),
        ));
    }
    if ks[1] != xs[0] || ks[2] != ks[3] {
        return Err(Error::dim(op, format!("kernel K {ks:?} incompatible with input x {xs:?}")));
    }
    let (oh, ow) = conv_output_hw(xs[1], xs[2], ks[2]).ok_or_else(|| {
        Error::dim(op, format!("kernel K {ks:?} larger than input x {xs:?}"))
    })?;
    Ok(ConvDims {
        c_in: xs[0],
        h: xs[1],
        w: xs[2],
        c_out: ks[0],
        k: ks[2],
        oh,
        ow,
    })
}

/// Valid, stride-1 cross-correlation with per-channel bias.
pub fn conv2d_forward(x: &Tensor, k: &Tensor, b: &Tensor) -> Result<Tensor> {
    let d = conv_dims(x, k, "conv2d_forward")?;
    if b.shape() != [d.c_out] {
        return Err(Error::dim(
            "conv2d_forward",
            format!("bias b {:?} does not match {} filters", b.shape(), d.c_out),
        ));
    }
    let (xd, kd) = (x.data(), k.data());
    let plane = d.oh * d.ow;
    let mut out = vec![0.0; d.c_out * plane];
    for o in 0..d.c_out {
        let dst = &mut out[o * plane..(o + 1) * plane];
        dst.fill(b.data()[o]);
        for c in 0..d.c_in {
            for ki in 0..d.k {
                for kj in 0..d.k {
                    let kv = kd[((o * d.c_in + c) * d.k + ki) * d.k + kj];
                    for i in 0..d.oh {
                        let src = &xd[(c * d.h + i + ki) * d.w + kj..][..d.ow];
                        for (y, &xv) in dst[i * d.ow..(i + 1) * d.ow].iter_mut().zip(src) {
                            *y += kv * xv;
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor {
        shape: vec![d.c_out, d.oh, d.ow],
        data: out,
    })
}

/// Adjoint of [`conv2d_forward`]: `(dX, dK, dB)`.
pub fn conv2d_vjp(x: &Tensor, k: &Tensor, upstream: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let d = conv_dims(x, k, "conv2d_vjp")?;
    if upstream.shape() != [d.c_out, d.oh, d.ow] {
        return Err(Error::dim(
            "conv2d_vjp",
            format!(
                "upstream {:?} is not the forward output shape {:?}",
                upstream.shape(),
                [d.c_out, d.oh, d.ow]
            ),
        ));
    }
    let (xd, kd, ud) = (x.data(), k.data(), upstream.data());
    let plane = d.oh * d.ow;
    let mut dx = vec![0.0; x.len()];
    let mut dk = vec![0.0; k.len()];
    let mut db = vec![0.0; d.c_out];
    for o in 0..d.c_out {
        let up = &ud[o * plane..(o + 1) * plane];
        db[o] = up.iter().sum();
        for c in 0..d.c_in {
            for ki in 0..d.k {
                for kj in 0..d.k {
                    let kidx = ((o * d.c_in + c) * d.k + ki) * d.k + kj;
                    let kv = kd[kidx];
                    let mut acc = 0.0;
                    for i in 0..d.oh {
                        let row = (c * d.h + i + ki) * d.w + kj;
                        let urow = &up[i * d.ow..(i + 1) * d.ow];
                        let xrow = &xd[row..row + d.ow];
                        acc += urow.iter().zip(xrow).map(|(u, xv)| u * xv).sum::<f64>();
                        for (g, &u) in dx[row..row + d.ow].iter_mut().zip(urow) {
                            *g += kv * u;
                        }
                    }
                    dk[kidx] = acc;
                }
            }
        }
    }
    Ok((
        Tensor {
            shape: x.shape().to_vec(),
            data: dx,
        },
        Tensor {
            shape: k.shape().to_vec(),
            data: dk,
        },
        Tensor {
            shape: vec![d.c_out],
            data: db,
        },
    ))
}

/// Winning flat input index for every pooled output element.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolIndex {
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    winners: Vec<usize>,
}

impl PoolIndex {
    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    pub fn winners(&self) -> &[usize] {
        &self.winners
    }
}

/// Non-overlapping `size`×`size` max pooling. Ties go to the first index in
/// row-major window order.
pub fn maxpool_forward(x: &Tensor, size: usize) -> Result<(Tensor, PoolIndex)> {
    let s = x.shape();
    if s.len() != 3 {
        return Err(Error::dim("maxpool_forward", format!("expected [C,H,W], got {s:?}")));
    }
    if size == 0 || !s[1].is_multiple_of(size) || !s[2].is_multiple_of(size) {
        return Err(Error::dim(
            "maxpool_forward",
            format!("spatial dims {}x{} not divisible by pool size {size}", s[1], s[2]),
        ));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    let (oh, ow) = (h / size, w / size);
    let xd = x.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut winners = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for i in 0..oh {
            for j in 0..ow {
                let mut best = (ch * h + i * size) * w + j * size;
                for di in 0..size {
                    for dj in 0..size {
                        let idx = (ch * h + i * size + di) * w + j * size + dj;
                        if xd[idx] > xd[best] {
                            best = idx;
                        }
                    }
                }
                out.push(xd[best]);
                winners.push(best);
            }
        }
    }
    let output_shape = vec![c, oh, ow];
    Ok((
        Tensor {
            shape: output_shape.clone(),
            data: out,
        },
        PoolIndex {
            input_shape: s.to_vec(),
            output_shape,
            winners,
        },
    ))
}

/// Routes each upstream element to its recorded winner.
pub fn maxpool_vjp(index: &PoolIndex, upstream: &Tensor) -> Result<Tensor> {
    if upstream.shape() != index.output_shape.as_slice() {
        return Err(Error::dim(
            "maxpool_vjp",
            format!(
                "upstream {:?} does not match pooled shape {:?}",
                upstream.shape(),
                index.output_shape
            ),
        ));
    }
    let mut dx = Tensor::zeros(&index.input_shape);
    for (&w, &u) in index.winners.iter().zip(upstream.data()) {
        dx.data[w] += u;
    }
    Ok(dx)
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// 1 where `x > 0`, else 0 (including at exactly 0).
pub fn relu_deriv(x: &Tensor) -> Tensor {
    x.map(|v| if v > 0.0 { 1.0 } else { 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_identity_and_hand_case() {
        let eye = Tensor::matrix(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let y = dense_forward(&Tensor::vector(&[3.0, -1.0]), &eye, &Tensor::zeros(&[2])).unwrap();
        assert_eq!(y.data(), &[3.0, -1.0]);

        let w = Tensor::matrix(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let y = dense_forward(&Tensor::vector(&[1.0, 1.0]), &w, &Tensor::vector(&[1.0, 1.0])).unwrap();
        assert_eq!(y.data(), &[4.0, 8.0]);
    }

    #[test]
    fn dense_shape_error_names_operands() {
        let w = Tensor::zeros(&[2, 3]);
        let err = dense_forward(&Tensor::zeros(&[2]), &w, &Tensor::zeros(&[2])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("dense_forward") && msg.contains("x") && msg.contains("W"), "{msg}");
        let err = dense_forward(&Tensor::zeros(&[3]), &w, &Tensor::zeros(&[3])).unwrap_err();
        assert!(err.to_string().contains("bias b"));
    }

    #[test]
    fn dense_vjp_zero_and_identity() {
        let x = Tensor::vector(&[0.5, -2.0]);
        let w = Tensor::matrix(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let (dx, dw, db) = dense_vjp(&x, &w, &Tensor::zeros(&[2])).unwrap();
        assert!(dx.max_abs() == 0.0 && dw.max_abs() == 0.0 && db.max_abs() == 0.0);

        let u = Tensor::vector(&[1.5, -0.25]);
        let (dx, _, db) = dense_vjp(&x, &w, &u).unwrap();
        assert_eq!(dx.data(), u.data());
        assert_eq!(db, u);
    }

    #[test]
    fn conv_all_ones_and_delta_kernel() {
        let x = Tensor::filled(&[1, 3, 3], 1.0);
        let k = Tensor::filled(&[1, 1, 3, 3], 1.0);
        let y = conv2d_forward(&x, &k, &Tensor::zeros(&[1])).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1]);
        assert_eq!(y.data(), &[9.0]);

        let x = Tensor::new(vec![1, 4, 5], (0..20).map(f64::from).collect()).unwrap();
        let mut k = Tensor::zeros(&[1, 1, 3, 3]);
        k.data_mut()[4] = 1.0;
        let y = conv2d_forward(&x, &k, &Tensor::zeros(&[1])).unwrap();
        assert_eq!(y.shape(), &[1, 2, 3]);
        assert_eq!(y.data(), &[6.0, 7.0, 8.0, 11.0, 12.0, 13.0]);
    }

    #[test]
    fn conv_kernel_larger_than_input() {
        let err = conv2d_forward(
            &Tensor::zeros(&[1, 2, 2]),
            &Tensor::zeros(&[1, 1, 3, 3]),
            &Tensor::zeros(&[1]),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Dimension { op: "conv2d_forward", .. }));
    }

    #[test]
    fn conv_vjp_zero_and_pointwise_kernel() {
        let x = Tensor::new(vec![1, 3, 3], (0..9).map(|v| v as f64 * 0.1).collect()).unwrap();
        let k = Tensor::new(vec![1, 1, 1, 1], vec![2.5]).unwrap();
        let (dx, dk, db) = conv2d_vjp(&x, &k, &Tensor::zeros(&[1, 3, 3])).unwrap();
        assert_eq!(dx.max_abs() + dk.max_abs() + db.max_abs(), 0.0);

        let up = Tensor::new(vec![1, 3, 3], (0..9).map(|v| v as f64 - 4.0).collect()).unwrap();
        let (dx, _, _) = conv2d_vjp(&x, &k, &up).unwrap();
        assert_eq!(dx, up.scale(2.5).reshape(&[1, 3, 3]).unwrap());

        assert!(conv2d_vjp(&x, &k, &Tensor::zeros(&[1, 2, 2])).is_err());
    }

    #[test]
    fn maxpool_constant_and_single_window() {
        let x = Tensor::filled(&[2, 4, 4], 0.7);
        let (y, idx) = maxpool_forward(&x, 2).unwrap();
        assert_eq!(y.shape(), &[2, 2, 2]);
        assert!(y.data().iter().all(|&v| v == 0.7));
        // first element of each window
        assert_eq!(&idx.winners()[..4], &[0, 2, 8, 10]);

        let x = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, idx) = maxpool_forward(&x, 2).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(idx.winners(), &[3]);

        let dx = maxpool_vjp(&idx, &Tensor::new(vec![1, 1, 1], vec![5.0]).unwrap()).unwrap();
        assert_eq!(dx.data(), &[0.0, 0.0, 0.0, 5.0]);
        let dx = maxpool_vjp(&idx, &Tensor::zeros(&[1, 1, 1])).unwrap();
        assert_eq!(dx.max_abs(), 0.0);
    }

    #[test]
    fn maxpool_errors() {
        assert!(maxpool_forward(&Tensor::zeros(&[1, 3, 4]), 2).is_err());
        let (_, idx) = maxpool_forward(&Tensor::zeros(&[1, 4, 4]), 2).unwrap();
        assert!(maxpool_vjp(&idx, &Tensor::zeros(&[1, 1, 1])).is_err());
    }

    #[test]
    fn relu_values() {
        let x = Tensor::vector(&[-1.0, 0.0, 2.0]);
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        assert_eq!(relu_deriv(&x).data(), &[0.0, 0.0, 1.0]);
        let pos = Tensor::vector(&[0.1, 3.0, 7.5]);
        assert_eq!(relu(&pos), pos);
        let x = Tensor::vector(&[-3.0, -0.5, 0.25, 9.0]);
        let r = relu(&x);
        let d = relu_deriv(&x);
        for i in 0..4 {
            assert_eq!(r.data()[i] - x.data()[i] * d.data()[i], 0.0);
        }
    }

    #[test]
    fn argmax_ties_lowest() {
        assert_eq!(Tensor::vector(&[1.0, 3.0, 3.0, 0.0]).argmax(), 1);
        assert_eq!(Tensor::vector(&[0.0, 0.0]).argmax(), 0);
    }

    #[test]
    fn new_rejects_bad_length() {
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
    }
}
