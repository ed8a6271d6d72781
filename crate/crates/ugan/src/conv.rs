//! Raw convolution kernels on NCHW arrays.
//!
//! Three primitives cover forward convolution and both of its adjoints:
//! [`conv2d`], [`conv2d_dx`] (adjoint in the input, also the forward pass of
//! a transpose convolution), and [`conv2d_dw`] (adjoint in the weights).
//! The trio is closed under differentiation, which is what lets the tape in
//! [`crate::graph`] take second derivatives through convolution layers.
//!
//! Weight layout is `[k_out, c_in, kh, kw]`. Padding may be asymmetric.

use ndarray::{ArrayD, Ix4, IxDyn};
use serde::{Deserialize, Serialize};

/// Zero padding applied to the two spatial axes. May be asymmetric.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pad {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Pad {
    pub fn uniform(p: usize) -> Self {
        Pad { top: p, bottom: p, left: p, right: p }
    }
}

/// Stride and padding of a convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeom {
    pub stride: usize,
    pub pad: Pad,
}

impl ConvGeom {
    pub fn new(stride: usize, pad: Pad) -> Self {
        ConvGeom { stride, pad }
    }

    /// Output extent along one spatial axis.
    pub fn out_dim(&self, input: usize, kernel: usize, before: usize, after: usize) -> usize {
        (input + before + after - kernel) / self.stride + 1
    }

    pub fn out_hw(&self, in_hw: (usize, usize), k_hw: (usize, usize)) -> (usize, usize) {
        (
            self.out_dim(in_hw.0, k_hw.0, self.pad.top, self.pad.bottom),
            self.out_dim(in_hw.1, k_hw.1, self.pad.left, self.pad.right),
        )
    }

    /// Input extent that produces `output` along one axis; the inverse of
    /// [`ConvGeom::out_dim`] when the division is exact.
    pub fn in_dim(&self, output: usize, kernel: usize, before: usize, after: usize) -> usize {
        (output - 1) * self.stride + kernel - before - after
    }
}

fn dims4(a: &ArrayD<f64>) -> (usize, usize, usize, usize) {
    let s = a.shape();
    assert_eq!(s.len(), 4, "expected a 4-d NCHW array, got shape {s:?}");
    (s[0], s[1], s[2], s[3])
}

/// Unfold `x` into a `[n*ho*wo, c*kh*kw]` matrix of receptive-field rows.
fn im2col(
    x: &ArrayD<f64>,
    k_hw: (usize, usize),
    geom: ConvGeom,
    out_hw: (usize, usize),
) -> ndarray::Array2<f64> {
    let (n, c, h, w) = dims4(x);
    let (kh, kw) = k_hw;
    let (ho, wo) = out_hw;
    let xs = x.as_slice().expect("standard layout");
    let row_len = c * kh * kw;
    let mut cols = vec![0.0f64; n * ho * wo * row_len];
    let s = geom.stride as isize;
    let (pt, pl) = (geom.pad.top as isize, geom.pad.left as isize);
    for nn in 0..n {
        for oh in 0..ho {
            let ih0 = oh as isize * s - pt;
            for ow in 0..wo {
                let iw0 = ow as isize * s - pl;
                let row = ((nn * ho + oh) * wo + ow) * row_len;
                for cc in 0..c {
                    let xc = (nn * c + cc) * h;
                    for i in 0..kh {
                        let ih = ih0 + i as isize;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        let xrow = (xc + ih as usize) * w;
                        let dst = row + (cc * kh + i) * kw;
                        for j in 0..kw {
                            let iw = iw0 + j as isize;
                            if iw < 0 || iw >= w as isize {
                                continue;
                            }
                            cols[dst + j] = xs[xrow + iw as usize];
                        }
                    }
                }
            }
        }
    }
    ndarray::Array2::from_shape_vec((n * ho * wo, row_len), cols).unwrap()
}

/// Fold a `[n*ho*wo, c*kh*kw]` matrix back into an image by scatter-add;
/// the exact adjoint of [`im2col`].
fn col2im(
    cols: &ndarray::Array2<f64>,
    n: usize,
    c: usize,
    in_hw: (usize, usize),
    k_hw: (usize, usize),
    geom: ConvGeom,
    out_hw: (usize, usize),
) -> ArrayD<f64> {
    let (h, w) = in_hw;
    let (kh, kw) = k_hw;
    let (ho, wo) = out_hw;
    let row_len = c * kh * kw;
    let cs = cols.as_slice().expect("standard layout");
    let mut out = vec![0.0f64; n * c * h * w];
    let s = geom.stride as isize;
    let (pt, pl) = (geom.pad.top as isize, geom.pad.left as isize);
    for nn in 0..n {
        for oh in 0..ho {
            let ih0 = oh as isize * s - pt;
            for ow in 0..wo {
                let iw0 = ow as isize * s - pl;
                let row = ((nn * ho + oh) * wo + ow) * row_len;
                for cc in 0..c {
                    let xc = (nn * c + cc) * h;
                    for i in 0..kh {
                        let ih = ih0 + i as isize;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        let orow = (xc + ih as usize) * w;
                        let src = row + (cc * kh + i) * kw;
                        for j in 0..kw {
                            let iw = iw0 + j as isize;
                            if iw < 0 || iw >= w as isize {
                                continue;
                            }
                            out[orow + iw as usize] += cs[src + j];
                        }
                    }
                }
            }
        }
    }
    ArrayD::from_shape_vec(IxDyn(&[n, c, h, w]), out).unwrap()
}

/// Reorder `[n,k,ho,wo]` into a `[n*ho*wo, k]` matrix.
fn to_rows(y: &ArrayD<f64>) -> ndarray::Array2<f64> {
    let (n, k, ho, wo) = dims4(y);
    let y4 = y.view().into_dimensionality::<Ix4>().unwrap();
    let perm = y4.permuted_axes([0, 2, 3, 1]);
    let flat: Vec<f64> = perm.iter().copied().collect();
    ndarray::Array2::from_shape_vec((n * ho * wo, k), flat).unwrap()
}

/// Reorder a `[n*ho*wo, k]` matrix into `[n,k,ho,wo]`.
fn from_rows(rows: ndarray::Array2<f64>, n: usize, k: usize, out_hw: (usize, usize)) -> ArrayD<f64> {
    let (ho, wo) = out_hw;
    let a = rows.into_shape_with_order((n, ho, wo, k)).unwrap();
    let perm = a.permuted_axes([0, 3, 1, 2]);
    let flat: Vec<f64> = perm.iter().copied().collect();
    ArrayD::from_shape_vec(IxDyn(&[n, k, ho, wo]), flat).unwrap()
}

/// Forward convolution: `x [n,c,h,w] * w [k,c,kh,kw] -> [n,k,ho,wo]`.
pub fn conv2d(x: &ArrayD<f64>, w: &ArrayD<f64>, geom: ConvGeom) -> ArrayD<f64> {
    let (n, c, h, ww) = dims4(x);
    let (k, cw, kh, kw) = dims4(w);
    assert_eq!(c, cw, "input channels {c} vs kernel channels {cw}");
    let out_hw = geom.out_hw((h, ww), (kh, kw));
    let cols = im2col(x, (kh, kw), geom, out_hw);
    let w2 = w.view().into_shape_with_order((k, c * kh * kw)).unwrap();
    let y2 = cols.dot(&w2.t());
    from_rows(y2, n, k, out_hw)
}

/// Adjoint of [`conv2d`] in its input: maps `gy [n,k,ho,wo]` back to the
/// input geometry `[n,c,h,w]`. Doubles as the forward pass of a transpose
/// convolution with weight layout `[k_in, c_out, kh, kw]`.
pub fn conv2d_dx(
    gy: &ArrayD<f64>,
    w: &ArrayD<f64>,
    geom: ConvGeom,
    in_hw: (usize, usize),
) -> ArrayD<f64> {
    let (n, k, ho, wo) = dims4(gy);
    let (kw_k, c, kh, kw) = dims4(w);
    assert_eq!(k, kw_k, "map channels {k} vs kernel leading dim {kw_k}");
    debug_assert_eq!(geom.out_hw(in_hw, (kh, kw)), (ho, wo), "geometry mismatch");
    let gy2 = to_rows(gy);
    let w2 = w.view().into_shape_with_order((k, c * kh * kw)).unwrap();
    let cols = gy2.dot(&w2);
    col2im(&cols, n, c, in_hw, (kh, kw), geom, (ho, wo))
}

/// Adjoint of [`conv2d`] in its weights: `x [n,c,h,w]`, `gy [n,k,ho,wo]`
/// -> `[k,c,kh,kw]`.
pub fn conv2d_dw(
    x: &ArrayD<f64>,
    gy: &ArrayD<f64>,
    geom: ConvGeom,
    k_hw: (usize, usize),
) -> ArrayD<f64> {
    let (n, c, h, w) = dims4(x);
    let (ng, k, ho, wo) = dims4(gy);
    assert_eq!(n, ng, "batch mismatch {n} vs {ng}");
    let (kh, kw) = k_hw;
    debug_assert_eq!(geom.out_hw((h, w), k_hw), (ho, wo), "geometry mismatch");
    let cols = im2col(x, k_hw, geom, (ho, wo));
    let gy2 = to_rows(gy);
    let gw2 = cols.t().dot(&gy2); // [c*kh*kw, k]
    let a = gw2.into_shape_with_order((c, kh, kw, k)).unwrap();
    let perm = a.permuted_axes([3, 0, 1, 2]);
    let flat: Vec<f64> = perm.iter().copied().collect();
    ArrayD::from_shape_vec(IxDyn(&[k, c, kh, kw]), flat).unwrap()
}
