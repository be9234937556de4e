//! Strided 2-d/3-d convolution, transposed convolution, and their adjoints,
//! all lowered to im2col plus matrix multiplication.

use super::{Element, Tape, Var};
use ndarray::{Array1, Array2, Array3, Array5, ArrayView2, ArrayView3, Axis, Ix1, Ix3, Ix4, Ix5};

pub fn conv2d_out_size(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - kernel) / stride + 1
}

pub fn deconv2d_out_size(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input - 1) * stride + kernel - 2 * pad
}

/// Lower (ic, h, w) to a (oh*ow, ic*kh*kw) patch matrix with zero padding.
fn im2col2d<T: Element>(
    x: &ArrayView3<T>,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> Array2<T> {
    let (ic, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let oh = conv2d_out_size(h, kh, stride, pad);
    let ow = conv2d_out_size(w, kw, stride, pad);
    let mut cols = Array2::<T>::zeros((oh * ow, ic * kh * kw));
    for oy in 0..oh {
        for ox in 0..ow {
            let row = oy * ow + ox;
            let mut col = 0;
            for c in 0..ic {
                for ky in 0..kh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    for kx in 0..kw {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize {
                            cols[[row, col]] = x[[c, iy as usize, ix as usize]];
                        }
                        col += 1;
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col2d`]: scatter-add patch rows back into (ic, h, w).
fn col2im2d<T: Element>(
    cols: &ArrayView2<T>,
    ic: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> Array3<T> {
    let oh = conv2d_out_size(h, kh, stride, pad);
    let ow = conv2d_out_size(w, kw, stride, pad);
    let mut x = Array3::<T>::zeros((ic, h, w));
    for oy in 0..oh {
        for ox in 0..ow {
            let row = oy * ow + ox;
            let mut col = 0;
            for c in 0..ic {
                for ky in 0..kh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    for kx in 0..kw {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize {
                            x[[c, iy as usize, ix as usize]] += cols[[row, col]];
                        }
                        col += 1;
                    }
                }
            }
        }
    }
    x
}

/// Lower (ic, t, h, w) to a (ot*oh*ow, ic*kt*kh*kw) patch matrix.
#[allow(clippy::too_many_arguments)]
fn im2col3d<T: Element>(
    x: &ndarray::ArrayView4<T>,
    kt: usize,
    kh: usize,
    kw: usize,
    stride_t: usize,
    stride_s: usize,
    pad_t: usize,
    pad_s: usize,
) -> Array2<T> {
    let (ic, t, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let ot = conv2d_out_size(t, kt, stride_t, pad_t);
    let oh = conv2d_out_size(h, kh, stride_s, pad_s);
    let ow = conv2d_out_size(w, kw, stride_s, pad_s);
    let mut cols = Array2::<T>::zeros((ot * oh * ow, ic * kt * kh * kw));
    for oz in 0..ot {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = (oz * oh + oy) * ow + ox;
                let mut col = 0;
                for c in 0..ic {
                    for kz in 0..kt {
                        let iz = (oz * stride_t + kz) as isize - pad_t as isize;
                        for ky in 0..kh {
                            let iy = (oy * stride_s + ky) as isize - pad_s as isize;
                            for kx in 0..kw {
                                let ix = (ox * stride_s + kx) as isize - pad_s as isize;
                                if iz >= 0
                                    && iz < t as isize
                                    && iy >= 0
                                    && iy < h as isize
                                    && ix >= 0
                                    && ix < w as isize
                                {
                                    cols[[row, col]] =
                                        x[[c, iz as usize, iy as usize, ix as usize]];
                                }
                                col += 1;
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

#[allow(clippy::too_many_arguments)]
fn col2im3d<T: Element>(
    cols: &ArrayView2<T>,
    ic: usize,
    t: usize,
    h: usize,
    w: usize,
    kt: usize,
    kh: usize,
    kw: usize,
    stride_t: usize,
    stride_s: usize,
    pad_t: usize,
    pad_s: usize,
) -> ndarray::Array4<T> {
    let ot = conv2d_out_size(t, kt, stride_t, pad_t);
    let oh = conv2d_out_size(h, kh, stride_s, pad_s);
    let ow = conv2d_out_size(w, kw, stride_s, pad_s);
    let mut x = ndarray::Array4::<T>::zeros((ic, t, h, w));
    for oz in 0..ot {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = (oz * oh + oy) * ow + ox;
                let mut col = 0;
                for c in 0..ic {
                    for kz in 0..kt {
                        let iz = (oz * stride_t + kz) as isize - pad_t as isize;
                        for ky in 0..kh {
                            let iy = (oy * stride_s + ky) as isize - pad_s as isize;
                            for kx in 0..kw {
                                let ix = (ox * stride_s + kx) as isize - pad_s as isize;
                                if iz >= 0
                                    && iz < t as isize
                                    && iy >= 0
                                    && iy < h as isize
                                    && ix >= 0
                                    && ix < w as isize
                                {
                                    x[[c, iz as usize, iy as usize, ix as usize]] +=
                                        cols[[row, col]];
                                }
                                col += 1;
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

impl<T: Element> Tape<T> {
    /// 2-d convolution: `x` (ic, h, w), `w` (oc, ic, kh, kw), `b` (oc,).
    pub fn conv2d(&self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Var {
        let xv = self.value(x).into_dimensionality::<Ix3>().unwrap();
        let wv = self.value(w).into_dimensionality::<Ix4>().unwrap();
        let bv = self.value(b).into_dimensionality::<Ix1>().unwrap();
        let (oc, ic, kh, kw) = (wv.shape()[0], wv.shape()[1], wv.shape()[2], wv.shape()[3]);
        assert_eq!(xv.shape()[0], ic, "conv2d input channel mismatch");
        let (h, wd) = (xv.shape()[1], xv.shape()[2]);
        let oh = conv2d_out_size(h, kh, stride, pad);
        let ow = conv2d_out_size(wd, kw, stride, pad);

        let cols = im2col2d(&xv.view(), kh, kw, stride, pad);
        let w_mat = wv.to_owned().into_shape_with_order((oc, ic * kh * kw)).unwrap();
        // (oh*ow, oc)
        let mut out_mat = cols.dot(&w_mat.t());
        for mut row in out_mat.rows_mut() {
            row += &bv;
        }
        let value = out_mat
            .t()
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((oc, oh, ow))
            .unwrap()
            .into_dyn();

        self.push(
            value,
            vec![x.0, w.0, b.0],
            Some(Box::new(move |g, _pv, _| {
                let g3 = g.view().into_dimensionality::<Ix3>().unwrap();
                let g_mat = g3
                    .to_owned()
                    .into_shape_with_order((oc, oh * ow))
                    .unwrap();
                let g_mat_t = g_mat.t().as_standard_layout().into_owned();
                // dW = gᵀ · cols
                let dw = g_mat
                    .dot(&cols)
                    .into_shape_with_order((oc, ic, kh, kw))
                    .unwrap();
                // dX = col2im(g · W)
                let dcols = g_mat_t.dot(&w_mat);
                let dx = col2im2d(&dcols.view(), ic, h, wd, kh, kw, stride, pad);
                let db = g_mat.sum_axis(Axis(1));
                vec![dx.into_dyn(), dw.into_dyn(), db.into_dyn()]
            })),
        )
    }

    /// Transposed 2-d convolution (adjoint of [`Tape::conv2d`] geometry):
    /// `x` (ic, h, w), `w` (ic, oc, kh, kw), `b` (oc,); output (oc, H, W)
    /// with `H = (h-1)*stride + kh - 2*pad`.
    pub fn deconv2d(&self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Var {
        let xv = self.value(x).into_dimensionality::<Ix3>().unwrap();
        let wv = self.value(w).into_dimensionality::<Ix4>().unwrap();
        let bv = self.value(b).into_dimensionality::<Ix1>().unwrap();
        let (ic, oc, kh, kw) = (wv.shape()[0], wv.shape()[1], wv.shape()[2], wv.shape()[3]);
        assert_eq!(xv.shape()[0], ic, "deconv2d input channel mismatch");
        let (h, wd) = (xv.shape()[1], xv.shape()[2]);
        let big_h = deconv2d_out_size(h, kh, stride, pad);
        let big_w = deconv2d_out_size(wd, kw, stride, pad);
        assert_eq!(conv2d_out_size(big_h, kh, stride, pad), h);
        assert_eq!(conv2d_out_size(big_w, kw, stride, pad), wd);

        let x_mat = xv
            .to_owned()
            .into_shape_with_order((ic, h * wd))
            .unwrap()
            .t()
            .as_standard_layout()
            .into_owned();
        let w_mat = wv.to_owned().into_shape_with_order((ic, oc * kh * kw)).unwrap();
        let cols = x_mat.dot(&w_mat); // (h*wd, oc*kh*kw)
        let mut out = col2im2d(&cols.view(), oc, big_h, big_w, kh, kw, stride, pad);
        for (i, mut plane) in out.outer_iter_mut().enumerate() {
            plane.mapv_inplace(|v| v + bv[i]);
        }

        self.push(
            out.into_dyn(),
            vec![x.0, w.0, b.0],
            Some(Box::new(move |g, _pv, _| {
                let g3 = g.view().into_dimensionality::<Ix3>().unwrap();
                let g_cols = im2col2d(&g3, kh, kw, stride, pad); // (h*wd, oc*kh*kw)
                let dx = g_cols
                    .dot(&w_mat.t())
                    .t()
                    .as_standard_layout()
                    .into_owned()
                    .into_shape_with_order((ic, h, wd))
                    .unwrap();
                let dw = x_mat
                    .t()
                    .dot(&g_cols)
                    .into_shape_with_order((ic, oc, kh, kw))
                    .unwrap();
                let mut db = Array1::<T>::zeros(oc);
                for (i, plane) in g3.outer_iter().enumerate() {
                    db[i] = plane.iter().copied().sum();
                }
                vec![dx.into_dyn(), dw.into_dyn(), db.into_dyn()]
            })),
        )
    }

    /// 3-d convolution: `x` (ic, t, h, w), `w` (oc, ic, kt, kh, kw), `b` (oc,).
    /// `stride`/`pad` pairs are (temporal, spatial).
    pub fn conv3d(
        &self,
        x: Var,
        w: Var,
        b: Var,
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Var {
        let xv = self.value(x).into_dimensionality::<Ix4>().unwrap();
        let wv = self.value(w).into_dimensionality::<Ix5>().unwrap();
        let bv = self.value(b).into_dimensionality::<Ix1>().unwrap();
        let (oc, ic, kt, kh, kw) = (
            wv.shape()[0],
            wv.shape()[1],
            wv.shape()[2],
            wv.shape()[3],
            wv.shape()[4],
        );
        assert_eq!(xv.shape()[0], ic, "conv3d input channel mismatch");
        let (t, h, wd) = (xv.shape()[1], xv.shape()[2], xv.shape()[3]);
        let ot = conv2d_out_size(t, kt, stride.0, pad.0);
        let oh = conv2d_out_size(h, kh, stride.1, pad.1);
        let ow = conv2d_out_size(wd, kw, stride.1, pad.1);

        let cols = im2col3d(&xv.view(), kt, kh, kw, stride.0, stride.1, pad.0, pad.1);
        let w_mat = wv
            .to_owned()
            .into_shape_with_order((oc, ic * kt * kh * kw))
            .unwrap();
        let mut out_mat = cols.dot(&w_mat.t());
        for mut row in out_mat.rows_mut() {
            row += &bv;
        }
        let value = out_mat
            .t()
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((oc, ot, oh, ow))
            .unwrap()
            .into_dyn();

        self.push(
            value,
            vec![x.0, w.0, b.0],
            Some(Box::new(move |g, _pv, _| {
                let g4 = g.view().into_dimensionality::<Ix4>().unwrap();
                let g_mat = g4
                    .to_owned()
                    .into_shape_with_order((oc, ot * oh * ow))
                    .unwrap();
                let g_mat_t = g_mat.t().as_standard_layout().into_owned();
                let dw: Array5<T> = g_mat
                    .dot(&cols)
                    .into_shape_with_order((oc, ic, kt, kh, kw))
                    .unwrap();
                let dcols = g_mat_t.dot(&w_mat);
                let dx = col2im3d(
                    &dcols.view(),
                    ic,
                    t,
                    h,
                    wd,
                    kt,
                    kh,
                    kw,
                    stride.0,
                    stride.1,
                    pad.0,
                    pad.1,
                );
                let db = g_mat.sum_axis(Axis(1));
                vec![dx.into_dyn(), dw.into_dyn(), db.into_dyn()]
            })),
        )
    }
}

/// Naive reference convolution used by tests to pin the GEMM path.
#[cfg(test)]
pub fn conv2d_reference<T: Element>(
    x: &Array3<T>,
    w: &ndarray::Array4<T>,
    b: &Array1<T>,
    stride: usize,
    pad: usize,
) -> Array3<T> {
    let (oc, ic, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    let (h, wd) = (x.shape()[1], x.shape()[2]);
    let oh = conv2d_out_size(h, kh, stride, pad);
    let ow = conv2d_out_size(wd, kw, stride, pad);
    let mut out = Array3::<T>::zeros((oc, oh, ow));
    for o in 0..oc {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = b[o];
                for c in 0..ic {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if iy >= 0 && iy < h as isize && ix >= 0 && ix < wd as isize {
                                acc += x[[c, iy as usize, ix as usize]] * w[[o, c, ky, kx]];
                            }
                        }
                    }
                }
                out[[o, oy, ox]] = acc;
            }
        }
    }
    out
}
