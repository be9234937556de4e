//! Elementwise, reduction, linear-algebra, and structural tape operations.

use super::{Element, Tape, Var};
use ndarray::{concatenate, Array1, Array2, ArrayD, Axis, Ix1, Ix2, Ix3, IxDyn, Slice};

impl<T: Element> Tape<T> {
    pub fn add(&self, a: Var, b: Var) -> Var {
        let value = {
            let av = self.value(a);
            let bv = self.value(b);
            assert_eq!(av.shape(), bv.shape(), "add shape mismatch");
            av + bv
        };
        self.push(
            value,
            vec![a.0, b.0],
            Some(Box::new(|g, _, _| vec![g.clone(), g.clone()])),
        )
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        let value = {
            let av = self.value(a);
            let bv = self.value(b);
            assert_eq!(av.shape(), bv.shape(), "sub shape mismatch");
            av - bv
        };
        self.push(
            value,
            vec![a.0, b.0],
            Some(Box::new(|g, _, _| vec![g.clone(), g.mapv(|x| -x)])),
        )
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        let value = {
            let av = self.value(a);
            let bv = self.value(b);
            assert_eq!(av.shape(), bv.shape(), "mul shape mismatch");
            av * bv
        };
        self.push(
            value,
            vec![a.0, b.0],
            Some(Box::new(|g, pv, _| vec![g * pv[1], g * pv[0]])),
        )
    }

    pub fn scale(&self, a: Var, k: T) -> Var {
        let value = self.value(a) * k;
        self.push(
            value,
            vec![a.0],
            Some(Box::new(move |g, _, _| vec![g * k])),
        )
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| T::one() / (T::one() + (-x).exp()));
        self.push(
            value,
            vec![a.0],
            Some(Box::new(|g, _, y| vec![g * &y.mapv(|v| v * (T::one() - v))])),
        )
    }

    pub fn tanh_act(&self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x.tanh());
        self.push(
            value,
            vec![a.0],
            Some(Box::new(|g, _, y| vec![g * &y.mapv(|v| T::one() - v * v)])),
        )
    }

    pub fn leaky_relu(&self, a: Var, slope: T) -> Var {
        let value = self
            .value(a)
            .mapv(|x| if x > T::zero() { x } else { x * slope });
        self.push(
            value,
            vec![a.0],
            Some(Box::new(move |g, pv, _| {
                let mask = pv[0].mapv(|x| if x > T::zero() { T::one() } else { slope });
                vec![g * &mask]
            })),
        )
    }

    pub fn abs_val(&self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x.abs());
        self.push(
            value,
            vec![a.0],
            Some(Box::new(|g, pv, _| {
                let sign = pv[0].mapv(|x| {
                    if x > T::zero() {
                        T::one()
                    } else if x < T::zero() {
                        -T::one()
                    } else {
                        T::zero()
                    }
                });
                vec![g * &sign]
            })),
        )
    }

    pub fn sum_all(&self, a: Var) -> Var {
        let s: T = self.with_value(a, |v| v.iter().copied().sum());
        let shape = self.shape(a);
        self.push(
            ArrayD::from_elem(IxDyn(&[]), s),
            vec![a.0],
            Some(Box::new(move |g, _, _| {
                let gs = *g.iter().next().unwrap();
                vec![ArrayD::from_elem(IxDyn(&shape), gs)]
            })),
        )
    }

    pub fn mean_all(&self, a: Var) -> Var {
        let n = T::of_f64(self.with_value(a, |v| v.len()) as f64);
        let s = self.sum_all(a);
        self.scale(s, T::one() / n)
    }

    /// `a` (m, k) times `b` (k, n).
    pub fn matmul(&self, a: Var, b: Var) -> Var {
        let value = {
            let av = self.value(a).into_dimensionality::<Ix2>().unwrap();
            let bv = self.value(b).into_dimensionality::<Ix2>().unwrap();
            av.dot(&bv).into_dyn()
        };
        self.push(
            value,
            vec![a.0, b.0],
            Some(Box::new(|g, pv, _| {
                let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
                let av = pv[0].view().into_dimensionality::<Ix2>().unwrap();
                let bv = pv[1].view().into_dimensionality::<Ix2>().unwrap();
                vec![g2.dot(&bv.t()).into_dyn(), av.t().dot(&g2).into_dyn()]
            })),
        )
    }

    /// Fully connected layer: `w` (out, in) dot `x` (in,) plus `b` (out,).
    pub fn linear(&self, x: Var, w: Var, b: Var) -> Var {
        let value = {
            let xv = self.value(x).into_dimensionality::<Ix1>().unwrap();
            let wv = self.value(w).into_dimensionality::<Ix2>().unwrap();
            let bv = self.value(b).into_dimensionality::<Ix1>().unwrap();
            (wv.dot(&xv) + bv).into_dyn()
        };
        self.push(
            value,
            vec![x.0, w.0, b.0],
            Some(Box::new(|g, pv, _| {
                let g1 = g.view().into_dimensionality::<Ix1>().unwrap();
                let xv = pv[0].view().into_dimensionality::<Ix1>().unwrap();
                let wv = pv[1].view().into_dimensionality::<Ix2>().unwrap();
                let dx = wv.t().dot(&g1).into_dyn();
                let mut dw = Array2::<T>::zeros((g1.len(), xv.len()));
                for (i, gi) in g1.iter().enumerate() {
                    for (j, xj) in xv.iter().enumerate() {
                        dw[[i, j]] = *gi * *xj;
                    }
                }
                vec![dx, dw.into_dyn(), g.clone()]
            })),
        )
    }

    /// Softmax over the last axis of a 2-d array, computed with max subtraction.
    pub fn softmax_rows(&self, a: Var) -> Var {
        let value = {
            let av = self.value(a).into_dimensionality::<Ix2>().unwrap();
            let mut out = av.clone();
            for mut row in out.rows_mut() {
                let max = row.iter().copied().fold(T::neg_infinity(), T::max);
                row.mapv_inplace(|x| (x - max).exp());
                let sum: T = row.iter().copied().sum();
                row.mapv_inplace(|x| x / sum);
            }
            out.into_dyn()
        };
        self.push(
            value,
            vec![a.0],
            Some(Box::new(|g, _, y| {
                let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
                let y2 = y.view().into_dimensionality::<Ix2>().unwrap();
                let mut dx = Array2::<T>::zeros(g2.raw_dim());
                for i in 0..g2.nrows() {
                    let dot: T = g2.row(i).iter().zip(y2.row(i)).map(|(a, b)| *a * *b).sum();
                    for j in 0..g2.ncols() {
                        dx[[i, j]] = y2[[i, j]] * (g2[[i, j]] - dot);
                    }
                }
                vec![dx.into_dyn()]
            })),
        )
    }

    /// Rows of a 2-d array divided by `max(row_norm, eps)`.
    pub fn normalize_rows(&self, a: Var, eps: T) -> Var {
        let value = {
            let av = self.value(a).into_dimensionality::<Ix2>().unwrap();
            let mut out = av.clone();
            for mut row in out.rows_mut() {
                let norm = row.iter().map(|x| *x * *x).sum::<T>().sqrt();
                let denom = norm.max(eps);
                row.mapv_inplace(|x| x / denom);
            }
            out.into_dyn()
        };
        self.push(
            value,
            vec![a.0],
            Some(Box::new(move |g, pv, y| {
                let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
                let x2 = pv[0].view().into_dimensionality::<Ix2>().unwrap();
                let y2 = y.view().into_dimensionality::<Ix2>().unwrap();
                let mut dx = Array2::<T>::zeros(g2.raw_dim());
                for i in 0..g2.nrows() {
                    let norm = x2.row(i).iter().map(|x| *x * *x).sum::<T>().sqrt();
                    if norm > eps {
                        let dot: T = g2.row(i).iter().zip(y2.row(i)).map(|(a, b)| *a * *b).sum();
                        for j in 0..g2.ncols() {
                            dx[[i, j]] = (g2[[i, j]] - y2[[i, j]] * dot) / norm;
                        }
                    } else {
                        for j in 0..g2.ncols() {
                            dx[[i, j]] = g2[[i, j]] / eps;
                        }
                    }
                }
                vec![dx.into_dyn()]
            })),
        )
    }

    /// Concatenate along `axis`; all parts must agree on the other axes.
    pub fn concat(&self, axis: usize, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let values: Vec<ArrayD<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let views: Vec<_> = values.iter().map(|v| v.view()).collect();
        let value = concatenate(Axis(axis), &views).expect("concat shape mismatch");
        let extents: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
        self.push(
            value,
            parts.iter().map(|p| p.0).collect(),
            Some(Box::new(move |g, _, _| {
                let mut out = Vec::with_capacity(extents.len());
                let mut start = 0isize;
                for &e in &extents {
                    let sl = g.slice_axis(Axis(axis), Slice::from(start..start + e as isize));
                    out.push(sl.to_owned());
                    start += e as isize;
                }
                out
            })),
        )
    }

    /// Channel range `[from, to)` of a (c, h, w) array.
    pub fn slice_channels(&self, a: Var, from: usize, to: usize) -> Var {
        let value = self.with_value(a, |v| {
            v.slice_axis(Axis(0), Slice::from(from..to)).to_owned()
        });
        let full_shape = self.shape(a);
        self.push(
            value,
            vec![a.0],
            Some(Box::new(move |g, _, _| {
                let mut dx = ArrayD::<T>::zeros(IxDyn(&full_shape));
                dx.slice_axis_mut(Axis(0), Slice::from(from..to)).assign(g);
                vec![dx]
            })),
        )
    }

    /// Mean over the time axis of a (c, t, h, w) array.
    pub fn mean_time(&self, a: Var) -> Var {
        let t_len = self.shape(a)[1];
        let value = self.with_value(a, |v| v.mean_axis(Axis(1)).unwrap());
        self.push(
            value,
            vec![a.0],
            Some(Box::new(move |g, pv, _| {
                let scale = T::one() / T::of_f64(t_len as f64);
                let mut dx = ArrayD::<T>::zeros(pv[0].raw_dim());
                for mut lane in dx.axis_iter_mut(Axis(1)) {
                    lane.assign(&(g * scale));
                }
                vec![dx]
            })),
        )
    }

    /// Global average pool of a (c, h, w) array down to (c,).
    pub fn global_avg_pool(&self, a: Var) -> Var {
        let shape = self.shape(a);
        let (c, h, w) = (shape[0], shape[1], shape[2]);
        let value = self.with_value(a, |v| {
            let v3 = v.view().into_dimensionality::<Ix3>().unwrap();
            let mut out = Array1::<T>::zeros(c);
            for (i, plane) in v3.outer_iter().enumerate() {
                out[i] = plane.iter().copied().sum::<T>() / T::of_f64((h * w) as f64);
            }
            out.into_dyn()
        });
        self.push(
            value,
            vec![a.0],
            Some(Box::new(move |g, _, _| {
                let g1 = g.view().into_dimensionality::<Ix1>().unwrap();
                let scale = T::one() / T::of_f64((h * w) as f64);
                let mut dx = ArrayD::<T>::zeros(IxDyn(&[c, h, w]));
                for (i, mut plane) in dx
                    .view_mut()
                    .into_dimensionality::<Ix3>()
                    .unwrap()
                    .outer_iter_mut()
                    .enumerate()
                {
                    plane.fill(g1[i] * scale);
                }
                vec![dx]
            })),
        )
    }

    /// Multiply each channel plane of `x` (c, h, w) by the matching entry of `a` (c,).
    pub fn scale_channels(&self, x: Var, a: Var) -> Var {
        let value = {
            let xv = self.value(x).into_dimensionality::<Ix3>().unwrap();
            let av = self.value(a).into_dimensionality::<Ix1>().unwrap();
            assert_eq!(xv.shape()[0], av.len(), "scale_channels channel mismatch");
            let mut out = xv.clone();
            for (i, mut plane) in out.outer_iter_mut().enumerate() {
                plane.mapv_inplace(|v| v * av[i]);
            }
            out.into_dyn()
        };
        self.push(
            value,
            vec![x.0, a.0],
            Some(Box::new(|g, pv, _| {
                let g3 = g.view().into_dimensionality::<Ix3>().unwrap();
                let xv = pv[0].view().into_dimensionality::<Ix3>().unwrap();
                let av = pv[1].view().into_dimensionality::<Ix1>().unwrap();
                let mut dx = xv.to_owned();
                for (i, mut plane) in dx.outer_iter_mut().enumerate() {
                    let gp = g3.index_axis(Axis(0), i);
                    plane.assign(&(&gp * av[i]));
                }
                let mut da = Array1::<T>::zeros(av.len());
                for i in 0..av.len() {
                    let gp = g3.index_axis(Axis(0), i);
                    let xp = xv.index_axis(Axis(0), i);
                    da[i] = gp.iter().zip(xp.iter()).map(|(a, b)| *a * *b).sum();
                }
                vec![dx.into_dyn(), da.into_dyn()]
            })),
        )
    }

    /// Repeat a (c,) vector into `rows` identical rows.
    pub fn broadcast_rows(&self, v: Var, rows: usize) -> Var {
        let value = {
            let vv = self.value(v).into_dimensionality::<Ix1>().unwrap();
            let mut out = Array2::<T>::zeros((rows, vv.len()));
            for mut row in out.rows_mut() {
                row.assign(&vv);
            }
            out.into_dyn()
        };
        self.push(
            value,
            vec![v.0],
            Some(Box::new(|g, _, _| {
                let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
                vec![g2.sum_axis(Axis(0)).into_dyn()]
            })),
        )
    }

    /// Mean over the rows of an (l, c) array, producing (c,).
    pub fn mean_rows(&self, a: Var) -> Var {
        let rows = self.shape(a)[0];
        let value = self.with_value(a, |v| v.mean_axis(Axis(0)).unwrap());
        self.push(
            value,
            vec![a.0],
            Some(Box::new(move |g, pv, _| {
                let g1 = g.view().into_dimensionality::<Ix1>().unwrap();
                let scale = T::one() / T::of_f64(rows as f64);
                let mut dx = ArrayD::<T>::zeros(pv[0].raw_dim());
                for mut row in dx.view_mut().into_dimensionality::<Ix2>().unwrap().rows_mut() {
                    row.assign(&(&g1 * scale));
                }
                vec![dx]
            })),
        )
    }

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Var {
        let old_shape = self.shape(a);
        let value = self
            .value(a)
            .into_shape_with_order(IxDyn(shape))
            .expect("reshape element count mismatch");
        self.push(
            value,
            vec![a.0],
            Some(Box::new(move |g, _, _| {
                vec![g.clone().into_shape_with_order(IxDyn(&old_shape)).unwrap()]
            })),
        )
    }
}
