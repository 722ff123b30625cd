//! Raw forward/backward kernels on flat row-major buffers.

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub groups: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    fn cin_g(&self) -> usize {
        self.cin / self.groups
    }

    fn cout_g(&self) -> usize {
        self.cout / self.groups
    }

    pub fn out_len(&self) -> usize {
        self.n * self.cout * self.oh * self.ow
    }
}

pub(crate) fn conv2d_forward(g: &ConvGeom, x: &[f64], k: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; g.out_len()];
    let (cin_g, cout_g) = (g.cin_g(), g.cout_g());
    for n in 0..g.n {
        for co in 0..g.cout {
            let grp = co / cout_g;
            let obase = ((n * g.cout) + co) * g.oh * g.ow;
            for ci in 0..cin_g {
                let c_in = grp * cin_g + ci;
                let xbase = ((n * g.cin) + c_in) * g.h * g.w;
                for i in 0..g.kh {
                    for j in 0..g.kw {
                        let wv = k[((co * cin_g + ci) * g.kh + i) * g.kw + j];
                        for oy in 0..g.oh {
                            let xrow = xbase + (oy * g.sh + i) * g.w + j;
                            let orow = &mut out[obase + oy * g.ow..obase + (oy + 1) * g.ow];
                            if g.sw == 1 {
                                let xs = &x[xrow..xrow + g.ow];
                                for (o, xv) in orow.iter_mut().zip(xs) {
                                    *o += wv * xv;
                                }
                            } else {
                                for (ox, o) in orow.iter_mut().enumerate() {
                                    *o += wv * x[xrow + ox * g.sw];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Returns (grad_input, grad_kernel).
pub(crate) fn conv2d_backward(
    g: &ConvGeom,
    x: &[f64],
    k: &[f64],
    dy: &[f64],
    need_dx: bool,
    need_dk: bool,
) -> (Vec<f64>, Vec<f64>) {
    let mut dx = if need_dx { vec![0.0; x.len()] } else { Vec::new() };
    let mut dk = if need_dk { vec![0.0; k.len()] } else { Vec::new() };
    let (cin_g, cout_g) = (g.cin_g(), g.cout_g());
    for n in 0..g.n {
        for co in 0..g.cout {
            let grp = co / cout_g;
            let obase = ((n * g.cout) + co) * g.oh * g.ow;
            for ci in 0..cin_g {
                let c_in = grp * cin_g + ci;
                let xbase = ((n * g.cin) + c_in) * g.h * g.w;
                for i in 0..g.kh {
                    for j in 0..g.kw {
                        let kidx = ((co * cin_g + ci) * g.kh + i) * g.kw + j;
                        let wv = k[kidx];
                        let mut acc = 0.0;
                        for oy in 0..g.oh {
                            let xrow = xbase + (oy * g.sh + i) * g.w + j;
                            let dyrow = &dy[obase + oy * g.ow..obase + (oy + 1) * g.ow];
                            for (ox, d) in dyrow.iter().enumerate() {
                                let xi = xrow + ox * g.sw;
                                if need_dk {
                                    acc += d * x[xi];
                                }
                                if need_dx {
                                    dx[xi] += wv * d;
                                }
                            }
                        }
                        if need_dk {
                            dk[kidx] += acc;
                        }
                    }
                }
            }
        }
    }
    (dx, dk)
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct PoolGeom {
    pub planes: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub oh: usize,
    pub ow: usize,
}

pub(crate) fn avg_pool_forward(g: &PoolGeom, x: &[f64]) -> Vec<f64> {
    let inv = 1.0 / (g.kh * g.kw) as f64;
    let mut out = vec![0.0; g.planes * g.oh * g.ow];
    for p in 0..g.planes {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let mut s = 0.0;
                for i in 0..g.kh {
                    let row = (p * g.h + oy * g.sh + i) * g.w + ox * g.sw;
                    s += x[row..row + g.kw].iter().sum::<f64>();
                }
                out[(p * g.oh + oy) * g.ow + ox] = s * inv;
            }
        }
    }
    out
}

pub(crate) fn avg_pool_backward(g: &PoolGeom, dy: &[f64]) -> Vec<f64> {
    let inv = 1.0 / (g.kh * g.kw) as f64;
    let mut dx = vec![0.0; g.planes * g.h * g.w];
    for p in 0..g.planes {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let d = dy[(p * g.oh + oy) * g.ow + ox] * inv;
                for i in 0..g.kh {
                    let row = (p * g.h + oy * g.sh + i) * g.w + ox * g.sw;
                    for v in &mut dx[row..row + g.kw] {
                        *v += d;
                    }
                }
            }
        }
    }
    dx
}

/// `c[m,n] += a[m,k] * b[k,n]` with optional transposes given as
/// (row stride, col stride) pairs for `a` and `b`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_acc(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_rs: usize,
    a_cs: usize,
    b: &[f64],
    b_rs: usize,
    b_cs: usize,
    c: &mut [f64],
) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * a_rs + p * a_cs];
            if av == 0.0 {
                continue;
            }
            if b_cs == 1 {
                let brow = &b[p * b_rs..p * b_rs + n];
                for (cv, bv) in crow.iter_mut().zip(brow) {
                    *cv += av * bv;
                }
            } else {
                for (j, cv) in crow.iter_mut().enumerate() {
                    *cv += av * b[p * b_rs + j * b_cs];
                }
            }
        }
    }
}

/// Splits `shape` around `axis` into (outer, axis extent, inner).
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn softmax_forward(x: &[f64], outer: usize, len: usize, inner: usize) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    for o in 0..outer {
        for q in 0..inner {
            let at = |i: usize| (o * len + i) * inner + q;
            let max = (0..len).map(|i| x[at(i)]).fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for i in 0..len {
                let e = (x[at(i)] - max).exp();
                y[at(i)] = e;
                s += e;
            }
            for i in 0..len {
                y[at(i)] /= s;
            }
        }
    }
    y
}

pub(crate) fn softmax_backward(y: &[f64], dy: &[f64], outer: usize, len: usize, inner: usize) -> Vec<f64> {
    let mut dx = vec![0.0; y.len()];
    for o in 0..outer {
        for q in 0..inner {
            let at = |i: usize| (o * len + i) * inner + q;
            let dot: f64 = (0..len).map(|i| dy[at(i)] * y[at(i)]).sum();
            for i in 0..len {
                dx[at(i)] = y[at(i)] * (dy[at(i)] - dot);
            }
        }
    }
    dx
}

/// Normalization backward shared by batch and layer norm in training mode:
/// `dx = inv_std/m * (m*dxh - sum(dxh) - xhat*sum(dxh*xhat))` over each group.
pub(crate) fn norm_backward_group(dxhat: &[f64], xhat: &[f64], inv_std: f64) -> Vec<f64> {
    let m = dxhat.len() as f64;
    let s1: f64 = dxhat.iter().sum();
    let s2: f64 = dxhat.iter().zip(xhat).map(|(a, b)| a * b).sum();
    dxhat.iter().zip(xhat).map(|(d, xh)| inv_std / m * (m * d - s1 - xh * s2)).collect()
}
