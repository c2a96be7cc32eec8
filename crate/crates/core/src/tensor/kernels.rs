//! Raw slice kernels behind the tape operators.

/// Geometry of a square-kernel 2-D convolution over a (C, H, W) input.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub in_c: usize,
    pub out_c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.pad - self.k) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pad - self.k) / self.stride + 1
    }

    /// Output index range along one axis for which `o * stride + kk - pad`
    /// lands inside `[0, len)`.
    fn valid_range(&self, kk: usize, len: usize, out_len: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let off = kk as isize - self.pad as isize;
        // smallest o with o*s + off >= 0
        let lo = if off >= 0 { 0 } else { (-off + s - 1) / s };
        // largest o with o*s + off <= len - 1
        let hi_num = len as isize - 1 - off;
        if hi_num < 0 {
            return (0, 0);
        }
        let hi = (hi_num / s).min(out_len as isize - 1);
        if hi < lo {
            (0, 0)
        } else {
            (lo as usize, hi as usize + 1)
        }
    }
}

/// Direct cross-correlation: `out[o] = b[o] + sum_c sum_k w[o,c,k] * x[c, shifted]`.
pub fn conv2d_forward(
    x: &[f64],
    weight: &[f64],
    bias: &[f64],
    in_c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> Vec<f64> {
    let g = ConvGeom {
        in_c,
        out_c: bias.len(),
        h,
        w,
        k,
        stride,
        pad,
    };
    conv_fwd(&g, x, weight, bias)
}

pub(crate) fn conv_fwd(g: &ConvGeom, x: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let plane = oh * ow;
    let mut out = vec![0.0; g.out_c * plane];
    for o in 0..g.out_c {
        let out_o = &mut out[o * plane..(o + 1) * plane];
        out_o.fill(bias[o]);
        for c in 0..g.in_c {
            let xc = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
            for ky in 0..g.k {
                let (y0, y1) = g.valid_range(ky, g.h, oh);
                for kx in 0..g.k {
                    let wv = weight[((o * g.in_c + c) * g.k + ky) * g.k + kx];
                    let (x0, x1) = g.valid_range(kx, g.w, ow);
                    if x0 >= x1 {
                        continue;
                    }
                    for oy in y0..y1 {
                        let iy = oy * g.stride + ky - g.pad;
                        let xrow = &xc[iy * g.w..(iy + 1) * g.w];
                        let orow = &mut out_o[oy * ow..(oy + 1) * ow];
                        if g.stride == 1 {
                            let ix0 = x0 + kx - g.pad;
                            for (ov, xv) in orow[x0..x1].iter_mut().zip(&xrow[ix0..]) {
                                *ov += wv * xv;
                            }
                        } else {
                            for ox in x0..x1 {
                                orow[ox] += wv * xrow[ox * g.stride + kx - g.pad];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradients of the convolution w.r.t. input, weight and bias.
pub(crate) fn conv_bwd(
    g: &ConvGeom,
    x: &[f64],
    weight: &[f64],
    gout: &[f64],
    gx: Option<&mut [f64]>,
    gw: Option<&mut [f64]>,
    gb: Option<&mut [f64]>,
) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let plane = oh * ow;
    if let Some(gb) = gb {
        for o in 0..g.out_c {
            gb[o] += gout[o * plane..(o + 1) * plane].iter().sum::<f64>();
        }
    }
    let mut gx = gx;
    let mut gw = gw;
    for o in 0..g.out_c {
        let go = &gout[o * plane..(o + 1) * plane];
        for c in 0..g.in_c {
            let base = c * g.h * g.w;
            for ky in 0..g.k {
                let (y0, y1) = g.valid_range(ky, g.h, oh);
                for kx in 0..g.k {
                    let widx = ((o * g.in_c + c) * g.k + ky) * g.k + kx;
                    let wv = weight[widx];
                    let (x0, x1) = g.valid_range(kx, g.w, ow);
                    let mut acc = 0.0;
                    for oy in y0..y1 {
                        let iy = oy * g.stride + ky - g.pad;
                        let grow = &go[oy * ow..(oy + 1) * ow];
                        let row = base + iy * g.w;
                        for ox in x0..x1 {
                            let ix = ox * g.stride + kx - g.pad;
                            let gv = grow[ox];
                            acc += gv * x[row + ix];
                            if let Some(gx) = gx.as_deref_mut() {
                                gx[row + ix] += wv * gv;
                            }
                        }
                    }
                    if let Some(gw) = gw.as_deref_mut() {
                        gw[widx] += acc;
                    }
                }
            }
        }
    }
}

/// 2x2 average pooling. Odd heights/widths are replicate-padded by one.
pub fn down2_forward(x: &[f64], c: usize, h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        let xc = &x[ch * h * w..(ch + 1) * h * w];
        for oy in 0..oh {
            let ya = 2 * oy;
            let yb = (2 * oy + 1).min(h - 1);
            for ox in 0..ow {
                let xa = 2 * ox;
                let xb = (2 * ox + 1).min(w - 1);
                let s = xc[ya * w + xa] + xc[ya * w + xb] + xc[yb * w + xa] + xc[yb * w + xb];
                out[(ch * oh + oy) * ow + ox] = 0.25 * s;
            }
        }
    }
    (out, oh, ow)
}

pub(crate) fn down2_backward(gout: &[f64], gx: &mut [f64], c: usize, h: usize, w: usize) {
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    for ch in 0..c {
        let base = ch * h * w;
        for oy in 0..oh {
            let ya = 2 * oy;
            let yb = (2 * oy + 1).min(h - 1);
            for ox in 0..ow {
                let xa = 2 * ox;
                let xb = (2 * ox + 1).min(w - 1);
                let g = 0.25 * gout[(ch * oh + oy) * ow + ox];
                gx[base + ya * w + xa] += g;
                gx[base + ya * w + xb] += g;
                gx[base + yb * w + xa] += g;
                gx[base + yb * w + xb] += g;
            }
        }
    }
}

/// Source taps of bilinear x2 upsampling (half-pixel centers, edge clamped).
fn up2_taps(out_len: usize, in_len: usize) -> Vec<(usize, usize, f64)> {
    (0..out_len)
        .map(|o| {
            let s = ((o as f64 + 0.5) * 0.5 - 0.5).max(0.0);
            let i0 = (s.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

/// Bilinear x2 upsampling, align-corners false.
pub fn up2_forward(x: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (2 * h, 2 * w);
    let ty = up2_taps(oh, h);
    let tx = up2_taps(ow, w);
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        let xc = &x[ch * h * w..(ch + 1) * h * w];
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let top = xc[y0 * w + x0] * (1.0 - lx) + xc[y0 * w + x1] * lx;
                let bot = xc[y1 * w + x0] * (1.0 - lx) + xc[y1 * w + x1] * lx;
                out[(ch * oh + oy) * ow + ox] = top * (1.0 - ly) + bot * ly;
            }
        }
    }
    out
}

pub(crate) fn up2_backward(gout: &[f64], gx: &mut [f64], c: usize, h: usize, w: usize) {
    let (oh, ow) = (2 * h, 2 * w);
    let ty = up2_taps(oh, h);
    let tx = up2_taps(ow, w);
    for ch in 0..c {
        let base = ch * h * w;
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let g = gout[(ch * oh + oy) * ow + ox];
                gx[base + y0 * w + x0] += g * (1.0 - ly) * (1.0 - lx);
                gx[base + y0 * w + x1] += g * (1.0 - ly) * lx;
                gx[base + y1 * w + x0] += g * ly * (1.0 - lx);
                gx[base + y1 * w + x1] += g * ly * lx;
            }
        }
    }
}
