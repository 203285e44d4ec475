//! im2col lowering shared by `conv2d` and `conv2d_transpose`.
//!
//! Column matrices are laid out `[channels·kh·kw, batch·out_h·out_w]`, row-major.

use serde::{Deserialize, Serialize};

/// Stride and zero padding of a 2D convolution (square, same for both axes).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: usize,
}

/// Transposed convolution parameters. `output_padding` adds rows/columns to the
/// bottom/right of the output so an odd-sized encoder input can be mirrored.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvTransposeSpec {
    pub stride: usize,
    pub padding: usize,
    pub output_padding: (usize, usize),
}

/// Output extent of a strided convolution, or `None` when the kernel does not fit.
pub fn conv_out_len(input: usize, kernel: usize, spec: ConvSpec) -> Option<usize> {
    let padded = input + 2 * spec.padding;
    if spec.stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / spec.stride + 1)
}

/// Output extent of a transposed convolution, or `None` when it would be empty.
pub fn conv_transpose_out_len(input: usize, kernel: usize, stride: usize, padding: usize, output_padding: usize) -> Option<usize> {
    if input == 0 {
        return None;
    }
    ((input - 1) * stride + kernel + output_padding).checked_sub(2 * padding).filter(|&n| n > 0)
}

/// Geometry of one im2col lowering: an image of `channels × in_h × in_w`
/// scanned by a `kh × kw` kernel producing `out_h × out_w` positions.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Lowering {
    pub batch: usize,
    pub channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Lowering {
    pub fn col_rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    pub fn col_cols(&self) -> usize {
        self.batch * self.out_h * self.out_w
    }

    /// Input coordinate along one axis, or `None` when it falls in the padding.
    #[inline]
    fn source(out: usize, k: usize, stride: usize, padding: usize, extent: usize) -> Option<usize> {
        let pos = (out * stride + k).checked_sub(padding)?;
        (pos < extent).then_some(pos)
    }

    /// Image `[batch, channels, in_h, in_w]` → columns.
    pub fn im2col(&self, image: &[f32]) -> Vec<f32> {
        let plane = self.in_h * self.in_w;
        let positions = self.out_h * self.out_w;
        let ncols = self.col_cols();
        let mut cols = vec![0.0f32; self.col_rows() * ncols];
        for c in 0..self.channels {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let dst_row = &mut cols[row * ncols..(row + 1) * ncols];
                    for n in 0..self.batch {
                        let src = &image[(n * self.channels + c) * plane..][..plane];
                        let dst = &mut dst_row[n * positions..(n + 1) * positions];
                        for oy in 0..self.out_h {
                            let Some(iy) = Self::source(oy, ki, self.stride, self.padding, self.in_h) else {
                                continue;
                            };
                            for ox in 0..self.out_w {
                                if let Some(ix) = Self::source(ox, kj, self.stride, self.padding, self.in_w) {
                                    dst[oy * self.out_w + ox] = src[iy * self.in_w + ix];
                                }
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    /// Columns → image, accumulating overlapping contributions.
    pub fn col2im(&self, cols: &[f32]) -> Vec<f32> {
        let plane = self.in_h * self.in_w;
        let positions = self.out_h * self.out_w;
        let ncols = self.col_cols();
        let mut image = vec![0.0f32; self.batch * self.channels * plane];
        for c in 0..self.channels {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let src_row = &cols[row * ncols..(row + 1) * ncols];
                    for n in 0..self.batch {
                        let dst = &mut image[(n * self.channels + c) * plane..][..plane];
                        let src = &src_row[n * positions..(n + 1) * positions];
                        for oy in 0..self.out_h {
                            let Some(iy) = Self::source(oy, ki, self.stride, self.padding, self.in_h) else {
                                continue;
                            };
                            for ox in 0..self.out_w {
                                if let Some(ix) = Self::source(ox, kj, self.stride, self.padding, self.in_w) {
                                    dst[iy * self.in_w + ix] += src[oy * self.out_w + ox];
                                }
                            }
                        }
                    }
                }
            }
        }
        image
    }
}

/// `[batch, channels, plane]` → `[channels, batch·plane]`.
pub(crate) fn batch_to_channel_major(x: &[f32], batch: usize, channels: usize, plane: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; x.len()];
    for n in 0..batch {
        for c in 0..channels {
            let src = &x[(n * channels + c) * plane..][..plane];
            out[(c * batch + n) * plane..][..plane].copy_from_slice(src);
        }
    }
    out
}

/// `[channels, batch·plane]` → `[batch, channels, plane]`.
pub(crate) fn channel_to_batch_major(x: &[f32], batch: usize, channels: usize, plane: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; x.len()];
    for c in 0..channels {
        for n in 0..batch {
            let src = &x[(c * batch + n) * plane..][..plane];
            out[(n * channels + c) * plane..][..plane].copy_from_slice(src);
        }
    }
    out
}
