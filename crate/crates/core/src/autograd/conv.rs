use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Resolved extents of one convolution call.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn infer(input: &[usize], weight: &[usize], stride: usize, padding: usize) -> Result<Self> {
        if input.len() != 4 || weight.len() != 4 || input[1] != weight[1] || stride == 0 {
            return Err(Error::dim("conv2d", input, weight));
        }
        let (kh, kw) = (weight[2], weight[3]);
        let (ph, pw) = (input[2] + 2 * padding, input[3] + 2 * padding);
        if kh > ph || kw > pw {
            return Err(Error::dim("conv2d", input, weight));
        }
        Ok(ConvGeometry {
            batch: input[0],
            in_channels: input[1],
            out_channels: weight[0],
            height: input[2],
            width: input[3],
            kernel_h: kh,
            kernel_w: kw,
            stride,
            padding,
            out_h: (ph - kh) / stride + 1,
            out_w: (pw - kw) / stride + 1,
        })
    }

    pub fn output_shape(&self) -> [usize; 4] {
        [self.batch, self.out_channels, self.out_h, self.out_w]
    }

    /// Calls `f(out_index, in_index, weight_index)` for every tap that lands
    /// inside the unpadded input.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let g = self;
        for b in 0..g.batch {
            for co in 0..g.out_channels {
                for oy in 0..g.out_h {
                    for ox in 0..g.out_w {
                        let out_idx = ((b * g.out_channels + co) * g.out_h + oy) * g.out_w + ox;
                        for ci in 0..g.in_channels {
                            for ky in 0..g.kernel_h {
                                let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                                if iy < 0 || iy >= g.height as isize {
                                    continue;
                                }
                                for kx in 0..g.kernel_w {
                                    let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                                    if ix < 0 || ix >= g.width as isize {
                                        continue;
                                    }
                                    let in_idx = ((b * g.in_channels + ci) * g.height + iy as usize)
                                        * g.width
                                        + ix as usize;
                                    let w_idx = ((co * g.in_channels + ci) * g.kernel_h + ky) * g.kernel_w + kx;
                                    f(out_idx, in_idx, w_idx);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(super) fn forward<T: Scalar>(
    geom: &ConvGeometry,
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Tensor<T> {
    let shape = geom.output_shape();
    let plane = geom.out_h * geom.out_w;
    let mut out: Vec<T> = match bias {
        Some(b) => (0..shape.iter().product::<usize>())
            .map(|i| b.data()[(i / plane) % geom.out_channels])
            .collect(),
        None => vec![T::zero(); shape.iter().product()],
    };
    let (x, w) = (input.data(), weight.data());
    geom.for_each_tap(|o, i, k| out[o] = out[o] + x[i] * w[k]);
    Tensor::new(shape.to_vec(), out).expect("conv output shape")
}

pub(super) fn backward<T: Scalar>(
    geom: &ConvGeometry,
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let mut gi = vec![T::zero(); input.numel()];
    let mut gw = vec![T::zero(); weight.numel()];
    let (x, w, g) = (input.data(), weight.data(), grad.data());
    geom.for_each_tap(|o, i, k| {
        gi[i] = gi[i] + g[o] * w[k];
        gw[k] = gw[k] + g[o] * x[i];
    });
    let plane = geom.out_h * geom.out_w;
    let mut gb = vec![T::zero(); geom.out_channels];
    for (o, &v) in g.iter().enumerate() {
        let c = (o / plane) % geom.out_channels;
        gb[c] = gb[c] + v;
    }
    (
        Tensor::new(input.shape().to_vec(), gi).expect("input grad shape"),
        Tensor::new(weight.shape().to_vec(), gw).expect("weight grad shape"),
        Tensor::vector(gb),
    )
}
