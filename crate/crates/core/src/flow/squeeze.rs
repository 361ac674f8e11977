//! Space-to-channel rearrangement. Each spatial axis of even extent is folded
//! by 2; axes of extent 1 are left alone. Output channel `c·fh·fw + i·fw + j`
//! holds input pixel `(y·fh + i, x·fw + j)` of channel `c`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Fold factors `(fh, fw)` for a `(C, H, W)` sample shape.
pub fn factors(shape: [usize; 3]) -> Result<(usize, usize)> {
    let f = |d: usize, axis: &str| match d {
        1 => Ok(1),
        d if d % 2 == 0 => Ok(2),
        d => Err(Error::Shape(format!("cannot squeeze odd {axis} extent {d}"))),
    };
    Ok((f(shape[1], "height")?, f(shape[2], "width")?))
}

pub fn squeeze(x: &Tensor, fh: usize, fw: usize) -> Tensor {
    if fh == 1 && fw == 1 {
        return x.clone();
    }
    let [n, c, h, w] = x.shape();
    let (ho, wo) = (h / fh, w / fw);
    let co = c * fh * fw;
    let mut y = Tensor::zeros([n, co, ho, wo]);
    let src = x.data();
    let dst = y.data_mut();
    for s in 0..n {
        for ch in 0..c {
            for a in 0..h {
                for b in 0..w {
                    let oc = ch * fh * fw + (a % fh) * fw + (b % fw);
                    dst[((s * co + oc) * ho + a / fh) * wo + b / fw] =
                        src[((s * c + ch) * h + a) * w + b];
                }
            }
        }
    }
    y
}

pub fn unsqueeze(y: &Tensor, fh: usize, fw: usize) -> Tensor {
    if fh == 1 && fw == 1 {
        return y.clone();
    }
    let [n, co, ho, wo] = y.shape();
    let c = co / (fh * fw);
    let (h, w) = (ho * fh, wo * fw);
    let mut x = Tensor::zeros([n, c, h, w]);
    let src = y.data();
    let dst = x.data_mut();
    for s in 0..n {
        for ch in 0..c {
            for a in 0..h {
                for b in 0..w {
                    let oc = ch * fh * fw + (a % fh) * fw + (b % fw);
                    dst[((s * c + ch) * h + a) * w + b] =
                        src[((s * co + oc) * ho + a / fh) * wo + b / fw];
                }
            }
        }
    }
    x
}
