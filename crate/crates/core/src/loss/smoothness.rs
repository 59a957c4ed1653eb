//! Edge-aware smoothness: disparity gradients are penalized less across
//! image edges. Forward differences, zero at the last column/row.

use crate::elem::Elem;
use crate::error::{Error, Result};
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Forward difference along the width axis of `[H,W]`, zero-padded at the
/// last column.
fn diff_x<E: Elem>(tape: &Tape<E>, t: &Tensor<E>) -> Result<Tensor<E>> {
    let (h, w) = (t.shape()[0], t.shape()[1]);
    let a = tape.narrow(t, 1, 1, w - 1)?;
    let b = tape.narrow(t, 1, 0, w - 1)?;
    let d = tape.sub(&a, &b)?;
    let pad = Tensor::<E>::zeros(vec![h, 1]);
    tape.concat(&[&d, &pad], 1)
}

fn diff_y<E: Elem>(tape: &Tape<E>, t: &Tensor<E>) -> Result<Tensor<E>> {
    let (h, w) = (t.shape()[0], t.shape()[1]);
    let a = tape.narrow(t, 0, 1, h - 1)?;
    let b = tape.narrow(t, 0, 0, h - 1)?;
    let d = tape.sub(&a, &b)?;
    let pad = Tensor::<E>::zeros(vec![1, w]);
    tape.concat(&[&d, &pad], 0)
}

/// Channel-mean absolute forward difference of an image along `axis`
/// (2 = x, 1 = y), zero-padded like the disparity difference.
fn image_grad<E: Elem>(tape: &Tape<E>, img: &Tensor<E>, horizontal: bool) -> Result<Tensor<E>> {
    let (c, h, w) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    let (axis, keep) = if horizontal { (2, w - 1) } else { (1, h - 1) };
    let a = tape.narrow(img, axis, 1, keep)?;
    let b = tape.narrow(img, axis, 0, keep)?;
    let d = tape.abs(&tape.sub(&a, &b)?);
    let m = tape.mean_axis(&d, 0, false)?;
    let _ = c;
    if horizontal {
        let pad = Tensor::<E>::zeros(vec![h, 1]);
        tape.concat(&[&m, &pad], 1)
    } else {
        let pad = Tensor::<E>::zeros(vec![1, w]);
        tape.concat(&[&m, &pad], 0)
    }
}

/// `mean(|dx D| exp(-|dx I|) + |dy D| exp(-|dy I|))` with image gradients
/// averaged over channels.
pub fn smoothness_loss<E: Elem>(tape: &Tape<E>, disparity: &Tensor<E>, image: &Tensor<E>) -> Result<Tensor<E>> {
    if disparity.shape().len() != 2 || image.shape().len() != 3 {
        return Err(Error::shape(
            "smoothness_loss",
            format!("disparity {:?}, image {:?}", disparity.shape(), image.shape()),
        ));
    }
    if image.shape()[1] != disparity.shape()[0] || image.shape()[2] != disparity.shape()[1] {
        return Err(Error::shape(
            "smoothness_loss",
            format!("image {:?} vs disparity {:?}", image.shape(), disparity.shape()),
        ));
    }
    let dx = tape.abs(&diff_x(tape, disparity)?);
    let dy = tape.abs(&diff_y(tape, disparity)?);
    let wx = tape.exp(&tape.neg(&image_grad(tape, image, true)?));
    let wy = tape.exp(&tape.neg(&image_grad(tape, image, false)?));
    let term = tape.add(&tape.mul(&dx, &wx)?, &tape.mul(&dy, &wy)?)?;
    Ok(tape.mean_all(&term))
}
