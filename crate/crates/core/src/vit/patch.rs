use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Splits an `H x W x C` image into row-major patches, each flattened
/// row-major: output is `[N, patch^2 * C]`.
pub fn patchify(image: &Tensor, patch: usize) -> Result<Tensor> {
    let &[h, w, c] = image.shape() else {
        return Err(Error::shape(format!(
            "patchify expects [H, W, C], got {:?}",
            image.shape()
        )));
    };
    if patch == 0 || h != w || h % patch != 0 {
        return Err(Error::shape(format!(
            "cannot cut {h}x{w} image into {patch}x{patch} patches"
        )));
    }
    let side = h / patch;
    let mut out = Vec::with_capacity(image.numel());
    for pr in 0..side {
        for pc in 0..side {
            for r in 0..patch {
                let start = ((pr * patch + r) * w + pc * patch) * c;
                out.extend_from_slice(&image.data()[start..start + patch * c]);
            }
        }
    }
    Tensor::new(vec![side * side, patch * patch * c], out)
}

/// Inverse of [`patchify`].
pub fn unpatchify(patches: &Tensor, patch: usize, channels: usize) -> Result<Tensor> {
    let &[n, width] = patches.shape() else {
        return Err(Error::shape(format!(
            "unpatchify expects [N, P], got {:?}",
            patches.shape()
        )));
    };
    let side = n.isqrt();
    if side * side != n || width != patch * patch * channels {
        return Err(Error::shape(format!(
            "{:?} is not a square grid of {patch}x{patch}x{channels} patches",
            patches.shape()
        )));
    }
    let h = side * patch;
    let mut out = vec![0.0; h * h * channels];
    for (i, row) in patches.rows().enumerate() {
        let (pr, pc) = (i / side, i % side);
        for r in 0..patch {
            let start = ((pr * patch + r) * h + pc * patch) * channels;
            out[start..start + patch * channels]
                .copy_from_slice(&row[r * patch * channels..(r + 1) * patch * channels]);
        }
    }
    Tensor::new(vec![h, h, channels], out)
}

/// `[B, H, W, C]` images to `[B, N, patch^2 * C]`.
pub fn patchify_batch(batch: &Tensor, patch: usize) -> Result<Tensor> {
    let &[b, h, w, c] = batch.shape() else {
        return Err(Error::shape(format!(
            "expected [B, H, W, C] batch, got {:?}",
            batch.shape()
        )));
    };
    let per_image = h * w * c;
    let mut out = Vec::with_capacity(batch.numel());
    let mut shape = Vec::new();
    for img in batch.data().chunks(per_image) {
        let t = patchify(&Tensor::new(vec![h, w, c], img.to_vec())?, patch)?;
        shape = t.shape().to_vec();
        out.extend(t.into_data());
    }
    Tensor::new([vec![b], shape].concat(), out)
}

/// Moves patch `i` of `image` to grid position `perm[i]`; pixels inside a
/// patch keep their arrangement.
pub fn permute_patches(image: &Tensor, patch: usize, perm: &[usize]) -> Result<Tensor> {
    let channels = *image.shape().last().unwrap_or(&1);
    let patches = patchify(image, patch)?;
    let n = patches.shape()[0];
    if perm.len() != n {
        return Err(Error::shape(format!(
            "permutation of {} entries for {n} patches",
            perm.len()
        )));
    }
    let width = patches.shape()[1];
    let mut moved = vec![0.0; patches.numel()];
    for (i, row) in patches.rows().enumerate() {
        moved[perm[i] * width..(perm[i] + 1) * width].copy_from_slice(row);
    }
    unpatchify(&Tensor::new(vec![n, width], moved)?, patch, channels)
}
