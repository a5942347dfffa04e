use super::{Image, TensorError};

/// Value returned by [`psnr`] for identical images.
pub const PSNR_CAP_DB: f64 = 300.0;

/// Mean squared error over every channel and pixel jointly.
pub fn mse(x: &Image, reference: &Image) -> Result<f64, TensorError> {
    if x.shape() != reference.shape() {
        return Err(TensorError::ShapeMismatch {
            expected: reference.shape(),
            found: x.shape(),
        });
    }
    let sum: f64 = x
        .as_slice()
        .iter()
        .zip(reference.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / x.len() as f64)
}

/// PSNR in dB with peak value 1, capped at [`PSNR_CAP_DB`].
pub fn psnr(x: &Image, reference: &Image) -> Result<f64, TensorError> {
    let err = mse(x, reference)?;
    if err == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / err).log10()).min(PSNR_CAP_DB))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn identical_images_hit_the_cap() {
        let x = Image::filled(Shape::gray(3, 3), 0.3);
        assert_eq!(psnr(&x, &x).unwrap(), PSNR_CAP_DB);
    }

    #[test]
    fn constant_offsets() {
        let s = Shape::gray(5, 7);
        let a = Image::filled(s, 0.1);
        let b = Image::zeros(s);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-12);

        let x = Image::from_fn(s, |_, i, j| (i + j) as f64 / 20.0);
        let shifted = x.offset(0.5);
        assert!((psnr(&x, &shifted).unwrap() - 6.020599913279624).abs() < 1e-12);
    }

    #[test]
    fn symmetric_and_shape_checked() {
        let s = Shape::new(3, 4, 4).unwrap();
        let a = Image::from_fn(s, |c, i, j| ((c + 2 * i + 3 * j) % 7) as f64 / 7.0);
        let b = Image::from_fn(s, |c, i, j| ((5 * c + i + j) % 5) as f64 / 5.0);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        assert!(psnr(&a, &Image::zeros(Shape::gray(4, 4))).is_err());
    }
}
