//! PNG load/save for [`ImageTensor`].
//!
//! Only 8-bit RGB PNGs are accepted. Saving rounds half away from zero, so
//! `load(save(x)) == x.rounded()`.

use std::path::Path;

use image::{ColorType, ImageFormat, RgbImage};
use thiserror::Error;

use crate::tensor::{ImageTensor, TensorError};

#[derive(Debug, Error)]
pub enum ImageIoError {
    #[error("cannot read image {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: image::ImageError,
    },
    #[error("cannot write image {path}: {source}")]
    Write {
        path: String,
        #[source]
        source: image::ImageError,
    },
    #[error("{path}: expected 8-bit RGB, found {color:?}")]
    UnsupportedColor { path: String, color: ColorType },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub fn load_image(path: impl AsRef<Path>) -> Result<ImageTensor, ImageIoError> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let img = image::open(path).map_err(|source| ImageIoError::Read {
        path: display.clone(),
        source,
    })?;
    match img.color() {
        ColorType::Rgb8 => {}
        color => return Err(ImageIoError::UnsupportedColor { path: display, color }),
    }
    let rgb = img.into_rgb8();
    let (w, h) = rgb.dimensions();
    Ok(ImageTensor::from_rgb8(h as usize, w as usize, rgb.as_raw())?)
}

pub fn save_image(image: &ImageTensor, path: impl AsRef<Path>) -> Result<(), ImageIoError> {
    let path = path.as_ref();
    let buf = RgbImage::from_raw(image.width() as u32, image.height() as u32, image.to_rgb8())
        .expect("buffer length matches image shape");
    buf.save_with_format(path, ImageFormat::Png)
        .map_err(|source| ImageIoError::Write {
            path: path.display().to_string(),
            source,
        })
}
