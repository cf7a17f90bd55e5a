//! PNG encoding for images and masks.
//!
//! Images in `[-1, 1]` map to 8-bit channels by `round((v + 1) / 2 · 255)`
//! with ties to even; masks map `[0, 1]` to 8-bit gray the same way. Encoding
//! is deterministic, so identical images give identical bytes.

use std::io::Cursor;
use std::path::Path;

use image::{imageops::FilterType, DynamicImage, GrayImage, ImageFormat, RgbImage};

use crate::blend::AlphaMask;
use crate::error::{Error, Result};
use crate::tensor::Image;

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round_ties_even() as u8
}

fn encode(img: DynamicImage) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)?;
    Ok(buf.into_inner())
}

pub fn image_to_rgb8(img: &Image) -> RgbImage {
    let (h, w) = (img.height(), img.width());
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let px = |c| to_u8((img.get(c, y as usize, x as usize) + 1.0) / 2.0);
        image::Rgb([px(0), px(1), px(2)])
    })
}

pub fn rgb8_to_image(rgb: &RgbImage) -> Image {
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut data = vec![0.0; 3 * h * w];
    for (x, y, p) in rgb.enumerate_pixels() {
        for c in 0..3 {
            data[(c * h + y as usize) * w + x as usize] = p[c] as f64 / 255.0 * 2.0 - 1.0;
        }
    }
    Image::new(h, w, data).expect("sizes agree by construction")
}

pub fn encode_image_png(img: &Image) -> Result<Vec<u8>> {
    encode(DynamicImage::ImageRgb8(image_to_rgb8(img)))
}

/// Decodes any PNG as RGB. Alpha is dropped.
pub fn decode_image_png(bytes: &[u8]) -> Result<Image> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?;
    Ok(rgb8_to_image(&img.to_rgb8()))
}

pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_image_png(img)?).map_err(|e| Error::io(path, e))
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    decode_image_png(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Loads a PNG and resizes it to `size × size` if needed.
pub fn load_image_resized(path: impl AsRef<Path>, size: usize) -> Result<Image> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = image::load_from_memory_with_format(&bytes, ImageFormat::Png)?;
    let rgb = if (img.width() as usize, img.height() as usize) == (size, size) {
        img.to_rgb8()
    } else {
        img.resize_exact(size as u32, size as u32, FilterType::Triangle)
            .to_rgb8()
    };
    Ok(rgb8_to_image(&rgb))
}

/// Every `*.png` in `dir`, sorted by file name, resized to `size × size`.
pub fn load_dataset(dir: impl AsRef<Path>, size: usize) -> Result<Vec<Image>> {
    let dir = dir.as_ref();
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Domain(format!("no PNG files in {}", dir.display())));
    }
    paths.iter().map(|p| load_image_resized(p, size)).collect()
}

pub fn encode_mask_png(mask: &AlphaMask) -> Result<Vec<u8>> {
    let (h, w) = mask.resolution();
    let gray = GrayImage::from_fn(w as u32, h as u32, |x, y| {
        image::Luma([to_u8(mask.get(y as usize, x as usize))])
    });
    encode(DynamicImage::ImageLuma8(gray))
}

/// Decodes a grayscale (or colour, via luma) PNG into a mask.
pub fn decode_mask_png(bytes: &[u8]) -> Result<AlphaMask> {
    let gray = image::load_from_memory_with_format(bytes, ImageFormat::Png)?.to_luma8();
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    AlphaMask::new(h, w, gray.pixels().map(|p| p[0] as f64 / 255.0).collect())
}

pub fn save_mask(mask: &AlphaMask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_mask_png(mask)?).map_err(|e| Error::io(path, e))
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<AlphaMask> {
    let path = path.as_ref();
    decode_mask_png(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantised_images_round_trip_exactly() {
        let img = Image::new(
            2,
            3,
            (0..18)
                .map(|i| (i as f64 * 37.0 % 255.0) / 255.0 * 2.0 - 1.0)
                .collect(),
        )
        .unwrap();
        let bytes = encode_image_png(&img).unwrap();
        let back = decode_image_png(&bytes).unwrap();
        assert_eq!(encode_image_png(&back).unwrap(), bytes);
        for (a, b) in back.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn pixel_mapping() {
        let img = Image::new(1, 1, vec![-1.0, 0.0, 1.0]).unwrap();
        let rgb = image_to_rgb8(&img);
        // 127.5 rounds to even
        assert_eq!(rgb.get_pixel(0, 0).0, [0, 128, 255]);
    }

    #[test]
    fn masks_round_trip_at_8_bits() {
        let m = AlphaMask::from_fn(4, 5, |y, x| ((y * 5 + x) * 13 % 256) as f64 / 255.0).unwrap();
        let bytes = encode_mask_png(&m).unwrap();
        let back = decode_mask_png(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(encode_mask_png(&back).unwrap(), bytes);
        let full = AlphaMask::constant(3, 3, 1.0).unwrap();
        let raster = image::load_from_memory(&encode_mask_png(&full).unwrap())
            .unwrap()
            .to_luma8();
        assert!(raster.pixels().all(|p| p[0] == 255));
    }
}
