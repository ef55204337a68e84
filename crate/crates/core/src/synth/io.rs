//! Dataset layout on disk:
//!
//! ```text
//! <root>/<clip>/frames/00000.png   RGB, 8 bit
//! <root>/<clip>/flows/00000.png    encoded flow, RGB, 16 bit
//! <root>/<clip>/masks/00000.pgm    0 or 255
//! <root>/<clip>/clip.json          metadata, optional when loading
//! ```
//!
//! Loading accepts PNG and PNM at any bit depth for all three, so real
//! sequences with precomputed flow images can use the same layout.

use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, ImageBuffer, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::metrics::BinaryMask;
use crate::synth::{ClipMeta, VideoClip};
use crate::tensor::{Shape, Tensor};

const IMAGE_EXTENSIONS: [&str; 5] = ["png", "ppm", "pgm", "pnm", "pbm"];

fn image_error(path: &Path, source: image::ImageError) -> Error {
    Error::Image { path: path.to_path_buf(), source }
}

fn quantize(v: f32, max: f32) -> f32 {
    (v.clamp(0.0, 1.0) * max).round()
}

fn write_rgb8(path: &Path, t: &Tensor<f32>) -> Result<()> {
    let s = t.shape();
    let img = RgbImage::from_fn(s.w as u32, s.h as u32, |x, y| {
        Rgb(std::array::from_fn(|c| quantize(t.at(0, c, y as usize, x as usize), 255.0) as u8))
    });
    img.save(path).map_err(|e| image_error(path, e))
}

fn write_rgb16(path: &Path, t: &Tensor<f32>) -> Result<()> {
    let s = t.shape();
    let img: ImageBuffer<Rgb<u16>, Vec<u16>> = ImageBuffer::from_fn(s.w as u32, s.h as u32, |x, y| {
        Rgb(std::array::from_fn(|c| quantize(t.at(0, c, y as usize, x as usize), 65535.0) as u16))
    });
    img.save(path).map_err(|e| image_error(path, e))
}

fn write_mask(path: &Path, m: &BinaryMask) -> Result<()> {
    let img = GrayImage::from_fn(m.width() as u32, m.height() as u32, |x, y| {
        image::Luma([if m.get(y as usize, x as usize) { 255 } else { 0 }])
    });
    img.save(path).map_err(|e| image_error(path, e))
}

fn read_image(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|e| image_error(path, e))
}

fn read_rgb(path: &Path) -> Result<Tensor<f32>> {
    let img = read_image(path)?.to_rgb32f();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(Tensor::from_fn(Shape::new(1, 3, h, w), |_, c, y, x| img.get_pixel(x as u32, y as u32)[c]))
}

fn read_mask(path: &Path) -> Result<BinaryMask> {
    let img = read_image(path)?.to_luma32f();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(BinaryMask::from_fn(h, w, |y, x| img.get_pixel(x as u32, y as u32)[0] > 0.5))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Image files of a directory in name order.
fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    files.sort();
    Ok(files)
}

pub fn save_clip(dir: &Path, clip: &VideoClip) -> Result<()> {
    clip.validate()?;
    for sub in ["frames", "flows", "masks"] {
        ensure_dir(&dir.join(sub))?;
    }
    for t in 0..clip.len() {
        write_rgb8(&dir.join("frames").join(format!("{t:05}.png")), &clip.frames[t])?;
        write_rgb16(&dir.join("flows").join(format!("{t:05}.png")), &clip.flows[t])?;
        write_mask(&dir.join("masks").join(format!("{t:05}.pgm")), &clip.masks[t])?;
    }
    let meta = dir.join("clip.json");
    fs::write(&meta, serde_json::to_vec_pretty(&clip.meta)?).map_err(|e| Error::io(&meta, e))
}

pub fn load_clip(dir: &Path) -> Result<VideoClip> {
    let list = |sub: &str| {
        let d = dir.join(sub);
        if !d.is_dir() {
            return Err(Error::format(&d, "missing directory"));
        }
        image_files(&d)
    };
    let (frames, flows, masks) = (list("frames")?, list("flows")?, list("masks")?);
    if frames.is_empty() || frames.len() != flows.len() || frames.len() != masks.len() {
        return Err(Error::format(
            dir,
            format!("{} frames, {} flows and {} masks", frames.len(), flows.len(), masks.len()),
        ));
    }
    let meta_path = dir.join("clip.json");
    let mut meta: ClipMeta = if meta_path.is_file() {
        let bytes = fs::read(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::format(&meta_path, e.to_string()))?
    } else {
        ClipMeta::default()
    };
    if meta.name.is_empty() {
        meta.name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    }
    let clip = VideoClip {
        frames: frames.iter().map(|p| read_rgb(p)).collect::<Result<_>>()?,
        flows: flows.iter().map(|p| read_rgb(p)).collect::<Result<_>>()?,
        masks: masks.iter().map(|p| read_mask(p)).collect::<Result<_>>()?,
        meta,
    };
    clip.validate().map_err(|e| Error::format(dir, e.to_string()))?;
    Ok(clip)
}

/// Writes each clip to `root/<clip name>`.
pub fn save_dataset(root: &Path, clips: &[VideoClip]) -> Result<()> {
    ensure_dir(root)?;
    for (i, clip) in clips.iter().enumerate() {
        let name = if clip.meta.name.is_empty() { format!("clip_{i:04}") } else { clip.meta.name.clone() };
        save_clip(&root.join(name), clip)?;
    }
    Ok(())
}

/// Every subdirectory of `root` holding a `frames/` directory, in name order.
pub fn load_dataset(root: &Path) -> Result<Vec<VideoClip>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("frames").is_dir())
        .collect();
    if dirs.is_empty() {
        return Err(Error::format(root, "no clip directories with frames/"));
    }
    dirs.sort();
    dirs.iter().map(|d| load_clip(d)).collect()
}
