use std::path::Path;

use image::{Rgb, RgbImage};
use tch::{Kind, Tensor};

use crate::error::{ensure, Error, Result};

/// Smallest side the decoder accepts (two stride-2 layers plus pooling).
pub const MIN_SIDE: usize = 8;

/// H×W×3 RGB image with real-valued entries, nominally in `[0, 1]`.
///
/// Pixels are stored row-major, channels interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePlane {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ImagePlane {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        ensure(height >= MIN_SIDE && width >= MIN_SIDE, || {
            format!("image is {height}x{width}, both sides must be at least {MIN_SIDE}")
        })?;
        ensure(data.len() == height * width * 3, || {
            format!("expected {} values for {height}x{width}x3, got {}", height * width * 3, data.len())
        })?;
        ensure(data.iter().all(|v| v.is_finite()), || "image contains non-finite values".into())?;
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Result<Self> {
        let data = (0..height * width).flat_map(|_| rgb).collect();
        Self::new(height, width, data)
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize, usize) -> f32) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                for c in 0..3 {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * 3 + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * 3 + c] = v;
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn pixels(&self) -> impl Iterator<Item = [f32; 3]> + '_ {
        self.data.chunks_exact(3).map(|c| [c[0], c[1], c[2]])
    }

    /// Applies `f` to every pixel.
    pub fn map_pixels(&self, mut f: impl FnMut([f32; 3]) -> [f32; 3]) -> Self {
        let mut out = self.clone();
        for px in out.data.chunks_exact_mut(3) {
            let v = f([px[0], px[1], px[2]]);
            px.copy_from_slice(&v);
        }
        out
    }

    pub fn clipped(mut self) -> Self {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
        self
    }

    pub fn in_unit_range(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }

    /// Rounds to the nearest 8-bit level, the values a PNG round trip keeps.
    pub fn quantized(&self) -> Self {
        let mut out = self.clone();
        for v in &mut out.data {
            *v = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
        }
        out
    }

    /// Square crop with top-left corner at `(y, x)`.
    pub fn crop(&self, y: usize, x: usize, h: usize, w: usize) -> Result<Self> {
        ensure(y + h <= self.height && x + w <= self.width, || {
            format!("crop {h}x{w}+{y}+{x} exceeds {}x{}", self.height, self.width)
        })?;
        Self::from_fn(h, w, |yy, xx, c| self.get(y + yy, x + xx, c))
    }

    pub fn to_rgb8(&self) -> RgbImage {
        let mut img = RgbImage::new(self.width as u32, self.height as u32);
        for (x, y, px) in img.enumerate_pixels_mut() {
            let p = self.pixel(y as usize, x as usize);
            *px = Rgb(p.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
        }
        img
    }

    pub fn from_rgb8(img: &RgbImage) -> Result<Self> {
        let data = img.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
        Self::new(img.height() as usize, img.width() as usize, data)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path)
            .map_err(|source| match source {
                image::ImageError::IoError(e) => Error::io(path, e),
                source => Error::Image { path: path.to_path_buf(), source },
            })?
            .to_rgb8();
        Self::from_rgb8(&img)
    }

    /// Writes an 8-bit PNG. Reloading it yields `self.quantized()`.
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.to_rgb8().save_with_format(path, image::ImageFormat::Png).map_err(|source| match source {
            image::ImageError::IoError(e) => Error::io(path, e),
            source => Error::Image { path: path.to_path_buf(), source },
        })
    }

    /// `[3, H, W]` float tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_slice(&self.data).view([self.height as i64, self.width as i64, 3]).permute([2, 0, 1]).contiguous()
    }

    /// Accepts `[3, H, W]` or `[1, 3, H, W]`. Values are taken as-is.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let t = match t.dim() {
            4 if t.size()[0] == 1 => t.squeeze_dim(0),
            3 => t.shallow_clone(),
            _ => return Err(Error::contract(format!("expected a [3,H,W] tensor, got {:?}", t.size()))),
        };
        let size = t.size();
        ensure(size[0] == 3, || format!("expected 3 channels, got {}", size[0]))?;
        let hwc = t.detach().to_kind(Kind::Float).permute([1, 2, 0]).contiguous().flatten(0, -1);
        let data = Vec::<f32>::try_from(&hwc)?;
        Self::new(size[1] as usize, size[2] as usize, data)
    }

    /// Stacks same-sized planes into a `[B, 3, H, W]` batch.
    pub fn stack(planes: &[&ImagePlane]) -> Result<Tensor> {
        ensure(!planes.is_empty(), || "cannot stack an empty list of images".into())?;
        let dims = planes[0].dims();
        ensure(planes.iter().all(|p| p.dims() == dims), || "images in a batch must share dimensions".into())?;
        Ok(Tensor::stack(&planes.iter().map(|p| p.to_tensor()).collect::<Vec<_>>(), 0))
    }

    pub fn unstack(batch: &Tensor) -> Result<Vec<ImagePlane>> {
        ensure(batch.dim() == 4, || format!("expected [B,3,H,W], got {:?}", batch.size()))?;
        (0..batch.size()[0]).map(|i| Self::from_tensor(&batch.get(i))).collect()
    }
}
