//! Image file handling: PPM (P6, 8-bit) encoded by hand so round trips are
//! bit-exact, PNG through the `image` crate, center cropping, and
//! conversion to and from [1,3,H,W] tensors.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Row-major RGB triples, each channel in [0,1] as mapped from 8 bits.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f32>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, pixels: Vec<f32>) -> ImageBuffer {
        assert!(width > 0 && height > 0, "empty image");
        assert_eq!(pixels.len(), width * height * 3, "pixel count mismatch");
        ImageBuffer { width, height, pixels }
    }

    pub fn filled(width: usize, height: usize, value: f32) -> ImageBuffer {
        ImageBuffer::new(width, height, vec![value; width * height * 3])
    }

    /// [1,3,H,W] tensor, channel planes split out of the interleaved rows.
    pub fn to_tensor(&self) -> Tensor {
        let (w, h) = (self.width, self.height);
        let mut data = vec![0.0f32; 3 * h * w];
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    data[c * h * w + y * w + x] = self.pixels[(y * w + x) * 3 + c];
                }
            }
        }
        Tensor::new(&[1, 3, h, w], data)
    }

    /// Inverse of [`to_tensor`], clamping into [0,1].
    pub fn from_tensor(t: &Tensor) -> ImageBuffer {
        let s = t.shape();
        assert_eq!(s.len(), 4, "image tensor must be [1,3,h,w]");
        assert_eq!((s[0], s[1]), (1, 3), "image tensor must be [1,3,h,w]");
        let (h, w) = (s[2], s[3]);
        let v = t.to_vec();
        let mut pixels = vec![0.0f32; h * w * 3];
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    pixels[(y * w + x) * 3 + c] = v[c * h * w + y * w + x].clamp(0.0, 1.0);
                }
            }
        }
        ImageBuffer::new(w, h, pixels)
    }

    /// Centered `cw` x `ch` crop. Errors when the image is smaller.
    pub fn center_crop(&self, cw: usize, ch: usize) -> Result<ImageBuffer> {
        if cw == 0 || ch == 0 || cw > self.width || ch > self.height {
            return Err(Error::ImageDecode(format!(
                "cannot crop {}x{} out of {}x{}",
                cw, ch, self.width, self.height
            )));
        }
        if cw == self.width && ch == self.height {
            return Ok(self.clone());
        }
        let x0 = (self.width - cw) / 2;
        let y0 = (self.height - ch) / 2;
        let mut pixels = Vec::with_capacity(cw * ch * 3);
        for y in y0..y0 + ch {
            let row = (y * self.width + x0) * 3;
            pixels.extend_from_slice(&self.pixels[row..row + cw * 3]);
        }
        Ok(ImageBuffer::new(cw, ch, pixels))
    }

    /// Largest centered crop whose sides are multiples of `unit`. Returns
    /// the crop and whether anything was trimmed.
    pub fn center_crop_to_multiple(&self, unit: usize) -> Result<(ImageBuffer, bool)> {
        let cw = (self.width / unit) * unit;
        let ch = (self.height / unit) * unit;
        if cw == 0 || ch == 0 {
            return Err(Error::ImageDecode(format!(
                "image {}x{} is smaller than {unit}x{unit}",
                self.width, self.height
            )));
        }
        let trimmed = cw != self.width || ch != self.height;
        Ok((self.center_crop(cw, ch)?, trimmed))
    }

    fn to_bytes(&self) -> Vec<u8> {
        self.pixels.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
    }

    fn from_bytes(width: usize, height: usize, bytes: &[u8]) -> ImageBuffer {
        ImageBuffer::new(width, height, bytes.iter().map(|&b| b as f32 / 255.0).collect())
    }
}

/// Mean absolute difference between two equally sized images, over all
/// channels. 0 for identical frames, 1 for black against white.
pub fn mean_abs_diff(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(Error::ImageDecode(format!(
            "size mismatch: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    let sum: f64 =
        a.pixels.iter().zip(b.pixels.iter()).map(|(&x, &y)| (x as f64 - y as f64).abs()).sum();
    Ok(sum / a.pixels.len() as f64)
}

pub fn encode_ppm(img: &ImageBuffer) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.to_bytes());
    out
}

/// Plain P6: magic, whitespace-separated width/height/maxval (with
/// `#` comments), one whitespace byte, then raw RGB. Only maxval 255.
pub fn decode_ppm(bytes: &[u8]) -> Result<ImageBuffer> {
    if bytes.len() < 2 || &bytes[0..2] != b"P6" {
        return Err(Error::ImageDecode("not a P6 file: bad magic".into()));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (i, field) in fields.iter_mut().enumerate() {
        skip_ppm_separators(bytes, &mut pos)?;
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if pos == start {
            return Err(Error::ImageDecode(format!("header field {} is not a number", i + 1)));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("digits are UTF-8");
        *field = text
            .parse()
            .map_err(|_| Error::ImageDecode(format!("header field `{text}` out of range")))?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(Error::ImageDecode(format!("unsupported maxval {maxval}, only 255")));
    }
    if width == 0 || height == 0 {
        return Err(Error::ImageDecode("zero image dimension".into()));
    }
    // exactly one whitespace byte between maxval and the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::ImageDecode("missing whitespace before pixel data".into()));
    }
    pos += 1;
    let need = width * height * 3;
    let raster = &bytes[pos..];
    if raster.len() < need {
        return Err(Error::ImageDecode(format!(
            "unexpected end of pixel data: have {} bytes, need {need}",
            raster.len()
        )));
    }
    Ok(ImageBuffer::from_bytes(width, height, &raster[..need]))
}

fn skip_ppm_separators(bytes: &[u8], pos: &mut usize) -> Result<()> {
    let mut moved = false;
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
            moved = true;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
    if !moved {
        return Err(Error::ImageDecode("missing whitespace in header".into()));
    }
    Ok(())
}

fn decode_png(bytes: &[u8]) -> Result<ImageBuffer> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| Error::ImageDecode(format!("png: {e}")))?
        .into_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(ImageBuffer::from_bytes(w, h, img.as_raw()))
}

/// Reads a PPM or PNG file, sniffing the format from its leading bytes.
pub fn load(path: &Path) -> Result<ImageBuffer> {
    let bytes = std::fs::read(path)?;
    if bytes.starts_with(b"P6") {
        decode_ppm(&bytes)
    } else if bytes.starts_with(&[0x89, b'P', b'N', b'G']) {
        decode_png(&bytes)
    } else {
        Err(Error::ImageDecode(format!("{}: neither P6 PPM nor PNG", path.display())))
    }
}

/// Writes PPM or PNG depending on the file extension.
pub fn save(path: &Path, img: &ImageBuffer) -> Result<()> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    match ext.to_ascii_lowercase().as_str() {
        "ppm" => {
            std::fs::write(path, encode_ppm(img))?;
            Ok(())
        }
        "png" => image::save_buffer(
            path,
            &img.to_bytes(),
            img.width as u32,
            img.height as u32,
            image::ColorType::Rgb8,
        )
        .map_err(|e| Error::ImageDecode(format!("png encode: {e}"))),
        other => Err(Error::Config(format!(
            "unsupported output extension `{other}`, use .ppm or .png"
        ))),
    }
}
