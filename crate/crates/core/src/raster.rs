//! Pixel-level primitives shared by segmentation and line detection.
//!
//! Every image is a [`Raster`] of unit-interval `f32` samples stored row-major,
//! with either one (gray / single plane) or three (RGB) interleaved channels.
//! Borders are handled by clamp-to-border replication throughout.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RasterError {
    #[error("raster must have 1 or 3 channels, got {0}")]
    BadChannels(usize),
    #[error("raster data length {actual} does not match {expected}")]
    DataLength { expected: usize, actual: usize },
    #[error("sample {value} at index {index} is outside [0, 1]")]
    SampleOutOfRange { index: usize, value: f32 },
    #[error("expected a {expected}-channel raster, got {actual}")]
    ChannelMismatch { expected: usize, actual: usize },
    #[error("gaussian sigma must be non-negative, got {0}")]
    NegativeSigma(f64),
    #[error("image {width}x{height} is too small (need at least 3x3)")]
    ImageTooSmall { width: usize, height: usize },
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
}

/// Row-major image with 1 or 3 channels of samples in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Raster {
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        data: Vec<f32>,
    ) -> Result<Self, RasterError> {
        if channels != 1 && channels != 3 {
            return Err(RasterError::BadChannels(channels));
        }
        let expected = width * height * channels;
        if data.len() != expected {
            return Err(RasterError::DataLength {
                expected,
                actual: data.len(),
            });
        }
        if let Some((index, &value)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(RasterError::SampleOutOfRange { index, value });
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// Builds a raster from samples that are clamped into `[0, 1]` (NaN maps to 0).
    pub(crate) fn from_clamped(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), width * height * channels);
        let data = data
            .into_iter()
            .map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) })
            .collect();
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn filled(width: usize, height: usize, value: &[f32]) -> Result<Self, RasterError> {
        let channels = value.len();
        let data = value
            .iter()
            .copied()
            .cycle()
            .take(width * height * channels)
            .collect();
        Self::new(width, height, channels, data)
    }

    pub fn from_fn_gray(width: usize, height: usize, f: impl Fn(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::from_clamped(width, height, 1, data)
    }

    pub fn from_fn_rgb(width: usize, height: usize, f: impl Fn(usize, usize) -> [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self::from_clamped(width, height, 3, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// All channels of the pixel at `(x, y)`.
    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Writes a pixel, clamping each channel into `[0, 1]`.
    pub fn set_pixel(&mut self, x: usize, y: usize, value: &[f32]) {
        let i = (y * self.width + x) * self.channels;
        for (dst, &v) in self.data[i..i + self.channels].iter_mut().zip(value) {
            *dst = v.clamp(0.0, 1.0);
        }
    }

    pub fn same_dims(&self, width: usize, height: usize) -> bool {
        self.width == width && self.height == height
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    /// Swaps the x and y axes.
    pub fn transpose(&self) -> Raster {
        let mut data = vec![0.0; self.data.len()];
        let c = self.channels;
        for y in 0..self.height {
            for x in 0..self.width {
                let src = (y * self.width + x) * c;
                let dst = (x * self.height + y) * c;
                data[dst..dst + c].copy_from_slice(&self.data[src..src + c]);
            }
        }
        Raster {
            width: self.height,
            height: self.width,
            channels: c,
            data,
        }
    }

    fn require_channels(&self, expected: usize) -> Result<(), RasterError> {
        if self.channels != expected {
            return Err(RasterError::ChannelMismatch {
                expected,
                actual: self.channels,
            });
        }
        Ok(())
    }
}

/// Hue in degrees `[0, 360)`, saturation and value in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColorHsv {
    pub h: f64,
    pub s: f64,
    pub v: f64,
}

/// Hexcone RGB to HSV. Achromatic pixels report `h = 0`.
pub fn rgb_to_hsv(r: f64, g: f64, b: f64) -> ColorHsv {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let v = max;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    if s == 0.0 {
        return ColorHsv { h: 0.0, s: 0.0, v };
    }
    let sector = if max == r {
        (g - b) / delta
    } else if max == g {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    };
    let mut h = 60.0 * sector;
    if h < 0.0 {
        h += 360.0;
    }
    if h >= 360.0 {
        h -= 360.0;
    }
    ColorHsv { h, s, v }
}

/// Splits an RGB raster into hue, saturation and value planes.
///
/// Hue is rescaled from degrees to `[0, 1)` by dividing by 360.
pub fn hsv_planes(frame: &Raster) -> Result<(Raster, Raster, Raster), RasterError> {
    frame.require_channels(3)?;
    let n = frame.width * frame.height;
    let (mut h, mut s, mut v) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    for px in frame.data.chunks_exact(3) {
        let hsv = rgb_to_hsv(px[0] as f64, px[1] as f64, px[2] as f64);
        h.push((hsv.h / 360.0) as f32);
        s.push(hsv.s as f32);
        v.push(hsv.v as f32);
    }
    let (w, ht) = (frame.width, frame.height);
    Ok((
        Raster::from_clamped(w, ht, 1, h),
        Raster::from_clamped(w, ht, 1, s),
        Raster::from_clamped(w, ht, 1, v),
    ))
}

/// Saturation plane only; avoids allocating hue and value.
pub fn saturation_plane(frame: &Raster) -> Result<Raster, RasterError> {
    frame.require_channels(3)?;
    let s = frame
        .data
        .chunks_exact(3)
        .map(|px| rgb_to_hsv(px[0] as f64, px[1] as f64, px[2] as f64).s as f32)
        .collect();
    Ok(Raster::from_clamped(frame.width, frame.height, 1, s))
}

/// Normalized 1-D Gaussian weights for offsets `-radius..=radius`, radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|w| *w /= sum);
    k
}

/// Separable Gaussian smoothing of a single-channel raster.
pub fn gaussian_blur(img: &Raster, sigma: f64) -> Result<Raster, RasterError> {
    img.require_channels(1)?;
    if sigma.is_nan() || sigma < 0.0 {
        return Err(RasterError::NegativeSigma(sigma));
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let kernel: Vec<f32> = gaussian_kernel(sigma).iter().map(|&w| w as f32).collect();
    let radius = (kernel.len() / 2) as isize;
    let (w, h) = (img.width, img.height);
    if w == 0 || h == 0 {
        return Ok(img.clone());
    }
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;

    let mut tmp = vec![0.0f32; w * h];
    for y in 0..h {
        let row = &img.data[y * w..(y + 1) * w];
        let out = &mut tmp[y * w..(y + 1) * w];
        for (x, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0f32;
            for (k, &wk) in kernel.iter().enumerate() {
                acc += wk * row[clamp(x as isize + k as isize - radius, w)];
            }
            *o = acc;
        }
    }
    let mut out = vec![0.0f32; w * h];
    for y in 0..h {
        let dst = &mut out[y * w..(y + 1) * w];
        for (k, &wk) in kernel.iter().enumerate() {
            let sy = clamp(y as isize + k as isize - radius, h);
            let src = &tmp[sy * w..(sy + 1) * w];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += wk * s;
            }
        }
    }
    Ok(Raster::from_clamped(w, h, 1, out))
}

/// Sobel derivatives of a single-channel image.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    pub width: usize,
    pub height: usize,
    pub gx: Vec<f32>,
    pub gy: Vec<f32>,
    /// `sqrt(gx² + gy²)`; unnormalized, may exceed 1.
    pub magnitude: Vec<f32>,
    /// Radians in `(-π, π]`.
    pub direction: Vec<f32>,
}

/// 3×3 Sobel gradients with clamp-to-border replication.
pub fn sobel(img: &Raster) -> Result<GradientField, RasterError> {
    img.require_channels(1)?;
    let (w, h) = (img.width, img.height);
    if w < 3 || h < 3 {
        return Err(RasterError::ImageTooSmall {
            width: w,
            height: h,
        });
    }
    let n = w * h;
    let mut gx = vec![0.0f32; n];
    let mut gy = vec![0.0f32; n];
    let d = &img.data;
    for y in 0..h {
        let ym = y.saturating_sub(1);
        let yp = (y + 1).min(h - 1);
        let (rm, r0, rp) = (&d[ym * w..ym * w + w], &d[y * w..y * w + w], &d[yp * w..yp * w + w]);
        for x in 0..w {
            let xm = x.saturating_sub(1);
            let xp = (x + 1).min(w - 1);
            let i = y * w + x;
            gx[i] = (rm[xp] + 2.0 * r0[xp] + rp[xp]) - (rm[xm] + 2.0 * r0[xm] + rp[xm]);
            gy[i] = (rp[xm] + 2.0 * rp[x] + rp[xp]) - (rm[xm] + 2.0 * rm[x] + rm[xp]);
        }
    }
    let magnitude = gx
        .iter()
        .zip(&gy)
        .map(|(&a, &b)| (a * a + b * b).sqrt())
        .collect();
    let direction = gx
        .iter()
        .zip(&gy)
        .map(|(&a, &b)| {
            let t = b.atan2(a);
            if t <= -std::f32::consts::PI {
                std::f32::consts::PI
            } else {
                t
            }
        })
        .collect();
    Ok(GradientField {
        width: w,
        height: h,
        gx,
        gy,
        magnitude,
        direction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hsv_to_rgb(c: ColorHsv) -> (f64, f64, f64) {
        let chroma = c.v * c.s;
        let hp = c.h / 60.0;
        let x = chroma * (1.0 - (hp % 2.0 - 1.0).abs());
        let (r, g, b) = match hp as u32 {
            0 => (chroma, x, 0.0),
            1 => (x, chroma, 0.0),
            2 => (0.0, chroma, x),
            3 => (0.0, x, chroma),
            4 => (x, 0.0, chroma),
            _ => (chroma, 0.0, x),
        };
        let m = c.v - chroma;
        (r + m, g + m, b + m)
    }

    #[test]
    fn hsv_primaries() {
        assert_eq!(rgb_to_hsv(1.0, 0.0, 0.0), ColorHsv { h: 0.0, s: 1.0, v: 1.0 });
        assert_eq!(rgb_to_hsv(0.0, 1.0, 0.0), ColorHsv { h: 120.0, s: 1.0, v: 1.0 });
        assert_eq!(rgb_to_hsv(0.5, 0.5, 0.5), ColorHsv { h: 0.0, s: 0.0, v: 0.5 });
        assert_eq!(rgb_to_hsv(0.0, 0.0, 0.0).s, 0.0);
    }

    #[test]
    fn hsv_planes_uniform_frames() {
        let green = Raster::filled(4, 3, &[0.0, 1.0, 0.0]).unwrap();
        let (_, s, _) = hsv_planes(&green).unwrap();
        assert!(s.data().iter().all(|&v| v == 1.0));

        let gray = Raster::filled(4, 3, &[0.3, 0.3, 0.3]).unwrap();
        let (h, s, v) = hsv_planes(&gray).unwrap();
        assert!(s.data().iter().all(|&x| x == 0.0));
        assert!(h.data().iter().all(|&x| x == 0.0));
        assert!(v.data().iter().all(|&x| (x - 0.3).abs() < 1e-7));
    }

    #[test]
    fn hsv_planes_stripes_saturation() {
        // light (0.4,0.8,0.4): s = 0.4/0.8 = 0.5; dark (0.1,0.5,0.1): s = 0.4/0.5 = 0.8
        let frame = Raster::from_fn_rgb(8, 2, |x, _| {
            if x < 4 {
                [0.4, 0.8, 0.4]
            } else {
                [0.1, 0.5, 0.1]
            }
        });
        let (_, s, _) = hsv_planes(&frame).unwrap();
        assert!((s.get(0, 0, 0) - 0.5).abs() < 1e-6);
        assert!((s.get(7, 1, 0) - 0.8).abs() < 1e-6);
        assert_eq!(saturation_plane(&frame).unwrap(), s);
    }

    #[test]
    fn hsv_planes_rejects_gray() {
        let g = Raster::filled(2, 2, &[0.5]).unwrap();
        assert!(matches!(
            hsv_planes(&g),
            Err(RasterError::ChannelMismatch { expected: 3, actual: 1 })
        ));
    }

    #[test]
    fn raster_validation() {
        assert!(matches!(
            Raster::new(2, 2, 1, vec![0.0; 3]),
            Err(RasterError::DataLength { expected: 4, actual: 3 })
        ));
        assert!(matches!(
            Raster::new(1, 1, 1, vec![1.5]),
            Err(RasterError::SampleOutOfRange { .. })
        ));
        assert!(matches!(Raster::new(1, 1, 2, vec![0.0; 2]), Err(RasterError::BadChannels(2))));
    }

    #[test]
    fn blur_constant_and_zero_sigma() {
        let c = Raster::filled(9, 7, &[0.37]).unwrap();
        let b = gaussian_blur(&c, 2.3).unwrap();
        assert!(b.data().iter().all(|&v| (v - 0.37).abs() < 1e-6));

        let img = Raster::from_fn_gray(5, 5, |x, y| ((x * 7 + y * 3) % 5) as f32 / 5.0);
        assert_eq!(gaussian_blur(&img, 0.0).unwrap(), img);
        assert!(matches!(gaussian_blur(&img, -1.0), Err(RasterError::NegativeSigma(_))));
    }

    #[test]
    fn blur_impulse_matches_2d_gaussian() {
        // Oracle: the 2-D Gaussian exp(-(x²+y²)/2σ²) over the (2r+1)² support, normalized.
        let sigma = 1.0;
        let r = 3i64;
        let mut weights = vec![];
        for dy in -r..=r {
            for dx in -r..=r {
                weights.push((-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp());
            }
        }
        let total: f64 = weights.iter().sum();
        let size = 15usize;
        let c = size / 2;
        let img = Raster::from_fn_gray(size, size, |x, y| if x == c && y == c { 1.0 } else { 0.0 });
        let b = gaussian_blur(&img, sigma).unwrap();
        let mut k = 0;
        for dy in -r..=r {
            for dx in -r..=r {
                let expected = weights[k] / total;
                let got = b.get((c as i64 + dx) as usize, (c as i64 + dy) as usize, 0) as f64;
                assert!((got - expected).abs() < 1e-6, "({dx},{dy}) {got} vs {expected}");
                k += 1;
            }
        }
        assert!((b.mean() * (size * size) as f64 - 1.0).abs() < 1e-5);
    }

    #[test]
    fn sobel_constant_is_zero() {
        let g = sobel(&Raster::filled(6, 5, &[0.8]).unwrap()).unwrap();
        assert!(g.gx.iter().chain(&g.gy).chain(&g.magnitude).all(|&v| v == 0.0));
    }

    #[test]
    fn sobel_vertical_step() {
        let w = 10;
        let img = Raster::from_fn_gray(w, 6, |x, _| if x >= w / 2 { 1.0 } else { 0.0 });
        let g = sobel(&img).unwrap();
        assert!(g.gy.iter().all(|&v| v == 0.0));
        for y in 0..6 {
            for x in 0..w {
                let v = g.gx[y * w + x];
                if x == w / 2 - 1 || x == w / 2 {
                    assert_eq!(v, 4.0);
                } else {
                    assert_eq!(v, 0.0);
                }
            }
        }
    }

    #[test]
    fn sobel_ramp() {
        // Hand convolution: (1+2+1) * (x+1 - (x-1)) / (w-1) = 8 / (w-1).
        let w = 11;
        let img = Raster::from_fn_gray(w, 5, |x, _| x as f32 / (w - 1) as f32);
        let g = sobel(&img).unwrap();
        for y in 0..5 {
            for x in 1..w - 1 {
                assert!((g.gx[y * w + x] - 8.0 / (w - 1) as f32).abs() < 1e-5);
                assert_eq!(g.gy[y * w + x], 0.0);
            }
        }
    }

    #[test]
    fn sobel_too_small() {
        let img = Raster::filled(2, 5, &[0.0]).unwrap();
        assert!(matches!(sobel(&img), Err(RasterError::ImageTooSmall { .. })));
    }

    fn arb_gray(max: usize) -> impl Strategy<Value = Raster> {
        (3..max, 3..max).prop_flat_map(|(w, h)| {
            prop::collection::vec(0.0f32..=1.0, w * h)
                .prop_map(move |d| Raster::new(w, h, 1, d).unwrap())
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn hsv_round_trip(r in 0.0f64..=1.0, g in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let hsv = rgb_to_hsv(r, g, b);
            prop_assume!(hsv.s > 0.0);
            prop_assert!((0.0..360.0).contains(&hsv.h));
            let (r2, g2, b2) = hsv_to_rgb(hsv);
            prop_assert!((r - r2).abs() < 1e-6 && (g - g2).abs() < 1e-6 && (b - b2).abs() < 1e-6);
        }

        #[test]
        fn blur_preserves_mean(img in arb_gray(40), sigma in 0.3f64..1.5) {
            // Interior-dominated: pad the random patch with a wide border equal to its mean.
            let pad = 12;
            let m = img.mean() as f32;
            let (w, h) = (img.width() + 2 * pad, img.height() + 2 * pad);
            let big = Raster::from_fn_gray(w, h, |x, y| {
                if x >= pad && y >= pad && x < pad + img.width() && y < pad + img.height() {
                    img.get(x - pad, y - pad, 0)
                } else {
                    m
                }
            });
            let out = gaussian_blur(&big, sigma).unwrap();
            prop_assert!((out.mean() - big.mean()).abs() < 1e-4);
        }

        #[test]
        fn sobel_transpose_symmetry(img in arb_gray(24)) {
            let g = sobel(&img).unwrap();
            let gt = sobel(&img.transpose()).unwrap();
            let (w, h) = (img.width(), img.height());
            for y in 0..h {
                for x in 0..w {
                    let i = y * w + x;
                    let j = x * h + y;
                    prop_assert!((g.magnitude[i] - gt.magnitude[j]).abs() < 1e-5);
                    prop_assert!((g.gx[i] - gt.gy[j]).abs() < 1e-5);
                    prop_assert!((g.gy[i] - gt.gx[j]).abs() < 1e-5);
                }
            }
        }

        #[test]
        fn sobel_magnitude_consistent(img in arb_gray(20)) {
            let g = sobel(&img).unwrap();
            for i in 0..g.gx.len() {
                let m = ((g.gx[i] as f64).powi(2) + (g.gy[i] as f64).powi(2)).sqrt();
                prop_assert!((m - g.magnitude[i] as f64).abs() < 1e-6);
                prop_assert!(g.direction[i] > -std::f32::consts::PI && g.direction[i] <= std::f32::consts::PI);
            }
        }

        #[test]
        fn ops_are_pure(img in arb_gray(16), sigma in 0.0f64..2.0) {
            prop_assert_eq!(gaussian_blur(&img, sigma).unwrap(), gaussian_blur(&img, sigma).unwrap());
            prop_assert_eq!(sobel(&img).unwrap(), sobel(&img).unwrap());
        }
    }
}
