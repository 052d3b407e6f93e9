/// A dense row-major image with interleaved f32 channels.
#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Raster {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), width * height * channels, "raster data length");
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Self {
        Self::from_vec(width, height, channels, vec![value; width * height * channels])
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

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let o = (y * self.width + x) * self.channels;
        &self.data[o..o + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f32] {
        let o = (y * self.width + x) * self.channels;
        &mut self.data[o..o + self.channels]
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Bilinear sample at continuous pixel coordinates (pixel centers at
    /// integers), clamping to the border. Accumulates into `out`.
    pub fn sample_bilinear_into(&self, x: f64, y: f64, out: &mut [f32]) {
        let xc = x.clamp(0.0, (self.width - 1) as f64);
        let yc = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = xc.floor() as usize;
        let y0 = yc.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = (xc - x0 as f64) as f32;
        let fy = (yc - y0 as f64) as f32;
        let w00 = (1.0 - fx) * (1.0 - fy);
        let w10 = fx * (1.0 - fy);
        let w01 = (1.0 - fx) * fy;
        let w11 = fx * fy;
        let (p00, p10, p01, p11) = (self.pixel(x0, y0), self.pixel(x1, y0), self.pixel(x0, y1), self.pixel(x1, y1));
        for c in 0..self.channels {
            out[c] += w00 * p00[c] + w10 * p10[c] + w01 * p01[c] + w11 * p11[c];
        }
    }

    /// Single channel `c` as its own raster.
    pub fn channel(&self, c: usize) -> Raster {
        let data = self.data.iter().skip(c).step_by(self.channels).copied().collect();
        Raster::from_vec(self.width, self.height, 1, data)
    }
}

/// Builds the three-channel `[depth, ∂depth/∂x, ∂depth/∂y]` image used as
/// backbone input. Gradients use central differences and are zero wherever a
/// participating sample is invalid (depth 0).
pub fn depth_feature_image(depth: &Raster) -> Raster {
    assert_eq!(depth.channels(), 1);
    let (w, h) = (depth.width(), depth.height());
    let mut out = Raster::new(w, h, 3);
    let d = |x: usize, y: usize| depth.at(x, y, 0);
    for y in 0..h {
        for x in 0..w {
            let v = d(x, y);
            let (xl, xr) = (x.saturating_sub(1), (x + 1).min(w - 1));
            let (yu, yd) = (y.saturating_sub(1), (y + 1).min(h - 1));
            let gx = if v > 0.0 && d(xl, y) > 0.0 && d(xr, y) > 0.0 && xr > xl {
                (d(xr, y) - d(xl, y)) / (xr - xl) as f32
            } else {
                0.0
            };
            let gy = if v > 0.0 && d(x, yu) > 0.0 && d(x, yd) > 0.0 && yd > yu {
                (d(x, yd) - d(x, yu)) / (yd - yu) as f32
            } else {
                0.0
            };
            out.pixel_mut(x, y).copy_from_slice(&[v, gx, gy]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_midpoint() {
        let r = Raster::from_vec(2, 1, 1, vec![1.0, 3.0]);
        let mut out = [0.0];
        r.sample_bilinear_into(0.5, 0.0, &mut out);
        assert_eq!(out[0], 2.0);
        let mut edge = [0.0];
        r.sample_bilinear_into(-4.0, 0.0, &mut edge);
        assert_eq!(edge[0], 1.0);
    }

    #[test]
    fn depth_features_of_a_ramp() {
        let data: Vec<f32> = (0..12).map(|i| 1.0 + (i % 4) as f32 * 0.5).collect();
        let f = depth_feature_image(&Raster::from_vec(4, 3, 1, data));
        assert_eq!(f.pixel(1, 1), &[1.5, 0.5, 0.0]);
    }
}
