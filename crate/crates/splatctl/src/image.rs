//! Dense RGB image in 64-bit floats, row-major, channels interleaved.

/// `height * width * 3` floats in `[0, 1]` (values outside the range are not
/// clamped here; encoders clamp on write).
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn zeros(width: usize, height: usize) -> Self {
        Image {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height * 3, "image payload size");
        Image {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize) -> usize {
        (y * self.width + x) * 3
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = self.idx(x, y);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = self.idx(x, y);
        self.data[i] = rgb[0];
        self.data[i + 1] = rgb[1];
        self.data[i + 2] = rgb[2];
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// One channel as a contiguous plane (used by windowed metrics).
    pub fn channel_plane(&self, c: usize) -> Vec<f64> {
        self.data.iter().skip(c).step_by(3).copied().collect()
    }

    /// Mean squared error over all pixels and channels.
    pub fn mse(&self, other: &Image) -> f64 {
        assert!(self.same_shape(other), "image shapes differ");
        let n = self.data.len() as f64;
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pixel_addressing_round_trips() {
        let mut img = Image::zeros(4, 3);
        img.set_pixel(2, 1, [0.1, 0.2, 0.3]);
        assert_eq!(img.pixel(2, 1), [0.1, 0.2, 0.3]);
        assert_eq!(img.pixel(0, 0), [0.0, 0.0, 0.0]);
        let plane = img.channel_plane(1);
        assert_eq!(plane.len(), 12);
        assert_eq!(plane[1 * 4 + 2], 0.2);
    }

    #[test]
    fn mse_of_identical_images_is_zero() {
        let img = Image::from_data(2, 2, (0..12).map(|i| i as f64 / 12.0).collect());
        assert_eq!(img.mse(&img), 0.0);
    }
}
