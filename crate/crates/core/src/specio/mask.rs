use std::path::Path;

use super::image::{read_raster, write_png};
use super::SpecioError;

/// Row-major pixel labels, strictly 0 (background) or 1 (stenosis).
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self, SpecioError> {
        if height == 0 || width == 0 {
            return Err(SpecioError::Dimensions { height, width });
        }
        if data.len() != height * width {
            return Err(SpecioError::Data(format!(
                "expected {} mask values for {height}x{width}, got {}",
                height * width,
                data.len()
            )));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(SpecioError::Data("mask values must be 0 or 1".into()));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self, SpecioError> {
        Self::new(height, width, vec![0; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col] == 1
    }

    pub fn set(&mut self, row: usize, col: usize, on: bool) {
        self.data[row * self.width + col] = on as u8;
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn same_dims(&self, other: &BinaryMask) -> bool {
        self.height == other.height && self.width == other.width
    }
}

/// Writes the mask as an 8-bit grayscale PNG with foreground 255.
pub fn save_mask(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<(), SpecioError> {
    let bytes: Vec<u8> = mask.data().iter().map(|&v| v * 255).collect();
    write_png(path.as_ref(), mask.width(), mask.height(), png::BitDepth::Eight, &bytes)
}

/// Reads a grayscale raster as a mask; codes at or above half scale
/// (128 for 8-bit files) become 1, everything else 0.
pub fn load_mask(path: impl AsRef<Path>) -> Result<BinaryMask, SpecioError> {
    let path = path.as_ref();
    let raw = read_raster(path)?;
    let cut = (raw.max_code as u32 * 128).div_ceil(255);
    let data = raw.codes.iter().map(|&c| (c as u32 >= cut) as u8).collect();
    BinaryMask::new(raw.height, raw.width, data).map_err(|e| SpecioError::format(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_and_checkerboard_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        let zeros = BinaryMask::zeros(5, 7).unwrap();
        save_mask(&zeros, &p).unwrap();
        assert_eq!(load_mask(&p).unwrap(), zeros);

        let checker: Vec<u8> = (0..35).map(|i| ((i / 7 + i % 7) % 2) as u8).collect();
        let checker = BinaryMask::new(5, 7, checker).unwrap();
        save_mask(&checker, &p).unwrap();
        assert_eq!(load_mask(&p).unwrap(), checker);
    }

    #[test]
    fn threshold_rule_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.png");
        write_png(&p, 4, 1, png::BitDepth::Eight, &[200, 127, 128, 0]).unwrap();
        assert_eq!(load_mask(&p).unwrap().data(), &[1, 0, 1, 0]);
    }

    #[test]
    fn rejects_non_binary_values() {
        assert!(BinaryMask::new(1, 2, vec![0, 2]).is_err());
        assert!(BinaryMask::zeros(0, 2).is_err());
    }

    #[test]
    fn unwritable_path() {
        let m = BinaryMask::zeros(2, 2).unwrap();
        assert!(save_mask(&m, "/nonexistent-dir/x/m.png").is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn save_load_identity(h in 1usize..24, w in 1usize..24, seed in any::<u64>()) {
            let data: Vec<u8> = (0..h * w)
                .map(|i| ((seed.rotate_left((i % 64) as u32) ^ i as u64) & 1) as u8)
                .collect();
            let mask = BinaryMask::new(h, w, data).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("p.png");
            save_mask(&mask, &p).unwrap();
            prop_assert_eq!(load_mask(&p).unwrap(), mask);
        }
    }
}
