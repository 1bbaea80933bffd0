use super::spectrum::centered_frequency;
use super::PrefilterError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FilterMode {
    Lowpass,
    Highpass,
}

/// Radial Butterworth gain parameters; `d0` is in frequency-bin units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ButterworthParams {
    pub d0: f64,
    pub order: u32,
    pub mode: FilterMode,
}

impl Default for ButterworthParams {
    fn default() -> Self {
        Self {
            d0: 30.0,
            order: 2,
            mode: FilterMode::Highpass,
        }
    }
}

impl ButterworthParams {
    pub fn validate(&self) -> Result<(), PrefilterError> {
        if self.d0.is_nan() || self.d0 <= 0.0 {
            return Err(PrefilterError::Cutoff(self.d0));
        }
        if self.order < 1 {
            return Err(PrefilterError::Order(self.order));
        }
        Ok(())
    }

    /// Gain at radial distance `d` from DC.
    pub fn gain(&self, d: f64) -> f64 {
        let low = 1.0 / (1.0 + (d / self.d0).powi(2 * self.order as i32));
        match self.mode {
            FilterMode::Lowpass => low,
            FilterMode::Highpass => 1.0 - low,
        }
    }
}

/// Gain field in the DC-centered layout used by [`super::Spectrum`].
pub fn butterworth_response(
    params: &ButterworthParams,
    height: usize,
    width: usize,
) -> Result<Vec<f64>, PrefilterError> {
    params.validate()?;
    let mut out = Vec::with_capacity(height * width);
    for r in 0..height {
        for c in 0..width {
            let (u, v) = centered_frequency(height, width, r, c);
            let d = ((u * u + v * v) as f64).sqrt();
            out.push(params.gain(d));
        }
    }
    Ok(out)
}
