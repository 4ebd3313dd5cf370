//! ISA troposphere.

use crate::error::{Error, Result};

pub const RHO0: f64 = 1.225;
const T0: f64 = 288.15;
const LAPSE: f64 = 0.0065;
const DENSITY_EXPONENT: f64 = 4.2559;
pub const MAX_ALTITUDE: f64 = 11_000.0;

/// Air density in kg/m^3 for `0 <= h <= 11000` m.
pub fn air_density(h: f64) -> Result<f64> {
    if !(0.0..=MAX_ALTITUDE).contains(&h) {
        return Err(Error::AltitudeOutOfRange(h));
    }
    Ok(RHO0 * (1.0 - LAPSE * h / T0).powf(DENSITY_EXPONENT))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sea_level_and_tropopause() {
        assert_eq!(air_density(0.0).unwrap(), 1.225);
        let rho = air_density(11_000.0).unwrap();
        let oracle = 1.225 * (1.0 - 0.0065 * 11_000.0 / 288.15f64).powf(4.2559);
        assert!((rho - oracle).abs() < 1e-12);
        assert!((rho - 0.3639).abs() < 5e-4);
    }

    #[test]
    fn strictly_decreasing() {
        let mut prev = air_density(0.0).unwrap();
        for k in 1..=110 {
            let rho = air_density(k as f64 * 100.0).unwrap();
            assert!(rho < prev);
            prev = rho;
        }
    }

    #[test]
    fn out_of_range() {
        assert!(matches!(air_density(-1.0), Err(Error::AltitudeOutOfRange(_))));
        assert!(air_density(11_000.1).is_err());
    }
}
