//! Unit conversions used at the file boundary. Everything inside the crate
//! is SI with angles in radians.

pub const FT_TO_M: f64 = 0.3048;
pub const KT_TO_MPS: f64 = 1852.0 / 3600.0;
/// Standard gravitational acceleration, m/s^2.
pub const G0: f64 = 9.80665;

#[inline]
pub fn deg(rad: f64) -> f64 {
    rad.to_degrees()
}

#[inline]
pub fn rad(deg: f64) -> f64 {
    deg.to_radians()
}

#[inline]
pub fn ft_to_m(ft: f64) -> f64 {
    ft * FT_TO_M
}

#[inline]
pub fn m_to_ft(m: f64) -> f64 {
    m / FT_TO_M
}

#[inline]
pub fn kt_to_mps(kt: f64) -> f64 {
    kt * KT_TO_MPS
}

#[inline]
pub fn mps_to_kt(v: f64) -> f64 {
    v / KT_TO_MPS
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clearance_conversion_is_exact() {
        assert_eq!(ft_to_m(2000.0), 609.6);
    }

    #[test]
    fn knots_round_trip() {
        let v = 87.3;
        assert!((kt_to_mps(mps_to_kt(v)) - v).abs() < 1e-12);
    }
}
