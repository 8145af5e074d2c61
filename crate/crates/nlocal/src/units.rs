//! Unit conventions and conversions.
//!
//! Every energy or frequency stored inside the library is an angular
//! frequency in rad/ns, so a parameter quoted as "2π × 1 GHz" is the plain
//! number `TAU`. Times are in ns. Ordinary-frequency units (GHz, MHz) only
//! appear at I/O boundaries; convert exactly once on the way in or out.

/// 2π, the conversion factor between GHz and rad/ns.
pub const TAU: f64 = std::f64::consts::TAU;

/// Ordinary frequency in GHz to angular frequency in rad/ns.
pub fn ghz(f: f64) -> f64 {
    TAU * f
}

/// Ordinary frequency in MHz to angular frequency in rad/ns.
pub fn mhz(f: f64) -> f64 {
    TAU * f * 1e-3
}

/// Angular frequency in rad/ns to ordinary frequency in GHz.
pub fn to_ghz(w: f64) -> f64 {
    w / TAU
}

/// Angular frequency in rad/ns to ordinary frequency in MHz.
pub fn to_mhz(w: f64) -> f64 {
    w / TAU * 1e3
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_are_exact_enough() {
        let w = ghz(2.0);
        assert!((w - 4.0 * std::f64::consts::PI).abs() < 1e-15);
        assert!((to_ghz(w) - 2.0).abs() < 1e-15);
        assert!((to_mhz(mhz(50.0)) - 50.0).abs() < 1e-12);
        assert!((mhz(1000.0) - ghz(1.0)).abs() < 1e-15);
    }
}
