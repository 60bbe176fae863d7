//! Conversions between logarithmic and linear units.

/// dBm to watts.
pub fn dbm_to_watt(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0) * 1e-3
}

/// Watts to dBm.
pub fn watt_to_dbm(w: f64) -> f64 {
    10.0 * (w * 1e3).log10()
}

/// dB to a linear power ratio.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// Path-loss in dB at the 1 m reference distance to the linear gain `beta`.
/// A 30 dB loss gives `beta = 1e-3`.
pub fn ref_loss_db_to_gain(loss_db: f64) -> f64 {
    db_to_linear(-loss_db)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips() {
        assert!((dbm_to_watt(40.0) - 10.0).abs() < 1e-12);
        assert!((dbm_to_watt(-75.0) - 3.1622776601683795e-11).abs() < 1e-24);
        assert!((watt_to_dbm(dbm_to_watt(-13.7)) + 13.7).abs() < 1e-12);
        assert!((ref_loss_db_to_gain(30.0) - 1e-3).abs() < 1e-18);
        assert!((linear_to_db(db_to_linear(2.5)) - 2.5).abs() < 1e-12);
    }
}
