use statrs::function::erf::erfc;

use crate::error::{invalid, Result};

/// Symbol error rate of square M-QAM on an AWGN channel with
/// symbol SNR `es_n0` (linear), nearest-neighbour detection.
pub fn qam_ser_awgn(order: usize, es_n0: f64) -> Result<f64> {
    let side = (order as f64).sqrt().round() as usize;
    if order < 4 || side * side != order {
        return Err(invalid(format!("closed-form SER needs square QAM, got {order}")));
    }
    if !(es_n0 >= 0.0) {
        return Err(invalid(format!("SNR must be non-negative, got {es_n0}")));
    }
    let m = order as f64;
    let q = 0.5 * erfc((3.0 * es_n0 / (m - 1.0) / 2.0).sqrt());
    let p = 2.0 * (1.0 - 1.0 / m.sqrt()) * q;
    Ok(1.0 - (1.0 - p) * (1.0 - p))
}
