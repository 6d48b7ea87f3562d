//! Shared fixtures for unit tests.

use crate::linalg::{cr, CMat};
use crate::imps::SiteTensor;

pub fn coin_tensor(p: f64) -> SiteTensor {
    SiteTensor::new(
        vec!["0".into(), "1".into()],
        vec![
            CMat::from_element(1, 1, cr(p.sqrt())),
            CMat::from_element(1, 1, cr((1.0 - p).sqrt())),
        ],
    )
    .unwrap()
}

/// Two-state tensor: state A emits 0 (stay) or 1 (to B) with probability 1/2
/// each; state B always emits 0 and returns to A. Column is the source state,
/// row the target.
pub fn golden_mean_tensor() -> SiteTensor {
    let r = 0.5f64.sqrt();
    let a0 = CMat::from_row_slice(2, 2, &[cr(r), cr(1.0), cr(0.0), cr(0.0)]);
    let a1 = CMat::from_row_slice(2, 2, &[cr(0.0), cr(0.0), cr(r), cr(0.0)]);
    SiteTensor::new(vec!["0".into(), "1".into()], vec![a0, a1]).unwrap()
}
