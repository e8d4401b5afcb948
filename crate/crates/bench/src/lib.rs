//! Shared inputs for the benchmarks.

use fairsched::{FeasibleRegion, ProcessModel, SensorCosts};
use nalgebra::{dmatrix, DMatrix};

/// Five two-state processes with `C = R = I`; the first three are unstable.
pub fn five_processes() -> Vec<ProcessModel> {
    let i2 = DMatrix::<f64>::identity(2, 2);
    [
        (dmatrix![1.2, 0.0; 0.0, 0.0], dmatrix![4.0, 0.0; 0.0, 1.0]),
        (dmatrix![1.1, 1.0; 0.0, 1.0], dmatrix![1.0, 0.0; 0.0, 4.0]),
        (dmatrix![1.2, 1.0; 0.0, 0.8], dmatrix![1.0, 0.0; 0.0, 4.0]),
        (dmatrix![0.8, 0.6; 0.0, 0.9], dmatrix![16.0, 0.0; 0.0, 1.0]),
        (dmatrix![0.3, 1.0; 0.0, 0.1], dmatrix![0.3, 0.0; 0.0, 1.2]),
    ]
    .into_iter()
    .map(|(a, q)| ProcessModel::new(a, q, i2.clone(), i2.clone()).expect("valid process"))
    .collect()
}

pub fn five_process_costs(eta: f64) -> SensorCosts {
    SensorCosts::new(five_processes(), &[eta; 5], 1e-10).expect("curves build")
}

pub fn five_process_region() -> FeasibleRegion {
    FeasibleRegion::rates(2.0, vec![0.0; 5]).expect("valid region")
}
