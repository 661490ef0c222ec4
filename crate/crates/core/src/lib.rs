pub mod analysis;
pub mod curvature;
pub mod io;
pub mod linalg;
pub mod loss;
pub mod nn;
pub mod pipeline;
pub mod robustness;
