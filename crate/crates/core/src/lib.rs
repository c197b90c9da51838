pub mod adaptivity;
pub mod analysis;
pub mod function;
pub mod linalg;
pub mod mesh;
pub mod operators;
pub mod presets;
pub mod quadrature;
pub mod residual;
pub mod solver;
pub mod space;
