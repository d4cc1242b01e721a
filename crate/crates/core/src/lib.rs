pub mod boundary;
pub mod cli;
pub mod curvature;
pub mod error;
pub mod expr;
pub mod jacobi;
pub mod linalg;
pub mod parametrix;
pub mod quadrature;
pub mod riccati;
pub mod weyl;
