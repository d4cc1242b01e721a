//! Runs every code sample of the guide as a doctest.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/curvature-profiles.md")]
pub mod curvature_profiles {}

#[doc = include_str!("../../../book/src/jacobi-fields.md")]
pub mod jacobi_fields {}

#[doc = include_str!("../../../book/src/riccati-comparison.md")]
pub mod riccati_comparison {}

#[doc = include_str!("../../../book/src/boundary-fields.md")]
pub mod boundary_fields {}

#[doc = include_str!("../../../book/src/certificate.md")]
pub mod certificate {}

#[doc = include_str!("../../../book/src/parametrix.md")]
pub mod parametrix {}

#[doc = include_str!("../../../book/src/weyl-counting.md")]
pub mod weyl_counting {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
