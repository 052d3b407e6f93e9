//! Quick internal consistency checks run by `voxfuse selftest`.

use nalgebra::Vector3;
use serde::Serialize;

use crate::meshing::{marching_cubes, radial_errors, sphere_tsdf_grid, McParams};
use crate::nnops::dense_oracle_suite;
use crate::nnops::gradcheck::{grad_check_suite, GradCheckOp, DEFAULT_STEP};

#[derive(Clone, Debug, Serialize)]
pub struct SelftestCheck {
    pub name: String,
    pub value: f64,
    pub limit: f64,
    pub passed: bool,
}

fn check(name: impl Into<String>, value: f64, limit: f64) -> SelftestCheck {
    SelftestCheck {
        name: name.into(),
        value,
        limit,
        passed: value < limit,
    }
}

/// Gradient checks on a handful of instances per op, sparse convolution
/// against the dense reference, and marching cubes on a sphere.
pub fn run_selftest() -> Vec<SelftestCheck> {
    let mut out: Vec<SelftestCheck> = GradCheckOp::ALL
        .into_iter()
        .map(|op| check(format!("grad {op}"), grad_check_suite(op, 10, 1000, DEFAULT_STEP, Some(64)), 1e-4))
        .collect();
    out.push(check("sparse conv vs dense", dense_oracle_suite(64, 0, 8), 1e-6));
    let vs = 0.04;
    let center = Vector3::new(0.011, -0.007, 0.013);
    let mesh = marching_cubes(&sphere_tsdf_grid(0.5, vs, 0.12, center), McParams::default());
    let (mean, max) = if mesh.is_empty() {
        (f64::INFINITY, f64::INFINITY)
    } else {
        radial_errors(&mesh, &center, 0.5)
    };
    out.push(check("mc sphere mean radial", mean, vs / 2.0));
    out.push(check("mc sphere max radial", max, vs));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass() {
        let checks = run_selftest();
        assert_eq!(checks.len(), 8);
        for c in &checks {
            assert!(c.passed, "{c:?}");
        }
    }
}
