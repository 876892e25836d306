//! Spatial test functions `l ∈ C_0²(]0,1[)` with their second derivatives.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Shape {
    /// `x²(1-x)²` on the whole interval.
    Polynomial,
    /// `c·((x-a)(b-x))³` on `[a, b]`, scaled to unit height.
    CubicBump { a: f64, b: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpaceWindow {
    name: &'static str,
    shape: Shape,
}

pub const WINDOW_NAMES: [&str; 4] = ["poly_bump", "left_bump", "center_bump", "right_bump"];

pub fn window(name: &str) -> Result<SpaceWindow> {
    let (name, shape) = match name {
        "poly_bump" => ("poly_bump", Shape::Polynomial),
        "left_bump" => ("left_bump", Shape::CubicBump { a: 0.1, b: 0.6 }),
        "center_bump" => ("center_bump", Shape::CubicBump { a: 0.25, b: 0.75 }),
        "right_bump" => ("right_bump", Shape::CubicBump { a: 0.4, b: 0.9 }),
        other => return Err(Error::UnknownWindow(other.to_owned())),
    };
    Ok(SpaceWindow { name, shape })
}

impl SpaceWindow {
    pub fn name(&self) -> &'static str {
        self.name
    }

    /// Closed interval outside of which `l` vanishes identically.
    pub fn support(&self) -> (f64, f64) {
        match self.shape {
            Shape::Polynomial => (0.0, 1.0),
            Shape::CubicBump { a, b } => (a, b),
        }
    }

    pub fn l(&self, x: f64) -> f64 {
        match self.shape {
            Shape::Polynomial => {
                let y = x * (1.0 - x);
                y * y
            }
            Shape::CubicBump { a, b } => {
                if x <= a || x >= b {
                    return 0.0;
                }
                let p = (x - a) * (b - x);
                bump_scale(a, b) * p * p * p
            }
        }
    }

    pub fn l2(&self, x: f64) -> f64 {
        match self.shape {
            Shape::Polynomial => 2.0 - 12.0 * x + 12.0 * x * x,
            Shape::CubicBump { a, b } => {
                if x <= a || x >= b {
                    return 0.0;
                }
                let p = (x - a) * (b - x);
                let dp = (a + b) - 2.0 * x;
                bump_scale(a, b) * (6.0 * p * dp * dp - 6.0 * p * p)
            }
        }
    }
}

fn bump_scale(a: f64, b: f64) -> f64 {
    let half = 0.5 * (b - a);
    1.0 / half.powi(6)
}
