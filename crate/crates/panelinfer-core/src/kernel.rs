//! Kernel families for long-run covariance weighting and multiplier design.
//!
//! All kernels are symmetric, equal 1 at 0, and vanish outside [-1, 1]. The
//! quadratic-spectral kernel is truncated to that support; the trapezoid is a
//! flat-top kernel with half-width 1/2.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

/// Supported kernel families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelFamily {
    #[serde(rename = "bartlett")]
    Bartlett,
    #[serde(rename = "parzen")]
    Parzen,
    #[serde(rename = "tukey-hanning")]
    TukeyHanning,
    /// Quadratic spectral, truncated to [-1, 1].
    #[serde(rename = "qs")]
    QsTruncated,
    /// Flat-top trapezoid, flat on [-1/2, 1/2].
    #[serde(rename = "trapezoid")]
    Trapezoid,
}

impl KernelFamily {
    pub const ALL: [KernelFamily; 5] = [
        KernelFamily::Bartlett,
        KernelFamily::Parzen,
        KernelFamily::TukeyHanning,
        KernelFamily::QsTruncated,
        KernelFamily::Trapezoid,
    ];

    /// Characteristic smoothness exponent q of the family (1 for Bartlett,
    /// 2 otherwise).
    pub fn smoothness_order(self) -> u32 {
        match self {
            KernelFamily::Bartlett => 1,
            _ => 2,
        }
    }

    /// Curvature constant C_q: the limit of (1 - a(x)) / |x|^q at 0.
    ///
    /// Zero for the flat-top trapezoid, whose bias vanishes faster than any
    /// fixed polynomial order; the bandwidth formula then degenerates to the
    /// floor guard.
    pub fn curvature_constant(self) -> f64 {
        match self {
            KernelFamily::Bartlett => 1.0,
            KernelFamily::Parzen => 6.0,
            KernelFamily::TukeyHanning => PI * PI / 4.0,
            KernelFamily::QsTruncated => 18.0 * PI * PI / 125.0,
            KernelFamily::Trapezoid => 0.0,
        }
    }

    /// Integral of a(x)^2 over the support.
    pub fn squared_integral(self) -> f64 {
        match self {
            KernelFamily::Bartlett => 2.0 / 3.0,
            KernelFamily::Parzen => 151.0 / 280.0,
            KernelFamily::TukeyHanning => 0.75,
            KernelFamily::Trapezoid => 4.0 / 3.0,
            // No tidy closed form once truncated; integrate numerically.
            KernelFamily::QsTruncated => simpson(|x| {
                let a = kernel_eval(KernelFamily::QsTruncated, x);
                a * a
            }),
        }
    }
}

impl fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            KernelFamily::Bartlett => "bartlett",
            KernelFamily::Parzen => "parzen",
            KernelFamily::TukeyHanning => "tukey-hanning",
            KernelFamily::QsTruncated => "qs",
            KernelFamily::Trapezoid => "trapezoid",
        };
        f.write_str(s)
    }
}

impl FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bartlett" => Ok(KernelFamily::Bartlett),
            "parzen" => Ok(KernelFamily::Parzen),
            "tukey-hanning" => Ok(KernelFamily::TukeyHanning),
            "qs" => Ok(KernelFamily::QsTruncated),
            "trapezoid" => Ok(KernelFamily::Trapezoid),
            other => Err(Error::spec(format!(
                "unknown kernel family '{other}' (expected bartlett|parzen|tukey-hanning|qs|trapezoid)"
            ))),
        }
    }
}

/// Composite Simpson rule on [-1, 1].
fn simpson(f: impl Fn(f64) -> f64) -> f64 {
    let n = 4000usize; // even
    let h = 2.0 / n as f64;
    let mut acc = f(-1.0) + f(1.0);
    for k in 1..n {
        let x = -1.0 + k as f64 * h;
        acc += f(x) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc * h / 3.0
}

/// Kernel value a(x); zero outside [-1, 1].
pub fn kernel_eval(family: KernelFamily, x: f64) -> f64 {
    let ax = x.abs();
    if ax > 1.0 {
        return 0.0;
    }
    match family {
        KernelFamily::Bartlett => 1.0 - ax,
        KernelFamily::Parzen => {
            if ax <= 0.5 {
                1.0 - 6.0 * ax * ax + 6.0 * ax * ax * ax
            } else {
                2.0 * (1.0 - ax).powi(3)
            }
        }
        KernelFamily::TukeyHanning => 0.5 * (1.0 + (PI * ax).cos()),
        KernelFamily::QsTruncated => {
            let z = 1.2 * PI * ax;
            if ax < 1e-3 {
                // Series around 0 avoids 0/0: a(x) = 1 - z^2/10 + O(z^4).
                1.0 - z * z / 10.0
            } else {
                25.0 / (12.0 * PI * PI * ax * ax) * (z.sin() / z - z.cos())
            }
        }
        KernelFamily::Trapezoid => (2.0 * (1.0 - ax)).min(1.0),
    }
}

/// Kernel family plus integer truncation lag.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub bandwidth: usize,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, bandwidth: usize) -> Result<Self> {
        if bandwidth == 0 {
            return Err(Error::spec("kernel bandwidth must be at least 1"));
        }
        Ok(KernelSpec { family, bandwidth })
    }

    pub fn bartlett(bandwidth: usize) -> Result<Self> {
        KernelSpec::new(KernelFamily::Bartlett, bandwidth)
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    /// Weight a(k/m) at integer lag k.
    pub fn weight(&self, lag: usize) -> f64 {
        kernel_eval(self.family, lag as f64 / self.bandwidth as f64)
    }
}

/// Rule-of-thumb truncation lag floor(1.75 T^(1/3)), at least 1.
pub fn default_bandwidth(t_len: usize) -> usize {
    ((1.75 * (t_len as f64).cbrt()).floor() as usize).max(1)
}
