use std::f64::consts::PI;

use super::Track;
use crate::error::{Error, Result};

const SPACING: f64 = 0.05;

/// Two straights of length `straight` joined by semicircles of radius `radius`.
pub fn oval(radius: f64, straight: f64, width: f64) -> Track {
    let arc_n = ((PI * radius) / SPACING).ceil() as usize;
    let str_n = ((straight / SPACING).ceil() as usize).max(1);
    let h = straight / 2.0;
    let mut pts = Vec::with_capacity(2 * (arc_n + str_n));
    for k in 0..str_n {
        pts.push((-h + straight * k as f64 / str_n as f64, -radius));
    }
    for k in 0..arc_n {
        let a = -PI / 2.0 + PI * k as f64 / arc_n as f64;
        pts.push((h + radius * a.cos(), radius * a.sin()));
    }
    for k in 0..str_n {
        pts.push((h - straight * k as f64 / str_n as f64, radius));
    }
    for k in 0..arc_n {
        let a = PI / 2.0 + PI * k as f64 / arc_n as f64;
        pts.push((-h + radius * a.cos(), radius * a.sin()));
    }
    Track::new("oval", pts, width, 1).expect("oval geometry is valid")
}

/// Closed polar curve `r(θ) = base·(1 + Σ aₖ cos(kθ + φₖ))`, counter-clockwise.
fn polar(name: &str, base: f64, harmonics: &[(f64, f64, f64)], width: f64, lanes: usize) -> Track {
    let radius = |t: f64| {
        base * (1.0 + harmonics.iter().map(|&(a, k, ph)| a * (k * t + ph).cos()).sum::<f64>())
    };
    // fine pass to measure length, then resample at uniform arclength
    let fine = 20_000;
    let pt = |t: f64| {
        let r = radius(t);
        (r * t.cos(), r * t.sin())
    };
    let mut cum = vec![0.0];
    for i in 1..=fine {
        let (a, b) = (pt(2.0 * PI * (i - 1) as f64 / fine as f64), pt(2.0 * PI * i as f64 / fine as f64));
        cum.push(cum[i - 1] + (b.0 - a.0).hypot(b.1 - a.1));
    }
    let total = cum[fine];
    let n = (total / SPACING).round() as usize;
    let mut pts = Vec::with_capacity(n);
    let mut j = 0;
    for k in 0..n {
        let s = total * k as f64 / n as f64;
        while cum[j + 1] < s {
            j += 1;
        }
        let f = (s - cum[j]) / (cum[j + 1] - cum[j]);
        let t = 2.0 * PI * (j as f64 + f) / fine as f64;
        pts.push(pt(t));
    }
    Track::new(name, pts, width, lanes).expect("builtin geometry is valid")
}

/// Training track: a lopsided loop with turns in both directions.
pub fn loop_a() -> Track {
    polar(
        "loop-A",
        2.4,
        &[(0.22, 2.0, 0.0), (0.07, 3.0, 0.6)],
        0.6,
        1,
    )
}

/// Longer two-lane transfer track with more curvature.
pub fn complex_b() -> Track {
    polar(
        "complex-B",
        3.6,
        &[(0.12, 3.0, 0.3), (0.05, 5.0, 1.1), (0.04, 2.0, 0.0)],
        0.9,
        2,
    )
}

pub fn builtin_names() -> &'static [&'static str] {
    &["oval", "loop-A", "complex-B"]
}

pub fn builtin_track(name: &str) -> Result<Track> {
    match name {
        "oval" => Ok(oval(1.5, 3.0, 0.6)),
        "loop-A" | "loop-a" | "loop_a" => Ok(loop_a()),
        "complex-B" | "complex-b" | "complex_b" => Ok(complex_b()),
        other => Err(Error::Config(format!(
            "unknown track {other:?} (builtins: {})",
            builtin_names().join(", ")
        ))),
    }
}
