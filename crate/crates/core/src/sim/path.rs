//! Planar drive paths built from straight and circular segments.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Segment {
    Straight { length: f64 },
    /// Positive sweep turns left.
    Arc { radius: f64, sweep_deg: f64 },
}

impl Segment {
    pub fn length(&self) -> f64 {
        match *self {
            Segment::Straight { length } => length,
            Segment::Arc { radius, sweep_deg } => radius * sweep_deg.to_radians().abs(),
        }
    }

    fn curvature(&self) -> f64 {
        match *self {
            Segment::Straight { .. } => 0.0,
            Segment::Arc { radius, sweep_deg } => sweep_deg.signum() / radius,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathConfig {
    pub start: [f64; 2],
    pub heading_deg: f64,
    pub segments: Vec<Segment>,
}

/// Position, heading and curvature at an arc length along the path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathPoint {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub curvature: f64,
}

impl PathConfig {
    pub fn validate(&self) -> Result<(), &'static str> {
        if self.segments.is_empty() {
            return Err("path needs at least one segment");
        }
        for s in &self.segments {
            let ok = match *s {
                Segment::Straight { length } => length.is_finite() && length > 0.0,
                Segment::Arc { radius, sweep_deg } => {
                    radius.is_finite() && radius > 0.0 && sweep_deg.is_finite() && sweep_deg != 0.0
                }
            };
            if !ok {
                return Err("path segments need positive length/radius and nonzero sweep");
            }
        }
        Ok(())
    }

    pub fn length(&self) -> f64 {
        self.segments.iter().map(Segment::length).sum()
    }

    /// Point at arc length `s`, clamped to the path ends.
    pub fn at(&self, s: f64) -> PathPoint {
        let (mut x, mut y) = (self.start[0], self.start[1]);
        let mut h = self.heading_deg.to_radians();
        let mut rest = s.max(0.0);
        let last = self.segments.len() - 1;
        for (i, seg) in self.segments.iter().enumerate() {
            let len = seg.length();
            let d = rest.min(len);
            let k = seg.curvature();
            if k == 0.0 {
                x += d * h.cos();
                y += d * h.sin();
            } else {
                let h1 = h + k * d;
                x += (h1.sin() - h.sin()) / k;
                y -= (h1.cos() - h.cos()) / k;
                h = h1;
            }
            if rest <= len || i == last {
                return PathPoint { x, y, heading: h, curvature: k };
            }
            rest -= len;
        }
        unreachable!("validated path has segments")
    }
}
