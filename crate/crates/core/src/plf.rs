//! Piecewise-linear concave functions on `[0, +inf)`.
//!
//! These represent energy envelopes `λ ↦ E_λ(C*_λ)`: each linear piece is the
//! energy of one optimal cut. Only the operations needed by the bottom-up
//! scale computation are provided: sum, min with a line, evaluation and exact
//! integration against a reference line.

use std::io::{self, Write};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PlfError {
    #[error("line slope {line_slope} is not below the final slope {last_slope}")]
    SlopePrecondition { line_slope: f64, last_slope: f64 },
}

/// `intercept + slope * λ`
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Line {
    pub intercept: f64,
    pub slope: f64,
}

impl Line {
    pub fn new(intercept: f64, slope: f64) -> Self {
        Self { intercept, slope }
    }

    pub fn eval(&self, lambda: f64) -> f64 {
        self.intercept + self.slope * lambda
    }
}

/// Tolerance under which two breakpoints are considered equal.
pub fn breakpoint_tolerance(lambda: f64) -> f64 {
    1e-12 * lambda.abs().max(1.0)
}

/// Concave piecewise-linear function. Piece `i` covers
/// `[breaks[i-1], breaks[i]]` with `breaks[-1] = 0` and the last piece
/// extending to infinity. Adjacent pieces never share a slope.
#[derive(Clone, Debug, PartialEq)]
pub struct PlConcave {
    breaks: Vec<f64>,
    pieces: Vec<Line>,
}

impl PlConcave {
    pub fn from_line(intercept: f64, slope: f64) -> Self {
        Self {
            breaks: Vec::new(),
            pieces: vec![Line::new(intercept, slope)],
        }
    }

    pub fn zero() -> Self {
        Self::from_line(0.0, 0.0)
    }

    /// Builds a function from raw parts, dropping breakpoints between pieces
    /// of equal slope. Returns `None` unless `pieces.len() == breaks.len() + 1`
    /// and breakpoints are positive and increasing.
    pub fn from_parts(breaks: Vec<f64>, pieces: Vec<Line>) -> Option<Self> {
        if pieces.len() != breaks.len() + 1 || breaks.iter().any(|&b| b <= 0.0 || !b.is_finite()) {
            return None;
        }
        if breaks.windows(2).any(|w| w[0] >= w[1]) {
            return None;
        }
        let mut f = Self { breaks, pieces };
        f.coalesce();
        Some(f)
    }

    fn coalesce(&mut self) {
        let mut breaks = Vec::with_capacity(self.breaks.len());
        let mut pieces = vec![self.pieces[0]];
        for (b, p) in self.breaks.iter().zip(&self.pieces[1..]) {
            if p.slope == pieces.last().unwrap().slope {
                continue;
            }
            breaks.push(*b);
            pieces.push(*p);
        }
        self.breaks = breaks;
        self.pieces = pieces;
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breaks
    }

    pub fn pieces(&self) -> &[Line] {
        &self.pieces
    }

    pub fn last_slope(&self) -> f64 {
        self.pieces.last().unwrap().slope
    }

    /// Slopes strictly decreasing from one piece to the next.
    pub fn is_concave(&self) -> bool {
        self.pieces.windows(2).all(|w| w[1].slope < w[0].slope)
    }

    fn piece_index(&self, lambda: f64) -> usize {
        self.breaks.partition_point(|&b| b < lambda)
    }

    pub fn eval(&self, lambda: f64) -> f64 {
        self.pieces[self.piece_index(lambda)].eval(lambda)
    }

    /// Slope of the piece to the right of `lambda`.
    pub fn slope_after(&self, lambda: f64) -> f64 {
        self.pieces[self.breaks.partition_point(|&b| b <= lambda)].slope
    }

    /// Pointwise sum.
    pub fn sum(&self, other: &PlConcave) -> PlConcave {
        let mut merged: Vec<f64> = Vec::with_capacity(self.breaks.len() + other.breaks.len());
        let (mut i, mut j) = (0, 0);
        while i < self.breaks.len() || j < other.breaks.len() {
            let next = match (self.breaks.get(i), other.breaks.get(j)) {
                (Some(&a), Some(&b)) if a <= b => {
                    i += 1;
                    a
                }
                (Some(_), Some(&b)) => {
                    j += 1;
                    b
                }
                (Some(&a), None) => {
                    i += 1;
                    a
                }
                (None, Some(&b)) => {
                    j += 1;
                    b
                }
                (None, None) => unreachable!(),
            };
            match merged.last() {
                Some(&last) if next - last <= breakpoint_tolerance(last) => {}
                _ => merged.push(next),
            }
        }
        let mut pieces = Vec::with_capacity(merged.len() + 1);
        let mut left = 0.0;
        for k in 0..=merged.len() {
            let probe = match merged.get(k) {
                Some(&right) => 0.5 * (left + right),
                None => left + 1.0,
            };
            let a = self.pieces[self.piece_index(probe)];
            let b = other.pieces[other.piece_index(probe)];
            pieces.push(Line::new(a.intercept + b.intercept, a.slope + b.slope));
            if let Some(&right) = merged.get(k) {
                left = right;
            }
        }
        let mut f = PlConcave { breaks: merged, pieces };
        f.coalesce();
        f
    }

    /// Pointwise minimum with the line `intercept + slope * λ`, together with
    /// the smallest `λ` at which the line is at or below `self`.
    ///
    /// Requires `slope` strictly below the final slope, so the line stays
    /// below `self` from the crossing on.
    pub fn min_with_line(&self, intercept: f64, slope: f64) -> Result<(PlConcave, f64), PlfError> {
        let last = self.last_slope();
        if slope.partial_cmp(&last) != Some(std::cmp::Ordering::Less) {
            return Err(PlfError::SlopePrecondition {
                line_slope: slope,
                last_slope: last,
            });
        }
        let line = Line::new(intercept, slope);
        if intercept <= self.pieces[0].intercept {
            return Ok((PlConcave::from_line(intercept, slope), 0.0));
        }
        // self - line is increasing; find the piece where it reaches zero
        let mut i = 0;
        while i < self.breaks.len() {
            let right = self.breaks[i];
            if self.pieces[i].eval(right) >= line.eval(right) {
                break;
            }
            i += 1;
        }
        let p = self.pieces[i];
        let left = if i == 0 { 0.0 } else { self.breaks[i - 1] };
        let mut cross = (intercept - p.intercept) / (p.slope - slope);
        if let Some(&right) = self.breaks.get(i) {
            cross = cross.min(right);
            if right - cross <= breakpoint_tolerance(right) {
                cross = right;
            }
        }
        cross = cross.max(left);
        let (mut breaks, mut pieces) = if i > 0 && cross - left <= breakpoint_tolerance(left) {
            // crossing lands on the left breakpoint: piece i vanishes
            cross = left;
            (self.breaks[..i - 1].to_vec(), self.pieces[..i].to_vec())
        } else {
            (self.breaks[..i].to_vec(), self.pieces[..=i].to_vec())
        };
        breaks.push(cross);
        pieces.push(line);
        let mut f = PlConcave { breaks, pieces };
        f.coalesce();
        Ok((f, cross))
    }

    /// `∫_lo^hi (reference(λ) - self(λ)) dλ`, integrated exactly piece by piece.
    pub fn area_above(&self, reference: Line, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return 0.0;
        }
        let mut area = 0.0;
        let mut left: f64 = 0.0;
        for (k, p) in self.pieces.iter().enumerate() {
            let right = self.breaks.get(k).copied().unwrap_or(f64::INFINITY);
            let (a, b) = (left.max(lo), right.min(hi));
            if b > a {
                let di = reference.intercept - p.intercept;
                let ds = reference.slope - p.slope;
                area += di * (b - a) + 0.5 * ds * (b * b - a * a);
            }
            left = right;
            if left >= hi {
                break;
            }
        }
        area
    }

    /// `(λ, value, slope)` at `λ = 0` and at every breakpoint; the slope is
    /// that of the piece starting there.
    pub fn csv_rows(&self) -> Vec<(f64, f64, f64)> {
        std::iter::once(0.0)
            .chain(self.breaks.iter().copied())
            .zip(&self.pieces)
            .map(|(l, p)| (l, p.eval(l), p.slope))
            .collect()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "lambda,value,slope")?;
        for (l, v, s) in self.csv_rows() {
            writeln!(out, "{l},{v},{s}")?;
        }
        Ok(())
    }
}
