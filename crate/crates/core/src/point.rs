use std::fmt;

/// Largest state or observation dimension handled by the crate.
pub const MAX_DIM: usize = 2;

/// A point of `R^d` with `d <= MAX_DIM`, stored inline so the hot loops never
/// allocate.
#[derive(Clone, Copy, PartialEq)]
pub struct Point {
    coords: [f64; MAX_DIM],
    dim: u8,
}

impl Point {
    pub fn new1(x: f64) -> Self {
        Self {
            coords: [x, 0.0],
            dim: 1,
        }
    }

    pub fn new2(x: f64, y: f64) -> Self {
        Self {
            coords: [x, y],
            dim: 2,
        }
    }

    /// Builds a point from a slice of length 1 or 2.
    pub fn from_slice(values: &[f64]) -> Option<Self> {
        match values {
            [x] => Some(Self::new1(*x)),
            [x, y] => Some(Self::new2(*x, *y)),
            _ => None,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.coords[..self.dim as usize]
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.coords[..self.dim as usize]
    }

    pub fn x(&self) -> f64 {
        self.coords[0]
    }

    /// Second coordinate; zero for one-dimensional points.
    pub fn y(&self) -> f64 {
        self.coords[1]
    }

    pub fn is_finite(&self) -> bool {
        self.as_slice().iter().all(|c| c.is_finite())
    }

    /// Sup-norm distance. Panics in debug builds on a dimension mismatch.
    pub fn sup_distance(&self, other: &Point) -> f64 {
        debug_assert_eq!(self.dim, other.dim);
        self.as_slice()
            .iter()
            .zip(other.as_slice())
            .fold(0.0_f64, |acc, (a, b)| acc.max((a - b).abs()))
    }

    pub fn euclidean_distance(&self, other: &Point) -> f64 {
        debug_assert_eq!(self.dim, other.dim);
        self.as_slice()
            .iter()
            .zip(other.as_slice())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

impl fmt::Debug for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.as_slice())
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.dim {
            1 => write!(f, "({})", self.coords[0]),
            _ => write!(f, "({}, {})", self.coords[0], self.coords[1]),
        }
    }
}
