//! Rasterized circular neighborhoods.

/// Cell offsets `(dy, dx)` with `dy^2 + dx^2 <= radius^2`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Disk {
    radius: f64,
    reach: usize,
    /// Per row `dy = -reach..=reach`, the half width of the span.
    half_widths: Vec<isize>,
    offsets: Vec<(isize, isize)>,
}

impl Disk {
    pub fn new(radius: f64) -> Self {
        let radius = radius.max(0.0);
        let reach = radius.floor() as usize;
        let r2 = radius * radius;
        let mut half_widths = Vec::with_capacity(2 * reach + 1);
        let mut offsets = Vec::new();
        for dy in -(reach as isize)..=reach as isize {
            let rest = r2 - (dy * dy) as f64;
            let mut w = rest.max(0.0).sqrt().floor() as isize;
            // Guard against sqrt rounding at exact squares.
            while ((w + 1) * (w + 1)) as f64 <= rest {
                w += 1;
            }
            while w > 0 && (w * w) as f64 > rest {
                w -= 1;
            }
            half_widths.push(w);
            for dx in -w..=w {
                offsets.push((dy, dx));
            }
        }
        Self {
            radius,
            reach,
            half_widths,
            offsets,
        }
    }

    /// Disk covering `meters` at `resolution` m/cell, radius rounded up to
    /// whole cells.
    pub fn from_meters(meters: f64, resolution: f64) -> Self {
        Self::new((meters / resolution - 1e-9).ceil().max(0.0))
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Largest `|dy|` (and `|dx|`) in the disk.
    pub fn reach(&self) -> usize {
        self.reach
    }

    pub fn offsets(&self) -> &[(isize, isize)] {
        &self.offsets
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    #[inline]
    pub fn contains(&self, dy: isize, dx: isize) -> bool {
        let r = self.reach as isize;
        if dy < -r || dy > r {
            return false;
        }
        dx.abs() <= self.half_widths[(dy + r) as usize]
    }

    /// Offsets in this disk that are not in the same disk moved by `(sy, sx)`.
    pub fn difference_with_shifted(&self, shifts: &[(isize, isize)]) -> Vec<(isize, isize)> {
        self.offsets
            .iter()
            .copied()
            .filter(|&(dy, dx)| shifts.iter().all(|&(sy, sx)| !self.contains(dy - sy, dx - sx)))
            .collect()
    }
}
