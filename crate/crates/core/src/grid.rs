//! Per-pixel grids shared by every stage: depth maps, instance labels,
//! contour maps, binary masks and seeds.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Result};

/// Row-major `height x width` grid.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Grid<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Copy> Grid<T> {
    pub fn new(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width {
            return Err(shape_err(format!(
                "grid data has {} values, expected {height}x{width}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: T) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: T) {
        self.data[row * self.width + col] = value;
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Grid<U> {
        Grid {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn same_dims<U>(&self, other: &Grid<U>) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn expect_dims(&self, height: usize, width: usize) -> Result<()> {
        if (self.height, self.width) != (height, width) {
            return Err(shape_err(format!(
                "expected a {height}x{width} grid, got {}x{}",
                self.height, self.width
            )));
        }
        Ok(())
    }

    pub fn contains(&self, seed: Seed) -> bool {
        seed.row < self.height && seed.col < self.width
    }

    /// Cyclic translation: `out(p) = self(p - shift)`.
    pub fn roll(&self, dr: isize, dc: isize) -> Self {
        let (h, w) = (self.height as isize, self.width as isize);
        Self::from_fn(self.height, self.width, |r, c| {
            let sr = (r as isize - dr).rem_euclid(h) as usize;
            let sc = (c as isize - dc).rem_euclid(w) as usize;
            self.get(sr, sc)
        })
    }
}

/// Depth in integer millimeters; 0 marks an invalid measurement.
pub type DepthMap = Grid<u16>;
/// Instance id per pixel; 0 is the bin floor.
pub type InstanceLabelMap = Grid<u16>;
/// Boundary probability per pixel, in `[0, 1]`.
pub type ContourMap = Grid<f32>;

/// Sentinel for pixels without a depth measurement.
pub const INVALID_DEPTH: u16 = 0;

/// A seed pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Seed {
    pub row: usize,
    pub col: usize,
}

impl Seed {
    pub fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }

    /// Image center used as the recentering target (`(h / 2, w / 2)`).
    pub fn center(height: usize, width: usize) -> Self {
        Self::new(height / 2, width / 2)
    }
}

/// Boolean per-pixel mask, optionally tagged with the instance it belongs to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub grid: Grid<bool>,
    pub owner: Option<u16>,
}

impl BinaryMask {
    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            grid: Grid::filled(height, width, false),
            owner: None,
        }
    }

    pub fn from_grid(grid: Grid<bool>) -> Self {
        Self { grid, owner: None }
    }

    pub fn with_owner(mut self, owner: u16) -> Self {
        self.owner = Some(owner);
        self
    }

    pub fn dims(&self) -> (usize, usize) {
        self.grid.dims()
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.grid.get(row, col)
    }

    pub fn area(&self) -> usize {
        self.grid.data().iter().filter(|&&v| v).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.grid.data().iter().any(|&v| v)
    }

    pub fn pixels(&self) -> impl Iterator<Item = Seed> + '_ {
        let w = self.grid.width();
        self.grid
            .data()
            .iter()
            .enumerate()
            .filter(|(_, &v)| v)
            .map(move |(i, _)| Seed::new(i / w, i % w))
    }

    pub fn intersection_area(&self, other: &Self) -> usize {
        self.grid
            .data()
            .iter()
            .zip(other.grid.data())
            .filter(|(&a, &b)| a && b)
            .count()
    }

    pub fn union_area(&self, other: &Self) -> usize {
        self.grid
            .data()
            .iter()
            .zip(other.grid.data())
            .filter(|(&a, &b)| a || b)
            .count()
    }

    /// Intersection over union; two empty masks have IoU 0.
    pub fn iou(&self, other: &Self) -> f64 {
        let union = self.union_area(other);
        if union == 0 {
            0.0
        } else {
            self.intersection_area(other) as f64 / union as f64
        }
    }

    /// Mask pixels with at least one 8-neighbor outside the mask; pixels on
    /// the image border count as adjacent to the outside.
    pub fn boundary(&self) -> Self {
        let (h, w) = self.dims();
        let g = &self.grid;
        let grid = Grid::from_fn(h, w, |r, c| {
            if !g.get(r, c) {
                return false;
            }
            for dr in -1isize..=1 {
                for dc in -1isize..=1 {
                    if dr == 0 && dc == 0 {
                        continue;
                    }
                    let (nr, nc) = (r as isize + dr, c as isize + dc);
                    if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                        return true;
                    }
                    if !g.get(nr as usize, nc as usize) {
                        return true;
                    }
                }
            }
            false
        });
        Self {
            grid,
            owner: self.owner,
        }
    }
}

/// 4-connected component of `inside` containing `seed`; empty when the seed
/// itself is outside.
pub fn flood_fill4(inside: &Grid<bool>, seed: Seed) -> Grid<bool> {
    let (h, w) = inside.dims();
    let mut out = Grid::filled(h, w, false);
    if !inside.contains(seed) || !inside.get(seed.row, seed.col) {
        return out;
    }
    let mut queue = VecDeque::from([seed]);
    out.set(seed.row, seed.col, true);
    while let Some(Seed { row, col }) = queue.pop_front() {
        let neighbors = [
            (row.wrapping_sub(1), col),
            (row + 1, col),
            (row, col.wrapping_sub(1)),
            (row, col + 1),
        ];
        for (r, c) in neighbors {
            if r < h && c < w && inside.get(r, c) && !out.get(r, c) {
                out.set(r, c, true);
                queue.push_back(Seed::new(r, c));
            }
        }
    }
    out
}

/// Number of 4-connected components of the `true` pixels.
pub fn count_components4(mask: &Grid<bool>) -> usize {
    let (h, w) = mask.dims();
    let mut seen = Grid::filled(h, w, false);
    let mut count = 0;
    for r in 0..h {
        for c in 0..w {
            if mask.get(r, c) && !seen.get(r, c) {
                count += 1;
                let comp = flood_fill4(mask, Seed::new(r, c));
                for (s, &v) in seen.data_mut().iter_mut().zip(comp.data()) {
                    *s |= v;
                }
            }
        }
    }
    count
}

pub(crate) fn check_seed<T: Copy>(grid: &Grid<T>, seed: Seed) -> Result<()> {
    if grid.contains(seed) {
        Ok(())
    } else {
        Err(invalid(format!(
            "seed ({}, {}) outside image bounds 0..{} x 0..{}",
            seed.row,
            seed.col,
            grid.height(),
            grid.width()
        )))
    }
}
