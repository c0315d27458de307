//! Depth normalization and the seed-centering translation.

use crate::error::{invalid, Result};
use crate::grid::{check_seed, DepthMap, Grid, Seed, INVALID_DEPTH};

/// Per-image min-max normalization of valid depths to `[0, 1]`; invalid
/// pixels map to 1.0 (far). A constant image maps to 0.
pub fn normalize_depth(depth: &DepthMap) -> Grid<f32> {
    let valid = depth.data().iter().copied().filter(|&d| d != INVALID_DEPTH);
    let (lo, hi) = valid.fold((u16::MAX, 0u16), |(lo, hi), d| (lo.min(d), hi.max(d)));
    let span = hi.saturating_sub(lo) as f32;
    depth.map(|d| {
        if d == INVALID_DEPTH {
            1.0
        } else if span > 0.0 {
            (d - lo) as f32 / span
        } else {
            0.0
        }
    })
}

#[inline]
fn shifted(p: usize, offset: isize, extent: usize) -> Option<usize> {
    let q = p as isize + offset;
    (q >= 0 && (q as usize) < extent).then_some(q as usize)
}

/// Translation moving `seed` to the image center:
/// `out(p) = grid(p + seed - center)`, `fill` where that falls outside.
pub fn recenter<T: Copy>(grid: &Grid<T>, seed: Seed, fill: T) -> Result<Grid<T>> {
    check_seed(grid, seed)?;
    let (h, w) = grid.dims();
    let c = Seed::center(h, w);
    let (dr, dc) = (seed.row as isize - c.row as isize, seed.col as isize - c.col as isize);
    Ok(translate(grid, dr, dc, fill))
}

/// Inverse of [`recenter`] on the overlap: `out(p) = grid(p - seed + center)`.
pub fn uncenter<T: Copy>(grid: &Grid<T>, seed: Seed, fill: T) -> Result<Grid<T>> {
    check_seed(grid, seed)?;
    let (h, w) = grid.dims();
    let c = Seed::center(h, w);
    let (dr, dc) = (c.row as isize - seed.row as isize, c.col as isize - seed.col as isize);
    Ok(translate(grid, dr, dc, fill))
}

/// `out(p) = grid(p + (dr, dc))` or `fill`.
fn translate<T: Copy>(grid: &Grid<T>, dr: isize, dc: isize, fill: T) -> Grid<T> {
    let (h, w) = grid.dims();
    Grid::from_fn(h, w, |r, c| match (shifted(r, dr, h), shifted(c, dc, w)) {
        (Some(sr), Some(sc)) => grid.get(sr, sc),
        _ => fill,
    })
}

/// Pads a grid to extents divisible by `multiple`, replicating `fill`; the
/// original occupies the top-left corner.
pub fn pad_to_multiple<T: Copy>(grid: &Grid<T>, multiple: usize, fill: T) -> Result<Grid<T>> {
    if multiple == 0 {
        return Err(invalid("padding multiple must be positive"));
    }
    let (h, w) = grid.dims();
    let (ph, pw) = (h.div_ceil(multiple) * multiple, w.div_ceil(multiple) * multiple);
    Ok(Grid::from_fn(ph, pw, |r, c| {
        if r < h && c < w {
            grid.get(r, c)
        } else {
            fill
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn normalization_range() {
        let d = Grid::new(1, 4, vec![100u16, 200, 0, 150]).unwrap();
        assert_eq!(normalize_depth(&d).data(), &[0.0, 1.0, 1.0, 0.5]);
        let flat = Grid::filled(2, 2, 300u16);
        assert!(normalize_depth(&flat).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn centered_seed_is_identity() {
        let g = Grid::from_fn(6, 8, |r, c| (r * 8 + c) as i32);
        assert_eq!(recenter(&g, Seed::center(6, 8), -1).unwrap(), g);
    }

    #[test]
    fn corner_seed_keeps_top_left_quadrant() {
        let g = Grid::from_fn(8, 8, |r, c| (r * 8 + c) as i32);
        let out = recenter(&g, Seed::new(0, 0), -1).unwrap();
        for r in 0..8 {
            for c in 0..8 {
                let want = if r >= 4 && c >= 4 { g.get(r - 4, c - 4) } else { -1 };
                assert_eq!(out.get(r, c), want);
            }
        }
    }

    #[test]
    fn uncenter_inverts_on_overlap() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let g = Grid::from_fn(10, 12, |_, _| rng.random_range(0..1000));
            let seed = Seed::new(rng.random_range(0..10), rng.random_range(0..12));
            let back = uncenter(&recenter(&g, seed, -1).unwrap(), seed, -1).unwrap();
            let c = Seed::center(10, 12);
            for r in 0..10 {
                for col in 0..12 {
                    // the round trip keeps p iff p - seed + center is inside
                    let rr = r as isize - seed.row as isize + c.row as isize;
                    let cc = col as isize - seed.col as isize + c.col as isize;
                    let inside = (0..10).contains(&rr) && (0..12).contains(&cc);
                    assert_eq!(back.get(r, col), if inside { g.get(r, col) } else { -1 });
                }
            }
        }
    }

    #[test]
    fn seed_out_of_bounds() {
        let g = Grid::filled(4, 4, 0u8);
        assert!(recenter(&g, Seed::new(4, 0), 0).is_err());
    }

    #[test]
    fn padding() {
        let g = Grid::filled(5, 3, 1u8);
        let p = pad_to_multiple(&g, 4, 0).unwrap();
        assert_eq!(p.dims(), (8, 4));
        assert_eq!(p.data().iter().filter(|&&v| v == 1).count(), 15);
    }
}
