//! Python bindings: scene generation, ground truth, the network and metrics.
//! Images cross the boundary as lists of rows.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use dualseg::dataset::{build_scene, generate_dataset, DatasetConfig, SplitConfig};
use dualseg::dualnet::{logistic_term, ArchConfig};
use dualseg::grid::{BinaryMask, Grid, Seed};
use dualseg::groundtruth::{derive_contours, instance_masks, seed_to_mask};
use dualseg::inference::{proposals_grid, segment_at, GridOptions};
use dualseg::metrics::{match_boundaries, synthetic_gap};
use dualseg::pilegen::PileMode;
use dualseg::rle::MaskRle;

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_grid<T: Copy>(rows: Vec<Vec<T>>) -> PyResult<Grid<T>> {
    let h = rows.len();
    let w = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != w) {
        return Err(PyValueError::new_err("rows must all have the same length"));
    }
    Grid::new(h, w, rows.into_iter().flatten().collect()).map_err(err)
}

fn to_rows<T: Copy>(g: &Grid<T>) -> Vec<Vec<T>> {
    g.data().chunks(g.width().max(1)).take(g.height()).map(<[T]>::to_vec).collect()
}

fn mode(name: &str) -> PyResult<PileMode> {
    match name {
        "multi" => Ok(PileMode::Multi),
        "mono" => Ok(PileMode::Mono),
        other => Err(PyValueError::new_err(format!("mode must be 'multi' or 'mono', got {other:?}"))),
    }
}

/// Generates one scene; returns a dict with `depth`, `labels` and `id`.
#[pyfunction]
#[pyo3(signature = (seed, index, mode_name = "multi"))]
fn generate_scene<'py>(py: Python<'py>, seed: u64, index: u64, mode_name: &str) -> PyResult<Bound<'py, PyDict>> {
    let config = DatasetConfig {
        seed,
        ..DatasetConfig::default()
    };
    let split = SplitConfig::new("scene", 1, mode(mode_name)?);
    let g = build_scene(&config, &split, index).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("id", g.meta.id.clone())?;
    d.set_item("depth", to_rows(&g.depth))?;
    d.set_item("labels", to_rows(&g.scene.labels))?;
    Ok(d)
}

/// Writes a dataset directory and returns the number of scenes.
#[pyfunction]
#[pyo3(signature = (out, count, mode_name = "multi", seed = 0))]
fn generate(out: &str, count: usize, mode_name: &str, seed: u64) -> PyResult<usize> {
    let config = DatasetConfig {
        seed,
        splits: vec![SplitConfig::new("train", count, mode(mode_name)?)],
        ..DatasetConfig::default()
    };
    Ok(generate_dataset(&config, out).map_err(err)?.scenes.len())
}

#[pyfunction]
fn contours(labels: Vec<Vec<u16>>) -> PyResult<Vec<Vec<f32>>> {
    Ok(to_rows(&derive_contours(&to_grid(labels)?)))
}

/// Instance ids paired with their visible masks.
#[pyfunction]
fn masks(labels: Vec<Vec<u16>>) -> PyResult<Vec<(u16, Vec<Vec<bool>>)>> {
    Ok(instance_masks(&to_grid(labels)?)
        .into_iter()
        .map(|m| (m.owner.unwrap_or(0), to_rows(&m.grid)))
        .collect())
}

#[pyfunction]
#[pyo3(signature = (contour_map, row, col, threshold = 0.5))]
fn mask_from_contours(contour_map: Vec<Vec<f32>>, row: usize, col: usize, threshold: f32) -> PyResult<Vec<Vec<bool>>> {
    let m = seed_to_mask(&to_grid(contour_map)?, Seed::new(row, col), threshold).map_err(err)?;
    Ok(to_rows(&m.grid))
}

/// Weighted logistic loss of a logit map against a 0/1 target.
#[pyfunction]
fn logistic_loss(weight: f64, target: Vec<Vec<f64>>, logits: Vec<Vec<f64>>) -> PyResult<f64> {
    Ok(logistic_term(weight, &to_grid(target)?, &to_grid(logits)?).map_err(err)?.0)
}

#[pyfunction]
fn boundary_matches(pred: Vec<Vec<bool>>, gt: Vec<Vec<bool>>, tol: f64) -> PyResult<usize> {
    Ok(match_boundaries(&to_grid(pred)?, &to_grid(gt)?, tol).map_err(err)?.size())
}

#[pyfunction]
fn iou(a: Vec<Vec<bool>>, b: Vec<Vec<bool>>) -> PyResult<f64> {
    let (a, b) = (to_grid(a)?, to_grid(b)?);
    if !a.same_dims(&b) {
        return Err(PyValueError::new_err("masks differ in size"));
    }
    Ok(BinaryMask::from_grid(a).iou(&BinaryMask::from_grid(b)))
}

#[pyfunction]
fn gap(a: f64, b: f64) -> f64 {
    synthetic_gap(a, b)
}

/// Encodes 8-bit values as `{"width", "height", "runs"}`.
#[pyfunction]
fn rle_encode<'py>(py: Python<'py>, values: Vec<Vec<u8>>) -> PyResult<Bound<'py, PyDict>> {
    let rle = MaskRle::encode(&to_grid(values)?);
    let d = PyDict::new(py);
    d.set_item("width", rle.width)?;
    d.set_item("height", rle.height)?;
    d.set_item("runs", rle.runs)?;
    Ok(d)
}

#[pyfunction]
fn rle_decode(width: usize, height: usize, runs: Vec<u32>) -> PyResult<Vec<Vec<u16>>> {
    // u16 so rows come back as int lists rather than bytes
    let g = MaskRle { width, height, runs }.decode().map_err(err)?;
    Ok(to_rows(&g.map(u16::from)))
}

/// A network snapshot.
#[pyclass]
struct Model {
    inner: dualseg::inference::Model,
}

#[pymethods]
impl Model {
    /// Loads an SDOL checkpoint.
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: dualseg::inference::Model::load(path).map_err(err)?,
        })
    }

    /// Fresh default network with seeded initialization.
    #[staticmethod]
    #[pyo3(signature = (seed = 0))]
    fn init(seed: u64) -> PyResult<Self> {
        let params = ArchConfig::default().init_params(seed).map_err(err)?;
        Ok(Self {
            inner: dualseg::inference::Model::new(params).map_err(err)?,
        })
    }

    #[getter]
    fn architecture(&self) -> String {
        self.inner.arch.header()
    }

    #[getter]
    fn checkpoint_sha256(&self) -> String {
        self.inner.checkpoint_hash()
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        self.inner.params.num_scalars()
    }

    /// Segments the object under `(row, col)`; returns a dict with `mask`,
    /// `probabilities`, `edges`, `confidence` and `empty`.
    #[pyo3(signature = (depth, row, col, threshold = 0.8))]
    fn segment<'py>(
        &self,
        py: Python<'py>,
        depth: Vec<Vec<u16>>,
        row: usize,
        col: usize,
        threshold: f32,
    ) -> PyResult<Bound<'py, PyDict>> {
        let s = segment_at(&self.inner, &to_grid(depth)?, Seed::new(row, col), threshold).map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("mask", to_rows(&s.mask.grid))?;
        d.set_item("probabilities", to_rows(&s.mask_probabilities))?;
        d.set_item("edges", to_rows(&s.edge_probabilities))?;
        d.set_item("confidence", s.confidence)?;
        d.set_item("empty", s.empty)?;
        Ok(d)
    }

    /// Grid proposals as `(row, col, mask, confidence)` tuples.
    #[pyo3(signature = (depth, stride = 16, threshold = 0.8, dedup = false))]
    #[allow(clippy::type_complexity)]
    fn proposals(
        &self,
        depth: Vec<Vec<u16>>,
        stride: usize,
        threshold: f32,
        dedup: bool,
    ) -> PyResult<Vec<(usize, usize, Vec<Vec<bool>>, f64)>> {
        let options = GridOptions {
            stride,
            threshold,
            dedup,
        };
        let set = proposals_grid(&self.inner, &to_grid(depth)?, &options).map_err(err)?;
        Ok(set
            .proposals
            .iter()
            .map(|p| (p.seed.row, p.seed.col, to_rows(&p.mask.grid), p.confidence))
            .collect())
    }
}

#[pymodule]
#[pyo3(name = "dualseg")]
fn dualseg_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(generate_scene, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(contours, m)?)?;
    m.add_function(wrap_pyfunction!(masks, m)?)?;
    m.add_function(wrap_pyfunction!(mask_from_contours, m)?)?;
    m.add_function(wrap_pyfunction!(logistic_loss, m)?)?;
    m.add_function(wrap_pyfunction!(boundary_matches, m)?)?;
    m.add_function(wrap_pyfunction!(iou, m)?)?;
    m.add_function(wrap_pyfunction!(gap, m)?)?;
    m.add_function(wrap_pyfunction!(rle_encode, m)?)?;
    m.add_function(wrap_pyfunction!(rle_decode, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_round_trip() {
        let g = Grid::from_fn(3, 2, |r, c| (r * 2 + c) as u16);
        let rows = to_rows(&g);
        assert_eq!(rows, vec![vec![0, 1], vec![2, 3], vec![4, 5]]);
        assert_eq!(to_grid(rows).unwrap(), g);
        assert!(to_grid(vec![vec![1u8, 2], vec![3]]).is_err());
    }

    #[test]
    fn mode_names() {
        assert_eq!(mode("mono").unwrap(), PileMode::Mono);
        assert!(mode("other").is_err());
    }
}
