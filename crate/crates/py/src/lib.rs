//! Python bindings: images, k-space degradation, losses and metrics, and the model.

use mcsr_core::io;
use mcsr_core::kspace;
use mcsr_core::loss::{self, LossWeights, NoiseLevel};
use mcsr_core::{Error, ModelConfig, WeightStore};
use pyo3::exceptions::{PyIOError, PyKeyError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::MissingWeights(_) | Error::UnknownWeights(_) => PyKeyError::new_err(e.to_string()),
        Error::Io(_) | Error::Corrupt { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Single-channel image, row-major.
#[pyclass(name = "ImagePlane", module = "mcsr", from_py_object)]
#[derive(Clone)]
struct PyImage {
    inner: kspace::ImagePlane,
}

#[pymethods]
impl PyImage {
    #[new]
    fn new(height: usize, width: usize, data: Vec<f64>) -> PyResult<Self> {
        Ok(PyImage { inner: kspace::ImagePlane::new(height, width, data).map_err(to_py)? })
    }

    #[staticmethod]
    fn filled(height: usize, width: usize, value: f64) -> Self {
        PyImage { inner: kspace::ImagePlane::filled(height, width, value) }
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width
    }

    #[getter]
    fn data(&self) -> Vec<f64> {
        self.inner.data.clone()
    }

    fn get(&self, y: usize, x: usize) -> PyResult<f64> {
        if y >= self.inner.height || x >= self.inner.width {
            return Err(PyValueError::new_err("pixel index out of range"));
        }
        Ok(self.inner.get(y, x))
    }

    fn __repr__(&self) -> String {
        format!("ImagePlane({}x{})", self.inner.height, self.inner.width)
    }
}

fn wrap(inner: kspace::ImagePlane) -> PyImage {
    PyImage { inner }
}

#[pyfunction]
fn degrade(hr: &PyImage, uf: usize) -> PyResult<PyImage> {
    kspace::degrade(&hr.inner, uf).map(wrap).map_err(to_py)
}

#[pyfunction]
fn zero_fill_upsample(lr: &PyImage, uf: usize) -> PyResult<PyImage> {
    kspace::zero_fill_upsample(&lr.inner, uf).map(wrap).map_err(to_py)
}

/// Sampling mask as a flat row-major list of booleans.
#[pyfunction]
fn central_mask(height: usize, width: usize, uf: usize) -> PyResult<Vec<bool>> {
    Ok(kspace::central_mask(height, width, uf).map_err(to_py)?.data)
}

#[pyfunction]
fn read_image(path: &str) -> PyResult<PyImage> {
    io::read_image(path).map(wrap).map_err(to_py)
}

#[pyfunction]
fn write_image(path: &str, img: &PyImage) -> PyResult<()> {
    io::write_image(path, &img.inner).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (sr, hr, max_value = 1.0))]
fn psnr(sr: &PyImage, hr: &PyImage, max_value: f64) -> PyResult<f64> {
    loss::psnr(&sr.inner, &hr.inner, max_value).map_err(to_py)
}

#[pyfunction]
fn ssim(sr: &PyImage, hr: &PyImage) -> PyResult<f64> {
    loss::ssim(&sr.inner, &hr.inner).map_err(to_py)
}

#[pyfunction]
fn rmse(sr: &PyImage, hr: &PyImage) -> PyResult<f64> {
    loss::rmse(&sr.inner, &hr.inner).map_err(to_py)
}

fn loss_weights(lambda_rec: f64, lambda_dc: f64, noise_level: Option<f64>) -> LossWeights {
    LossWeights {
        lambda_rec,
        lambda_dc,
        noise_level: noise_level.map_or(NoiseLevel::Infinite, NoiseLevel::Finite),
    }
}

/// `(l_rec, l_dc, l_full)`; `noise_level=None` means exact replacement.
#[pyfunction]
#[pyo3(signature = (sr, hr, uf, lambda_rec = 1.0, lambda_dc = 0.0001, noise_level = None))]
fn losses(
    sr: &PyImage,
    hr: &PyImage,
    uf: usize,
    lambda_rec: f64,
    lambda_dc: f64,
    noise_level: Option<f64>,
) -> PyResult<(f64, f64, f64)> {
    let mask = kspace::central_mask(hr.inner.height, hr.inner.width, uf).map_err(to_py)?;
    let r = loss::full_loss(&sr.inner, &hr.inner, &mask, &loss_weights(lambda_rec, lambda_dc, noise_level))
        .map_err(to_py)?;
    Ok((r.l_rec, r.l_dc, r.l_full))
}

/// Gradient of the full loss with respect to the SR image.
#[pyfunction]
#[pyo3(signature = (sr, hr, uf, lambda_rec = 1.0, lambda_dc = 0.0001, noise_level = None))]
fn loss_gradient(
    sr: &PyImage,
    hr: &PyImage,
    uf: usize,
    lambda_rec: f64,
    lambda_dc: f64,
    noise_level: Option<f64>,
) -> PyResult<PyImage> {
    let mask = kspace::central_mask(hr.inner.height, hr.inner.width, uf).map_err(to_py)?;
    loss::loss_gradient(&sr.inner, &hr.inner, &mask, &loss_weights(lambda_rec, lambda_dc, noise_level))
        .map(wrap)
        .map_err(to_py)
}

/// Default configuration as JSON text.
#[pyfunction]
fn default_config() -> String {
    ModelConfig::default().to_json()
}

#[pyclass(name = "Model", module = "mcsr")]
struct PyModel {
    inner: mcsr_core::Model,
}

#[pymethods]
impl PyModel {
    /// Seeded random weights, or weights loaded from `weights` when given.
    #[new]
    #[pyo3(signature = (config_json = None, weights = None, seed = None))]
    fn new(config_json: Option<&str>, weights: Option<&str>, seed: Option<u64>) -> PyResult<Self> {
        let mut cfg = match config_json {
            Some(text) => ModelConfig::from_json(text).map_err(to_py)?,
            None => ModelConfig::default(),
        };
        if let Some(s) = seed {
            cfg.seed = s;
        }
        let inner = match weights {
            Some(path) => {
                let store = WeightStore::load(path).map_err(to_py)?;
                mcsr_core::Model::from_store(cfg, &store)
            }
            None => mcsr_core::Model::random(cfg, cfg.seed),
        }
        .map_err(to_py)?;
        Ok(PyModel { inner })
    }

    #[getter]
    fn config_json(&self) -> String {
        self.inner.config.to_json()
    }

    fn forward(&self, py: Python<'_>, target: &PyImage, reference: &PyImage) -> PyResult<PyImage> {
        let (t, r) = (target.inner.clone(), reference.inner.clone());
        let m = &self.inner;
        py.detach(|| m.forward(&t, &r)).map(wrap).map_err(to_py)
    }

    fn match_debug(&self, target: &PyImage, reference: &PyImage) -> PyResult<String> {
        self.inner
            .match_debug(&target.inner, &reference.inner)
            .map(|r| r.to_text())
            .map_err(to_py)
    }
}

/// Runs the built-in checks; returns `(all_passed, report_text)`.
#[pyfunction]
fn selftest() -> (bool, String) {
    let r = mcsr_core::selftest::run_selftest();
    (r.all_passed(), r.to_text())
}

#[pymodule]
fn mcsr(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyImage>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(degrade, m)?)?;
    m.add_function(wrap_pyfunction!(zero_fill_upsample, m)?)?;
    m.add_function(wrap_pyfunction!(central_mask, m)?)?;
    m.add_function(wrap_pyfunction!(read_image, m)?)?;
    m.add_function(wrap_pyfunction!(write_image, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(rmse, m)?)?;
    m.add_function(wrap_pyfunction!(losses, m)?)?;
    m.add_function(wrap_pyfunction!(loss_gradient, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(selftest, m)?)?;
    Ok(())
}
