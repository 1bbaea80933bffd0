//! Python bindings. Images and masks cross the boundary as nested lists
//! (`list[list[float]]` / `list[list[int]]`), row-major.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use stenunet::evalkit::{f1, instance_confusion, pixel_confusion, ConfusionCounts};
use stenunet::postseg::{self, Connectivity, InstanceSet, PostConfig};
use stenunet::prefilter::{self, ButterworthParams, FilterMode, PreConfig};
use stenunet::specio::{self, BinaryMask, ImageGray, PolygonAnn};
use stenunet::stenunet::{self as net, ArchConfig};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn dims<T>(rows: &[Vec<T>]) -> PyResult<(usize, usize)> {
    let h = rows.len();
    let w = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != w) {
        return Err(PyValueError::new_err("rows have different lengths"));
    }
    Ok((h, w))
}

fn to_image(rows: Vec<Vec<f64>>) -> PyResult<ImageGray> {
    let (h, w) = dims(&rows)?;
    ImageGray::new(h, w, rows.into_iter().flatten().collect()).map_err(value_err)
}

fn to_mask(rows: Vec<Vec<u8>>) -> PyResult<BinaryMask> {
    let (h, w) = dims(&rows)?;
    BinaryMask::new(h, w, rows.into_iter().flatten().collect()).map_err(value_err)
}

fn image_rows(img: &ImageGray) -> Vec<Vec<f64>> {
    img.data().chunks(img.width().max(1)).map(<[f64]>::to_vec).collect()
}

// u32 rather than u8 so rows arrive as lists, not bytes
fn mask_rows(m: &BinaryMask) -> Vec<Vec<u32>> {
    m.data()
        .chunks(m.width().max(1))
        .map(|r| r.iter().map(|&v| v as u32).collect())
        .collect()
}

fn connectivity(c: u32) -> PyResult<Connectivity> {
    Connectivity::try_from(c).map_err(value_err)
}

fn filter_mode(mode: &str) -> PyResult<FilterMode> {
    match mode {
        "highpass" => Ok(FilterMode::Highpass),
        "lowpass" => Ok(FilterMode::Lowpass),
        other => Err(PyValueError::new_err(format!("unknown filter mode {other:?}"))),
    }
}

fn pre_config(enabled: bool, d0: f64, order: u32, mode: &str) -> PyResult<PreConfig> {
    Ok(PreConfig {
        enabled,
        filter: ButterworthParams {
            d0,
            order,
            mode: filter_mode(mode)?,
        },
        ..PreConfig::default()
    })
}

/// Homomorphic enhancement followed by mean/variance normalisation.
#[pyfunction]
#[pyo3(signature = (image, d0 = 30.0, order = 2, mode = "highpass"))]
fn preprocess(image: Vec<Vec<f64>>, d0: f64, order: u32, mode: &str) -> PyResult<Vec<Vec<f64>>> {
    let cfg = pre_config(true, d0, order, mode)?;
    let out = prefilter::preprocess(&to_image(image)?, &cfg).map_err(value_err)?;
    Ok(image_rows(&out))
}

#[pyfunction]
#[pyo3(signature = (d, d0, order = 2, mode = "lowpass"))]
fn butterworth_gain(d: f64, d0: f64, order: u32, mode: &str) -> PyResult<f64> {
    let p = ButterworthParams {
        d0,
        order,
        mode: filter_mode(mode)?,
    };
    p.validate().map_err(value_err)?;
    Ok(p.gain(d))
}

/// Threshold, drop components below the size-scaled `min_area`, and return
/// the cleaned mask with its component count.
#[pyfunction]
#[pyo3(signature = (prob, threshold = 0.5, min_area = 100.0, connectivity = 8, enabled = true))]
fn postprocess(
    prob: Vec<Vec<f64>>,
    threshold: f64,
    min_area: f64,
    connectivity: u32,
    enabled: bool,
) -> PyResult<(Vec<Vec<u32>>, usize)> {
    let cfg = PostConfig {
        enabled,
        threshold,
        connectivity: self::connectivity(connectivity)?,
        min_area,
    };
    let (mask, instances) = postseg::postprocess(&to_image(prob)?, &cfg).map_err(value_err)?;
    Ok((mask_rows(&mask), instances.len()))
}

/// Per-pixel component ids (0 = background) and the component count.
#[pyfunction]
#[pyo3(signature = (mask, connectivity = 8))]
fn label_components(mask: Vec<Vec<u8>>, connectivity: u32) -> PyResult<(Vec<Vec<u32>>, usize)> {
    let mask = to_mask(mask)?;
    let lab = postseg::label_components(&mask, self::connectivity(connectivity)?);
    let rows = lab.labels().chunks(mask.width().max(1)).map(<[u32]>::to_vec).collect();
    Ok((rows, lab.components().len()))
}

/// Rasterizes `(x, y)` vertex rings by pixel-center inclusion.
#[pyfunction]
fn rasterize(polygons: Vec<Vec<(f64, f64)>>, height: usize, width: usize) -> PyResult<Vec<Vec<u32>>> {
    let anns: Vec<PolygonAnn> = polygons
        .into_iter()
        .enumerate()
        .map(|(i, vertices)| PolygonAnn {
            image_id: 0,
            annotation_id: i as u64,
            vertices,
        })
        .collect();
    let mask = specio::rasterize(&anns, height, width).map_err(value_err)?;
    Ok(mask_rows(&mask))
}

#[pyfunction]
#[pyo3(name = "f1")]
fn f1_score(tp: u64, fp: u64, fn_: u64) -> f64 {
    f1(&ConfusionCounts { tp, fp, fn_, tn: 0 })
}

/// F1 of one prediction against its reference, in `"pixel"` or
/// `"instance"` mode.
#[pyfunction]
#[pyo3(signature = (pred, gt, mode = "instance", iou_threshold = 0.5, connectivity = 8))]
fn score(pred: Vec<Vec<u8>>, gt: Vec<Vec<u8>>, mode: &str, iou_threshold: f64, connectivity: u32) -> PyResult<f64> {
    let (pred, gt) = (to_mask(pred)?, to_mask(gt)?);
    let counts = match mode {
        "pixel" => pixel_confusion(&pred, &gt).map_err(value_err)?,
        "instance" => {
            if !pred.same_dims(&gt) {
                return Err(PyValueError::new_err("prediction and reference sizes differ"));
            }
            let c = self::connectivity(connectivity)?;
            instance_confusion(&InstanceSet::from_mask(&pred, c), &InstanceSet::from_mask(&gt, c), iou_threshold)
        }
        other => return Err(PyValueError::new_err(format!("unknown mode {other:?}"))),
    };
    Ok(f1(&counts))
}

#[pyfunction]
fn poly_lr(epoch: usize, total: usize, lr0: f64, exponent: f64) -> f64 {
    net::poly_lr(epoch, total, lr0, exponent)
}

/// Finite-difference check of every primitive: `[(primitive, shape, max_rel_err)]`.
#[pyfunction]
#[pyo3(signature = (seed = 0))]
fn gradcheck(py: Python<'_>, seed: u64) -> Vec<(String, String, f64)> {
    py.detach(|| net::run_gradsuite(seed))
        .into_iter()
        .map(|r| (r.primitive, r.shape, r.max_rel_err))
        .collect()
}

/// The segmentation network (single precision).
#[pyclass(name = "Model")]
struct PyModel {
    inner: net::Model<f32>,
}

fn arch(channels: Vec<usize>, convs_per_stage: usize, instance_norm: bool) -> ArchConfig {
    ArchConfig {
        convs_per_stage,
        use_instance_norm: instance_norm,
        ..ArchConfig::tiny(&channels)
    }
}

#[pymethods]
impl PyModel {
    /// Freshly initialised network; the default is the full seven-stage model.
    #[new]
    #[pyo3(signature = (channels = None, convs_per_stage = 2, instance_norm = true, seed = 0))]
    fn new(channels: Option<Vec<usize>>, convs_per_stage: usize, instance_norm: bool, seed: u64) -> PyResult<Self> {
        let channels = channels.unwrap_or_else(|| ArchConfig::default().channels);
        let inner = net::Model::build(&arch(channels, convs_per_stage, instance_norm), seed).map_err(value_err)?;
        Ok(Self { inner })
    }

    /// Loads a checkpoint; its stored layout must match the arguments.
    #[staticmethod]
    #[pyo3(signature = (path, channels = None, convs_per_stage = 2, instance_norm = true))]
    fn load(path: &str, channels: Option<Vec<usize>>, convs_per_stage: usize, instance_norm: bool) -> PyResult<Self> {
        let channels = channels.unwrap_or_else(|| ArchConfig::default().channels);
        let a = arch(channels, convs_per_stage, instance_norm);
        let ckpt = specio::load_checkpoint(path, Some(&a.descriptor())).map_err(value_err)?;
        let inner = net::Model::from_checkpoint(&a, &ckpt).map_err(value_err)?;
        Ok(Self { inner })
    }

    #[pyo3(signature = (path, epoch = 0, seed = 0))]
    fn save(&self, path: &str, epoch: u64, seed: u64) -> PyResult<()> {
        specio::save_checkpoint(&self.inner.to_checkpoint(epoch, seed), path).map_err(value_err)
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    /// Side lengths must be multiples of this.
    #[getter]
    fn divisor(&self) -> usize {
        self.inner.arch().divisor()
    }

    /// Foreground probability map and the seconds it took.
    #[pyo3(signature = (image, prefilter = true, d0 = 30.0, order = 2))]
    fn predict(
        &self,
        py: Python<'_>,
        image: Vec<Vec<f64>>,
        prefilter: bool,
        d0: f64,
        order: u32,
    ) -> PyResult<(Vec<Vec<f64>>, f64)> {
        let img = to_image(image)?;
        let pre = pre_config(prefilter, d0, order, "highpass")?;
        let out = py.detach(|| net::infer(&self.inner, &img, &pre)).map_err(value_err)?;
        Ok((image_rows(&out.prob), out.seconds))
    }

    fn __repr__(&self) -> String {
        format!("Model(channels={:?}, params={})", self.inner.arch().channels, self.inner.param_count())
    }
}

#[pymodule]
fn stenunet_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(preprocess, m)?)?;
    m.add_function(wrap_pyfunction!(butterworth_gain, m)?)?;
    m.add_function(wrap_pyfunction!(postprocess, m)?)?;
    m.add_function(wrap_pyfunction!(label_components, m)?)?;
    m.add_function(wrap_pyfunction!(rasterize, m)?)?;
    m.add_function(wrap_pyfunction!(f1_score, m)?)?;
    m.add_function(wrap_pyfunction!(score, m)?)?;
    m.add_function(wrap_pyfunction!(poly_lr, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    Ok(())
}
