//! Python bindings: block quantization, lookup tables, model execution and
//! the cost model.

use std::path::PathBuf;

use mxvit::dse::{cost_report, loss_pp, ElementCounts};
use mxvit::nonlinear::{LutKind, LutTable};
use mxvit::vit::{self, load_model, Dataset, Mode, ModelWeights, QuantModel, Runner};
use mxvit::{DatapathConfig, ErrorKind, MxIntBlock};
use pyo3::exceptions::{PyArithmeticError, PyOSError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: mxvit::Error) -> PyErr {
    match e.kind() {
        ErrorKind::Config => PyValueError::new_err(e.to_string()),
        ErrorKind::Io => PyOSError::new_err(e.to_string()),
        ErrorKind::Numeric => PyArithmeticError::new_err(e.to_string()),
    }
}

/// Datapath configuration. Every keyword defaults to the built-in value.
#[pyclass(name = "Config", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: DatapathConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (
        weight_mantissa_bits=None, activation_mantissa_bits=None, weight_block_size=None,
        activation_block_size=None, accumulator_mantissa_bits=None, layernorm_lut_bits=None,
        gelu_lut_bits=None, gelu_domain=None, softmax_r_bits=None,
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        weight_mantissa_bits: Option<u32>,
        activation_mantissa_bits: Option<u32>,
        weight_block_size: Option<usize>,
        activation_block_size: Option<usize>,
        accumulator_mantissa_bits: Option<u32>,
        layernorm_lut_bits: Option<u32>,
        gelu_lut_bits: Option<u32>,
        gelu_domain: Option<f64>,
        softmax_r_bits: Option<u32>,
    ) -> PyResult<Self> {
        let mut c = DatapathConfig::default();
        let q = &mut c.quant;
        q.weight_mantissa_bits = weight_mantissa_bits.unwrap_or(q.weight_mantissa_bits);
        q.activation_mantissa_bits = activation_mantissa_bits.unwrap_or(q.activation_mantissa_bits);
        q.weight_block_size = weight_block_size.unwrap_or(q.weight_block_size);
        q.activation_block_size = activation_block_size.unwrap_or(q.activation_block_size);
        q.accumulator_mantissa_bits =
            accumulator_mantissa_bits.unwrap_or(q.accumulator_mantissa_bits);
        let n = &mut c.nonlinear;
        n.layernorm_lut_bits = layernorm_lut_bits.unwrap_or(n.layernorm_lut_bits);
        n.gelu_lut_bits = gelu_lut_bits.unwrap_or(n.gelu_lut_bits);
        n.gelu_domain = gelu_domain.unwrap_or(n.gelu_domain);
        n.softmax_r_bits = softmax_r_bits.unwrap_or(n.softmax_r_bits);
        c.validate().map_err(to_py)?;
        Ok(Self { inner: c })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: DatapathConfig =
            serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        inner.validate().map_err(to_py)?;
        Ok(Self { inner })
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.inner).expect("configs serialize")
    }

    fn fingerprint(&self) -> String {
        self.inner.fingerprint()
    }

    #[getter]
    fn weight_mantissa_bits(&self) -> u32 {
        self.inner.quant.weight_mantissa_bits
    }

    #[getter]
    fn activation_mantissa_bits(&self) -> u32 {
        self.inner.quant.activation_mantissa_bits
    }

    fn __repr__(&self) -> String {
        format!("Config({})", self.to_json())
    }
}

/// One shared exponent and its signed mantissas.
#[pyclass(name = "Block")]
struct PyBlock {
    inner: MxIntBlock,
}

#[pymethods]
impl PyBlock {
    #[getter]
    fn exponent(&self) -> i32 {
        self.inner.exponent()
    }

    #[getter]
    fn mantissas(&self) -> Vec<i32> {
        self.inner.mantissas().to_vec()
    }

    #[getter]
    fn mantissa_bits(&self) -> u32 {
        self.inner.mantissa_bits()
    }

    fn dequantize(&self) -> Vec<f64> {
        self.inner.dequantize()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Block(exponent={}, mantissas={:?})",
            self.inner.exponent(),
            self.inner.mantissas()
        )
    }
}

#[pyfunction]
fn quantize_block(values: Vec<f64>, mantissa_bits: u32) -> PyResult<PyBlock> {
    Ok(PyBlock {
        inner: MxIntBlock::quantize(&values, mantissa_bits).map_err(to_py)?,
    })
}

/// A LayerNorm, GELU or Softmax lookup table.
#[pyclass(name = "Lut")]
struct PyLut {
    inner: LutTable,
}

#[pymethods]
impl PyLut {
    #[new]
    #[pyo3(signature = (kind, bits, gelu_domain=3.0))]
    fn new(kind: &str, bits: u32, gelu_domain: f64) -> PyResult<Self> {
        let kind: LutKind = kind.parse().map_err(to_py)?;
        let inner = match kind {
            LutKind::InvSqrt => LutTable::inv_sqrt(bits),
            LutKind::Gelu => LutTable::gelu(bits, gelu_domain),
            LutKind::Pow2 => LutTable::pow2(bits),
        }
        .map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind().name()
    }

    #[getter]
    fn frac_bits(&self) -> u32 {
        self.inner.frac_bits()
    }

    fn entries(&self) -> Vec<i64> {
        self.inner.entries().to_vec()
    }

    fn values(&self) -> Vec<f64> {
        (0..self.inner.len())
            .map(|i| self.inner.entry_f64(i))
            .collect()
    }

    fn to_hex(&self) -> String {
        self.inner.to_hex()
    }

    fn to_csv(&self) -> String {
        self.inner.to_csv()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

fn mode(name: &str) -> PyResult<Mode> {
    name.parse().map_err(to_py)
}

/// A model loaded from a manifest.
#[pyclass(name = "Model")]
struct PyModel {
    weights: ModelWeights,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(manifest: PathBuf) -> PyResult<Self> {
        let (_, weights) = load_model(&manifest).map_err(to_py)?;
        Ok(Self { weights })
    }

    #[getter]
    fn input_len(&self) -> usize {
        self.weights.config.input_len()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.weights.config.num_classes
    }

    #[pyo3(signature = (image, mode="mxint", config=None))]
    fn forward(
        &self,
        py: Python<'_>,
        image: Vec<f64>,
        mode: &str,
        config: Option<PyConfig>,
    ) -> PyResult<Vec<f64>> {
        let cfg = config.map(|c| c.inner).unwrap_or_default();
        let m = self::mode(mode)?;
        py.detach(|| Runner::new(&self.weights, m, &cfg)?.forward(&image))
            .map_err(to_py)
    }

    /// Top-1 accuracy over a dataset directory; returns
    /// `(correct, total, accuracy)`.
    #[pyo3(signature = (dataset, mode="mxint", config=None))]
    fn evaluate(
        &self,
        py: Python<'_>,
        dataset: PathBuf,
        mode: &str,
        config: Option<PyConfig>,
    ) -> PyResult<(usize, usize, f64)> {
        let cfg = config.map(|c| c.inner).unwrap_or_default();
        let m = self::mode(mode)?;
        let ev = py
            .detach(|| {
                let ds = Dataset::load(&dataset, self.weights.config.input_len())?;
                vit::evaluate(&Runner::new(&self.weights, m, &cfg)?, &ds)
            })
            .map_err(to_py)?;
        Ok((ev.correct, ev.total, ev.accuracy()))
    }

    /// Per-layer `(name, max_abs, mean_abs, max_rel)` and the first layer
    /// over `threshold`.
    #[pyo3(signature = (dataset, config=None, threshold=0.02))]
    #[allow(clippy::type_complexity)]
    fn compare(
        &self,
        py: Python<'_>,
        dataset: PathBuf,
        config: Option<PyConfig>,
        threshold: f64,
    ) -> PyResult<(Vec<(String, f64, f64, f64)>, Option<String>)> {
        let cfg = config.map(|c| c.inner).unwrap_or_default();
        let r = py
            .detach(|| {
                let ds = Dataset::load(&dataset, self.weights.config.input_len())?;
                vit::compare(&QuantModel::build(&self.weights, &cfg)?, &ds, threshold)
            })
            .map_err(to_py)?;
        let layers = r
            .layers
            .into_iter()
            .map(|l| (l.name, l.max_abs, l.mean_abs, l.max_rel))
            .collect();
        Ok((layers, r.first_flagged))
    }

    /// Cost report of `config` for this model as a JSON string.
    #[pyo3(signature = (config=None))]
    fn cost_report(&self, config: Option<PyConfig>) -> PyResult<String> {
        let cfg = config.map(|c| c.inner).unwrap_or_default();
        Ok(cost_report(&cfg, &ElementCounts::of_model(&self.weights))
            .map_err(to_py)?
            .to_json())
    }
}

/// Top-1 loss in percentage points.
#[pyfunction(name = "loss_pp")]
fn py_loss_pp(reference: f64, accuracy: f64) -> f64 {
    loss_pp(reference, accuracy)
}

#[pymodule]
fn mxvit_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyBlock>()?;
    m.add_class::<PyLut>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(quantize_block, m)?)?;
    m.add_function(wrap_pyfunction!(py_loss_pp, m)?)?;
    Ok(())
}
