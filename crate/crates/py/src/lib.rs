//! Python bindings: models, sharing, local multi-party inference and the cost model.

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use obnn::bnn::{self, FloatBnnModel, ModelFile, ModelMeta, QuantizedBnnModel};
use obnn::dealer::budget_for_inference;
use obnn::local::LocalCluster;
use obnn::secure_bnn::{self, SharedModel, SharedOutput, SharedQuery};
use obnn::sharing::{self, SessionId, ShareVector};
use obnn::{Error, RingModulus};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyOSError::new_err(e.to_string()),
        Error::PeerAborted(_) | Error::Timeout(_) | Error::Disconnected(_) => PyRuntimeError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn rng(seed: Option<u64>) -> ChaCha20Rng {
    match seed {
        Some(s) => ChaCha20Rng::seed_from_u64(s),
        None => ChaCha20Rng::from_os_rng(),
    }
}

fn modulus(bits: u32) -> PyResult<RingModulus> {
    RingModulus::new(bits).map_err(to_py)
}

/// A BNN with real-valued batch normalization, as produced by training.
#[pyclass(name = "FloatModel", module = "pyobnn", frozen)]
struct PyFloatModel {
    inner: FloatBnnModel,
}

#[pymethods]
impl PyFloatModel {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        match bnn::load_model(path).map_err(to_py)? {
            ModelFile::Real(inner) => Ok(PyFloatModel { inner }),
            ModelFile::Quantized(_) => Err(PyValueError::new_err("file holds a quantized model")),
        }
    }

    #[getter]
    fn sizes(&self) -> Vec<usize> {
        self.inner.sizes()
    }

    fn infer(&self, input: Vec<i64>) -> PyResult<Vec<f64>> {
        self.inner.infer(&input).map_err(to_py)
    }

    #[pyo3(signature = (q = bnn::DEFAULT_Q, modulus_bits = None, input_bound = bnn::PIXEL_MAX))]
    fn quantize(&self, q: u64, modulus_bits: Option<u32>, input_bound: u64) -> PyResult<PyQuantizedModel> {
        let m = modulus_bits.map(modulus).transpose()?;
        let inner = bnn::quantize_model(&self.inner, q, m, input_bound).map_err(to_py)?;
        Ok(PyQuantizedModel { inner })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        bnn::save_real(path, &self.inner).map_err(to_py)
    }
}

/// A BNN with integer batch normalization over Z_{2^m}.
#[pyclass(name = "QuantizedModel", module = "pyobnn", frozen)]
struct PyQuantizedModel {
    inner: QuantizedBnnModel,
}

#[pymethods]
impl PyQuantizedModel {
    /// `layers` is a list of `(weights, scale, shift)` with `weights` a list of
    /// rows of +1/-1 entries.
    #[new]
    #[pyo3(signature = (layers, q = bnn::DEFAULT_Q, modulus_bits = 32))]
    fn new(layers: Vec<(Vec<Vec<i8>>, Vec<i64>, Vec<i64>)>, q: u64, modulus_bits: u32) -> PyResult<Self> {
        let layers = layers
            .into_iter()
            .map(|(rows, scale, shift)| {
                let (r, c) = (rows.len(), rows.first().map_or(0, Vec::len));
                if rows.iter().any(|row| row.len() != c) {
                    return Err(PyValueError::new_err("weight rows differ in length"));
                }
                let weights = bnn::SignMatrix::new(r, c, rows.concat()).map_err(to_py)?;
                Ok(bnn::QuantLayer {
                    weights,
                    bn: bnn::QuantizedBnParams { scale, shift },
                })
            })
            .collect::<PyResult<Vec<_>>>()?;
        let inner = QuantizedBnnModel::new(layers, q, modulus(modulus_bits)?).map_err(to_py)?;
        Ok(PyQuantizedModel { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        bnn::load_quantized(path).map(|inner| PyQuantizedModel { inner }).map_err(to_py)
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        match bnn::model_from_bytes(data).map_err(to_py)? {
            ModelFile::Quantized(inner) => Ok(PyQuantizedModel { inner }),
            ModelFile::Real(_) => Err(PyValueError::new_err("bytes hold a real-valued model")),
        }
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &bnn::quantized_to_bytes(&self.inner))
    }

    fn save(&self, path: &str) -> PyResult<()> {
        bnn::save_quantized(path, &self.inner).map_err(to_py)
    }

    #[getter]
    fn sizes(&self) -> Vec<usize> {
        self.inner.sizes()
    }

    #[getter]
    fn q(&self) -> u64 {
        self.inner.q()
    }

    #[getter]
    fn modulus_bits(&self) -> u32 {
        self.inner.modulus().bits()
    }

    /// Hex SHA-256 of the public metadata.
    fn digest(&self) -> String {
        hex::encode(self.inner.meta().digest())
    }

    /// Smallest ring width that cannot overflow for inputs bounded by `input_bound`.
    #[pyo3(signature = (input_bound = bnn::PIXEL_MAX))]
    fn required_modulus_bits(&self, input_bound: u64) -> PyResult<u32> {
        bnn::overflow_bound(&self.inner, input_bound).map(|m| m.bits()).map_err(to_py)
    }

    /// Plaintext integer inference.
    fn infer(&self, input: Vec<i64>) -> PyResult<Vec<i64>> {
        bnn::infer(&self.inner, &input).map_err(to_py)
    }

    fn predict(&self, input: Vec<i64>) -> PyResult<usize> {
        let out = self.infer(input)?;
        secure_bnn::argmax_client(&out).map_err(to_py)
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!(
            "QuantizedModel(sizes={:?}, q={}, modulus_bits={})",
            self.inner.sizes(),
            self.inner.q(),
            self.inner.modulus().bits()
        )
    }
}

/// One server's share of a model.
#[pyclass(name = "ModelShare", module = "pyobnn", frozen, from_py_object)]
#[derive(Clone)]
struct PyModelShare {
    inner: SharedModel,
}

#[pymethods]
impl PyModelShare {
    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        SharedModel::from_bytes(data).map(|inner| PyModelShare { inner }).map_err(to_py)
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.inner.to_bytes())
    }

    #[getter]
    fn party(&self) -> usize {
        self.inner.party().index()
    }

    #[getter]
    fn session(&self) -> u64 {
        self.inner.session().0
    }
}

/// One party's additive shares of a vector over Z_{2^m}.
#[pyclass(name = "Shares", module = "pyobnn", frozen, from_py_object)]
#[derive(Clone)]
struct PyShares {
    inner: ShareVector,
}

#[pymethods]
impl PyShares {
    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        ShareVector::from_bytes(data).map(|inner| PyShares { inner }).map_err(to_py)
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.inner.to_bytes())
    }

    #[getter]
    fn party(&self) -> usize {
        self.inner.party().index()
    }

    #[getter]
    fn session(&self) -> u64 {
        self.inner.session().0
    }

    #[getter]
    fn values(&self) -> Vec<u64> {
        self.inner.values().to_vec()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Splits signed `values` into `parties` additive shares mod 2^`modulus_bits`.
#[pyfunction]
#[pyo3(signature = (values, parties = 2, modulus_bits = 32, session = 1, seed = None))]
fn share(values: Vec<i64>, parties: usize, modulus_bits: u32, session: u64, seed: Option<u64>) -> PyResult<Vec<PyShares>> {
    let m = modulus(modulus_bits)?;
    let encoded = values.iter().map(|&v| m.encode_i64(v)).collect::<obnn::Result<Vec<_>>>().map_err(to_py)?;
    let shares = sharing::share_vector(m, &encoded, parties, SessionId(session), &mut rng(seed)).map_err(to_py)?;
    Ok(shares.into_iter().map(|inner| PyShares { inner }).collect())
}

/// Recombines one share from every party into signed values.
#[pyfunction]
fn reconstruct(shares: Vec<PyShares>) -> PyResult<Vec<i64>> {
    let parts: Vec<ShareVector> = shares.into_iter().map(|s| s.inner).collect();
    let m = parts.first().ok_or_else(|| PyValueError::new_err("no shares"))?.modulus();
    let raw = sharing::reconstruct_vector(&parts).map_err(to_py)?;
    raw.into_iter().map(|v| m.decode_i64(v).map_err(to_py)).collect()
}

#[pyfunction]
#[pyo3(signature = (model, parties = 2, session = 0, input_bound = bnn::PIXEL_MAX, seed = None))]
fn share_model(
    model: &PyQuantizedModel,
    parties: usize,
    session: u64,
    input_bound: u64,
    seed: Option<u64>,
) -> PyResult<Vec<PyModelShare>> {
    let shares = secure_bnn::share_model(&model.inner, input_bound, parties, SessionId(session), &mut rng(seed))
        .map_err(to_py)?;
    Ok(shares.into_iter().map(|inner| PyModelShare { inner }).collect())
}

#[pyfunction]
fn reconstruct_model(shares: Vec<PyModelShare>) -> PyResult<PyQuantizedModel> {
    let parts: Vec<SharedModel> = shares.into_iter().map(|s| s.inner).collect();
    secure_bnn::reconstruct_model(&parts)
        .map(|inner| PyQuantizedModel { inner })
        .map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (model, input, parties = 2, session = 1, seed = None))]
fn share_query(
    model: &PyQuantizedModel,
    input: Vec<i64>,
    parties: usize,
    session: u64,
    seed: Option<u64>,
) -> PyResult<Vec<PyShares>> {
    let shares = secure_bnn::share_query(&model.inner.meta(), &input, parties, SessionId(session), &mut rng(seed))
        .map_err(to_py)?;
    Ok(shares.into_iter().map(|q| PyShares { inner: q.input }).collect())
}

/// Runs one secure inference with every party as a thread of this process.
/// Returns `(output, class, stats)` where `stats` describes party 0's traffic.
#[pyfunction]
#[pyo3(signature = (model_shares, query_shares, dealer_seed = 0))]
fn secure_infer<'py>(
    py: Python<'py>,
    model_shares: Vec<PyModelShare>,
    query_shares: Vec<PyShares>,
    dealer_seed: u64,
) -> PyResult<(Vec<i64>, usize, Bound<'py, PyDict>)> {
    let models: Vec<SharedModel> = model_shares.into_iter().map(|s| s.inner).collect();
    let queries: Vec<SharedQuery> = query_shares.into_iter().map(|s| SharedQuery { input: s.inner }).collect();
    let first = models.first().ok_or_else(|| PyValueError::new_err("no model shares"))?;
    let (parties, meta) = (models.len(), first.meta().clone());
    if queries.len() != parties {
        return Err(PyValueError::new_err(format!(
            "{} model shares but {} query shares",
            parties,
            queries.len()
        )));
    }
    let session = queries[0].input.session();
    let run = py
        .detach(|| {
            LocalCluster::new(parties, meta.modulus)
                .session(session)
                .seed(dealer_seed)
                .budget(&budget_for_inference(&meta, parties))
                .run(|ctx| {
                    let p = ctx.party().index();
                    secure_bnn::secure_infer(ctx, &models[p], &queries[p])
                })
        })
        .map_err(to_py)?;
    let outputs: Vec<SharedOutput> = run.outputs;
    let output = secure_bnn::reconstruct_output(&outputs).map_err(to_py)?;
    let class = secure_bnn::argmax_client(&output).map_err(to_py)?;
    let stats = PyDict::new(py);
    stats.set_item("rounds", run.stats[0].rounds)?;
    stats.set_item("messages_sent", run.stats[0].messages_sent)?;
    stats.set_item("bytes_sent", run.stats[0].bytes_sent)?;
    stats.set_item("bytes_received", run.stats[0].bytes_received)?;
    Ok((output, class, stats))
}

/// Shares `model` and `input`, runs the protocol locally and reconstructs.
#[pyfunction]
#[pyo3(signature = (model, input, parties = 2, seed = None))]
fn oblivious_predict<'py>(
    py: Python<'py>,
    model: &PyQuantizedModel,
    input: Vec<i64>,
    parties: usize,
    seed: Option<u64>,
) -> PyResult<(Vec<i64>, usize, Bound<'py, PyDict>)> {
    let model_shares = share_model(model, parties, 0, bnn::PIXEL_MAX, seed)?;
    let query_shares = share_query(model, input, parties, 1, seed.map(|s| s ^ 1))?;
    secure_infer(py, model_shares, query_shares, seed.unwrap_or(0))
}

/// Predicted rounds and per-server traffic for one inference.
#[pyfunction]
#[pyo3(signature = (sizes, modulus_bits = 32, parties = 2, q = bnn::DEFAULT_Q))]
fn inference_cost<'py>(
    py: Python<'py>,
    sizes: Vec<usize>,
    modulus_bits: u32,
    parties: usize,
    q: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let meta = ModelMeta::new(sizes, q, modulus(modulus_bits)?).map_err(to_py)?;
    let cost = secure_bnn::inference_cost(&meta, parties);
    let budget = budget_for_inference(&meta, parties);
    let d = PyDict::new(py);
    d.set_item("rounds", cost.rounds)?;
    d.set_item("messages_sent", cost.messages_sent)?;
    d.set_item("payload_bytes_sent", cost.payload_bytes_sent)?;
    d.set_item("bytes_sent", cost.bytes_sent)?;
    d.set_item("arith_triples", budget.arith)?;
    d.set_item("bool_triples", budget.boolean)?;
    Ok(d)
}

#[pymodule]
fn pyobnn(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyFloatModel>()?;
    m.add_class::<PyQuantizedModel>()?;
    m.add_class::<PyModelShare>()?;
    m.add_class::<PyShares>()?;
    m.add_function(wrap_pyfunction!(share, m)?)?;
    m.add_function(wrap_pyfunction!(reconstruct, m)?)?;
    m.add_function(wrap_pyfunction!(share_model, m)?)?;
    m.add_function(wrap_pyfunction!(reconstruct_model, m)?)?;
    m.add_function(wrap_pyfunction!(share_query, m)?)?;
    m.add_function(wrap_pyfunction!(secure_infer, m)?)?;
    m.add_function(wrap_pyfunction!(oblivious_predict, m)?)?;
    m.add_function(wrap_pyfunction!(inference_cost, m)?)?;
    m.add("DEFAULT_Q", bnn::DEFAULT_Q)?;
    m.add("PIXEL_MAX", bnn::PIXEL_MAX)?;
    Ok(())
}
