//! Python bindings: MJ parsing and evaluation, mutation, labeling,
//! checkpoint inference, attention analysis, LDA, metrics and experiments.
//! Structured results come back as plain dicts and lists.

use std::fmt::Display;
use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyTypeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBool, PyFloat, PyInt};
use pyo3::IntoPyObjectExt;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use oracleforge::dataset::io::write_corpus;
use oracleforge::dataset::{label_pair, synth_corpus, Label, SynthConfig};
use oracleforge::extractor::UnitTest;
use oracleforge::harness::{compute_metrics, run_experiment as run_configured, ExperimentConfig, Mode};
use oracleforge::interpret::{attention_analysis as analyse, lda_project as lda, mut_attention, AttentionMatrix};
use oracleforge::minilang::{
    evaluate as eval_calls, parse_method, parse_program, EvalOutcome, Invocation, SourceMethod, Value,
    DEFAULT_STEP_LIMIT,
};
use oracleforge::mutator::{apply_mutable, enumerate_mutables, sample_mutants, Mutable, MutationOperator};
use oracleforge::neural::{ModelCheckpoint, Tensor};
use oracleforge::trainer::predict_texts;

fn value_error<E: Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Serializes through JSON into Python objects.
fn to_py<T: Serialize>(py: Python<'_>, v: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(v).map_err(value_error)?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn to_value(obj: &Bound<'_, PyAny>) -> PyResult<Value> {
    // bool before int: Python's bool is an int subclass
    if obj.is_instance_of::<PyBool>() {
        Ok(Value::Bool(obj.extract()?))
    } else if obj.is_instance_of::<PyInt>() {
        Ok(Value::Int(obj.extract()?))
    } else if obj.is_instance_of::<PyFloat>() {
        Ok(Value::Num(obj.extract()?))
    } else {
        Err(PyTypeError::new_err(format!("MJ values are int, float or bool, got {}", obj.get_type().name()?)))
    }
}

fn from_value(py: Python<'_>, v: &Value) -> PyResult<Py<PyAny>> {
    match *v {
        Value::Int(i) => i.into_py_any(py),
        Value::Num(x) => x.into_py_any(py),
        Value::Bool(b) => b.into_py_any(py),
    }
}

fn to_calls(calls: &[(String, Vec<Bound<'_, PyAny>>)]) -> PyResult<Vec<Invocation>> {
    calls
        .iter()
        .map(|(name, args)| Ok(Invocation::new(name.clone(), args.iter().map(to_value).collect::<PyResult<_>>()?)))
        .collect()
}

fn to_label(s: &str) -> PyResult<Label> {
    match s {
        "P" | "pass" => Ok(Label::P),
        "F" | "fail" => Ok(Label::F),
        _ => Err(PyValueError::new_err(format!("label must be P or F, got `{s}`"))),
    }
}

fn label_str(l: Label) -> &'static str {
    match l {
        Label::P => "P",
        Label::F => "F",
    }
}

fn program(source: &str) -> PyResult<Vec<SourceMethod>> {
    parse_program(source).map_err(value_error)
}

/// Evaluates calls against a program given as MJ source (one or more
/// methods). Returns one value per call; a runtime error raises.
#[pyfunction]
#[pyo3(signature = (source, calls, step_limit = DEFAULT_STEP_LIMIT))]
fn evaluate(py: Python<'_>, source: &str, calls: Vec<(String, Vec<Bound<'_, PyAny>>)>, step_limit: u64) -> PyResult<Vec<Py<PyAny>>> {
    let methods = program(source)?;
    match eval_calls(&methods, &to_calls(&calls)?, step_limit) {
        EvalOutcome::Values(vs) => vs.iter().map(|v| from_value(py, v)).collect(),
        EvalOutcome::RuntimeError(kind) => Err(PyRuntimeError::new_err(format!("{kind:?}"))),
    }
}

/// "F" when the candidate program behaves differently from the reference
/// on the calls, "P" otherwise.
#[pyfunction]
#[pyo3(signature = (candidate, reference, calls, step_limit = DEFAULT_STEP_LIMIT))]
fn label(candidate: &str, reference: &str, calls: Vec<(String, Vec<Bound<'_, PyAny>>)>, step_limit: u64) -> PyResult<&'static str> {
    let test = UnitTest::new("py", "py", to_calls(&calls)?);
    let l = label_pair(&test, &program(candidate)?, &program(reference)?, step_limit).map_err(value_error)?;
    Ok(label_str(l))
}

/// A parsed and typechecked MJ method.
#[pyclass(name = "Method", module = "oracleforge_py", frozen)]
struct PyMethod {
    inner: SourceMethod,
}

#[pymethods]
impl PyMethod {
    #[new]
    fn new(source: &str) -> PyResult<Self> {
        Ok(PyMethod { inner: parse_method(source).map_err(value_error)? })
    }

    #[getter]
    fn name(&self) -> &str {
        &self.inner.name
    }

    #[getter]
    fn source(&self) -> &str {
        &self.inner.source
    }

    #[getter]
    fn tokens(&self) -> Vec<String> {
        self.inner.tokens.iter().map(|t| t.lexeme.clone()).collect()
    }

    /// Statement id of every token.
    #[getter]
    fn statement_ids(&self) -> Vec<usize> {
        self.inner.stmt_spans.clone()
    }

    /// Every compilable first-order mutation as (operator, statement, node).
    fn mutables(&self) -> Vec<(String, usize, usize)> {
        enumerate_mutables(&self.inner).into_iter().map(|m| (m.op.name().to_string(), m.stmt, m.node)).collect()
    }

    fn apply(&self, op: &str, stmt: usize, node: usize) -> PyResult<String> {
        let op: MutationOperator = op.parse().map_err(PyValueError::new_err)?;
        apply_mutable(&self.inner, &Mutable::new(op, stmt, node)).map_err(value_error)
    }

    /// Seeded higher-order mutants as dicts (parent, source, applied, order).
    #[pyo3(signature = (max_order = 3, per_method = 6, seed = 0))]
    fn mutants(&self, py: Python<'_>, max_order: usize, per_method: usize, seed: u64) -> PyResult<Py<PyAny>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        to_py(py, &sample_mutants(&self.inner, max_order, per_method, &mut rng))
    }

    fn __repr__(&self) -> String {
        format!("Method({:?}, {} statements)", self.inner.name, self.inner.stmt_count())
    }
}

/// Writes a synthetic corpus to `out` and returns (families, methods, tests).
#[pyfunction]
#[pyo3(signature = (out, families = 4, methods = 12, tests = 8, seed = 7, disjoint = 0))]
fn synth(out: PathBuf, families: usize, methods: usize, tests: usize, seed: u64, disjoint: usize) -> PyResult<(usize, usize, usize)> {
    let cfg = SynthConfig {
        n_families: families,
        methods_per_family: methods,
        tests_per_method: tests,
        seed,
        disjoint_families: disjoint,
        ..SynthConfig::default()
    };
    let corpus = synth_corpus(&cfg).map_err(value_error)?;
    write_corpus(&corpus, &out).map_err(value_error)?;
    Ok((corpus.families.len(), corpus.method_count(), corpus.test_count()))
}

/// A trained oracle loaded from a checkpoint file.
#[pyclass(name = "Oracle", module = "oracleforge_py", frozen)]
struct PyOracle {
    inner: ModelCheckpoint,
}

#[pymethods]
impl PyOracle {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyOracle { inner: ModelCheckpoint::load(&path).map_err(value_error)? })
    }

    #[getter]
    fn hash(&self) -> PyResult<String> {
        self.inner.hash().map_err(value_error)
    }

    /// Verdict dict: label, probabilities, logits, embeddings, latency.
    fn predict(&self, py: Python<'_>, test_text: &str, mut_text: &str) -> PyResult<Py<PyAny>> {
        to_py(py, &predict_texts(&self.inner.model, test_text, mut_text).map_err(value_error)?)
    }

    /// Attended tokens and statements of a MUT at threshold `k` percent.
    #[pyo3(signature = (mut_text, k = 20.0))]
    fn attention(&self, py: Python<'_>, mut_text: &str, k: f64) -> PyResult<Py<PyAny>> {
        let sa = mut_attention(&self.inner.model, mut_text).map_err(value_error)?;
        to_py(py, &analyse(&sa, k).map_err(value_error)?)
    }
}

/// Attended tokens and statements of a row-stochastic matrix.
#[pyfunction]
fn attention_analysis(py: Python<'_>, weights: Vec<Vec<f64>>, tokens: Vec<String>, statement_ids: Vec<usize>, k: f64) -> PyResult<Py<PyAny>> {
    let n = weights.len();
    if weights.iter().any(|r| r.len() != n) {
        return Err(PyValueError::new_err("attention matrix must be square"));
    }
    let sa = AttentionMatrix::new(Tensor::from_vec(n, n, weights.concat()), tokens, statement_ids).map_err(value_error)?;
    to_py(py, &analyse(&sa, k).map_err(value_error)?)
}

/// Fisher projection of embeddings; `labels` is True for buggy.
#[pyfunction]
fn lda_project(py: Python<'_>, embeddings: Vec<Vec<f64>>, labels: Vec<bool>) -> PyResult<Py<PyAny>> {
    to_py(py, &lda(&embeddings, &labels).map_err(value_error)?)
}

#[pyfunction]
#[pyo3(signature = (test, positive, negative, alpha = 0.2))]
fn margin_ranking_loss(test: Vec<f64>, positive: Vec<f64>, negative: Vec<f64>, alpha: f64) -> PyResult<f64> {
    oracleforge::neural::margin_ranking_loss(&test, &positive, &negative, alpha).map_err(value_error)
}

/// Confusion counts and ratios; undefined ratios are None.
#[pyfunction]
#[pyo3(signature = (predicted, gold, positive = "P"))]
fn metrics(py: Python<'_>, predicted: Vec<String>, gold: Vec<String>, positive: &str) -> PyResult<Py<PyAny>> {
    let p = predicted.iter().map(|s| to_label(s)).collect::<PyResult<Vec<_>>>()?;
    let g = gold.iter().map(|s| to_label(s)).collect::<PyResult<Vec<_>>>()?;
    to_py(py, &compute_metrics(&p, &g, to_label(positive)?).map_err(value_error)?)
}

/// Runs an experiment from TOML text (defaults when None) and returns the
/// report dict. `held_out` switches to cross-family mode.
#[pyfunction]
#[pyo3(signature = (config = None, out = None, seed = None, held_out = None))]
fn run_experiment(
    py: Python<'_>,
    config: Option<&str>,
    out: Option<PathBuf>,
    seed: Option<u64>,
    held_out: Option<Vec<String>>,
) -> PyResult<Py<PyAny>> {
    let mut cfg = match config {
        Some(text) => ExperimentConfig::from_toml(text).map_err(value_error)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = seed {
        cfg = cfg.with_seed(s);
    }
    if let Some(h) = held_out {
        cfg.mode = Mode::CrossFamily;
        cfg.held_out = h;
    }
    cfg.out = out;
    let report = py.detach(|| run_configured(&cfg)).map_err(value_error)?;
    to_py(py, &report)
}

#[pymodule]
fn oracleforge_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMethod>()?;
    m.add_class::<PyOracle>()?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(label, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(attention_analysis, m)?)?;
    m.add_function(wrap_pyfunction!(lda_project, m)?)?;
    m.add_function(wrap_pyfunction!(margin_ranking_loss, m)?)?;
    m.add_function(wrap_pyfunction!(metrics, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
