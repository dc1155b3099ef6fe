//! C interface to the scenir toolkit.
//!
//! Every fallible function returns a [`ScenirStatus`]. On failure the message
//! is kept per thread and read with [`scenir_last_error_message`]. Objects are
//! opaque handles created by `*_load`/`*_synth` and released with the
//! matching `*_free`. Handles are immutable once created and may be shared
//! across threads.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use scenir::embeddings::{load_table, synth_table, ClassEmbeddingTable, EmbeddingError};
use scenir::ged::{approx_ged, exact_ged, GedCostModel, GedError, GedGraph};
use scenir::graph::{build_matrices, GraphError, GraphFile, GraphMatrices};
use scenir::model::{CheckpointError, Scenir};
use scenir::tensor::TensorError;

/// Result codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScenirStatus {
    Ok = 0,
    /// A required pointer was null.
    NullArgument = 1,
    /// An argument was out of range or not valid UTF-8.
    InvalidArgument = 2,
    /// A file could not be read.
    Io = 3,
    /// A file was read but its contents are malformed or inconsistent.
    Data = 4,
    /// Exact edit distance refused a graph above the node budget.
    BudgetExceeded = 5,
    /// A computation produced a non-finite value.
    Numerical = 6,
    /// The caller's output buffer is too short.
    BufferTooSmall = 7,
    /// Internal error; the library caught a panic.
    Internal = 8,
}

/// Class-embedding table together with the edit-distance cost model built
/// from it.
pub struct ScenirTable {
    table: ClassEmbeddingTable,
    costs: Result<GedCostModel, String>,
}

/// Preprocessed scene graphs, validated against a table.
pub struct ScenirGraphs {
    matrices: Vec<GraphMatrices>,
    ged: Vec<GedGraph>,
    scene: Vec<scenir::graph::SceneGraph>,
}

/// Trained model.
pub struct ScenirModel {
    model: Scenir,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("nul bytes removed"));
}

struct Failure(ScenirStatus, String);

impl Failure {
    fn new(status: ScenirStatus, msg: impl Into<String>) -> Self {
        Failure(status, msg.into())
    }
}

impl From<EmbeddingError> for Failure {
    fn from(e: EmbeddingError) -> Self {
        let status = match e {
            EmbeddingError::Io { .. } => ScenirStatus::Io,
            _ => ScenirStatus::Data,
        };
        Failure(status, e.to_string())
    }
}

impl From<GraphError> for Failure {
    fn from(e: GraphError) -> Self {
        let status = match e {
            GraphError::Io { .. } => ScenirStatus::Io,
            _ => ScenirStatus::Data,
        };
        Failure(status, e.to_string())
    }
}

impl From<CheckpointError> for Failure {
    fn from(e: CheckpointError) -> Self {
        let status = match e {
            CheckpointError::Io(_) => ScenirStatus::Io,
            _ => ScenirStatus::Data,
        };
        Failure(status, e.to_string())
    }
}

impl From<TensorError> for Failure {
    fn from(e: TensorError) -> Self {
        let status = match e {
            TensorError::NonFinite { .. } => ScenirStatus::Numerical,
            _ => ScenirStatus::Data,
        };
        Failure(status, e.to_string())
    }
}

impl From<GedError> for Failure {
    fn from(e: GedError) -> Self {
        let status = match e {
            GedError::BudgetExceeded { .. } => ScenirStatus::BudgetExceeded,
            GedError::Io(_) => ScenirStatus::Io,
            _ => ScenirStatus::Data,
        };
        Failure(status, e.to_string())
    }
}

/// Runs `f`, recording any failure or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> ScenirStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            ScenirStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal error: {msg}"));
            ScenirStatus::Internal
        }
    }
}

unsafe fn path_arg(path: *const c_char) -> Result<PathBuf, Failure> {
    if path.is_null() {
        return Err(Failure::new(ScenirStatus::NullArgument, "path is null"));
    }
    CStr::from_ptr(path)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| Failure::new(ScenirStatus::InvalidArgument, "path is not valid UTF-8"))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure::new(ScenirStatus::NullArgument, format!("{what} handle is null")))
}

unsafe fn out_ptr<'a, T>(p: *mut T) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| Failure::new(ScenirStatus::NullArgument, "output pointer is null"))
}

fn new_table(table: ClassEmbeddingTable) -> ScenirTable {
    let costs = GedCostModel::new(&table).map_err(|e| e.to_string());
    ScenirTable { table, costs }
}

/// Loads a class-embedding table (text or binary format).
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn scenir_table_load(path: *const c_char, out: *mut *mut ScenirTable) -> ScenirStatus {
    guard(|| {
        let out = out_ptr(out)?;
        let table = load_table(&path_arg(path)?)?;
        *out = Box::into_raw(Box::new(new_table(table)));
        Ok(())
    })
}

/// Builds the deterministic synthetic table for `seed`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn scenir_table_synth(
    seed: u64,
    objects: usize,
    predicates: usize,
    dim: usize,
    out: *mut *mut ScenirTable,
) -> ScenirStatus {
    guard(|| {
        let out = out_ptr(out)?;
        let table = synth_table(seed, objects, predicates, dim)
            .map_err(|e| Failure::new(ScenirStatus::InvalidArgument, e.to_string()))?;
        *out = Box::into_raw(Box::new(new_table(table)));
        Ok(())
    })
}

/// Embedding width of the table, or 0 for a null handle.
///
/// # Safety
/// `table` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn scenir_table_dim(table: *const ScenirTable) -> usize {
    table.as_ref().map_or(0, |t| t.table.dim())
}

/// # Safety
/// `table` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn scenir_table_free(table: *mut ScenirTable) {
    if !table.is_null() {
        drop(Box::from_raw(table));
    }
}

/// Loads a preprocessed graph file and checks every graph against `table`.
///
/// # Safety
/// `path` must be a nul-terminated string, `table` a live handle and `out`
/// a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn scenir_graphs_load(
    path: *const c_char,
    table: *const ScenirTable,
    out: *mut *mut ScenirGraphs,
) -> ScenirStatus {
    guard(|| {
        let out = out_ptr(out)?;
        let table = handle(table, "table")?;
        let file = GraphFile::load(&path_arg(path)?)?;
        let matrices = file
            .graphs
            .iter()
            .map(|g| build_matrices(g, &table.table))
            .collect::<Result<Vec<_>, _>>()?;
        let ged = file.graphs.iter().map(GedGraph::from_scene).collect();
        *out = Box::into_raw(Box::new(ScenirGraphs {
            matrices,
            ged,
            scene: file.graphs,
        }));
        Ok(())
    })
}

/// Number of graphs, or 0 for a null handle.
///
/// # Safety
/// `graphs` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn scenir_graphs_len(graphs: *const ScenirGraphs) -> usize {
    graphs.as_ref().map_or(0, |g| g.matrices.len())
}

/// # Safety
/// `graphs` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn scenir_graphs_free(graphs: *mut ScenirGraphs) {
    if !graphs.is_null() {
        drop(Box::from_raw(graphs));
    }
}

/// Loads a model checkpoint.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn scenir_model_load(path: *const c_char, out: *mut *mut ScenirModel) -> ScenirStatus {
    guard(|| {
        let out = out_ptr(out)?;
        let model = Scenir::load(&path_arg(path)?)?;
        *out = Box::into_raw(Box::new(ScenirModel { model }));
        Ok(())
    })
}

/// Length of a graph embedding produced by the model, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn scenir_model_embedding_dim(model: *const ScenirModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.config.latent_dim)
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn scenir_model_free(model: *mut ScenirModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Writes the embedding of graph `index` into `out`, which holds `out_len`
/// doubles. `out_len` must be at least [`scenir_model_embedding_dim`].
///
/// # Safety
/// Handles must be live and `out` must point to `out_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn scenir_embed(
    model: *const ScenirModel,
    graphs: *const ScenirGraphs,
    index: usize,
    out: *mut f64,
    out_len: usize,
) -> ScenirStatus {
    guard(|| {
        let model = &handle(model, "model")?.model;
        let graphs = handle(graphs, "graphs")?;
        if out.is_null() {
            return Err(Failure::new(ScenirStatus::NullArgument, "output buffer is null"));
        }
        let g = graphs.matrices.get(index).ok_or_else(|| {
            Failure::new(
                ScenirStatus::InvalidArgument,
                format!("graph index {index} out of range ({} graphs)", graphs.matrices.len()),
            )
        })?;
        if g.feature_dim() != model.config.input_dim {
            return Err(Failure::new(
                ScenirStatus::InvalidArgument,
                format!(
                    "model expects {}-dimensional features, graphs carry {}",
                    model.config.input_dim,
                    g.feature_dim()
                ),
            ));
        }
        let dim = model.config.latent_dim;
        if out_len < dim {
            return Err(Failure::new(
                ScenirStatus::BufferTooSmall,
                format!("buffer holds {out_len} values, embedding needs {dim}"),
            ));
        }
        let v = model.graph_embedding(g)?;
        std::slice::from_raw_parts_mut(out, dim).copy_from_slice(&v);
        Ok(())
    })
}

unsafe fn ged_inputs<'a>(
    table: *const ScenirTable,
    graphs: *const ScenirGraphs,
    i: usize,
    j: usize,
) -> Result<(&'a GedCostModel, &'a GedGraph, &'a GedGraph), Failure> {
    let table = handle(table, "table")?;
    let graphs = handle(graphs, "graphs")?;
    let costs = table
        .costs
        .as_ref()
        .map_err(|m| Failure::new(ScenirStatus::Data, m.clone()))?;
    let n = graphs.ged.len();
    if i >= n || j >= n {
        return Err(Failure::new(
            ScenirStatus::InvalidArgument,
            format!("graph index out of range ({n} graphs)"),
        ));
    }
    costs.check(&graphs.scene[i])?;
    costs.check(&graphs.scene[j])?;
    Ok((costs, &graphs.ged[i], &graphs.ged[j]))
}

/// Bipartite upper bound on the edit distance between graphs `i` and `j`.
///
/// # Safety
/// Handles must be live and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn scenir_ged_approx(
    table: *const ScenirTable,
    graphs: *const ScenirGraphs,
    i: usize,
    j: usize,
    out: *mut f64,
) -> ScenirStatus {
    guard(|| {
        let out = out_ptr(out)?;
        let (costs, a, b) = ged_inputs(table, graphs, i, j)?;
        *out = approx_ged(a, b, costs).distance;
        Ok(())
    })
}

/// Exact edit distance; graphs above `node_budget` nodes are refused with
/// [`ScenirStatus::BudgetExceeded`].
///
/// # Safety
/// Handles must be live and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn scenir_ged_exact(
    table: *const ScenirTable,
    graphs: *const ScenirGraphs,
    i: usize,
    j: usize,
    node_budget: usize,
    out: *mut f64,
) -> ScenirStatus {
    guard(|| {
        let out = out_ptr(out)?;
        let (costs, a, b) = ged_inputs(table, graphs, i, j)?;
        *out = exact_ged(a, b, costs, node_budget)?.distance;
        Ok(())
    })
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call into the library on the same
/// thread.
#[no_mangle]
pub extern "C" fn scenir_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn scenir_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
