//! Python bindings for the licp registration engine.
//!
//! Exposes the mesh type, the staged registration pipeline, the bundled
//! head preset and the transfer metrics. Configurations and correspondence
//! sets cross the boundary as JSON strings using the same schemas as the
//! CLI's files.

use licp::benchmark::{density, homogeneity, TallyFragment, TransferTally};
use licp::correspond::{resolve_sets, SetsFile};
use licp::mesh::{load_mesh, ray_mesh_intersect, save_obj, save_ply, PlyFormat, TriangleMesh};
use licp::pipeline::{head_preset, run_pipeline, PipelineConfig, RunOptions, SolverKind};
use nalgebra::{Point3, Vector3};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

fn to_py_err(e: licp::Error) -> PyErr {
    match &e {
        licp::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// A triangle mesh with 0-based vertex indices.
#[pyclass(name = "Mesh", from_py_object)]
#[derive(Clone)]
struct PyMesh {
    inner: TriangleMesh,
}

#[pymethods]
impl PyMesh {
    #[new]
    fn new(vertices: Vec<[f64; 3]>, triangles: Vec<[usize; 3]>) -> PyResult<Self> {
        let points = vertices
            .into_iter()
            .map(|v| Point3::new(v[0], v[1], v[2]))
            .collect();
        Ok(PyMesh {
            inner: TriangleMesh::new(points, triangles).map_err(to_py_err)?,
        })
    }

    /// Loads an OBJ or PLY mesh, dispatching on the extension.
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyMesh {
            inner: load_mesh(path).map_err(to_py_err)?,
        })
    }

    /// Unit icosphere with the given subdivision level.
    #[staticmethod]
    fn icosphere(subdivisions: usize) -> Self {
        PyMesh {
            inner: licp::mesh::primitives::icosphere(subdivisions),
        }
    }

    /// Writes the mesh; `format` is one of "ply", "ply_ascii" or "obj".
    #[pyo3(signature = (path, format = "ply"))]
    fn save(&self, path: &str, format: &str) -> PyResult<()> {
        match format {
            "ply" => save_ply(&self.inner, path, PlyFormat::BinaryLittleEndian, None),
            "ply_ascii" => save_ply(&self.inner, path, PlyFormat::Ascii, None),
            "obj" => save_obj(&self.inner, path),
            other => {
                return Err(PyValueError::new_err(format!(
                    "unknown format '{other}' (expected ply, ply_ascii or obj)"
                )))
            }
        }
        .map_err(to_py_err)
    }

    #[getter]
    fn n_vertices(&self) -> usize {
        self.inner.n_vertices()
    }

    #[getter]
    fn n_triangles(&self) -> usize {
        self.inner.n_triangles()
    }

    fn vertices(&self) -> Vec<[f64; 3]> {
        self.inner
            .vertices()
            .iter()
            .map(|p| [p.x, p.y, p.z])
            .collect()
    }

    fn triangles(&self) -> Vec<[usize; 3]> {
        self.inner.triangles().to_vec()
    }

    /// Area-weighted unit vertex normals (zero for isolated vertices).
    fn normals(&self) -> Vec<[f64; 3]> {
        self.inner
            .vertex_normals()
            .normals
            .iter()
            .map(|n| [n.x, n.y, n.z])
            .collect()
    }

    fn bbox_diagonal(&self) -> f64 {
        self.inner.bbox_diagonal()
    }

    /// Nearest positive ray intersection as (point, triangle, distance), or
    /// None on a miss.
    fn ray_intersect(
        &self,
        origin: [f64; 3],
        direction: [f64; 3],
    ) -> Option<([f64; 3], usize, f64)> {
        ray_mesh_intersect(
            &self.inner,
            Point3::new(origin[0], origin[1], origin[2]),
            Vector3::new(direction[0], direction[1], direction[2]),
        )
        .map(|hit| {
            (
                [hit.point.x, hit.point.y, hit.point.z],
                hit.triangle,
                hit.distance,
            )
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "Mesh({} vertices, {} triangles)",
            self.inner.n_vertices(),
            self.inner.n_triangles()
        )
    }
}

/// The bundled five-stage human-head registration recipe as JSON.
#[pyfunction]
fn head_preset_json() -> String {
    head_preset().to_json_pretty()
}

/// Registers `data` onto `template`.
///
/// `sets_json` uses the subject landmark-file schema; `config_json` the
/// pipeline-configuration schema. Returns (registered template,
/// repositioned data, trace as JSON lines).
#[pyfunction]
#[pyo3(signature = (template, data, sets_json, config_json, solver = None))]
fn register(
    template: &PyMesh,
    data: &PyMesh,
    sets_json: &str,
    config_json: &str,
    solver: Option<&str>,
) -> PyResult<(PyMesh, PyMesh, String)> {
    let config = PipelineConfig::from_json(config_json).map_err(to_py_err)?;
    let sets_file: SetsFile =
        serde_json::from_str(sets_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let sets =
        resolve_sets(&config.sets, &sets_file, &template.inner, &data.inner).map_err(to_py_err)?;
    let solver_override = solver
        .map(|s| s.parse::<SolverKind>())
        .transpose()
        .map_err(to_py_err)?;
    let options = RunOptions {
        solver_override,
        ..RunOptions::default()
    };
    let result =
        run_pipeline(&config, &template.inner, &data.inner, &sets, &options).map_err(to_py_err)?;
    Ok((
        PyMesh {
            inner: result.template,
        },
        PyMesh { inner: result.data },
        result.trace.to_jsonl(),
    ))
}

/// Mean distance over mutual-nearest-neighbour vertex pairs of two meshes.
#[pyfunction]
fn mean_nn_distance(a: &PyMesh, b: &PyMesh) -> PyResult<f64> {
    let set = licp::correspond::CorrespondenceSet {
        name: "all".into(),
        template_members: (0..a.inner.n_vertices()).collect(),
        data_members: (0..b.inner.n_vertices()).collect(),
        weight: 1.0,
        pairing: licp::correspond::Pairing::Mnn,
        per_pair_weights: None,
    };
    let matches = licp::correspond::match_mnn(&set, &a.inner, &b.inner, 0.0).map_err(to_py_err)?;
    if matches.is_empty() {
        return Err(PyValueError::new_err("no mutual pairs"));
    }
    let total: f64 = matches
        .pairs
        .iter()
        .map(|p| (a.inner.vertex(p.template_index) - p.target).norm())
        .sum();
    Ok(total / matches.len() as f64)
}

/// Annotation-transfer metrics over per-subject (vertex, label) hit lists:
/// returns (density, homogeneity).
#[pyfunction]
fn transfer_metrics(
    n_vertices: usize,
    subject_hits: Vec<Vec<(usize, String)>>,
) -> PyResult<(f64, f64)> {
    let mut tally = TransferTally::new(n_vertices);
    for hits in subject_hits {
        let fragment = TallyFragment {
            hits: hits.into_iter().collect(),
        };
        tally.add_fragment(&fragment);
    }
    let d = density(&tally).map_err(to_py_err)?;
    let h = homogeneity(&tally).map_err(to_py_err)?;
    Ok((d, h.overall))
}

#[pymodule]
fn licp_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMesh>()?;
    m.add_function(wrap_pyfunction!(head_preset_json, m)?)?;
    m.add_function(wrap_pyfunction!(register, m)?)?;
    m.add_function(wrap_pyfunction!(mean_nn_distance, m)?)?;
    m.add_function(wrap_pyfunction!(transfer_metrics, m)?)?;
    Ok(())
}
