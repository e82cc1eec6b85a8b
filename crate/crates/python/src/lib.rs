use pyo3::prelude::*;

#[pymodule]
fn qdcascade_py(_m: &Bound<'_, PyModule>) -> PyResult<()> {
    Ok(())
}
