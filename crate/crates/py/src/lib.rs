use pyo3::prelude::*;

#[pymodule]
fn dsm_py(_m: &Bound<'_, PyModule>) -> PyResult<()> {
    Ok(())
}
