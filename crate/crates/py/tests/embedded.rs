use std::ffi::CString;
use std::sync::Once;

use pyo3::prelude::*;
use pyo3::types::PyDict;

use dirpose_py::dirpose_py;

static INIT: Once = Once::new();

fn run(code: &str) -> PyResult<()> {
    INIT.call_once(|| {
        pyo3::append_to_inittab!(dirpose_py);
        Python::initialize();
    });
    Python::attach(|py| {
        let globals = PyDict::new(py);
        py.run(&CString::new(code).unwrap(), Some(&globals), None)
    })
}

#[test]
fn rotations_round_trip() {
    run(r#"
import dirpose_py as dp
r = dp.Rotation.from_axis_angle([0.0, 0.0, 1.0], 0.5)
assert abs(r.angle() - 0.5) < 1e-12
assert dp.geodesic_distance(dp.Rotation(r.matrix()), r) < 1e-7
assert dp.geodesic_distance(dp.Rotation.from_quaternion(r.quaternion()), r) < 1e-7
x = r.apply([1.0, 0.0, 0.0])
assert abs(x[1] - 0.479425538604203) < 1e-12
"#)
    .unwrap();
}

#[test]
fn errors_map_to_python_exceptions() {
    run(r#"
import dirpose_py as dp
for call, exc in [
    (lambda: dp.Rotation([[2.0, 0, 0], [0, 1, 0], [0, 0, 1]]), ValueError),
    (lambda: dp.SphericalDistribution.vmf(8, 8, [0.0, 0.0, 1.0], -1.0), ValueError),
    (lambda: dp.gram_schmidt_project([1.0, 0, 0], [2.0, 0, 0]), ArithmeticError),
    (lambda: dp.load_pairs("/nonexistent/manifest.jsonl"), OSError),
]:
    try:
        call()
    except exc:
        pass
    else:
        raise AssertionError(exc)
"#)
    .unwrap();
}

#[test]
fn dataset_pipeline_and_disk() {
    run(r#"
import os, tempfile
import dirpose_py as dp
pairs = dp.generate_pairs(3, resolution=32, pano_width=128, seed=2)
res = dp.run_pipeline(pairs, "oracle")
assert res.method == "oracle" and len(res.ids) == 3
assert res.mean_rotation_deg < 1e-6 and res.mean_translation_deg < 1e-6
k = pairs[0].intrinsics()
assert abs(k.fx - 16.0) < 1e-12 and abs(k.cx - 15.5) < 1e-12
e = pairs[0].pose.essential()
assert abs(sum(e[i][j] ** 2 for i in range(3) for j in range(3)) - 2.0) < 1e-9
d = tempfile.mkdtemp()
back = dp.load_pairs(dp.save_pairs(pairs, d))
assert [p.id for p in back] == [p.id for p in pairs]
assert back[1].depth(1) == pairs[1].depth(1)
rot_err, trans_err = back[2].pose.errors_to(pairs[2].pose)
assert rot_err < 1e-9 and trans_err < 1e-9
"#)
    .unwrap();
}
