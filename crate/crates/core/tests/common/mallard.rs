//! Published MPIP columns (EPE, RPE, FPE) of the mallard case study.

use occsel_core::model_space::{build_poly_dag, PolyDag};

pub fn mallard_dags() -> (PolyDag, PolyDag) {
    (
        build_poly_dag(&["date", "ivel"], 2, true, &[]).unwrap(),
        build_poly_dag(&["elev", "forest", "length"], 2, true, &[]).unwrap(),
    )
}

pub const PRESENCE: [(&str, [f64; 3]); 9] = [
    ("elev", [0.9966, 1.0000, 1.0000]),
    ("forest", [0.9446, 0.9525, 0.9489]),
    ("length", [0.4305, 0.5998, 0.5983]),
    ("forest*length", [0.2153, 0.3803, 0.4090]),
    ("elev*length", [0.2069, 0.3336, 0.3491]),
    ("elev*forest", [0.1297, 0.1448, 0.1732]),
    ("elev^2", [0.1110, 0.1293, 0.1620]),
    ("forest^2", [0.1067, 0.1229, 0.1504]),
    ("length^2", [0.0734, 0.1440, 0.1639]),
];
pub const DETECTION: [(&str, [f64; 3]); 5] = [
    ("date", [0.1315, 0.1982, 0.3846]),
    ("ivel", [0.0538, 0.1476, 0.3568]),
    ("date^2", [0.0258, 0.0560, 0.1119]),
    ("ivel^2", [0.0133, 0.0540, 0.0980]),
    ("date*ivel", [0.0012, 0.0250, 0.0645]),
];

pub fn column(dag: &PolyDag, table: &[(&str, [f64; 3])], col: usize) -> Vec<f64> {
    let mut out = vec![f64::NAN; dag.n_candidates()];
    for (label, values) in table {
        out[dag.node_by_label(label).unwrap()] = values[col];
    }
    assert!(out.iter().all(|v| v.is_finite()));
    out
}
