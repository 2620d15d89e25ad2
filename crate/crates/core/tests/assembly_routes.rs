use wgqed::assembly::{
    assemble_cluster_route, assemble_main_result_route, expressions_equal, ConnectedPieces,
};
use wgqed::kerr::KerrParams;
use num_complex::Complex64;
use wgqed::system::{build_kerr, CMatrix, LocalSystem};

#[test]
fn routes_agree_with_kerr_closed_form_pieces() {
    let params = KerrParams::new(0.0, 1.0, 1.0).unwrap();
    let pieces = ConnectedPieces::kerr(params);
    for n in 1..=3 {
        let main = assemble_main_result_route(&build_kerr(0.0, 1.0, 1.0, n + 1).unwrap(), n).unwrap();
        let cluster = assemble_cluster_route(&pieces, n, main.window).unwrap();
        let report = expressions_equal(&main, &cluster, 20).unwrap();
        assert!(report.structural_match, "n={n}: {report:?}");
        assert!(report.max_relative_deviation < 1e-8, "n={n}: {report:?}");
    }
}

#[test]
fn routes_agree_with_engine_pieces_for_detuned_kerr() {
    let sys = build_kerr(0.6, -0.4, 0.8, 4).unwrap();
    let pieces = ConnectedPieces::from_engine(&sys, 3).unwrap();
    for n in 1..=3 {
        let main = assemble_main_result_route(&sys, n).unwrap();
        let cluster = assemble_cluster_route(&pieces, n, main.window).unwrap();
        let report = expressions_equal(&main, &cluster, 10).unwrap();
        assert!(report.passes(1e-8), "n={n}: {report:?}");
    }
}

// Cavity coupled to a two-level atom, basis |n, g/e> at index 2n + sigma; the
// eigenbasis mixes photon and atomic excitations.
fn jaynes_cummings(omega: f64, omega_atom: f64, g: f64, gamma: f64, n_max: usize) -> LocalSystem {
    let dim = 2 * (n_max + 1);
    let c = |x: f64| Complex64::new(x, 0.0);
    let mut h = CMatrix::zeros(dim, dim);
    let mut a = CMatrix::zeros(dim, dim);
    for n in 0..=n_max {
        for s in 0..2 {
            let i = 2 * n + s;
            h[(i, i)] = Complex64::new(omega * n as f64 + omega_atom * s as f64, -0.5 * gamma * n as f64);
            if n > 0 {
                a[(i - 2, i)] = c((n as f64).sqrt());
            }
        }
        // a^dag sigma^- : |n, e> -> |n+1, g>
        if n < n_max {
            let amp = c(g * ((n + 1) as f64).sqrt());
            h[(2 * (n + 1), 2 * n + 1)] += amp;
            h[(2 * n + 1, 2 * (n + 1))] += amp;
        }
    }
    LocalSystem::new(h, a, gamma).unwrap()
}

#[test]
fn routes_agree_for_cavity_with_atom() {
    let sys = jaynes_cummings(0.0, 0.3, 0.7, 1.0, 3);
    let pieces = ConnectedPieces::from_engine(&sys, 3).unwrap();
    for n in 2..=3 {
        let main = assemble_main_result_route(&sys, n).unwrap();
        let cluster = assemble_cluster_route(&pieces, n, main.window).unwrap();
        let report = expressions_equal(&main, &cluster, 10).unwrap();
        assert!(report.passes(1e-8), "n={n}: {report:?}");
    }
}

#[test]
fn four_photon_routes_agree() {
    let sys = build_kerr(0.0, 0.9, 1.0, 5).unwrap();
    let pieces = ConnectedPieces::from_engine(&sys, 4).unwrap();
    let main = assemble_main_result_route(&sys, 4).unwrap();
    let cluster = assemble_cluster_route(&pieces, 4, main.window).unwrap();
    assert_eq!(cluster.terms().len(), 131);
    let report = expressions_equal(&main, &cluster, 3).unwrap();
    assert!(report.passes(1e-8), "{report:?}");
}
