use std::f64::consts::TAU;

use curvlab_core::flow::{h_flow_rhs, run_h_flow, FlowParams};
use curvlab_core::geometry::Background;
use curvlab_core::grid::{d2, d_central, sym_index, GridSpec, MetricField, SymTensorField};
use curvlab_core::linalg;

fn bump(grid: GridSpec, amp: f64) -> MetricField<f64> {
    MetricField::new(SymTensorField::from_fn(grid, |x: &[f64]| {
        let mut m = linalg::identity(grid.dim);
        let u = amp * (TAU * x[0]).sin() * (1.0 + 0.5 * (TAU * x[1]).cos());
        for i in 0..grid.dim {
            m[i][i] = (2.0 * u).exp();
        }
        m[0][1] = 0.05 * (TAU * (x[0] - x[1])).sin();
        m[1][0] = m[0][1];
        m
    }))
    .unwrap()
}

/// Quasilinear form of the h-flow for a flat background:
/// `∂_t g_ij = g^{ab}∂_a∂_b g_ij + ½ g^{ab} g^{pq}(∂_i g_pa ∂_j g_qb + 2∂_a g_jp ∂_q g_ib
///  − 2∂_a g_jp ∂_b g_iq − 2∂_j g_pa ∂_b g_iq − 2∂_i g_pa ∂_b g_jq)`.
fn expanded_rhs(g: &MetricField<f64>) -> Vec<[[f64; 4]; 4]> {
    let grid = g.grid();
    let n = grid.dim;
    let comp = |i: usize, j: usize| &g.comps[sym_index(n, i.min(j), i.max(j))];
    let mut d1 = vec![vec![vec![vec![0.0; grid.nodes()]; n]; n]; n];
    let mut dd = vec![vec![vec![vec![vec![0.0; grid.nodes()]; n]; n]; n]; n];
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                d1[k][i][j] = d_central(&grid, comp(i, j), k);
                for l in 0..n {
                    dd[k][l][i][j] = d2(&grid, comp(i, j), k, l);
                }
            }
        }
    }
    (0..grid.nodes())
        .map(|node| {
            let gi = linalg::inverse(&g.matrix(node), n).unwrap();
            let dg = |k: usize, i: usize, j: usize| d1[k][i][j][node];
            let mut out = [[0.0; 4]; 4];
            for i in 0..n {
                for j in 0..n {
                    let mut s = 0.0;
                    for a in 0..n {
                        for b in 0..n {
                            s += gi[a][b] * dd[a][b][i][j][node];
                            for p in 0..n {
                                for q in 0..n {
                                    s += 0.5
                                        * gi[a][b]
                                        * gi[p][q]
                                        * (dg(i, p, a) * dg(j, q, b) + 2.0 * dg(a, j, p) * dg(q, i, b)
                                            - 2.0 * dg(a, j, p) * dg(b, i, q)
                                            - 2.0 * dg(j, p, a) * dg(b, i, q)
                                            - 2.0 * dg(i, p, a) * dg(b, j, q));
                                }
                            }
                        }
                    }
                    out[i][j] = s;
                }
            }
            out
        })
        .collect()
}

#[test]
fn tensor_and_expanded_forms_agree() {
    for dim in [2, 3] {
        let grid = GridSpec::new(dim, if dim == 2 { 32 } else { 12 }).unwrap();
        let g = bump(grid, 0.1);
        let h = Background::new(&MetricField::flat(grid)).unwrap();
        let rhs = h_flow_rhs(&g, &h).unwrap();
        let oracle = expanded_rhs(&g);
        let mut worst: f64 = 0.0;
        for (node, o) in oracle.iter().enumerate() {
            for i in 0..dim {
                for j in 0..dim {
                    worst = worst.max((rhs.get(node, i, j) - o[i][j]).abs());
                }
            }
        }
        assert!(worst <= 1e-8, "dim {dim}: {worst:e}");
    }
}

#[test]
fn flow_is_equivariant_under_axis_swap() {
    let grid = GridSpec::new(2, 16).unwrap();
    let g0 = bump(grid, 0.1);
    let flat = MetricField::flat(grid);
    let params = FlowParams { t_end: 0.002, save_stride: 1000, ..Default::default() };
    let a = run_h_flow(&g0, &flat, params).unwrap();
    let swapped = MetricField::new(g0.tensor().permute_axes(&[1, 0])).unwrap();
    let b = run_h_flow(&swapped, &flat, params).unwrap();
    assert_eq!(a.dt_history.len(), b.dt_history.len());
    let last_a = a.states.last().unwrap().g.tensor().permute_axes(&[1, 0]);
    let last_b = b.states.last().unwrap().g.tensor();
    assert!(last_a.sub(last_b).unwrap().max_abs() <= 1e-12);
}

#[test]
fn flow_is_deterministic() {
    let grid = GridSpec::new(2, 16).unwrap();
    let g0 = bump(grid, 0.1);
    let flat = MetricField::flat(grid);
    let params = FlowParams { t_end: 0.001, ..Default::default() };
    let a = run_h_flow(&g0, &flat, params).unwrap();
    let b = run_h_flow(&g0, &flat, params).unwrap();
    assert_eq!(a.dt_history, b.dt_history);
    for (x, y) in a.states.iter().zip(&b.states) {
        assert_eq!(x.g, y.g);
    }
}
