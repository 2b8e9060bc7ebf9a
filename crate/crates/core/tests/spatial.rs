mod common;

use common::*;
use proptest::prelude::*;
use sphconv::geometry::build_kernel;
use sphconv::spatial::{assign_cells, ball_query, dist, farthest_point_sample, NeighborTable};
use sphconv::{KernelKind, LayoutPreset, Point3};

fn cloud(max: usize) -> impl Strategy<Value = Vec<Point3>> {
    prop::collection::vec(prop::array::uniform3(-2.0f64..2.0), 1..=max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fps_matches_brute_force(pts in cloud(64), m_frac in 0.0f64..1.0, start_frac in 0.0f64..1.0) {
        let n = pts.len();
        let m = 1 + ((n - 1) as f64 * m_frac) as usize;
        let start = ((n as f64 * start_frac) as usize).min(n - 1);
        prop_assert_eq!(farthest_point_sample(&pts, m, start).unwrap(), fps_oracle(&pts, m, start));
    }

    #[test]
    fn ball_query_matches_scan(pts in cloud(64), centers in cloud(6), radius in 0.01f64..2.0, k in 1usize..20) {
        let t = ball_query(&pts, &centers, radius, k).unwrap();
        for (j, c) in centers.iter().enumerate() {
            let want = ball_oracle(&pts, *c, radius, k);
            prop_assert_eq!(t.valid(j), want.as_slice());
            let row = t.row(j);
            let fill = want.first().copied().unwrap_or(NeighborTable::EMPTY);
            prop_assert!(row[want.len()..].iter().all(|&i| i == fill));
        }
    }

    #[test]
    fn assign_cells_matches_containment(pts in cloud(80), centers in cloud(3), r in 0.1f64..1.0, cube in any::<bool>()) {
        let kind = if cube { KernelKind::CubeGrid } else { KernelKind::SpherePacked };
        let g = build_kernel(kind, r, &kind.default_preset()).unwrap();
        let cells = assign_cells(&pts, &centers, &g);
        for (j, c) in centers.iter().enumerate() {
            for k in 0..g.len() {
                let want = cell_oracle(&pts, *c, &g, k);
                prop_assert_eq!(cells.members(j, k), want.as_slice());
            }
        }
    }

    #[test]
    fn fps_is_a_permutation_when_exhaustive(pts in cloud(40)) {
        let mut got = farthest_point_sample(&pts, pts.len(), 0).unwrap();
        got.sort_unstable();
        prop_assert_eq!(got, (0..pts.len()).collect::<Vec<_>>());
    }
}

fn unit_grid() -> Vec<Point3> {
    let mut pts = Vec::new();
    for x in -2..=2 {
        for y in -2..=2 {
            for z in -2..=2 {
                pts.push([x as f64, y as f64, z as f64]);
            }
        }
    }
    pts
}

#[test]
fn unit_grid_ball_keeps_lowest_indices() {
    let pts = unit_grid();
    // origin, 6 face and 12 edge neighbours lie within 1.5; k = 8 keeps the lowest indices
    let t = ball_query(&pts, &[[0.0; 3]], 1.5, 8).unwrap();
    let inside: Vec<u32> = (0..pts.len() as u32)
        .filter(|&i| dist(pts[i as usize], [0.0; 3]) <= 1.5)
        .collect();
    assert_eq!(inside.len(), 19);
    assert_eq!(t.valid(0), &inside[..8]);
}

#[test]
fn unit_grid_face_neighbours_are_padded() {
    let pts = unit_grid();
    let t = ball_query(&pts, &[[0.0; 3]], 1.2, 8).unwrap();
    assert_eq!(t.valid_counts[0], 7);
    let row = t.row(0);
    assert!(row[..7].windows(2).all(|w| w[0] < w[1]));
    assert_eq!(row[7], row[0]);
}

#[test]
fn hundred_points_in_the_kernel_box() {
    let mut g = rng(3);
    let geometry = build_kernel(KernelKind::SpherePacked, 1.0, &LayoutPreset::K15).unwrap();
    let pts = random_points(&mut g, 100, 3.7);
    let cells = assign_cells(&pts, &[[0.0; 3]], &geometry);
    for k in 0..geometry.len() {
        assert_eq!(cells.members(0, k), cell_oracle(&pts, [0.0; 3], &geometry, k).as_slice());
    }
    // every point within r of some cell center shows up somewhere
    let union: std::collections::BTreeSet<u32> = cells.flat_members().iter().copied().collect();
    for (i, p) in pts.iter().enumerate() {
        let near = geometry.cell_offsets.iter().any(|c| dist(*p, *c) <= 1.0);
        assert_eq!(near, union.contains(&(i as u32)), "point {i}");
    }
}
