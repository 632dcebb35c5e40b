use std::time::Instant;

use lauerl::geometry::{
    align_axis_to_beam, angular_distance, beam_axis, compose_orientation, crystal_orientation, initial_orientation,
    orthonormality_defect, reflection_allowed, rotation_matrix, target_set, CrystalSpec, Mat3, RotationAxis, SpaceGroup,
    TargetMode, TargetSet, Vec3,
};
use lauerl::render::{pinhole_mask, render_observation};
use lauerl::simulator::{DetectorGeometry, LaueSimulator, WavelengthBand};
use proptest::prelude::*;

fn assert_rotation(m: &Mat3) {
    let (defect, det) = orthonormality_defect(m);
    assert!(defect < 1e-9, "defect {defect}");
    assert!((det - 1.0).abs() <= 1e-9, "det {det}");
}

fn angle() -> impl Strategy<Value = f64> {
    -180.0..180.0f64
}

fn unit() -> impl Strategy<Value = Vec3> {
    (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
        .prop_filter("nonzero", |(x, y, z)| x * x + y * y + z * z > 1e-6)
        .prop_map(|(x, y, z)| Vec3::new(x, y, z).normalize())
}

/// Lattice points of the conventional cell, listed independently of the library.
fn lattice_points(g: SpaceGroup) -> Vec<[f64; 3]> {
    match g.number() {
        221 | 191 => vec![[0.0; 3]],
        229 | 139 => vec![[0.0; 3], [0.5, 0.5, 0.5]],
        225 => vec![[0.0; 3], [0.5, 0.5, 0.0], [0.5, 0.0, 0.5], [0.0, 0.5, 0.5]],
        n => panic!("no basis for {n}"),
    }
}

fn structure_factor(points: &[[f64; 3]], h: i32, k: i32, l: i32) -> f64 {
    let (mut re, mut im) = (0.0, 0.0);
    for p in points {
        let phase = 2.0 * std::f64::consts::PI * (h as f64 * p[0] + k as f64 * p[1] + l as f64 * p[2]);
        re += phase.cos();
        im += phase.sin();
    }
    (re * re + im * im).sqrt()
}

#[test]
fn extinction_rules_match_structure_factor() {
    let t = Instant::now();
    let mut disagreements = 0;
    for g in SpaceGroup::ALL {
        let spec = CrystalSpec::preset(g);
        let pts = lattice_points(g);
        for h in -4..=4 {
            for k in -4..=4 {
                for l in -4..=4 {
                    if (h, k, l) == (0, 0, 0) {
                        continue;
                    }
                    let brute = structure_factor(&pts, h, k, l) > 1e-9;
                    disagreements += (brute != reflection_allowed(&spec, h, k, l).unwrap()) as usize;
                }
            }
        }
    }
    assert_eq!(disagreements, 0);
    assert!(t.elapsed().as_secs_f64() < 10.0);
}

fn cubic_targets() -> TargetSet {
    target_set(&CrystalSpec::preset(SpaceGroup::PrimitiveCubic), TargetMode::AllCubicHighSymmetry).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn rotations_are_orthonormal(a in angle(), b in angle(), c in angle(), d in angle(), e in angle(), v in unit()) {
        for axis in [RotationAxis::X, RotationAxis::Y, RotationAxis::Z] {
            assert_rotation(&rotation_matrix(axis, a));
        }
        let omega0 = initial_orientation(a, b, c);
        assert_rotation(&omega0);
        assert_rotation(&compose_orientation(&omega0, d, e));
        let base = align_axis_to_beam(&v);
        assert_rotation(&base);
        assert_rotation(&crystal_orientation(&omega0, d, e, &base));
        prop_assert!((base * v - beam_axis()).norm() < 1e-9);
    }

    #[test]
    fn yaw_then_undo_is_identity(a in angle(), b in angle(), c in angle(), t in angle()) {
        let omega0 = initial_orientation(a, b, c);
        let m = compose_orientation(&omega0, t, 0.0) * compose_orientation(&omega0, -t, 0.0);
        prop_assert!((m - Mat3::identity()).amax() < 1e-9);
    }

    #[test]
    fn distance_ignores_axis_sign(v in unit(), a in angle(), b in angle()) {
        let m = rotation_matrix(RotationAxis::X, a) * rotation_matrix(RotationAxis::Z, b) * align_axis_to_beam(&v);
        let targets = cubic_targets();
        let flipped = TargetSet { axes: targets.axes.iter().map(|t| -t).collect(), mode: targets.mode };
        let d = angular_distance(&m, &targets, &beam_axis());
        prop_assert!((d - angular_distance(&m, &flipped, &beam_axis())).abs() < 1e-9);
    }

    #[test]
    fn distance_ignores_roll(v in unit(), a in angle(), chi in angle()) {
        let m = rotation_matrix(RotationAxis::X, a) * align_axis_to_beam(&v);
        let rolled = rotation_matrix(RotationAxis::Z, chi) * m;
        let targets = cubic_targets();
        let d0 = angular_distance(&m, &targets, &beam_axis());
        prop_assert!((d0 - angular_distance(&rolled, &targets, &beam_axis())).abs() < 1e-7);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn observations_bounded_and_deterministic(v in unit(), a in angle(), g in 0usize..5) {
        let spec = CrystalSpec::preset(SpaceGroup::ALL[g]);
        let det = DetectorGeometry::default();
        let m = rotation_matrix(RotationAxis::Z, a) * align_axis_to_beam(&v);
        let sim = LaueSimulator::new(&spec).unwrap();
        let spots = sim.compute(&m, &det, &WavelengthBand::default()).unwrap();
        let obs = render_observation(&spots, &det);
        prop_assert!(obs.data.iter().all(|&x| (0.0..=1.0).contains(&x)));
        for (x, inside) in obs.data.iter().zip(pinhole_mask(det.pinhole_frac)) {
            if inside {
                prop_assert_eq!(*x, 0.0);
            }
        }
        let again = render_observation(&sim.compute(&m, &det, &WavelengthBand::default()).unwrap(), &det);
        prop_assert_eq!(obs, again);
    }
}
