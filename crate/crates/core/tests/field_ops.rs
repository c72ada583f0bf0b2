use diffeo::synth::{make_phantom, random_log_field, PhantomSpec, RandomFieldSpec};
use diffeo::{
    compose, exp_field, field_rms_diff, invert, jacobian_determinant, neg_jacobian_fraction, self_compose_m,
    warp_image, warp_labels, DisplacementField, Grid, SolverConfig,
};

fn grid64() -> Grid {
    Grid::new(64, 64).unwrap()
}

fn suite(seed: u64, amplitude: f64) -> DisplacementField {
    let v = random_log_field(&RandomFieldSpec::new(grid64(), seed, amplitude)).unwrap();
    exp_field(&v, 6).unwrap()
}

/// Bilinear, clamp-to-edge sample computed from scratch.
fn bilinear(f: &DisplacementField, r: f64, c: f64) -> [f64; 2] {
    let g = f.grid();
    let r = r.clamp(0.0, (g.height() - 1) as f64);
    let c = c.clamp(0.0, (g.width() - 1) as f64);
    let (r0, c0) = (r.floor() as usize, c.floor() as usize);
    let (r1, c1) = ((r0 + 1).min(g.height() - 1), (c0 + 1).min(g.width() - 1));
    let (fr, fc) = (r - r0 as f64, c - c0 as f64);
    [0, 1].map(|k| {
        let top = f.get(r0, c0)[k] * (1.0 - fc) + f.get(r0, c1)[k] * fc;
        let bottom = f.get(r1, c0)[k] * (1.0 - fc) + f.get(r1, c1)[k] * fc;
        top * (1.0 - fr) + bottom * fr
    })
}

#[test]
fn compose_matches_per_pixel_oracle() {
    let grid = Grid::new(8, 8).unwrap();
    let outer = DisplacementField::from_fn(grid, |r, c| [(0.7 * r as f64 + c as f64).sin(), (0.4 * c as f64).cos()]);
    let inner = DisplacementField::from_fn(grid, |r, c| {
        [0.6 * (c as f64 * 0.9).cos(), -0.8 * (r as f64 * 0.5).sin()]
    });
    let got = compose(&outer, &inner).unwrap();
    for r in 0..8 {
        for c in 0..8 {
            let u = inner.get(r, c);
            let s = bilinear(&outer, r as f64 + u[0], c as f64 + u[1]);
            let want = [u[0] + s[0], u[1] + s[1]];
            let have = got.get(r, c);
            assert!(
                (have[0] - want[0]).abs() < 1e-14 && (have[1] - want[1]).abs() < 1e-14,
                "({r},{c})"
            );
        }
    }
}

#[test]
fn fourth_power_is_two_squarings() {
    let f = suite(11, 2.0);
    let sq = compose(&f, &f).unwrap();
    assert_eq!(self_compose_m(&f, 4).unwrap(), compose(&sq, &sq).unwrap());
}

#[test]
fn group_identity_is_exact() {
    let f = suite(12, 4.0);
    let id = DisplacementField::identity(f.grid());
    assert_eq!(compose(&f, &id).unwrap(), f);
    assert_eq!(compose(&id, &f).unwrap(), f);
}

#[test]
fn rms_averages_components() {
    let grid = Grid::new(3, 3).unwrap();
    let a = DisplacementField::constant(grid, [3.0, 4.0]);
    let b = DisplacementField::identity(grid);
    assert!((field_rms_diff(&a, &b).unwrap() - 5.0 / 2f64.sqrt()).abs() < 1e-12);
    assert_eq!(field_rms_diff(&a, &b).unwrap(), field_rms_diff(&b, &a).unwrap());
}

#[test]
fn suite_fields_are_diffeomorphic() {
    for seed in 0..100 {
        let f = suite(seed, 4.0);
        assert_eq!(neg_jacobian_fraction(&f), 0.0, "seed {seed}");
        let det = jacobian_determinant(&f);
        assert!(det.values().iter().all(|&d| d > 0.0));
    }
}

#[test]
fn associativity_and_reversed_inverse_within_interpolation_error() {
    let solver = SolverConfig::default();
    for seed in 0..10 {
        let (a, b, c) = (suite(seed, 5.0), suite(100 + seed, 5.0), suite(200 + seed, 5.0));
        let left = compose(&compose(&a, &b).unwrap(), &c).unwrap();
        let right = compose(&a, &compose(&b, &c).unwrap()).unwrap();
        assert!(field_rms_diff(&left, &right).unwrap() <= 0.05);

        let inv = invert(&a, &solver).unwrap().field;
        let id = DisplacementField::identity(a.grid());
        assert!(field_rms_diff(&compose(&a, &inv).unwrap(), &id).unwrap() <= 10.0 * solver.tolerance);
        // The reversed order carries the resampling error of `inv` itself.
        assert!(field_rms_diff(&compose(&inv, &a).unwrap(), &id).unwrap() <= 5e-2);
    }
}

#[test]
fn warp_round_trips_on_suite() {
    let solver = SolverConfig::default();
    let (image, labels) = make_phantom(&PhantomSpec::four_label(grid64())).unwrap();
    for seed in 0..10 {
        let phi = suite(300 + seed, 3.0);
        let inv = invert(&phi, &solver).unwrap().field;
        let back = warp_image(&warp_image(&image, &phi).unwrap(), &inv).unwrap();
        assert!(back.mean_abs_diff(&image).unwrap() <= 0.02, "seed {seed}");

        let relabelled = warp_labels(&warp_labels(&labels, &phi).unwrap(), &inv).unwrap();
        let kept = relabelled
            .labels()
            .iter()
            .zip(labels.labels())
            .filter(|(a, b)| a == b)
            .count();
        assert!(kept as f64 >= 0.95 * labels.labels().len() as f64, "seed {seed}");
    }
}
