use gtf_wasm::{decomposition, guided_points, reference_grid, scheduler_curve, SampleRequest};

fn request(mode: &str) -> SampleRequest<'_> {
    SampleRequest {
        mode,
        w1: 1.0,
        w2: 0.5,
        scheduler: "cosine",
        cfg_scale: 1.0,
        steps: 20,
        n: 300,
        seed: 4,
    }
}

#[test]
fn guided_points_are_interleaved_and_seeded() {
    let a = guided_points(&request("removal")).unwrap();
    assert_eq!(a.len(), 600);
    assert!(a.iter().all(|v| v.is_finite()));
    assert_eq!(a, guided_points(&request("removal")).unwrap());
    let other = SampleRequest { seed: 5, ..request("removal") };
    assert_ne!(a, guided_points(&other).unwrap());
}

#[test]
fn removal_weight_shifts_mass_to_the_left_cluster() {
    let left = |w2: f64| {
        let pts = guided_points(&SampleRequest { w2, n: 1000, ..request("removal") }).unwrap();
        pts.chunks(2).filter(|p| p[0] < 0.0).count()
    };
    let (off, on) = (left(0.0), left(1.0));
    assert!(on > off + 200, "{off} -> {on}");
}

#[test]
fn bad_names_are_errors() {
    assert!(guided_points(&request("swap")).is_err());
    assert!(guided_points(&SampleRequest { scheduler: "step", ..request("addition") }).is_err());
    assert!(scheduler_curve("quadratic", 1.0, 10).is_err());
}

#[test]
fn reference_grid_is_a_distribution() {
    let g = reference_grid("addition", 4.0, 32).unwrap();
    assert_eq!(g.len(), 32 * 32);
    assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-9);
}

#[test]
fn scheduler_curve_endpoints() {
    let c = scheduler_curve("cosine", 1.0, 11).unwrap();
    assert_eq!(c.len(), 11);
    assert!((c[0] - 2.0).abs() < 1e-12 && c[10].abs() < 1e-12);
    let s = scheduler_curve("sine", 1.0, 11).unwrap();
    assert!(s[0].abs() < 1e-12 && (s[10] - 2.0).abs() < 1e-12);
}

#[test]
fn decomposition_parts_add_up() {
    let out = decomposition("addition", [2.0, 0.0], [1.0, 1.0], 1.0, 0.5).unwrap();
    assert_eq!(out.len(), 6);
    assert_eq!(&out[..2], &[1.0, 0.0]);
    assert_eq!(&out[2..4], &[0.0, 1.0]);
    assert_eq!(&out[4..], &[2.0, 0.5]);
    let out = decomposition("removal", [1.0, 1.0], [2.0, 0.0], 1.0, 2.0).unwrap();
    assert_eq!(&out[4..], &[-2.0, 1.0]);
    assert!(decomposition("addition", [0.0, 0.0], [1.0, 1.0], 1.0, 0.5).is_err());
}
