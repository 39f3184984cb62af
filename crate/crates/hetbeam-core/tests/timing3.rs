use hetbeam_core::channel::{generate_scene, SceneParams};
use hetbeam_core::geometry::SphericalAngle;
use hetbeam_core::rsrp::{build_measurement_set, path_info_from_scene, MeasurementSet, SamplingPlan};
use hetbeam_core::tracer::{angle_assignment_errors, objective, optimize_angles, optimize_matrices, TracerConfig};

fn with_pol_diversity(scene: &hetbeam_core::channel::Scene, seed: u64) -> MeasurementSet {
    // Duplicate the physical panels with a rotated feed and re-measure.
    let mut scene2 = scene.clone();
    let mut extra: Vec<_> = scene.ue_panels.iter().cloned().map(|mut p| {
        p.pol_angle += std::f64::consts::PI / 4.0;
        p
    }).collect();
    scene2.ue_panels.append(&mut extra);
    let plan = SamplingPlan::bs_subgrid(8, 8, 8, true);
    build_measurement_set(&scene2, &plan, seed).unwrap()
}

#[test]
#[ignore]
fn polish_with_pol_diversity() {
    for seed in 0..4u64 {
        let mut params = SceneParams::default();
        params.n_paths = 3;
        params.blockage_probability = 0.0;
        let scene = generate_scene(seed, &params).unwrap();
        let truth = path_info_from_scene(&scene);
        let ms = with_pol_diversity(&scene, seed);
        println!("M = {}", ms.len());

        let mut start = truth.clone();
        let mut s = 0.09; // ~7 degrees again
        for a in &mut start.angles {
            a.aoa = SphericalAngle::new(a.aoa.theta + s, a.aoa.phi - s);
            a.aod = SphericalAngle::new(a.aod.theta - s, a.aod.phi + s);
            s = -s;
        }
        let rho = (ms.len() * 3) as f64;
        for m in &mut start.matrices {
            *m = nalgebra::Matrix4::identity().map(|z: hetbeam_core::linalg::C64| z * ms.norm_factor / rho);
        }

        let mut cfg = TracerConfig::default();
        cfg.powell.ladder = false;
        cfg.powell.initial_step = 0.05;
        let mut state = start;
        for _ in 0..12 {
            let a = optimize_angles(&ms, &state, &cfg);
            let m = optimize_matrices(&ms, &a.path_info, &cfg);
            state = m.path_info;
        }
        let f = objective(&ms, &state);
        let errs = angle_assignment_errors(&state, &truth);
        let max_err = errs.iter().map(|(a, d)| a.max(*d)).fold(0.0f64, f64::max).to_degrees();
        println!("seed {seed}: f={:.3e} f_truth={:.3e} max_angle_err={max_err:.2}deg", f, objective(&ms, &truth));
    }
}
