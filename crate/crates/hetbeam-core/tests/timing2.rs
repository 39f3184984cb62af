use hetbeam_core::channel::{generate_scene, SceneParams};
use hetbeam_core::rsrp::{build_measurement_set, path_info_from_scene, SamplingPlan};
use hetbeam_core::tracer::{trace_paths, TracerConfig};

#[test]
#[ignore]
fn debug_one_user() {
    let seed = 0u64;
    let mut params = SceneParams::default();
    params.n_paths = 3;
    params.blockage_probability = 0.0;
    let scene = generate_scene(seed, &params).unwrap();
    let truth = path_info_from_scene(&scene);
    for (i, a) in truth.angles.iter().enumerate() {
        eprintln!("true path {i}: aod=({:.1},{:.1})deg aoa=({:.1},{:.1})deg power={:.2e}",
            a.aod.theta.to_degrees(), a.aod.phi.to_degrees(),
            a.aoa.theta.to_degrees(), a.aoa.phi.to_degrees(),
            truth.matrices[i].trace().re);
    }
    let plan = SamplingPlan::bs_subgrid(8, 8, 8, true);
    let ms = build_measurement_set(&scene, &plan, seed).unwrap();
    let cfg = TracerConfig { init_seed: seed, restarts: 8, ..TracerConfig::default() };
    let res = trace_paths(&ms, 3, &cfg).unwrap();
    for (i, a) in res.path_info.angles.iter().enumerate() {
        eprintln!("rec  path {i}: aod=({:.1},{:.1})deg aoa=({:.1},{:.1})deg power={:.2e}",
            a.aod.theta.to_degrees(), a.aod.phi.to_degrees(),
            a.aoa.theta.to_degrees(), a.aoa.phi.to_degrees(),
            res.path_info.matrices[i].trace().re);
    }
    eprintln!("final f = {:e}", res.final_objective);
}
