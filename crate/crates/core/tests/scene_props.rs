use fovlab::geometry::{project_to_bev, GridSpec};
use fovlab::scene::{generate_scene, ground_truth_fov, simulate_lidar, FamilyName, LidarModel, Scene, SceneFamily};
use proptest::prelude::*;

fn family() -> impl Strategy<Value = FamilyName> {
    prop::sample::select(FamilyName::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn visibility_is_star_shaped(name in family(), seed in any::<u64>(), theta in 0.0..std::f64::consts::TAU) {
        let scene = generate_scene(&SceneFamily::preset(name), seed).unwrap();
        let o = scene.sensor_xy();
        let at = |r: f64| [o[0] + r * theta.cos(), o[1] + r * theta.sin()];
        let mut hidden = false;
        for i in 1..400 {
            let seen = scene.line_of_sight(at(i as f64 * 0.1));
            prop_assert!(!(hidden && seen), "visible again at r = {}", i as f64 * 0.1);
            hidden |= !seen;
        }
    }

    #[test]
    fn adding_obstacles_never_reveals_cells(name in family(), seed in any::<u64>()) {
        let full = generate_scene(&SceneFamily::preset(name), seed).unwrap();
        let lidar = LidarModel::new(360, 75.0).unwrap();
        let spec = GridSpec::new(32.0, 48).unwrap();
        let mut prev = usize::MAX;
        for k in 0..=full.obstacles.len() {
            let s = Scene::new(full.obstacles[..k].to_vec(), full.sensor, full.bounds, full.enclosed).unwrap();
            let visible = ground_truth_fov(&s, &lidar, &spec).count_visible();
            prop_assert!(visible <= prev);
            prev = visible;
        }
    }

    #[test]
    fn ground_truth_ignores_noise(name in family(), seed in any::<u64>()) {
        let scene = generate_scene(&SceneFamily::preset(name), seed).unwrap();
        let spec = GridSpec::new(32.0, 32).unwrap();
        let clean = LidarModel::new(360, 75.0).unwrap();
        let noisy = LidarModel { range_noise_sigma: 0.3, dropout_prob: 0.2, ..clean };
        prop_assert_eq!(ground_truth_fov(&scene, &clean, &spec), ground_truth_fov(&scene, &noisy, &spec));
    }

    #[test]
    fn noiseless_hits_are_visible(name in family(), seed in any::<u64>()) {
        let scene = generate_scene(&SceneFamily::preset(name), seed).unwrap();
        let cloud = simulate_lidar(&scene, &LidarModel::new(720, 75.0).unwrap(), seed).unwrap();
        let o = scene.sensor_xy();
        for p in project_to_bev(&cloud).unwrap() {
            let shrunk = [o[0] + 0.99 * p.xy[0], o[1] + 0.99 * p.xy[1]];
            prop_assert!(scene.line_of_sight(shrunk));
        }
    }
}

#[test]
fn occluded_obstacle_gets_no_returns() {
    use fovlab::geometry::Pose;
    use fovlab::scene::ConvexPolygon;
    let front = ConvexPolygon::rectangle([10.0, 0.0], 1.0, 8.0, 0.0).unwrap();
    let back = ConvexPolygon::rectangle([20.0, 0.0], 1.0, 2.0, 0.0).unwrap();
    let scene = Scene::new(vec![front, back.clone()], Pose::identity(), 40.0, true).unwrap();
    let cloud = simulate_lidar(&scene, &LidarModel::new(720, 75.0).unwrap(), 0).unwrap();
    assert!(cloud.points.iter().all(|p| back.distance([p[0], p[1]]) > 1e-6));
}

#[test]
fn indoor_counts_stay_in_range() {
    let fam = SceneFamily::preset(FamilyName::Indoor);
    for seed in 0..100 {
        let n = generate_scene(&fam, seed).unwrap().obstacles.len();
        assert!((fam.obstacle_count[0]..=fam.obstacle_count[1]).contains(&n), "seed {seed}: {n}");
    }
}
