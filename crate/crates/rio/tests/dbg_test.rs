#[test]
fn dbg_loop() {
    use rio::mapping::*;
    use rio::lie::{Pose, Rotation};
    use nalgebra::Vector3;
    fn vec3(x: f64, y: f64, z: f64) -> Vector3<f64> { Vector3::new(x, y, z) }
    let mut world = Vec::new();
    let mut x = -5.0f64;
    while x < 25.0 {
        for z in [0.2, 0.8, 1.4, 2.0, 2.6] {
            let j = 0.03 * ((x * 7.3 + z * 11.1).sin());
            world.push(vec3(x, -3.0 + j, z));
            world.push(vec3(x, 3.0 - j, z));
        }
        x += 0.25;
    }
    let pose0 = Pose::identity();
    let pose23 = Pose::new(Rotation::identity(), vec3(0.0, 2.0, 0.0));
    let scan = |pose: &Pose| -> Vec<Vector3<f64>> {
        let inv = pose.inverse();
        world.iter().map(|p| inv.act(p)).filter(|p| p.norm() < 20.0 && p.norm() > 0.5).collect()
    };
    let kf0 = Keyframe { index: 0, t: 0.0, anchor: pose0, cloud: PointCloud::new(scan(&pose0), CloudFrame::Anchor), scan_ids: vec![0] };
    let kf23 = Keyframe { index: 23, t: 23.0, anchor: pose23, cloud: PointCloud::new(scan(&pose23), CloudFrame::Anchor), scan_ids: vec![23] };
    println!("cloud sizes: {} {}", kf0.cloud.points.len(), kf23.cloud.points.len());
    let init = pose0.inverse().compose(&pose23);
    let res = register_keyframe(&kf23, &[(&kf0, pose0)], &pose0, &init, &GicpConfig::default());
    match res {
        Ok(r) => println!("OK inliers={} fitness={} corr={:?}", r.inliers, r.fitness, r.correction.norm()),
        Err(e) => println!("ERR {e:?}"),
    }
}
