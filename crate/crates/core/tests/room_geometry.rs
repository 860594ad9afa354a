use nalgebra::Point3;
use pointlift_core::projection::{project_points, rasterize, warp_depth, SplatOptions, NO_WINNER};
use pointlift_core::scene::{assemble_point_cloud, unproject, unproject_all, Camera};
use pointlift_core::synth::{generate, layout_boxes, ray_hit, render_view, ring_pose, SynthConfig};

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

#[test]
fn unproject_project_round_trip() {
    let scene = generate(&SynthConfig::default());
    let mut checked = 0;
    for frame in &scene.bundle.frames {
        let cam = frame.camera();
        let pm = unproject(frame);
        for (u, v, &ok) in pm.valid.indexed() {
            if !ok {
                continue;
            }
            let (pu, pv, z) = cam.project(pm.points.get(u, v)).unwrap();
            assert!((pu - u as f64).abs() < 1e-4 && (pv - v as f64).abs() < 1e-4, "{u},{v} -> {pu},{pv}");
            let d = *frame.depth.get(u, v) as f64;
            assert!(rel(z, d) < 1e-6, "depth {z} vs {d}");
            checked += 1;
        }
    }
    assert_eq!(checked, 8 * 192 * 144);
}

#[test]
fn identity_warp_reproduces_depth() {
    let scene = generate(&SynthConfig::default());
    let pms = unproject_all(&scene.bundle.frames);
    for (frame, pm) in scene.bundle.frames.iter().zip(&pms) {
        let warped = warp_depth(pm, &frame.intrinsics, &frame.pose);
        for (u, v, &ok) in pm.valid.indexed() {
            if ok {
                let got = warped.get(u, v).expect("own pixel must be covered");
                assert!(rel(got, *frame.depth.get(u, v) as f64) < 1e-5);
            }
        }
    }
}

#[test]
fn cloud_projected_into_source_view() {
    let scene = generate(&SynthConfig::default());
    let frames = &scene.bundle.frames;
    let pms = unproject_all(frames);
    let cloud = assemble_point_cloud(&pms, frames).unwrap();
    let boxes = &scene.gt.objects;
    for (slot, frame) in frames.iter().enumerate() {
        let cam = frame.camera();
        let proj = project_points(&cloud, &frame.intrinsics, &frame.pose, &SplatOptions::default(), true);
        let valid = pms[slot].valid.count_true();
        let covered = pms[slot].valid.indexed().filter(|&(u, v, &ok)| ok && *proj.coverage.get(u, v)).count();
        assert!(covered as f64 >= 0.99 * valid as f64, "view {}: {covered}/{valid}", frame.view_id);

        // the z-buffer winner sits on the surface the camera sees at its landing position
        let zb = rasterize(&cam, &cloud.positions, |_| true, &SplatOptions::default());
        let view = cloud.view_index(&frame.view_id).unwrap();
        let (mut good, mut total) = (0usize, 0usize);
        for (u, v, &idx) in zb.winner.indexed() {
            if idx == NO_WINNER {
                continue;
            }
            let i = idx as usize;
            let (su, sv, z) = cam.project(&cloud.positions[i]).unwrap();
            let analytic = ray_hit(&cam, boxes, su, sv).1;
            total += 1;
            good += (rel(z, analytic) < 1e-4) as usize;
            let src = cloud.source[i];
            if src.view == view {
                assert_eq!((src.u as usize, src.v as usize), (u, v));
                assert!(rel(*proj.depth.get(u, v) as f64, *frame.depth.get(u, v) as f64) < 1e-4);
            }
        }
        assert!(good as f64 >= 0.99 * total as f64, "view {}: {good}/{total}", frame.view_id);
    }
}

#[test]
fn warp_across_thirty_degrees_matches_analytic_depth() {
    let cfg = SynthConfig::default();
    let boxes = layout_boxes(cfg.objects);
    let intr = pointlift_core::scene::CameraIntrinsics {
        fx: cfg.focal,
        fy: cfg.focal,
        cx: (cfg.width as f64 - 1.0) / 2.0,
        cy: (cfg.height as f64 - 1.0) / 2.0,
        width: cfg.width as u32,
        height: cfg.height as u32,
    };
    // the source is sampled at twice the target's linear resolution so that
    // forward-warp rounding does not leave holes in stretched regions
    let src_intr = pointlift_core::scene::CameraIntrinsics {
        fx: 2.0 * intr.fx,
        fy: 2.0 * intr.fy,
        cx: 2.0 * intr.cx + 0.5,
        cy: 2.0 * intr.cy + 0.5,
        width: 2 * intr.width,
        height: 2 * intr.height,
    };
    let src = Camera::new(src_intr, ring_pose(-90.0, 1.8, 1.6));
    let dst = Camera::new(intr, ring_pose(-60.0, 1.8, 1.6));
    let heading = |c: &Camera| {
        let f = c.pose.rotation.column(2);
        f.y.atan2(f.x).to_degrees()
    };
    let yaw = heading(&dst) - heading(&src);
    assert!((yaw - 30.0).abs() < 1e-9, "relative yaw {yaw}");

    let src_view = render_view(&src, &boxes);
    let frame = pointlift_core::scene::ViewFrame {
        view_id: "src".into(),
        rgb: src_view.rgb,
        depth: src_view.depth,
        intrinsics: src_intr,
        pose: src.pose,
        masks: None,
    };
    let pm = unproject(&frame);
    let warped = warp_depth(&pm, &dst.intrinsics, &dst.pose);
    let points = pm.points.as_slice();
    let zb = rasterize(&dst, points, |i| *pm.valid.as_slice().get(i).unwrap(), &SplatOptions::default());

    let (mut visible, mut good) = (0usize, 0usize);
    let (w, h) = intr.dims();
    for v in 0..h {
        for u in 0..w {
            // mutually visible: the surface seen at this target pixel is also what the source sees
            let (p, _, _) = ray_hit(&dst, &boxes, u as f64, v as f64);
            let Some((su, sv, _)) = src.project(&p) else { continue };
            let (sw, sh) = src_intr.dims();
            if su < -0.5 || sv < -0.5 || su > sw as f64 - 0.5 || sv > sh as f64 - 0.5 {
                continue;
            }
            let (q, _, _) = ray_hit(&src, &boxes, su, sv);
            if (q - p).norm() > 1e-6 * (1.0 + p.coords.norm()) {
                continue;
            }
            visible += 1;
            let (Some(z), idx) = (warped.get(u, v), *zb.winner.get(u, v)) else { continue };
            let (lu, lv, _) = dst.project(&points[idx as usize]).unwrap();
            if rel(z, ray_hit(&dst, &boxes, lu, lv).1) < 1e-3 {
                good += 1;
            }
        }
    }
    assert!(visible > w * h / 3, "only {visible} mutually visible pixels");
    let frac = good as f64 / visible as f64;
    assert!(frac >= 0.95, "{good}/{visible} = {frac}");
}

#[test]
fn analytic_hit_is_on_a_room_surface() {
    let cam = Camera::new(
        pointlift_core::scene::CameraIntrinsics {
            fx: 50.0,
            fy: 50.0,
            cx: 15.5,
            cy: 11.5,
            width: 32,
            height: 24,
        },
        ring_pose(-90.0, 1.8, 1.6),
    );
    let (p, t, obj) = ray_hit(&cam, &[], 15.5, 11.5);
    assert!(obj.is_none() && t > 0.0);
    let on_surface = |p: Point3<f64>| p.z.abs() < 1e-9 || p.x.abs() < 1e-9 || (p.x - 6.0).abs() < 1e-9 || p.y.abs() < 1e-9 || (p.y - 5.0).abs() < 1e-9;
    assert!(on_surface(p), "{p:?}");
}
