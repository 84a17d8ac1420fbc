use cutmpc::plant::{make_material, Plant, PlantConfig};
use cutmpc::Vec2;
use proptest::prelude::*;

const PRESETS: [&str; 8] = ["cake", "cucumber", "zucchini", "cheese", "bell-pepper", "lemon", "potato", "carrot"];

fn commands() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-0.05f64..0.05, -0.08f64..0.03), 1..400)
}

fn start_for(p: &Plant, dy: f64, dz: f64) -> Vec2 {
    Vec2::new(p.material.center_y() + dy, p.object_top() + dz)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn state_invariants_hold(idx in 0usize..8, seed in any::<u64>(), dy in -0.02f64..0.02, dz in -0.002f64..0.01, cmds in commands()) {
        let mat = make_material(PRESETS[idx]).unwrap();
        let cfg = PlantConfig { rng_seed: seed, ..PlantConfig::default() };
        let probe = Plant::new(cfg.clone(), mat.clone(), Vec2::ZERO).unwrap();
        let mut plant = Plant::new(cfg.clone(), mat.clone(), start_for(&probe, dy, dz)).unwrap();
        let band = mat.uncuttable_band().map(|(lo, _)| plant.object_top() - lo * mat.height);
        let mut front = plant.state().cut_front;
        for (y, z) in cmds {
            let (s, f) = plant.step(Vec2::new(y, z)).unwrap();
            prop_assert!(s.cut_front <= front);
            prop_assert!(s.cut_front >= cfg.table_z);
            prop_assert!(s.p.z >= cfg.table_z - 1e-15);
            prop_assert!(s.p.z >= s.cut_front - cfg.penetration_max - 1e-12);
            prop_assert!(f.is_finite() && s.p.is_finite() && s.v.is_finite());
            let c = plant.contact_force();
            prop_assert!(c.z >= 0.0);
            prop_assert!(c.y * s.v.y <= 0.0, "lateral force must oppose sawing: {c:?} {:?}", s.v);
            if let Some(b) = band {
                prop_assert!(s.cut_front >= b - 1e-12, "cut front {} passed band {b}", s.cut_front);
            }
            front = s.cut_front;
        }
    }

    #[test]
    fn seeded_runs_are_identical(seed in any::<u64>(), cmds in commands()) {
        let mat = make_material("potato").unwrap();
        let cfg = PlantConfig { rng_seed: seed, ..PlantConfig::default() };
        let start = Vec2::new(mat.center_y(), mat.top(cfg.table_z) + 0.001);
        let mut a = Plant::new(cfg.clone(), mat.clone(), start).unwrap();
        let mut b = Plant::new(cfg, mat, start).unwrap();
        for (y, z) in cmds {
            prop_assert_eq!(a.step(Vec2::new(y, z)).unwrap(), b.step(Vec2::new(y, z)).unwrap());
        }
    }

    #[test]
    fn free_space_ignores_material(seed in any::<u64>(), cmds in prop::collection::vec((-0.05f64..0.05, 0.0f64..0.05), 1..200)) {
        // Above every object the contact force stays zero and motion is material independent.
        let cfg = PlantConfig { rng_seed: seed, ..PlantConfig::default() };
        let mut plants: Vec<Plant> = ["cake", "carrot"]
            .iter()
            .map(|m| Plant::new(cfg.clone(), make_material(m).unwrap(), Vec2::new(0.0, 0.2)).unwrap())
            .collect();
        for (y, z) in cmds {
            let u = Vec2::new(y, z);
            let s0 = plants[0].step(u).unwrap().0;
            let s1 = plants[1].step(u).unwrap().0;
            prop_assert_eq!(s0.p, s1.p);
            prop_assert_eq!(plants[0].contact_force(), Vec2::ZERO);
            prop_assert_eq!(plants[1].contact_force(), Vec2::ZERO);
        }
    }
}

#[test]
fn non_finite_command_is_a_simulation_fault() {
    let mat = make_material("cake").unwrap();
    let mut p = Plant::new(PlantConfig::default(), mat, Vec2::new(0.0, 0.1)).unwrap();
    assert!(matches!(p.step(Vec2::new(f64::INFINITY, 0.0)), Err(cutmpc::Error::Simulation(_))));
}
