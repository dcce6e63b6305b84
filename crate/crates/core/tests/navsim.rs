use std::collections::{BTreeSet, VecDeque};

use patrol::navsim::{
    obstruction_variant, path_length_m, plan_path, replan_on_anomaly, simulate_run, CaptureSchedule, Cell, GridWorld,
    NavError, NavScenario, ReplanOutcome, Zone,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Independent breadth-first distance over cells not in `blocked`.
fn bfs_distance(w: usize, h: usize, blocked: &BTreeSet<Cell>, from: Cell, to: Cell) -> Option<usize> {
    let mut dist = vec![usize::MAX; w * h];
    dist[from.y * w + from.x] = 0;
    let mut queue = VecDeque::from([from]);
    while let Some(c) = queue.pop_front() {
        if c == to {
            return Some(dist[c.y * w + c.x]);
        }
        let d = dist[c.y * w + c.x];
        let mut next = Vec::new();
        if c.x > 0 {
            next.push(Cell::new(c.x - 1, c.y));
        }
        if c.y > 0 {
            next.push(Cell::new(c.x, c.y - 1));
        }
        if c.x + 1 < w {
            next.push(Cell::new(c.x + 1, c.y));
        }
        if c.y + 1 < h {
            next.push(Cell::new(c.x, c.y + 1));
        }
        for n in next {
            if !blocked.contains(&n) && dist[n.y * w + n.x] == usize::MAX {
                dist[n.y * w + n.x] = d + 1;
                queue.push_back(n);
            }
        }
    }
    None
}

fn assert_valid_path(path: &[Cell], from: Cell, to: Cell, blocked: &BTreeSet<Cell>) {
    assert_eq!(path.first(), Some(&from));
    assert_eq!(path.last(), Some(&to));
    for pair in path.windows(2) {
        assert_eq!(pair[0].x.abs_diff(pair[1].x) + pair[0].y.abs_diff(pair[1].y), 1);
    }
    assert!(path.iter().all(|c| !blocked.contains(c)));
}

fn hallway_walls(world: &GridWorld) -> BTreeSet<Cell> {
    world.cells().filter(|&c| world.is_occupied(c)).collect()
}

#[test]
fn random_worlds_match_bfs() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (mut reachable, mut unreachable) = (0, 0);
    for _ in 0..600 {
        let (w, h) = (rng.random_range(2..14), rng.random_range(2..14));
        let start = Cell::new(rng.random_range(0..w), rng.random_range(0..h));
        let goal = Cell::new(rng.random_range(0..w), rng.random_range(0..h));
        let mut world = GridWorld::empty(w, h, 0.25, start, goal).unwrap();
        let mut walls = BTreeSet::new();
        for c in world.cells().collect::<Vec<_>>() {
            if c != start && c != goal && rng.random_bool(0.3) {
                world.set_occupied(c, true).unwrap();
                walls.insert(c);
            }
        }
        match (plan_path(&world, start, goal), bfs_distance(w, h, &walls, start, goal)) {
            (Ok(path), Some(d)) => {
                assert_eq!(path.len() - 1, d);
                assert_valid_path(&path, start, goal, &walls);
                reachable += 1;
            }
            (Err(NavError::NoPath { .. }), None) => unreachable += 1,
            (got, want) => panic!("planner {got:?} vs oracle {want:?}"),
        }
    }
    assert!(reachable > 100 && unreachable > 20, "{reachable} / {unreachable}");
}

#[test]
fn wall_with_gap_routes_through_gap() {
    let mut world = GridWorld::empty(7, 7, 0.25, Cell::new(0, 0), Cell::new(0, 6)).unwrap();
    for x in 0..6 {
        world.set_occupied(Cell::new(x, 3), true).unwrap();
    }
    let path = plan_path(&world, world.start(), world.goal()).unwrap();
    assert!(path.contains(&Cell::new(6, 3)));
    assert_eq!(path.len() - 1, 6 + 6 + 6);
}

#[test]
fn sealed_goal_is_no_path() {
    let mut world = GridWorld::empty(6, 6, 0.25, Cell::new(0, 0), Cell::new(5, 5)).unwrap();
    world.set_occupied(Cell::new(4, 5), true).unwrap();
    world.set_occupied(Cell::new(5, 4), true).unwrap();
    assert!(matches!(
        plan_path(&world, world.start(), world.goal()),
        Err(NavError::NoPath { .. })
    ));
}

#[test]
fn off_path_zone_is_a_no_op() {
    let world = GridWorld::hallway();
    let path = plan_path(&world, world.start(), world.goal()).unwrap();
    let off: Vec<Cell> = (0..world.height())
        .map(|y| Cell::new(if path.iter().any(|c| c.x == 0) { 9 } else { 0 }, y))
        .filter(|c| !path.contains(c))
        .take(4)
        .collect();
    let zone = Zone {
        hazard: "spill".into(),
        cells: off,
        blocks_motion: true,
    };
    assert_eq!(replan_on_anomaly(&world, &path, &zone), ReplanOutcome::Path(path));
}

#[test]
fn only_passage_zone_blocks() {
    let mut world = GridWorld::empty(5, 9, 0.25, Cell::new(2, 0), Cell::new(2, 8)).unwrap();
    for x in [0, 1, 3, 4] {
        world.set_occupied(Cell::new(x, 4), true).unwrap();
    }
    let path = plan_path(&world, world.start(), world.goal()).unwrap();
    let zone = Zone {
        hazard: "obstruction".into(),
        cells: vec![Cell::new(2, 4)],
        blocks_motion: true,
    };
    assert_eq!(replan_on_anomaly(&world, &path, &zone), ReplanOutcome::Blocked);
}

#[test]
fn random_hallway_zones_are_avoided() {
    let world = GridWorld::hallway();
    let walls = hallway_walls(&world);
    let path = plan_path(&world, world.start(), world.goal()).unwrap();
    let shortest = path.len() - 1;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..300 {
        let y = rng.random_range(1..world.height() - 1);
        let x0 = rng.random_range(0..world.width());
        let x1 = (x0 + rng.random_range(1..world.width() + 1)).min(world.width());
        let cells: Vec<Cell> = (x0..x1).flat_map(|x| [Cell::new(x, y), Cell::new(x, y + 1)]).collect();
        let zone = Zone {
            hazard: "obstruction".into(),
            cells: cells.clone(),
            blocks_motion: true,
        };
        let mut blocked = walls.clone();
        blocked.extend(cells.iter().copied());
        let oracle = bfs_distance(world.width(), world.height(), &blocked, world.start(), world.goal());
        match replan_on_anomaly(&world, &path, &zone) {
            ReplanOutcome::Path(p) => {
                assert_valid_path(&p, world.start(), world.goal(), &blocked);
                assert!(p.len() > shortest);
                assert_eq!(Some(p.len() - 1), oracle);
            }
            ReplanOutcome::Blocked => assert_eq!(oracle, None, "{zone:?}"),
        }
    }
}

#[test]
fn empty_hallway_run() {
    let world = GridWorld::hallway();
    let scenario = NavScenario::new(Vec::new(), CaptureSchedule::Periodic { interval_s: 5.0 });
    let m = simulate_run(&world, &scenario, true).unwrap();
    let cells = (world.height() - 1) as f64;
    assert_eq!(m.trajectory_m, cells * world.cell_size_m());
    assert!((m.trajectory_m - 14.0).abs() <= world.cell_size_m());
    assert!((m.time_s - m.trajectory_m / scenario.speed_mps).abs() < 1e-9);
    assert_eq!(m.sudden_stops, 0);
    assert!(m.reached_goal);
    let p = plan_path(&world, world.start(), world.goal()).unwrap();
    assert_eq!(path_length_m(&world, &p), m.trajectory_m);
}

#[test]
fn runs_are_deterministic() {
    for seed in 0..5 {
        let (world, scenario) = obstruction_variant(seed);
        for ad in [false, true] {
            assert_eq!(simulate_run(&world, &scenario, ad), simulate_run(&world, &scenario, ad));
        }
        assert_eq!(obstruction_variant(seed), obstruction_variant(seed));
    }
}

#[test]
fn detection_avoids_contact_stops() {
    let mut fewer_or_equal = 0;
    for seed in 0..20 {
        let (world, scenario) = obstruction_variant(seed);
        let off = simulate_run(&world, &scenario, false).unwrap();
        let on = simulate_run(&world, &scenario, true).unwrap();
        assert!(off.reached_goal && on.reached_goal);
        assert!(off.sudden_stops >= 1);
        assert_eq!(off.anomalies_detected, 0);
        if on.sudden_stops <= off.sudden_stops {
            fewer_or_equal += 1;
        }
    }
    assert_eq!(fewer_or_equal, 20);
}

#[test]
fn world_json_round_trip() {
    let (world, _) = obstruction_variant(9);
    let text = serde_json::to_string(&world).unwrap();
    let back: GridWorld = serde_json::from_str(&text).unwrap();
    assert_eq!(back, world);
    assert!(serde_json::from_str::<GridWorld>(
        r#"{"width": 0, "height": 3, "start": {"x":0,"y":0}, "goal": {"x":0,"y":1}}"#
    )
    .is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn planned_paths_are_shortest(
        w in 2..10usize,
        h in 2..10usize,
        walls in prop::collection::vec((0..10usize, 0..10usize), 0..30),
    ) {
        let (start, goal) = (Cell::new(0, 0), Cell::new(w - 1, h - 1));
        let mut world = GridWorld::empty(w, h, 0.5, start, goal).unwrap();
        let mut blocked = BTreeSet::new();
        for (x, y) in walls {
            let c = Cell::new(x % w, y % h);
            if c != start && c != goal {
                world.set_occupied(c, true).unwrap();
                blocked.insert(c);
            }
        }
        let oracle = bfs_distance(w, h, &blocked, start, goal);
        match plan_path(&world, start, goal) {
            Ok(p) => {
                prop_assert_eq!(Some(p.len() - 1), oracle);
                prop_assert_eq!(path_length_m(&world, &p), (p.len() - 1) as f64 * 0.5);
            }
            Err(_) => prop_assert_eq!(oracle, None),
        }
    }
}
