use patrol::budget::StageProfile;
use patrol::bus::Stage;
use rand::Rng;

/// Four-stage profile with minimums on a 0.1 s grid, plus a feasible `t_max`
/// also on that grid. Returns the profiles and `t_max` in tenths.
pub fn random_profiles(rng: &mut impl Rng) -> (Vec<StageProfile>, u64) {
    let mut tenths = 0;
    let profiles = Stage::ALL
        .iter()
        .map(|&stage| {
            let min = rng.random_range(1..=10u64);
            tenths += min;
            let mean = min as f64 / 10.0 + rng.random_range(0.05..3.0);
            StageProfile::new(stage, min as f64 / 10.0, mean).unwrap()
        })
        .collect();
    (profiles, tenths + rng.random_range(0..=30))
}

/// Worst per-stage probability that an exponential excess exceeds its slack.
pub fn minimax_score(profiles: &[StageProfile], slack_s: &[f64]) -> f64 {
    profiles
        .iter()
        .zip(slack_s)
        .map(|(p, &s)| {
            let excess = p.mean_s - p.min_s;
            if excess <= 0.0 {
                0.0
            } else {
                (-s / excess).exp()
            }
        })
        .fold(0.0, f64::max)
}

/// Best score over every split of the slack into 0.1 s steps.
pub fn grid_best(profiles: &[StageProfile], t_max_tenths: u64) -> f64 {
    let min_tenths: u64 = profiles.iter().map(|p| (p.min_s * 10.0).round() as u64).sum();
    let slack = t_max_tenths - min_tenths;
    let mut best = f64::INFINITY;
    let mut split = vec![0u64; profiles.len()];
    fn walk(i: usize, left: u64, split: &mut Vec<u64>, profiles: &[StageProfile], best: &mut f64) {
        if i + 1 == split.len() {
            split[i] = left;
            let s: Vec<f64> = split.iter().map(|&t| t as f64 / 10.0).collect();
            *best = best.min(minimax_score(profiles, &s));
            return;
        }
        for take in 0..=left {
            split[i] = take;
            walk(i + 1, left - take, split, profiles, best);
        }
    }
    walk(0, slack, &mut split, profiles, &mut best);
    best
}
