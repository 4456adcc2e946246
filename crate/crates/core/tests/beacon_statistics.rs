//! Monte-Carlo checks of beacon frame construction under bounded noise.

use beaconlabel_core::geom::{average_beacon_readings, frame_from_beacons, BeaconPair, FrameId};
use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const NOISE: f64 = 0.02;

fn jitter(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    Vector3::new(
        rng.random_range(-NOISE..=NOISE),
        rng.random_range(-NOISE..=NOISE),
        rng.random_range(-NOISE..=NOISE),
    )
}

fn pair_error(a: &BeaconPair, b: &BeaconPair) -> f64 {
    (a.front - b.front).norm() + (a.rear - b.rear).norm()
}

#[test]
fn averaging_sixteen_readings_beats_a_single_reading() {
    let truth = BeaconPair::new(Point3::new(1.0, 2.0, 0.3), Point3::new(0.5, 2.0, 0.3));
    let mut wins = 0;
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let readings: Vec<BeaconPair> = (0..16)
            .map(|_| BeaconPair::new(truth.front + jitter(&mut rng), truth.rear + jitter(&mut rng)))
            .collect();
        let avg = average_beacon_readings(&readings, 16).unwrap();
        if pair_error(&avg, &truth) < pair_error(&readings[0], &truth) {
            wins += 1;
        }
    }
    assert!(wins >= 90, "averaging won {wins}/100");
}

/// Angle between estimated and true x̂ for a pair with the given separation.
fn heading_error(separation: f64, noise: (Vector3<f64>, Vector3<f64>)) -> f64 {
    let truth = BeaconPair::new(Point3::new(separation, 0.0, 0.5), Point3::new(0.0, 0.0, 0.5));
    let noisy = BeaconPair::new(truth.front + noise.0, truth.rear + noise.1);
    let x = frame_from_beacons(&noisy, FrameId::Robot).unwrap().rotation().column(0).into_owned();
    x.dot(&Vector3::x()).clamp(-1.0, 1.0).acos()
}

#[test]
fn heading_error_shrinks_with_separation() {
    let separations = [0.1, 0.5, 1.0, 2.0];
    let mut means = [0.0; 4];
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let noise = (jitter(&mut rng), jitter(&mut rng));
        for (m, d) in means.iter_mut().zip(separations) {
            *m += heading_error(d, noise) / 100.0;
        }
    }
    assert!(means.windows(2).all(|w| w[1] <= w[0]), "{means:?}");
    // Small-angle regime: error ∝ 1/d once noise is small against d.
    assert!((means[2] / means[3] - 2.0).abs() < 0.1, "{means:?}");
}
