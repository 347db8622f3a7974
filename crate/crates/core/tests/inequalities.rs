use aggdiff_core::barenblatt::BarenblattProfile;
use aggdiff_core::entropy::{ck_check, dilated_ground_state, lsi_check};
use aggdiff_core::perturb::perturbations;
use aggdiff_core::{ProblemParams, RadialGrid};

fn grid_for(b: &BarenblattProfile, d: usize, n: usize) -> RadialGrid {
    let r = b.support_radius();
    let radius = if r.is_finite() { 3.0 * r } else { 8.0 };
    RadialGrid::new(d, radius, n).unwrap()
}

#[test]
fn log_sobolev_over_perturbations() {
    for (d, m) in [(2, 1.0), (3, 1.0), (3, 4.0 / 3.0)] {
        let p = ProblemParams::new(d, m, 1.0).unwrap();
        let b = BarenblattProfile::new(&p).unwrap();
        let grid = grid_for(&b, d, 400);
        let mut worst: f64 = 0.0;
        for q in perturbations(&b, &grid, 20240601, 50).unwrap() {
            let c = lsi_check(&p, &q.theta).unwrap();
            let r = c.ratio.expect("resolved perturbation");
            assert!(c.lhs >= -1e-12, "{:?}", c);
            worst = worst.max(r);
            assert!(r <= 0.55, "d={d} m={m} #{} {:?}: {r}", q.index, q.kind);
        }
        println!("d={d} m={m} worst LSI ratio {worst}");
    }
}

#[test]
fn csiszar_kullback_over_perturbations() {
    for d in [2, 3] {
        let p = ProblemParams::new(d, 1.0, 1.0).unwrap();
        let b = BarenblattProfile::new(&p).unwrap();
        let grid = grid_for(&b, d, 400);
        let mut worst: f64 = 0.0;
        for q in perturbations(&b, &grid, 20240601, 50).unwrap() {
            let c = ck_check(&p, &q.theta).unwrap();
            assert!(c.holds(0.05), "{c:?}");
            worst = worst.max(c.ratio.unwrap() / c.bound.unwrap());
        }
        println!("d={d} worst CK ratio / sqrt(2M) {worst}");
    }
}

#[test]
fn csiszar_kullback_dilation_family_porous_medium() {
    let p = ProblemParams::new(3, 4.0 / 3.0, 1.0).unwrap();
    let b = BarenblattProfile::new(&p).unwrap();
    let grid = grid_for(&b, 3, 800);
    let ratios: Vec<f64> = (0..=49)
        .map(|j| 1.01 + 0.49 * j as f64 / 49.0)
        .map(|l| ck_check(&p, &dilated_ground_state(&b, &grid, l).unwrap()).unwrap().ratio.unwrap())
        .collect();
    let (lo, hi) = ratios.iter().fold((f64::MAX, 0.0f64), |(a, b), &r| (a.min(r), b.max(r)));
    println!("CK dilation ratios in [{lo}, {hi}]");
    assert!(hi / lo <= 3.0);
}
