use mfbm_core::grid::{GridPath, TimeGrid};
use mfbm_core::noise::{apply_kh, apply_kh_inverse, volterra_kernel, volterra_kernel_series, HurstParam};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn h(v: f64) -> HurstParam {
    HurstParam::new(v).unwrap()
}

#[test]
fn integral_and_series_forms_agree() {
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    for _ in 0..100 {
        let t: f64 = rng.random_range(0.05..3.0);
        let s = t * rng.random_range(0.01..0.99);
        let a = volterra_kernel(h(0.7), t, s).unwrap();
        let b = volterra_kernel_series(h(0.7), t, s).unwrap();
        assert!((a - b).abs() < 1e-8, "t={t} s={s}: {a} vs {b}");
    }
}

#[test]
fn kernel_degenerates_near_half() {
    let hh = h(0.5 + 1e-9);
    for i in 0..=8 {
        let s = 0.1 + 0.1 * i as f64;
        let k = volterra_kernel(hh, 1.0, s).unwrap();
        assert!((k - 1.0).abs() < 1e-6, "{s}: {k}");
    }
}

#[test]
fn inverse_round_trip() {
    let g = TimeGrid::uniform(1.0, 512).unwrap();
    let v = GridPath::from_fn(g, 1, |t| vec![(2.0 * std::f64::consts::PI * t).cos()]).unwrap();
    for hv in [0.6, 0.7, 0.8] {
        let u = apply_kh(h(hv), &v).unwrap();
        let back = apply_kh_inverse(h(hv), &u).unwrap();
        let rel_v = back.udot.sub(&v).unwrap().l2_time_norm() / v.l2_time_norm();
        let uu = apply_kh(h(hv), &back.udot).unwrap();
        let rel_u = uu.sub(&u).unwrap().l2_time_norm() / u.l2_time_norm();
        eprintln!("H={hv}: udot rel {rel_v:.3e}, u rel {rel_u:.3e}");
        assert!(rel_u < 2e-2);
    }
}
