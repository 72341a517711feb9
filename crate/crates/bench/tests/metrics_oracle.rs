use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use resalign::Grid;
use resalign_bench::metrics::{psnr, ssim};

/// Naive SSIM: explicit 11x11 Gaussian loops at every valid position.
fn naive_ssim(a: &Grid<f64>, b: &Grid<f64>, peak: f64) -> f64 {
    let (c1, c2) = ((0.01 * peak).powi(2), (0.03 * peak).powi(2));
    let mut g = [[0.0; 11]; 11];
    let mut total = 0.0;
    for (i, row) in g.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
            total += *v;
        }
    }
    let mut per_channel = 0.0;
    for c in 0..a.channels() {
        let mut acc = 0.0;
        let mut count = 0.0;
        for y0 in 0..=a.height() - 11 {
            for x0 in 0..=a.width() - 11 {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for (i, grow) in g.iter().enumerate() {
                    for (j, gv) in grow.iter().enumerate() {
                        let w = gv / total;
                        let (p, q) = (a.get(y0 + i, x0 + j, c), b.get(y0 + i, x0 + j, c));
                        ma += w * p;
                        mb += w * q;
                        saa += w * p * p;
                        sbb += w * q * q;
                        sab += w * p * q;
                    }
                }
                let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
                acc += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1.0;
            }
        }
        per_channel += acc / count;
    }
    per_channel / a.channels() as f64
}

#[test]
fn psnr_and_ssim_match_naive_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for pair in 0..5 {
        let (h, w, c) = (rng.gen_range(11..20), rng.gen_range(11..20), rng.gen_range(1..4));
        let a = Grid::from_fn(h, w, c, |_, _, _| rng.gen::<f64>()).unwrap();
        let b = Grid::from_fn(h, w, c, |y, x, ch| {
            (a.get(y, x, ch) + rng.gen_range(-0.2..0.2)).clamp(0.0, 1.0)
        })
        .unwrap();
        let mse: f64 = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(p, q)| (p - q) * (p - q))
            .sum::<f64>()
            / a.data().len() as f64;
        let expect_psnr = 10.0 * (1.0 / mse).log10();
        assert!((psnr(&a, &b, 1.0).unwrap() - expect_psnr).abs() < 1e-6, "pair {pair}");
        let got = ssim(&a, &b, 1.0).unwrap();
        let expect = naive_ssim(&a, &b, 1.0);
        assert!((got - expect).abs() < 1e-6, "pair {pair}: {got} vs {expect}");
    }
}
