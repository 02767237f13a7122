use mnar_gauss::gaussian::GaussianParams;
use mnar_gauss::missingness::IntervalUnion;
use mnar_gauss::rng::stream_rng;
use mnar_gauss::truncated_mle::*;
use nalgebra::DVector;

fn main() {
    let p = GaussianParams::standard(1);
    let set = TruncationSet::dim1(IntervalUnion::single(0.0, f64::INFINITY).unwrap());
    
    for base in [0u64, 1000, 2000, 3000, 4000] {
        let mut errs_small = Vec::new();
        let mut errs_big = Vec::new();
        for trial in 0..20u64 {
            let mut rng = stream_rng(base + 100 + trial, 0);
            let samples: Vec<DVector<f64>> = (0..50_000)
                .map(|_| sample_truncated(&p, &set, &mut rng).unwrap())
                .collect();
            let cfg_small = TruncatedFitConfig { steps: Some(100_000), lambda_sc: Some(0.012), ..Default::default() };
            let cfg_big = TruncatedFitConfig { steps: Some(200_000), lambda_sc: Some(0.012), ..Default::default() };
            let small = truncated_fit(&samples[..25_000], &set, &cfg_small, &mut stream_rng(base + 200 + trial, 1)).unwrap();
            let big = truncated_fit(&samples, &set, &cfg_big, &mut stream_rng(base + 300 + trial, 1)).unwrap();
            let err = |e: &TruncatedEstimate| (e.mean[0].powi(2) + (e.cov[(0,0)] - 1.0).powi(2)).sqrt();
            errs_small.push(err(&small));
            errs_big.push(err(&big));
        }
        errs_small.sort_by(|a, b| a.partial_cmp(b).unwrap());
        errs_big.sort_by(|a, b| a.partial_cmp(b).unwrap());
        println!("base={base}: ratio={:.3} (small {:.4} big {:.4})", errs_small[10] / errs_big[10], errs_small[10], errs_big[10]);
    }
}
