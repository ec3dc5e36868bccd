use crate::{Error, Result};

fn same_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Dimension { expected: a, got: b });
    }
    Ok(())
}

/// Percentage of predictions that match the labels.
pub fn accuracy(predictions: &[bool], labels: &[bool]) -> Result<f64> {
    same_len(predictions.len(), labels.len())?;
    if labels.is_empty() {
        return Err(Error::invalid("accuracy of an empty set"));
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(100.0 * hits as f64 / labels.len() as f64)
}

/// Pearson correlation.
pub fn ncc(x: &[f64], y: &[f64]) -> Result<f64> {
    same_len(x.len(), y.len())?;
    if x.len() < 2 {
        return Err(Error::InsufficientData("correlation needs two points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::invalid("correlation with zero variance"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

pub fn rmse(x: &[f64], y: &[f64]) -> Result<f64> {
    same_len(x.len(), y.len())?;
    if x.is_empty() {
        return Err(Error::invalid("RMSE of an empty set"));
    }
    Ok((x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / x.len() as f64).sqrt())
}

/// Kendall's τ-b.
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<f64> {
    same_len(x.len(), y.len())?;
    if x.len() < 2 {
        return Err(Error::InsufficientData("rank correlation needs two points".into()));
    }
    let (mut conc, mut disc, mut tx, mut ty) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            let a = (x[i] - x[j]).partial_cmp(&0.0);
            let b = (y[i] - y[j]).partial_cmp(&0.0);
            match (a, b) {
                (Some(std::cmp::Ordering::Equal), Some(std::cmp::Ordering::Equal)) => {}
                (Some(std::cmp::Ordering::Equal), _) => tx += 1,
                (_, Some(std::cmp::Ordering::Equal)) => ty += 1,
                (a, b) if a == b => conc += 1,
                _ => disc += 1,
            }
        }
    }
    let nx = (conc + disc + tx) as f64;
    let ny = (conc + disc + ty) as f64;
    if nx == 0.0 || ny == 0.0 {
        return Err(Error::invalid("rank correlation of tied data"));
    }
    Ok((conc - disc) as f64 / (nx * ny).sqrt())
}

fn ln_factorials(n: usize) -> Vec<f64> {
    let mut f = vec![0.0; n + 1];
    for i in 1..=n {
        f[i] = f[i - 1] + (i as f64).ln();
    }
    f
}

/// Two-sided Fisher exact test on `[[a, b], [c, d]]`: total probability of
/// all tables with the same margins that are no more likely than the observed one.
pub fn fishers_exact(a: u64, b: u64, c: u64, d: u64) -> Result<f64> {
    let (r1, r2, c1, c2) = (a + b, c + d, a + c, b + d);
    if r1 == 0 || r2 == 0 || c1 == 0 || c2 == 0 {
        return Err(Error::invalid("contingency table has a zero margin"));
    }
    let n = (r1 + r2) as usize;
    let lf = ln_factorials(n);
    let f = |k: u64| lf[k as usize];
    let fixed = f(r1) + f(r2) + f(c1) + f(c2) - f(r1 + r2);
    let ln_p = |x: u64| fixed - f(x) - f(r1 - x) - f(c1 - x) - f(r2 + x - c1);
    let observed = ln_p(a);
    let lo = c1.saturating_sub(r2);
    let hi = r1.min(c1);
    let p: f64 = (lo..=hi)
        .map(ln_p)
        .filter(|&l| l <= observed + 1e-7 * observed.abs().max(1.0))
        .map(f64::exp)
        .sum();
    Ok(p.min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_values() {
        let labels: Vec<bool> = (0..100).map(|i| i % 2 == 0).collect();
        let preds: Vec<bool> = labels.iter().enumerate().map(|(i, &l)| if i < 17 { !l } else { l }).collect();
        assert_eq!(accuracy(&preds, &labels).unwrap(), 83.0);
        assert_eq!(accuracy(&labels, &labels).unwrap(), 100.0);
        assert!(accuracy(&[], &[]).is_err());

        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [1.0, 3.0, 2.0, 4.0];
        assert!((ncc(&x, &y).unwrap() - 0.8).abs() < 1e-12);
        let neg: Vec<f64> = x.iter().map(|v| -2.0 * v + 3.0).collect();
        assert!((ncc(&x, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert!(ncc(&x, &[1.0; 4]).is_err());

        assert!((rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-12);
        assert!((rmse(&x, &x.map(|v| v + 0.1)).unwrap() - 0.1).abs() < 1e-12);

        assert!((kendall_tau(&x, &y).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(kendall_tau(&x, &[4.0, 3.0, 2.0, 1.0]).unwrap(), -1.0);
        assert!(kendall_tau(&[1.0; 3], &[1.0, 2.0, 3.0]).is_err());

        assert!((fishers_exact(1, 1, 1, 1).unwrap() - 1.0).abs() < 1e-12);
        assert!((fishers_exact(5, 0, 0, 5).unwrap() - 2.0 / 252.0).abs() < 1e-12);
        assert!(fishers_exact(0, 0, 3, 4).is_err());
    }

    proptest! {
        #[test]
        fn tau_invariant_under_monotone_maps(v in prop::collection::vec((-50i32..50, -50i32..50), 3..25)) {
            let x: Vec<f64> = v.iter().map(|p| p.0 as f64).collect();
            let y: Vec<f64> = v.iter().map(|p| p.1 as f64).collect();
            if let Ok(t) = kendall_tau(&x, &y) {
                let ex: Vec<f64> = x.iter().map(|a| (a / 10.0).exp()).collect();
                let cy: Vec<f64> = y.iter().map(|b| b * b * b - 7.0).collect();
                prop_assert!((kendall_tau(&ex, &cy).unwrap() - t).abs() < 1e-12);
            }
        }

        #[test]
        fn ncc_affine(v in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 3..25), s in 0.1f64..10.0, o in -5.0f64..5.0) {
            let x: Vec<f64> = v.iter().map(|p| p.0).collect();
            let y: Vec<f64> = v.iter().map(|p| p.1).collect();
            if let Ok(r) = ncc(&x, &y) {
                let ax: Vec<f64> = x.iter().map(|a| s * a + o).collect();
                let nx: Vec<f64> = x.iter().map(|a| -s * a + o).collect();
                prop_assert!((ncc(&ax, &y).unwrap() - r).abs() < 1e-9);
                prop_assert!((ncc(&nx, &y).unwrap() + r).abs() < 1e-9);
            }
        }

        #[test]
        fn fisher_symmetry(a in 0u64..15, b in 0u64..15, c in 0u64..15, d in 0u64..15) {
            if let Ok(p) = fishers_exact(a, b, c, d) {
                prop_assert!(p > 0.0 && p <= 1.0);
                prop_assert!((fishers_exact(c, d, a, b).unwrap() - p).abs() < 1e-12);
                prop_assert!((fishers_exact(b, a, d, c).unwrap() - p).abs() < 1e-12);
                prop_assert!((fishers_exact(a, c, b, d).unwrap() - p).abs() < 1e-12);
            }
        }
    }
}
