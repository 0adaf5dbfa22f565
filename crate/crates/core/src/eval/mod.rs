//! Reference-anchored image metrics and the method-comparison report.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::numerics::RealArray2D;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Reported in place of an infinite PSNR.
pub const PSNR_CAP: f64 = 99.0;

fn check_shapes(reference: &RealArray2D, rec: &RealArray2D) -> Result<(), EvalError> {
    if reference.shape() != rec.shape() {
        return Err(EvalError::Shape(format!(
            "reference {:?} vs reconstruction {:?}",
            reference.shape(),
            rec.shape()
        )));
    }
    Ok(())
}

fn squared_error(reference: &RealArray2D, rec: &RealArray2D) -> f64 {
    reference
        .data()
        .iter()
        .zip(rec.data())
        .map(|(a, b)| (b - a).powi(2))
        .sum()
}

/// `|rec - ref|^2 / |ref|^2`.
pub fn nmse(reference: &RealArray2D, rec: &RealArray2D) -> Result<f64, EvalError> {
    check_shapes(reference, rec)?;
    let denom: f64 = reference.data().iter().map(|v| v * v).sum();
    if denom == 0.0 {
        return Err(EvalError::Invalid("reference image is zero".into()));
    }
    Ok(squared_error(reference, rec) / denom)
}

/// `10 log10(peak^2 / MSE)` with `peak = max(ref)`, capped at [`PSNR_CAP`].
pub fn psnr(reference: &RealArray2D, rec: &RealArray2D) -> Result<f64, EvalError> {
    check_shapes(reference, rec)?;
    let peak = reference.max();
    if !(peak > 0.0) {
        return Err(EvalError::Invalid(format!(
            "reference peak {peak} must be positive"
        )));
    }
    let mse = squared_error(reference, rec) / reference.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP))
}

/// Reconstructions of one method on one dataset, aligned with references.
#[derive(Debug, Clone)]
pub struct MethodRun {
    pub method: String,
    pub dataset: String,
    pub references: Vec<RealArray2D>,
    pub reconstructions: Vec<RealArray2D>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMetric {
    pub method: String,
    pub dataset: String,
    pub index: usize,
    pub nmse: f64,
    pub psnr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub method: String,
    pub dataset: String,
    pub n: usize,
    pub nmse_mean: f64,
    pub nmse_std: f64,
    pub psnr_mean: f64,
    pub psnr_std: f64,
    /// Lowest mean NMSE within the dataset.
    pub best_nmse: bool,
    /// Highest mean PSNR within the dataset.
    pub best_psnr: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<MetricRow>,
    pub images: Vec<ImageMetric>,
}

/// Mean and population standard deviation.
fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn assemble_report(runs: &[MethodRun]) -> Result<Report, EvalError> {
    if runs.is_empty() {
        return Err(EvalError::Invalid("no runs to report".into()));
    }
    let mut rows = Vec::with_capacity(runs.len());
    let mut images = Vec::new();
    for run in runs {
        if run.references.len() != run.reconstructions.len() || run.references.is_empty() {
            return Err(EvalError::Invalid(format!(
                "{}/{}: {} references vs {} reconstructions",
                run.method,
                run.dataset,
                run.references.len(),
                run.reconstructions.len()
            )));
        }
        let mut nm = Vec::with_capacity(run.references.len());
        let mut ps = Vec::with_capacity(run.references.len());
        for (index, (r, x)) in run.references.iter().zip(&run.reconstructions).enumerate() {
            let (a, b) = (nmse(r, x)?, psnr(r, x)?);
            nm.push(a);
            ps.push(b);
            images.push(ImageMetric {
                method: run.method.clone(),
                dataset: run.dataset.clone(),
                index,
                nmse: a,
                psnr: b,
            });
        }
        let (nmse_mean, nmse_std) = mean_std(&nm);
        let (psnr_mean, psnr_std) = mean_std(&ps);
        rows.push(MetricRow {
            method: run.method.clone(),
            dataset: run.dataset.clone(),
            n: nm.len(),
            nmse_mean,
            nmse_std,
            psnr_mean,
            psnr_std,
            best_nmse: false,
            best_psnr: false,
        });
    }
    let datasets: Vec<String> = rows.iter().map(|r| r.dataset.clone()).collect();
    for d in &datasets {
        let group = || rows.iter().filter(|r| &r.dataset == d);
        let best_n = group().map(|r| r.nmse_mean).fold(f64::INFINITY, f64::min);
        let best_p = group()
            .map(|r| r.psnr_mean)
            .fold(f64::NEG_INFINITY, f64::max);
        for r in rows.iter_mut().filter(|r| &r.dataset == d) {
            r.best_nmse = r.nmse_mean == best_n;
            r.best_psnr = r.psnr_mean == best_p;
        }
    }
    Ok(Report { rows, images })
}

impl Report {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("method,dataset,n,nmse_mean,nmse_std,psnr_mean,psnr_std\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{:.6e},{:.6e},{:.4},{:.4}\n",
                r.method, r.dataset, r.n, r.nmse_mean, r.nmse_std, r.psnr_mean, r.psnr_std
            ));
        }
        s
    }

    pub fn row(&self, method: &str, dataset: &str) -> Option<&MetricRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.dataset == dataset)
    }

    /// Writes `report.csv` and `report.json` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), EvalError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        for (name, body) in [
            ("report.csv", self.to_csv()),
            ("report.json", serde_json::to_string_pretty(self)?),
        ] {
            let tmp = dir.join(format!("{name}.partial"));
            fs::write(&tmp, body)?;
            fs::rename(tmp, dir.join(name))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SeededRng;
    use proptest::prelude::*;

    fn img(v: Vec<f64>) -> RealArray2D {
        RealArray2D::from_vec(1, v.len(), v).unwrap()
    }

    #[test]
    fn nmse_trivial_cases() {
        let r = img(vec![1.0, -2.0, 0.5]);
        assert_eq!(nmse(&r, &r).unwrap(), 0.0);
        assert_eq!(nmse(&r, &img(vec![0.0; 3])).unwrap(), 1.0);
        assert_eq!(nmse(&r, &r.map(|v| 2.0 * v)).unwrap(), 1.0);
        assert!(nmse(&img(vec![0.0; 3]), &r).is_err());
        assert!(nmse(&r, &img(vec![0.0; 2])).is_err());
    }

    #[test]
    fn psnr_trivial_cases() {
        let r = img(vec![1.0, 0.0, 0.0, 0.0]);
        // MSE 0.01 at peak 1.
        let x = img(vec![1.0, 0.2, 0.0, 0.0]);
        assert!((psnr(&r, &x).unwrap() - 20.0).abs() < 1e-12);
        assert_eq!(psnr(&r, &r).unwrap(), PSNR_CAP);
        let half = img(vec![1.0, 0.2 / 2f64.sqrt(), 0.0, 0.0]);
        let gain = psnr(&r, &half).unwrap() - psnr(&r, &x).unwrap();
        assert!((gain - 10.0 * 2f64.log10()).abs() < 1e-12);
        assert!((gain - 3.0103).abs() < 1e-4);
    }

    #[test]
    fn metrics_are_reference_anchored() {
        let a = img(vec![1.0, 2.0]);
        let b = img(vec![2.0, 2.0]);
        assert_ne!(nmse(&a, &b).unwrap(), nmse(&b, &a).unwrap());
    }

    proptest! {
        #[test]
        fn psnr_and_nmse_agree(seed in 0u64..10_000, n in 2usize..40) {
            let mut rng = SeededRng::new(seed);
            let r = img((0..n).map(|_| rng.uniform_range(0.01, 1.0)).collect());
            let x = img((0..n).map(|_| rng.uniform_range(0.0, 1.0)).collect());
            let (nm, ps) = (nmse(&r, &x).unwrap(), psnr(&r, &x).unwrap());
            let peak = r.max();
            let norm2: f64 = r.data().iter().map(|v| v * v).sum();
            let rhs = 10.0 * (peak * peak * n as f64).log10() - 10.0 * (nm * norm2).log10();
            prop_assert!((ps - rhs).abs() < 1e-9);
        }
    }

    fn run(method: &str, dataset: &str, refs: &[RealArray2D], recs: Vec<RealArray2D>) -> MethodRun {
        MethodRun {
            method: method.into(),
            dataset: dataset.into(),
            references: refs.to_vec(),
            reconstructions: recs,
        }
    }

    #[test]
    fn report_rows_and_flags() {
        let refs = vec![img(vec![1.0, 0.5]), img(vec![0.8, 0.2])];
        let good: Vec<_> = refs.iter().map(|r| r.map(|v| v + 0.01)).collect();
        let bad: Vec<_> = refs.iter().map(|r| r.map(|v| v + 0.1)).collect();
        let report = assemble_report(&[
            run("a", "r1", &refs, good.clone()),
            run("b", "r1", &refs, bad),
            run("c", "r1", &refs, good),
            run("a", "r3", &refs[..1], vec![refs[0].map(|v| v * 0.9)]),
        ])
        .unwrap();
        let (a, b, c) = (
            report.row("a", "r1").unwrap(),
            report.row("b", "r1").unwrap(),
            report.row("c", "r1").unwrap(),
        );
        assert!(a.best_nmse && a.best_psnr && !b.best_nmse && !b.best_psnr);
        assert_eq!(
            (a.nmse_mean, a.psnr_mean, a.nmse_std),
            (c.nmse_mean, c.psnr_mean, c.nmse_std)
        );
        let single = report.row("a", "r3").unwrap();
        assert_eq!((single.n, single.nmse_std, single.psnr_std), (1, 0.0, 0.0));
        assert!(single.best_nmse);
        assert_eq!(report.images.len(), 7);
        assert!(report
            .to_csv()
            .starts_with("method,dataset,n,nmse_mean,nmse_std,psnr_mean,psnr_std\n"));
    }

    #[test]
    fn report_rejects_bad_inputs() {
        assert!(assemble_report(&[]).is_err());
        let refs = vec![img(vec![1.0])];
        assert!(assemble_report(&[run("a", "d", &refs, vec![])]).is_err());
    }

    #[test]
    fn report_files_round_trip() {
        let refs = vec![img(vec![1.0, 0.5])];
        let report = assemble_report(&[run("a", "d", &refs, vec![img(vec![0.9, 0.5])])]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        report.save(dir.path()).unwrap();
        let back: Report =
            serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap())
                .unwrap();
        assert_eq!(back, report);
        assert_eq!(
            fs::read_to_string(dir.path().join("report.csv")).unwrap(),
            report.to_csv()
        );
    }
}
