use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// Unit-length components, strongest first. The largest-magnitude
    /// coordinate of each is positive.
    pub components: Vec<Vec<f64>>,
    /// Share of total variance per component; all zero for constant data.
    pub ratios: Vec<f64>,
}

/// Principal components of the rows of `x`.
pub fn pca_fit(x: &Tensor, k: usize) -> Result<PcaModel> {
    let (n, d) = (x.rows(), x.cols());
    if n < 2 {
        return Err(Error::invalid("PCA needs at least two samples"));
    }
    if k > d {
        return Err(Error::invalid(format!("cannot keep {k} components of {d}-dim data")));
    }
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(x.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, d, |i, j| x.row(i)[j] - mean[j]);
    let cov = (centered.transpose() * &centered) / (n - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();

    let mut components = Vec::with_capacity(k);
    let mut ratios = Vec::with_capacity(k);
    for &j in order.iter().take(k) {
        let mut c: Vec<f64> = eig.eigenvectors.column(j).iter().copied().collect();
        let lead = c
            .iter()
            .copied()
            .fold(0.0f64, |best, v| if v.abs() > best.abs() { v } else { best });
        if lead < 0.0 {
            c.iter_mut().for_each(|v| *v = -*v);
        }
        components.push(c);
        let lambda = eig.eigenvalues[j].max(0.0);
        ratios.push(if total > 0.0 { lambda / total } else { 0.0 });
    }
    Ok(PcaModel {
        mean,
        components,
        ratios,
    })
}

/// Scores of the rows of `x` on the fitted components (`n × k`).
pub fn pca_project(model: &PcaModel, x: &Tensor) -> Result<Tensor> {
    if x.cols() != model.mean.len() {
        return Err(Error::shape("pca_project", x.shape(), &[x.rows(), model.mean.len()]));
    }
    let k = model.components.len();
    let mut out = Vec::with_capacity(x.rows() * k);
    for i in 0..x.rows() {
        let row = x.row(i);
        for c in &model.components {
            out.push(
                row.iter()
                    .zip(&model.mean)
                    .zip(c)
                    .map(|((v, m), w)| (v - m) * w)
                    .sum(),
            );
        }
    }
    Tensor::new(vec![x.rows(), k], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn points_on_a_line_have_one_component() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, 2.0 * i as f64 + 1.0, -0.5 * i as f64]).collect();
        let x = Tensor::from_rows(&rows).unwrap();
        let m = pca_fit(&x, 3).unwrap();
        assert!((m.ratios[0] - 1.0).abs() < 1e-12);
        let c = &m.components[0];
        let norm: f64 = c.iter().map(|v| v * v).sum();
        assert!((norm - 1.0).abs() < 1e-12);
        assert!(c[1] > 0.0);
    }

    #[test]
    fn constant_data_gives_zero_ratios() {
        let x = Tensor::full(&[5, 3], 2.0);
        let m = pca_fit(&x, 2).unwrap();
        assert_eq!(m.ratios, [0.0, 0.0]);
    }

    #[test]
    fn mean_projects_to_zero_and_components_orthonormal() {
        let rows: Vec<Vec<f64>> = (0..30)
            .map(|i| {
                let t = i as f64;
                vec![(t * 0.7).sin(), (t * 1.3).cos() * 2.0, t * 0.1, (t * 0.3).sin() + 0.2 * t]
            })
            .collect();
        let x = Tensor::from_rows(&rows).unwrap();
        let m = pca_fit(&x, 4).unwrap();
        let mean = Tensor::new(vec![1, 4], m.mean.clone()).unwrap();
        assert!(pca_project(&m, &mean).unwrap().data().iter().all(|v| v.abs() < 1e-12));
        for (a, ca) in m.components.iter().enumerate() {
            for (b, cb) in m.components.iter().enumerate() {
                let dot: f64 = ca.iter().zip(cb).map(|(u, v)| u * v).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-9);
            }
        }
        assert!(m.ratios.windows(2).all(|w| w[0] >= w[1]));
        assert!(m.ratios.iter().sum::<f64>() <= 1.0 + 1e-9);
    }

    #[test]
    fn bad_arguments() {
        assert!(pca_fit(&Tensor::zeros(&[1, 3]), 1).is_err());
        assert!(pca_fit(&Tensor::zeros(&[4, 3]), 4).is_err());
    }
}
