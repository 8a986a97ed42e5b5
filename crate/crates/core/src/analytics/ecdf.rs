use serde::{Deserialize, Serialize};

use super::DomainError;

/// Right-continuous empirical CDF.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ecdf {
    /// Distinct sample values, ascending, with P(X <= x).
    pub points: Vec<(f64, f64)>,
    pub n: usize,
}

impl Ecdf {
    pub fn new(samples: &[f64]) -> Result<Self, DomainError> {
        if samples.is_empty() {
            return Err(DomainError("no samples".into()));
        }
        if samples.iter().any(|x| x.is_nan()) {
            return Err(DomainError("NaN sample".into()));
        }
        let mut xs = samples.to_vec();
        xs.sort_by(f64::total_cmp);
        let n = xs.len();
        let mut points: Vec<(f64, f64)> = Vec::new();
        for (i, x) in xs.iter().enumerate() {
            let f = (i + 1) as f64 / n as f64;
            match points.last_mut() {
                Some(last) if last.0 == *x => last.1 = f,
                _ => points.push((*x, f)),
            }
        }
        Ok(Ecdf { points, n })
    }

    pub fn eval(&self, x: f64) -> f64 {
        let idx = self.points.partition_point(|p| p.0 <= x);
        if idx == 0 {
            0.0
        } else {
            self.points[idx - 1].1
        }
    }

    pub fn mean(&self) -> f64 {
        let mut prev = 0.0;
        let mut m = 0.0;
        for (x, f) in &self.points {
            m += x * (f - prev);
            prev = *f;
        }
        m
    }

    /// Kolmogorov distance to a continuous CDF, checked on both sides of
    /// every jump.
    pub fn sup_distance(&self, cdf: impl Fn(f64) -> f64) -> f64 {
        let mut prev = 0.0;
        let mut d: f64 = 0.0;
        for (x, f) in &self.points {
            let c = cdf(*x);
            d = d.max((c - prev).abs()).max((c - f).abs());
            prev = *f;
        }
        d
    }

    /// Two-column CSV, `value,cdf`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("value,cdf\n");
        for (x, f) in &self.points {
            s.push_str(&format!("{x},{f}\n"));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn steps() {
        let e = Ecdf::new(&[1.0, 2.0, 2.0, 4.0]).unwrap();
        assert_eq!(e.points, vec![(1.0, 0.25), (2.0, 0.75), (4.0, 1.0)]);
        assert_eq!(e.eval(0.5), 0.0);
        assert_eq!(e.eval(3.9), 0.75);
        assert_eq!(Ecdf::new(&[5.0]).unwrap().points, vec![(5.0, 1.0)]);
        assert!(Ecdf::new(&[]).is_err());
    }
}
