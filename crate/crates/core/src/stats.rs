//! Summary statistics over repeated runs.

use serde::Serialize;

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Mean with a normal-approximation 95% confidence interval, plus the median.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MeanCi {
    pub mean: f64,
    pub half_width: f64,
    pub median: f64,
    pub count: usize,
}

impl MeanCi {
    pub fn from_samples(samples: &[f64]) -> Self {
        let count = samples.len();
        if count == 0 {
            return MeanCi {
                mean: f64::NAN,
                half_width: f64::NAN,
                median: f64::NAN,
                count,
            };
        }
        let mean = samples.iter().sum::<f64>() / count as f64;
        let half_width = if count > 1 {
            let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>()
                / (count as f64 - 1.0);
            Z95 * (var / count as f64).sqrt()
        } else {
            0.0
        };
        MeanCi {
            mean,
            half_width,
            median: median(samples),
            count,
        }
    }

    pub fn lo(&self) -> f64 {
        self.mean - self.half_width
    }

    pub fn hi(&self) -> f64 {
        self.mean + self.half_width
    }
}

pub fn median(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return f64::NAN;
    }
    let mut v = samples.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_samples_have_zero_width() {
        let s = MeanCi::from_samples(&[3.0; 10]);
        assert_eq!(s.mean, 3.0);
        assert_eq!(s.half_width, 0.0);
        assert_eq!(s.median, 3.0);
    }

    #[test]
    fn known_interval() {
        // sd = 1, n = 4 -> half width = z * 0.5
        let s = MeanCi::from_samples(&[-1.0, 1.0, -1.0, 1.0]);
        let sd = (4.0f64 / 3.0).sqrt();
        assert!((s.half_width - Z95 * sd / 2.0).abs() < 1e-15);
        assert_eq!(s.median, 0.0);
    }
}
