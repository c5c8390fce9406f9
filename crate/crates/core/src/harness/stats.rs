use statrs::distribution::{ContinuousCDF, StudentsT};

/// Mean with a two-sided 95% Student-t interval. A single value has a zero-width interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanCi {
    pub n: usize,
    pub mean: f64,
    pub half_width: f64,
}

impl MeanCi {
    pub fn low(&self) -> f64 {
        self.mean - self.half_width
    }

    pub fn high(&self) -> f64 {
        self.mean + self.half_width
    }

    pub fn overlaps(&self, other: &MeanCi) -> bool {
        self.low() <= other.high() && other.low() <= self.high()
    }
}

pub fn mean_ci95(values: &[f64]) -> Option<MeanCi> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return Some(MeanCi { n, mean, half_width: 0.0 });
    }
    let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("positive dof").inverse_cdf(0.975);
    Some(MeanCi {
        n,
        mean,
        half_width: t * (var / n as f64).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textbook_interval() {
        let ci = mean_ci95(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(ci.mean, 2.0);
        // t_{0.975, 2} = 4.302653 and s/sqrt(n) = 1/sqrt(3)
        assert!((ci.half_width - 4.302_652_729_911_275 / 3f64.sqrt()).abs() < 1e-6);
        assert!((ci.half_width - 2.484).abs() < 1e-3);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(mean_ci95(&[]).is_none());
        assert_eq!(mean_ci95(&[4.0]).unwrap().half_width, 0.0);
        assert_eq!(mean_ci95(&[2.0, 2.0]).unwrap().half_width, 0.0);
    }
}
