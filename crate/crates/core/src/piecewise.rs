use serde::{Deserialize, Serialize};

/// Continuous piecewise-affine function stored by breakpoints.
///
/// `slopes[i]` is the slope on `[breakpoints[i], breakpoints[i+1]]`, so there is one
/// fewer slope than breakpoints. Evaluation past the last breakpoint holds the last value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseLinear {
    pub breakpoints: Vec<f64>,
    pub values: Vec<f64>,
    pub slopes: Vec<f64>,
}

impl PiecewiseLinear {
    pub fn constant(t0: f64, v: f64) -> Self {
        PiecewiseLinear { breakpoints: vec![t0], values: vec![v], slopes: Vec::new() }
    }

    /// Builds from points; slopes are difference quotients.
    pub fn from_points(points: &[(f64, f64)]) -> Self {
        let mut f = PiecewiseLinear { breakpoints: Vec::new(), values: Vec::new(), slopes: Vec::new() };
        for &(t, v) in points {
            f.push(t, v);
        }
        f
    }

    /// Appends a breakpoint. A repeated time replaces the previous value.
    pub fn push(&mut self, t: f64, v: f64) {
        if let Some(&last) = self.breakpoints.last() {
            if t <= last {
                self.breakpoints.pop();
                self.values.pop();
                self.slopes.pop();
                return self.push(last, v);
            }
            let lv = *self.values.last().unwrap();
            self.slopes.push((v - lv) / (t - last));
        }
        self.breakpoints.push(t);
        self.values.push(v);
    }

    pub fn start(&self) -> f64 {
        self.breakpoints[0]
    }

    pub fn end(&self) -> f64 {
        *self.breakpoints.last().unwrap()
    }

    pub fn eval(&self, t: f64) -> f64 {
        let bp = &self.breakpoints;
        if t <= bp[0] {
            return self.values[0];
        }
        if t >= *bp.last().unwrap() {
            return *self.values.last().unwrap();
        }
        // First index with bp[i] > t.
        let i = bp.partition_point(|&b| b <= t);
        let (t0, t1) = (bp[i - 1], bp[i]);
        let (v0, v1) = (self.values[i - 1], self.values[i]);
        v0 + (v1 - v0) * ((t - t0) / (t1 - t0))
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_interpolates() {
        let f = PiecewiseLinear::from_points(&[(0.0, 1.0), (1.0, 0.0), (3.0, 1.0)]);
        assert_eq!(f.slopes, vec![-1.0, 0.5]);
        assert_eq!(f.eval(0.5), 0.5);
        assert_eq!(f.eval(2.0), 0.5);
        assert_eq!(f.eval(-1.0), 1.0);
        assert_eq!(f.eval(10.0), 1.0);
        assert_eq!(f.eval(1.0), 0.0);
    }

    #[test]
    fn repeated_time_replaces() {
        let mut f = PiecewiseLinear::constant(0.0, 1.0);
        f.push(1.0, 2.0);
        f.push(1.0, 3.0);
        assert_eq!(f.breakpoints.len(), 2);
        assert_eq!(f.eval(1.0), 3.0);
    }
}
