/// Binary classification rates. A rate with a zero denominator is `None`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub accuracy: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn metrics(tp: u64, fp: u64, fn_: u64, tn: u64) -> Metrics {
    Metrics {
        accuracy: ratio(tp + tn, tp + fp + fn_ + tn),
        sensitivity: ratio(tp, tp + fn_),
        specificity: ratio(tn, tn + fp),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(a: f64, b: f64, c: f64) -> Metrics {
        Metrics {
            accuracy: Some(a),
            sensitivity: Some(b),
            specificity: Some(c),
        }
    }

    #[test]
    fn examples() {
        assert_eq!(metrics(1, 0, 0, 1), m(1.0, 1.0, 1.0));
        assert_eq!(metrics(0, 0, 1, 1), m(0.5, 0.0, 1.0));
        assert_eq!(metrics(5, 5, 5, 5), m(0.5, 0.5, 0.5));
    }

    #[test]
    fn undefined_rates() {
        let r = metrics(0, 3, 0, 0);
        assert_eq!(r.sensitivity, None);
        assert_eq!(r.specificity, Some(0.0));
        assert_eq!(r.accuracy, Some(0.0));
        assert_eq!(metrics(0, 0, 0, 0).accuracy, None);
    }
}
