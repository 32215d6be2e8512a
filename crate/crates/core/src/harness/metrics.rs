//! Error metrics over paired truth/prediction values.

/// `sqrt(sum (y - y_hat)^2 / n)`, `None` for no pairs.
pub fn rmse(pairs: &[(f64, f64)]) -> Option<f64> {
    if pairs.is_empty() {
        return None;
    }
    let ss: f64 = pairs.iter().map(|(y, p)| (y - p) * (y - p)).sum();
    Some((ss / pairs.len() as f64).sqrt())
}

/// `sum |y - y_hat| / n`, `None` for no pairs.
pub fn mae(pairs: &[(f64, f64)]) -> Option<f64> {
    if pairs.is_empty() {
        return None;
    }
    Some(pairs.iter().map(|(y, p)| (y - p).abs()).sum::<f64>() / pairs.len() as f64)
}
