const NUM: [f64; 5] = [0.2, 0.1, 0.0, -0.1, -0.2];
const POLE: f64 = 0.98;

/// RASTA band-pass along one band's frame trajectory, zero initial state.
pub fn rasta_filter_band(x: &[f64]) -> Vec<f64> {
    let mut y = Vec::with_capacity(x.len());
    let mut prev = 0.0;
    for t in 0..x.len() {
        let mut acc = POLE * prev;
        for (k, c) in NUM.iter().enumerate() {
            if t >= k {
                acc += c * x[t - k];
            }
        }
        y.push(acc);
        prev = acc;
    }
    y
}

/// Filters every band (column) of a `frames × bands` trajectory.
pub fn rasta_filter(traj: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let Some(first) = traj.first() else {
        return Vec::new();
    };
    let mut out = vec![vec![0.0; first.len()]; traj.len()];
    for b in 0..first.len() {
        let col: Vec<f64> = traj.iter().map(|row| row[b]).collect();
        for (t, v) in rasta_filter_band(&col).into_iter().enumerate() {
            out[t][b] = v;
        }
    }
    out
}
