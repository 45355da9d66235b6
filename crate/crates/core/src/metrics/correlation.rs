use crate::error::{Error, Result};

fn check_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Contract(format!("length mismatch: {} vs {}", a.len(), b.len())));
    }
    Ok(())
}

/// 1-based ranks; tied values share the mean of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && x[order[j]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

/// Pearson correlation. A zero-variance argument gives 0.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    check_len(a, b)?;
    let n = a.len() as f64;
    if a.len() < 2 {
        return Ok(0.0);
    }
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Ok(0.0);
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman correlation: Pearson on mid-ranks.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    check_len(a, b)?;
    pearson(&average_ranks(a), &average_ranks(b))
}

fn partial_from(rxy: f64, rxz: f64, ryz: f64) -> Result<f64> {
    let den = (1.0 - rxz * rxz) * (1.0 - ryz * ryz);
    if den <= 1e-12 {
        return Err(Error::Undefined(format!(
            "partial correlation undefined: conditioning vector is collinear (rho_xz={rxz:.6}, rho_yz={ryz:.6})"
        )));
    }
    Ok(((rxy - rxz * ryz) / den.sqrt()).clamp(-1.0, 1.0))
}

/// Spearman partial correlation of `x` and `y` controlling for `z`.
/// A constant `z` has zero correlation with everything, so the result is the plain ρ_s(x, y).
pub fn partial_spearman(x: &[f64], y: &[f64], z: &[f64]) -> Result<f64> {
    check_len(x, y)?;
    check_len(x, z)?;
    let (rx, ry, rz) = (average_ranks(x), average_ranks(y), average_ranks(z));
    partial_from(pearson(&rx, &ry)?, pearson(&rx, &rz)?, pearson(&ry, &rz)?)
}

/// Private-structure bias of an agent's text RDM: ρ(t, own | other) − ρ(t, other | own).
pub fn bias_delta(t_x: &[f64], v_x: &[f64], v_y: &[f64]) -> Result<f64> {
    Ok(partial_spearman(t_x, v_x, v_y)? - partial_spearman(t_x, v_y, v_x)?)
}

fn merge_count(v: &mut [f64], buf: &mut Vec<f64>) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_count(&mut v[..mid], buf) + merge_count(&mut v[mid..], buf);
    buf.clear();
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf.push(v[j]);
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf.push(v[i]);
            i += 1;
        }
    }
    buf.extend_from_slice(&v[i..mid]);
    buf.extend_from_slice(&v[j..n]);
    v.copy_from_slice(buf);
    swaps
}

fn tied_pairs(sorted: &[f64]) -> u64 {
    let mut total = 0u64;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as u64;
        total += t * (t - 1) / 2;
        i = j;
    }
    total
}

/// Tie-corrected Kendall τ_b in O(n log n). Returns 0 when either vector is constant.
pub fn kendall_taub(x: &[f64], y: &[f64]) -> Result<f64> {
    check_len(x, y)?;
    let n = x.len();
    if n < 2 {
        return Ok(0.0);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(y[a].total_cmp(&y[b])));
    let n0 = (n as u64) * (n as u64 - 1) / 2;

    let xs: Vec<f64> = order.iter().map(|&i| x[i]).collect();
    let n1 = tied_pairs(&xs);
    let mut n3 = 0u64;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && x[order[j]] == x[order[i]] && y[order[j]] == y[order[i]] {
            j += 1;
        }
        let t = (j - i) as u64;
        n3 += t * (t - 1) / 2;
        i = j;
    }
    let mut ys: Vec<f64> = order.iter().map(|&i| y[i]).collect();
    let swaps = merge_count(&mut ys, &mut Vec::with_capacity(n));
    let n2 = tied_pairs(&ys);
    let den = ((n0 - n1) as f64 * (n0 - n2) as f64).sqrt();
    if den == 0.0 {
        return Ok(0.0);
    }
    let num = n0 as f64 - n1 as f64 - n2 as f64 + n3 as f64 - 2.0 * swaps as f64;
    Ok((num / den).clamp(-1.0, 1.0))
}

/// Kendall partial τ of `x` and `y` given `z`.
pub fn kendall_taub_partial(x: &[f64], y: &[f64], z: &[f64]) -> Result<f64> {
    partial_from(kendall_taub(x, y)?, kendall_taub(x, z)?, kendall_taub(y, z)?)
}
