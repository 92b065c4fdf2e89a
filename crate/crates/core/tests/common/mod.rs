//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use celldet::assignment::CostMatrix;

/// Minimum assignment cost by enumerating every injective column -> row map.
pub fn brute_force_assignment(c: &CostMatrix) -> f64 {
    fn go(c: &CostMatrix, col: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
        if col == c.cols() {
            *best = best.min(acc);
            return;
        }
        for r in 0..c.rows() {
            if !used[r] {
                used[r] = true;
                go(c, col + 1, used, acc + c.get(r, col), best);
                used[r] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(c, 0, &mut vec![false; c.rows()], 0.0, &mut best);
    if c.cols() == 0 {
        0.0
    } else {
        best
    }
}

/// Area under the interpolated precision-recall curve by midpoint
/// integration on a recall grid of `steps` cells. Scores must be distinct.
pub fn numeric_ap(flags: &[bool], scores: &[f64], n_gt: usize, steps: usize) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    let mut order: Vec<usize> = (0..flags.len()).collect();
    order.sort_by(|a, b| scores[*b].total_cmp(&scores[*a]));
    let mut points = Vec::new();
    let mut tp = 0usize;
    for (rank, &i) in order.iter().enumerate() {
        tp += usize::from(flags[i]);
        points.push((tp as f64 / n_gt as f64, tp as f64 / (rank + 1) as f64));
    }
    let dr = 1.0 / steps as f64;
    (0..steps)
        .map(|s| {
            let r = (s as f64 + 0.5) * dr;
            points
                .iter()
                .filter(|(rec, _)| *rec >= r)
                .map(|(_, p)| *p)
                .fold(0.0, f64::max)
                * dr
        })
        .sum()
}

/// Central difference of `f` along coordinate `i` of `x`.
pub fn central_difference(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut xp = x.to_vec();
    xp[i] += h;
    let fp = f(&xp);
    xp[i] = x[i] - h;
    let fm = f(&xp);
    (fp - fm) / (2.0 * h)
}

/// Accepts when the relative error is within `tol`, or the absolute error
/// is below `1e-7` for near-zero gradients.
pub fn grad_close(analytic: f64, numeric: f64, tol: f64) -> bool {
    let diff = (analytic - numeric).abs();
    let scale = analytic.abs().max(numeric.abs());
    diff <= 1e-7 || diff <= tol * scale
}

/// Worst relative error over gradient entries of magnitude at least `1e-3`,
/// for reporting.
pub fn worst_relative(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .filter(|(a, n)| a.abs().max(n.abs()) >= 1e-3)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()))
        .fold(0.0, f64::max)
}

/// Minimal structural check of an HTML document: balanced non-void tags.
pub fn html_is_balanced(html: &str) -> Result<(), String> {
    const VOID: [&str; 6] = ["meta", "br", "img", "hr", "input", "link"];
    let mut stack: Vec<String> = Vec::new();
    let mut rest = html;
    while let Some(start) = rest.find('<') {
        let end = rest[start..].find('>').ok_or("unterminated tag")? + start;
        let tag = &rest[start + 1..end];
        rest = &rest[end + 1..];
        if tag.starts_with('!') {
            continue;
        }
        let self_closing = tag.ends_with('/');
        let name: String = tag
            .trim_start_matches('/')
            .chars()
            .take_while(|c| c.is_ascii_alphanumeric())
            .collect();
        if tag.starts_with('/') {
            match stack.pop() {
                Some(open) if open == name => {}
                other => return Err(format!("</{name}> closes {other:?}")),
            }
        } else if !self_closing && !VOID.contains(&name.as_str()) {
            stack.push(name);
        }
    }
    if stack.is_empty() {
        Ok(())
    } else {
        Err(format!("unclosed tags {stack:?}"))
    }
}
