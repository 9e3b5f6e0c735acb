#![allow(dead_code)]

use pnarm::Network;

pub fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("n{i}")).collect()
}

pub fn ring(n: usize) -> Network {
    let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
    Network::new(ids(n), &edges, None).unwrap()
}

pub fn path(n: usize) -> Network {
    let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
    Network::new(ids(n), &edges, None).unwrap()
}

/// All set partitions of `n` items as restricted growth strings.
pub fn set_partitions(n: usize) -> Vec<Vec<usize>> {
    fn extend(prefix: &mut Vec<usize>, n: usize, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == n {
            out.push(prefix.clone());
            return;
        }
        let next = prefix.iter().max().map_or(0, |m| m + 1);
        for l in 0..=next {
            prefix.push(l);
            extend(prefix, n, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if n == 0 {
        out.push(Vec::new());
    } else {
        extend(&mut Vec::new(), n, &mut out);
    }
    out
}

/// Relabels by order of first appearance.
pub fn canonical(labels: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect()
}

fn choose2(x: f64) -> f64 {
    x * (x - 1.0) / 2.0
}

/// Adjusted Rand index between two labellings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let (ka, kb) = (a.iter().max().unwrap() + 1, b.iter().max().unwrap() + 1);
    let mut table = vec![vec![0f64; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1.0;
    }
    let index: f64 = table.iter().flatten().map(|&c| choose2(c)).sum();
    let rows: f64 = table.iter().map(|r| choose2(r.iter().sum())).sum();
    let cols: f64 = (0..kb).map(|j| choose2(table.iter().map(|r| r[j]).sum())).sum();
    let expected = rows * cols / choose2(n);
    let max = 0.5 * (rows + cols);
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Monte Carlo standard error of the mean of a correlated series by
/// non-overlapping batch means with about `sqrt(n)` batches.
pub fn batch_means_se(xs: &[f64]) -> f64 {
    let n = xs.len();
    let batches = (n as f64).sqrt().floor() as usize;
    let size = n / batches;
    let means: Vec<f64> = (0..batches).map(|b| mean(&xs[b * size..(b + 1) * size])).collect();
    let m = mean(&means);
    let var = means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (var / batches as f64).sqrt()
}

/// Standard error of a proportion estimated from `n` independent draws.
pub fn iid_se(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

#[test]
fn ari_hand_values() {
    assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[1, 1, 0, 0]), 1.0);
    // Hubert-Arabie example: a = {0,0,0,1,1,1}, b = {0,0,1,1,2,2}
    let ari = adjusted_rand_index(&[0, 0, 0, 1, 1, 1], &[0, 0, 1, 1, 2, 2]);
    // index 2, rows 6, cols 3, expected 18 / 15, max 4.5
    assert!((ari - (2.0 - 1.2) / (4.5 - 1.2)).abs() < 1e-12);
}

#[test]
fn bell_numbers() {
    let bell: Vec<usize> = (0..7).map(|n| set_partitions(n).len()).collect();
    assert_eq!(bell, vec![1, 1, 2, 5, 15, 52, 203]);
}
