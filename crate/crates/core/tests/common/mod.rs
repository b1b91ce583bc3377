//! Helpers shared by the integration tests and the acceptance harness.
#![allow(dead_code)]

use std::collections::BTreeSet;

use markov_curv::builders;
use markov_curv::MarkovChain;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Undirected edge list of a tree given as adjacency lists.
pub type Tree = Vec<Vec<usize>>;

fn tree_edges(t: &Tree) -> Vec<(usize, usize)> {
    let mut e = Vec::new();
    for (a, ns) in t.iter().enumerate() {
        for &b in ns {
            if a < b {
                e.push((a, b));
            }
        }
    }
    e
}

/// Rooted canonical string (AHU encoding).
fn rooted_code(t: &Tree, v: usize, parent: usize) -> String {
    let mut kids: Vec<String> = t[v].iter().filter(|&&w| w != parent).map(|&w| rooted_code(t, w, v)).collect();
    kids.sort();
    format!("({})", kids.concat())
}

/// Vertices minimizing eccentricity.
fn centers(t: &Tree) -> Vec<usize> {
    let n = t.len();
    let ecc = |s: usize| {
        let mut d = vec![usize::MAX; n];
        d[s] = 0;
        let mut q = std::collections::VecDeque::from([s]);
        while let Some(v) = q.pop_front() {
            for &w in &t[v] {
                if d[w] == usize::MAX {
                    d[w] = d[v] + 1;
                    q.push_back(w);
                }
            }
        }
        *d.iter().max().unwrap()
    };
    let e: Vec<usize> = (0..n).map(ecc).collect();
    let m = *e.iter().min().unwrap();
    (0..n).filter(|&v| e[v] == m).collect()
}

/// Canonical form of an unrooted tree: the smallest rooted code over its centers.
fn canonical(t: &Tree) -> String {
    centers(t).into_iter().map(|c| rooted_code(t, c, usize::MAX)).min().unwrap()
}

/// All unlabelled trees on `n >= 1` vertices, one representative each.
pub fn all_trees(n: usize) -> Vec<Tree> {
    let mut level: Vec<Tree> = vec![vec![vec![]]];
    for _ in 1..n {
        let mut seen = BTreeSet::new();
        let mut next = Vec::new();
        for t in &level {
            for v in 0..t.len() {
                let mut u = t.clone();
                let new = u.len();
                u.push(vec![v]);
                u[v].push(new);
                if seen.insert(canonical(&u)) {
                    next.push(u);
                }
            }
        }
        level = next;
    }
    level
}

pub fn is_path(t: &Tree) -> bool {
    t.iter().all(|ns| ns.len() <= 2)
}

pub fn tree_chain(t: &Tree) -> MarkovChain {
    builders::unweighted_graph(t.len(), &tree_edges(t)).unwrap()
}

/// Random reversible chain on a connected graph with `n` states and random
/// measure and conductances.
pub fn random_chain<R: Rng>(rng: &mut R, n: usize, extra_edges: usize) -> MarkovChain {
    let pi: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..2.0)).collect();
    let mut und: BTreeSet<(usize, usize)> = BTreeSet::new();
    for v in 1..n {
        let u = rng.random_range(0..v);
        und.insert((u, v));
    }
    for _ in 0..extra_edges {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a != b {
            und.insert((a.min(b), a.max(b)));
        }
    }
    let mut edges = Vec::new();
    for &(a, b) in &und {
        let c = rng.random_range(0.2..2.0);
        edges.push((a, b, c / pi[a]));
        edges.push((b, a, c / pi[b]));
    }
    let labels = (0..n).map(|i| format!("s{i}")).collect();
    MarkovChain::from_edges(labels, &edges, None).unwrap()
}

pub fn random_field<R: Rng>(rng: &mut R, n: usize, amp: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-amp..amp)).collect()
}

pub fn random_positive<R: Rng>(rng: &mut R, n: usize, log_amp: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-log_amp..log_amp).exp()).collect()
}

/// Rates of the truncated birth-death example with a(x) = sum_{n > x} n^-2
/// and b(x) = sum_{n <= x} n^2.
pub fn power_birth_death_rates(n: usize) -> (Vec<f64>, Vec<f64>) {
    let zeta2 = std::f64::consts::PI.powi(2) / 6.0;
    let mut partial = 0.0;
    let mut a = Vec::with_capacity(n);
    for x in 0..n {
        if x > 0 {
            partial += (x as f64).powi(-2);
        }
        a.push(zeta2 - partial);
    }
    let b = (0..=n).map(|x| (0..=x).map(|k| (k * k) as f64).sum()).collect();
    (a, b)
}

/// Brute-force minimum over s in [lo, hi] of Psi_2^{(p)} / Psi^{(p)} at vertex 0 of a
/// two-state chain, for the field (1, e^s).
pub fn two_state_p_ratio_grid(chain: &MarkovChain, p: f64, lo: f64, hi: f64, step: f64) -> f64 {
    let m = ((hi - lo) / step).round() as usize;
    let mut best = f64::INFINITY;
    for j in 0..=m {
        let s = lo + j as f64 * step;
        if s.abs() < 1e-9 {
            continue;
        }
        let f = [1.0, s.exp()];
        let num = markov_curv::upsilon::psi2_p(chain, p, &f).unwrap()[0];
        let den = markov_curv::upsilon::psi_p(chain, p, &f).unwrap()[0];
        best = best.min(num / den);
    }
    best
}

/// A chain from a family with a closed-form curvature bound, with that bound.
pub fn certified_chain(rng: &mut ChaCha8Rng) -> (MarkovChain, f64) {
    match rng.random_range(0..5) {
        0 => {
            let n = rng.random_range(2..5);
            let l: Vec<f64> = (0..n).map(|_| rng.random_range(0.3..3.0)).collect();
            let sum: f64 = l.iter().sum();
            let min = l.iter().copied().fold(f64::INFINITY, f64::min);
            (builders::weighted_complete(&l).unwrap(), (2.0 * sum * min).sqrt())
        }
        1 => {
            let r: Vec<f64> = (0..4).map(|_| rng.random_range(0.3..3.0)).collect();
            let side = |a: f64, b: f64| (2.0 * a.min(b) * (a + b)).sqrt();
            (builders::weighted_4cycle(r[0], r[1], r[2], r[3]).unwrap(), side(r[0], r[1]).min(side(r[2], r[3])))
        }
        2 => (builders::hypercube(rng.random_range(1..3)).unwrap(), 2.0),
        3 => {
            let n = rng.random_range(3..6);
            let (a, b) = power_birth_death_rates(n);
            (builders::birth_death(&a, &b, n).unwrap(), markov_curv::curvature::birth_death_kappa_bound(&a, &b, n).unwrap())
        }
        _ => {
            let m = rng.random_range(2..4);
            let out: Vec<f64> = (0..m).map(|_| rng.random_range(0.5..2.0)).collect();
            let back: Vec<f64> = (0..m).map(|_| rng.random_range(8.0..12.0)).collect();
            let total: f64 = out.iter().sum();
            let k = (0..m).map(|i| (back[i] - (total - out[i])).min(out[i] * (1.0 + 3f64.sqrt()))).fold(f64::INFINITY, f64::min);
            // Stay clear of rounding in the certificate's own sums.
            let k = k * (1.0 - 1e-12);
            let c = builders::star(&out, &back).unwrap();
            assert!(markov_curv::curvature::star_kappa_certificate(&c, k).unwrap());
            (c, k)
        }
    }
}

/// Random chain of the size used by the identity suites.
pub fn draw_chain(rng: &mut ChaCha8Rng) -> MarkovChain {
    let n = rng.random_range(2..9);
    let extra = rng.random_range(0..8);
    random_chain(rng, n, extra)
}

/// Random reversible translation-invariant window in one or two dimensions.
pub fn random_window(rng: &mut ChaCha8Rng) -> markov_curv::lattice::LatticeWindow {
    let dim = rng.random_range(1..3);
    let mut kernel = Vec::new();
    // k(h) = c(h) e^{theta.h / 2} with c symmetric is reversible for pi(x) = e^{theta.x}.
    let theta: Vec<f64> = (0..dim).map(|_| rng.random_range(-0.8..0.8)).collect();
    let mut jumps: Vec<Vec<i64>> = (0..dim)
        .map(|i| {
            let mut h = vec![0i64; dim];
            h[i] = 1;
            h
        })
        .collect();
    if dim == 2 && rng.random_bool(0.5) {
        jumps.push(vec![1, 1]);
    }
    for h in jumps {
        let c = rng.random_range(0.3..2.0);
        let tilt: f64 = h.iter().zip(&theta).map(|(a, t)| *a as f64 * t).sum::<f64>();
        kernel.push((h.clone(), c * (0.5 * tilt).exp()));
        kernel.push((h.iter().map(|v| -v).collect(), c * (-0.5 * tilt).exp()));
    }
    markov_curv::lattice::lattice_window(dim, &kernel, if dim == 1 { 4 } else { 3 }).unwrap()
}
