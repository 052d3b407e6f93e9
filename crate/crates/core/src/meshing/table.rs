//! Marching-cubes case table, generated once from face-crossing rules.
//!
//! Each cube face contributes segments joining its sign-change edges so that
//! negative corners stay separated; chaining the segments of all six faces
//! yields closed polygons, which are fan-triangulated.

use std::sync::OnceLock;

pub type Case = Vec<[u8; 3]>;

/// Edge `e` joins corners `(a, b)` along `axis`, with `a` the lower corner.
pub fn edges() -> &'static [(usize, usize, u8); 12] {
    static EDGES: OnceLock<[(usize, usize, u8); 12]> = OnceLock::new();
    EDGES.get_or_init(|| {
        let mut out = [(0, 0, 0); 12];
        let mut e = 0;
        for axis in 0..3u8 {
            for n in 0..8usize {
                if n >> axis & 1 == 0 {
                    out[e] = (n, n | 1 << axis, axis);
                    e += 1;
                }
            }
        }
        out
    })
}

fn edge_between(a: usize, b: usize) -> u8 {
    let (lo, hi) = (a.min(b), a.max(b));
    edges().iter().position(|&(x, y, _)| x == lo && y == hi).expect("adjacent corners") as u8
}

pub fn cases() -> &'static [Case; 256] {
    static CASES: OnceLock<[Case; 256]> = OnceLock::new();
    CASES.get_or_init(|| std::array::from_fn(build_case))
}

const NONE: u8 = u8::MAX;

fn build_case(case: usize) -> Case {
    let neg = |n: usize| case >> n & 1 == 1;
    let mut next = [NONE; 12];
    for a in 0..3 {
        let (b, c) = ((a + 1) % 3, (a + 2) % 3);
        for s in 0..2usize {
            let base = s << a;
            let mut cyc = [base, base | 1 << b, base | 1 << b | 1 << c, base | 1 << c];
            if s == 0 {
                cyc.reverse();
            }
            // (edge, leaves a negative corner)
            let mut xs: Vec<(u8, bool)> = Vec::with_capacity(4);
            for i in 0..4 {
                let (p, q) = (cyc[i], cyc[(i + 1) % 4]);
                if neg(p) != neg(q) {
                    xs.push((edge_between(p, q), neg(p)));
                }
            }
            for (i, &(e, exit)) in xs.iter().enumerate() {
                if exit {
                    let prev = xs[(i + xs.len() - 1) % xs.len()];
                    next[e as usize] = prev.0;
                }
            }
        }
    }
    let mut tris = Vec::new();
    let mut seen = [false; 12];
    for start in 0..12 {
        if next[start] == NONE || seen[start] {
            continue;
        }
        let mut poly = Vec::new();
        let mut e = start;
        while !seen[e] {
            seen[e] = true;
            poly.push(e as u8);
            e = next[e] as usize;
        }
        // Chain order winds toward the negative side; emit reversed.
        for i in 1..poly.len() - 1 {
            tris.push([poly[0], poly[i + 1], poly[i]]);
        }
    }
    tris
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classic_counts() {
        let t = cases();
        assert!(t[0].is_empty() && t[255].is_empty());
        assert_eq!(t[1].len(), 1);
        // Two negative corners on one edge form a quad.
        assert_eq!(t[0b11].len(), 2);
        // Diagonal corners on opposite faces stay separate.
        assert_eq!(t[0b1000_0001].len(), 2);
        let max = t.iter().map(Vec::len).max().unwrap();
        assert!(max <= 5, "{max}");
    }

    #[test]
    fn complement_has_same_edges() {
        let t = cases();
        for c in 0..256 {
            let used = |k: usize| {
                let mut v: Vec<u8> = t[k].iter().flatten().copied().collect();
                v.sort();
                v.dedup();
                v
            };
            let crossing: Vec<u8> = (0..12u8)
                .filter(|&e| {
                    let (a, b, _) = edges()[e as usize];
                    (c >> a & 1) != (c >> b & 1)
                })
                .collect();
            assert_eq!(used(c), crossing, "case {c}");
        }
    }
}
