//! Incremental Bowyer-Watson Delaunay triangulation.
//!
//! The unbounded region is covered by "ghost" triangles that share a single
//! vertex at infinity, so the final mesh always covers the convex hull
//! without the super-triangle clean-up step. Predicates are plain floating
//! point with a small relative tolerance.

use std::collections::{HashMap, HashSet};

use crate::error::{Error, Result};
use crate::imaging::FiberLayout;

const GHOST: usize = usize::MAX;
/// Relative tolerance of the in-circle and orientation predicates.
const PREDICATE_EPS: f64 = 1e-12;

/// Triangle `[a, b, c]` in counter-clockwise order plus the data needed to
/// evaluate barycentric coordinates of a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triangle {
    pub vertices: [usize; 3],
    origin: (f64, f64),
    edge_b: (f64, f64),
    edge_c: (f64, f64),
    det: f64,
}

impl Triangle {
    fn new(vertices: [usize; 3], pts: &[(f64, f64)]) -> Self {
        let a = pts[vertices[0]];
        let b = pts[vertices[1]];
        let c = pts[vertices[2]];
        let edge_b = (b.0 - a.0, b.1 - a.1);
        let edge_c = (c.0 - a.0, c.1 - a.1);
        Self {
            vertices,
            origin: a,
            edge_b,
            edge_c,
            det: edge_b.0 * edge_c.1 - edge_c.0 * edge_b.1,
        }
    }

    /// Barycentric weights of `(x, y)` for vertices `[a, b, c]`.
    #[inline]
    pub fn barycentric(&self, x: f64, y: f64) -> [f64; 3] {
        let px = x - self.origin.0;
        let py = y - self.origin.1;
        let lb = (px * self.edge_c.1 - self.edge_c.0 * py) / self.det;
        let lc = (self.edge_b.0 * py - px * self.edge_b.1) / self.det;
        [1.0 - lb - lc, lb, lc]
    }
}

#[derive(Debug, Clone)]
pub struct Triangulation {
    vertices: Vec<(f64, f64)>,
    triangles: Vec<Triangle>,
}

impl Triangulation {
    pub fn vertices(&self) -> &[(f64, f64)] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[Triangle] {
        &self.triangles
    }

    /// Undirected edges on the boundary of the mesh (used by exactly one triangle).
    pub fn boundary_edges(&self) -> Vec<(usize, usize)> {
        let directed: HashSet<(usize, usize)> = self
            .triangles
            .iter()
            .flat_map(|t| {
                let [a, b, c] = t.vertices;
                [(a, b), (b, c), (c, a)]
            })
            .collect();
        directed
            .iter()
            .filter(|&&(a, b)| !directed.contains(&(b, a)))
            .copied()
            .collect()
    }
}

#[inline]
fn orient(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> (f64, f64) {
    let l = (b.0 - a.0) * (p.1 - a.1);
    let r = (p.0 - a.0) * (b.1 - a.1);
    (l - r, l.abs() + r.abs())
}

/// Positive when `p` lies strictly to the left of `a -> b`.
#[inline]
fn left_of(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> bool {
    let (d, mag) = orient(a, b, p);
    d > PREDICATE_EPS * mag
}

/// Positive when `p` is strictly inside the circumcircle of CCW `(a, b, c)`.
#[inline]
fn in_circle(a: (f64, f64), b: (f64, f64), c: (f64, f64), p: (f64, f64)) -> bool {
    let (adx, ady) = (a.0 - p.0, a.1 - p.1);
    let (bdx, bdy) = (b.0 - p.0, b.1 - p.1);
    let (cdx, cdy) = (c.0 - p.0, c.1 - p.1);
    let alift = adx * adx + ady * ady;
    let blift = bdx * bdx + bdy * bdy;
    let clift = cdx * cdx + cdy * cdy;
    let (bc1, bc2) = (bdx * cdy, cdx * bdy);
    let (ca1, ca2) = (cdx * ady, adx * cdy);
    let (ab1, ab2) = (adx * bdy, bdx * ady);
    let det = alift * (bc1 - bc2) + blift * (ca1 - ca2) + clift * (ab1 - ab2);
    let mag = alift * (bc1.abs() + bc2.abs())
        + blift * (ca1.abs() + ca2.abs())
        + clift * (ab1.abs() + ab2.abs());
    det > PREDICATE_EPS * mag
}

struct Builder<'a> {
    pts: &'a [(f64, f64)],
    tris: Vec<[usize; 3]>,
    alive: Vec<bool>,
    edges: HashMap<(usize, usize), usize>,
}

impl<'a> Builder<'a> {
    fn add(&mut self, t: [usize; 3]) {
        // Ghost triangles keep the vertex at infinity last.
        let t = match t.iter().position(|&v| v == GHOST) {
            Some(0) => [t[1], t[2], t[0]],
            Some(1) => [t[2], t[0], t[1]],
            _ => t,
        };
        let id = self.tris.len();
        for e in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
            self.edges.insert(e, id);
        }
        self.tris.push(t);
        self.alive.push(true);
    }

    fn remove(&mut self, id: usize) {
        let t = self.tris[id];
        for e in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
            if self.edges.get(&e) == Some(&id) {
                self.edges.remove(&e);
            }
        }
        self.alive[id] = false;
    }

    fn conflicts(&self, id: usize, p: (f64, f64)) -> bool {
        let [a, b, c] = self.tris[id];
        if c == GHOST {
            let (pa, pb) = (self.pts[a], self.pts[b]);
            let (d, mag) = orient(pa, pb, p);
            if d > PREDICATE_EPS * mag {
                return true;
            }
            if d.abs() <= PREDICATE_EPS * mag {
                // On the hull line: conflicts only strictly inside the edge.
                let ex = pb.0 - pa.0;
                let ey = pb.1 - pa.1;
                let t = ((p.0 - pa.0) * ex + (p.1 - pa.1) * ey) / (ex * ex + ey * ey);
                return t > 0.0 && t < 1.0;
            }
            false
        } else {
            in_circle(self.pts[a], self.pts[b], self.pts[c], p)
        }
    }

    fn contains(&self, id: usize, p: (f64, f64)) -> bool {
        let [a, b, c] = self.tris[id];
        if c == GHOST {
            return left_of(self.pts[a], self.pts[b], p);
        }
        let (pa, pb, pc) = (self.pts[a], self.pts[b], self.pts[c]);
        !left_of(pb, pa, p) && !left_of(pc, pb, p) && !left_of(pa, pc, p)
    }

    fn insert(&mut self, v: usize) -> Result<()> {
        let p = self.pts[v];
        let live = || (0..self.tris.len()).filter(|&i| self.alive[i]);
        let seed = live()
            .find(|&i| self.contains(i, p) && self.conflicts(i, p))
            .or_else(|| live().find(|&i| self.conflicts(i, p)))
            .ok_or_else(|| {
                Error::Degenerate(format!("vertex {v} at {p:?} conflicts with no triangle"))
            })?;

        let mut cavity = vec![seed];
        let mut in_cavity: HashSet<usize> = HashSet::from([seed]);
        let mut boundary = Vec::new();
        let mut k = 0;
        while k < cavity.len() {
            let t = self.tris[cavity[k]];
            k += 1;
            for (x, y) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                match self.edges.get(&(y, x)) {
                    Some(&n) if in_cavity.contains(&n) => {}
                    Some(&n) if self.conflicts(n, p) => {
                        in_cavity.insert(n);
                        cavity.push(n);
                    }
                    _ => boundary.push((x, y)),
                }
            }
        }
        for &id in &cavity {
            self.remove(id);
        }
        for (x, y) in boundary {
            self.add([x, y, v]);
        }
        Ok(())
    }
}

/// Delaunay triangulation of the layout's fiber centres.
pub fn delaunay_triangulate(layout: &FiberLayout) -> Result<Triangulation> {
    triangulate_points(layout.centres())
}

pub fn triangulate_points(pts: &[(f64, f64)]) -> Result<Triangulation> {
    if pts.len() < 3 {
        return Err(Error::Degenerate(format!(
            "{} points cannot be triangulated",
            pts.len()
        )));
    }
    let mut seen = HashSet::new();
    for (i, p) in pts.iter().enumerate() {
        if !seen.insert((p.0.to_bits(), p.1.to_bits())) {
            return Err(Error::Degenerate(format!("duplicate point {i} at {p:?}")));
        }
    }
    let third = (2..pts.len())
        .find(|&i| {
            let (d, mag) = orient(pts[0], pts[1], pts[i]);
            d.abs() > PREDICATE_EPS * mag
        })
        .ok_or_else(|| Error::Degenerate("all points are collinear".into()))?;

    let mut b = Builder {
        pts,
        tris: Vec::new(),
        alive: Vec::new(),
        edges: HashMap::new(),
    };
    let first = if left_of(pts[0], pts[1], pts[third]) {
        [0, 1, third]
    } else {
        [1, 0, third]
    };
    b.add(first);
    for (x, y) in [(first[0], first[1]), (first[1], first[2]), (first[2], first[0])] {
        b.add([y, x, GHOST]);
    }
    for v in (2..pts.len()).filter(|&v| v != third) {
        b.insert(v)?;
    }

    let triangles = b
        .tris
        .iter()
        .zip(&b.alive)
        .filter(|(t, &alive)| alive && t[2] != GHOST)
        .map(|(t, _)| Triangle::new(*t, pts))
        .collect();
    Ok(Triangulation {
        vertices: pts.to_vec(),
        triangles,
    })
}
