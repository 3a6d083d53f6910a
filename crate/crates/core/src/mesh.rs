//! Admissible orthogonal meshes: uniform intervals and cartesian grids.
//!
//! Cell centers are centroids, so the segment joining two neighbouring
//! centers is orthogonal to their common edge and the two-point flux
//! approximation is consistent. Periodic sides are realised as extra edges
//! pairing the two opposite cells; they behave like interior edges except
//! that each incident cell sees the edge midpoint in its own coordinates.

use std::io::Write;

use crate::error::{invalid_arg, Result};

/// A point of the plane; 1-D meshes leave the second coordinate at zero.
pub type Point = [f64; 2];

pub(crate) fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// Side of the rectangular (or interval) domain a boundary edge lies on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Side {
    Left,
    Right,
    Bottom,
    Top,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundaryTag {
    Dirichlet,
    Neumann,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EdgeKind {
    Interior,
    Periodic,
    Boundary(BoundaryTag),
}

/// Which sides of a cartesian domain are identified with their opposite.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Periodicity {
    pub x: bool,
    pub y: bool,
}

impl Periodicity {
    pub const NONE: Periodicity = Periodicity { x: false, y: false };
    pub const ALL: Periodicity = Periodicity { x: true, y: true };
}

/// Axis-aligned rectangle `[x0, x1] x [y0, y1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        Rect { x0, x1, y0, y1 }
    }

    pub fn square(a: f64, b: f64) -> Self {
        Rect::new(a, b, a, b)
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }
}

#[derive(Clone, Debug)]
pub struct Cell {
    pub center: Point,
    pub measure: f64,
    pub diameter: f64,
    /// Ids of the edges bounding this cell.
    pub edges: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct Edge {
    /// m(σ): length in 2-D, 1 in 1-D.
    pub measure: f64,
    /// d_σ: center-to-center distance, or center-to-edge on the boundary.
    pub distance: f64,
    /// τ_σ = m(σ) / d_σ.
    pub transmissibility: f64,
    pub owner: usize,
    pub neighbor: Option<usize>,
    /// Unit normal pointing out of `owner`.
    pub normal: Point,
    /// Edge midpoint seen from the owner and from the neighbour. Both entries
    /// coincide except on periodic edges.
    pub midpoints: [Point; 2],
    pub kind: EdgeKind,
    /// Domain side of the owner for boundary and periodic edges.
    pub side: Option<Side>,
}

impl Edge {
    pub fn is_dirichlet(&self) -> bool {
        self.kind == EdgeKind::Boundary(BoundaryTag::Dirichlet)
    }

    pub fn is_neumann(&self) -> bool {
        self.kind == EdgeKind::Boundary(BoundaryTag::Neumann)
    }

    /// True for edges coupling two cells (interior or periodic).
    pub fn is_coupling(&self) -> bool {
        self.neighbor.is_some()
    }

    /// 0 if `cell` is the owner, 1 if it is the neighbour.
    pub fn local_index(&self, cell: usize) -> Option<usize> {
        if cell == self.owner {
            Some(0)
        } else if self.neighbor == Some(cell) {
            Some(1)
        } else {
            None
        }
    }

    /// Outward unit normal seen from `cell`.
    pub fn normal_from(&self, cell: usize) -> Point {
        match self.local_index(cell) {
            Some(0) => self.normal,
            Some(_) => [-self.normal[0], -self.normal[1]],
            None => panic!("cell {cell} is not incident to this edge"),
        }
    }

    pub fn midpoint_from(&self, cell: usize) -> Point {
        match self.local_index(cell) {
            Some(i) => self.midpoints[i],
            None => panic!("cell {cell} is not incident to this edge"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Mesh {
    dim: usize,
    cells: Vec<Cell>,
    edges: Vec<Edge>,
    size: f64,
    domain: Rect,
    shape: (usize, usize),
    periodicity: Periodicity,
}

impl Mesh {
    /// Uniform mesh of `[a, b]` with `n_cells` cells and both ends tagged
    /// homogeneous Neumann.
    pub fn interval(n_cells: usize, a: f64, b: f64) -> Result<Mesh> {
        Self::interval_with(n_cells, a, b, false)
    }

    /// Uniform interval mesh whose two ends are identified.
    pub fn periodic_interval(n_cells: usize, a: f64, b: f64) -> Result<Mesh> {
        Self::interval_with(n_cells, a, b, true)
    }

    fn interval_with(n: usize, a: f64, b: f64, periodic: bool) -> Result<Mesh> {
        if n == 0 {
            return invalid_arg("interval mesh needs at least one cell");
        }
        if !(a.is_finite() && b.is_finite() && a < b) {
            return invalid_arg(format!("invalid interval [{a}, {b}]"));
        }
        if periodic && n < 2 {
            return invalid_arg("periodic interval needs at least two cells");
        }
        let h = (b - a) / n as f64;
        let mut cells: Vec<Cell> = (0..n)
            .map(|i| Cell {
                center: [a + (i as f64 + 0.5) * h, 0.0],
                measure: h,
                diameter: h,
                edges: Vec::new(),
            })
            .collect();
        let mut edges = Vec::with_capacity(n + 1);
        if !periodic {
            edges.push(boundary_edge(0, [-1.0, 0.0], [a, 0.0], 1.0, 0.5 * h, Side::Left));
        }
        for i in 1..n {
            let x = a + i as f64 * h;
            edges.push(coupling_edge(i - 1, i, [1.0, 0.0], [x, 0.0], [x, 0.0], 1.0, h, EdgeKind::Interior, None));
        }
        if periodic {
            edges.push(coupling_edge(n - 1, 0, [1.0, 0.0], [b, 0.0], [a, 0.0], 1.0, h, EdgeKind::Periodic, Some(Side::Right)));
        } else {
            edges.push(boundary_edge(n - 1, [1.0, 0.0], [b, 0.0], 1.0, 0.5 * h, Side::Right));
        }
        link_cells(&mut cells, &edges);
        Ok(Mesh {
            dim: 1,
            cells,
            edges,
            size: h,
            domain: Rect::new(a, b, 0.0, 0.0),
            shape: (n, 1),
            periodicity: Periodicity { x: periodic, y: false },
        })
    }

    /// Uniform `nx x ny` cartesian mesh of `domain` with every side Neumann.
    pub fn cartesian(nx: usize, ny: usize, domain: Rect) -> Result<Mesh> {
        Self::cartesian_periodic(nx, ny, domain, Periodicity::NONE)
    }

    pub fn cartesian_periodic(nx: usize, ny: usize, domain: Rect, periodicity: Periodicity) -> Result<Mesh> {
        if nx == 0 || ny == 0 {
            return invalid_arg(format!("cartesian mesh needs positive sizes, got {nx}x{ny}"));
        }
        let Rect { x0, x1, y0, y1 } = domain;
        if !(x0.is_finite() && x1.is_finite() && y0.is_finite() && y1.is_finite()) || x0 >= x1 || y0 >= y1 {
            return invalid_arg(format!("degenerate rectangle {domain:?}"));
        }
        if (periodicity.x && nx < 2) || (periodicity.y && ny < 2) {
            return invalid_arg("a periodic direction needs at least two cells");
        }
        let hx = (x1 - x0) / nx as f64;
        let hy = (y1 - y0) / ny as f64;
        let diam = hx.hypot(hy);
        let id = |i: usize, j: usize| j * nx + i;
        let xf = |i: usize| x0 + i as f64 * hx;
        let yf = |j: usize| y0 + j as f64 * hy;
        let xc = |i: usize| x0 + (i as f64 + 0.5) * hx;
        let yc = |j: usize| y0 + (j as f64 + 0.5) * hy;

        let mut cells = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                cells.push(Cell {
                    center: [xc(i), yc(j)],
                    measure: hx * hy,
                    diameter: diam,
                    edges: Vec::new(),
                });
            }
        }

        let mut edges = Vec::new();
        // Faces normal to x, row by row.
        for j in 0..ny {
            let y = yc(j);
            if !periodicity.x {
                edges.push(boundary_edge(id(0, j), [-1.0, 0.0], [x0, y], hy, 0.5 * hx, Side::Left));
            }
            for i in 1..nx {
                let m = [xf(i), y];
                edges.push(coupling_edge(id(i - 1, j), id(i, j), [1.0, 0.0], m, m, hy, hx, EdgeKind::Interior, None));
            }
            if periodicity.x {
                edges.push(coupling_edge(
                    id(nx - 1, j),
                    id(0, j),
                    [1.0, 0.0],
                    [x1, y],
                    [x0, y],
                    hy,
                    hx,
                    EdgeKind::Periodic,
                    Some(Side::Right),
                ));
            } else {
                edges.push(boundary_edge(id(nx - 1, j), [1.0, 0.0], [x1, y], hy, 0.5 * hx, Side::Right));
            }
        }
        // Faces normal to y, column by column.
        for i in 0..nx {
            let x = xc(i);
            if !periodicity.y {
                edges.push(boundary_edge(id(i, 0), [0.0, -1.0], [x, y0], hx, 0.5 * hy, Side::Bottom));
            }
            for j in 1..ny {
                let m = [x, yf(j)];
                edges.push(coupling_edge(id(i, j - 1), id(i, j), [0.0, 1.0], m, m, hx, hy, EdgeKind::Interior, None));
            }
            if periodicity.y {
                edges.push(coupling_edge(
                    id(i, ny - 1),
                    id(i, 0),
                    [0.0, 1.0],
                    [x, y1],
                    [x, y0],
                    hx,
                    hy,
                    EdgeKind::Periodic,
                    Some(Side::Top),
                ));
            } else {
                edges.push(boundary_edge(id(i, ny - 1), [0.0, 1.0], [x, y1], hx, 0.5 * hy, Side::Top));
            }
        }
        link_cells(&mut cells, &edges);
        Ok(Mesh {
            dim: 2,
            cells,
            edges,
            size: diam,
            domain,
            shape: (nx, ny),
            periodicity,
        })
    }

    /// Re-tags every non-periodic boundary edge with `tag(side, midpoint)`.
    pub fn tag_boundary(&mut self, tag: impl Fn(Side, Point) -> BoundaryTag) {
        for e in &mut self.edges {
            if let (EdgeKind::Boundary(_), Some(side)) = (e.kind, e.side) {
                e.kind = EdgeKind::Boundary(tag(side, e.midpoints[0]));
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn cell(&self, id: usize) -> &Cell {
        &self.cells[id]
    }

    pub fn edge(&self, id: usize) -> &Edge {
        &self.edges[id]
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Δx = max over cells of diam(K).
    pub fn size(&self) -> f64 {
        self.size
    }

    pub fn domain(&self) -> Rect {
        self.domain
    }

    /// Length (1-D) or area (2-D) of the domain.
    pub fn domain_measure(&self) -> f64 {
        match self.dim {
            1 => self.domain.x1 - self.domain.x0,
            _ => self.domain.area(),
        }
    }

    /// Side lengths (hx, hy) of the uniform cells; hy = 0 in 1-D.
    pub fn cell_extent(&self) -> (f64, f64) {
        let (nx, ny) = self.shape;
        let hx = (self.domain.x1 - self.domain.x0) / nx as f64;
        let hy = if self.dim == 1 { 0.0 } else { (self.domain.y1 - self.domain.y0) / ny as f64 };
        (hx, hy)
    }

    /// Number of cells along x and y (`ny = 1` in 1-D).
    pub fn shape(&self) -> (usize, usize) {
        self.shape
    }

    pub fn periodicity(&self) -> Periodicity {
        self.periodicity
    }

    pub fn has_dirichlet(&self) -> bool {
        self.edges.iter().any(Edge::is_dirichlet)
    }

    pub fn dirichlet_edges(&self) -> impl Iterator<Item = (usize, &Edge)> {
        self.edges.iter().enumerate().filter(|(_, e)| e.is_dirichlet())
    }

    /// Σ_K m(K) v_K.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        self.cells.iter().zip(values).map(|(c, v)| c.measure * v).sum()
    }

    /// q_{K,σ}: mean normal component of `q` over σ, outward from `cell`,
    /// by the midpoint rule (exact for affine fields).
    pub fn edge_velocity(&self, q: &dyn Fn(Point) -> Point, edge: usize, cell: usize) -> f64 {
        let e = &self.edges[edge];
        dot(q(e.midpoint_from(cell)), e.normal_from(cell))
    }

    /// Checks the admissibility and bookkeeping invariants of the mesh.
    pub fn check_invariants(&self) -> Result<()> {
        for (i, c) in self.cells.iter().enumerate() {
            if !(c.measure > 0.0) {
                return invalid_arg(format!("cell {i} has non-positive measure"));
            }
            let mut closure = [0.0; 2];
            for &e in &c.edges {
                let edge = &self.edges[e];
                let n = edge.normal_from(i);
                closure[0] += edge.measure * n[0];
                closure[1] += edge.measure * n[1];
            }
            if closure[0].abs() > 1e-12 || closure[1].abs() > 1e-12 {
                return invalid_arg(format!("cell {i} is not closed: {closure:?}"));
            }
        }
        let total: f64 = self.cells.iter().map(|c| c.measure).sum();
        let dom = self.domain_measure();
        if ((total - dom) / dom).abs() > 1e-12 {
            return invalid_arg(format!("cell measures sum to {total}, domain is {dom}"));
        }
        for (i, e) in self.edges.iter().enumerate() {
            if !(e.transmissibility > 0.0 && e.measure > 0.0 && e.distance > 0.0) {
                return invalid_arg(format!("edge {i} has non-positive geometry"));
            }
            match (e.kind, e.neighbor) {
                (EdgeKind::Interior, Some(l)) => {
                    let k = self.cells[e.owner].center;
                    let l = self.cells[l].center;
                    let d = [l[0] - k[0], l[1] - k[1]];
                    let cross = d[0] * e.normal[1] - d[1] * e.normal[0];
                    if cross.abs() > 1e-12 * e.distance || dot(d, e.normal) <= 0.0 {
                        return invalid_arg(format!("edge {i} violates orthogonality"));
                    }
                }
                (EdgeKind::Periodic, Some(_)) => {}
                (EdgeKind::Boundary(_), None) => {}
                _ => return invalid_arg(format!("edge {i} has inconsistent incidence")),
            }
        }
        Ok(())
    }

    /// Writes the debug dump: one `cell` row per cell and one `edge` row per
    /// edge (neighbour id, or the boundary tag when there is none).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
        for (i, c) in self.cells.iter().enumerate() {
            let mut rec = vec!["cell".to_string(), i.to_string(), fmt_f64(c.center[0])];
            if self.dim == 2 {
                rec.push(fmt_f64(c.center[1]));
            }
            rec.push(fmt_f64(c.measure));
            w.write_record(&rec)?;
        }
        for (i, e) in self.edges.iter().enumerate() {
            let other = match (e.neighbor, e.kind) {
                (Some(l), EdgeKind::Periodic) => format!("{l}|periodic"),
                (Some(l), _) => l.to_string(),
                (None, EdgeKind::Boundary(BoundaryTag::Dirichlet)) => "dirichlet".into(),
                (None, _) => "neumann".into(),
            };
            w.write_record([
                "edge".to_string(),
                i.to_string(),
                e.owner.to_string(),
                other,
                fmt_f64(e.measure),
                fmt_f64(e.distance),
                fmt_f64(e.transmissibility),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// 17 significant digits, used by every CSV writer.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn boundary_edge(owner: usize, normal: Point, mid: Point, measure: f64, distance: f64, side: Side) -> Edge {
    Edge {
        measure,
        distance,
        transmissibility: measure / distance,
        owner,
        neighbor: None,
        normal,
        midpoints: [mid, mid],
        kind: EdgeKind::Boundary(BoundaryTag::Neumann),
        side: Some(side),
    }
}

#[allow(clippy::too_many_arguments)]
fn coupling_edge(
    owner: usize,
    neighbor: usize,
    normal: Point,
    mid_owner: Point,
    mid_neighbor: Point,
    measure: f64,
    distance: f64,
    kind: EdgeKind,
    side: Option<Side>,
) -> Edge {
    Edge {
        measure,
        distance,
        transmissibility: measure / distance,
        owner,
        neighbor: Some(neighbor),
        normal,
        midpoints: [mid_owner, mid_neighbor],
        kind,
        side,
    }
}

fn link_cells(cells: &mut [Cell], edges: &[Edge]) {
    for (i, e) in edges.iter().enumerate() {
        cells[e.owner].edges.push(i);
        if let Some(l) = e.neighbor {
            cells[l].edges.push(i);
        }
    }
}
