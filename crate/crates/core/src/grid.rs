//! Corridor geometry and cell-averaged scalar fields.
//!
//! Cells are indexed `(i, j)` with `i` along the corridor (x) and `j` across
//! it (y). Values are stored row-major over `(i, j)`, i.e. at `i * ny + j`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned square obstacle, given by its center and side length (meters).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub center_x: f64,
    pub center_y: f64,
    pub side: f64,
}

impl Obstacle {
    pub fn centered(length_x: f64, length_y: f64, side: f64) -> Self {
        Obstacle {
            center_x: 0.5 * length_x,
            center_y: 0.5 * length_y,
            side,
        }
    }

    fn bounds(&self) -> (f64, f64, f64, f64) {
        let h = 0.5 * self.side;
        (
            self.center_x - h,
            self.center_x + h,
            self.center_y - h,
            self.center_y + h,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CellKind {
    Fluid,
    Obstacle,
}

/// Everything needed to rebuild a [`Grid`]; this is what gets serialized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub length_x: f64,
    pub length_y: f64,
    pub obstacle: Option<Obstacle>,
}

impl GridSpec {
    pub fn build(&self) -> Result<Grid> {
        build_grid(self.nx, self.ny, self.length_x, self.length_y, self.obstacle)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    nx: usize,
    ny: usize,
    length_x: f64,
    length_y: f64,
    dx: f64,
    dy: f64,
    obstacle: Option<Obstacle>,
    kinds: Vec<CellKind>,
    obstacle_cells: usize,
}

/// Builds the corridor grid and tags every cell whose center lies inside the
/// obstacle (half-open on the max edges).
pub fn build_grid(
    nx: usize,
    ny: usize,
    length_x: f64,
    length_y: f64,
    obstacle: Option<Obstacle>,
) -> Result<Grid> {
    if nx < 4 || ny < 4 {
        return Err(Error::Geometry(format!(
            "grid needs at least 4x4 cells, got {nx}x{ny}"
        )));
    }
    if !(length_x > 0.0 && length_y > 0.0) || !length_x.is_finite() || !length_y.is_finite() {
        return Err(Error::Geometry(format!(
            "corridor dimensions must be positive, got {length_x} x {length_y}"
        )));
    }
    let dx = length_x / nx as f64;
    let dy = length_y / ny as f64;

    let mut kinds = vec![CellKind::Fluid; nx * ny];
    let mut obstacle_cells = 0;
    if let Some(obs) = obstacle {
        if !(obs.side > 0.0) {
            return Err(Error::Geometry(format!(
                "obstacle side must be positive, got {}",
                obs.side
            )));
        }
        let (x0, x1, y0, y1) = obs.bounds();
        // at least one full cell between the obstacle and every boundary
        let slack = 1e-9;
        if x0 < dx - slack * dx || x1 > length_x - dx + slack * dx {
            return Err(Error::Geometry(format!(
                "obstacle x-extent [{x0}, {x1}] must stay one cell away from x = 0 and x = {length_x}"
            )));
        }
        if y0 < dy - slack * dy || y1 > length_y - dy + slack * dy {
            return Err(Error::Geometry(format!(
                "obstacle y-extent [{y0}, {y1}] must stay one cell away from the walls"
            )));
        }
        // compare in cell units so that centers sitting exactly on an edge
        // are classified the same way regardless of rounding
        let (ix0, ix1) = (x0 / dx - 0.5, x1 / dx - 0.5);
        let (jy0, jy1) = (y0 / dy - 0.5, y1 / dy - 0.5);
        let tol = 1e-9;
        for i in 0..nx {
            let fi = i as f64;
            if fi < ix0 - tol || fi >= ix1 - tol {
                continue;
            }
            for j in 0..ny {
                let fj = j as f64;
                if fj >= jy0 - tol && fj < jy1 - tol {
                    kinds[i * ny + j] = CellKind::Obstacle;
                    obstacle_cells += 1;
                }
            }
        }
    }

    Ok(Grid {
        nx,
        ny,
        length_x,
        length_y,
        dx,
        dy,
        obstacle,
        kinds,
        obstacle_cells,
    })
}

impl Grid {
    pub fn nx(&self) -> usize {
        self.nx
    }
    pub fn ny(&self) -> usize {
        self.ny
    }
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }
    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }
    pub fn length_x(&self) -> f64 {
        self.length_x
    }
    pub fn length_y(&self) -> f64 {
        self.length_y
    }
    pub fn dx(&self) -> f64 {
        self.dx
    }
    pub fn dy(&self) -> f64 {
        self.dy
    }
    pub fn cell_area(&self) -> f64 {
        self.dx * self.dy
    }
    pub fn obstacle(&self) -> Option<Obstacle> {
        self.obstacle
    }
    pub fn obstacle_cell_count(&self) -> usize {
        self.obstacle_cells
    }
    pub fn kinds(&self) -> &[CellKind] {
        &self.kinds
    }

    pub fn spec(&self) -> GridSpec {
        GridSpec {
            nx: self.nx,
            ny: self.ny,
            length_x: self.length_x,
            length_y: self.length_y,
            obstacle: self.obstacle,
        }
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.ny + j
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx / self.ny, idx % self.ny)
    }

    #[inline]
    pub fn kind(&self, i: usize, j: usize) -> CellKind {
        self.kinds[i * self.ny + j]
    }

    #[inline]
    pub fn is_fluid(&self, i: usize, j: usize) -> bool {
        self.kinds[i * self.ny + j] == CellKind::Fluid
    }

    /// Cell center in meters.
    #[inline]
    pub fn center(&self, i: usize, j: usize) -> (f64, f64) {
        ((i as f64 + 0.5) * self.dx, (j as f64 + 0.5) * self.dy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Quantity {
    Density,
    Potential,
}

impl Quantity {
    fn name(self) -> &'static str {
        match self {
            Quantity::Density => "density",
            Quantity::Potential => "potential",
        }
    }
}

/// One cell-averaged scalar field on a grid at a given time.
#[derive(Debug, Clone)]
pub struct Field {
    grid: Arc<Grid>,
    values: Vec<f64>,
    quantity: Quantity,
    time: f64,
}

impl Field {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>, quantity: Quantity, time: f64) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Shape(format!(
                "field has {} values, grid has {} cells",
                values.len(),
                grid.len()
            )));
        }
        Ok(Field {
            grid,
            values,
            quantity,
            time,
        })
    }

    /// Density field; obstacle cells must be zero and all cells nonnegative.
    pub fn density(grid: Arc<Grid>, values: Vec<f64>, time: f64) -> Result<Self> {
        let field = Field::new(grid, values, Quantity::Density, time)?;
        for (idx, (&v, &kind)) in field.values.iter().zip(field.grid.kinds()).enumerate() {
            if !(v >= 0.0) {
                return Err(Error::Domain(format!("negative density {v} at cell {idx}")));
            }
            if kind == CellKind::Obstacle && v != 0.0 {
                return Err(Error::Domain(format!(
                    "nonzero density {v} inside the obstacle at cell {idx}"
                )));
            }
        }
        Ok(field)
    }

    pub fn zeros(grid: Arc<Grid>, quantity: Quantity, time: f64) -> Self {
        let n = grid.len();
        Field {
            grid,
            values: vec![0.0; n],
            quantity,
            time,
        }
    }

    /// Skips validation; callers guarantee the invariants.
    pub(crate) fn from_parts(grid: Arc<Grid>, values: Vec<f64>, quantity: Quantity, time: f64) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Field {
            grid,
            values,
            quantity,
            time,
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
    pub fn quantity(&self) -> Quantity {
        self.quantity
    }
    pub fn time(&self) -> f64 {
        self.time
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }

    pub fn with_time(mut self, time: f64) -> Self {
        self.time = time;
        self
    }

    pub(crate) fn expect_quantity(&self, expected: Quantity) -> Result<()> {
        if self.quantity != expected {
            return Err(Error::Quantity {
                expected: expected.name(),
                got: self.quantity.name(),
            });
        }
        Ok(())
    }
}

/// Compensated (Neumaier) sum.
pub fn neumaier_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Total number of people: sum of density times cell area over fluid cells.
pub fn total_mass(field: &Field) -> Result<f64> {
    field.expect_quantity(Quantity::Density)?;
    let grid = &field.grid;
    let sum = neumaier_sum(
        field
            .values
            .iter()
            .zip(grid.kinds())
            .filter(|(_, &k)| k == CellKind::Fluid)
            .map(|(&v, _)| v),
    );
    Ok(sum * grid.cell_area())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paper_grid() -> Grid {
        build_grid(200, 50, 20.0, 5.0, Some(Obstacle::centered(20.0, 5.0, 1.0))).unwrap()
    }

    #[test]
    fn paper_geometry_has_hundred_obstacle_cells() {
        let g = paper_grid();
        assert!((g.dx() - 0.1).abs() < 1e-15);
        assert!((g.dy() - 0.1).abs() < 1e-15);
        // brute-force count of cell centers in [9.5, 10.5) x [2.0, 3.0)
        let mut count = 0;
        for i in 0..200 {
            for j in 0..50 {
                let x = (i as f64 + 0.5) / 10.0;
                let y = (j as f64 + 0.5) / 10.0;
                if (9.5..10.5).contains(&x) && (2.0..3.0).contains(&y) {
                    count += 1;
                }
            }
        }
        assert_eq!(count, 100);
        assert_eq!(g.obstacle_cell_count(), 100);
    }

    #[test]
    fn desk_grid_obstacle_is_symmetric_in_y() {
        let g = build_grid(100, 25, 20.0, 5.0, Some(Obstacle::centered(20.0, 5.0, 1.0))).unwrap();
        assert_eq!(g.obstacle_cell_count(), 25);
        for i in 0..g.nx() {
            for j in 0..g.ny() {
                assert_eq!(g.kind(i, j), g.kind(i, g.ny() - 1 - j));
            }
        }
    }

    #[test]
    fn no_obstacle_means_all_fluid() {
        let g = build_grid(20, 5, 20.0, 5.0, None).unwrap();
        assert_eq!(g.len(), 100);
        assert!(g.kinds().iter().all(|&k| k == CellKind::Fluid));
    }

    #[test]
    fn obstacle_touching_inlet_is_rejected() {
        let obs = Obstacle {
            center_x: 0.2,
            center_y: 2.5,
            side: 1.0,
        };
        assert!(matches!(
            build_grid(200, 50, 20.0, 5.0, Some(obs)),
            Err(Error::Geometry(_))
        ));
    }

    #[test]
    fn tiny_grids_are_rejected() {
        assert!(build_grid(3, 10, 1.0, 1.0, None).is_err());
        assert!(build_grid(10, 10, 0.0, 1.0, None).is_err());
    }

    #[test]
    fn construction_is_deterministic() {
        assert_eq!(paper_grid().kinds(), paper_grid().kinds());
    }

    #[test]
    fn uniform_density_mass_is_area() {
        let g = Arc::new(build_grid(20, 5, 20.0, 5.0, None).unwrap());
        let f = Field::density(g.clone(), vec![1.0; 100], 0.0).unwrap();
        assert!((total_mass(&f).unwrap() - 100.0).abs() < 1e-12);
        let z = Field::zeros(g, Quantity::Density, 0.0);
        assert_eq!(total_mass(&z).unwrap(), 0.0);
    }

    #[test]
    fn potential_has_no_mass() {
        let g = Arc::new(build_grid(20, 5, 20.0, 5.0, None).unwrap());
        let f = Field::zeros(g, Quantity::Potential, 0.0);
        assert!(matches!(total_mass(&f), Err(Error::Quantity { .. })));
    }

    #[test]
    fn density_rejects_mass_in_obstacle() {
        let g = Arc::new(paper_grid());
        let mut v = vec![0.0; g.len()];
        let idx = g.kinds().iter().position(|&k| k == CellKind::Obstacle).unwrap();
        v[idx] = 1.0;
        assert!(Field::density(g, v, 0.0).is_err());
    }

    proptest::proptest! {
        #[test]
        fn mass_is_linear(a in 0.0f64..3.0, b in 0.0f64..3.0, seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let g = Arc::new(build_grid(10, 6, 5.0, 3.0, None).unwrap());
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let f1: Vec<f64> = (0..g.len()).map(|_| rng.gen::<f64>()).collect();
            let f2: Vec<f64> = (0..g.len()).map(|_| rng.gen::<f64>()).collect();
            let combo: Vec<f64> = f1.iter().zip(&f2).map(|(x, y)| a * x + b * y).collect();
            let m = |v: Vec<f64>| total_mass(&Field::density(g.clone(), v, 0.0).unwrap()).unwrap();
            let lhs = m(combo);
            let rhs = a * m(f1) + b * m(f2);
            proptest::prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
        }
    }
}
