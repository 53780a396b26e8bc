use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::rows_serde;
use crate::plant::Vec2;

/// Ellipsoidal obstacle `{p : (p - c)^T Sigma^{-1} (p - c) <= 1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub center: Vec2,
    /// Shape matrix `Sigma`, symmetric positive definite.
    pub shape: [[f64; 2]; 2],
}

impl Obstacle {
    /// Disc of the given radius.
    pub fn disc(center: Vec2, radius: f64) -> Self {
        let r2 = radius * radius;
        Self {
            center,
            shape: [[r2, 0.0], [0.0, r2]],
        }
    }

    fn inverse_shape(&self) -> Result<[[f64; 2]; 2]> {
        let [[a, b], [c, d]] = self.shape;
        let det = a * d - b * c;
        if (b - c).abs() > 1e-12 * (a.abs() + d.abs()) || !(a > 0.0 && det > 0.0) {
            return Err(Error::Config(format!(
                "obstacle shape {:?} is not symmetric positive definite",
                self.shape
            )));
        }
        Ok([[d / det, -b / det], [-c / det, a / det]])
    }
}

/// Desired distance between two agents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FormationEdge {
    pub a: usize,
    pub b: usize,
    pub distance: f64,
}

/// Stage cost `[x; u]^T Q [x; u]` plus collision, obstacle and formation penalties.
///
/// Agent `i`'s absolute position is `x[stride * i .. stride * i + 2] + targets[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    #[serde(with = "rows_serde")]
    pub q: DMatrix<f64>,
    #[serde(default)]
    pub targets: Vec<Vec2>,
    #[serde(default = "default_stride")]
    pub position_stride: usize,
    #[serde(default)]
    pub collision_distance: f64,
    #[serde(default)]
    pub collision_weight: f64,
    #[serde(default)]
    pub obstacles: Vec<Obstacle>,
    #[serde(default)]
    pub obstacle_weight: f64,
    #[serde(default)]
    pub formation: Vec<FormationEdge>,
    #[serde(default)]
    pub formation_weight: f64,
    /// Keeps the collision barrier finite when two agents coincide.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_stride() -> usize {
    4
}

fn default_epsilon() -> f64 {
    1e-3
}

/// Individual terms of one stage cost.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTerms {
    pub trajectory: f64,
    pub collision: f64,
    pub obstacle: f64,
    pub formation: f64,
}

impl StageTerms {
    pub fn total(&self) -> f64 {
        self.trajectory + self.collision + self.obstacle + self.formation
    }
}

/// Validated [`LossConfig`] with precomputed obstacle inverses.
#[derive(Debug, Clone)]
pub struct StageLoss {
    pub cfg: LossConfig,
    inv_shapes: Vec<[[f64; 2]; 2]>,
}

impl LossConfig {
    /// Only the quadratic term.
    pub fn quadratic(q: DMatrix<f64>) -> Self {
        Self {
            q,
            targets: Vec::new(),
            position_stride: default_stride(),
            collision_distance: 0.0,
            collision_weight: 0.0,
            obstacles: Vec::new(),
            obstacle_weight: 0.0,
            formation: Vec::new(),
            formation_weight: 0.0,
            epsilon: default_epsilon(),
        }
    }

    pub fn compile(self, n: usize, m: usize) -> Result<StageLoss> {
        if self.q.shape() != (n + m, n + m) {
            return Err(Error::Config(format!(
                "Q must be {0}x{0}, got {1:?}",
                n + m,
                self.q.shape()
            )));
        }
        let sym = (&self.q - self.q.transpose()).amax();
        if sym > 1e-12 * self.q.amax().max(1.0) {
            return Err(Error::Config("Q must be symmetric".into()));
        }
        let min_eig = SymmetricEigen::new(self.q.clone())
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if min_eig < -1e-12 * self.q.amax().max(1.0) {
            return Err(Error::Config(format!("Q must be positive semidefinite (min eigenvalue {min_eig:e})")));
        }
        let spatial = self.collision_weight != 0.0
            || self.obstacle_weight != 0.0
            || self.formation_weight != 0.0;
        if spatial {
            let agents = self.targets.len();
            if agents * self.position_stride > n || self.position_stride < 2 {
                return Err(Error::Config(format!(
                    "{agents} targets with stride {} do not fit a state of size {n}",
                    self.position_stride
                )));
            }
            for e in &self.formation {
                if e.a >= agents || e.b >= agents || e.a == e.b {
                    return Err(Error::Config(format!("bad formation edge ({}, {})", e.a, e.b)));
                }
            }
        }
        for (name, w) in [
            ("collision_weight", self.collision_weight),
            ("obstacle_weight", self.obstacle_weight),
            ("formation_weight", self.formation_weight),
            ("collision_distance", self.collision_distance),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Config(format!("{name} must be nonnegative")));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        let inv_shapes = self.obstacles.iter().map(Obstacle::inverse_shape).collect::<Result<_>>()?;
        Ok(StageLoss {
            cfg: self,
            inv_shapes,
        })
    }
}

impl StageLoss {
    fn position(&self, x: &DVector<f64>, i: usize) -> Vec2 {
        let k = self.cfg.position_stride * i;
        let t = self.cfg.targets[i];
        [x[k] + t[0], x[k + 1] + t[1]]
    }

    /// Stage cost split into its terms.
    pub fn terms(&self, x: &DVector<f64>, u: &DVector<f64>) -> StageTerms {
        self.eval(x, u, None)
    }

    pub fn value(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        self.terms(x, u).total()
    }

    /// Value together with the gradients with respect to `x` and `u`.
    pub fn value_and_grad(&self, x: &DVector<f64>, u: &DVector<f64>) -> (f64, DVector<f64>, DVector<f64>) {
        let mut gx = DVector::zeros(x.len());
        let mut gu = DVector::zeros(u.len());
        let terms = self.eval(x, u, Some((&mut gx, &mut gu)));
        (terms.total(), gx, gu)
    }

    fn eval(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        mut grad: Option<(&mut DVector<f64>, &mut DVector<f64>)>,
    ) -> StageTerms {
        let cfg = &self.cfg;
        let (n, m) = (x.len(), u.len());
        let mut xu = DVector::zeros(n + m);
        xu.rows_mut(0, n).copy_from(x);
        xu.rows_mut(n, m).copy_from(u);
        let qz = &cfg.q * &xu;
        let mut terms = StageTerms {
            trajectory: xu.dot(&qz),
            ..Default::default()
        };
        if let Some((gx, gu)) = grad.as_mut() {
            let g = &qz + cfg.q.tr_mul(&xu);
            gx.copy_from(&g.rows(0, n));
            gu.copy_from(&g.rows(n, m));
        }
        let agents = cfg.targets.len();
        let stride = cfg.position_stride;
        let add_pos_grad = |grad: &mut Option<(&mut DVector<f64>, &mut DVector<f64>)>, i: usize, g: Vec2| {
            if let Some((gx, _)) = grad.as_mut() {
                gx[stride * i] += g[0];
                gx[stride * i + 1] += g[1];
            }
        };

        if cfg.collision_weight > 0.0 && cfg.collision_distance > 0.0 {
            for i in 0..agents {
                for j in (i + 1)..agents {
                    let (pi, pj) = (self.position(x, i), self.position(x, j));
                    let d = [pi[0] - pj[0], pi[1] - pj[1]];
                    let dist = d[0].hypot(d[1]);
                    let h = cfg.collision_distance - dist;
                    if h <= 0.0 {
                        continue;
                    }
                    let den = dist + cfg.epsilon;
                    terms.collision += cfg.collision_weight * h * h / den;
                    if dist > 0.0 {
                        let dl = cfg.collision_weight * (-2.0 * h / den - h * h / (den * den));
                        let g = [dl * d[0] / dist, dl * d[1] / dist];
                        add_pos_grad(&mut grad, i, g);
                        add_pos_grad(&mut grad, j, [-g[0], -g[1]]);
                    }
                }
            }
        }

        if cfg.obstacle_weight > 0.0 {
            for (o, s) in cfg.obstacles.iter().zip(&self.inv_shapes) {
                for i in 0..agents {
                    let p = self.position(x, i);
                    let d = [p[0] - o.center[0], p[1] - o.center[1]];
                    let sd = [s[0][0] * d[0] + s[0][1] * d[1], s[1][0] * d[0] + s[1][1] * d[1]];
                    let g = 1.0 - (d[0] * sd[0] + d[1] * sd[1]);
                    if g <= 0.0 {
                        continue;
                    }
                    terms.obstacle += cfg.obstacle_weight * g * g;
                    let c = -4.0 * cfg.obstacle_weight * g;
                    add_pos_grad(&mut grad, i, [c * sd[0], c * sd[1]]);
                }
            }
        }

        if cfg.formation_weight > 0.0 {
            for e in &cfg.formation {
                let (pa, pb) = (self.position(x, e.a), self.position(x, e.b));
                let d = [pa[0] - pb[0], pa[1] - pb[1]];
                let dist = d[0].hypot(d[1]);
                let r = dist - e.distance;
                terms.formation += cfg.formation_weight * r * r;
                if dist > 0.0 {
                    let c = 2.0 * cfg.formation_weight * r / dist;
                    add_pos_grad(&mut grad, e.a, [c * d[0], c * d[1]]);
                    add_pos_grad(&mut grad, e.b, [-c * d[0], -c * d[1]]);
                }
            }
        }
        terms
    }

    /// Smallest pairwise distance between agents at state `x`.
    pub fn min_distance(&self, x: &DVector<f64>) -> f64 {
        let agents = self.cfg.targets.len();
        let mut best = f64::INFINITY;
        for i in 0..agents {
            for j in (i + 1)..agents {
                let (pi, pj) = (self.position(x, i), self.position(x, j));
                best = best.min((pi[0] - pj[0]).hypot(pi[1] - pj[1]));
            }
        }
        best
    }
}
