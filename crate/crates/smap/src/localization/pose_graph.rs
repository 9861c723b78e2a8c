use crate::geom::linalg::cholesky_solve;
use crate::RigidTransform;

/// Where a factor came from; odometry chains and loop closures carry
/// different information weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FactorKind {
    Odometry,
    Loop,
}

/// Relative-pose constraint between two trajectory nodes. The residual is
/// the SE(3) log of the pose error `measured^-1 * (Xi^-1 * Xj)`, weighted
/// per block.
#[derive(Debug, Clone)]
pub struct BetweenFactor {
    pub kind: FactorKind,
    /// (robot, pose index) of the source node.
    pub from: (usize, usize),
    /// (robot, pose index) of the target node.
    pub to: (usize, usize),
    pub measured: RigidTransform,
    /// Information weight on the rotation block (1/sigma^2).
    pub rot_weight: f64,
    /// Information weight on the translation block (1/sigma^2).
    pub trans_weight: f64,
}

/// Per-robot pose chains plus odometry and loop factors, optimized in batch
/// by Levenberg-Marquardt.
#[derive(Debug, Clone, Default)]
pub struct PoseGraph {
    pub trajectories: Vec<Vec<RigidTransform>>,
    pub factors: Vec<BetweenFactor>,
}

#[derive(Debug, Clone)]
pub struct OptimizeReport {
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    /// Cost after every accepted step (starts with the initial cost). Never
    /// increasing.
    pub accepted_costs: Vec<f64>,
}

impl PoseGraph {
    pub fn new(trajectories: Vec<Vec<RigidTransform>>) -> Self {
        Self { trajectories, factors: Vec::new() }
    }

    /// Appends consecutive odometry factors along one robot's chain from its
    /// measured relative motions.
    pub fn add_odometry_chain(
        &mut self,
        robot: usize,
        relative_motions: &[RigidTransform],
        rot_weight: f64,
        trans_weight: f64,
    ) {
        for (i, rel) in relative_motions.iter().enumerate() {
            self.factors.push(BetweenFactor {
                kind: FactorKind::Odometry,
                from: (robot, i),
                to: (robot, i + 1),
                measured: *rel,
                rot_weight,
                trans_weight,
            });
        }
    }

    fn residual(&self, f: &BetweenFactor) -> [f64; 6] {
        let xi = &self.trajectories[f.from.0][f.from.1];
        let xj = &self.trajectories[f.to.0][f.to.1];
        let err = f.measured.inverse().compose(&xi.inverse().compose(xj));
        let mut r = err.se3_log();
        let wr = f.rot_weight.sqrt();
        let wt = f.trans_weight.sqrt();
        for v in r.iter_mut().take(3) {
            *v *= wr;
        }
        for v in r.iter_mut().skip(3) {
            *v *= wt;
        }
        r
    }

    pub fn total_cost(&self) -> f64 {
        self.factors
            .iter()
            .map(|f| self.residual(f).iter().map(|v| v * v).sum::<f64>())
            .sum()
    }

    /// Batch Levenberg-Marquardt. The first pose of robot 0 stays fixed as
    /// the gauge anchor. Deterministic for fixed input; accepted steps never
    /// increase the cost; converges on relative cost change < 1e-9 or 100
    /// iterations.
    pub fn optimize(&mut self) -> OptimizeReport {
        let node_count: usize = self.trajectories.iter().map(|t| t.len()).sum();
        let mut var_of_node: Vec<Vec<Option<usize>>> = Vec::new();
        let mut next = 0usize;
        for (r, traj) in self.trajectories.iter().enumerate() {
            let mut row = Vec::with_capacity(traj.len());
            for i in 0..traj.len() {
                if r == 0 && i == 0 {
                    row.push(None); // anchor
                } else {
                    row.push(Some(next));
                    next += 1;
                }
            }
            var_of_node.push(row);
        }
        let dim = next * 6;
        let initial_cost = self.total_cost();
        let mut report = OptimizeReport {
            initial_cost,
            final_cost: initial_cost,
            iterations: 0,
            accepted_costs: vec![initial_cost],
        };
        if dim == 0 || self.factors.is_empty() || node_count < 2 {
            return report;
        }

        let mut lambda = 1e-4;
        let mut cost = initial_cost;
        for iter in 0..100 {
            report.iterations = iter + 1;
            // Assemble normal equations from numeric factor Jacobians.
            let mut h = vec![0.0f64; dim * dim];
            let mut g = vec![0.0f64; dim];
            let delta = 1e-6;
            for fi in 0..self.factors.len() {
                let f = self.factors[fi].clone();
                let r0 = self.residual(&f);
                let nodes = [f.from, f.to];
                // 6x12 Jacobian: columns for each perturbed node variable.
                let mut jac = [[0.0f64; 12]; 6];
                for (slot, node) in nodes.iter().enumerate() {
                    if var_of_node[node.0][node.1].is_none() {
                        continue;
                    }
                    for axis in 0..6 {
                        let mut xi = [0.0f64; 6];
                        xi[axis] = delta;
                        let orig = self.trajectories[node.0][node.1];
                        self.trajectories[node.0][node.1] = orig.retract(&xi);
                        let rp = self.residual(&f);
                        xi[axis] = -delta;
                        self.trajectories[node.0][node.1] = orig.retract(&xi);
                        let rm = self.residual(&f);
                        self.trajectories[node.0][node.1] = orig;
                        for k in 0..6 {
                            jac[k][slot * 6 + axis] = (rp[k] - rm[k]) / (2.0 * delta);
                        }
                    }
                }
                // Scatter J^T J and J^T r into the global system.
                for (si, ni) in nodes.iter().enumerate() {
                    let Some(vi) = var_of_node[ni.0][ni.1] else { continue };
                    for (sj, nj) in nodes.iter().enumerate() {
                        let Some(vj) = var_of_node[nj.0][nj.1] else { continue };
                        for a in 0..6 {
                            for b in 0..6 {
                                let mut acc = 0.0;
                                for k in 0..6 {
                                    acc += jac[k][si * 6 + a] * jac[k][sj * 6 + b];
                                }
                                h[(vi * 6 + a) * dim + vj * 6 + b] += acc;
                            }
                        }
                    }
                    for a in 0..6 {
                        let mut acc = 0.0;
                        for k in 0..6 {
                            acc += jac[k][si * 6 + a] * r0[k];
                        }
                        g[vi * 6 + a] += acc;
                    }
                }
            }

            // Damped solve with retry on rejected steps.
            let mut accepted = false;
            for _attempt in 0..10 {
                let mut a = h.clone();
                for d in 0..dim {
                    a[d * dim + d] += lambda * (1.0 + h[d * dim + d]);
                }
                let mut rhs: Vec<f64> = g.iter().map(|v| -v).collect();
                if cholesky_solve(&mut a, &mut rhs, dim).is_none() {
                    lambda *= 10.0;
                    continue;
                }
                let backup = self.trajectories.clone();
                for (r, traj) in var_of_node.iter().enumerate() {
                    for (i, var) in traj.iter().enumerate() {
                        if let Some(v) = var {
                            let mut xi = [0.0f64; 6];
                            xi.copy_from_slice(&rhs[v * 6..v * 6 + 6]);
                            self.trajectories[r][i] = self.trajectories[r][i].retract(&xi);
                        }
                    }
                }
                let new_cost = self.total_cost();
                if new_cost.is_finite() && new_cost <= cost {
                    cost = new_cost;
                    report.accepted_costs.push(cost);
                    lambda = (lambda / 3.0).max(1e-12);
                    accepted = true;
                    break;
                }
                self.trajectories = backup;
                lambda *= 10.0;
            }
            if !accepted {
                break;
            }
            let prev = report.accepted_costs[report.accepted_costs.len() - 2];
            if prev - cost < 1e-9 * prev.max(1e-30) {
                break;
            }
        }
        report.final_cost = cost;
        report
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Point3;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn consistent_chain_reaches_zero_cost() {
        // Ground-truth square path; odometry factors measured exactly.
        let poses = [
            RigidTransform::identity(),
            RigidTransform::from_yaw(0.0, Point3::new(1.0, 0.0, 0.0)),
            RigidTransform::from_yaw(std::f64::consts::FRAC_PI_2, Point3::new(1.0, 1.0, 0.0)),
        ];
        let rels: Vec<RigidTransform> =
            poses.windows(2).map(|w| w[0].inverse().compose(&w[1])).collect();
        let mut graph = PoseGraph::new(vec![poses.to_vec()]);
        graph.add_odometry_chain(0, &rels, 1.0, 1.0);
        // Consistent loop factor between first and last.
        graph.factors.push(BetweenFactor {
            kind: FactorKind::Loop,
            from: (0, 0),
            to: (0, 2),
            measured: poses[0].inverse().compose(&poses[2]),
            rot_weight: 1.0,
            trans_weight: 1.0,
        });
        let report = graph.optimize();
        assert!(report.final_cost < 1e-18, "cost {}", report.final_cost);
        for (got, want) in graph.trajectories[0].iter().zip(poses.iter()) {
            assert!(got.translation.dist(&want.translation) < 1e-9);
        }
    }

    #[test]
    fn single_node_graph_is_untouched() {
        let mut graph = PoseGraph::new(vec![vec![RigidTransform::from_yaw(
            0.3,
            Point3::new(1.0, 2.0, 3.0),
        )]]);
        let before = graph.trajectories.clone();
        let report = graph.optimize();
        assert_eq!(report.iterations, 0);
        assert_eq!(graph.trajectories[0][0], before[0][0]);
    }

    #[test]
    fn accepted_costs_never_increase() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // Noisy straight-line odometry with a loop closure back to start.
        let n = 20;
        let mut truth = vec![RigidTransform::identity()];
        for i in 1..n {
            truth.push(RigidTransform::from_yaw(
                0.0,
                Point3::new(i as f64, 0.0, 0.0),
            ));
        }
        let mut noisy_rels = Vec::new();
        for w in truth.windows(2) {
            let rel = w[0].inverse().compose(&w[1]);
            let noise = RigidTransform::se3_exp(&[
                0.0,
                0.0,
                rng.gen_range(-0.02..0.02),
                rng.gen_range(-0.05..0.05),
                rng.gen_range(-0.05..0.05),
                0.0,
            ]);
            noisy_rels.push(rel.compose(&noise));
        }
        let mut est = vec![RigidTransform::identity()];
        for rel in &noisy_rels {
            let last = *est.last().unwrap();
            est.push(last.compose(rel));
        }
        let mut graph = PoseGraph::new(vec![est]);
        graph.add_odometry_chain(0, &noisy_rels, 100.0, 100.0);
        graph.factors.push(BetweenFactor {
            kind: FactorKind::Loop,
            from: (0, 0),
            to: (0, n - 1),
            measured: truth[0].inverse().compose(&truth[n - 1]),
            rot_weight: 1000.0,
            trans_weight: 1000.0,
        });
        let report = graph.optimize();
        for w in report.accepted_costs.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        assert!(report.final_cost < report.initial_cost);
    }

    #[test]
    fn optimization_is_deterministic() {
        let build = || {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let mut est = vec![RigidTransform::identity()];
            let mut rels = Vec::new();
            for _ in 0..10 {
                let rel = RigidTransform::se3_exp(&[
                    0.0,
                    0.0,
                    rng.gen_range(-0.1..0.1),
                    1.0,
                    rng.gen_range(-0.1..0.1),
                    0.0,
                ]);
                let last = *est.last().unwrap();
                est.push(last.compose(&rel));
                rels.push(rel);
            }
            let mut graph = PoseGraph::new(vec![est]);
            graph.add_odometry_chain(0, &rels, 10.0, 10.0);
            graph.factors.push(BetweenFactor {
                kind: FactorKind::Loop,
                from: (0, 0),
                to: (0, 10),
                measured: RigidTransform::from_yaw(0.0, Point3::new(10.0, 0.0, 0.0)),
                rot_weight: 100.0,
                trans_weight: 100.0,
            });
            graph.optimize();
            graph
        };
        let a = build();
        let b = build();
        for (ta, tb) in a.trajectories[0].iter().zip(b.trajectories[0].iter()) {
            assert_eq!(ta.translation.x.to_bits(), tb.translation.x.to_bits());
            assert_eq!(ta.translation.y.to_bits(), tb.translation.y.to_bits());
        }
    }
}
