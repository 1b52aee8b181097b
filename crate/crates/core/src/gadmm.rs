//! Server-less chain-topology group ADMM: devices alternate between head
//! and tail primal updates, broadcast only to chain neighbors, and update
//! edge dual variables locally. Includes the decentralized gradient descent
//! baseline with identical ledger accounting.
//!
//! Edges are oriented left-to-right along the chain. The augmented
//! Lagrangian of device n carries `+lambda_e` on edges where n is the left
//! endpoint and `-lambda_e` where it is the right endpoint; the dual step is
//! `lambda_e += rho·(theta_left - theta_right)`.

use crate::error::{Error, Result};
use crate::linalg::{self, DenseMatrix};
use crate::metrics::MetricsRow;
use crate::model::{evaluate, loss_and_grad, Batch, ModelSpec, ParamVector};
use crate::netsim::{Direction, LinkSpec, Message, NodeId, PayloadLedger, Wire};
use crate::runner::RunContext;
use serde::{Deserialize, Serialize};

/// Chain order with alternating head/tail roles, heads first.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainAssignment {
    pub order: Vec<usize>,
    pub heads: Vec<usize>,
    pub tails: Vec<usize>,
}

/// Devices in id order along the chain; positions 0, 2, 4, … are heads.
pub fn assign_groups(num_devices: usize) -> Result<ChainAssignment> {
    if num_devices < 2 {
        return Err(Error::InvalidArgument(
            "chain needs at least two devices".into(),
        ));
    }
    let order: Vec<usize> = (0..num_devices).collect();
    let heads = order.iter().copied().step_by(2).collect();
    let tails = order.iter().copied().skip(1).step_by(2).collect();
    Ok(ChainAssignment {
        order,
        heads,
        tails,
    })
}

/// One device's local objective.
#[derive(Debug, Clone)]
pub enum Objective {
    /// f(theta) = ½·thetaᵀ·A·theta - bᵀ·theta + c, with A symmetric PSD.
    Quadratic { a: DenseMatrix, b: Vec<f64>, c: f64 },
    /// Mean cross-entropy of an LR model on a local batch; theta is the
    /// flat parameter vector. `smoothness` bounds the CE Hessian and sets
    /// the inner gradient step size.
    Logistic {
        data: Batch,
        spec: ModelSpec,
        smoothness: f64,
    },
}

impl Objective {
    /// Least-squares device objective ½||X·theta - y||² from row data.
    pub fn least_squares(features: &[f64], n: usize, dim: usize, y: &[f64]) -> Self {
        let a = DenseMatrix::gram(features, n, dim);
        let mut b = vec![0.0; dim];
        for i in 0..n {
            let row = &features[i * dim..(i + 1) * dim];
            linalg::axpy(&mut b, y[i], row);
        }
        let c = 0.5 * linalg::dot(y, y);
        Objective::Quadratic { a, b, c }
    }

    pub fn logistic(data: Batch, spec: ModelSpec) -> Self {
        // CE Hessian bound: ½·lambda_max of the bias-augmented gram, per
        // sample mean.
        let n = data.len();
        let d = data.dim;
        let mut augmented = Vec::with_capacity(n * (d + 1));
        for i in 0..n {
            augmented.extend_from_slice(data.row(i));
            augmented.push(1.0);
        }
        let gram = DenseMatrix::gram(&augmented, n, d + 1);
        let lam = linalg::power_iteration_max_eigenvalue(&gram, 1e-8, 1000);
        let smoothness = 0.5 * lam / n as f64;
        Objective::Logistic {
            data,
            spec,
            smoothness,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Objective::Quadratic { b, .. } => b.len(),
            Objective::Logistic { spec, .. } => spec.param_count(),
        }
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        match self {
            Objective::Quadratic { a, b, c } => {
                0.5 * linalg::dot(theta, &a.matvec(theta)) - linalg::dot(b, theta) + c
            }
            Objective::Logistic { data, spec, .. } => {
                let params = ParamVector {
                    spec: *spec,
                    values: theta.to_vec(),
                };
                loss_and_grad(&params, data, None, 0.0, 1.0)
                    .map(|(loss, _)| loss)
                    .unwrap_or(f64::INFINITY)
            }
        }
    }

    pub fn grad(&self, theta: &[f64]) -> Vec<f64> {
        match self {
            Objective::Quadratic { a, b, .. } => {
                let mut g = a.matvec(theta);
                for (gi, bi) in g.iter_mut().zip(b) {
                    *gi -= bi;
                }
                g
            }
            Objective::Logistic { data, spec, .. } => {
                let params = ParamVector {
                    spec: *spec,
                    values: theta.to_vec(),
                };
                loss_and_grad(&params, data, None, 0.0, 1.0)
                    .map(|(_, g)| g.values)
                    .expect("finite logistic gradient")
            }
        }
    }

    fn smoothness_bound(&self) -> f64 {
        match self {
            Objective::Quadratic { a, .. } => linalg::power_iteration_max_eigenvalue(a, 1e-8, 1000),
            Objective::Logistic { smoothness, .. } => *smoothness,
        }
    }
}

/// One neighbor's freshest primal value and the dual on the shared edge.
pub struct NeighborView<'a> {
    pub theta: &'a [f64],
    pub lambda: &'a [f64],
    /// True when the updating device is the left endpoint of this edge.
    pub device_is_left: bool,
}

/// Minimize the local augmented Lagrangian given the neighbors' freshest
/// primal values. Quadratic objectives solve in closed form; logistic
/// objectives take `inner_steps` gradient steps at `1/beta_hat` step size.
pub fn primal_update(
    objective: &Objective,
    current: &[f64],
    neighbors: &[NeighborView<'_>],
    rho: f64,
    inner_steps: usize,
) -> Result<Vec<f64>> {
    let dim = objective.dim();
    let deg = neighbors.len() as f64;
    match objective {
        Objective::Quadratic { a, b, .. } => {
            // (A + rho·deg·I) theta = b - sum(±lambda) + rho·sum(theta_m)
            let mut lhs = a.clone();
            for i in 0..dim {
                lhs.data[i * dim + i] += rho * deg;
            }
            let mut rhs = b.clone();
            for nb in neighbors {
                let sign = if nb.device_is_left { -1.0 } else { 1.0 };
                linalg::axpy(&mut rhs, sign, nb.lambda);
                linalg::axpy(&mut rhs, rho, nb.theta);
            }
            linalg::cholesky_solve(&lhs, &rhs)
        }
        Objective::Logistic { .. } => {
            let lr = 1.0 / (objective.smoothness_bound() + rho * deg).max(1e-12);
            let mut theta = current.to_vec();
            for _ in 0..inner_steps {
                let mut g = objective.grad(&theta);
                for nb in neighbors {
                    let sign = if nb.device_is_left { 1.0 } else { -1.0 };
                    linalg::axpy(&mut g, sign, nb.lambda);
                    for ((gi, ti), mi) in g.iter_mut().zip(&theta).zip(nb.theta) {
                        *gi += rho * (ti - mi);
                    }
                }
                linalg::axpy(&mut theta, -lr, &g);
            }
            Ok(theta)
        }
    }
}

#[derive(Debug, Clone)]
pub struct GadmmState {
    pub thetas: Vec<Vec<f64>>,
    /// One dual vector per chain edge (n, n+1).
    pub lambdas: Vec<Vec<f64>>,
    pub rho: f64,
}

/// Local dual ascent on every edge: `lambda += rho·(theta_left - theta_right)`.
pub fn dual_update(state: &mut GadmmState) {
    for e in 0..state.lambdas.len() {
        let (left, right) = (e, e + 1);
        for i in 0..state.lambdas[e].len() {
            state.lambdas[e][i] += state.rho * (state.thetas[left][i] - state.thetas[right][i]);
        }
    }
}

fn max_edge_residual(state: &GadmmState) -> f64 {
    let mut worst: f64 = 0.0;
    for e in 0..state.lambdas.len() {
        for i in 0..state.thetas[e].len() {
            worst = worst.max((state.thetas[e][i] - state.thetas[e + 1][i]).abs());
        }
    }
    worst
}

#[derive(Debug, Clone)]
pub struct GadmmRound {
    pub round: u64,
    pub max_residual: f64,
    /// Total objective evaluated at the device-average iterate.
    pub objective: f64,
    /// The device-average iterate itself.
    pub mean_theta: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct GadmmRun {
    pub state: GadmmState,
    pub history: Vec<GadmmRound>,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct GadmmOptions {
    pub rho: f64,
    pub max_rounds: u64,
    pub tol: f64,
    pub inner_steps: usize,
}

impl Default for GadmmOptions {
    fn default() -> Self {
        Self {
            rho: 1.0,
            max_rounds: 2000,
            tol: 1e-7,
            inner_steps: 20,
        }
    }
}

/// Optional ledger hookup for broadcast charging.
pub struct ChainCharge<'a> {
    pub ledger: &'a mut PayloadLedger,
    pub link: &'a LinkSpec,
    pub wire: &'a Wire,
}

fn consensus_objective(objectives: &[Objective], thetas: &[Vec<f64>]) -> (Vec<f64>, f64) {
    let dim = thetas[0].len();
    let mut mean = vec![0.0; dim];
    for t in thetas {
        linalg::axpy(&mut mean, 1.0 / thetas.len() as f64, t);
    }
    let value = objectives.iter().map(|o| o.value(&mean)).sum();
    (mean, value)
}

/// Rounds of {heads update → broadcast, tails update → broadcast, duals}
/// until the max edge residual drops to `tol`. Each updating device is one
/// broadcast: ceil(N/2) ledger entries for the head half-round, floor(N/2)
/// for the tail half-round.
pub fn run_gadmm(
    objectives: &[Objective],
    opts: &GadmmOptions,
    mut charge: Option<ChainCharge<'_>>,
) -> Result<GadmmRun> {
    let n = objectives.len();
    let assignment = assign_groups(n)?;
    let dim = objectives[0].dim();
    if objectives.iter().any(|o| o.dim() != dim) {
        return Err(Error::DimMismatch {
            context: "gadmm objectives",
            expected: dim,
            actual: objectives
                .iter()
                .map(|o| o.dim())
                .find(|d| *d != dim)
                .unwrap(),
        });
    }
    let mut state = GadmmState {
        thetas: vec![vec![0.0; dim]; n],
        lambdas: vec![vec![0.0; dim]; n - 1],
        rho: opts.rho,
    };
    let mut history = Vec::new();
    let mut converged = false;

    for round in 1..=opts.max_rounds {
        if let Some(c) = charge.as_mut() {
            c.ledger.set_round(round);
        }
        for phase in 0..2 {
            let group = if phase == 0 {
                &assignment.heads
            } else {
                &assignment.tails
            };
            let mut updates = Vec::with_capacity(group.len());
            for &dev in group {
                let mut neighbors = Vec::new();
                if dev > 0 {
                    neighbors.push(NeighborView {
                        theta: &state.thetas[dev - 1],
                        lambda: &state.lambdas[dev - 1],
                        device_is_left: false,
                    });
                }
                if dev + 1 < n {
                    neighbors.push(NeighborView {
                        theta: &state.thetas[dev + 1],
                        lambda: &state.lambdas[dev],
                        device_is_left: true,
                    });
                }
                let theta = primal_update(
                    &objectives[dev],
                    &state.thetas[dev],
                    &neighbors,
                    opts.rho,
                    opts.inner_steps,
                )?;
                updates.push((dev, theta));
            }
            for (dev, theta) in updates {
                state.thetas[dev] = theta;
                if let Some(c) = charge.as_mut() {
                    c.ledger.charge(
                        c.link,
                        c.wire,
                        &Message::DenseParams { params: dim },
                        Direction::Uplink,
                        NodeId::Device(dev),
                        NodeId::Broadcast,
                    );
                }
            }
        }
        dual_update(&mut state);
        let residual = max_edge_residual(&state);
        let (mean_theta, objective) = consensus_objective(objectives, &state.thetas);
        history.push(GadmmRound {
            round,
            max_residual: residual,
            objective,
            mean_theta,
        });
        if residual <= opts.tol {
            converged = true;
            break;
        }
    }
    Ok(GadmmRun {
        state,
        history,
        converged,
    })
}

/// Decentralized gradient descent baseline: every device averages its own
/// and its neighbors' parameters, then takes one local gradient step. Every
/// device broadcasts each round.
pub fn run_decentralized_gd(
    objectives: &[Objective],
    lr: Option<f64>,
    max_rounds: u64,
    mut charge: Option<ChainCharge<'_>>,
) -> Result<GadmmRun> {
    let n = objectives.len();
    if n < 2 {
        return Err(Error::InvalidArgument(
            "chain needs at least two devices".into(),
        ));
    }
    let dim = objectives[0].dim();
    let step = lr.unwrap_or_else(|| {
        let worst = objectives
            .iter()
            .map(|o| o.smoothness_bound())
            .fold(0.0, f64::max);
        1.0 / worst.max(1e-12)
    });
    let mut thetas = vec![vec![0.0; dim]; n];
    let mut history = Vec::new();
    for round in 1..=max_rounds {
        if let Some(c) = charge.as_mut() {
            c.ledger.set_round(round);
            for dev in 0..n {
                c.ledger.charge(
                    c.link,
                    c.wire,
                    &Message::DenseParams { params: dim },
                    Direction::Uplink,
                    NodeId::Device(dev),
                    NodeId::Broadcast,
                );
            }
        }
        let mut next = Vec::with_capacity(n);
        for dev in 0..n {
            let mut mixed = thetas[dev].clone();
            let mut count = 1.0;
            if dev > 0 {
                linalg::axpy(&mut mixed, 1.0, &thetas[dev - 1]);
                count += 1.0;
            }
            if dev + 1 < n {
                linalg::axpy(&mut mixed, 1.0, &thetas[dev + 1]);
                count += 1.0;
            }
            mixed.iter_mut().for_each(|v| *v /= count);
            let g = objectives[dev].grad(&mixed);
            linalg::axpy(&mut mixed, -step, &g);
            next.push(mixed);
        }
        thetas = next;
        let state = GadmmState {
            thetas: thetas.clone(),
            lambdas: vec![vec![0.0; dim]; n - 1],
            rho: 0.0,
        };
        let (mean_theta, objective) = consensus_objective(objectives, &thetas);
        history.push(GadmmRound {
            round,
            max_residual: max_edge_residual(&state),
            objective,
            mean_theta,
        });
    }
    Ok(GadmmRun {
        state: GadmmState {
            thetas,
            lambdas: vec![vec![0.0; dim]; n - 1],
            rho: 0.0,
        },
        history,
        converged: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChainVariant {
    Gadmm,
    Dgd,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GadmmProtocolParams {
    pub rho: f64,
    pub max_rounds: u64,
    pub tol: f64,
    pub inner_steps: usize,
    pub variant: ChainVariant,
}

impl Default for GadmmProtocolParams {
    fn default() -> Self {
        Self {
            rho: 1.0,
            max_rounds: 200,
            tol: 1e-6,
            inner_steps: 20,
            variant: ChainVariant::Gadmm,
        }
    }
}

/// Chain consensus training of an LR model on the context's devices,
/// reported in the common metrics format.
pub fn run_gadmm_protocol(
    ctx: &mut RunContext,
    params: &GadmmProtocolParams,
) -> Result<Vec<MetricsRow>> {
    let objectives: Vec<Objective> = ctx
        .device_batches
        .iter()
        .map(|b| Objective::logistic(b.clone(), ctx.spec))
        .collect();
    let opts = GadmmOptions {
        rho: params.rho,
        max_rounds: params.max_rounds,
        tol: params.tol,
        inner_steps: params.inner_steps,
    };
    let run = {
        let charge = ChainCharge {
            ledger: &mut ctx.ledger,
            link: &ctx.link,
            wire: &ctx.wire,
        };
        match params.variant {
            ChainVariant::Gadmm => run_gadmm(&objectives, &opts, Some(charge))?,
            ChainVariant::Dgd => {
                run_decentralized_gd(&objectives, None, params.max_rounds, Some(charge))?
            }
        }
    };
    // Reconstruct per-round cumulative traffic: every full round is exactly
    // N broadcasts of a dim-sized parameter vector on the uplink.
    let n = ctx.devices.len() as u64;
    let bytes_per_broadcast = ctx.wire.payload_bytes(&Message::DenseParams {
        params: ctx.spec.param_count(),
    });
    let time_per_broadcast = bytes_per_broadcast as f64 * 8.0 / ctx.link.uplink_bits_per_round;
    let mut rows = Vec::new();
    for h in &run.history {
        let consensus = ParamVector {
            spec: ctx.spec,
            values: h.mean_theta.clone(),
        };
        let acc = evaluate(&consensus, &ctx.test)?;
        rows.push(MetricsRow {
            round: h.round,
            tau: None,
            cum_uplink_bits: h.round * n * bytes_per_broadcast * 8,
            cum_downlink_bits: 0,
            cum_cost: 0.0,
            train_loss: h.objective,
            test_acc: acc,
            sim_time: h.round as f64 * n as f64 * time_per_broadcast,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedSpace;

    #[test]
    fn grouping_alternates_and_covers() {
        let a = assign_groups(4).unwrap();
        assert_eq!(a.heads, vec![0, 2]);
        assert_eq!(a.tails, vec![1, 3]);
        let a = assign_groups(5).unwrap();
        assert_eq!(a.heads, vec![0, 2, 4]);
        assert_eq!(a.tails, vec![1, 3]);
        // every chain edge joins one head and one tail
        for n in 2..=9usize {
            let a = assign_groups(n).unwrap();
            for e in 0..n - 1 {
                let left_head = a.heads.contains(&e);
                let right_head = a.heads.contains(&(e + 1));
                assert!(left_head != right_head, "edge ({e},{}) same group", e + 1);
            }
        }
        assert!(assign_groups(1).is_err());
    }

    fn scalar_quadratic(target: f64) -> Objective {
        // f(x) = ½(x - target)²
        Objective::Quadratic {
            a: DenseMatrix::identity(1),
            b: vec![target],
            c: 0.5 * target * target,
        }
    }

    #[test]
    fn primal_update_pure_proximity_copies_neighbor() {
        let zero = Objective::Quadratic {
            a: DenseMatrix::zeros(1, 1),
            b: vec![0.0],
            c: 0.0,
        };
        let neighbor = [2.5];
        let lambda = [0.0];
        let out = primal_update(
            &zero,
            &[0.0],
            &[NeighborView {
                theta: &neighbor,
                lambda: &lambda,
                device_is_left: true,
            }],
            1.0,
            0,
        )
        .unwrap();
        assert!((out[0] - 2.5).abs() < 1e-12);
    }

    #[test]
    fn primal_update_closed_form_scalar() {
        // f = ½(θ-b)², one neighbor m, λ=0: θ = (b + ρ·m)/(1 + ρ)
        let b = 3.0;
        let m = [1.0];
        let lambda = [0.0];
        for rho in [0.5, 1.0, 4.0] {
            let out = primal_update(
                &scalar_quadratic(b),
                &[0.0],
                &[NeighborView {
                    theta: &m,
                    lambda: &lambda,
                    device_is_left: true,
                }],
                rho,
                0,
            )
            .unwrap();
            assert!((out[0] - (b + rho * m[0]) / (1.0 + rho)).abs() < 1e-12);
        }
    }

    #[test]
    fn primal_update_matches_grid_minimizer() {
        // interior device with two neighbors and nonzero duals
        let obj = scalar_quadratic(-1.0);
        let left_theta = [0.6];
        let right_theta = [-0.4];
        let lambda_left = [0.3];
        let lambda_right = [-0.2];
        let rho = 1.7;
        let neighbors = [
            NeighborView {
                theta: &left_theta,
                lambda: &lambda_left,
                device_is_left: false,
            },
            NeighborView {
                theta: &right_theta,
                lambda: &lambda_right,
                device_is_left: true,
            },
        ];
        let out = primal_update(&obj, &[0.0], &neighbors, rho, 0).unwrap();

        // brute-force 1-D grid of the augmented Lagrangian
        let lagrangian = |t: f64| {
            obj.value(&[t]) + lambda_right[0] * t - lambda_left[0] * t
                + 0.5 * rho * ((t - left_theta[0]).powi(2) + (t - right_theta[0]).powi(2))
        };
        let mut best = f64::INFINITY;
        let mut best_t = 0.0;
        let mut t = -3.0;
        while t <= 3.0 {
            let v = lagrangian(t);
            if v < best {
                best = v;
                best_t = t;
            }
            t += 1e-5;
        }
        assert!((out[0] - best_t).abs() < 1e-4, "{} vs {}", out[0], best_t);
        assert!(lagrangian(out[0]) <= best + 1e-9);
    }

    #[test]
    fn dual_update_examples() {
        let mut state = GadmmState {
            thetas: vec![vec![1.0], vec![0.0]],
            lambdas: vec![vec![0.0]],
            rho: 2.0,
        };
        dual_update(&mut state);
        assert_eq!(state.lambdas[0], vec![2.0]);

        // consensus leaves duals unchanged
        let mut state = GadmmState {
            thetas: vec![vec![0.7], vec![0.7]],
            lambdas: vec![vec![0.4]],
            rho: 2.0,
        };
        dual_update(&mut state);
        assert_eq!(state.lambdas[0], vec![0.4]);
    }

    fn chain_instance(n: usize, dim: usize, seed: u64) -> (Vec<Objective>, Vec<f64>, f64) {
        // distributed least squares; returns objectives, the centralized
        // normal-equations solution, and the optimal objective value
        let space = SeedSpace::new(seed);
        let rows = 6;
        let mut all_features = Vec::new();
        let mut all_y = Vec::new();
        let mut objectives = Vec::new();
        for dev in 0..n {
            let mut stream = space.stream("ls", &[dev as u64]);
            let features: Vec<f64> = (0..rows * dim)
                .map(|_| crate::rng::standard_normal(&mut stream))
                .collect();
            let y: Vec<f64> = (0..rows)
                .map(|_| crate::rng::standard_normal(&mut stream))
                .collect();
            all_features.extend_from_slice(&features);
            all_y.extend_from_slice(&y);
            objectives.push(Objective::least_squares(&features, rows, dim, &y));
        }
        let a = DenseMatrix::gram(&all_features, n * rows, dim);
        let mut b = vec![0.0; dim];
        for i in 0..n * rows {
            let row = &all_features[i * dim..(i + 1) * dim];
            linalg::axpy(&mut b, all_y[i], row);
        }
        let solution = linalg::cholesky_solve(&a, &b).unwrap();
        let optimum: f64 = objectives.iter().map(|o| o.value(&solution)).sum();
        (objectives, solution, optimum)
    }

    #[test]
    fn gadmm_reaches_centralized_least_squares_optimum() {
        let (objectives, _, optimum) = chain_instance(6, 3, 40);
        let run = run_gadmm(&objectives, &GadmmOptions::default(), None).unwrap();
        assert!(run.converged, "did not converge");
        let last = run.history.last().unwrap();
        assert!(last.max_residual <= 1e-6);
        assert!(
            (last.objective - optimum).abs() <= 1e-6,
            "objective gap {}",
            (last.objective - optimum).abs()
        );
    }

    #[test]
    fn converged_duals_match_kkt_multipliers() {
        let (objectives, solution, _) = chain_instance(4, 2, 41);
        let opts = GadmmOptions {
            tol: 1e-10,
            max_rounds: 20000,
            ..Default::default()
        };
        let run = run_gadmm(&objectives, &opts, None).unwrap();
        assert!(run.converged);
        // KKT: grad f_n(θ*) + λ_{n,n+1} - λ_{n-1,n} = 0, solved forward
        let mut mu_prev = vec![0.0; 2];
        for (n, obj) in objectives.iter().enumerate().take(3) {
            let g = obj.grad(&solution);
            // mu_n = mu_{n-1} - grad f_n(θ*)
            let mu: Vec<f64> = mu_prev.iter().zip(&g).map(|(m, gi)| m - gi).collect();
            for (got, want) in run.state.lambdas[n].iter().zip(&mu) {
                assert!((got - want).abs() < 1e-5, "edge {n}: {got} vs {want}");
            }
            mu_prev = mu;
        }
    }

    #[test]
    fn two_devices_match_reference_two_block_admm() {
        let (objectives, _, _) = chain_instance(2, 2, 42);
        let opts = GadmmOptions {
            rho: 1.3,
            max_rounds: 50,
            tol: 0.0, // run all rounds
            inner_steps: 0,
        };
        let run = run_gadmm(&objectives, &opts, None).unwrap();

        // reference 2-block ADMM with the same sign conventions
        let dim = 2;
        let rho = 1.3;
        let (a1, b1) = match &objectives[0] {
            Objective::Quadratic { a, b, .. } => (a.clone(), b.clone()),
            _ => unreachable!(),
        };
        let (a2, b2) = match &objectives[1] {
            Objective::Quadratic { a, b, .. } => (a.clone(), b.clone()),
            _ => unreachable!(),
        };
        let mut x = vec![0.0; dim];
        let mut z = vec![0.0; dim];
        let mut lam = vec![0.0; dim];
        for _ in 0..50 {
            // x-update: (A1 + ρI) x = b1 - λ + ρ z
            let mut lhs = a1.clone();
            for i in 0..dim {
                lhs.data[i * dim + i] += rho;
            }
            let mut rhs = b1.clone();
            linalg::axpy(&mut rhs, -1.0, &lam);
            linalg::axpy(&mut rhs, rho, &z);
            x = linalg::cholesky_solve(&lhs, &rhs).unwrap();
            // z-update: (A2 + ρI) z = b2 + λ + ρ x
            let mut lhs = a2.clone();
            for i in 0..dim {
                lhs.data[i * dim + i] += rho;
            }
            let mut rhs = b2.clone();
            linalg::axpy(&mut rhs, 1.0, &lam);
            linalg::axpy(&mut rhs, rho, &x);
            z = linalg::cholesky_solve(&lhs, &rhs).unwrap();
            // λ += ρ (x - z)
            for i in 0..dim {
                lam[i] += rho * (x[i] - z[i]);
            }
        }
        for i in 0..dim {
            assert!((run.state.thetas[0][i] - x[i]).abs() < 1e-10);
            assert!((run.state.thetas[1][i] - z[i]).abs() < 1e-10);
            assert!((run.state.lambdas[0][i] - lam[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn broadcast_counts_are_half_of_devices() {
        let (objectives, _, _) = chain_instance(5, 2, 43);
        let mut ledger = PayloadLedger::new();
        let link = LinkSpec::default();
        let wire = Wire::default();
        let opts = GadmmOptions {
            max_rounds: 3,
            tol: 0.0,
            ..Default::default()
        };
        run_gadmm(
            &objectives,
            &opts,
            Some(ChainCharge {
                ledger: &mut ledger,
                link: &link,
                wire: &wire,
            }),
        )
        .unwrap();
        for round in 1..=3u64 {
            let entries: Vec<_> = ledger
                .entries()
                .iter()
                .filter(|e| e.round == round)
                .collect();
            assert_eq!(entries.len(), 5);
            // heads (3 of them) first, then tails (2)
            let srcs: Vec<String> = entries.iter().map(|e| e.src.to_string()).collect();
            assert_eq!(srcs, vec!["d0", "d2", "d4", "d1", "d3"]);
            assert!(entries.iter().all(|e| e.dst == NodeId::Broadcast));
        }
    }

    #[test]
    fn gadmm_converges_faster_than_decentralized_gd() {
        let (objectives, _, optimum) = chain_instance(6, 3, 44);
        let opts = GadmmOptions {
            max_rounds: 3000,
            tol: 0.0,
            ..Default::default()
        };
        let gadmm = run_gadmm(&objectives, &opts, None).unwrap();
        let dgd = run_decentralized_gd(&objectives, None, 3000, None).unwrap();
        let first_below = |hist: &[GadmmRound]| {
            hist.iter()
                .position(|h| h.objective - optimum <= 1e-3)
                .map(|p| p + 1)
        };
        let g_iters = first_below(&gadmm.history).expect("gadmm never reached 1e-3");
        let d_iters = first_below(&dgd.history).unwrap_or(usize::MAX);
        assert!(
            g_iters < d_iters,
            "gadmm {g_iters} rounds vs dgd {d_iters} rounds"
        );
    }

    #[test]
    fn logistic_primal_update_reduces_augmented_lagrangian() {
        let samples = crate::data::gen_blobs(2, 2, 20, 0.5, 7);
        let ds = crate::data::LocalDataset {
            device_id: 0,
            samples,
        };
        let spec = ModelSpec::lr(2, 2);
        let obj = Objective::logistic(ds.to_batch(2), spec);
        let dim = obj.dim();
        let neighbor = vec![0.1; dim];
        let lambda = vec![0.05; dim];
        let neighbors = [NeighborView {
            theta: &neighbor,
            lambda: &lambda,
            device_is_left: true,
        }];
        let current = vec![0.0; dim];
        let lagrangian = |t: &[f64]| {
            obj.value(t)
                + linalg::dot(&lambda, t)
                + 0.5 * 1.0 * linalg::sub(t, &neighbor).iter().map(|x| x * x).sum::<f64>()
        };
        let before = lagrangian(&current);
        let out = primal_update(&obj, &current, &neighbors, 1.0, 20).unwrap();
        assert!(lagrangian(&out) < before);
    }
}
