"""Hamiltonian spring dynamics: simulation, learned models, conservation.

The system is n particles in 2-D, every pair coupled by a spring with
constant k_i * k_j:

    H(q, p) = sum_i |p_i|^2 / (2 m_i) + 1/2 sum_{i<j} k_i k_j |q_i - q_j|^2

States are flat vectors z = (q, p) of length 2*n*d. Time evolution follows
dq/dt = dH/dp, dp/dt = -dH/dq. Ground-truth data is integrated with the
symplectic leapfrog scheme; training roll-outs use fixed-step RK4, which is
differentiable end to end (including through the inner gradient of a
learned Hamiltonian).

Dataset conventions (fixed here since no external source pins them): masses
log-uniform in [0.5, 2], spring parameters log-uniform in [0.25, 0.8]
(soft enough that leapfrog at dt = 0.01 keeps relative energy drift below
1e-4 for every draw), initial q and p standard normal per coordinate, 500
recorded steps at dt = 0.01. Ground-truth trajectories are integrated with
10 leapfrog substeps per recorded step, so stored states are accurate well
beyond the integrator tolerance they are later checked against.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DimensionMismatchError, NonFiniteError

DEFAULT_DT = 0.01
DEFAULT_STEPS = 500


# ---------------------------------------------------------------------------
# the physical system
# ---------------------------------------------------------------------------


@dataclass
class SpringSystem:
    masses: np.ndarray  # (n,)
    ks: np.ndarray  # (n,); pair (i, j) has spring constant ks[i] * ks[j]
    dim: int = 2

    def __post_init__(self):
        self.masses = np.asarray(self.masses, dtype=np.float64)
        self.ks = np.asarray(self.ks, dtype=np.float64)
        if np.any(self.masses <= 0) or np.any(self.ks <= 0):
            raise ValueError("masses and spring parameters must be positive")

    @property
    def n(self) -> int:
        return self.masses.shape[0]

    @property
    def state_dim(self) -> int:
        return 2 * self.n * self.dim

    def split(self, z: np.ndarray):
        nd = self.n * self.dim
        q = z[..., :nd].reshape(z.shape[:-1] + (self.n, self.dim))
        p = z[..., nd:].reshape(z.shape[:-1] + (self.n, self.dim))
        return q, p


def spring_hamiltonian(sys: SpringSystem, z: np.ndarray) -> float | np.ndarray:
    """Total energy; supports a leading batch axis."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != sys.state_dim:
        raise DimensionMismatchError(
            f"state must have dim {sys.state_dim}, got {z.shape[-1]}"
        )
    q, p = sys.split(z)
    kinetic = (np.sum(p * p, axis=-1) / (2.0 * sys.masses)).sum(axis=-1)
    diff = q[..., :, None, :] - q[..., None, :, :]
    sq = np.sum(diff * diff, axis=-1)
    kk = sys.ks[:, None] * sys.ks[None, :]
    potential = 0.25 * np.sum(kk * sq, axis=(-2, -1))  # double-counts pairs
    out = kinetic + potential
    return float(out) if out.ndim == 0 else out


def spring_rhs(sys: SpringSystem, z: np.ndarray) -> np.ndarray:
    """Analytic Hamiltonian vector field of the true system (batched)."""
    z = np.asarray(z, dtype=np.float64)
    q, p = sys.split(z)
    dq = p / sys.masses[:, None]
    diff = q[..., :, None, :] - q[..., None, :, :]
    kk = (sys.ks[:, None] * sys.ks[None, :])[..., None]
    dp = -np.sum(kk * diff, axis=-2)
    return np.concatenate(
        [dq.reshape(z.shape[:-1] + (-1,)), dp.reshape(z.shape[:-1] + (-1,))], axis=-1
    )


def spring_force(sys: SpringSystem, q: np.ndarray) -> np.ndarray:
    """-dV/dq for the true system, q shaped (..., n, dim)."""
    diff = q[..., :, None, :] - q[..., None, :, :]
    kk = (sys.ks[:, None] * sys.ks[None, :])[..., None]
    return -np.sum(kk * diff, axis=-2)


def total_momentum(z: np.ndarray, n: int, dim: int = 2) -> np.ndarray:
    p = z[..., n * dim :].reshape(z.shape[:-1] + (n, dim))
    return p.sum(axis=-2)


def angular_momentum(z: np.ndarray, n: int, dim: int = 2) -> np.ndarray:
    nd = n * dim
    q = z[..., :nd].reshape(z.shape[:-1] + (n, dim))
    p = z[..., nd:].reshape(z.shape[:-1] + (n, dim))
    return (q[..., 0] * p[..., 1] - q[..., 1] * p[..., 0]).sum(axis=-1)


# ---------------------------------------------------------------------------
# Hamilton's equations from a scalar function
# ---------------------------------------------------------------------------


def hamilton_rhs(hamiltonian, z, create_graph: bool = False):
    """Hamiltonian vector field (dH/dp, -dH/dq) from a scalar function.

    ``hamiltonian`` maps a state tensor (..., 2nd) to a scalar (sums over
    any batch axis, which leaves per-sample gradients intact). Works on
    plain arrays (returns an array) or graph tensors; with ``create_graph``
    the returned field stays differentiable, so losses built on roll-outs
    can train the Hamiltonian's parameters.
    """
    was_array = not isinstance(z, Tensor)
    zt = Tensor(z, requires_grad=True) if was_array else z
    if not zt.requires_grad:
        zt = Tensor(zt.data, requires_grad=True)
    h = hamiltonian(zt)
    (g,) = ad.grad(h, [zt], create_graph=create_graph, stop_at_wrt=True)
    nd = zt.shape[-1] // 2
    gq = g[..., :nd]
    gp = g[..., nd:]
    out = ad.concat([gp, ad.neg(gq)], axis=-1)
    return out.data if was_array and not create_graph else out


# ---------------------------------------------------------------------------
# integrators
# ---------------------------------------------------------------------------


def _check_finite(z, step: int):
    data = z.data if isinstance(z, Tensor) else z
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite state at integration step {step}")


def integrate_rk4(rhs, z0, dt: float, steps: int, check_finite: bool = True):
    """Classic fixed-step RK4; returns the list of states including z0.

    ``rhs`` and ``z0`` may be numpy arrays or graph tensors; with tensors
    every stage is recorded, so the trajectory is differentiable.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    states = [z0]
    z = z0
    for step in range(steps):
        k1 = rhs(z)
        k2 = rhs(z + (dt / 2.0) * k1)
        k3 = rhs(z + (dt / 2.0) * k2)
        k4 = rhs(z + dt * k3)
        z = z + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if check_finite:
            _check_finite(z, step)
        states.append(z)
    return states


def integrate_leapfrog(force, masses_flat: np.ndarray, z0: np.ndarray, dt: float,
                       steps: int, check_finite: bool = True, substeps: int = 1):
    """Kick-drift-kick leapfrog for separable H = K(p) + V(q) (numpy only).

    ``force`` maps flat positions (..., nd) to -dV/dq (..., nd);
    ``masses_flat`` broadcasts against the position coordinates. Symplectic
    and time-reversible: integrating ``-dt`` walks back to z0. With
    ``substeps`` > 1 each recorded interval is integrated in finer internal
    steps (states are still returned every ``dt``).
    """
    if dt == 0:
        raise ValueError("dt must be nonzero")
    z0 = np.asarray(z0, dtype=np.float64)
    nd = z0.shape[-1] // 2
    q, p = z0[..., :nd].copy(), z0[..., nd:].copy()
    states = [z0]
    h = dt / substeps
    f = force(q)
    for step in range(steps):
        for _ in range(substeps):
            p_half = p + 0.5 * h * f
            q = q + h * p_half / masses_flat
            f = force(q)
            p = p_half + 0.5 * h * f
        z = np.concatenate([q, p], axis=-1)
        if check_finite:
            _check_finite(z, step)
        states.append(z)
    return states


def integrate(rhs, z0, dt: float, steps: int, method: str = "rk4", **kwargs):
    if method == "rk4":
        return integrate_rk4(rhs, z0, dt, steps, **kwargs)
    if method == "leapfrog":
        raise ValueError("leapfrog needs the separable form; use integrate_leapfrog")
    raise ValueError(f"unknown method {method!r}")


@dataclass
class TrajectoryBatch:
    states: np.ndarray  # (T+1, 2nd) or (B, T+1, 2nd)
    dt: float

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")


# ---------------------------------------------------------------------------
# dataset generation
# ---------------------------------------------------------------------------


@dataclass
class SpringDataset:
    masses: np.ndarray  # (N, n)
    ks: np.ndarray  # (N, n)
    trajectories: np.ndarray  # (N, T+1, 2nd)
    dt: float
    seed: int

    @property
    def num_trajectories(self) -> int:
        return self.trajectories.shape[0]

    @property
    def n_particles(self) -> int:
        return self.masses.shape[1]

    def system(self, i: int) -> SpringSystem:
        return SpringSystem(self.masses[i], self.ks[i])

    def node_features(self, idx=None) -> np.ndarray:
        """(N, n, 2) per-particle features (mass, spring parameter)."""
        feats = np.stack([self.masses, self.ks], axis=-1)
        return feats if idx is None else feats[idx]

    def save_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(json.dumps({"meta": {"dt": self.dt, "seed": self.seed}}) + "\n")
            for i in range(self.num_trajectories):
                fh.write(
                    json.dumps(
                        {
                            "z_series": self.trajectories[i].tolist(),
                            "meta": {
                                "masses": self.masses[i].tolist(),
                                "ks": self.ks[i].tolist(),
                            },
                            "seed": self.seed,
                        }
                    )
                    + "\n"
                )

    @classmethod
    def load_jsonl(cls, path) -> "SpringDataset":
        with open(path) as fh:
            head = json.loads(fh.readline())
            masses, ks, trajs = [], [], []
            for line in fh:
                rec = json.loads(line)
                masses.append(rec["meta"]["masses"])
                ks.append(rec["meta"]["ks"])
                trajs.append(rec["z_series"])
        return cls(
            masses=np.asarray(masses),
            ks=np.asarray(ks),
            trajectories=np.asarray(trajs),
            dt=head["meta"]["dt"],
            seed=head["meta"]["seed"],
        )

    def save_npz(self, path) -> None:
        np.savez_compressed(
            path, masses=self.masses, ks=self.ks, trajectories=self.trajectories,
            dt=self.dt, seed=self.seed,
        )

    @classmethod
    def load_npz(cls, path) -> "SpringDataset":
        raw = np.load(path)
        return cls(
            masses=raw["masses"], ks=raw["ks"], trajectories=raw["trajectories"],
            dt=float(raw["dt"]), seed=int(raw["seed"]),
        )


def generate_spring_dataset(
    num_trajectories: int,
    steps: int = DEFAULT_STEPS,
    dt: float = DEFAULT_DT,
    rng_seed: int = 0,
    n_particles: int = 6,
    dim: int = 2,
) -> SpringDataset:
    """Simulate ground-truth trajectories with leapfrog (vectorised batch)."""
    if num_trajectories < 1 or steps < 1:
        raise ValueError("counts must be positive")
    rng = np.random.default_rng(rng_seed)
    masses = np.exp(rng.uniform(np.log(0.5), np.log(2.0), size=(num_trajectories, n_particles)))
    ks = np.exp(rng.uniform(np.log(0.25), np.log(0.8), size=(num_trajectories, n_particles)))
    q0 = rng.normal(size=(num_trajectories, n_particles * dim))
    p0 = rng.normal(size=(num_trajectories, n_particles * dim))
    z0 = np.concatenate([q0, p0], axis=-1)

    kk = (ks[:, :, None] * ks[:, None, :])[..., None]  # (N, n, n, 1)

    def force(q_flat):
        q = q_flat.reshape(num_trajectories, n_particles, dim)
        diff = q[:, :, None, :] - q[:, None, :, :]
        return (-np.sum(kk * diff, axis=2)).reshape(num_trajectories, -1)

    masses_flat = np.repeat(masses, dim, axis=1)
    states = integrate_leapfrog(force, masses_flat, z0, dt, steps, substeps=10)
    trajs = np.stack(states, axis=1)  # (N, T+1, 2nd)
    return SpringDataset(masses=masses, ks=ks, trajectories=trajs, dt=dt, seed=rng_seed)


def sample_windows(dataset: SpringDataset, batch_size: int, horizon: int,
                   rng: np.random.Generator, indices=None):
    """Random (z0, targets) windows of ``horizon`` transitions."""
    N, T1, D = dataset.trajectories.shape
    pool = np.arange(N) if indices is None else np.asarray(indices)
    traj_idx = rng.choice(pool, size=batch_size, replace=True)
    t0 = rng.integers(0, T1 - horizon, size=batch_size)
    z0 = dataset.trajectories[traj_idx, t0]
    targets = np.stack(
        [dataset.trajectories[traj_idx, t0 + 1 + h] for h in range(horizon)], axis=1
    )
    return traj_idx, z0, targets


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def rollout_states(rhs, z0, dt: float, horizon: int):
    """States after 1..horizon RK4 steps (z0 excluded)."""
    return integrate_rk4(rhs, z0, dt, horizon, check_finite=False)[1:]


def rollout_loss(rhs, z0, targets, dt: float, mode: str = "train_arithmetic"):
    """Squared-error roll-out loss against ground-truth targets.

    ``targets`` has shape (B, horizon, D). ``train_arithmetic`` returns a
    scalar graph tensor (mean over steps, batch and coordinates);
    ``test_geometric`` returns the float geometric mean over per-step MSEs,
    which keeps late, larger errors from drowning out early ones.
    """
    targets = np.asarray(targets, dtype=np.float64)
    horizon = targets.shape[1]
    if mode == "train_arithmetic":
        states = rollout_states(rhs, z0, dt, horizon)
        per_step = [
            ad.reduce_mean(ad.square(ad.sub(s, ad.constant(targets[:, t]))))
            for t, s in enumerate(states)
        ]
        total = per_step[0]
        for term in per_step[1:]:
            total = ad.add(total, term)
        return ad.mul(total, ad.constant(1.0 / horizon))
    if mode == "test_geometric":
        with ad.no_grad():
            states = rollout_states(rhs, z0, dt, horizon)
        mses = per_step_mse(states, targets)
        return geometric_mean(mses)
    raise ValueError(f"unknown mode {mode!r}")


def per_step_mse(states, targets: np.ndarray) -> np.ndarray:
    out = []
    for t, s in enumerate(states):
        data = s.data if isinstance(s, Tensor) else s
        out.append(float(np.mean((data - targets[:, t]) ** 2)))
    return np.asarray(out)


def geometric_mean(values: np.ndarray, floor: float = 1e-300) -> float:
    values = np.maximum(np.asarray(values, dtype=np.float64), floor)
    return float(np.exp(np.mean(np.log(values))))


# ---------------------------------------------------------------------------
# learned Hamiltonians
# ---------------------------------------------------------------------------


class LearnedSpringHamiltonian:
    """H(z) = K(p; masses) + V_theta(q): analytic kinetic term plus a learned
    potential network over particle positions with (mass, k) node features."""

    def __init__(self, potential_model, masses: np.ndarray, ks: np.ndarray,
                 dim: int = 2):
        self.model = potential_model
        self.masses = np.asarray(masses, dtype=np.float64)  # (B, n) or (n,)
        self.ks = np.asarray(ks, dtype=np.float64)
        if self.masses.ndim == 1:
            self.masses = self.masses[None]
            self.ks = self.ks[None]
        self.dim = dim
        self.n = self.masses.shape[-1]
        self.feats = np.stack([self.masses, self.ks], axis=-1)  # (B, n, 2)
        self.inv_2m = np.repeat(1.0 / (2.0 * self.masses), dim, axis=-1)  # (B, nd)

    def __call__(self, z: Tensor) -> Tensor:
        """Summed energy of the batch (per-sample gradients stay intact)."""
        squeeze = z.ndim == 1
        if squeeze:
            z = ad.reshape(z, (1, -1))
        B = z.shape[0]
        nd = self.n * self.dim
        q = ad.reshape(z[..., :nd], (B, self.n, self.dim))
        p = z[..., nd:]
        feats = self.feats if self.feats.shape[0] == B else np.broadcast_to(
            self.feats, (B,) + self.feats.shape[1:]
        )
        v = self.model.forward_batch(q, feats, training=True)  # (B, 1)
        kinetic = ad.reduce_sum(ad.mul(ad.square(p), ad.constant(self.inv_2m)), axis=-1)
        total = ad.add(ad.reshape(v, (B,)), kinetic)
        return ad.reduce_sum(total)

    def rhs(self, create_graph: bool = False):
        return lambda z: hamilton_rhs(self, z, create_graph=create_graph)

    def rhs_numpy(self):
        """Vector field as a plain array function (graph built and dropped
        per call; the forward must be recorded for the inner gradient)."""

        def f(z):
            out = hamilton_rhs(self, Tensor(np.asarray(z), requires_grad=True))
            return out.data

        return f

    def energy_numpy(self, z: np.ndarray) -> float:
        """Energy of a single state (no graph)."""
        with ad.no_grad():
            total = self(Tensor(np.asarray(z, dtype=np.float64)[None]))
        return float(total.data)


class MLPPotential:
    """Non-invariant control: V_theta = MLP of raw flattened (q, m, k)."""

    def __init__(self, n_particles: int, dim: int = 2, widths=(64, 64), seed: int = 0):
        from .nn import MLP, ParameterStore

        self.n = n_particles
        self.dim = dim
        self.store = ParameterStore(seed=seed)
        d_in = n_particles * (dim + 2)
        self.net = MLP(self.store, "vmlp", d_in, tuple(widths), 1)

    def forward_batch(self, q, feats, training: bool = True) -> Tensor:
        B = q.shape[0]
        if not isinstance(q, Tensor):
            q = ad.constant(np.asarray(q, dtype=ad.get_default_dtype()))
        qf = ad.reshape(q, (B, self.n * self.dim))
        ff = ad.constant(
            np.asarray(feats, dtype=ad.get_default_dtype()).reshape(B, -1)
        )
        return self.net(ad.concat([qf, ff], axis=-1))

    def num_parameters(self) -> int:
        return self.store.num_scalars()


# ---------------------------------------------------------------------------
# conservation audit
# ---------------------------------------------------------------------------


def drift_report(states: np.ndarray, energy_fn, n: int, dim: int = 2) -> dict:
    """Relative drifts of energy, linear momentum and angular momentum."""
    states = np.asarray(states)
    energies = np.asarray([energy_fn(z) for z in states], dtype=np.float64)
    e_scale = max(abs(energies[0]), 1e-12)
    momenta = np.stack([total_momentum(z, n, dim) for z in states])
    ang = np.asarray([angular_momentum(z, n, dim) for z in states])
    p0 = states[0][n * dim :].reshape(n, dim)
    p_scale = max(np.linalg.norm(momenta[0]), float(np.mean(np.linalg.norm(p0, axis=1))), 1e-12)
    l_scale = max(abs(ang[0]), float(np.mean(np.abs(p0))), 1e-12)
    return {
        "energy_drift": float(np.max(np.abs(energies - energies[0])) / e_scale),
        "linear_momentum_drift": float(
            np.max(np.linalg.norm(momenta - momenta[0], axis=-1)) / p_scale
        ),
        "angular_momentum_drift": float(np.max(np.abs(ang - ang[0])) / l_scale),
    }


def conservation_audit(hamiltonian, z0: np.ndarray, steps: int, dt: float,
                       n: int, dim: int = 2, method: str = "rk4",
                       energy_fn=None, rhs=None) -> dict:
    """Integrate the (learned or true) system and report conservation drifts.

    ``hamiltonian`` is a scalar function of a state tensor; ``rhs`` and
    ``energy_fn`` override the autodiff-derived field/energy when an
    analytic form is available.
    """
    if rhs is None:
        rhs = lambda z: hamilton_rhs(hamiltonian, z)
    if energy_fn is None:
        def energy_fn(z):
            with ad.no_grad():
                return float(hamiltonian(Tensor(np.asarray(z)[None])).data)

    if method == "rk4":
        states = integrate_rk4(rhs, np.asarray(z0, dtype=np.float64), dt, steps)
    else:
        raise ValueError("conservation_audit integrates with rk4; leapfrog audits "
                         "go through integrate_leapfrog + drift_report")
    return drift_report(np.stack(states), energy_fn, n, dim)
