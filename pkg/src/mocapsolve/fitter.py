"""Noise-aware body fitting.

The objective couples the usual shape/pose priors with a data term in which
every observed landmark carries its own Gaussian scale:

    E = w * sum_i ( ||target_i - landmark_i|| / (2 sigma_i^2) + log sigma_i )
        + lambda_beta * ||beta|| + lambda_z * ||z||

Pose enters through an autoencoder code z (theta = decode(z)). The solve
runs in two annealed stages: (beta, z, root) at fixed sigma, then (z, sigma)
with shape and root frozen. The plain baseline is stage one with sigma = 1.

The root is parameterized relative to a rigid Procrustes initialization,
R = R0 exp(omega), t = t0 + R0 t_delta, which makes the whole solve
equivariant to rigid motions of the targets.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize

from .balance import PcaAutoencoder
from .body import BodyParams, ParameterError, forward, landmarks_jvp, landmarks_vjp
from .rotations import kabsch, log_rotation, rodrigues, rodrigues_with_jacobian

log = logging.getLogger(__name__)

MODES = ("noise_aware", "plain", "barron")


@dataclass
class FitConfig:
    lambda_beta: float = 1e-3
    lambda_z: float = 1e-3
    # (iteration budget, data-term weight) per annealing round, reused by both stages
    anneal_schedule: tuple = ((40, 1.0), (40, 2.0), (40, 4.0))
    sigma_init: float = 0.02
    sigma_bounds: tuple = (1e-3, 1.0)
    gtol: float = 1e-10       # sigma-only and robust-baseline solves
    ftol: float = 1e-7        # relative energy decrease that ends a round
    xtol: float = 1e-6        # largest step component that ends a round
    mode: str = "noise_aware"
    squared: bool = False     # use ||r||^2 in the data term instead of ||r||
    skip_stage2: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ParameterError(f"unknown fit mode {self.mode!r}")
        lo, hi = self.sigma_bounds
        if not 0 < lo <= hi:
            raise ParameterError("sigma bounds must satisfy 0 < min <= max")
        if not lo <= self.sigma_init <= hi:
            raise ParameterError("sigma_init outside sigma bounds")
        if not self.anneal_schedule:
            raise ParameterError("anneal_schedule must have at least one round")

    @property
    def final_weight(self):
        return float(self.anneal_schedule[-1][1])


@dataclass
class FitProblem:
    model: object
    ae: object
    targets: np.ndarray            # (L, 3) landmark estimates; unobserved rows ignored
    mask: np.ndarray | None = None  # (L,) observed landmarks

    def __post_init__(self):
        self.targets = np.asarray(self.targets, dtype=float)
        L = self.model.n_landmarks
        if self.targets.shape != (L, 3):
            raise ParameterError(f"targets must be {L} x 3")
        if self.mask is None:
            self.mask = np.all(np.isfinite(self.targets), axis=1)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.sum() < 4:
            raise ParameterError("need at least 4 observed landmarks")
        if not np.all(np.isfinite(self.targets[self.mask])):
            raise ParameterError("observed targets must be finite")

    @classmethod
    def from_markers(cls, model, ae, labels, points):
        """Targets from labelled marker points; unlabeled (ghost) points are dropped."""
        targets = np.full((model.n_landmarks, 3), np.nan)
        index = {n: i for i, n in enumerate(model.landmark_names)}
        for name, p in zip(labels, points):
            if name is not None and name in index:
                targets[index[name]] = p
        return cls(model, ae, targets)

    @property
    def observed(self):
        return np.flatnonzero(self.mask)


@dataclass
class FitState:
    beta: np.ndarray
    z: np.ndarray
    omega: np.ndarray            # root rotation delta (axis-angle) about base_R
    t_delta: np.ndarray          # root translation delta, in the base frame
    log_sigma: np.ndarray        # one per observed landmark
    base_R: np.ndarray = field(default_factory=lambda: np.eye(3))
    base_t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @property
    def root_R(self):
        return self.base_R @ rodrigues(self.omega)

    @property
    def root_t(self):
        return self.base_t + self.base_R @ self.t_delta

    @property
    def sigma(self):
        return np.exp(self.log_sigma)

    def copy(self):
        return FitState(self.beta.copy(), self.z.copy(), self.omega.copy(), self.t_delta.copy(),
                        self.log_sigma.copy(), self.base_R.copy(), self.base_t.copy())

    def params(self, ae):
        return BodyParams(self.beta, ae.decode(self.z), log_rotation(self.root_R), self.root_t)


@dataclass
class FitResult:
    params: BodyParams
    z: np.ndarray
    sigma: np.ndarray             # per observed landmark, meters
    observed: np.ndarray          # landmark indices the sigmas belong to
    energy: float
    converged: bool
    stage_iterations: list
    residuals: np.ndarray         # per observed landmark, meters
    energy_trace: list = field(default_factory=list)
    alpha: float | None = None
    scale: float | None = None

    def to_dict(self, frame_id=None):
        d = {"frame_id": frame_id, **self.params.to_dict(), "sigma": self.sigma.tolist(),
             "energy": self.energy, "converged": bool(self.converged)}
        return d


# --------------------------------------------------------------- energies

def _norm(x):
    return math.sqrt(float(x @ x))


def data_energy(problem, params, sigma, squared=False):
    """Uncertainty-weighted data term over observed landmarks."""
    sigma = np.asarray(sigma, dtype=float)
    fp = forward(problem.model, params.beta, params.theta, params.root_matrix,
                 params.root_translation)
    obs = problem.observed
    r = np.linalg.norm(problem.targets[obs] - fp.landmarks[obs], axis=1)
    if squared:
        r = r * r
    return float(np.sum(r / (2 * sigma**2) + np.log(sigma)))


def prior_energy(params, z, config):
    return config.lambda_beta * _norm(np.asarray(params.beta, dtype=float)) + \
        config.lambda_z * _norm(np.asarray(z, dtype=float))


def _evaluate(problem, config, state, weight, need_grad=True):
    """Total energy and gradient w.r.t. (beta, z, omega, t_delta, log_sigma)."""
    model, ae = problem.model, problem.ae
    theta = ae.decode(state.z)
    Rw, dRw = rodrigues_with_jacobian(state.omega)
    root_R = state.base_R @ Rw
    fp = forward(model, state.beta, theta, root_R, state.root_t, keep_jacobian=need_grad)
    obs = problem.observed
    diff = problem.targets[obs] - fp.landmarks[obs]
    rn = np.linalg.norm(diff, axis=1)
    sigma = np.exp(state.log_sigma)
    rho = rn * rn if config.squared else rn
    inv = 1.0 / (2 * sigma**2)
    E = weight * float(np.sum(rho * inv + np.log(sigma)))
    nb, nz = _norm(state.beta), _norm(state.z)
    E += config.lambda_beta * nb + config.lambda_z * nz
    if not math.isfinite(E):
        raise FloatingPointError("non-finite fit energy")
    if not need_grad:
        return E, None

    # d rho / d landmark
    if config.squared:
        drho = -2 * diff
    else:
        drho = -np.divide(diff, rn[:, None], out=np.zeros_like(diff), where=rn[:, None] > 0)
    g_lm = np.zeros_like(fp.landmarks)
    g_lm[obs] = weight * inv[:, None] * drho
    g = landmarks_vjp(model, fp, g_lm)

    g_beta = g["beta"] + (config.lambda_beta * state.beta / nb if nb > 0 else 0.0)
    g_z = ae.decode_vjp(state.z, g["theta"]) + (config.lambda_z * state.z / nz if nz > 0 else 0.0)
    g_Rw = state.base_R.T @ g["root_R"]
    g_omega = np.tensordot(g_Rw, dRw, axes=([0, 1], [0, 1]))
    g_tdelta = state.base_R.T @ g["root_t"]
    g_logsig = weight * (1.0 - 2.0 * rho * inv)
    return E, {"beta": g_beta, "z": g_z, "omega": g_omega, "t_delta": g_tdelta,
               "log_sigma": g_logsig, "residual": rn}


def total_energy(problem, config, state, weight=1.0):
    return _evaluate(problem, config, state, weight, need_grad=False)[0]


BLOCKS = ("beta", "z", "omega", "t_delta", "log_sigma")


def gradient(problem, config, state, weight=1.0):
    """Analytic gradient of the total energy, flattened over BLOCKS."""
    _, g = _evaluate(problem, config, state, weight)
    return np.concatenate([np.ravel(g[k]) for k in BLOCKS])


def flatten_state(state, blocks=BLOCKS):
    return np.concatenate([np.ravel(getattr(state, k)) for k in blocks])


def unflatten_state(x, template, blocks=BLOCKS):
    st = template.copy()
    i = 0
    for k in blocks:
        n = getattr(template, k).size
        setattr(st, k, np.array(x[i:i + n]))
        i += n
    return st


# ---------------------------------------------------------------- solving

def initial_state(problem, config):
    """Rest pose, zero shape, root by Procrustes on the anchor markers."""
    model, ae = problem.model, problem.ae
    beta = np.zeros(model.n_shape)
    z0 = np.asarray(ae.encode(np.zeros((model.n_joints, 3))), dtype=float).reshape(-1)
    rest = forward(model, beta, ae.decode(z0)).landmarks
    idx = [model.landmark_index(n) for n in model.anchor_markers
           if n in model.landmark_names and problem.mask[model.landmark_index(n)]]
    if len(idx) < 3:
        idx = list(problem.observed)
    R0, t0 = kabsch(rest[idx], problem.targets[idx])
    n_obs = len(problem.observed)
    return FitState(beta, z0, np.zeros(3), np.zeros(3),
                    np.full(n_obs, math.log(config.sigma_init)), R0, t0)


def _jacobian_columns(problem, state, fp, dRw, blocks):
    """d(observed landmarks, flattened) / d(blocks), shape (3n, p), by forward mode."""
    model = problem.model
    S, P = model.n_shape, model.n_joints
    tangents = []
    for k in blocks:
        if k == "beta":
            n = S
            d = (np.eye(S), np.zeros((n, P, 3)), np.zeros((n, 3, 3)), np.zeros((n, 3)))
        elif k == "z":
            basis = problem.ae.decode_vjp(state.z, np.eye(3 * P).reshape(3 * P, P, 3)).T
            n = basis.shape[0]
            d = (np.zeros((n, S)), basis.reshape(n, P, 3), np.zeros((n, 3, 3)), np.zeros((n, 3)))
        elif k == "omega":
            d = (np.zeros((3, S)), np.zeros((3, P, 3)),
                 np.einsum("ij,jkm->mik", state.base_R, dRw), np.zeros((3, 3)))
        elif k == "t_delta":
            d = (np.zeros((3, S)), np.zeros((3, P, 3)), np.zeros((3, 3, 3)), state.base_R.T.copy())
        else:
            raise ValueError(f"no landmark jacobian for block {k!r}")
        tangents.append(d)
    d_beta, d_theta, d_R, d_t = (np.concatenate(parts) for parts in zip(*tangents))
    jv = landmarks_jvp(model, fp, d_beta, d_theta, d_R, d_t, rows=problem.observed)
    return jv.reshape(len(d_beta), -1).T


_IRLS_FLOOR = 1e-6  # meters; caps the reweighting of vanishing residuals
_FLOOR_FRACTION = 0.5


def _closed_form_log_sigma(config, rho):
    """Per-landmark minimizer of rho/(2 sigma^2) + log sigma within the bounds."""
    lo, hi = config.sigma_bounds
    return np.log(np.clip(np.sqrt(rho), lo, hi))


def _solve(problem, config, state, blocks, weight, budget, trace, sigma_closed_form=False):
    """Damped reweighted Gauss-Newton on the exact energy.

    Each iteration majorizes the norm terms by weighted squares around the
    current residuals, takes a Levenberg-Marquardt step on that model and only
    accepts it if the true energy decreases, so the energy trace is monotone.
    With ``sigma_closed_form`` the sigmas are set to their exact conditional
    minimizer before every step (block coordinate descent).
    Returns (state, iterations, converged).
    """
    model, ae = problem.model, problem.ae
    obs = problem.observed
    sizes = [getattr(state, k).size for k in blocks]
    offsets = dict(zip(blocks, np.cumsum([0] + sizes[:-1])))
    mu = 1e-3
    energy = None
    for it in range(1, budget + 1):
        Rw, dRw = rodrigues_with_jacobian(state.omega)
        fp = forward(model, state.beta, ae.decode(state.z), state.base_R @ Rw, state.root_t,
                     keep_jacobian=True)
        diff = problem.targets[obs] - fp.landmarks[obs]
        rn = np.linalg.norm(diff, axis=1)
        rho = rn * rn if config.squared else rn
        if sigma_closed_form:
            state.log_sigma = _closed_form_log_sigma(config, rho)
        c = weight / (2 * np.exp(2 * state.log_sigma))
        if energy is None or sigma_closed_form:
            energy = _evaluate(problem, config, state, weight, need_grad=False)[0]
            if it == 1:
                trace.append(energy)

        Jl = _jacobian_columns(problem, state, fp, dRw, blocks)
        if config.squared:
            a = 2 * c
        else:
            # a floor tracking the typical residual keeps early iterations from
            # pinning landmarks at zero before the rest of the body has moved
            floor = max(_IRLS_FLOOR, _FLOOR_FRACTION * float(np.median(rn)))
            a = c / np.maximum(rn, floor)
        aw = np.repeat(a, 3)
        H = Jl.T @ (aw[:, None] * Jl)
        rhs_model = Jl.T @ (aw * diff.reshape(-1))  # minus gradient of the quadratic model
        for name, lam in (("beta", config.lambda_beta), ("z", config.lambda_z)):
            if name not in offsets:
                continue
            sl = slice(offsets[name], offsets[name] + getattr(state, name).size)
            vec = getattr(state, name)
            h = lam / max(_norm(vec), _IRLS_FLOOR)
            H[sl, sl] += h * np.eye(vec.size)
            rhs_model[sl] -= h * vec

        x0 = flatten_state(state, blocks)
        diag = np.diag(H).copy()
        accepted = False
        while mu < 1e12:
            A = H + mu * (np.diag(diag) + 1e-12 * np.eye(len(x0)))
            try:
                step = np.linalg.solve(A, rhs_model)
            except np.linalg.LinAlgError:
                mu *= 10
                continue
            cand = unflatten_state(x0 + step, state, blocks)
            e_new = _evaluate(problem, config, cand, weight, need_grad=False)[0]
            if e_new <= energy:
                accepted = True
                break
            mu *= 4
        if not accepted:
            return state, it, True  # no descent direction left at working precision
        drop = energy - e_new
        state, energy = cand, e_new
        trace.append(energy)
        mu = max(mu / 3, 1e-9)
        small_step = np.max(np.abs(step)) < config.xtol
        if drop <= config.ftol * max(1.0, abs(energy)) or small_step:
            return state, it, True
    return state, budget, False


def _minimize(problem, config, state, blocks, weight, maxiter, bounds=None):
    """Bounded quasi-Newton minimization over `blocks` (used for sigma-only solves)."""
    def fun(x):
        E, g = _evaluate(problem, config, unflatten_state(x, state, blocks), weight)
        return E, np.concatenate([np.ravel(g[k]) for k in blocks])

    res = optimize.minimize(fun, flatten_state(state, blocks), jac=True, method="L-BFGS-B",
                            bounds=bounds, options={"maxiter": maxiter, "gtol": config.gtol,
                                                    "ftol": config.ftol})
    if not np.isfinite(res.fun):
        raise FloatingPointError("non-finite fit energy")
    return unflatten_state(res.x, state, blocks), res


def _bounds_for(state, blocks, config):
    lo, hi = np.log(config.sigma_bounds[0]), np.log(config.sigma_bounds[1])
    out = []
    for k in blocks:
        n = getattr(state, k).size
        out.extend([(lo, hi)] * n if k == "log_sigma" else [(None, None)] * n)
    return out


def _run_stage(problem, config, state, blocks, trace, sigma_closed_form=False):
    iters, ok = 0, True
    for budget, w in config.anneal_schedule:
        state, n, conv = _solve(problem, config, state, blocks, w, budget, trace, sigma_closed_form)
        iters += n
        ok = conv
    return state, iters, ok


STAGE1 = ("beta", "z", "omega", "t_delta")


def _finish(problem, config, state, stage_iters, ok, trace):
    E, g = _evaluate(problem, config, state, config.final_weight)
    if not ok:
        log.warning("fit stopped at its iteration budget before converging")
    return FitResult(state.params(problem.ae), state.z.copy(), state.sigma.copy(), problem.observed,
                     E, ok, stage_iters, g["residual"], trace)


def fit(problem, config=None, init=None):
    """Two-stage noise-aware fit (or a baseline, per config.mode)."""
    config = config or FitConfig()
    if config.mode == "plain":
        return plain_fit(problem, config, init)
    if config.mode == "barron":
        return barron_fit(problem, config, init=init)
    state = init.copy() if init is not None else initial_state(problem, config)
    state.log_sigma = np.full(len(problem.observed), math.log(config.sigma_init))
    trace = []
    state, it1, ok1 = _run_stage(problem, config, state, STAGE1, trace)
    if config.skip_stage2:
        return _finish(problem, config, state, [it1], ok1, trace)
    state, it2, ok2 = _run_stage(problem, config, state, ("z",), trace, sigma_closed_form=True)
    return _finish(problem, config, state, [it1, it2], ok1 and ok2, trace)


def fit_sigma(problem, config, state, weight=1.0):
    """Optimize only the per-landmark sigmas, everything else held fixed."""
    blocks = ("log_sigma",)
    state, res = _minimize(problem, config, state, blocks, weight,
                           sum(n for n, _ in config.anneal_schedule),
                           bounds=_bounds_for(state, blocks, config))
    return state


def plain_fit(problem, config=None, init=None):
    """Baseline: stage one only, every landmark at sigma = 1."""
    config = config or FitConfig(mode="plain")
    state = init.copy() if init is not None else initial_state(problem, config)
    state.log_sigma = np.zeros(len(problem.observed))
    trace = []
    state, it1, ok = _run_stage(problem, config, state, STAGE1, trace)
    return _finish(problem, config, state, [it1], ok, trace)


# ------------------------------------------------------- adaptive robust loss

def general_loss(x, alpha, scale):
    """Shape/scale-parameterized robust penalty, with its alpha in {0, 2, -inf} limits."""
    x = np.asarray(x, dtype=float)
    q = (x / scale) ** 2
    if alpha == 2:
        return 0.5 * q
    if alpha == 0:
        return np.log1p(0.5 * q)
    if np.isneginf(alpha):
        return -np.expm1(-0.5 * q)
    b = abs(alpha - 2)
    return b / alpha * ((q / b + 1) ** (alpha / 2) - 1)


_STANDARD_TRUNCATION = 20.0  # default support half-width, in units of the scale


def _half_integral(alpha, upper):
    f = lambda u: math.exp(-float(general_loss(u, alpha, 1.0)))
    knee = min(upper, 50.0)
    total, _ = integrate.quad(f, 0.0, knee, limit=200)
    if upper > knee:
        tail, _ = integrate.quad(f, knee, upper, limit=200)
        total += tail
    return total


def log_partition(alpha, scale=1.0, support=None):
    """log of the normalizer of exp(-general_loss(x, alpha, scale)) over |x| <= support.

    Negative shapes are not normalizable on the whole line, so the density is
    restricted to a finite support (default: 20 scales either side).
    """
    if scale <= 0:
        raise ParameterError("scale must be positive")
    upper = _STANDARD_TRUNCATION if support is None else support / scale
    return math.log(scale) + math.log(2.0 * _half_integral(alpha, upper))


def _alpha_from_latent(u, lo, hi):
    return lo + (hi - lo) / (1 + math.exp(-u))


def _latent_from_alpha(a, lo, hi):
    p = (a - lo) / (hi - lo)
    return math.log(p / (1 - p))


def barron_fit(problem, config=None, alpha_range=(-7.0, 4.0), alpha_init=-4.5,
               scale_init=0.02, init=None, support=2.0, maxiter=None):
    """Comparison baseline: adaptive robust negative log-likelihood data term.

    Shape alpha (squashed into `alpha_range`) and scale are optimized jointly
    with shape, pose and root. Residual densities live on a fixed support of
    +-`support` meters, which keeps negative alphas proper and the likelihood
    bounded as the scale shrinks. L-BFGS-B runs for `maxiter` iterations,
    by default the total budget of the anneal schedule.
    """
    config = config or FitConfig(mode="barron")
    lo, hi = alpha_range
    if not lo < alpha_init < hi:
        raise ParameterError("alpha_init must lie inside alpha_range")
    state = init.copy() if init is not None else initial_state(problem, config)
    model, ae = problem.model, problem.ae
    obs = problem.observed
    blocks = ("beta", "z", "omega", "t_delta")
    n_body = flatten_state(state, blocks).size

    def nll_terms(rn, alpha, scale):
        return float(np.sum(general_loss(rn, alpha, scale))) + len(rn) * log_partition(alpha, scale, support)

    def fun(x):
        st = unflatten_state(x[:n_body], state, blocks)
        alpha = _alpha_from_latent(x[n_body], lo, hi)
        scale = math.exp(x[n_body + 1])
        Rw, dRw = rodrigues_with_jacobian(st.omega)
        fp = forward(model, st.beta, ae.decode(st.z), st.base_R @ Rw, st.root_t, keep_jacobian=True)
        diff = problem.targets[obs] - fp.landmarks[obs]
        rn = np.linalg.norm(diff, axis=1)
        nb, nz = _norm(st.beta), _norm(st.z)
        E = nll_terms(rn, alpha, scale) + config.lambda_beta * nb + config.lambda_z * nz
        # d loss / d r = (r / s^2) * (q / |a-2| + 1)^(a/2 - 1)
        q = (rn / scale) ** 2
        b = abs(alpha - 2) if alpha != 2 else 1.0
        dl = rn / scale**2 * (q / b + 1) ** (alpha / 2 - 1)
        unit = np.divide(diff, rn[:, None], out=np.zeros_like(diff), where=rn[:, None] > 0)
        g_lm = np.zeros_like(fp.landmarks)
        g_lm[obs] = -dl[:, None] * unit
        g = landmarks_vjp(model, fp, g_lm)
        g_beta = g["beta"] + (config.lambda_beta * st.beta / nb if nb > 0 else 0.0)
        g_z = ae.decode_vjp(st.z, g["theta"]) + (config.lambda_z * st.z / nz if nz > 0 else 0.0)
        g_omega = np.tensordot(st.base_R.T @ g["root_R"], dRw, axes=([0, 1], [0, 1]))
        g_t = st.base_R.T @ g["root_t"]
        # the two loss-shape coordinates are cheap: central differences on fixed residuals
        h = 1e-6
        ga = (nll_terms(rn, _alpha_from_latent(x[n_body] + h, lo, hi), scale)
              - nll_terms(rn, _alpha_from_latent(x[n_body] - h, lo, hi), scale)) / (2 * h)
        gs = (nll_terms(rn, alpha, math.exp(x[n_body + 1] + h))
              - nll_terms(rn, alpha, math.exp(x[n_body + 1] - h))) / (2 * h)
        if not math.isfinite(E):
            raise FloatingPointError("non-finite fit energy")
        return E, np.concatenate([g_beta, g_z, g_omega, g_t, [ga, gs]])

    x0 = np.concatenate([flatten_state(state, blocks),
                         [_latent_from_alpha(alpha_init, lo, hi), math.log(scale_init)]])
    trace = []
    res = optimize.minimize(fun, x0, jac=True, method="L-BFGS-B",
                            callback=lambda intermediate_result: trace.append(float(intermediate_result.fun)),
                            options={"maxiter": maxiter or sum(n for n, _ in config.anneal_schedule),
                                     "maxcor": 20, "gtol": config.gtol, "ftol": config.ftol})
    st = unflatten_state(res.x[:n_body], state, blocks)
    alpha = _alpha_from_latent(res.x[n_body], lo, hi)
    scale = math.exp(res.x[n_body + 1])
    fp = forward(model, st.beta, ae.decode(st.z), st.root_R, st.root_t)
    rn = np.linalg.norm(problem.targets[obs] - fp.landmarks[obs], axis=1)
    return FitResult(st.params(ae), st.z.copy(), np.full(len(obs), scale), obs, float(res.fun),
                     bool(res.success), [res.nit], rn, trace, alpha=alpha, scale=scale)


def default_prior(model):
    """Direct-pose prior: codes are the non-root joint rotations."""
    return PcaAutoencoder.articulated_identity(model.n_joints)
