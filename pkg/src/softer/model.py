"""Regression model, latent state and log joint density.

The outcome model is ``y_i = μ + C_iᵀδ + <X_i, B>_F + ε_i`` with Gaussian
noise of variance ``τ²`` and ``B = Σ_d ξ_d B_1^(d) ∘ ... ∘ B_K^(d)``
(``ξ ≡ 1`` outside the symmetric variants).

A :class:`Layout` describes which coefficient entries are free parameters
and which ``γ`` vector each mode is centred on.  For unrestricted tensors
every entry is free and mode ``k`` has its own ``γ_k``.  In the symmetric
variants only entries with ``j_1 > j_2`` are free, modes 1 and 2 share one
``γ`` vector, and the predictor is folded onto the lower triangle (see
:meth:`Layout.fold`), so one sampler serves all three variants.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .calibration import Hyperparameters, default_hyperparameters
from .tensor import ShapeError

__all__ = [
    "NumericError",
    "SYMMETRY_MODES",
    "Dataset",
    "SamplerSettings",
    "SofterConfig",
    "default_config",
    "Layout",
    "ParameterState",
    "ChainSamples",
    "compose_B",
    "linear_predictor",
    "sample_prior_entries",
    "log_joint",
    "sample_prior_state",
]

SYMMETRY_MODES = ("none", "symmetric", "semi-symmetric")
VAR_FLOOR = 1e-12


class NumericError(ArithmeticError):
    """A density or state became non-finite; ``block`` names the culprit."""

    def __init__(self, message: str, block: str | None = None, iteration: int | None = None):
        super().__init__(message)
        self.block = block
        self.iteration = iteration


@dataclass
class Dataset:
    """Outcomes, scalar covariates and tensor predictors for ``n`` units."""

    y: np.ndarray
    predictors: np.ndarray  # (n, p_1, ..., p_K)
    covariates: np.ndarray | None = None  # (n, p); None means p = 0

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        X = self.predictors
        if isinstance(X, (list, tuple)) and len(X) and not isinstance(X[0], (int, float)):
            shapes = {np.shape(x) for x in X}
            if len(shapes) > 1:
                raise ShapeError(f"predictors have differing dims: {sorted(shapes)}")
        X = np.asarray(X, dtype=np.float64)
        if X.ndim < 2:
            raise ShapeError("predictors must have shape (n, p_1, ..., p_K)")
        self.predictors = X
        n = self.y.shape[0]
        if X.shape[0] != n:
            raise ShapeError(f"{X.shape[0]} predictor tensors for {n} outcomes")
        C = self.covariates
        C = np.zeros((n, 0)) if C is None else np.asarray(C, dtype=np.float64)
        if C.ndim == 1:
            C = C.reshape(n, -1) if n else C.reshape(0, 0)
        if C.shape[0] != n:
            raise ShapeError(f"{C.shape[0]} covariate rows for {n} outcomes")
        self.covariates = C
        for name, arr in (("y", self.y), ("covariates", C), ("predictors", X)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite entry in {name}")

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(self.predictors.shape[1:])

    @property
    def p(self) -> int:
        return self.covariates.shape[1]

    @classmethod
    def empty(cls, dims: Sequence[int], p: int = 0) -> "Dataset":
        return cls(np.zeros(0), np.zeros((0, *dims)), np.zeros((0, p)))


@dataclass
class SamplerSettings:
    iterations: int = 5000
    burn_in: int = 2500
    thin: int = 1
    chains: int = 2
    seed: int = 0
    checkpoint_every: int = 0
    # "normalize" follows the published ζ move; "slice" is the exact alternative
    zeta_move: str = "slice"

    def __post_init__(self):
        if self.iterations < 1 or not 0 <= self.burn_in < self.iterations:
            raise ValueError("need iterations >= 1 and 0 <= burn_in < iterations")
        if self.thin < 1 or self.chains < 1:
            raise ValueError("thin and chains must be positive")
        if self.zeta_move not in ("normalize", "slice"):
            raise ValueError(f"unknown zeta_move {self.zeta_move!r}")

    @property
    def n_records(self) -> int:
        return (self.iterations - self.burn_in) // self.thin


@dataclass
class SofterConfig:
    dims: tuple[int, ...]
    hyper: Hyperparameters = field(default_factory=Hyperparameters)
    symmetry: str = "none"
    hard_mode: bool = False
    family: str = "gaussian"
    sampler: SamplerSettings = field(default_factory=SamplerSettings)
    # max |X - Xᵀ| accepted for symmetric predictors (after zeroing diagonals)
    sym_tol: float = 0.0

    def __post_init__(self):
        self.dims = tuple(int(p) for p in self.dims)
        if not self.dims or any(p < 1 for p in self.dims):
            raise ShapeError(f"invalid dims {self.dims}")
        if self.family != "gaussian":
            raise ValueError(f"outcome family {self.family!r} is not supported")
        if self.symmetry not in SYMMETRY_MODES:
            raise ValueError(f"symmetry must be one of {SYMMETRY_MODES}")
        if self.symmetry == "symmetric" and (self.K != 2 or self.dims[0] != self.dims[1]):
            raise ShapeError("symmetric mode needs a square matrix predictor")
        if self.symmetry == "semi-symmetric" and (self.K != 3 or self.dims[0] != self.dims[1]):
            raise ShapeError("semi-symmetric mode needs an R x R x p predictor")
        if not self.sym_tol >= 0:
            raise ValueError("sym_tol must be non-negative")
        if self.hard_mode and self.symmetry != "none":
            raise ValueError("hard_mode is only available without symmetry")

    @property
    def K(self) -> int:
        return len(self.dims)

    @property
    def D(self) -> int:
        return self.hyper.D

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dims"] = list(self.dims)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SofterConfig":
        d = dict(d)
        hyper = Hyperparameters.from_dict(d.pop("hyper", {}))
        sampler = SamplerSettings(**d.pop("sampler", {}))
        return cls(dims=tuple(d.pop("dims")), hyper=hyper, sampler=sampler, **d)

    def model_hash(self) -> str:
        """Hash of everything that defines the target posterior and the RNG stream."""
        d = self.to_dict()
        d["sampler"].pop("checkpoint_every")
        payload = json.dumps(d, sort_keys=True, allow_nan=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


def default_config(dims: Sequence[int], D: int = 3, **kwargs) -> SofterConfig:
    """Configuration with the calibrated default hyperparameters."""
    sampler = kwargs.pop("sampler", None) or SamplerSettings()
    return SofterConfig(dims=tuple(dims), hyper=default_hyperparameters(len(dims), D),
                        sampler=sampler, **kwargs)


class Layout:
    """Index bookkeeping shared by the density, the sampler and the variants."""

    def __init__(self, config: SofterConfig):
        self.dims = config.dims
        self.K = config.K
        self.D = config.D
        self.P = int(np.prod(self.dims))
        self.symmetry = config.symmetry
        self.hard = config.hard_mode
        if self.symmetry == "none":
            self.group_of_mode = tuple(range(self.K))
            mask = np.ones(self.dims, dtype=bool)
        else:
            self.group_of_mode = (0, 0) if self.K == 2 else (0, 0, 1)
            R = self.dims[0]
            lower = np.tri(R, R, -1, dtype=bool)
            mask = np.broadcast_to(lower.reshape(R, R, *([1] * (self.K - 2))), self.dims).copy()
        self.mask = mask
        self.free_flat = np.flatnonzero(mask.ravel())
        self.n_free = int(self.free_flat.size)
        self.n_groups = max(self.group_of_mode) + 1
        self.group_len = tuple(self.dims[self.group_of_mode.index(g)] for g in range(self.n_groups))
        self.modes_of_group = tuple(
            tuple(k for k in range(self.K) if self.group_of_mode[k] == g) for g in range(self.n_groups)
        )
        flat_pos = np.arange(self.P).reshape(self.dims)
        self.slice_index = []
        self.slice_count = []
        for k in range(self.K):
            idx = [np.take(flat_pos, j, axis=k)[np.take(mask, j, axis=k)].ravel() for j in range(self.dims[k])]
            self.slice_index.append(idx)
            self.slice_count.append(np.array([len(i) for i in idx], dtype=float))

    @property
    def symmetric(self) -> bool:
        return self.symmetry != "none"

    def fold(self, X: np.ndarray) -> np.ndarray:
        """Predictors as seen by the free entries: ``<fold(X), B> = <X, B>``.

        For symmetric variants ``X + X^T`` (modes 1-2) restricted to the
        strict lower triangle; otherwise ``X`` itself.
        """
        if not self.symmetric:
            return X
        Xt = np.swapaxes(X, 1, 2)
        return (X + Xt) * self.mask

    def centers(self, gamma: list[np.ndarray], k: int) -> np.ndarray:
        """Mean tensor of ``B_k^(d)`` for all ``d``: shape ``(D, *dims)``."""
        g = gamma[self.group_of_mode[k]]
        shape = [self.D] + [1] * self.K
        shape[k + 1] = self.dims[k]
        return np.broadcast_to(g.reshape(shape), (self.D, *self.dims))


@dataclass
class ParameterState:
    mu: float
    delta: np.ndarray
    tau2: float
    gamma: list  # per γ-group, array (D, len_g)
    beta: np.ndarray  # (D, K, *dims); entries outside the free mask are mirrors or zero
    sigma2: np.ndarray  # (K,)
    zeta: np.ndarray  # (D,)
    w: list  # per γ-group, array (D, len_g)
    lam: np.ndarray  # (D, n_groups)
    tau_gamma: float
    xi: np.ndarray | None = None  # (D,) in {-1, +1}, symmetric variants only

    def copy(self) -> "ParameterState":
        return ParameterState(
            mu=float(self.mu), delta=self.delta.copy(), tau2=float(self.tau2),
            gamma=[g.copy() for g in self.gamma], beta=self.beta.copy(),
            sigma2=self.sigma2.copy(), zeta=self.zeta.copy(), w=[w.copy() for w in self.w],
            lam=self.lam.copy(), tau_gamma=float(self.tau_gamma),
            xi=None if self.xi is None else self.xi.copy(),
        )

    def to_arrays(self) -> dict[str, np.ndarray]:
        out = {
            "mu": np.array([self.mu]), "delta": self.delta, "tau2": np.array([self.tau2]),
            "beta": self.beta, "sigma2": self.sigma2, "zeta": self.zeta, "lam": self.lam,
            "tau_gamma": np.array([self.tau_gamma]),
        }
        for g, (gam, w) in enumerate(zip(self.gamma, self.w)):
            out[f"gamma{g}"] = gam
            out[f"w{g}"] = w
        if self.xi is not None:
            out["xi"] = self.xi
        return out

    @classmethod
    def from_arrays(cls, arrs: dict[str, np.ndarray]) -> "ParameterState":
        G = sum(1 for key in arrs if key.startswith("gamma"))
        return cls(
            mu=float(arrs["mu"][0]), delta=np.array(arrs["delta"]), tau2=float(arrs["tau2"][0]),
            gamma=[np.array(arrs[f"gamma{g}"]) for g in range(G)], beta=np.array(arrs["beta"]),
            sigma2=np.array(arrs["sigma2"]), zeta=np.array(arrs["zeta"]),
            w=[np.array(arrs[f"w{g}"]) for g in range(G)], lam=np.array(arrs["lam"]),
            tau_gamma=float(arrs["tau_gamma"][0]), xi=np.array(arrs["xi"]) if "xi" in arrs else None,
        )


@dataclass
class ChainSamples:
    """Thinned post-burn-in draws of one chain, with provenance."""

    mu: np.ndarray  # (S,)
    delta: np.ndarray  # (S, p)
    tau2: np.ndarray  # (S,)
    B: np.ndarray  # (S, *dims)
    sigma2: np.ndarray  # (S, K)
    zeta: np.ndarray  # (S, D)
    xi: np.ndarray | None = None  # (S, D)
    config_hash: str = ""
    seed: int = 0
    chain: int = 0
    iterations: int = 0
    burn_in: int = 0
    thin: int = 1

    @property
    def n_draws(self) -> int:
        return self.mu.shape[0]

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(self.B.shape[1:])

    def arrays(self) -> dict[str, np.ndarray]:
        out = {"mu": self.mu, "delta": self.delta, "tau2": self.tau2, "B": self.B,
               "sigma2": self.sigma2, "zeta": self.zeta}
        if self.xi is not None:
            out["xi"] = self.xi
        return out

    def meta(self) -> dict:
        return {"config_hash": self.config_hash, "seed": self.seed, "chain": self.chain,
                "iterations": self.iterations, "burn_in": self.burn_in, "thin": self.thin}


def compose_B(state: ParameterState, layout: Layout) -> np.ndarray:
    """Coefficient tensor of a state; symmetric variants are mirrored in full."""
    prod = np.prod(state.beta, axis=1)
    if layout.symmetric:
        prod = prod * layout.mask
        prod = prod + np.swapaxes(prod, 1, 2)
    if state.xi is not None:
        prod = prod * state.xi.reshape((-1,) + (1,) * layout.K)
    return prod.sum(axis=0)


def linear_predictor(state: ParameterState, dataset: Dataset, i: int,
                     layout: Layout | None = None) -> float:
    B = compose_B(state, layout) if layout is not None else np.prod(state.beta, axis=1).sum(axis=0)
    if dataset.predictors.shape[1:] != B.shape:
        raise ShapeError("state and dataset dims differ")
    Ci = dataset.covariates[i]
    return float(state.mu + Ci @ state.delta + np.dot(dataset.predictors[i].ravel(), B.ravel()))


def _finite(value: float, block: str) -> float:
    if not math.isfinite(value):
        raise NumericError(f"non-finite log density in block {block!r}", block=block)
    return value


def log_joint_blocks(state: ParameterState, dataset: Dataset, config: SofterConfig,
                     layout: Layout | None = None, marginalize_w: bool = False) -> dict[str, float]:
    """Per-block log densities (up to state-independent constants)."""
    L = layout or Layout(config)
    h = config.hyper
    out: dict[str, float] = {}

    B = compose_B(state, L)
    resid = dataset.y - state.mu - dataset.covariates @ state.delta - dataset.predictors.reshape(dataset.n, B.size) @ B.ravel()
    out["likelihood"] = -0.5 * dataset.n * math.log(state.tau2) - 0.5 * float(resid @ resid) / state.tau2

    s0 = h.prior_sd_mu_delta**2
    out["mu_delta"] = -0.5 * (state.mu**2 + float(state.delta @ state.delta)) / s0
    out["tau2"] = -(h.a_tau2 + 1.0) * math.log(state.tau2) - h.b_tau2 / state.tau2

    zeta = state.zeta
    if not L.hard:
        lb = 0.0
        for k in range(L.K):
            dev = (state.beta[:, k] - L.centers(state.gamma, k)).reshape(L.D, -1)[:, L.free_flat]
            var = state.sigma2[k] * zeta
            lb += float(np.sum(-0.5 * L.n_free * np.log(var) - 0.5 * np.sum(dev**2, axis=1) / var))
        out["beta"] = lb
        if math.isfinite(h.b_sigma):
            out["sigma2"] = float(np.sum((h.a_sigma - 1.0) * np.log(state.sigma2) - h.b_sigma * state.sigma2))

    lg = lw = 0.0
    for g in range(L.n_groups):
        gam, w, lam = state.gamma[g], state.w[g], state.lam[:, g]
        if marginalize_w:
            s = np.sqrt(state.tau_gamma * zeta)[:, None]
            lg += float(np.sum(np.log(lam[:, None] / (2 * s)) - lam[:, None] * np.abs(gam) / s))
        else:
            var = state.tau_gamma * zeta[:, None] * w
            lg += float(np.sum(-0.5 * np.log(var) - 0.5 * gam**2 / var))
            lw += float(np.sum(np.log(lam[:, None] ** 2 / 2) - lam[:, None] ** 2 * w / 2))
    out["gamma"] = lg
    if not marginalize_w:
        out["w"] = lw
    out["lambda"] = float(np.sum((h.a_lambda - 1.0) * np.log(state.lam) - h.b_lambda * state.lam))
    out["tau_gamma"] = (h.a_taugamma - 1.0) * math.log(state.tau_gamma) - h.b_taugamma * state.tau_gamma
    out["zeta"] = float(np.sum((h.alpha / L.D - 1.0) * np.log(zeta)))
    return {k: _finite(v, k) for k, v in out.items()}


def log_joint(state: ParameterState, dataset: Dataset, config: SofterConfig,
              layout: Layout | None = None, marginalize_w: bool = False) -> float:
    """Log of likelihood times the full prior hierarchy, up to a constant.

    With ``marginalize_w`` the exponential mixing weights are integrated out
    and each ``γ`` carries its Laplace marginal instead.  In hard mode the
    coefficient contributions are tied to ``γ`` and contribute no density.
    """
    return math.fsum(log_joint_blocks(state, dataset, config, layout, marginalize_w).values())


def _tie_hard(state: ParameterState, layout: Layout) -> None:
    for k in range(layout.K):
        state.beta[:, k] = layout.centers(state.gamma, k)


def sample_prior_state(config: SofterConfig, rng: np.random.Generator, p: int = 0,
                       layout: Layout | None = None) -> ParameterState:
    """One joint draw of every latent parameter from the prior."""
    L = layout or Layout(config)
    h = config.hyper
    D = L.D
    zeta = rng.dirichlet(np.full(D, h.alpha / D)) if D > 1 else np.ones(1)
    zeta = np.maximum(zeta, VAR_FLOOR)
    tau_gamma = rng.gamma(h.a_taugamma, 1.0 / h.b_taugamma)
    lam = rng.gamma(h.a_lambda, 1.0 / h.b_lambda, size=(D, L.n_groups))
    gamma, w = [], []
    for g in range(L.n_groups):
        wg = rng.exponential(2.0 / lam[:, g:g + 1] ** 2, size=(D, L.group_len[g]))
        w.append(wg)
        gamma.append(rng.standard_normal((D, L.group_len[g])) * np.sqrt(tau_gamma * zeta[:, None] * wg))
    if math.isfinite(h.b_sigma):
        sigma2 = rng.gamma(h.a_sigma, 1.0 / h.b_sigma, size=L.K)
    else:
        sigma2 = np.full(L.K, VAR_FLOOR)
    beta = np.empty((D, L.K, *L.dims))
    for k in range(L.K):
        sd = np.sqrt(sigma2[k] * zeta).reshape((D,) + (1,) * L.K)
        beta[:, k] = L.centers(gamma, k) + sd * rng.standard_normal((D, *L.dims))
    sd0 = h.prior_sd_mu_delta
    state = ParameterState(
        mu=float(sd0 * rng.standard_normal()), delta=sd0 * rng.standard_normal(p),
        tau2=float(h.b_tau2 / rng.gamma(h.a_tau2)), gamma=gamma, beta=beta,
        sigma2=np.maximum(sigma2, VAR_FLOOR), zeta=zeta, w=w, lam=lam, tau_gamma=float(tau_gamma),
        xi=rng.choice([-1.0, 1.0], size=D) if L.symmetric else None,
    )
    if L.hard:
        _tie_hard(state, L)
    elif L.symmetric:
        from .symmetric import enforce_symmetry

        state.beta = enforce_symmetry(state.beta, L.symmetry)
    return state


def sample_prior_entries(config: SofterConfig, entries: Sequence[Sequence[int]], size: int,
                         rng: np.random.Generator) -> np.ndarray:
    """Independent prior draws of selected entries of ``B``, vectorized over draws.

    Only the parameters the requested entries depend on are drawn, so this is
    much cheaper than repeated :func:`sample_prior_state` calls.  Returns an
    array of shape ``(size, len(entries))``.  Unrestricted layouts only.
    """
    L = Layout(config)
    if L.symmetric:
        raise ValueError("sample_prior_entries supports unrestricted layouts only")
    idx = np.asarray(entries, dtype=int).reshape(len(entries), -1)
    if idx.shape[1] != L.K or np.any(idx < 0) or np.any(idx >= np.asarray(L.dims)):
        raise ShapeError(f"entries must be 0-based indices into a tensor of dims {L.dims}")
    h = config.hyper
    D = L.D
    zeta = rng.dirichlet(np.full(D, h.alpha / D), size=size) if D > 1 else np.ones((size, 1))
    zeta = np.maximum(zeta, VAR_FLOOR)[:, :, None]
    tau_gamma = rng.gamma(h.a_taugamma, 1.0 / h.b_taugamma, size=(size, 1, 1))
    out = np.ones((size, D, len(idx)))
    for k in range(L.K):
        lam = rng.gamma(h.a_lambda, 1.0 / h.b_lambda, size=(size, D, 1))
        rows, where = np.unique(idx[:, k], return_inverse=True)
        w = rng.exponential(2.0 / lam**2, size=(size, D, rows.size))
        beta = (rng.standard_normal((size, D, rows.size)) * np.sqrt(tau_gamma * zeta * w))[:, :, where]
        if not L.hard and math.isfinite(h.b_sigma):
            sigma2 = np.maximum(rng.gamma(h.a_sigma, 1.0 / h.b_sigma, size=(size, 1, 1)), VAR_FLOOR)
            beta = beta + np.sqrt(sigma2 * zeta) * rng.standard_normal((size, D, len(idx)))
        out *= beta
    return out.sum(axis=1)
