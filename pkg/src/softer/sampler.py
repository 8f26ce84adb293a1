"""Gibbs sampler for soft tensor regression.

Each ``conditional_*`` function returns the parameters of a full conditional
for the current state; the matching ``Sampler.update_*`` method draws from
it.  Keeping the two apart is what lets the tests check every conditional
against :func:`softer.model.log_joint` by density ratios.

Sweep order: ``(μ, δ)``, ``τ²``, ``σ²``, the ``γ`` block (``γ``, ``τ_γ``,
then ``λ`` with ``w`` integrated out followed by ``w``), the coefficient
slices, ``ζ`` and, for symmetric variants, the signs ``ξ``.  In hard mode
``σ²`` and the slices are skipped and each ``γ_k^(d)`` is drawn from its
regression conditional instead.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import linalg
from scipy.special import expit

from .gig import GigParams, sample_gig
from .model import (
    VAR_FLOOR,
    ChainSamples,
    Dataset,
    Layout,
    NumericError,
    ParameterState,
    SofterConfig,
    compose_B,
    sample_prior_state,
)
from .tensor import ShapeError

__all__ = [
    "Prepared",
    "Sampler",
    "initial_state",
    "run_chain",
    "fit",
    "chain_seed",
    "conditional_mu_delta",
    "conditional_tau2",
    "conditional_sigma2",
    "conditional_gamma",
    "conditional_tau_gamma",
    "conditional_lambda",
    "conditional_w",
    "conditional_beta_slice",
    "conditional_gamma_hard",
    "conditional_zeta",
    "conditional_xi",
]

log = logging.getLogger(__name__)


class Prepared:
    """Dataset arrays arranged for the sampler (folded, flattened, slice Gram matrices)."""

    def __init__(self, dataset: Dataset, layout: Layout):
        if dataset.dims != layout.dims:
            raise ShapeError(f"dataset dims {dataset.dims} differ from config dims {layout.dims}")
        self.n = dataset.n
        self.p = dataset.p
        self.y = dataset.y
        self.Ct = np.hstack([np.ones((self.n, 1)), dataset.covariates])
        self.Xf = np.ascontiguousarray(layout.fold(dataset.predictors).reshape(self.n, layout.P))
        self.Xs = []
        self.gram = []
        for k in range(layout.K):
            xs_k, g_k = [], []
            for idx in layout.slice_index[k]:
                xs = np.ascontiguousarray(self.Xf[:, idx])
                xs_k.append(xs)
                g_k.append(xs.T @ xs)
            self.Xs.append(xs_k)
            self.gram.append(g_k)


def _tensor_term(state: ParameterState, prep: Prepared, layout: Layout) -> np.ndarray:
    prod = np.prod(state.beta, axis=1).reshape(layout.D, -1)
    if state.xi is not None:
        prod = prod * state.xi[:, None]
    return prep.Xf @ prod.sum(axis=0)


def residual(state: ParameterState, prep: Prepared, layout: Layout) -> np.ndarray:
    return prep.y - prep.Ct @ np.concatenate([[state.mu], state.delta]) - _tensor_term(state, prep, layout)


def _gaussian_from_precision(Q: np.ndarray, b: np.ndarray, rng: np.random.Generator | None,
                             block: str = "gaussian"):
    """Mean ``Q^{-1} b`` and (if ``rng``) one draw from ``N(Q^{-1} b, Q^{-1})``."""
    try:
        L = np.linalg.cholesky(Q)
    except np.linalg.LinAlgError:
        log.warning("Cholesky failed in %s; retrying with jitter", block)
        try:
            L = np.linalg.cholesky(Q + 1e-10 * np.eye(Q.shape[0]))
        except np.linalg.LinAlgError as exc:
            raise NumericError(f"precision matrix not positive definite in {block}", block=block) from exc
    mean = linalg.cho_solve((L, True), b, check_finite=False)
    if rng is None:
        return mean, None
    z = rng.standard_normal(b.shape[0])
    return mean, mean + linalg.solve_triangular(L.T, z, lower=False, check_finite=False)


# --- full conditionals ---------------------------------------------------

def conditional_mu_delta(state, prep: Prepared, layout: Layout, config: SofterConfig):
    """Mean and precision matrix of ``(μ, δ)``."""
    r_B = prep.y - _tensor_term(state, prep, layout)
    prec0 = 1.0 / config.hyper.prior_sd_mu_delta**2
    Q = prep.Ct.T @ prep.Ct / state.tau2 + prec0 * np.eye(prep.Ct.shape[1])
    b = prep.Ct.T @ r_B / state.tau2
    mean, _ = _gaussian_from_precision(Q, b, None)
    return mean, Q


def conditional_tau2(state, prep: Prepared, layout: Layout, config: SofterConfig):
    """Shape and scale of the inverse-Gamma conditional of ``τ²``."""
    r = residual(state, prep, layout)
    h = config.hyper
    return h.a_tau2 + 0.5 * prep.n, h.b_tau2 + 0.5 * float(r @ r)


def _beta_sq_dev(state, layout: Layout, k: int) -> np.ndarray:
    """Squared deviations from the row means over free entries, per component."""
    dev = (state.beta[:, k] - layout.centers(state.gamma, k)).reshape(layout.D, -1)[:, layout.free_flat]
    return np.sum(dev**2, axis=1)


def conditional_sigma2(state, layout: Layout, config: SofterConfig) -> GigParams:
    h = config.hyper
    b = np.array([float(np.sum(_beta_sq_dev(state, layout, k) / state.zeta)) for k in range(layout.K)])
    p = np.full(layout.K, h.a_sigma - layout.D * layout.n_free / 2.0)
    return GigParams(p, np.full(layout.K, 2.0 * h.b_sigma), b)


def _slice_sums(state, layout: Layout, k: int) -> np.ndarray:
    """Sum of the free entries of ``B_k^(d)`` in each mode-k slice: ``(D, p_k)``."""
    masked = state.beta[:, k] * layout.mask
    axes = tuple(a + 1 for a in range(layout.K) if a != k)
    return masked.sum(axis=axes) if axes else masked


def conditional_gamma(state, layout: Layout):
    """Means and variances of every ``γ`` entry (soft mode); entries are conditionally independent."""
    out = []
    zeta = state.zeta[:, None]
    for g in range(layout.n_groups):
        prec = 1.0 / (state.tau_gamma * zeta * state.w[g])
        num = np.zeros_like(prec)
        for k in layout.modes_of_group[g]:
            s2z = state.sigma2[k] * zeta
            prec = prec + layout.slice_count[k][None, :] / s2z
            num = num + _slice_sums(state, layout, k) / s2z
        out.append((num / prec, 1.0 / prec))
    return out


def conditional_tau_gamma(state, layout: Layout, config: SofterConfig) -> GigParams:
    h = config.hyper
    b = sum(float(np.sum(state.gamma[g] ** 2 / (state.zeta[:, None] * state.w[g]))) for g in range(layout.n_groups))
    p = h.a_taugamma - layout.D * sum(layout.group_len) / 2.0
    return GigParams(p, 2.0 * h.b_taugamma, b)


def conditional_lambda(state, layout: Layout, config: SofterConfig):
    """Gamma shape and rate of ``λ`` given everything except ``w``: arrays ``(D, G)``."""
    h = config.hyper
    scale = np.sqrt(state.tau_gamma * state.zeta)
    shape = np.array([[h.a_lambda + layout.group_len[g] for g in range(layout.n_groups)]] * layout.D, float)
    rate = np.stack([h.b_lambda + np.sum(np.abs(state.gamma[g]), axis=1) / scale
                     for g in range(layout.n_groups)], axis=1)
    return shape, rate


def conditional_w(state, layout: Layout) -> list[GigParams]:
    out = []
    for g in range(layout.n_groups):
        lam2 = np.broadcast_to(state.lam[:, g:g + 1] ** 2, state.gamma[g].shape)
        b = state.gamma[g] ** 2 / (state.tau_gamma * state.zeta[:, None])
        out.append(GigParams(np.full(b.shape, 0.5), lam2, b))
    return out


def conditional_zeta(state, layout: Layout, config: SofterConfig) -> GigParams:
    """Per-component ``giG`` conditional of an unnormalized ``ζ^(d)``."""
    h = config.hyper
    n_gamma = sum(layout.group_len)
    b = np.zeros(layout.D)
    for g in range(layout.n_groups):
        b += np.sum(state.gamma[g] ** 2 / (state.tau_gamma * state.w[g]), axis=1)
    if layout.hard:
        n_entries = n_gamma
    else:
        n_entries = layout.K * layout.n_free + n_gamma
        for k in range(layout.K):
            b += _beta_sq_dev(state, layout, k) / state.sigma2[k]
    p = np.full(layout.D, h.alpha / layout.D - n_entries / 2.0)
    return GigParams(p, np.zeros(layout.D), b)


def _other_modes(state, layout: Layout, k: int, d: int) -> np.ndarray:
    H = np.ones(layout.P)
    for l in range(layout.K):
        if l != k:
            H = H * state.beta[d, l].ravel()
    if state.xi is not None:
        H = H * state.xi[d]
    return H


def conditional_beta_slice(state, prep: Prepared, layout: Layout, k: int, d: int, j: int,
                           r: np.ndarray | None = None, H: np.ndarray | None = None):
    """Mean and precision of the free entries of slice ``j`` of ``B_k^(d)``.

    ``r`` is the current full residual (recomputed when omitted); the slice's
    own contribution is added back so the response excludes exactly the
    entries being drawn.
    """
    idx = layout.slice_index[k][j]
    if H is None:
        H = _other_modes(state, layout, k, d)
    if r is None:
        r = residual(state, prep, layout)
    h = H[idx]
    Xs = prep.Xs[k][j]
    old = state.beta[d, k].ravel()[idx]
    r_slice = r + Xs @ (h * old)
    s2z = state.sigma2[k] * state.zeta[d]
    center = state.gamma[layout.group_of_mode[k]][d, j]
    Q = prep.gram[k][j] * (h[:, None] * h[None, :] / state.tau2)
    Q.flat[::Q.shape[0] + 1] += 1.0 / s2z
    b = h * (Xs.T @ r_slice) / state.tau2 + center / s2z
    return Q, b, r_slice


def _hard_design(state, prep: Prepared, layout: Layout, k: int, d: int) -> np.ndarray:
    H = _other_modes(state, layout, k, d)
    Z = (prep.Xf * H).reshape(prep.n, *layout.dims)
    axes = tuple(a + 1 for a in range(layout.K) if a != k)
    return Z.sum(axis=axes) if axes else Z


def conditional_gamma_hard(state, prep: Prepared, layout: Layout, k: int, d: int,
                           r: np.ndarray | None = None):
    """Precision, linear term and partial residual of ``γ_k^(d)`` in hard mode."""
    Z = _hard_design(state, prep, layout, k, d)
    if r is None:
        r = residual(state, prep, layout)
    r_part = r + Z @ state.gamma[k][d]
    prior_prec = 1.0 / (state.tau_gamma * state.zeta[d] * state.w[k][d])
    Q = Z.T @ Z / state.tau2 + np.diag(prior_prec)
    b = Z.T @ r_part / state.tau2
    return Q, b, r_part, Z


def conditional_xi(state, prep: Prepared, layout: Layout, d: int, r: np.ndarray | None = None):
    """Log odds of ``ξ_d = +1`` given the rest, the component's contribution and the residual without it."""
    if r is None:
        r = residual(state, prep, layout)
    c = prep.Xf @ np.prod(state.beta[d], axis=0).ravel()
    r_wo = r + state.xi[d] * c
    return 2.0 * float(r_wo @ c) / state.tau2, c, r_wo


# --- state initialisation -------------------------------------------------

def initial_state(config: SofterConfig, dataset: Dataset, rng: np.random.Generator,
                  layout: Layout | None = None) -> ParameterState:
    """Prior-dispersed start: γ and β drawn from the prior around fixed scale parameters."""
    L = layout or Layout(config)
    h = config.hyper
    state = sample_prior_state(config, rng, p=dataset.p, layout=L)
    state.zeta = np.full(L.D, 1.0 / L.D)
    state.tau_gamma = h.a_taugamma / h.b_taugamma
    state.lam = np.full((L.D, L.n_groups), h.a_lambda / h.b_lambda)
    state.w = [np.full((L.D, n), 2.0 / (h.a_lambda / h.b_lambda) ** 2) for n in L.group_len]
    state.sigma2 = np.full(L.K, max(h.a_sigma / h.b_sigma, VAR_FLOOR))
    for g in range(L.n_groups):
        sd = np.sqrt(state.tau_gamma * state.zeta[:, None] * state.w[g])
        state.gamma[g] = sd * rng.standard_normal(state.gamma[g].shape)
    for k in range(L.K):
        sd = np.sqrt(state.sigma2[k] * state.zeta).reshape((L.D,) + (1,) * L.K)
        noise = 0.0 if L.hard else sd * rng.standard_normal((L.D, *L.dims))
        state.beta[:, k] = L.centers(state.gamma, k) + noise
    if L.symmetric:
        from .symmetric import enforce_symmetry

        state.beta = enforce_symmetry(state.beta, L.symmetry)
    state.tau2 = 1.0
    state.mu = float(dataset.y.mean()) if dataset.n else 0.0
    state.delta = np.zeros(dataset.p)
    return state


# --- the sweep ------------------------------------------------------------

class Sampler:
    """Owns one chain's state and RNG stream and applies Gibbs sweeps."""

    def __init__(self, config: SofterConfig, dataset: Dataset, rng: np.random.Generator,
                 state: ParameterState | None = None):
        self.config = config
        self.layout = Layout(config)
        if self.layout.symmetric:
            from .symmetric import ingest_symmetric

            dataset = ingest_symmetric(dataset, config.symmetry, config.sym_tol)
        self.dataset = dataset
        self.prep = Prepared(dataset, self.layout)
        self.rng = rng
        self.state = state if state is not None else initial_state(config, dataset, rng, self.layout)
        self.iteration = 0

    # each update leaves self.state consistent with its own draw
    def update_mu_delta(self):
        mean, Q = conditional_mu_delta(self.state, self.prep, self.layout, self.config)
        _, draw = _gaussian_from_precision(Q, Q @ mean, self.rng, "mu_delta")
        self.state.mu, self.state.delta = float(draw[0]), draw[1:]

    def update_tau2(self):
        shape, scale = conditional_tau2(self.state, self.prep, self.layout, self.config)
        self.state.tau2 = max(scale / self.rng.gamma(shape), VAR_FLOOR)

    def update_sigma2(self):
        c = conditional_sigma2(self.state, self.layout, self.config)
        self.state.sigma2 = np.maximum(sample_gig(c.p, c.a, c.b, self.rng), VAR_FLOOR)

    def update_gamma_block(self):
        st, L = self.state, self.layout
        if not L.hard:
            for g, (mean, var) in enumerate(conditional_gamma(st, L)):
                st.gamma[g] = mean + np.sqrt(var) * self.rng.standard_normal(mean.shape)
        self._update_scales()

    def _update_scales(self):
        st, L = self.state, self.layout
        c = conditional_tau_gamma(st, L, self.config)
        st.tau_gamma = max(sample_gig(c.p, c.a, c.b, self.rng), VAR_FLOOR)
        shape, rate = conditional_lambda(st, L, self.config)
        st.lam = self.rng.gamma(shape, 1.0 / rate)
        for g, c in enumerate(conditional_w(st, L)):
            st.w[g] = np.maximum(sample_gig(c.p, c.a, c.b, self.rng), VAR_FLOOR)

    def update_beta_slices(self):
        st, L, prep = self.state, self.layout, self.prep
        r = residual(st, prep, L)
        for k in range(L.K):
            for d in range(L.D):
                H = _other_modes(st, L, k, d)
                flat = st.beta[d, k].reshape(-1)
                for j in range(L.dims[k]):
                    idx = L.slice_index[k][j]
                    if idx.size == 0:
                        continue
                    Q, b, r_slice = conditional_beta_slice(st, prep, L, k, d, j, r=r, H=H)
                    _, new = _gaussian_from_precision(Q, b, self.rng, "beta")
                    flat[idx] = new
                    r = r_slice - prep.Xs[k][j] @ (H[idx] * new)
        if L.symmetric:
            from .symmetric import enforce_symmetry

            st.beta = enforce_symmetry(st.beta, L.symmetry)

    def update_gamma_hard(self):
        st, L, prep = self.state, self.layout, self.prep
        r = residual(st, prep, L)
        for k in range(L.K):
            for d in range(L.D):
                Q, b, r_part, Z = conditional_gamma_hard(st, prep, L, k, d, r=r)
                _, new = _gaussian_from_precision(Q, b, self.rng, "gamma")
                st.gamma[k][d] = new
                st.beta[d, k] = L.centers(st.gamma, k)[d]
                r = r_part - Z @ new
        self._update_scales()

    def update_zeta(self):
        st, L = self.state, self.layout
        if L.D == 1:
            st.zeta = np.ones(1)
            return
        c = conditional_zeta(st, L, self.config)
        if self.config.sampler.zeta_move == "normalize":
            z = sample_gig(c.p, c.a, c.b, self.rng)
            z = np.maximum(z / z.sum(), VAR_FLOOR)
            st.zeta = z / z.sum()
        else:
            st.zeta = _zeta_pair_slice(st.zeta, c.p, c.b, self.rng)

    def update_xi(self):
        st, L = self.state, self.layout
        r = residual(st, self.prep, L)
        for d in range(L.D):
            log_odds, c, r_wo = conditional_xi(st, self.prep, L, d, r=r)
            st.xi[d] = 1.0 if self.rng.random() < expit(log_odds) else -1.0
            r = r_wo - st.xi[d] * c

    def sweep(self):
        L = self.layout
        steps = [("mu_delta", self.update_mu_delta), ("tau2", self.update_tau2)]
        if L.hard:
            steps += [("gamma", self.update_gamma_hard)]
        else:
            steps += [("sigma2", self.update_sigma2), ("gamma", self.update_gamma_block),
                      ("beta", self.update_beta_slices)]
        steps.append(("zeta", self.update_zeta))
        if L.symmetric:
            steps.append(("xi", self.update_xi))
        self.iteration += 1
        for block, step in steps:
            step()
            self._check(block)

    def _check(self, block: str):
        st = self.state
        ok = (math.isfinite(st.mu) and math.isfinite(st.tau2) and math.isfinite(st.tau_gamma)
              and np.all(np.isfinite(st.beta)) and all(np.all(np.isfinite(g)) for g in st.gamma)
              and all(np.all(np.isfinite(w)) for w in st.w) and np.all(np.isfinite(st.zeta))
              and np.all(np.isfinite(st.sigma2)) and np.all(np.isfinite(st.lam)))
        if not ok:
            raise NumericError(f"non-finite state after {block} update at iteration {self.iteration}",
                               block=block, iteration=self.iteration)

    def coefficient(self) -> np.ndarray:
        return compose_B(self.state, self.layout)


def _zeta_pair_slice(zeta: np.ndarray, p: np.ndarray, b: np.ndarray, rng: np.random.Generator,
                     width: float = 2.0, max_steps: int = 50) -> np.ndarray:
    """Exact update of ``ζ`` on the simplex by slice sampling pairwise splits.

    For each pair ``(i, j)`` the sum ``s = ζ_i + ζ_j`` is held fixed and the
    share ``u = ζ_i / s`` is resampled on the logit scale from the target
    ``∏_d ζ_d^(p_d - 1) exp(-b_d / (2 ζ_d))`` restricted to the simplex.
    """
    zeta = zeta.copy()
    D = zeta.size
    for i in range(D - 1):
        for j in range(i + 1, D):
            s = zeta[i] + zeta[j]

            def logf(t):
                u = expit(t)
                zi, zj = s * u, s * (1.0 - u)
                if zi <= 0 or zj <= 0:
                    return -np.inf
                return ((p[i] - 1) * math.log(zi) + (p[j] - 1) * math.log(zj)
                        - b[i] / (2 * zi) - b[j] / (2 * zj) + math.log(u) + math.log1p(-u))

            u0 = min(max(zeta[i] / s, 1e-300), 1 - 1e-16)
            t0 = math.log(u0) - math.log1p(-u0)
            level = logf(t0) - rng.exponential()
            lo = t0 - width * rng.random()
            hi = lo + width
            steps = 0
            while steps < max_steps and logf(lo) > level:
                lo -= width
                steps += 1
            steps = 0
            while steps < max_steps and logf(hi) > level:
                hi += width
                steps += 1
            while True:
                t = lo + (hi - lo) * rng.random()
                if logf(t) > level:
                    break
                if t < t0:
                    lo = t
                else:
                    hi = t
                if hi - lo < 1e-14:
                    t = t0
                    break
            u = expit(t)
            zeta[i], zeta[j] = max(s * u, VAR_FLOOR), max(s * (1.0 - u), VAR_FLOOR)
    return zeta / zeta.sum()


# --- chain driver ---------------------------------------------------------

def chain_seed(seed: int, chain: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed, spawn_key=(chain,))


@dataclass
class _Recorder:
    mu: np.ndarray
    delta: np.ndarray
    tau2: np.ndarray
    B: np.ndarray
    sigma2: np.ndarray
    zeta: np.ndarray
    xi: np.ndarray | None
    count: int = 0

    @classmethod
    def allocate(cls, n: int, p: int, layout: Layout):
        return cls(np.zeros(n), np.zeros((n, p)), np.zeros(n), np.zeros((n, *layout.dims)),
                   np.zeros((n, layout.K)), np.zeros((n, layout.D)),
                   np.zeros((n, layout.D)) if layout.symmetric else None)

    def add(self, sampler: Sampler):
        i, st = self.count, sampler.state
        self.mu[i], self.delta[i], self.tau2[i] = st.mu, st.delta, st.tau2
        self.B[i] = sampler.coefficient()
        self.sigma2[i], self.zeta[i] = st.sigma2, st.zeta
        if self.xi is not None:
            self.xi[i] = st.xi
        self.count += 1


def run_chain(config: SofterConfig, dataset: Dataset, chain: int = 0,
              checkpoint_path: str | os.PathLike | None = None, resume: bool = False,
              stop_after: int | None = None) -> ChainSamples | None:
    """Run one seeded chain and return its thinned post-burn-in draws.

    With ``checkpoint_path`` and ``config.sampler.checkpoint_every > 0`` the
    full chain state (including the RNG) is written every that many
    iterations; ``resume=True`` continues from that file and produces the
    same draws as an uninterrupted run.  ``stop_after`` ends the run early
    (after checkpointing) and returns ``None``; it exists to exercise resumption.
    """
    from . import fileio as sio

    settings = config.sampler
    layout = Layout(config)
    rng = np.random.Generator(np.random.PCG64(chain_seed(settings.seed, chain)))
    data_sum = sio.dataset_checksum(dataset)
    if resume:
        if checkpoint_path is None or not Path(checkpoint_path).exists():
            raise FileNotFoundError("resume requested without an existing checkpoint")
        ck = sio.load_checkpoint(checkpoint_path, config, data_sum, chain)
        sampler = Sampler(config, dataset, rng, state=ck["state"])
        rng.bit_generator.state = ck["rng_state"]
        sampler.iteration = ck["iteration"]
        rec = ck["recorder"]
    else:
        sampler = Sampler(config, dataset, rng)
        rec = _Recorder.allocate(settings.n_records, dataset.p, layout)

    every = settings.checkpoint_every if checkpoint_path is not None else 0
    while sampler.iteration < settings.iterations:
        sampler.sweep()
        t = sampler.iteration
        if t > settings.burn_in and (t - settings.burn_in) % settings.thin == 0:
            rec.add(sampler)
        if every and t % every == 0:
            sio.save_checkpoint(checkpoint_path, config, data_sum, chain, sampler, rec)
        if stop_after is not None and t >= stop_after:
            return None
    return ChainSamples(
        mu=rec.mu, delta=rec.delta, tau2=rec.tau2, B=rec.B, sigma2=rec.sigma2, zeta=rec.zeta,
        xi=rec.xi, config_hash=config.model_hash(), seed=settings.seed, chain=chain,
        iterations=settings.iterations, burn_in=settings.burn_in, thin=settings.thin,
    )


def _run_one(args):
    config, dataset, chain = args
    return run_chain(config, dataset, chain)


def pool_width() -> int:
    env = os.environ.get("SOFTER_THREADS")
    width = os.cpu_count() or 1
    if env:
        width = min(width, max(1, int(env)))
    return width


def fit(config: SofterConfig, dataset: Dataset, workers: int | None = None) -> list[ChainSamples]:
    """Run ``config.sampler.chains`` independent chains (in parallel when workers > 1)."""
    n_chains = config.sampler.chains
    workers = min(workers or pool_width(), n_chains)
    jobs = [(config, dataset, c) for c in range(n_chains)]
    if workers <= 1:
        return [_run_one(j) for j in jobs]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(_run_one, jobs))
