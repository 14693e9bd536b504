"""Multinomial No-U-Turn sampler with Stan-style warmup adaptation.

The transition follows the multinomial variant of NUTS: trajectories are
doubled in a random direction, points are weighted by ``exp(-H)``, the
top level uses biased progressive sampling and subtrees uniform
progressive sampling. Termination uses the generalised U-turn criterion,
also checked across the two halves of every merged subtree.

Warmup adapts the step size by dual averaging toward ``target_accept`` and
the inverse metric (diagonal by default, optionally dense) from regularised
sample (co)variances over doubling windows.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import linalg

from .diagnostics import ChainDiagnostics
from .draws import PosteriorDraws

__all__ = ["SamplerConfig", "SamplerError", "leapfrog", "nuts_sample", "ChainResult",
           "laplace_inv_metric", "pilot_inv_metric"]

MAX_DELTA_H = 1000.0


class SamplerError(RuntimeError):
    """Sampling failed; ``diagnostics`` holds whatever was collected."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class SamplerConfig:
    chains: int = 4
    warmup: int = 2000
    draws: int = 2000
    target_accept: float = 0.8
    max_treedepth: int = 10
    seed: int = 0
    init_radius: float = 2.0
    n_jobs: int = 1
    metric: str = "diag"

    def __post_init__(self):
        if self.chains < 1:
            raise ValueError("chains must be >= 1")
        if self.warmup < 1 or self.draws < 1:
            raise ValueError("warmup and draws must be >= 1")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError("target_accept must lie in (0, 1)")
        if self.max_treedepth < 1:
            raise ValueError("max_treedepth must be >= 1")
        if self.metric not in ("diag", "dense"):
            raise ValueError(f"metric must be 'diag' or 'dense', got {self.metric!r}")

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def leapfrog(theta, momentum, step_size, gradient_fn, inv_metric=None, grad=None):
    """One leapfrog step with a diagonal inverse metric.

    Returns ``(theta', momentum')``; a non-finite gradient simply propagates
    into the returned state, which callers treat as a divergence.
    """
    theta = np.asarray(theta, dtype=float)
    momentum = np.asarray(momentum, dtype=float)
    m = np.ones_like(theta) if inv_metric is None else inv_metric
    g = gradient_fn(theta) if grad is None else grad
    p = momentum + 0.5 * step_size * g
    q = theta + step_size * m * p
    p = p + 0.5 * step_size * gradient_fn(q)
    return q, p


class _DiagMetric:
    def __init__(self, inv):
        self.inv = np.asarray(inv, dtype=float)
        self.scale = 1.0 / np.sqrt(self.inv)

    def velocity(self, p):
        return self.inv * p

    def sample(self, rng):
        return rng.standard_normal(self.inv.shape[0]) * self.scale


class _DenseMetric:
    def __init__(self, inv):
        self.inv = np.asarray(inv, dtype=float)
        self.chol = np.linalg.cholesky(self.inv)

    def velocity(self, p):
        return self.inv @ p

    def sample(self, rng):
        # p = L^-T z has covariance (L L^T)^-1
        z = rng.standard_normal(self.inv.shape[0])
        return linalg.solve_triangular(self.chol, z, lower=True, trans="T")


class _State:
    __slots__ = ("q", "p", "lp", "g")

    def __init__(self, q, p, lp, g):
        self.q, self.p, self.lp, self.g = q, p, lp, g

    def copy(self):
        return _State(self.q, self.p, self.lp, self.g)


class _Chain:
    """Single-chain NUTS engine; all randomness comes from ``rng``."""

    def __init__(self, logp_grad, dim, config, rng):
        self.logp_grad = logp_grad
        self.dim = dim
        self.cfg = config
        self.rng = rng
        self.metric = (_DenseMetric(np.eye(dim)) if config.metric == "dense"
                       else _DiagMetric(np.ones(dim)))
        self.eps = 1.0

    # -- dynamics ---------------------------------------------------------

    def _eval(self, q):
        lp, g = self.logp_grad(q)
        if not np.isfinite(lp) or g is None or not np.all(np.isfinite(g)):
            return -np.inf, np.zeros(self.dim)
        return float(lp), g

    def _hamiltonian(self, z):
        if not np.isfinite(z.lp):
            return np.inf
        h = -z.lp + 0.5 * float(np.dot(self.metric.velocity(z.p), z.p))
        return np.inf if np.isnan(h) else h

    def _evolve(self, z, eps):
        p = z.p + 0.5 * eps * z.g
        q = z.q + eps * self.metric.velocity(p)
        lp, g = self._eval(q)
        p = p + 0.5 * eps * g
        return _State(q, p, lp, g)

    def _sample_momentum(self):
        return self.metric.sample(self.rng)

    # -- tree building ----------------------------------------------------

    def _build_tree(self, depth, z, H0, sign, acc):
        """Returns (valid, z_end, z_propose, log_w, rho, p_beg, ps_beg, p_end, ps_end)."""
        if depth == 0:
            z = self._evolve(z, sign * self.eps)
            acc["n_leapfrog"] += 1
            h = self._hamiltonian(z)
            if h - H0 > MAX_DELTA_H:
                acc["divergent"] = True
            log_w = H0 - h
            acc["sum_metro"] += 1.0 if log_w > 0 else math.exp(log_w)
            ps = self.metric.velocity(z.p)
            return (not acc["divergent"], z, z, log_w, z.p.copy(), z.p, ps, z.p, ps)

        ok, z, prop_i, lw_i, rho_i, p_beg, ps_beg, p_ie, ps_ie = self._build_tree(
            depth - 1, z, H0, sign, acc)
        if not ok:
            return (False, z, None, -np.inf, None, None, None, None, None)
        ok, z, prop_f, lw_f, rho_f, p_fb, ps_fb, p_end, ps_end = self._build_tree(
            depth - 1, z, H0, sign, acc)
        if not ok:
            return (False, z, None, -np.inf, None, None, None, None, None)

        lw = np.logaddexp(lw_i, lw_f)
        # uniform progressive sampling inside the subtree
        if lw_f > lw or self.rng.uniform() < math.exp(lw_f - lw):
            prop = prop_f
        else:
            prop = prop_i
        rho = rho_i + rho_f
        persist = _no_uturn(ps_beg, ps_end, rho)
        persist &= _no_uturn(ps_beg, ps_fb, rho_i + p_fb)
        persist &= _no_uturn(ps_ie, ps_end, rho_f + p_ie)
        return (persist, z, prop, lw, rho, p_beg, ps_beg, p_end, ps_end)

    def transition(self, z0):
        z0 = _State(z0.q, self._sample_momentum(), z0.lp, z0.g)
        H0 = self._hamiltonian(z0)
        ps0 = self.metric.velocity(z0.p)
        z_fwd = z_bck = z0
        p_ff = p_fb = p_bf = p_bb = z0.p
        ps_ff = ps_fb = ps_bf = ps_bb = ps0
        rho = z0.p.copy()
        z_sample = z0
        log_w = 0.0
        acc = {"n_leapfrog": 0, "sum_metro": 0.0, "divergent": False}
        depth = 0
        while depth < self.cfg.max_treedepth:
            if self.rng.uniform() > 0.5:
                rho_bck = rho
                p_bf, ps_bf = p_ff, ps_ff
                ok, z_fwd, prop, lw_sub, rho_fwd, p_fb, ps_fb, p_ff, ps_ff = self._build_tree(
                    depth, z_fwd, H0, 1.0, acc)
            else:
                rho_fwd = rho
                p_fb, ps_fb = p_bb, ps_bb
                ok, z_bck, prop, lw_sub, rho_bck, p_bf, ps_bf, p_bb, ps_bb = self._build_tree(
                    depth, z_bck, H0, -1.0, acc)
            if not ok:
                break
            depth += 1
            # biased progressive sampling at the top level
            if lw_sub > log_w or self.rng.uniform() < math.exp(lw_sub - log_w):
                z_sample = prop
            log_w = np.logaddexp(log_w, lw_sub)
            rho = rho_bck + rho_fwd
            persist = _no_uturn(ps_bb, ps_ff, rho)
            persist &= _no_uturn(ps_bb, ps_fb, rho_bck + p_fb)
            persist &= _no_uturn(ps_bf, ps_ff, rho_fwd + p_bf)
            if not persist:
                break
        accept = acc["sum_metro"] / max(acc["n_leapfrog"], 1)
        return z_sample, accept, depth, acc["divergent"], acc["n_leapfrog"]

    # -- adaptation -------------------------------------------------------

    def init_stepsize(self, z):
        """Double or halve the step size until one-step acceptance crosses 0.8."""
        log08 = math.log(0.8)

        def delta(eps):
            zp = _State(z.q, self._sample_momentum(), z.lp, z.g)
            H0 = self._hamiltonian(zp)
            h = self._hamiltonian(self._evolve(zp, eps))
            return H0 - h

        d = delta(self.eps)
        direction = 1 if d > log08 else -1
        while True:
            d = delta(self.eps)
            if direction == 1 and not d > log08:
                break
            if direction == -1 and not d < log08:
                break
            self.eps = 2.0 * self.eps if direction == 1 else 0.5 * self.eps
            if self.eps > 1e7:
                raise SamplerError("step size diverged during warmup; posterior may be improper",
                                   {"step_size": self.eps, "position": z.q})
            if self.eps == 0.0:
                raise SamplerError("step size collapsed to zero during warmup",
                                   {"step_size": self.eps, "position": z.q})


def _no_uturn(ps_minus, ps_plus, rho):
    return float(np.dot(ps_plus, rho)) > 0.0 and float(np.dot(ps_minus, rho)) > 0.0


class _DualAveraging:
    gamma, t0, kappa = 0.05, 10.0, 0.75

    def __init__(self, delta):
        self.delta = delta
        self.mu = 0.0
        self.restart()

    def restart(self):
        self.counter = 0
        self.s_bar = 0.0
        self.x_bar = 0.0

    def learn(self, accept):
        self.counter += 1
        accept = min(1.0, accept)
        eta = 1.0 / (self.counter + self.t0)
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.delta - accept)
        x = self.mu - self.s_bar * math.sqrt(self.counter) / self.gamma
        x_eta = self.counter ** (-self.kappa)
        self.x_bar = (1.0 - x_eta) * self.x_bar + x_eta * x
        return math.exp(x)

    def final(self):
        return math.exp(self.x_bar)


class _Windows:
    """Expanding variance-estimation windows over warmup."""

    def __init__(self, n_warmup, dense=False, init_buffer=75, term_buffer=50, base_window=25):
        self.n = n_warmup
        self.dense = dense
        self.previous = None
        self.enabled = n_warmup >= 20
        if init_buffer + base_window + term_buffer > n_warmup:
            init_buffer = int(0.15 * n_warmup)
            term_buffer = int(0.1 * n_warmup)
            base_window = n_warmup - (init_buffer + term_buffer)
        self.init_buffer, self.term_buffer = init_buffer, term_buffer
        self.window = base_window
        self.next_end = init_buffer + base_window - 1
        self.counter = 0
        self._reset_stats()

    def _reset_stats(self):
        self.k = 0
        self.mean = None
        self.m2 = None

    def _in_window(self):
        return (self.counter >= self.init_buffer
                and self.counter < self.n - self.term_buffer
                and self.counter != self.n)

    def _window_end(self):
        return self.counter == self.next_end and self.counter != self.n

    def _advance(self):
        if self.next_end == self.n - self.term_buffer - 1:
            return
        self.window *= 2
        self.next_end = self.counter + self.window
        if self.next_end != self.n - self.term_buffer - 1:
            if self.next_end + 2 * self.window >= self.n - self.term_buffer:
                self.next_end = self.n - self.term_buffer - 1

    def learn(self, q):
        """Feed one warmup draw; returns a new inverse metric at window ends."""
        if not self.enabled:
            self.counter += 1
            return None
        if self._in_window():
            # Welford update
            if self.mean is None:
                self.mean = np.zeros_like(q)
            if self.m2 is None:
                self.m2 = np.zeros((q.size, q.size)) if self.dense else np.zeros_like(q)
            self.k += 1
            d = q - self.mean
            self.mean = self.mean + d / self.k
            if self.dense:
                self.m2 = self.m2 + np.outer(d, q - self.mean)
            else:
                self.m2 = self.m2 + d * (q - self.mean)
        if self._window_end():
            self._advance()
            n = self.k
            if self.dense:
                # a short window cannot pin down a full covariance, so shrink
                # toward the metric in use rather than toward a tiny identity
                cov = self.m2 / (n - 1.0) if n > 1 else self.previous
                w = n / (n + max(5.0, float(q.size)))
                var = w * cov + (1.0 - w) * self.previous
                var = 0.5 * (var + var.T)
            else:
                var = self.m2 / (n - 1.0) if n > 1 else np.ones_like(q)
                var = (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
            self._reset_stats()
            self.counter += 1
            return var
        self.counter += 1
        return None


@dataclass
class ChainResult:
    draws: np.ndarray
    step_size: float
    inv_metric: np.ndarray
    divergences: int
    warmup_divergences: int
    treedepth_hits: int
    accept: np.ndarray
    n_leapfrog: np.ndarray
    warmup_leapfrog: int = 0


def _init_jitter(rng, dim, radius, inv_metric):
    if inv_metric is None:
        return rng.uniform(-radius, radius, size=dim)
    u = rng.standard_normal(dim)
    if inv_metric.ndim == 1:
        return np.sqrt(inv_metric) * u
    return np.linalg.cholesky(inv_metric) @ u


def _run_chain(logp_grad, dim, config, seed_seq, init_inv_metric=None, init_center=None,
               adapt_metric=True):
    rng = np.random.Generator(np.random.PCG64(seed_seq))
    chain = _Chain(logp_grad, dim, config, rng)
    if init_inv_metric is not None:
        chain.metric = type(chain.metric)(init_inv_metric)
    # initial point: uniform jitter on [-r, r], or a draw from N(center,
    # init_inv_metric) when a center is given; retried until finite
    for _ in range(100):
        if init_center is None:
            q = rng.uniform(-config.init_radius, config.init_radius, size=dim)
        else:
            q = init_center + _init_jitter(rng, dim, config.init_radius, init_inv_metric)
        lp, g = chain._eval(q)
        if np.isfinite(lp):
            break
    else:
        raise SamplerError("no finite initial point found in 100 attempts")
    z = _State(q, np.zeros(dim), lp, g)
    chain.init_stepsize(z)
    da = _DualAveraging(config.target_accept)
    da.mu = math.log(10.0 * chain.eps)
    windows = _Windows(config.warmup, dense=config.metric == "dense")
    windows.enabled = windows.enabled and adapt_metric
    windows.previous = chain.metric.inv

    warm_div = 0
    warm_lf = 0
    for _ in range(config.warmup):
        z, accept, depth, div, n = chain.transition(z)
        warm_div += div
        warm_lf += n
        chain.eps = da.learn(accept)
        var = windows.learn(z.q)
        if var is not None:
            chain.metric = type(chain.metric)(var)
            windows.previous = var
            chain.init_stepsize(z)
            da.mu = math.log(10.0 * chain.eps)
            da.restart()
    if warm_div == config.warmup:
        raise SamplerError(f"all {config.warmup} warmup transitions diverged",
                           {"warmup_divergences": warm_div, "step_size": chain.eps,
                            "warmup_leapfrog": warm_lf})
    chain.eps = da.final()

    out = np.empty((config.draws, dim))
    acc = np.empty(config.draws)
    nlf = np.empty(config.draws, dtype=int)
    div_count = 0
    hits = 0
    for i in range(config.draws):
        z, accept, depth, div, n = chain.transition(z)
        out[i] = z.q
        acc[i] = accept
        nlf[i] = n
        div_count += div
        hits += depth >= config.max_treedepth
    return ChainResult(out, chain.eps, chain.metric.inv, div_count, warm_div, hits, acc, nlf,
                       warm_lf)


def nuts_sample(log_density_fn: Optional[Callable], gradient_fn: Optional[Callable], dim: int,
                config: SamplerConfig = SamplerConfig(), logp_grad: Optional[Callable] = None,
                index_map=None, spec=None, init_inv_metric=None, init_center=None):
    """Run independent NUTS chains and return post-warmup draws.

    Parameters
    ----------
    log_density_fn, gradient_fn : callable
        Unnormalised log density and its gradient on R^dim. Either may be
        None when ``logp_grad`` (returning both at once) is given.
    dim : int
    config : SamplerConfig
    logp_grad : callable, optional
        Fused ``theta -> (logp, grad)``; avoids evaluating the density twice.
    index_map, spec : optional
        Attached to the returned :class:`PosteriorDraws`.
    init_inv_metric : ndarray, optional
        Starting inverse metric, a vector for ``metric="diag"`` or a matrix
        for ``metric="dense"`` (see :func:`laplace_inv_metric`). Defaults to
        the identity. Warmup adaptation proceeds from it.
    init_center : ndarray, optional
        Chains start at a draw from N(init_center, init_inv_metric) (or
        uniform jitter of ``config.init_radius`` around it without a
        metric) instead of uniform jitter around the origin.

    Returns
    -------
    PosteriorDraws
        ``draws`` of shape (chains, draws, dim) with ``diagnostics`` set.
        Chain ``c`` uses the ``c``-th child of ``SeedSequence(seed)``, so
        output is bit-reproducible for a given seed and config.
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")
    if logp_grad is None:
        if log_density_fn is None or gradient_fn is None:
            raise ValueError("need log_density_fn and gradient_fn, or logp_grad")

        def logp_grad(q):
            lp = log_density_fn(q)
            if not np.isfinite(lp):
                return -np.inf, None
            return lp, np.asarray(gradient_fn(q), dtype=float)

    seeds = np.random.SeedSequence(config.seed).spawn(config.chains)
    if init_inv_metric is not None:
        init_inv_metric = np.asarray(init_inv_metric, dtype=float)
        want = (dim, dim) if config.metric == "dense" else (dim,)
        if init_inv_metric.shape != want:
            raise ValueError(f"init_inv_metric must have shape {want}")
    if init_center is not None:
        init_center = np.asarray(init_center, dtype=float)
        if init_center.shape != (dim,):
            raise ValueError(f"init_center must have shape ({dim},)")
    if config.n_jobs == 1 or config.chains == 1:
        results = [_run_chain(logp_grad, dim, config, s, init_inv_metric, init_center)
                   for s in seeds]
    else:
        from joblib import Parallel, delayed
        results = Parallel(n_jobs=config.n_jobs)(
            delayed(_run_chain)(logp_grad, dim, config, s, init_inv_metric, init_center)
            for s in seeds)

    draws = np.stack([r.draws for r in results])
    if index_map is None:
        index_map = {"theta": (0, (dim,))}
    pd_ = PosteriorDraws(draws=draws, index_map=index_map, spec=spec)
    diag = ChainDiagnostics.from_draws(
        draws,
        divergences=sum(r.divergences for r in results),
        treedepth_hits=sum(r.treedepth_hits for r in results),
        names=pd_.names(),
        step_sizes=np.array([r.step_size for r in results]),
        mean_accept=np.array([r.accept.mean() for r in results]),
    )
    pd_.diagnostics = diag
    pd_.extra["n_leapfrog"] = int(sum(r.n_leapfrog.sum() for r in results))
    pd_.extra["warmup_leapfrog"] = int(sum(r.warmup_leapfrog for r in results))
    return pd_


def _inv_abs_hessian(logp_grad, x, dim, h):
    # inverse of |H| (eigenvalues replaced by their magnitudes, then floored)
    hess = np.empty((dim, dim))
    for i in range(dim):
        e = np.zeros(dim)
        e[i] = h
        gp = logp_grad(x + e)[1]
        gm = logp_grad(x - e)[1]
        if gp is None or gm is None:
            raise SamplerError("log density not finite around the Hessian point")
        hess[i] = -(np.asarray(gp) - np.asarray(gm)) / (2.0 * h)
    hess = 0.5 * (hess + hess.T)
    w, v = np.linalg.eigh(hess)
    w = np.abs(w)
    w = np.maximum(w, max(w.max(), 1.0) * 1e-10)
    inv = (v / w) @ v.T
    return 0.5 * (inv + inv.T)


def laplace_inv_metric(logp_grad, dim, x0=None, dense=True, h=1e-5, return_mode=False):
    """Inverse curvature of the log density at its mode.

    The mode is found with L-BFGS from ``x0`` (zeros by default) and the
    Hessian by central differences of the analytic gradient. Eigenvalues
    are floored so the result is positive definite. Returns the matrix (or
    its diagonal when ``dense`` is False) for use as ``init_inv_metric``,
    paired with the mode when ``return_mode`` is set.
    """
    from scipy import optimize

    def neg(q):
        lp, g = logp_grad(q)
        if not np.isfinite(lp):
            return np.inf, np.zeros(dim)
        return -lp, -np.asarray(g)

    x0 = np.zeros(dim) if x0 is None else np.asarray(x0, dtype=float)
    res = optimize.minimize(neg, x0, jac=True, method="L-BFGS-B",
                            options={"maxiter": 20000})
    x = res.x
    inv = _inv_abs_hessian(logp_grad, x, dim, h)
    inv = inv if dense else np.diag(inv).copy()
    return (inv, x) if return_mode else inv


def pilot_inv_metric(logp_grad, dim, seed=0, dense=True, n_pilot=150, max_treedepth=6,
                     rounds=2, h=1e-5):
    """Starting metric and point for warmup from the posterior bulk.

    The joint mode of a hierarchical model can sit far from its typical
    set (in non-centred coordinates the mode inflates the scale parameter),
    so the curvature there is a poor metric. Starting from the Laplace
    approximation, each round runs a short single-chain pilot with the
    metric held fixed and a capped tree depth, then recomputes the inverse
    absolute Hessian at the mean of the pilot's retained draws.

    Returns
    -------
    inv_metric, center : ndarray
        Matrix (or diagonal when ``dense`` is False) and the last pilot mean.
    """
    inv, center = laplace_inv_metric(logp_grad, dim, dense=True, h=h, return_mode=True)
    seeds = np.random.SeedSequence([seed, 0x9107]).spawn(rounds)
    cfg = SamplerConfig(chains=1, warmup=n_pilot, draws=max(n_pilot // 2, 4), seed=0,
                        max_treedepth=max_treedepth, metric="dense")
    for ss in seeds:
        res = _run_chain(logp_grad, dim, cfg, ss, inv, center, adapt_metric=False)
        center = res.draws.mean(axis=0)
        inv = _inv_abs_hessian(logp_grad, center, dim, h)
    return (inv if dense else np.diag(inv).copy()), center
