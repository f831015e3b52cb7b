"""Gaussian embeddings whose means evolve as additive time series.

Every entity i and relation p is a diagonal Gaussian.  Its mean at
normalized time t (= step / n_steps, in [0, 1)) is

    base + alpha * w * t + beta * sin(2*pi*omega*t)

where alpha is a scalar evolution rate, w a unit direction vector, beta and
omega elementwise amplitude/frequency vectors.  The diagonal variance is
time-independent and clamped to [c_min, c_max].  Variants drop components:
``tn`` keeps trend+noise, ``sn`` seasonal+noise, ``ts`` trend+seasonal (no
noise, scored by a translational norm instead of KL divergence).

A fact (s, p, o, t) is scored by comparing the difference distribution
P_e = N(mean_s - mean_o, var_s + var_o) against the relation distribution
P_r = N(mean_r, var_r): the directed KL divergence KL(P_e || P_r) in closed
diagonal form, or the symmetrized average of both directions.  Lower scores
mean more plausible facts.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, fields
from typing import Iterator, NamedTuple

import numpy as np

from .errors import ConfigError
from .data import IntervalFact, Quadruple

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * np.pi

VARIANT_FULL = "full"
VARIANT_SN = "sn"  # seasonal + noise
VARIANT_TN = "tn"  # trend + noise
VARIANT_TS = "ts"  # trend + seasonal, translational score
VARIANTS = (VARIANT_FULL, VARIANT_SN, VARIANT_TN, VARIANT_TS)

_HAS_TREND = {VARIANT_FULL: True, VARIANT_SN: False, VARIANT_TN: True, VARIANT_TS: True}
_HAS_SEASONAL = {VARIANT_FULL: True, VARIANT_SN: True, VARIANT_TN: False, VARIANT_TS: True}

# parameter families stored per entity/relation row
MEAN_FIELDS = ("base", "alpha", "w", "beta", "omega")
ALL_FIELDS = MEAN_FIELDS + ("var",)


@dataclass(frozen=True)
class ModelConfig:
    n_entities: int
    n_relations: int  # relation id slots, inverse ids included when reciprocal
    n_steps: int
    dim: int
    variant: str = VARIANT_FULL
    c_min: float = 0.005
    c_max: float = 0.5

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigError("dim must be >= 1")
        if not 0 < self.c_min < self.c_max:
            raise ConfigError("covariance bounds must satisfy 0 < c_min < c_max")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if min(self.n_entities, self.n_relations, self.n_steps) < 1:
            raise ConfigError("n_entities, n_relations, n_steps must be positive")


class GaussianEmbed(NamedTuple):
    """A diagonal Gaussian at a specific time: mean and positive variances."""

    mean: np.ndarray
    var: np.ndarray


@dataclass
class ModelParams:
    """All learnable tables.  Rows of base/w are kept at unit L2 norm and
    variance entries inside [c_min, c_max] by ``project_constraints``."""

    config: ModelConfig
    ent_base: np.ndarray   # (n_e, d)
    ent_alpha: np.ndarray  # (n_e,)
    ent_w: np.ndarray      # (n_e, d)
    ent_beta: np.ndarray   # (n_e, d)
    ent_omega: np.ndarray  # (n_e, d)
    ent_var: np.ndarray    # (n_e, d)
    rel_base: np.ndarray   # (n_r, d)
    rel_alpha: np.ndarray  # (n_r,)
    rel_w: np.ndarray      # (n_r, d)
    rel_beta: np.ndarray   # (n_r, d)
    rel_omega: np.ndarray  # (n_r, d)
    rel_var: np.ndarray    # (n_r, d)

    def array(self, table: str, name: str) -> np.ndarray:
        return getattr(self, f"{table}_{name}")

    def arrays(self) -> Iterator[tuple[str, str, np.ndarray]]:
        for table in ("ent", "rel"):
            for name in ALL_FIELDS:
                yield table, name, self.array(table, name)

    def copy(self) -> "ModelParams":
        kwargs = {f.name: getattr(self, f.name) for f in fields(self)}
        for key, value in list(kwargs.items()):
            if isinstance(value, np.ndarray):
                kwargs[key] = value.copy()
        return ModelParams(**kwargs)

    def digest(self) -> str:
        h = hashlib.sha256()
        for _, _, arr in self.arrays():
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


def init_params(config: ModelConfig, rng: np.random.Generator | int) -> ModelParams:
    """Draw fresh parameters: base/w uniform then unit-normalized, variances
    and frequencies uniform in [c_min, c_max], rates and amplitudes zero."""
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    d = config.dim
    bound = 6.0 / np.sqrt(d)

    def table(n: int) -> dict[str, np.ndarray]:
        return {
            "base": rng.uniform(-bound, bound, (n, d)),
            "w": rng.uniform(-bound, bound, (n, d)),
            "var": rng.uniform(config.c_min, config.c_max, (n, d)),
            "omega": rng.uniform(config.c_min, config.c_max, (n, d)),
            "alpha": np.zeros(n),
            "beta": np.zeros((n, d)),
        }

    ent = table(config.n_entities)
    rel = table(config.n_relations)
    params = ModelParams(
        config=config,
        **{f"ent_{k}": v for k, v in ent.items()},
        **{f"rel_{k}": v for k, v in rel.items()},
    )
    project_constraints(params)
    return params


# Rows are rescaled only when their norm is off by more than this, which makes
# the projection a bitwise fixpoint: a freshly normalized row is within a few
# ulp of unit norm and is left untouched on the next call.
_NORM_TOL = 1e-12


def _reseed_row(table: str, name: str, index: int, dim: int) -> np.ndarray:
    digest = hashlib.sha256(f"reseed:{table}:{name}:{index}".encode()).digest()
    gen = np.random.default_rng(int.from_bytes(digest[:16], "big"))
    return gen.uniform(-6.0 / np.sqrt(dim), 6.0 / np.sqrt(dim), dim)


def _normalize_rows(arr: np.ndarray, table: str, name: str, dim: int) -> None:
    norms = np.linalg.norm(arr, axis=1)
    zero = np.flatnonzero(norms == 0.0)
    for i in zero:
        logger.warning("zero-norm %s %s row %d reinitialized", table, name, i)
        arr[i] = _reseed_row(table, name, int(i), dim)
        norms[i] = np.linalg.norm(arr[i])
    off = np.abs(norms - 1.0) > _NORM_TOL
    if off.any():
        arr[off] /= norms[off, None]


def project_constraints(params: ModelParams) -> ModelParams:
    """Rescale base/direction rows to unit norm and clamp variances, in place.

    Idempotent to the bit: already-feasible parameters are left untouched.
    """
    cfg = params.config
    for table in ("ent", "rel"):
        _normalize_rows(params.array(table, "base"), table, "base", cfg.dim)
        _normalize_rows(params.array(table, "w"), table, "w", cfg.dim)
        np.clip(params.array(table, "var"), cfg.c_min, cfg.c_max,
                out=params.array(table, "var"))
    return params


def check_constraints(params: ModelParams, tol: float = 1e-9) -> bool:
    """True when every unit-norm and variance-bound invariant holds."""
    cfg = params.config
    for table in ("ent", "rel"):
        for name in ("base", "w"):
            norms = np.linalg.norm(params.array(table, name), axis=1)
            if np.abs(norms - 1.0).max() > tol:
                return False
        var = params.array(table, "var")
        if var.min() < cfg.c_min or var.max() > cfg.c_max:
            return False
    return True


# ---------------------------------------------------------------------------
# time-specific means and distributions

def _means(params: ModelParams, table: str, ids: np.ndarray, t: np.ndarray,
           variant: str) -> np.ndarray:
    """Mean vectors for rows ``ids`` at normalized times ``t``; shape (n, d)."""
    m = params.array(table, "base")[ids]
    if _HAS_TREND[variant]:
        alpha = params.array(table, "alpha")[ids]
        m = m + (alpha * t)[:, None] * params.array(table, "w")[ids]
    if _HAS_SEASONAL[variant]:
        omega = params.array(table, "omega")[ids]
        m = m + params.array(table, "beta")[ids] * np.sin(TWO_PI * omega * t[:, None])
    return m


def _broadcast_ids_times(i, t) -> tuple[np.ndarray, np.ndarray, bool]:
    ids, ts = np.broadcast_arrays(
        np.asarray(i, dtype=np.int64), np.asarray(t, dtype=np.float64)
    )
    scalar = ids.ndim == 0
    return np.atleast_1d(ids), np.atleast_1d(ts), scalar


def entity_mean_at(params: ModelParams, i, t, variant: str | None = None) -> np.ndarray:
    """Time-specific mean of entity i; i and t may be scalars or arrays."""
    variant = variant or params.config.variant
    ids, ts, scalar = _broadcast_ids_times(i, t)
    m = _means(params, "ent", ids, ts, variant)
    return m[0] if scalar else m


def relation_mean_at(params: ModelParams, p, t, variant: str | None = None) -> np.ndarray:
    variant = variant or params.config.variant
    ids, ts, scalar = _broadcast_ids_times(p, t)
    m = _means(params, "rel", ids, ts, variant)
    return m[0] if scalar else m


def entity_gaussian_at(params: ModelParams, i: int, t: float,
                       variant: str | None = None) -> GaussianEmbed:
    return GaussianEmbed(entity_mean_at(params, i, t, variant), params.ent_var[i].copy())


def relation_gaussian_at(params: ModelParams, p: int, t: float,
                         variant: str | None = None) -> GaussianEmbed:
    return GaussianEmbed(relation_mean_at(params, p, t, variant), params.rel_var[p].copy())


def normalize_step(step, n_steps: int):
    """Normalized time for a step index: step / n_steps, in [0, 1)."""
    return np.asarray(step, dtype=np.float64) / n_steps


# ---------------------------------------------------------------------------
# scores

def _fact_pieces(params, s, p, o, t, variant):
    mu = _means(params, "ent", s, t, variant) - _means(params, "ent", o, t, variant)
    var_e = params.ent_var[s] + params.ent_var[o]
    r = _means(params, "rel", p, t, variant)
    var_r = params.rel_var[p]
    return mu, var_e, r, var_r


def _kl_diag(mu0, var0, mu1, var1) -> np.ndarray:
    """KL(N(mu0, diag var0) || N(mu1, diag var1)) per row, closed form."""
    ratio = var0 / var1
    quad = np.square(mu1 - mu0) / var1
    return 0.5 * np.sum(ratio + quad - np.log(ratio), axis=-1) - 0.5 * mu0.shape[-1]


def kl_scores(params: ModelParams, s, p, o, t, variant: str | None = None) -> np.ndarray:
    """Directed KL(P_e || P_r) for arrays of quadruples at normalized times t."""
    variant = _score_variant(params, variant)
    mu, var_e, r, var_r = _fact_pieces(params, s, p, o, t, variant)
    return _kl_diag(mu, var_e, r, var_r)


def _sym_kl_diag(mu, var_e, r, var_r) -> np.ndarray:
    """0.5 * (KL(P_e||P_r) + KL(P_r||P_e)); the log-determinant terms cancel."""
    quad = np.square(r - mu)
    ratio = var_e / var_r
    return 0.25 * np.sum(ratio + 1.0 / ratio + quad / var_r + quad / var_e,
                         axis=-1) - 0.5 * mu.shape[-1]


def sym_kl_scores(params: ModelParams, s, p, o, t, variant: str | None = None) -> np.ndarray:
    """Average of both KL directions between P_e and P_r."""
    variant = _score_variant(params, variant)
    mu, var_e, r, var_r = _fact_pieces(params, s, p, o, t, variant)
    return _sym_kl_diag(mu, var_e, r, var_r)


def ts_scores(params: ModelParams, s, p, o, t) -> np.ndarray:
    """Translational score || mean_s + mean_r - mean_o ||_2 (ts variant)."""
    v = (
        _means(params, "ent", s, t, VARIANT_TS)
        + _means(params, "rel", p, t, VARIANT_TS)
        - _means(params, "ent", o, t, VARIANT_TS)
    )
    return np.linalg.norm(v, axis=-1)


def _score_variant(params: ModelParams, variant: str | None) -> str:
    variant = variant or params.config.variant
    if variant == VARIANT_TS:
        raise ConfigError("KL scores are undefined for the ts variant; use ts_score")
    return variant


def score_batch(params: ModelParams, s, p, o, t, variant: str | None = None) -> np.ndarray:
    """Variant-dispatched score: symmetric KL, or the translational norm for ts."""
    variant = variant or params.config.variant
    if variant == VARIANT_TS:
        return ts_scores(params, s, p, o, t)
    return sym_kl_scores(params, s, p, o, t, variant)


def _single(fn, params, q, t) -> float:
    s, p, o = np.asarray([q[0]]), np.asarray([q[1]]), np.asarray([q[2]])
    return float(fn(params, s, p, o, np.asarray([t], dtype=np.float64))[0])


def kl_score(params: ModelParams, q: Quadruple, t: float) -> float:
    """Directed KL score of one quadruple at normalized time t."""
    variant = _score_variant(params, None)
    return _single(lambda *a: kl_scores(*a, variant=variant), params, q, t)


def sym_kl_score(params: ModelParams, q: Quadruple, t: float) -> float:
    variant = _score_variant(params, None)
    return _single(lambda *a: sym_kl_scores(*a, variant=variant), params, q, t)


def ts_score(params: ModelParams, q: Quadruple, t: float) -> float:
    if params.config.variant != VARIANT_TS:
        raise ConfigError("ts_score requires the ts variant")
    return _single(ts_scores, params, q, t)


def quadruple_score(params: ModelParams, q: Quadruple, t: float) -> float:
    """Variant-dispatched single-quadruple score."""
    return _single(score_batch, params, q, t)


def interval_score(params: ModelParams, fact: IntervalFact) -> float:
    """Sum of per-step scores over [t_start, t_end]."""
    steps = np.arange(fact.t_start, fact.t_end + 1, dtype=np.int64)
    n = steps.size
    s = np.full(n, fact.s, dtype=np.int64)
    p = np.full(n, fact.p, dtype=np.int64)
    o = np.full(n, fact.o, dtype=np.int64)
    t = normalize_step(steps, params.config.n_steps)
    return float(score_batch(params, s, p, o, t).sum())


# ---------------------------------------------------------------------------
# analytic gradients

@dataclass
class GradientRecord:
    """Sparse gradients: per table and parameter family, the touched row ids
    and their accumulated gradients (rows of shape (d,), scalars for alpha)."""

    ent: dict[str, tuple[np.ndarray, np.ndarray]]
    rel: dict[str, tuple[np.ndarray, np.ndarray]]

    def table(self, table: str) -> dict[str, tuple[np.ndarray, np.ndarray]]:
        return self.ent if table == "ent" else self.rel

    def entries(self) -> Iterator[tuple[str, str, np.ndarray, np.ndarray]]:
        for table in ("ent", "rel"):
            for name, (ids, grads) in self.table(table).items():
                yield table, name, ids, grads

    def dense(self, table: str, name: str, like: np.ndarray) -> np.ndarray:
        """Expand one family to a full-table array (testing convenience)."""
        out = np.zeros_like(like)
        if name in self.table(table):
            ids, grads = self.table(table)[name]
            out[ids] = grads
        return out


class _Grouping:
    """Sorted segment-sum machinery shared by every family of one id array."""

    def __init__(self, ids: np.ndarray):
        self.uniq, inverse = np.unique(ids, return_inverse=True)
        self.order = np.argsort(inverse, kind="stable")
        self.starts = np.searchsorted(inverse[self.order], np.arange(self.uniq.size))

    def sum(self, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return self.uniq, np.add.reduceat(values[self.order], self.starts, axis=0)


def _accumulate(ids: np.ndarray, grads: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return _Grouping(ids).sum(grads)


class _MeanInputs:
    """Gathered mean parameters and trig terms for one table lookup, reused
    between the forward mean and the backward parameter chain."""

    def __init__(self, params: ModelParams, table: str, ids: np.ndarray,
                 t: np.ndarray, variant: str):
        self.table = table
        self.ids = ids
        self.t = t
        self.variant = variant
        self.mean = params.array(table, "base")[ids]
        if _HAS_TREND[variant]:
            self.alpha = params.array(table, "alpha")[ids]
            self.w = params.array(table, "w")[ids]
            self.mean = self.mean + (self.alpha * t)[:, None] * self.w
        if _HAS_SEASONAL[variant]:
            self.beta = params.array(table, "beta")[ids]
            self.phase = TWO_PI * params.array(table, "omega")[ids] * t[:, None]
            self.sin = np.sin(self.phase)
            self.mean = self.mean + self.beta * self.sin

    def chain(self, g_mean: np.ndarray) -> dict[str, np.ndarray]:
        """Per-sample gradients of (g_mean . mean) w.r.t. the mean parameters."""
        out = {"base": g_mean}
        if _HAS_TREND[self.variant]:
            out["alpha"] = self.t * np.sum(g_mean * self.w, axis=1)
            out["w"] = (self.alpha * self.t)[:, None] * g_mean
        if _HAS_SEASONAL[self.variant]:
            out["beta"] = g_mean * self.sin
            out["omega"] = g_mean * self.beta * np.cos(self.phase) * (TWO_PI * self.t)[:, None]
        return out


def _kl_partials(mu, var_e, r, var_r, kind: str):
    """Partials of the chosen KL form w.r.t. (mu, var_e, var_r).

    kind: "kl" = KL(P_e||P_r), "kl_rev" = KL(P_r||P_e), "sym" = their mean.
    d/dr is always -d/dmu since both enter only through r - mu.
    """
    q = r - mu
    inv_r = 1.0 / var_r
    inv_e = 1.0 / var_e
    fwd = (
        -inv_r * q,
        0.5 * (inv_r - inv_e),
        0.5 * (inv_r - var_e * inv_r**2 - np.square(q) * inv_r**2),
    )
    if kind == "kl":
        return fwd
    rev = (
        -inv_e * q,
        0.5 * (inv_e - var_r * inv_e**2 - np.square(q) * inv_e**2),
        0.5 * (inv_e - inv_r),
    )
    if kind == "kl_rev":
        return rev
    return tuple(0.5 * (a + b) for a, b in zip(fwd, rev))


class ScoredBatch:
    """One forward pass over a batch of quadruples, with enough cached state
    to take gradients without recomputing means, gathers, or trig terms.

    Scores are available immediately; ``gradients(upstream)`` then returns the
    gradient of sum_i upstream_i * score_i.
    """

    def __init__(self, params: ModelParams, s, p, o, t, variant: str | None = None):
        self.params = params
        self.variant = variant or params.config.variant
        self.s = np.asarray(s, dtype=np.int64)
        self.p = np.asarray(p, dtype=np.int64)
        self.o = np.asarray(o, dtype=np.int64)
        self.t = np.asarray(t, dtype=np.float64)
        self._in_s = _MeanInputs(params, "ent", self.s, self.t, self.variant)
        self._in_o = _MeanInputs(params, "ent", self.o, self.t, self.variant)
        self._in_r = _MeanInputs(params, "rel", self.p, self.t, self.variant)
        if self.variant == VARIANT_TS:
            self._v = self._in_s.mean + self._in_r.mean - self._in_o.mean
            self.scores = np.linalg.norm(self._v, axis=-1)
        else:
            self._mu = self._in_s.mean - self._in_o.mean
            self._var_e = params.ent_var[self.s] + params.ent_var[self.o]
            self._var_r = params.rel_var[self.p]
            self.scores = _sym_kl_diag(self._mu, self._var_e, self._in_r.mean,
                                       self._var_r)

    def gradients(self, upstream: np.ndarray, kind: str | None = None) -> GradientRecord:
        """Sparse gradient record; families the variant does not use are absent."""
        u = np.asarray(upstream, dtype=np.float64)[:, None]
        if self.variant == VARIANT_TS:
            norm = self.scores[:, None]
            unit = np.divide(self._v, norm, out=np.zeros_like(self._v), where=norm > 0)
            g_ms, g_mr, g_mo = u * unit, u * unit, -u * unit
            g_var_e = g_var_r = None
        else:
            d_mu, d_ve, d_vr = _kl_partials(
                self._mu, self._var_e, self._in_r.mean, self._var_r, kind or "sym"
            )
            g_ms = u * d_mu
            g_mo = -g_ms
            g_mr = -g_ms
            g_var_e = u * d_ve
            g_var_r = u * d_vr

        ent_group = _Grouping(np.concatenate([self.s, self.o]))
        rel_group = _Grouping(self.p)
        chain_s = self._in_s.chain(g_ms)
        chain_o = self._in_o.chain(g_mo)
        ent = {
            name: ent_group.sum(np.concatenate([chain_s[name], chain_o[name]]))
            for name in chain_s
        }
        rel = {name: rel_group.sum(g) for name, g in self._in_r.chain(g_mr).items()}
        if g_var_e is not None:
            ent["var"] = ent_group.sum(np.concatenate([g_var_e, g_var_e]))
            rel["var"] = rel_group.sum(g_var_r)
        return GradientRecord(ent=ent, rel=rel)


def score_gradients(params: ModelParams, s, p, o, t, variant: str,
                    upstream: np.ndarray, kind: str | None = None) -> GradientRecord:
    """Gradient of sum_i upstream_i * score(s_i, p_i, o_i, t_i).

    ``kind`` picks the KL form for non-ts variants ("kl", "kl_rev", or the
    default "sym", which is the trained score).
    """
    return ScoredBatch(params, s, p, o, t, variant).gradients(upstream, kind=kind)


def grad_score(params: ModelParams, q: Quadruple, t: float,
               variant: str | None = None, kind: str | None = None) -> GradientRecord:
    """Analytic gradient of the variant's score for a single quadruple."""
    variant = variant or params.config.variant
    return score_gradients(
        params,
        np.asarray([q[0]]), np.asarray([q[1]]), np.asarray([q[2]]),
        np.asarray([t], dtype=np.float64),
        variant,
        np.ones(1),
        kind=kind,
    )
