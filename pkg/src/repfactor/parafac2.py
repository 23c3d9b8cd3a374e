"""Coupled PARAFAC2 decomposition of cross-covariance slices.

Each slice is modelled as ``omega_l ~= U_l diag(sigma_l) V^T`` with
``U_l = Q_l H``, ``Q_l`` column-orthonormal and ``H``, ``V`` shared. This
parameterisation makes ``U_l^T U_l = H^T H`` hold for every ``l`` by
construction, which is the constraint that makes the decomposition unique.

Fitting is direct-fitting alternating least squares. One sweep:

1. update every ``Q_l`` by orthogonal Procrustes against ``H diag(sigma_l) V^T``;
2. project ``B_l = Q_l^T omega_l`` and run one CP-ALS cycle on the stack of
   ``B_l`` for ``H``, ``V`` and the rows ``sigma_l``;
3. rescale ``H`` and ``V`` to unit columns, moving the scale into ``sigma``.

Every step is an exact least-squares update, so the squared error never
increases (up to rounding). :func:`decompose` additionally mixes recent
iterates (Anderson acceleration) and keeps a mixed iterate only when it is
strictly better than the plain sweep, which shortens the long swamps ALS
shows when the ``sigma`` rows are nearly collinear.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

from .covariance import CovarianceSlice
from .errors import (
    EmptySliceList,
    IndexOutOfRange,
    NumericalBreakdown,
    ParseError,
    RankTooLarge,
    ShapeMismatch,
    ZeroInput,
)
from .model_io import read_matrix, write_matrix

logger = logging.getLogger(__name__)

_EPS_FLOOR = 1e-30
# squared relative error treated as an exact fit (relative error 1e-12)
_EXACT_FIT2 = 1e-24


@dataclass(frozen=True)
class SolverOptions:
    """Solver settings.

    ``n_init`` restarts from independent seeded streams and keeps the
    lowest-error fit. ``accelerate`` enables safeguarded Anderson mixing of
    ALS iterates with history length ``memory``; a mixed iterate is only
    kept when it lowers the error, so monotonicity is preserved.
    """

    rank: int = 64
    max_sweeps: int = 2000
    rel_tol: float = 1e-8
    seed: int = 0
    init: Literal["random", "svd"] = "svd"
    n_init: int = 1
    accelerate: bool = True
    memory: int = 5

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError(f"rank must be >= 1, got {self.rank}")
        if self.max_sweeps < 1:
            raise ValueError(f"max_sweeps must be >= 1, got {self.max_sweeps}")
        if not self.rel_tol > 0:
            raise ValueError(f"rel_tol must be > 0, got {self.rel_tol}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if self.init not in ("random", "svd"):
            raise ValueError(f"unknown init {self.init!r}")
        if self.n_init < 1 or self.memory < 1:
            raise ValueError("n_init and memory must be >= 1")

    def to_dict(self) -> dict:
        return {f: getattr(self, f) for f in self.__dataclass_fields__}


@dataclass(frozen=True, eq=False)
class Parafac2Model:
    """Fitted (or initial) PARAFAC2 factors.

    Attributes
    ----------
    v : (d, k) ndarray
        Shared right factor, unit-norm columns.
    h : (k, k) ndarray
        Shared coupling factor, unit-norm columns.
    q : list of (d_l, k) ndarray
        Column-orthonormal per-slice bases. ``U_l = q[l] @ h``.
    sigma : (L, k) ndarray
        Row ``l`` holds the pseudo-singular values ``diag(Sigma_l)``.
    fit : float
        Relative Frobenius reconstruction error.
    history : tuple of float
        Squared reconstruction error after initialisation and after every sweep.
    norm2 : float
        Total squared Frobenius norm of the data, for scaling ``history``.
    """

    rank: int
    v: np.ndarray
    h: np.ndarray
    q: list[np.ndarray]
    sigma: np.ndarray
    fit: float = float("nan")
    iterations: int = 0
    converged: bool = False
    history: tuple[float, ...] = ()
    norm2: float = float("nan")
    options: SolverOptions | None = None

    @property
    def n_slices(self) -> int:
        return len(self.q)

    def u(self, index: int) -> np.ndarray:
        return self.q[self._check(index)] @ self.h

    def _check(self, index: int) -> int:
        if not 0 <= index < self.n_slices:
            raise IndexOutOfRange(f"slice index {index} not in [0, {self.n_slices})")
        return index


def _omegas(slices: Sequence[CovarianceSlice | np.ndarray]) -> list[np.ndarray]:
    out = []
    for s in slices:
        a = s.omega if isinstance(s, CovarianceSlice) else s
        out.append(np.asarray(a, dtype=np.float64))
    return out


def _norm2(omegas) -> float:
    return sum(float(np.einsum("ij,ij->", a, a)) for a in omegas)


def _validate(omegas: list[np.ndarray], rank: int) -> None:
    if not omegas:
        raise EmptySliceList("need at least one slice")
    d = omegas[0].shape[1]
    for i, a in enumerate(omegas):
        if a.ndim != 2 or a.shape[1] != d:
            raise ShapeMismatch(f"slice {i} has shape {a.shape}; expected (*, {d})")
    limit = min(d, min(a.shape[0] for a in omegas))
    if rank > limit:
        raise RankTooLarge(f"rank {rank} exceeds min(d, min d_l) = {limit}")


def _polar(a: np.ndarray) -> np.ndarray:
    """Closest column-orthonormal matrix to ``a`` (orthogonal Procrustes)."""
    try:
        p, _, rt = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalBreakdown(f"SVD failed in Procrustes update: {exc}") from exc
    return p @ rt


def _procrustes(omegas, h, v, sigma) -> list[np.ndarray]:
    return [_polar(a @ (v * sl) @ h.T) for a, sl in zip(omegas, sigma)]


def _orthonormal_columns(rng: np.random.Generator, n: int, k: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((n, k)))
    return q * np.sign(np.where(np.diag(r) == 0, 1.0, np.diag(r)))


def _lsq_right(rhs: np.ndarray, gram: np.ndarray) -> np.ndarray:
    """Solve ``X @ gram = rhs`` for symmetric PSD ``gram``."""
    try:
        return np.linalg.solve(gram, rhs.T).T
    except np.linalg.LinAlgError:
        return rhs @ np.linalg.pinv(gram)


def _squared_error(omegas, q, h, v, sigma) -> float:
    total = 0.0
    for a, ql, sl in zip(omegas, q, sigma):
        r = a - (ql @ (h * sl)) @ v.T
        total += float(np.einsum("ij,ij->", r, r))
    return total


def _normalize(h: np.ndarray, v: np.ndarray, sigma: np.ndarray):
    hn = np.linalg.norm(h, axis=0)
    vn = np.linalg.norm(v, axis=0)
    hn = np.where(hn > 0, hn, 1.0)
    vn = np.where(vn > 0, vn, 1.0)
    return h / hn, v / vn, sigma * (hn * vn)


def _fit_from(err2: float, norm2: float) -> float:
    return float(np.sqrt(err2 / norm2)) if norm2 > 0 else float("nan")


def _gram_refine(omegas, q, k, rng):
    """Exact CP of the projected slices by a generalised eigenproblem.

    With ``B_l = Q_l^T omega_l`` compressed to ``T_l = B_l W`` (``k x k``),
    two random slice mixtures satisfy ``T_a T_b^+ = H D H^-1``, so ``H`` is
    read off the eigenvectors. Each ``(sigma[:, r], V[:, r])`` pair is then a
    rank-one fit. Exact for noiseless data when the ``Q_l`` share a common
    rotation error; otherwise only a starting point.
    """
    L = len(omegas)
    b = [ql.T @ a for ql, a in zip(q, omegas)]
    w = np.linalg.svd(np.vstack(b), full_matrices=False)[2][:k].T
    t = np.stack([bl @ w for bl in b])
    mix_a, mix_b = rng.standard_normal(L), rng.standard_normal(L)
    ta, tb = np.tensordot(mix_a, t, 1), np.tensordot(mix_b, t, 1)
    _, h = np.linalg.eig(ta @ np.linalg.pinv(tb))
    h = np.real(h)
    h_inv = np.linalg.pinv(h)
    sigma = np.empty((L, k))
    vt = np.empty((k, k))
    for r in range(k):
        rows = np.stack([(h_inv @ tl)[r] for tl in t])
        uu, ss, ww = np.linalg.svd(rows)
        sigma[:, r] = uu[:, 0] * ss[0]
        vt[:, r] = ww[0]
    return _normalize(h, w @ vt, sigma)


def _initial_state(omegas, k: int, init: str, rng: np.random.Generator):
    d = omegas[0].shape[1]
    h = np.eye(k)
    sigma = np.ones((len(omegas), k))
    if init == "random":
        q = [_orthonormal_columns(rng, a.shape[0], k) for a in omegas]
        v = _orthonormal_columns(rng, d, k)
        return q, h, v, sigma

    cross = np.zeros((d, d))
    for a in omegas:
        cross += a.T @ a
    w, vecs = np.linalg.eigh(cross)
    v = vecs[:, np.argsort(w)[::-1][:k]]
    # deterministic eigenvector signs: largest-magnitude entry positive
    pivots = v[np.argmax(np.abs(v), axis=0), np.arange(k)]
    v = v * np.where(pivots < 0, -1.0, 1.0)
    q = [_polar(a @ v) for a in omegas]
    with np.errstate(all="ignore"):
        try:
            hg, vg, sg = _gram_refine(omegas, q, k, rng)
        except np.linalg.LinAlgError:
            return q, h, v, sigma
    if np.isfinite(hg).all() and np.isfinite(vg).all() and np.isfinite(sg).all():
        qg = _procrustes(omegas, hg, vg, sg)
        if _squared_error(omegas, qg, hg, vg, sg) < _squared_error(omegas, q, h, v, sigma):
            return qg, hg, vg, sg
    return q, h, v, sigma


def init_model(
    slices: Sequence[CovarianceSlice | np.ndarray],
    opts: SolverOptions,
    rng: np.random.Generator | None = None,
) -> Parafac2Model:
    """Initial factors for :func:`decompose`.

    ``init="random"`` draws ``Q_l`` and ``V`` as orthonormalised seeded
    Gaussians with ``H = I`` and unit ``sigma``. ``init="svd"`` takes ``V``
    from the top-``k`` eigenvectors of ``sum_l omega_l^T omega_l``, fits each
    ``Q_l`` to it by Procrustes, then tries a closed-form CP solve of the
    projected slices and keeps it when it lowers the error.
    """
    omegas = _omegas(slices)
    _validate(omegas, opts.rank)
    rng = rng if rng is not None else np.random.default_rng(opts.seed)
    q, h, v, sigma = _initial_state(omegas, opts.rank, opts.init, rng)
    norm2 = _norm2(omegas)
    err2 = _squared_error(omegas, q, h, v, sigma)
    return Parafac2Model(opts.rank, v, h, q, sigma, fit=_fit_from(err2, norm2),
                         history=(err2,), norm2=norm2, options=opts)


def _cp_cycle(omegas, q, h, v, sigma):
    """One CP-ALS pass over ``B_l = Q_l^T omega_l`` for H, V, sigma; then rescale."""
    b = [ql.T @ a for ql, a in zip(q, omegas)]
    ss = sigma.T @ sigma
    m_h = sum(bl @ (v * sl) for bl, sl in zip(b, sigma))
    h = _lsq_right(m_h, (v.T @ v) * ss)
    m_v = sum(bl.T @ (h * sl) for bl, sl in zip(b, sigma))
    v = _lsq_right(m_v, (h.T @ h) * ss)
    rhs = np.stack([np.einsum("ir,ij,jr->r", h, bl, v) for bl in b])
    sigma = _lsq_right(rhs, (h.T @ h) * (v.T @ v))
    h, v, sigma = _normalize(h, v, sigma)
    if not (np.isfinite(h).all() and np.isfinite(v).all() and np.isfinite(sigma).all()):
        raise NumericalBreakdown("non-finite factor after ALS sweep")
    return h, v, sigma


def als_sweep(
    model: Parafac2Model, slices: Sequence[CovarianceSlice | np.ndarray]
) -> Parafac2Model:
    """Run one full ALS sweep (Procrustes, CP cycle, rescale) and return the updated model."""
    omegas = _omegas(slices)
    _check_shapes(model, omegas)
    q = _procrustes(omegas, model.h, model.v, model.sigma)
    h, v, sigma = _cp_cycle(omegas, q, model.h, model.v, model.sigma)
    err2 = _squared_error(omegas, q, h, v, sigma)
    norm2 = _norm2(omegas)
    return replace(
        model,
        q=q, h=h, v=v, sigma=sigma,
        fit=_fit_from(err2, norm2),
        iterations=model.iterations + 1,
        history=model.history + (err2,),
        norm2=norm2,
    )


def _fix_signs(v: np.ndarray, sigma: np.ndarray):
    flip = np.where(sigma.sum(axis=0) < 0, -1.0, 1.0)
    return v * flip, sigma * flip


class _Anderson:
    """Type-II Anderson mixing over flattened (H, V, sigma) iterates."""

    def __init__(self, memory: int):
        self.memory = memory
        self.xs: list[np.ndarray] = []
        self.gs: list[np.ndarray] = []

    def propose(self, x: np.ndarray, g: np.ndarray) -> np.ndarray | None:
        self.xs = (self.xs + [x])[-(self.memory + 1):]
        self.gs = (self.gs + [g])[-(self.memory + 1):]
        if len(self.xs) < 2:
            return None
        gs = np.array(self.gs)
        f = gs - np.array(self.xs)
        df = np.diff(f, axis=0).T
        dg = np.diff(gs, axis=0).T
        gamma = np.linalg.lstsq(df, f[-1], rcond=None)[0]
        cand = g - dg @ gamma
        return cand if np.isfinite(cand).all() else None


def _pack(h, v, sigma):
    return np.concatenate([h.ravel(), v.ravel(), sigma.ravel()])


def _unpack(x, k, d, n):
    return x[:k * k].reshape(k, k), x[k * k:k * k + d * k].reshape(d, k), x[k * k + d * k:].reshape(n, k)


def _run(omegas, state, opts: SolverOptions, norm2: float):
    q, h, v, sigma = state
    k, d, n = opts.rank, omegas[0].shape[1], len(omegas)
    # the state error always uses the Procrustes-optimal Q for (h, v, sigma)
    q = _procrustes(omegas, h, v, sigma)
    err2 = _squared_error(omegas, q, h, v, sigma)
    history = [err2]
    mixer = _Anderson(opts.memory) if opts.accelerate else None
    converged = False
    sweeps = 0
    for sweeps in range(1, opts.max_sweeps + 1):
        x = _pack(h, v, sigma)
        h, v, sigma = _cp_cycle(omegas, q, h, v, sigma)
        q = _procrustes(omegas, h, v, sigma)
        new = _squared_error(omegas, q, h, v, sigma)
        if mixer is not None:
            cand = mixer.propose(x, _pack(h, v, sigma))
            if cand is not None:
                hc, vc, sc = _normalize(*_unpack(cand, k, d, n))
                qc = _procrustes(omegas, hc, vc, sc)
                err_c = _squared_error(omegas, qc, hc, vc, sc)
                if err_c < new:
                    q, h, v, sigma, new = qc, hc, vc, sc, err_c
        history.append(new)
        prev, err2 = err2, new
        if err2 <= _EXACT_FIT2 * norm2 or abs(prev - err2) / max(prev, _EPS_FLOOR) < opts.rel_tol:
            converged = True
            break
    return (q, h, v, sigma), history, sweeps, converged


def decompose(
    slices: Sequence[CovarianceSlice | np.ndarray], opts: SolverOptions | None = None
) -> Parafac2Model:
    """Fit a PARAFAC2 model to ``slices``.

    Iterates ALS sweeps until the relative change of the squared error drops
    below ``opts.rel_tol``, the fit is exact to working precision, or
    ``opts.max_sweeps`` is reached. Non-convergence is reported through
    ``converged=False``, not raised. With ``opts.n_init > 1`` the best of
    several seeded starts is returned; a start that fits exactly ends the
    search early.

    Finally each column of ``V`` is sign-flipped (with ``sigma``) so that
    the component's pseudo-singular values sum to a non-negative number.
    """
    opts = opts or SolverOptions()
    omegas = _omegas(slices)
    _validate(omegas, opts.rank)
    for i, a in enumerate(omegas):
        if not np.any(a):
            raise ZeroInput(f"slice {i} is identically zero")
    norm2 = _norm2(omegas)

    streams = np.random.SeedSequence(opts.seed).spawn(opts.n_init)
    best = None
    for start, stream in enumerate(streams):
        rng = np.random.default_rng(opts.seed) if start == 0 else np.random.default_rng(stream)
        state = _initial_state(omegas, opts.rank, opts.init, rng)
        result = _run(omegas, state, opts, norm2)
        if best is None or result[1][-1] < best[1][-1]:
            best = result
        if best[1][-1] <= _EXACT_FIT2 * norm2:
            break
    (q, h, v, sigma), history, sweeps, converged = best
    if not converged:
        logger.warning("PARAFAC2 did not converge in %d sweeps (fit %.3g)",
                       opts.max_sweeps, _fit_from(history[-1], norm2))

    v, sigma = _fix_signs(v, sigma)
    return Parafac2Model(
        rank=opts.rank, v=v, h=h, q=q, sigma=sigma,
        fit=_fit_from(history[-1], norm2),
        iterations=sweeps, converged=converged,
        history=tuple(history), norm2=norm2, options=opts,
    )


def _check_shapes(model: Parafac2Model, omegas: list[np.ndarray]) -> None:
    if len(omegas) != model.n_slices:
        raise ShapeMismatch(f"model has {model.n_slices} slices, got {len(omegas)}")
    for i, (a, ql) in enumerate(zip(omegas, model.q)):
        if a.shape != (ql.shape[0], model.v.shape[0]):
            raise ShapeMismatch(
                f"slice {i} has shape {a.shape}, model expects {(ql.shape[0], model.v.shape[0])}"
            )


def reconstruct(model: Parafac2Model, index: int) -> np.ndarray:
    """``Q_l H diag(sigma_l) V^T`` for slice ``index``."""
    index = model._check(index)
    return (model.q[index] @ (model.h * model.sigma[index])) @ model.v.T


def fit_error(model: Parafac2Model, slices: Sequence[CovarianceSlice | np.ndarray]) -> float:
    """Relative Frobenius error ``sqrt(sum ||omega_l - recon_l||^2 / sum ||omega_l||^2)``."""
    omegas = _omegas(slices)
    _check_shapes(model, omegas)
    err2 = _squared_error(omegas, model.q, model.h, model.v, model.sigma)
    return _fit_from(err2, _norm2(omegas))


def coupling_deviation(model: Parafac2Model) -> float:
    """``max_l ||U_l^T U_l - H^T H||_inf`` (elementwise max)."""
    hh = model.h.T @ model.h
    return max(float(np.abs(model.u(i).T @ model.u(i) - hh).max()) for i in range(model.n_slices))


# --------------------------------------------------------------------------
# persistence


def save_model(model: Parafac2Model, directory: str | Path, group_ids: Sequence[str] = ()) -> Path:
    """Write factors as RFM1 matrices plus ``meta.json`` into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_matrix(model.v, directory / "V.rfm")
    write_matrix(model.h, directory / "H.rfm")
    for i, (ql, sl) in enumerate(zip(model.q, model.sigma)):
        write_matrix(ql, directory / f"Q_{i}.rfm")
        write_matrix(sl.reshape(-1, 1), directory / f"sigma_{i}.rfm")
    meta = {
        "rank": model.rank,
        "n_slices": model.n_slices,
        "groups": list(group_ids),
        "fit": model.fit,
        "iterations": model.iterations,
        "converged": model.converged,
        "seed": model.options.seed if model.options else None,
        "options": model.options.to_dict() if model.options else None,
    }
    (directory / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n",
                                         encoding="utf-8")
    return directory


def load_model(directory: str | Path) -> tuple[Parafac2Model, list[str]]:
    """Inverse of :func:`save_model`; returns ``(model, group_ids)``."""
    directory = Path(directory)
    try:
        meta = json.loads((directory / "meta.json").read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read model metadata in {directory}: {exc}") from exc
    n = meta["n_slices"]
    q = [read_matrix(directory / f"Q_{i}.rfm").values.copy() for i in range(n)]
    sigma = np.stack([read_matrix(directory / f"sigma_{i}.rfm").values[:, 0] for i in range(n)])
    opts = SolverOptions(**meta["options"]) if meta.get("options") else None
    model = Parafac2Model(
        rank=meta["rank"],
        v=read_matrix(directory / "V.rfm").values.copy(),
        h=read_matrix(directory / "H.rfm").values.copy(),
        q=q, sigma=sigma,
        fit=meta["fit"], iterations=meta["iterations"], converged=meta["converged"],
        options=opts,
    )
    return model, list(meta.get("groups") or [])
