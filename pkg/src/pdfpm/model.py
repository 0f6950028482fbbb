"""Composite multiobjective problems F_j = f_j + h_j and their oracles.

The smooth parts f_j are plain callables (optionally with an analytic
gradient).  The nonsmooth parts are either identically zero or the support
function of a box pre-image ``{z : -delta e <= Atilde z <= delta e}``, which
has the closed form ``delta * ||Atilde^{-T} x||_1``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path
from typing import Any, Callable, Optional, Sequence, Union

import numpy as np

from .errors import ConfigurationError, EvaluationError

__all__ = [
    "HolderMeta",
    "SmoothObjective",
    "Zero",
    "NonsmoothSpec",
    "BoxPreimageSupport",
    "ProblemSpec",
    "eval_F",
    "eval_h",
    "grad_p_norm",
    "least_squares",
    "p_norm_power",
    "make_aas1",
    "make_aas2",
    "problem_from_config",
    "load_problem",
    "PRESETS",
]


def _frozen(a, ndim=None):
    arr = np.array(a, dtype=float)
    if ndim is not None and arr.ndim != ndim:
        raise ConfigurationError(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class HolderMeta:
    """Regularity constants of f_j = s_j + r_j (Lipschitz part L, Holder part M, beta)."""

    L: float
    M: float
    beta: float

    def __post_init__(self):
        if not (self.L > 0 and self.M > 0 and 0 < self.beta <= 1):
            raise ConfigurationError("HolderMeta needs L, M > 0 and beta in (0, 1]")


@dataclass(frozen=True)
class SmoothObjective:
    """Smooth part f_j of one objective.

    ``params`` is a JSON-friendly description used for config echoes; it plays
    no role in evaluation.
    """

    eval: Callable[[np.ndarray], float]
    analytic_grad: Optional[Callable[[np.ndarray], np.ndarray]] = None
    holder_meta: Optional[HolderMeta] = None
    params: dict = field(default_factory=dict, compare=False)

    def __call__(self, x):
        return self.eval(x)


@dataclass(frozen=True)
class Zero:
    """h_j identically zero."""

    def value(self, x):
        return 0.0

    def to_config(self):
        return {"type": "zero"}


@dataclass(frozen=True)
class BoxPreimageSupport:
    """Support function of ``Z = {z : -delta e <= Atilde z <= delta e}``.

    ``Atilde^{-T}`` is computed once at construction.
    """

    Atilde: np.ndarray
    delta: float
    inv_t: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        A = _frozen(self.Atilde, ndim=2)
        if A.shape[0] != A.shape[1]:
            raise ConfigurationError(f"Atilde must be square, got {A.shape}")
        delta = float(self.delta)
        if not np.isfinite(delta) or delta < 0:
            raise ConfigurationError(f"delta must be a finite nonnegative number, got {delta}")
        scale = np.max(np.abs(A), axis=1)
        if np.any(scale == 0) or abs(np.linalg.det(A / scale[:, None])) <= 1e-12:
            raise ConfigurationError("Atilde is singular")
        inv_t = np.linalg.inv(A).T
        inv_t.setflags(write=False)
        object.__setattr__(self, "Atilde", A)
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "inv_t", inv_t)

    @property
    def n(self):
        return self.Atilde.shape[0]

    @property
    def stacked(self):
        """``(A_j, b_j)`` with ``A_j = [Atilde; -Atilde]`` and ``b_j = delta e``."""
        return np.vstack([self.Atilde, -self.Atilde]), np.full(2 * self.n, self.delta)

    def value(self, x):
        return self.delta * float(np.sum(np.abs(self.inv_t @ x)))

    def maximizer(self, x):
        """A point of Z attaining the support value at x (a subgradient of h at x)."""
        u = self.inv_t @ x
        return np.linalg.solve(self.Atilde, self.delta * np.sign(u))

    def to_config(self):
        return {"type": "box_preimage", "Atilde": self.Atilde.tolist(), "delta": self.delta}


NonsmoothSpec = Union[Zero, BoxPreimageSupport]


@dataclass(frozen=True)
class ProblemSpec:
    """An n-variable, m-objective composite problem with a box for random starts."""

    n: int
    objectives: tuple
    start_box: np.ndarray
    name: str = "custom"

    def __post_init__(self):
        objectives = tuple((f, h) for f, h in self.objectives)
        box = _frozen(self.start_box, ndim=2)
        if self.n < 1:
            raise ConfigurationError("n must be at least 1")
        if len(objectives) < 1:
            raise ConfigurationError("need at least one objective")
        if box.shape != (self.n, 2) or np.any(box[:, 0] > box[:, 1]):
            raise ConfigurationError("start_box must hold n intervals with lo <= hi")
        for j, (_, h) in enumerate(objectives):
            if isinstance(h, BoxPreimageSupport) and h.n != self.n:
                raise ConfigurationError(f"objective {j}: Atilde is {h.n}x{h.n}, expected n={self.n}")
            if not isinstance(h, (Zero, BoxPreimageSupport)):
                raise ConfigurationError(f"objective {j}: unsupported nonsmooth part {h!r}")
        object.__setattr__(self, "objectives", objectives)
        object.__setattr__(self, "start_box", box)

    @property
    def m(self):
        return len(self.objectives)

    @property
    def smooth(self):
        return [f for f, _ in self.objectives]

    @property
    def nonsmooth(self):
        return [h for _, h in self.objectives]

    def with_nonsmooth(self, parts, name=None):
        if len(parts) != self.m:
            raise ConfigurationError(f"expected {self.m} nonsmooth parts, got {len(parts)}")
        return ProblemSpec(
            self.n,
            tuple((f, h) for f, h in zip(self.smooth, parts)),
            self.start_box,
            name=self.name if name is None else name,
        )

    def to_config(self):
        return {
            "name": self.name,
            "n": self.n,
            "start_box": self.start_box.tolist(),
            "objectives": [
                {"smooth": dict(f.params), "nonsmooth": h.to_config()} for f, h in self.objectives
            ],
        }


def eval_h(spec, x):
    """Value of the nonsmooth part at x."""
    if isinstance(spec, Zero):
        return 0.0
    if isinstance(spec, BoxPreimageSupport):
        return spec.value(np.asarray(x, dtype=float))
    raise ConfigurationError(f"unsupported nonsmooth part {spec!r}")


def eval_smooth(problem, x):
    x = np.asarray(x, dtype=float)
    out = np.empty(problem.m)
    for j, f in enumerate(problem.smooth):
        out[j] = f.eval(x)
        if not np.isfinite(out[j]):
            raise EvaluationError(f"f_{j + 1} is not finite at x={x}", index=j, x=x)
    return out


def eval_hvec(problem, x):
    x = np.asarray(x, dtype=float)
    out = np.array([eval_h(h, x) for h in problem.nonsmooth])
    bad = np.flatnonzero(~np.isfinite(out))
    if bad.size:
        raise EvaluationError(f"h_{bad[0] + 1} is not finite at x={x}", index=int(bad[0]), x=x)
    return out


def eval_F(problem, x):
    """Return the vector (f_j(x) + h_j(x))_j."""
    x = np.asarray(x, dtype=float)
    if x.shape != (problem.n,):
        raise ConfigurationError(f"x has shape {x.shape}, expected ({problem.n},)")
    return eval_smooth(problem, x) + eval_hvec(problem, x)


# -- smooth test functions ---------------------------------------------------


def _ls_value(A, b, x):
    r = A @ x - b
    return 0.5 * float(r @ r)


def _ls_grad(A, b, x):
    return A.T @ (A @ x - b)


def least_squares(A, b):
    """f(x) = 1/2 ||Ax - b||^2 with its gradient A^T(Ax - b)."""
    A = _frozen(A, ndim=2)
    b = _frozen(b, ndim=1)
    return SmoothObjective(
        eval=partial(_ls_value, A, b),
        analytic_grad=partial(_ls_grad, A, b),
        params={"type": "least_squares", "A": A.tolist(), "b": b.tolist()},
    )


def _pn_value(D, c, mu, p, x):
    v = D @ (x - c)
    return mu / p * float(np.sum(np.abs(v) ** p))


def grad_p_norm(D, c, mu, p, x):
    """Gradient of (mu/p) ||D(x - c)||_p^p, i.e. mu D^T s with s_i = sign(v_i)|v_i|^(p-1)."""
    v = np.asarray(D) @ (np.asarray(x, dtype=float) - np.asarray(c, dtype=float))
    s = np.sign(v) * np.abs(v) ** (p - 1.0)
    return mu * (np.asarray(D).T @ s)


def p_norm_power(D, mu, p, c=None):
    """f(x) = (mu/p) ||D(x - c)||_p^p for 1 < p < 2."""
    D = _frozen(D, ndim=2)
    c = _frozen(np.zeros(D.shape[1]) if c is None else c, ndim=1)
    if not 1.0 < p < 2.0:
        raise ConfigurationError(f"p must lie in (1, 2), got {p}")
    if mu <= 0:
        raise ConfigurationError(f"mu must be positive, got {mu}")
    return SmoothObjective(
        eval=partial(_pn_value, D, c, float(mu), float(p)),
        analytic_grad=partial(grad_p_norm, D, c, float(mu), float(p)),
        params={"type": "p_norm", "D": D.tolist(), "c": c.tolist(), "mu": float(mu), "p": float(p)},
    )


# -- presets -----------------------------------------------------------------

AAS1_PARAMS = {
    "A": [[2.0, 0.5], [0.5, 1.5]],
    "b": [1.0, -0.5],
    "p": 1.003,
    "mu": 0.9,
    "D": [[1.0, 0.8], [0.3, 1.2]],
}

AAS2_PARAMS = {
    "p1": 1.003,
    "mu1": 1.2,
    "D1": [[1.2, -0.3], [0.4, 1.5]],
    "c1": [1.5, -1.0],
    "p2": 1.002,
    "mu2": 0.8,
    "D2": [[1.8, 0.5], [-0.2, 1.1]],
    "c2": [-1.2, 0.8],
}


def make_aas1():
    """Least squares vs. a p-norm power (one Lipschitz, one Holder gradient)."""
    P = AAS1_PARAMS
    f1 = least_squares(P["A"], P["b"])
    f2 = p_norm_power(P["D"], P["mu"], P["p"])
    return ProblemSpec(2, ((f1, Zero()), (f2, Zero())), [[-2.0, 2.0], [-2.0, 2.0]], name="aas1")


def make_aas2():
    """Two shifted p-norm powers, both with Holder continuous gradients."""
    P = AAS2_PARAMS
    f1 = p_norm_power(P["D1"], P["mu1"], P["p1"], P["c1"])
    f2 = p_norm_power(P["D2"], P["mu2"], P["p2"], P["c2"])
    return ProblemSpec(2, ((f1, Zero()), (f2, Zero())), [[-5.0, 5.0], [-5.0, 5.0]], name="aas2")


PRESETS = {"aas1": make_aas1, "aas2": make_aas2}


# -- config documents ----------------------------------------------------------


def _smooth_from_config(doc):
    kind = doc.get("type")
    try:
        if kind == "least_squares":
            return least_squares(doc["A"], doc["b"])
        if kind == "p_norm":
            return p_norm_power(doc["D"], float(doc["mu"]), float(doc["p"]), doc.get("c"))
    except KeyError as exc:
        raise ConfigurationError(f"smooth objective of type {kind!r} lacks field {exc}") from None
    raise ConfigurationError(f"unknown smooth objective type {kind!r}")


def _nonsmooth_from_config(doc):
    if doc is None:
        return Zero()
    kind = doc.get("type", "zero")
    if kind == "zero":
        return Zero()
    if kind == "box_preimage":
        return BoxPreimageSupport(doc["Atilde"], float(doc["delta"]))
    raise ConfigurationError(f"unknown nonsmooth type {kind!r}")


def problem_from_config(doc: dict[str, Any]) -> ProblemSpec:
    """Build a problem from a JSON-like document.

    Matrices are row-major nested lists.  Example::

        {"name": "toy", "n": 2, "start_box": [[-1, 1], [-1, 1]],
         "objectives": [
            {"smooth": {"type": "least_squares", "A": [[1, 0], [0, 1]], "b": [0, 0]}},
            {"smooth": {"type": "p_norm", "D": [[1, 0], [0, 1]], "mu": 1.0, "p": 1.5,
                        "c": [1, 1]},
             "nonsmooth": {"type": "box_preimage", "Atilde": [[1, 0], [0, 1]], "delta": 0.1}}]}
    """
    if "preset" in doc:
        try:
            return PRESETS[doc["preset"]]()
        except KeyError:
            raise ConfigurationError(f"unknown preset {doc['preset']!r}") from None
    try:
        n = int(doc["n"])
        objectives = [
            (_smooth_from_config(o["smooth"]), _nonsmooth_from_config(o.get("nonsmooth")))
            for o in doc["objectives"]
        ]
        box = doc["start_box"]
    except (KeyError, TypeError) as exc:
        raise ConfigurationError(f"malformed problem document: {exc}") from None
    return ProblemSpec(n, tuple(objectives), box, name=str(doc.get("name", "custom")))


def load_problem(name_or_path: str | Path) -> ProblemSpec:
    """Resolve a preset name or read a JSON problem document from disk."""
    key = str(name_or_path)
    if key in PRESETS:
        return PRESETS[key]()
    path = Path(key)
    if not path.is_file():
        raise ConfigurationError(f"{key!r} is neither a preset ({', '.join(PRESETS)}) nor a file")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON ({exc})") from None
    return problem_from_config(doc)


def sample_start(problem: ProblemSpec, rng: np.random.Generator) -> np.ndarray:
    lo, hi = problem.start_box[:, 0], problem.start_box[:, 1]
    return rng.uniform(lo, hi)


def check_point(problem, x: Sequence[float]) -> np.ndarray:
    x = np.array(x, dtype=float)
    if x.shape != (problem.n,):
        raise ConfigurationError(f"x has shape {x.shape}, expected ({problem.n},)")
    return x
