"""Plane-phantom spatial calibration.

A pixel ``(u, v)`` on the phantom floor line must satisfy

    e3 . (cTt @ tTr @ rTp @ [sx*u, sy*v, 0, 1]) = 0

where ``tTr`` is the tracked transducer pose, ``rTp`` the unknown
image-to-transducer transform and ``cTt`` places the tracker frame relative
to the phantom whose floor is ``z = 0``. Only the third row of ``cTt``
enters, so ``x2``, ``y2`` and ``alpha2`` cannot be recovered and are pinned;
the remaining 11 unknowns are solved by Levenberg-Marquardt.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .geometry import (Pose6, RigidTransform, euler_derivatives, euler_to_matrix,
                       make_transform)

PARAM_NAMES = ("sx", "sy",
               "x1", "y1", "z1", "alpha1", "beta1", "gamma1",
               "x2", "y2", "z2", "alpha2", "beta2", "gamma2")
ANGLE_NAMES = frozenset({"alpha1", "beta1", "gamma1", "alpha2", "beta2", "gamma2"})
DEFAULT_FIXED = frozenset({"x2", "y2", "alpha2"})


class IdentifiabilityError(RuntimeError):
    def __init__(self, message, condition=np.inf, weakest=None):
        super().__init__(message)
        self.condition = condition
        self.weakest = weakest


@dataclass(frozen=True)
class CalibrationParams:
    sx: float
    sy: float
    rTp_pose: Pose6 = Pose6()
    cTt_pose: Pose6 = Pose6()
    fixed: frozenset = DEFAULT_FIXED

    def __post_init__(self):
        if not (self.sx > 0 and self.sy > 0):
            raise ValueError(f"pixel scales must be positive, got sx={self.sx}, sy={self.sy}")
        fixed = frozenset(self.fixed)
        unknown = fixed - set(PARAM_NAMES)
        if unknown:
            raise ValueError(f"unknown fixed parameters {sorted(unknown)}")
        object.__setattr__(self, "fixed", fixed)

    @property
    def rTp(self) -> RigidTransform:
        return make_transform(self.rTp_pose)

    @property
    def cTt(self) -> RigidTransform:
        return make_transform(self.cTt_pose)

    @property
    def free_names(self) -> tuple[str, ...]:
        return tuple(n for n in PARAM_NAMES if n not in self.fixed)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([[self.sx, self.sy], self.rTp_pose.as_array(),
                               self.cTt_pose.as_array()])

    @classmethod
    def from_vector(cls, vec, fixed=DEFAULT_FIXED) -> "CalibrationParams":
        vec = np.asarray(vec, dtype=float)
        return cls(float(vec[0]), float(vec[1]), Pose6.from_array(vec[2:8]),
                   Pose6.from_array(vec[8:14]), fixed)

    def free_vector(self) -> np.ndarray:
        full = self.to_vector()
        return np.array([full[PARAM_NAMES.index(n)] for n in self.free_names])

    def with_free(self, free) -> "CalibrationParams":
        full = self.to_vector()
        for n, v in zip(self.free_names, free):
            full[PARAM_NAMES.index(n)] = v
        return CalibrationParams.from_vector(full, self.fixed)

    def replace(self, **kw) -> "CalibrationParams":
        full = dict(zip(PARAM_NAMES, self.to_vector()))
        for k, v in kw.items():
            if k not in full:
                raise KeyError(k)
            full[k] = v
        return CalibrationParams.from_vector([full[n] for n in PARAM_NAMES], self.fixed)

    def as_dict(self) -> dict:
        return dict(zip(PARAM_NAMES, map(float, self.to_vector())))


@dataclass(frozen=True)
class CalibObservation:
    frame_index: int
    tTr: RigidTransform
    pixels: tuple

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=float)
        if px.shape != (2, 2):
            raise ValueError(f"need two (u, v) pixels, got shape {px.shape}")
        if np.allclose(px[0], px[1]):
            raise ValueError(f"frame {self.frame_index}: the two pixels coincide")
        object.__setattr__(self, "pixels", tuple(map(tuple, px)))


@dataclass
class SolveReport:
    params: CalibrationParams
    residual_rms: float
    covariance: np.ndarray
    jacobian_condition: float
    iterations: int
    rss_history: list = field(default_factory=list)

    @property
    def std_errors(self) -> dict:
        return {k: float(v) for k, v in zip(self.params.free_names, np.sqrt(np.clip(np.diag(self.covariance), 0, None)))}


def _stack(observations):
    T = np.stack([o.tTr.matrix for o in observations])
    px = np.array([o.pixels for o in observations], dtype=float).reshape(-1, 2)
    T = np.repeat(T, 2, axis=0)
    return T, px


def residuals(params: CalibrationParams, observations) -> np.ndarray:
    """Out-of-plane coordinate (mm) of every observed pixel, 2 per B-scan."""
    T, px = _stack(observations)
    q = np.zeros((len(px), 4))
    q[:, 0] = params.sx * px[:, 0]
    q[:, 1] = params.sy * px[:, 1]
    q[:, 3] = 1.0
    y = np.einsum("nij,nj->ni", T, q @ params.rTp.matrix.T)
    return y @ params.cTt.matrix[2]


def jacobian(params: CalibrationParams, observations, full: bool = False) -> np.ndarray:
    """Analytic derivatives of :func:`residuals` w.r.t. the free parameters."""
    T, px = _stack(observations)
    n = len(px)
    u, v = px[:, 0], px[:, 1]
    p1, p2 = params.rTp_pose, params.cTt_pose
    R1 = euler_to_matrix(p1.alpha, p1.beta, p1.gamma)
    R2 = euler_to_matrix(p2.alpha, p2.beta, p2.gamma)
    dR1 = euler_derivatives(p1.alpha, p1.beta, p1.gamma)
    dR2 = euler_derivatives(p2.alpha, p2.beta, p2.gamma)

    q = np.stack([params.sx * u, params.sy * v, np.zeros(n)], axis=1)
    # w = third row of cTt pushed through tTr: r = w3 . (R1 q + t1) + w4
    c3 = params.cTt.matrix[2]
    w = np.einsum("j,njk->nk", c3, T)
    w3 = w[:, :3]
    # y = tTr @ rTp @ q (transducer-frame point expressed in tracker frame)
    P1 = q @ R1.T + np.array([p1.x, p1.y, p1.z])
    y = np.einsum("nij,nj->ni", T[:, :3, :3], P1) + T[:, :3, 3]

    J = np.zeros((n, 14))
    J[:, 0] = np.einsum("ni,i->n", w3, R1[:, 0]) * u
    J[:, 1] = np.einsum("ni,i->n", w3, R1[:, 1]) * v
    J[:, 2:5] = w3
    for k in range(3):
        J[:, 5 + k] = np.einsum("ni,ni->n", w3, q @ dR1[k].T)
    J[:, 10] = 1.0
    for k in range(3):
        J[:, 11 + k] = y @ dR2[k][2]
    if full:
        return J
    cols = [PARAM_NAMES.index(nm) for nm in params.free_names]
    return J[:, cols]


def identifiability(J: np.ndarray, names) -> tuple[float, str | None]:
    """Condition number of the column-equilibrated normal matrix and the
    parameter dominating its weakest direction."""
    A = J.T @ J
    d = np.sqrt(np.diag(A))
    if np.any(d == 0):
        return np.inf, names[int(np.argmin(d))]
    As = A / np.outer(d, d)
    evals, evecs = np.linalg.eigh(As)
    lo = max(evals[0], 0.0)
    cond = evals[-1] / lo if lo > 0 else np.inf
    weakest = names[int(np.argmax(np.abs(evecs[:, 0])))]
    return float(cond), weakest


def solve_lm(observations, init: CalibrationParams, *, lam0: float = 1e-3,
             max_iter: int = 200, step_tol: float = 1e-10, rel_tol: float = 1e-12,
             max_condition: float = 1e12) -> SolveReport:
    """Levenberg-Marquardt on the free parameters with Marquardt scaling.

    Damping starts at ``lam0`` and is divided by 10 after an accepted step,
    multiplied by 10 after a rejected one. Raises IdentifiabilityError when
    the motion does not constrain every free parameter.
    """
    observations = list(observations)
    names = init.free_names
    m, p = 2 * len(observations), len(names)
    if m <= p:
        raise ValueError(f"{m} equations for {p} unknowns: need more B-scans")
    x = init.free_vector()
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite initial parameters")

    params = init
    r = residuals(params, observations)
    J = jacobian(params, observations)
    cond, weakest = identifiability(J, names)
    if cond > max_condition:
        raise IdentifiabilityError(
            f"normal matrix condition {cond:.3g} > {max_condition:.0e}; "
            f"weakest direction dominated by {weakest!r} (insufficient probe motion)",
            cond, weakest)

    rss = float(r @ r)
    history = [rss]
    lam = lam0
    it = 0
    while it < max_iter and rss > 0:
        it += 1
        A = J.T @ J
        g = J.T @ r
        D = np.diag(np.diag(A))
        try:
            step = np.linalg.solve(A + lam * D, -g)
        except np.linalg.LinAlgError:
            lam *= 10
            continue
        if np.max(np.abs(step)) < step_tol:
            break
        cand = params.with_free(x + step)
        r_new = residuals(cand, observations)
        rss_new = float(r_new @ r_new)
        if rss_new < rss:
            rel = (rss - rss_new) / rss
            x = cand.free_vector()
            params, r, rss = cand, r_new, rss_new
            J = jacobian(params, observations)
            history.append(rss)
            lam /= 10
            if rel < rel_tol:
                break
        else:
            lam *= 10
            if lam > 1e20:
                break

    cond, weakest = identifiability(J, names)
    if cond > max_condition:
        raise IdentifiabilityError(
            f"normal matrix condition {cond:.3g} at the solution; weakest direction {weakest!r}",
            cond, weakest)
    sigma2 = rss / (m - p)
    cov = sigma2 * np.linalg.inv(J.T @ J)
    cov = (cov + cov.T) / 2
    return SolveReport(params=params, residual_rms=float(np.sqrt(rss / m)), covariance=cov,
                       jacobian_condition=cond, iterations=it, rss_history=history)


def observation_from_line(frame_index, tTr, line):
    """Two pixels on a detected line: its segment endpoints."""
    (u1, v1), (u2, v2) = line.endpoints
    return CalibObservation(frame_index, tTr, ((u1, v1), (u2, v2)))


def covariance_table(report: SolveReport) -> str:
    """Correlation matrix and standard errors as a fixed-width table."""
    names = report.params.free_names
    cov = report.covariance
    sd = np.sqrt(np.clip(np.diag(cov), 0, None))
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = cov / np.outer(sd, sd)
    lines = ["param      std_err   " + " ".join(f"{n:>7s}" for n in names)]
    for i, n in enumerate(names):
        lines.append(f"{n:<8s} {sd[i]:10.4g} " + " ".join(f"{c:7.3f}" for c in corr[i]))
    return "\n".join(lines)
