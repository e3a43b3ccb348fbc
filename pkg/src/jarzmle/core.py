"""Domain types shared by every module: the latent-model interface, particle
clouds, optimizer state, run configuration and trajectories.

Models are evaluated in batch: a position argument of shape ``(..., d_x)``
yields potentials of shape ``(...)`` and gradients with the trailing axis
replaced by ``d_x`` or ``d_theta``.
"""

from __future__ import annotations

import abc
import csv
import io
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np


class JarzmleError(RuntimeError):
    """Base class for algorithmic failures."""


class ParticleDivergenceError(JarzmleError):
    def __init__(self, message: str = "particle diverged (reduce h)", iteration: int | None = None):
        self.iteration = iteration
        if iteration is not None:
            message = f"{message} at iteration {iteration}"
        super().__init__(message)


class WeightDegeneracyError(JarzmleError):
    def __init__(self, message: str = "weight degeneracy: all weights zero", iteration: int | None = None):
        self.iteration = iteration
        if iteration is not None:
            message = f"{message} at iteration {iteration}"
        super().__init__(message)


class LatentModel(abc.ABC):
    """Joint potential ``U(theta, x) = -log p_theta(x, y)`` with analytic gradients."""

    dim_x: int
    dim_theta: int

    @abc.abstractmethod
    def potential(self, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
        ...

    @abc.abstractmethod
    def grad_x(self, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
        ...

    @abc.abstractmethod
    def grad_theta(self, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
        ...

    @abc.abstractmethod
    def init_particles(self, theta0: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
        ...

    def potential_and_grad_x(self, theta: np.ndarray, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return self.potential(theta, x), self.grad_x(theta, x)

    def project_theta(self, theta: np.ndarray) -> np.ndarray:
        """Map a parameter onto the model's admissible set (identity by default)."""
        return theta

    def theta_log_prior(self, theta: np.ndarray) -> float:
        """Log-density of any hyperprior folded into ``U`` (none by default)."""
        return 0.0


@dataclass(frozen=True)
class GradientReport:
    max_rel_err_x: float
    max_rel_err_theta: float

    @property
    def max_rel_err(self) -> float:
        return max(self.max_rel_err_x, self.max_rel_err_theta)


def _rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    # absolute floor keeps vanishing components from dominating
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1.0)
    return float(np.max(np.abs(analytic - numeric) / scale)) if analytic.size else 0.0


def check_gradients(model: LatentModel, theta, x, fd_step: float = 1e-5) -> GradientReport:
    """Compare analytic gradients against central finite differences.

    The relative error of each component is measured against
    ``max(|analytic|, |numeric|, 1)``.
    """
    if fd_step <= 0:
        raise ValueError("fd_step must be positive")
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(x))):
        raise ValueError("probe point must be finite")

    def u(t, z):
        val = float(model.potential(t, z))
        if not np.isfinite(val):
            raise ValueError("potential undefined at probe")
        return val

    u(theta, x)
    num_x = np.empty_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = fd_step
        num_x[j] = (u(theta, x + e) - u(theta, x - e)) / (2 * fd_step)
    num_t = np.empty_like(theta)
    for j in range(theta.size):
        e = np.zeros_like(theta)
        e[j] = fd_step
        num_t[j] = (u(theta + e, x) - u(theta - e, x)) / (2 * fd_step)
    gx = np.asarray(model.grad_x(theta, x), dtype=float).reshape(x.shape)
    gt = np.asarray(model.grad_theta(theta, x), dtype=float).reshape(theta.shape)
    return GradientReport(_rel_err(gx, num_x), _rel_err(gt, num_t))


# -- random streams ---------------------------------------------------------

STREAM_INIT = 0
STREAM_SWEEP = 1
STREAM_RESAMPLE = 2
STREAM_THETA = 3


def substream(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator keyed by ``(seed, *keys)``.

    Drawing the same key always gives the same numbers regardless of what
    other streams have been consumed, which keeps runs reproducible when the
    particle sweep is split across workers.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed) & (2**64 - 1), *keys])))


# -- state containers -------------------------------------------------------


@dataclass(frozen=True)
class ParticleCloud:
    """N weighted particles plus the evidence collected at past resampling events."""

    positions: np.ndarray
    log_weights: np.ndarray
    evidence_segments: tuple[float, ...] = ()

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim == 1:
            pos = pos[:, None]
        lw = np.asarray(self.log_weights, dtype=float).reshape(-1)
        if pos.shape[0] != lw.shape[0]:
            raise ValueError("positions and log_weights disagree on particle count")
        if not np.all(np.isfinite(pos)):
            raise ParticleDivergenceError()
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "log_weights", lw)
        object.__setattr__(self, "evidence_segments", tuple(float(s) for s in self.evidence_segments))

    @classmethod
    def initial(cls, positions: np.ndarray) -> "ParticleCloud":
        positions = np.asarray(positions, dtype=float)
        return cls(positions, np.zeros(positions.shape[0]))

    @property
    def particle_count(self) -> int:
        return self.positions.shape[0]

    def to_csv(self, path_or_buf=None, header_comment: str | None = None) -> str | None:
        """One row per particle: ``log_weight, x_0 .. x_{d-1}``.

        Segment values go into a ``# evidence_segments=`` comment line so the
        whole cloud round-trips.
        """
        out = io.StringIO()
        if header_comment:
            out.write(f"# {header_comment}\n")
        out.write("# evidence_segments=" + ";".join(_fmt(s) for s in self.evidence_segments) + "\n")
        w = csv.writer(out, lineterminator="\n")
        d = self.positions.shape[1]
        w.writerow(["log_weight", *[f"x_{j}" for j in range(d)]])
        for a, row in zip(self.log_weights, self.positions):
            w.writerow([_fmt(a), *[_fmt(v) for v in row]])
        return _emit(out.getvalue(), path_or_buf)

    @classmethod
    def from_csv(cls, path_or_buf) -> "ParticleCloud":
        comments, rows = _read_csv(path_or_buf)
        segments: tuple[float, ...] = ()
        for c in comments:
            if c.startswith("evidence_segments="):
                body = c.split("=", 1)[1]
                segments = tuple(float(s) for s in body.split(";") if s)
        data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float)
        if data.size == 0:
            data = np.zeros((0, len(rows[0])))
        return cls(data[:, 1:], data[:, 0], segments)


@dataclass
class ThetaState:
    theta: np.ndarray
    optimizer_state: dict[str, Any] = field(default_factory=dict)
    iteration: int = 0


@dataclass(frozen=True)
class OptimizerSpec:
    kind: str = "sgd"
    gamma: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


@dataclass(frozen=True)
class RunConfig:
    """Tunables of a JALA-EM run.

    ``ess_threshold`` is a fraction of ``n_particles``: resampling fires when
    ``ESS / N < ess_threshold``. ``normalize_gradients`` rescales ``g`` to unit
    norm before the optimizer step and ``max_grad_norm`` caps its norm.
    """

    n_particles: int
    n_iterations: int
    langevin_step: float
    optimizer: OptimizerSpec = OptimizerSpec()
    ess_threshold: float = 0.0
    seed: int = 0
    theta_init: tuple[float, ...] = (0.0,)
    normalize_gradients: bool = False
    max_grad_norm: float = 1e4

    def __post_init__(self):
        if self.n_particles < 1:
            raise ValueError("n_particles must be >= 1")
        if self.n_iterations < 0:
            raise ValueError("n_iterations must be >= 0")
        if not self.langevin_step > 0:
            raise ValueError("langevin_step must be > 0")
        if not 0.0 <= self.ess_threshold <= 1.0:
            raise ValueError("ess_threshold must lie in [0, 1]")
        object.__setattr__(self, "theta_init", tuple(float(t) for t in np.atleast_1d(self.theta_init)))


@dataclass
class Trajectory:
    """Per-iteration record of a fit, rows ``k = 0..K``.

    Row ``k`` holds the parameter ``theta_k`` used during iteration ``k``, the
    norm of the gradient estimate computed from it, the ESS of the weights
    entering iteration ``k`` (before any resampling decision taken on them),
    the running log-evidence, and whether those weights were resampled.
    Baselines store NaN in ``log_evidence``.
    """

    theta: np.ndarray
    ess: np.ndarray
    log_evidence: np.ndarray
    grad_norm: np.ndarray
    resampled: np.ndarray
    final_positions: np.ndarray | None = None
    final_weights: np.ndarray | None = None

    @property
    def k(self) -> np.ndarray:
        return np.arange(self.theta.shape[0])

    def __len__(self) -> int:
        return self.theta.shape[0]

    def columns(self) -> list[str]:
        return ["k", *[f"theta_{j}" for j in range(self.theta.shape[1])], "ess", "log_evidence", "grad_norm", "resampled"]

    def to_csv(self, path_or_buf=None, header_comment: str | None = None) -> str | None:
        out = io.StringIO()
        if header_comment:
            out.write(f"# {header_comment}\n")
        w = csv.writer(out, lineterminator="\n")
        w.writerow(self.columns())
        for k in range(len(self)):
            le = self.log_evidence[k]
            w.writerow(
                [
                    k,
                    *[_fmt(t) for t in self.theta[k]],
                    _fmt(self.ess[k]),
                    "" if np.isnan(le) else _fmt(le),
                    _fmt(self.grad_norm[k]),
                    int(bool(self.resampled[k])),
                ]
            )
        return _emit(out.getvalue(), path_or_buf)

    @classmethod
    def from_csv(cls, path_or_buf) -> "Trajectory":
        _, rows = _read_csv(path_or_buf)
        header, body = rows[0], rows[1:]
        d = sum(1 for h in header if h.startswith("theta_"))
        theta = np.array([[float(r[1 + j]) for j in range(d)] for r in body]).reshape(len(body), d)
        col = {h: i for i, h in enumerate(header)}
        get = lambda name, conv=float: np.array([conv(r[col[name]]) if r[col[name]] != "" else np.nan for r in body])
        return cls(
            theta=theta,
            ess=get("ess"),
            log_evidence=get("log_evidence"),
            grad_norm=get("grad_norm"),
            resampled=get("resampled").astype(bool),
        )

    def particles_csv(self, path_or_buf=None, header_comment: str | None = None) -> str | None:
        """Terminal particle dump: ``weight, x_0 .. x_{d-1}`` with normalized weights."""
        if self.final_positions is None:
            raise ValueError("trajectory carries no terminal particles")
        out = io.StringIO()
        if header_comment:
            out.write(f"# {header_comment}\n")
        w = csv.writer(out, lineterminator="\n")
        d = self.final_positions.shape[1]
        w.writerow(["weight", *[f"x_{j}" for j in range(d)]])
        for wt, row in zip(self.final_weights, self.final_positions):
            w.writerow([_fmt(wt), *[_fmt(v) for v in row]])
        return _emit(out.getvalue(), path_or_buf)


def _fmt(v) -> str:
    # repr of a python float is the shortest string that round-trips exactly
    return repr(float(v))


def _emit(text: str, path_or_buf):
    if path_or_buf is None:
        return text
    if hasattr(path_or_buf, "write"):
        path_or_buf.write(text)
    else:
        with open(path_or_buf, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return None


def _read_csv(path_or_buf) -> tuple[list[str], list[list[str]]]:
    if hasattr(path_or_buf, "read"):
        text = path_or_buf.read()
    else:
        with open(path_or_buf, encoding="utf-8") as fh:
            text = fh.read()
    comments, body = [], []
    for line in text.splitlines():
        if line.startswith("#"):
            comments.append(line[1:].strip())
        elif line:
            body.append(line)
    return comments, list(csv.reader(body))


def as_theta(theta: Sequence[float] | np.ndarray | float) -> np.ndarray:
    return np.atleast_1d(np.asarray(theta, dtype=float)).copy()
