"""Recover focal length and translation by silhouette alignment.

With the pelvis depth ``tz`` fixed, the translation ``(tx, ty)`` moves the
body inside the plane ``z = tz`` and the focal length only scales the image,
so the three remaining camera parameters can be fitted by maximizing the
overlap between the rendered body silhouette and the target mask.

The optimizer works on ``(log(f / tz), u, v[, log tz])`` where ``(u, v)`` is
the pelvis image offset from the principal point in pixels, ``u = f * tx / tz``.
Log-space keeps ``f`` and ``tz`` positive. The first coordinate is the image
scale, so a step in depth at fixed scale changes only the perspective, and
expressing the translation in pixels decouples it from zoom. Gradients are central finite differences of
the Gaussian-smoothed IoU objective; each coordinate has its own step size
that grows while the gradient sign is stable and halves when it flips, with
backtracking on any objective increase.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidArgumentError, SolverDivergedError
from .rasterizer import PENALTY, SilhouetteMask, downsample, gaussian_smooth, objective


@dataclass(frozen=True)
class CameraSolveConfig:
    sigma_px: float = 2.0
    max_iters: int = 300
    # initial per-coordinate steps: log(f/tz), u px, v px, log tz
    learning_rates: tuple = (0.1, 4.0, 4.0, 0.05)
    convergence_tol: float = 1e-5
    convergence_window: int = 10
    optimize_tz: bool = False
    # finite-difference half-widths in the same coordinates
    fd_steps: tuple = (5e-3, 0.5, 0.5, 5e-3)
    max_backtracks: int = 6
    # blur ladder run before the final sigma; the first rung fits the focal alone
    coarse_sigmas: tuple = (32.0, 16.0, 8.0, 4.0)
    focal_first: bool = True

    def __post_init__(self):
        object.__setattr__(self, "learning_rates", tuple(float(x) for x in self.learning_rates))
        object.__setattr__(self, "fd_steps", tuple(float(x) for x in self.fd_steps))
        object.__setattr__(self, "coarse_sigmas", tuple(float(x) for x in self.coarse_sigmas))
        if not self.sigma_px > 0:
            raise InvalidArgumentError(f"sigma_px must be positive, got {self.sigma_px}")
        if self.max_iters < 0:
            raise InvalidArgumentError(f"max_iters must be >= 0, got {self.max_iters}")
        if len(self.learning_rates) != 4 or min(self.learning_rates) <= 0:
            raise InvalidArgumentError("learning_rates must be 4 positive values")
        if len(self.fd_steps) != 4 or min(self.fd_steps) <= 0:
            raise InvalidArgumentError("fd_steps must be 4 positive values")
        if not self.convergence_tol > 0 or self.convergence_window < 1:
            raise InvalidArgumentError("convergence_tol and convergence_window must be positive")


@dataclass
class CameraSolveResult:
    f_px: float
    tx: float
    ty: float
    tz: float
    final_objective: float
    iters_used: int
    converged: bool
    trace: list = field(default_factory=list)

    @property
    def soft_iou(self) -> float:
        return 1.0 - self.final_objective

    @property
    def params(self) -> tuple:
        return (self.f_px, self.tx, self.ty, self.tz)

    def to_json(self) -> dict:
        return {"f_px": self.f_px, "tx_m": self.tx, "ty_m": self.ty, "tz_m": self.tz,
                "iou": self.soft_iou, "iters": self.iters_used, "converged": self.converged}


def numerical_gradient(fn, params, steps) -> np.ndarray:
    """Central differences ``(fn(p + h e_i) - fn(p - h e_i)) / 2h`` per coordinate."""
    p = np.asarray(params, dtype=float)
    h = np.broadcast_to(np.asarray(steps, dtype=float), p.shape)
    if np.any(h <= 0):
        raise InvalidArgumentError("finite-difference steps must be positive")
    grad = np.empty_like(p)
    for i in range(p.size):
        e = np.zeros_like(p)
        e[i] = h[i]
        hi, lo = fn(p + e), fn(p - e)
        if not (math.isfinite(hi) and math.isfinite(lo)):
            raise SolverDivergedError(f"non-finite objective while probing coordinate {i}")
        grad[i] = (hi - lo) / (2 * h[i])
    return grad


def _to_params(z, tz_fixed=None):
    tz = math.exp(z[3]) if len(z) == 4 else tz_fixed
    scale = math.exp(z[0])
    return (scale * tz, z[1] / scale, z[2] / scale, tz)


def _to_z(f, tx, ty, tz, free_tz):
    z = [math.log(f / tz), f * tx / tz, f * ty / tz]
    if free_tz:
        z.append(math.log(tz))
    return np.array(z)


def _prepare_target(target: SilhouetteMask, sigma_px: float) -> SilhouetteMask:
    if target.kind == "soft" and target.sigma_px == sigma_px:
        return target
    return gaussian_smooth(target, sigma_px)


def _check_target(target: SilhouetteMask):
    if np.mean(target.values > 0.5) < 0.01:
        raise InvalidArgumentError("target mask is empty (fewer than 1% of pixels inside)")


def _minimize(fn, z0, fz0, active, max_iters, cfg: CameraSolveConfig, scale=1.0):
    """Sign-adaptive descent over the ``active`` coordinates of ``z``.

    Returns ``(z, fz, iters, converged, path)`` where ``path`` lists the
    accepted objective value and point after every iteration.
    """
    d = len(z0)
    steps = np.array(cfg.learning_rates[:d]) * scale
    fd = np.array(cfg.fd_steps[:d]) * scale
    min_step, max_step = fd / 4, steps * 20
    idx = np.flatnonzero(active)

    z, fz = np.array(z0, dtype=float), fz0
    history = [fz]
    path = []
    prev_sign = np.zeros(d)
    converged = False
    it = 0
    while it < max_iters:
        if fz <= 0.0:
            converged = True
            break
        it += 1
        g = np.zeros(d)
        g[idx] = numerical_gradient(lambda sub: fn(_embed(z, idx, sub)), z[idx], fd[idx])
        sign = np.sign(g)
        if not sign.any():
            break  # flat objective: nothing to follow
        agree = sign * prev_sign
        steps = np.where(agree > 0, steps * 1.2, np.where(agree < 0, steps * 0.5, steps))
        steps = np.clip(steps, min_step, max_step)

        accepted = False
        trial = steps.copy()
        for _ in range(cfg.max_backtracks + 1):
            cand = z - trial * sign
            fc = _checked(fn(cand))
            if fc < fz:
                accepted = True
                break
            trial = np.maximum(np.where(sign != 0, trial * 0.5, trial), min_step)
        if not accepted:
            # the joint sign step can point uphill when coordinates are coupled;
            # fall back to moving one coordinate at a time, steepest first
            for i in sorted(idx, key=lambda j: -abs(g[j]) * steps[j]):
                h = steps[i]
                for _ in range(3):
                    cand = z.copy()
                    cand[i] -= h * sign[i]
                    fc = _checked(fn(cand))
                    if fc < fz:
                        accepted = True
                        break
                    h = max(h * 0.5, min_step[i])
                if accepted:
                    sign = np.where(np.arange(d) == i, sign, 0.0)
                    trial = np.maximum(steps * 0.5, min_step)
                    trial[i] = h
                    break
        steps = trial if accepted else np.maximum(steps * 0.5, min_step)
        if accepted:
            z, fz = cand, fc
            prev_sign = sign
        else:
            prev_sign = np.zeros(d)
        history.append(fz)
        path.append((fz, z.copy()))
        w = cfg.convergence_window
        if len(history) > w and history[-1 - w] - fz < cfg.convergence_tol:
            converged = True
            break
    return z, fz, it, converged, path


def _checked(value):
    if math.isnan(value):
        raise SolverDivergedError("objective returned NaN")
    return value


def _embed(z, idx, sub):
    out = np.array(z, dtype=float)
    out[idx] = sub
    return out


def _run(mesh, target: SilhouetteMask, z0, tz_fixed, cfg: CameraSolveConfig, ladder: bool):
    free_tz = len(z0) == 4
    d = len(z0)

    def make_fn(sigma):
        # coarse rungs run on a block-averaged image so the blur stays ~4 px
        k = 1 if sigma <= cfg.sigma_px else 2 ** max(0, int(math.floor(math.log2(sigma / 4))))
        small = downsample(target, k)
        smoothed = _prepare_target(small, sigma / k)
        principal = (target.width / 2 / k, target.height / 2 / k)

        def fn(z):
            f, tx, ty, tz = _to_params(z, tz_fixed)
            return objective((f / k, tx, ty, tz), mesh, smoothed, sigma / k, principal)
        return fn, k

    def entry(it, sigma, value, z):
        f, tx, ty, tz = _to_params(z, tz_fixed)
        return {"iter": it, "sigma": sigma, "objective": value,
                "f_px": f, "tx": tx, "ty": ty, "tz": tz}

    final_fn, _ = make_fn(cfg.sigma_px)
    f_init = final_fn(z0)
    if not math.isfinite(f_init):
        raise SolverDivergedError("non-finite objective at the initial point")
    trace = [entry(0, cfg.sigma_px, f_init, z0)]
    best_z, best_f = np.array(z0, dtype=float), f_init

    stages = []
    if ladder and f_init > 0:
        focal_only = np.zeros(d, bool)
        focal_only[0] = True
        for k, sigma in enumerate(cfg.coarse_sigmas):
            if k == 0 and cfg.focal_first:
                stages.append((sigma, focal_only))
            stages.append((sigma, np.ones(d, bool)))
    stages.append((cfg.sigma_px, np.ones(d, bool)))

    z = np.array(z0, dtype=float)
    used, converged = 0, False
    try:
        for n, (sigma, active) in enumerate(stages):
            last = n == len(stages) - 1
            budget = cfg.max_iters - used if last else min(40, (cfg.max_iters - used) // 2)
            fn, k = (final_fn, 1) if last else make_fn(sigma)
            fz = f_init if (last and n == 0) else fn(z)
            z, fz, iters, conv, path = _minimize(fn, z, fz, active, budget, cfg, scale=k)
            trace += [entry(used + i + 1, sigma, v, p) for i, (v, p) in enumerate(path)]
            used += iters
            if last:
                converged = conv
                if fz < best_f:
                    best_z, best_f = z, fz
    except SolverDivergedError as exc:
        raise SolverDivergedError(str(exc), trace) from None
    if best_f >= PENALTY:
        raise SolverDivergedError(
            "no feasible camera found: the body stays behind the camera or outside the image",
            trace)
    f, tx, ty, tz = _to_params(best_z, tz_fixed)
    return CameraSolveResult(f, tx, ty, tz, best_f, used, converged, trace)


def solve_camera(mesh, target: SilhouetteMask, tz_init: float,
                 cfg: CameraSolveConfig | None = None) -> CameraSolveResult:
    """Fit ``(f, tx, ty)`` starting from ``(target.height, 0, 0)`` at depth ``tz_init``.

    A coarse-to-fine blur ladder runs first (``cfg.coarse_sigmas``), its first
    rung adjusting the focal length alone. The reported objective is always
    measured at ``cfg.sigma_px``. With ``cfg.optimize_tz`` the result is then
    passed through :func:`refine_tz`.
    """
    cfg = cfg or CameraSolveConfig()
    if not (math.isfinite(tz_init) and tz_init > 0):
        raise InvalidArgumentError(f"tz_init must be positive, got {tz_init}")
    _check_target(target)
    z0 = _to_z(float(target.height), 0.0, 0.0, tz_init, free_tz=False)
    result = _run(mesh, target, z0, tz_init, cfg, ladder=True)
    if cfg.optimize_tz:
        refined = refine_tz(mesh, target, result, cfg)
        refined.trace = result.trace + [
            dict(e, iter=e["iter"] + result.iters_used) for e in refined.trace[1:]]
        refined.iters_used += result.iters_used
        return refined
    return result


def refine_tz(mesh, target: SilhouetteMask, result: CameraSolveResult,
              cfg: CameraSolveConfig | None = None) -> CameraSolveResult:
    """Continue from ``result`` with the depth unlocked (four free parameters)."""
    cfg = cfg or CameraSolveConfig()
    if cfg.max_iters == 0:
        return replace(result, converged=False, trace=list(result.trace))
    _check_target(target)
    z0 = _to_z(result.f_px, result.tx, result.ty, result.tz, free_tz=True)
    return _run(mesh, target, z0, None, cfg, ladder=False)
