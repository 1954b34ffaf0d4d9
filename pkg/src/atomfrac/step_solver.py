"""One incremental minimization step.

Each step minimizes, over the free atoms,

    objective(y) = energy(y; frozen memory) + dissipation(y, y_prev)

with the pinned atoms held at the current boundary values.  The dissipation
is either a squared-distance penalty  viscosity/(2*tau) * |y - y_prev|^2
over all atom coordinates, or a Kelvin-Voigt penalty of the same form on
per-bond strain increments  (y_b - y_a)/spacing  over nearest-neighbor
bonds (which on a chain is the classical difference quotient between
consecutive atoms, and kills rigid translations in any dimension).

The solver is a backtracking line-search descent on the piecewise-smooth
objective, accelerated by a limited-memory quasi-Newton direction built
from recent iterate/gradient pairs.  It starts from y_prev with the pinned
slots moved to the new boundary values; since that start is exactly the
competitor of the a-priori energy estimate, every accepted step satisfies
the per-step stability inequality by construction.  Steps that collapse a
bond or flip an oriented simplex (when the orientation guard is on) are
rejected by the line search.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from atomfrac.damage_energy import DEFAULT_TIE_TOL, EnergyModel
from atomfrac.errors import ConfigurationError, NonConvergenceError, NumericalError

L2 = "l2"
KELVIN_VOIGT = "kelvin_voigt"
DISSIPATION_KINDS = (L2, KELVIN_VOIGT)

GRAD_TOL_SCALE = 1e-8

# contact handling: candidate window around a branch crossing (relative to
# the bond rest length), snap tolerance for holding a bond on the crossing,
# gradient-polish iteration cap and total upward objective drift allowed to
# the polish phase (must stay below the stability-slack tolerance), the
# active-set round limit, and how many descent iterations may pass between
# checks for bonds grinding against a branch crossing
_CONTACT_WINDOW = 1e-4
_SNAP_TOL = 1e-13
_POLISH_CAP = 2000
_POLISH_DRIFT = 5e-11
_MAX_CONTACT_ROUNDS = 60
_KINK_CHECK_EVERY = 1500


@dataclass(frozen=True)
class Dissipation:
    """Dissipation model: kind "l2" or "kelvin_voigt", viscosity > 0."""

    kind: str
    viscosity: float

    def __post_init__(self):
        if self.kind not in DISSIPATION_KINDS:
            raise ConfigurationError(f"unknown dissipation kind {self.kind!r}")
        if not (np.isfinite(self.viscosity) and self.viscosity > 0):
            raise ConfigurationError(f"viscosity must be positive, got {self.viscosity}")


def _chain_pairs(atom_count):
    idx = np.arange(atom_count - 1)
    return np.stack([idx, idx + 1], axis=1)


def dissipation_value(d, y, y_prev, tau, spacing, nn_pairs=None):
    """Dissipation of moving from y_prev to y within one step of length tau.

    For the Kelvin-Voigt kind, nn_pairs is the (n_bonds, 2) array of
    nearest-neighbor endpoint ids; when omitted, consecutive atoms are
    assumed (a chain).
    """
    if tau <= 0 or not np.isfinite(tau):
        raise ConfigurationError(f"tau must be positive, got {tau}")
    y = np.asarray(y, dtype=float)
    y_prev = np.asarray(y_prev, dtype=float)
    if y.shape != y_prev.shape:
        raise ConfigurationError(f"shape mismatch: {y.shape} vs {y_prev.shape}")
    delta = y - y_prev
    if d.kind == L2:
        return d.viscosity / (2.0 * tau) * float(np.sum(delta * delta))
    if nn_pairs is None:
        nn_pairs = _chain_pairs(y.shape[0])
    strain_delta = (delta[nn_pairs[:, 1]] - delta[nn_pairs[:, 0]]) / spacing
    return d.viscosity / (2.0 * tau) * float(np.sum(strain_delta * strain_delta))


def _dissipation_gradient(d, y, y_prev, tau, spacing, nn_pairs):
    """Gradient of dissipation_value in y, full shape (N, n)."""
    delta = y - y_prev
    if d.kind == L2:
        return (d.viscosity / tau) * delta
    strain_delta = (delta[nn_pairs[:, 1]] - delta[nn_pairs[:, 0]]) / spacing
    grad = np.zeros_like(y)
    scaled = (d.viscosity / tau) * strain_delta / spacing
    np.add.at(grad, nn_pairs[:, 1], scaled)
    np.subtract.at(grad, nn_pairs[:, 0], scaled)
    return grad


@dataclass(frozen=True)
class SolverSettings:
    """Descent loop parameters.

    grad_tol of None resolves to 1e-8 * sqrt(free atom count) at solve time.
    accel_memory is the number of stored iterate/gradient pairs for the
    quasi-Newton direction; 0 gives plain steepest descent.  The orientation
    guard "barrier" adds -barrier_weight * sum(log det) over oriented
    simplices (triangles in 2D, directed bonds in 1D) and rejects steps that
    make any determinant nonpositive.
    """

    grad_tol: float | None = None
    max_iters: int = 10000
    ls_shrink: float = 0.5
    ls_c1: float = 1e-4
    accel_memory: int = 10
    tie_tol: float = DEFAULT_TIE_TOL
    orientation_guard: str = "off"
    barrier_weight: float = 1e-8

    def __post_init__(self):
        if self.grad_tol is not None and not self.grad_tol > 0:
            raise ConfigurationError(f"grad_tol must be positive, got {self.grad_tol}")
        if self.max_iters < 1:
            raise ConfigurationError(f"max_iters must be >= 1, got {self.max_iters}")
        if not 0.0 < self.ls_shrink < 1.0:
            raise ConfigurationError(f"ls_shrink must be in (0, 1), got {self.ls_shrink}")
        if not 0.0 < self.ls_c1 < 1.0:
            raise ConfigurationError(f"ls_c1 must be in (0, 1), got {self.ls_c1}")
        if self.accel_memory < 0:
            raise ConfigurationError(f"accel_memory must be >= 0, got {self.accel_memory}")
        if self.orientation_guard not in ("off", "barrier"):
            raise ConfigurationError(
                f"orientation_guard must be 'off' or 'barrier', got {self.orientation_guard!r}"
            )
        if self.orientation_guard == "barrier" and not self.barrier_weight > 0:
            raise ConfigurationError("barrier_weight must be positive when the guard is on")


def resolve_grad_tol(settings, free_atom_count):
    if settings.grad_tol is not None:
        return settings.grad_tol
    return GRAD_TOL_SCALE * math.sqrt(max(free_atom_count, 1))


@dataclass(frozen=True)
class StepResult:
    """Outcome of one incremental step.

    y_next matches the prescribed boundary values exactly on pinned slots;
    objective is energy plus dissipation at y_next; warm_objective is the
    same functional at the warm start (the previous state carried to the new
    boundary values), so warm_objective - objective >= 0 is the slack of the
    per-step stability inequality.
    """

    y_next: np.ndarray = field(repr=False)
    objective: float
    warm_objective: float
    residual_norm: float
    iterations: int
    tie_bonds: tuple


class _OrientationBarrier:
    """-weight * sum(log det) over oriented simplices of the reference lattice."""

    def __init__(self, system, weight):
        self.weight = weight
        pos = system.positions
        if system.dimension == 2:
            tris = system.triangles()
            if not tris:
                raise ConfigurationError("orientation barrier needs at least one triangle")
            self.simplices = np.array(tris, dtype=int)
            u = pos[self.simplices[:, 1]] - pos[self.simplices[:, 0]]
            v = pos[self.simplices[:, 2]] - pos[self.simplices[:, 0]]
            self.ref = u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0]
        else:
            pairs = system.nearest_pairs()
            self.simplices = pairs
            self.ref = (pos[pairs[:, 1]] - pos[pairs[:, 0]])[:, 0]

    def dets(self, y):
        s = self.simplices
        if s.shape[1] == 3:
            u = y[s[:, 1]] - y[s[:, 0]]
            v = y[s[:, 2]] - y[s[:, 0]]
            return (u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0]) / self.ref
        return (y[s[:, 1]] - y[s[:, 0]])[:, 0] / self.ref

    def value(self, y):
        d = self.dets(y)
        if np.any(d <= 0.0):
            return np.inf
        return -self.weight * float(np.sum(np.log(d)))

    def gradient(self, y):
        s = self.simplices
        d = self.dets(y)
        if np.any(d <= 0.0):
            raise NumericalError("orientation barrier evaluated at a flipped simplex")
        grad = np.zeros_like(y)
        if s.shape[1] == 3:
            u = y[s[:, 1]] - y[s[:, 0]]
            v = y[s[:, 2]] - y[s[:, 0]]
            scale = (-self.weight / (d * self.ref))[:, None]
            gu = np.stack([v[:, 1], -v[:, 0]], axis=1) * scale
            gv = np.stack([-u[:, 1], u[:, 0]], axis=1) * scale
            np.add.at(grad, s[:, 1], gu)
            np.add.at(grad, s[:, 2], gv)
            np.subtract.at(grad, s[:, 0], gu + gv)
        else:
            scale = -self.weight / (d * self.ref)
            np.add.at(grad[:, 0], s[:, 1], scale)
            np.subtract.at(grad[:, 0], s[:, 0], scale)
        return grad


def solve_step(system, pots, phis, state, y_prev, g_now, tau, dissipation,
               settings=None, model=None):
    """Minimize energy plus dissipation over the free atoms of one step.

    Parameters
    ----------
    system, pots, phis
        Lattice and interaction laws.
    state : DamageState
        Memory entering this step (frozen during the minimization).
    y_prev : ndarray (N, n)
        Previous accepted deformation; its pinned slots carry the previous
        boundary values.
    g_now : ndarray (N, n)
        Current boundary values on pinned slots (free slots ignored).
    tau : float
        Step length, positive.
    dissipation : Dissipation
    settings : SolverSettings, optional
    model : EnergyModel, optional
        Reuse a prebuilt evaluation table across steps.

    Returns
    -------
    StepResult

    Raises
    ------
    NonConvergenceError
        If the gradient tolerance is not reached within max_iters; the best
        iterate found is attached to the exception.
    """
    if settings is None:
        settings = SolverSettings()
    if model is None:
        model = EnergyModel(system, pots, phis)
    if not (np.isfinite(tau) and tau > 0):
        raise ConfigurationError(f"tau must be positive, got {tau}")
    frozen = model.frozen(state)

    y_prev = np.asarray(y_prev, dtype=float)
    g_now = np.asarray(g_now, dtype=float)
    if y_prev.shape != system.positions.shape or g_now.shape != system.positions.shape:
        raise ConfigurationError("y_prev and g_now must have shape (N, n)")
    if not np.all(np.isfinite(y_prev)):
        raise NumericalError("y_prev contains non-finite entries")
    pinned = ~model.free_mask
    if not np.all(np.isfinite(g_now[pinned])):
        raise NumericalError("boundary values contain non-finite entries")

    warm = y_prev.copy()
    warm[pinned] = g_now[pinned]

    nn_pairs = system.nearest_pairs() if dissipation.kind == KELVIN_VOIGT else None
    barrier = None
    if settings.orientation_guard == "barrier":
        barrier = _OrientationBarrier(system, settings.barrier_weight)

    def objective(y, excl=None):
        val = frozen.energy(y, reject_invalid=False, exclude=excl)
        if not np.isfinite(val):
            return np.inf
        val += dissipation_value(dissipation, y, y_prev, tau, system.spacing, nn_pairs)
        if barrier is not None:
            val += barrier.value(y)
        return val

    def grad_flat(y, excl=None):
        grad, _ = frozen.gradient(y, tie_tol=settings.tie_tol, exclude=excl)
        grad = grad + _dissipation_gradient(dissipation, y, y_prev, tau,
                                            system.spacing, nn_pairs)
        if barrier is not None:
            grad = grad + barrier.gradient(y)
        return grad[model.free_mask].reshape(-1)

    free_idx = np.nonzero(model.free_mask)[0]
    grad_tol = resolve_grad_tol(settings, len(free_idx))

    f_warm = objective(warm)
    if not np.isfinite(f_warm):
        raise NumericalError("objective is not finite at the warm start")

    if len(free_idx) == 0:
        return StepResult(y_next=warm, objective=f_warm, warm_objective=f_warm,
                          residual_norm=0.0, iterations=0, tie_bonds=())

    n = system.positions.shape[1]
    slot = {int(a): i for i, a in enumerate(free_idx)}
    free_atom = model.free_mask

    def assemble(x):
        y = warm.copy()
        y[free_idx] = x.reshape(-1, n)
        return y

    iterations = [0]

    def fail(reason, y_best, res_val):
        fx_b = objective(y_best)
        _, tie_idx = frozen.gradient(y_best, tie_tol=settings.tie_tol)
        result = StepResult(
            y_next=y_best, objective=fx_b, warm_objective=f_warm,
            residual_norm=float(res_val), iterations=iterations[0],
            tie_bonds=tuple(int(i) for i in tie_idx))
        raise NonConvergenceError(
            f"step did not reach tolerance {grad_tol:.3e} "
            f"(residual {res_val:.3e} after {iterations[0]} iterations; {reason})",
            best=result)

    def descend(y_start, obj_fn, grad_fn, tol, project=None, post_step=None,
                chunk=None):
        """Armijo descent with quasi-Newton acceleration on the free slots.

        Returns (status, y, fx, gnorm), status one of "converged", "stall",
        "budget", "paused" (chunk iterations spent; caller may resume).
        project restricts gradients and directions to the feasible
        directions (tangent space of the contact constraints); post_step may
        adjust an accepted iterate (constraint restoration) and hand back a
        refreshed projector.  Once objective improvements fall below the
        floating-point floor the loop switches to accepting on gradient-norm
        decrease: near a strict minimizer the objective is flat to roundoff
        while the gradient still carries signal.
        """
        x = y_start[free_idx].reshape(-1).copy()
        y = y_start
        fx = obj_fn(y)
        if not np.isfinite(fx):
            return "stall", y, fx, np.inf
        g = grad_fn(y)
        gp = project(g) if project is not None else g
        gn = float(np.linalg.norm(gp))
        mem_s, mem_y, mem_rho = [], [], []
        polish = False
        polish_used = 0
        flat_streak = 0
        eps = np.finfo(float).eps
        f_anchor = fx
        local = 0

        while gn > tol:
            if iterations[0] >= settings.max_iters:
                return "budget", y, fx, gn
            if chunk is not None and local >= chunk:
                return "paused", y, fx, gn
            iterations[0] += 1
            local += 1
            if mem_s:
                d = -_two_loop(gp, mem_s, mem_y, mem_rho)
                if project is not None:
                    d = project(d)
                if float(np.dot(d, gp)) > -1e-12 * np.linalg.norm(d) * gn:
                    d = -gp
                    mem_s.clear(); mem_y.clear(); mem_rho.clear()
                t0 = 1.0
            else:
                d = -gp
                t0 = min(1.0, 1.0 / max(gn, 1.0))

            accepted = False
            if polish:
                if polish_used >= _POLISH_CAP:
                    return "stall", y, fx, gn
                polish_used += 1
                cap = min(fx + 16.0 * eps * (1.0 + abs(fx)),
                          f_anchor + _POLISH_DRIFT)
                for attempt in range(2):
                    t = t0
                    while t > 1e-18:
                        x_new = x + t * d
                        y_new = assemble(x_new)
                        f_new = obj_fn(y_new)
                        if np.isfinite(f_new) and f_new <= cap:
                            g_new = grad_fn(y_new)
                            gp_new = project(g_new) if project is not None else g_new
                            gn_new = float(np.linalg.norm(gp_new))
                            if gn_new < gn:
                                accepted = True
                                break
                        t *= settings.ls_shrink
                    if accepted or not mem_s:
                        break
                    # quasi-Newton direction failed; retry steepest descent
                    mem_s.clear(); mem_y.clear(); mem_rho.clear()
                    d = -gp
                    t0 = min(1.0, 1.0 / max(gn, 1.0))
                if not accepted:
                    return "stall", y, fx, gn
            else:
                for attempt in range(2):
                    slope = float(np.dot(gp, d))
                    t = t0
                    while t > 1e-18:
                        x_new = x + t * d
                        y_new = assemble(x_new)
                        f_new = obj_fn(y_new)
                        if np.isfinite(f_new) and f_new <= fx + settings.ls_c1 * t * slope:
                            accepted = True
                            break
                        t *= settings.ls_shrink
                    if accepted:
                        break
                    if mem_s and attempt == 0:
                        # quasi-Newton direction failed; retry steepest descent
                        mem_s.clear(); mem_y.clear(); mem_rho.clear()
                        d = -gp
                        t0 = min(1.0, 1.0 / max(gn, 1.0))
                    else:
                        break
                if accepted:
                    floor = 4.0 * eps * (1.0 + abs(fx))
                    if fx - f_new <= floor:
                        flat_streak += 1
                        if flat_streak >= 3:
                            polish = True
                    else:
                        flat_streak = 0
                else:
                    if not polish:
                        polish = True
                        continue
                    return "stall", y, fx, gn
                g_new = grad_fn(y_new)
                gp_new = project(g_new) if project is not None else g_new

            if post_step is not None:
                adjusted = post_step(y_new)
                if adjusted is None:
                    return "stall", y, fx, gn
                y_new, project = adjusted
                x_new = y_new[free_idx].reshape(-1)
                f_new = obj_fn(y_new)
                g_new = grad_fn(y_new)
                gp_new = project(g_new) if project is not None else g_new

            if settings.accel_memory > 0:
                s_vec = x_new - x
                y_vec = gp_new - gp
                sy = float(np.dot(s_vec, y_vec))
                if sy > 1e-10 * np.linalg.norm(s_vec) * np.linalg.norm(y_vec):
                    mem_s.append(s_vec); mem_y.append(y_vec); mem_rho.append(1.0 / sy)
                    if len(mem_s) > settings.accel_memory:
                        mem_s.pop(0); mem_y.pop(0); mem_rho.pop(0)
            x, y, fx, gp = x_new, y_new, f_new, gp_new
            gn = float(np.linalg.norm(gp))
            f_anchor = min(f_anchor, fx)
        return "converged", y, fx, gn

    # -- contact handling --------------------------------------------------
    # A damaged bond's energy has a branch crossing where W(r) = W(M); the
    # minimizer can sit exactly on a crossing, balanced by a force anywhere
    # in the interval of one-sided slopes.  When plain descent stalls on such
    # a kink, the bonds involved are held exactly at the crossing radius, the
    # remaining energy is minimized tangentially, and stationarity is
    # certified by a small box-constrained least-squares over the admissible
    # axial forces.

    kink_ids, kink_radii, kink_flo, kink_fhi = frozen.kink_table()

    def find_candidates(y, active_keys):
        if len(kink_ids) == 0:
            return []
        _, r = model.separations(y)
        out = []
        for j, b in enumerate(kink_ids):
            a_id = int(model.bond_a[b]); b_id = int(model.bond_b[b])
            if not (free_atom[a_id] or free_atom[b_id]):
                continue
            best = None
            for c in (0, 1):
                if (int(b), c) in active_keys:
                    best = None
                    break
                if kink_fhi[j, c] - kink_flo[j, c] <= 1e-12:
                    continue
                rho = float(kink_radii[j, c])
                gap = abs(float(r[b]) - rho)
                if gap <= _CONTACT_WINDOW * float(model.rest[b]):
                    if best is None or gap < best[0]:
                        best = (gap, (int(b), c, rho,
                                      float(kink_flo[j, c]), float(kink_fhi[j, c])))
            if best is not None:
                out.append(best[1])
        return out

    def restore(y, active):
        """Place the active bonds exactly onto their crossing radii.

        Newton projection onto the joint length-constraint manifold: solve
        the linearized constraints for the minimal-norm correction over the
        free slots, re-linearize, repeat.  Converges quadratically from
        within the candidate window.
        """
        y = y.copy()
        k = len(active)
        c = np.empty(k)
        for _ in range(50):
            for i, (b, _c, rho, _lo, _hi) in enumerate(active):
                a_id = int(model.bond_a[b]); b_id = int(model.bond_b[b])
                r = float(np.linalg.norm(y[b_id] - y[a_id]))
                if not (np.isfinite(r) and r > 0.0):
                    return None
                c[i] = r - rho
            if float(np.max(np.abs(c))) <= _SNAP_TOL:
                return y
            J = rows_for(y, active)
            lam = np.linalg.lstsq(J @ J.T, -c, rcond=1e-12)[0]
            y[free_idx] = y[free_idx] + (J.T @ lam).reshape(-1, n)
        return None

    def rows_for(y, active):
        """Axial direction patterns of the active bonds over the free slots."""
        J = np.zeros((len(active), len(free_idx) * n))
        for i, (b, _c, _rho, _lo, _hi) in enumerate(active):
            a_id = int(model.bond_a[b]); b_id = int(model.bond_b[b])
            dvec = y[b_id] - y[a_id]
            u = dvec / np.linalg.norm(dvec)
            if free_atom[a_id]:
                k = slot[a_id] * n
                J[i, k:k + n] = -u
            if free_atom[b_id]:
                k = slot[b_id] * n
                J[i, k:k + n] = u
        return J

    def projector_from(J):
        q, rr = np.linalg.qr(J.T)
        keep = np.abs(np.diag(rr)) > 1e-10
        qk = q[:, keep]
        if qk.shape[1] == 0:
            return lambda v: v
        return lambda v: v - qk @ (qk.T @ v)

    y = warm
    active = []
    residual = None
    final_fx = None
    # every pause consumes a round but also at least chunk iterations, so the
    # two caps together bound the total work
    rounds = _MAX_CONTACT_ROUNDS + settings.max_iters // _KINK_CHECK_EVERY + 2
    for _round in range(rounds):
        if not active:
            # aim a little below the tolerance so that an independent
            # recomputation of the residual has margin
            status, y, fx, gn = descend(y, objective, grad_flat, 0.88 * grad_tol,
                                        chunk=_KINK_CHECK_EVERY)
            if status == "converged" or gn <= grad_tol:
                residual, final_fx = gn, fx
                break
            if status == "budget":
                fail("iteration cap reached", y, gn)
            cands = find_candidates(y, set())
            if cands:
                active = cands
            elif status == "stall":
                fail("line search stalled", y, gn)
            # paused with no candidates: resume the plain descent
            continue

        y_r = restore(y, active)
        if y_r is None:
            fail("contact restoration failed", y, grad_tol * np.inf)
        y = y_r
        excl = np.zeros(len(model.rest), dtype=bool)
        for (b, _c, _rho, _lo, _hi) in active:
            excl[b] = True

        def obj_red(z, _e=excl):
            return objective(z, _e)

        def grad_red(z, _e=excl):
            return grad_flat(z, _e)

        proj = projector_from(rows_for(y, active))
        post = None
        if n > 1:
            # bond-length constraints are curved in the plane: re-restore and
            # refresh the tangent projector after every accepted move
            def post(z, _a=tuple(active)):
                zr = restore(z, list(_a))
                if zr is None:
                    return None
                return zr, projector_from(rows_for(zr, list(_a)))

        status, y, fxr, gn = descend(y, obj_red, grad_red, 0.35 * grad_tol,
                                     project=proj, post_step=post,
                                     chunk=_KINK_CHECK_EVERY)
        if status == "budget":
            fail("iteration cap reached", y, gn)
        y_r = restore(y, active)
        if y_r is not None:
            y = y_r
        J = rows_for(y, active)
        base = grad_red(y)
        lo = np.array([a[3] for a in active])
        hi = np.array([a[4] for a in active])
        f_ax, res_vec = _boxed_lsq(base, J, lo, hi)
        res = float(np.linalg.norm(res_vec))
        if res <= grad_tol:
            residual, final_fx = res, objective(y)
            break
        released = []
        for i, (b, _c, _rho, lo_f, hi_f) in enumerate(active):
            deriv = float(np.dot(J[i], res_vec))
            span = hi_f - lo_f
            at_lo = f_ax[i] - lo_f <= 1e-9 * span
            at_hi = hi_f - f_ax[i] <= 1e-9 * span
            if (at_lo and deriv > 0.0) or (at_hi and deriv < 0.0):
                released.append(i)
        if released:
            active = [a for i, a in enumerate(active) if i not in released]
            continue
        cands = find_candidates(y, {(a[0], a[1]) for a in active})
        if cands:
            active = active + cands
            continue
        if status == "paused":
            # the tangential descent has iterations left; resume it
            continue
        fail("contact stationarity not reached", y, res)
    else:
        fail("contact cycle limit reached", y, residual or np.inf)

    _, tie_idx = frozen.gradient(y, tie_tol=settings.tie_tol)
    return StepResult(
        y_next=y,
        objective=float(final_fx),
        warm_objective=f_warm,
        residual_norm=float(residual),
        iterations=iterations[0],
        tie_bonds=tuple(int(i) for i in tie_idx),
    )


def _boxed_lsq(base, J, lo, hi, sweeps=2000):
    """Minimize |base + J^T f| over the box lo <= f <= hi, coordinatewise.

    Projected Gauss-Seidel on the force variables; exact enough for the small
    active sets that arise from contact handling.  Returns (f, residual
    vector).
    """
    k = J.shape[0]
    f = np.clip(np.zeros(k), lo, hi)
    res = base + J.T @ f
    nrm2 = np.einsum("ij,ij->i", J, J)
    tol = 1e-16 * (1.0 + float(np.linalg.norm(base)))
    for _ in range(sweeps):
        biggest = 0.0
        for i in range(k):
            if nrm2[i] <= 0.0:
                continue
            step = float(np.dot(J[i], res)) / nrm2[i]
            fi = min(max(f[i] - step, lo[i]), hi[i])
            d = fi - f[i]
            if d != 0.0:
                res = res + d * J[i]
                f[i] = fi
                biggest = max(biggest, abs(d) * math.sqrt(nrm2[i]))
        if biggest <= tol:
            break
    return f, res


def inclusion_residual(system, model, frozen, y, y_prev, tau, dissipation,
                       tie_tol=DEFAULT_TIE_TOL):
    """Residual of the per-step stationarity inclusion at deformation y.

    Norm over the free slots of (dissipation gradient + energy subgradient),
    where each tie bond may contribute any axial force between its two
    one-sided slopes; the best admissible element is found by a small
    box-constrained least-squares.  Away from ties this is exactly the norm
    of the dissipation gradient plus the minimal-norm subgradient.

    Returns (residual, tie_bonds).
    """
    nn_pairs = system.nearest_pairs() if dissipation.kind == KELVIN_VOIGT else None
    grad, ties = frozen.gradient(y, tie_tol=tie_tol)
    grad = grad + _dissipation_gradient(dissipation, y, y_prev, tau,
                                        system.spacing, nn_pairs)
    base = grad[model.free_mask].reshape(-1)
    ties_out = tuple(int(i) for i in ties)
    if len(ties) == 0:
        return float(np.linalg.norm(base)), ties_out

    free_ids = np.nonzero(model.free_mask)[0]
    slot = {int(a): i for i, a in enumerate(free_ids)}
    n = y.shape[1]
    _, r_all = model.separations(y)
    wp_all = model.pair_well_derivative(r_all)
    base = base.copy()
    rows, lo, hi = [], [], []
    for b in ties:
        a_id = int(model.bond_a[b]); b_id = int(model.bond_b[b])
        fa = bool(model.free_mask[a_id]); fb = bool(model.free_mask[b_id])
        if not (fa or fb):
            continue
        phi_b = float(frozen.phi_m[b])
        wp = float(wp_all[b])
        if phi_b * abs(wp) <= 1e-15:
            continue
        row = np.zeros(len(free_ids) * n)
        u = (y[b_id] - y[a_id]) / float(r_all[b])
        if fa:
            row[slot[a_id] * n: slot[a_id] * n + n] = -u
        if fb:
            row[slot[b_id] * n: slot[b_id] * n + n] = u
        f_sel = (1.0 - phi_b) * wp
        base -= f_sel * row
        rows.append(row)
        lo.append(min(wp, f_sel))
        hi.append(max(wp, f_sel))
    if not rows:
        return float(np.linalg.norm(base)), ties_out
    _, res = _boxed_lsq(base, np.array(rows), np.array(lo), np.array(hi))
    return float(np.linalg.norm(res)), ties_out


def _two_loop(g, mem_s, mem_y, mem_rho):
    """Limited-memory quasi-Newton direction from stored pairs."""
    q = g.copy()
    alphas = []
    for s, yv, rho in zip(reversed(mem_s), reversed(mem_y), reversed(mem_rho)):
        a = rho * float(np.dot(s, q))
        q -= a * yv
        alphas.append(a)
    last_y = mem_y[-1]
    gamma = float(np.dot(mem_s[-1], last_y)) / float(np.dot(last_y, last_y))
    q *= gamma
    for (s, yv, rho), a in zip(zip(mem_s, mem_y, mem_rho), reversed(alphas)):
        b = rho * float(np.dot(yv, q))
        q += (a - b) * s
    return q
