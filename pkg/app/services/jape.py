"""Joint estimation of initial attitude, sensor biases and lever arm.

Every differenced epoch gives the quaternion equality

    0 = ([alpha]- - [beta]+) q + [q]+ (chi b_a + lambda b_g + gamma l)

whose residual ``pi`` is summed in squares and minimized subject to
``q.q = 1`` by Newton-Lagrange iterations. The batch solver evaluates the sums
over the stored epochs; the recursive solver keeps fixed-size accumulators in
which the unknowns only appear as outside factors.

Unknowns are packed as ``x = [q (4), b_a (3), b_g (3), l (3)]``; ``theta``
denotes the last nine entries.
"""
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

from app.exceptions import DegenerateSpectrum, EpochOrder, NoConvergence, SingularKKT
from app.services.obsbuild import DiffCoeff
from app.services.rotations import jbeta_decomp, jq_decomp, pure, qminus, qplus, quat_to_dcm, rotvec_to_dcm

logger = logging.getLogger(__name__)

N_PARAMS = 9
N_STATE = 4 + N_PARAMS
_SPECTRUM_GAP = 1e-12
_Q_MASK = np.concatenate([np.ones(4), np.zeros(N_PARAMS)])

Derivatives = Tuple[np.ndarray, np.ndarray, np.ndarray]


# ===== DOMAIN TYPES =====
@dataclass(frozen=True, eq=False)
class EstimateX:
    """Attitude quaternion (encodes ``C_n^b(0)``), biases, lever arm and multiplier."""
    q: np.ndarray
    b_a: np.ndarray = field(default_factory=lambda: np.zeros(3))
    b_g: np.ndarray = field(default_factory=lambda: np.zeros(3))
    lever_arm: np.ndarray = field(default_factory=lambda: np.zeros(3))
    mu: float = 0.0

    @property
    def theta(self) -> np.ndarray:
        return np.concatenate([self.b_a, self.b_g, self.lever_arm])

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.q, self.theta])

    @classmethod
    def from_vector(cls, x, mu: float = 0.0) -> "EstimateX":
        x = np.asarray(x, dtype=float)
        return cls(q=x[:4].copy(), b_a=x[4:7].copy(), b_g=x[7:10].copy(), lever_arm=x[10:13].copy(), mu=float(mu))

    def normalized(self) -> "EstimateX":
        return replace(self, q=self.q / np.linalg.norm(self.q))

    @property
    def C_nb0(self) -> np.ndarray:
        """``C_n^b(0)`` of the normalized quaternion."""
        return quat_to_dcm(self.q / np.linalg.norm(self.q))


@dataclass(frozen=True, eq=False)
class SolveResult:
    """Outcome of one Newton-Lagrange solve."""
    estimate: EstimateX
    iterations: int
    converged: bool
    step_norms: List[float]
    condition: float
    objective: float


@dataclass(frozen=True)
class SolverSettings:
    max_iter: int = 5
    tolerance: float = 1e-12
    guard: bool = False
    guard_penalty: float = 1e3
    guard_halvings: int = 4
    max_condition: float = 1e12
    strict: bool = False


# ===== STACKED EPOCHS =====
def stack_epochs(diffs: Sequence[DiffCoeff]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack ``alpha`` (n, 3), ``beta`` (n, 3) and ``G`` (n, 3, 9) of a list of epochs."""
    if len(diffs) == 0:
        return np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 3, N_PARAMS))
    alpha = np.array([d.alpha for d in diffs])
    beta = np.array([d.beta for d in diffs])
    G = np.array([d.G for d in diffs])
    return alpha, beta, G


def attitude_matrix(alpha, beta) -> np.ndarray:
    """``[alpha]- - [beta]+`` for one epoch or a stack of epochs."""
    return qminus(pure(alpha)) - qplus(pure(beta))


# ===== ATTITUDE-ONLY SOLUTION =====
def attitude_only_init(S_qq: np.ndarray) -> np.ndarray:
    """Unit quaternion minimizing ``q' S_qq q``.

    Args:
        S_qq: Sum of ``A' A`` over the epochs, 4x4 symmetric.

    Returns:
        Eigenvector of the smallest eigenvalue, sign fixed to a non-negative
        scalar part.

    Raises:
        DegenerateSpectrum: If the two smallest eigenvalues coincide.
    """
    eigenvalues, eigenvectors = scipy.linalg.eigh(S_qq)
    scale = max(1.0, abs(eigenvalues[-1]))
    if eigenvalues[1] - eigenvalues[0] < _SPECTRUM_GAP * scale:
        raise DegenerateSpectrum(
            f"smallest eigenvalues {eigenvalues[0]:.3e} and {eigenvalues[1]:.3e} are not separated")
    q = eigenvectors[:, 0]
    return q if q[0] >= 0 else -q


def gram_matrix(diffs: Sequence[DiffCoeff]) -> np.ndarray:
    alpha, beta, _ = stack_epochs(diffs)
    A = attitude_matrix(alpha, beta)
    return np.einsum("nab,nac->bc", A, A)


# ===== RESIDUAL AND BATCH DERIVATIVES =====
def residual(x: EstimateX, d: DiffCoeff) -> np.ndarray:
    """Quaternion residual ``pi`` of one differenced epoch."""
    w = d.G @ x.theta
    return attitude_matrix(d.alpha, d.beta) @ x.q + qplus(x.q) @ pure(w)


def objective(x: EstimateX, diffs: Sequence[DiffCoeff]) -> float:
    """Sum of squared residuals over ``diffs``."""
    alpha, beta, G = stack_epochs(diffs)
    return _batch_objective(x, alpha, beta, G)


def _batch_objective(x: EstimateX, alpha, beta, G) -> float:
    B = attitude_matrix(alpha, beta) + qminus(pure(G @ x.theta))
    pi = B @ x.q
    return float(np.sum(pi * pi))


def _lagrangian_terms(x: EstimateX, grad_f, hess_f) -> Derivatives:
    q_full = np.concatenate([x.q, np.zeros(N_PARAMS)])
    grad = grad_f - 2 * x.mu * q_full
    hess = hess_f - 2 * x.mu * np.diag(_Q_MASK)
    return grad, hess, -2 * q_full


def grad_hess_batch(x: EstimateX, diffs: Sequence[DiffCoeff]) -> Derivatives:
    """Gradient and Hessian of the Lagrangian summed over ``diffs``.

    Returns:
        Tuple ``(grad, hess, cross)``: gradient in x (13), Hessian in x (13x13)
        and the mixed x-mu derivative (13).
    """
    return _grad_hess_stacked(x, *stack_epochs(diffs))


def _grad_hess_stacked(x: EstimateX, alpha, beta, G) -> Derivatives:
    q = x.q
    B = attitude_matrix(alpha, beta) + qminus(pure(G @ x.theta))
    pi = B @ q
    D = qplus(q)[:, 1:] @ G
    G_minus = qminus(pure(np.swapaxes(G, -1, -2)))

    grad_f = np.concatenate([
        2 * np.einsum("nab,na->b", B, pi),
        2 * np.einsum("naj,na->j", D, pi),
    ])
    hess_qq = 2 * np.einsum("nab,nac->bc", B, B)
    hess_tt = 2 * np.einsum("nai,naj->ij", D, D)
    hess_qt = 2 * (np.einsum("nab,naj->bj", B, D) - np.einsum("njab,nb->aj", G_minus, pi))

    hess_f = np.zeros((N_STATE, N_STATE))
    hess_f[:4, :4] = hess_qq
    hess_f[:4, 4:] = hess_qt
    hess_f[4:, :4] = hess_qt.T
    hess_f[4:, 4:] = hess_tt
    return _lagrangian_terms(x, grad_f, hess_f)


# ===== RECURSIVE ACCUMULATORS =====
@dataclass(frozen=True, eq=False)
class RecursiveAccumulators:
    """Epoch sums from which the objective and its derivatives follow at any x.

    ``E`` below is ``G`` with a zero scalar row on top (4x9), so that column
    ``j`` of ``E`` is the vector quaternion of column ``j`` of ``G``.
    """
    S_qq: np.ndarray = field(default_factory=lambda: np.zeros((4, 4)))
    S_alpha: np.ndarray = field(default_factory=lambda: np.zeros((4, N_PARAMS)))      # sum [alpha]- E
    S_beta: np.ndarray = field(default_factory=lambda: np.zeros((4, N_PARAMS)))       # sum [beta]+ E
    S_beta_i: np.ndarray = field(default_factory=lambda: np.zeros((3, 4, N_PARAMS)))  # sum J_beta_i E
    S_lin: np.ndarray = field(default_factory=lambda: np.zeros(N_PARAMS))             # sum G' alpha
    S_betag: np.ndarray = field(default_factory=lambda: np.zeros((3, N_PARAMS, 3)))   # sum beta_i G'
    S_gram: np.ndarray = field(default_factory=lambda: np.zeros((N_PARAMS, N_PARAMS)))
    M: int = 0
    last: Optional[int] = None

    def parameter_blocks(self) -> np.ndarray:
        """Matrices ``R_j`` (9, 4, 4) with ``sum_n q' A' [g_j]- q = q' R_j q``."""
        alpha_blocks = -qminus(self.S_alpha.T)
        beta_blocks = np.stack([self.S_beta, self.S_beta_i[0], self.S_beta_i[1], self.S_beta_i[2]], axis=-1)
        return alpha_blocks + beta_blocks.transpose(1, 0, 2)


def accumulate(acc: RecursiveAccumulators, d: DiffCoeff) -> RecursiveAccumulators:
    """Fold one differenced epoch into the accumulators.

    Raises:
        EpochOrder: If ``d`` does not directly follow the last folded epoch.
    """
    if acc.last is not None and d.M != acc.last + 1:
        raise EpochOrder(f"epoch {d.M} cannot follow epoch {acc.last}")
    A = attitude_matrix(d.alpha, d.beta)
    G = d.G
    E = np.vstack([np.zeros(N_PARAMS), G])
    return RecursiveAccumulators(
        S_qq=acc.S_qq + A.T @ A,
        S_alpha=acc.S_alpha + qminus(pure(d.alpha)) @ E,
        S_beta=acc.S_beta + qplus(pure(d.beta)) @ E,
        S_beta_i=acc.S_beta_i + jbeta_decomp(d.beta) @ E,
        S_lin=acc.S_lin + G.T @ d.alpha,
        S_betag=acc.S_betag + d.beta[:, None, None] * G.T[None, :, :],
        S_gram=acc.S_gram + G.T @ G,
        M=acc.M + 1,
        last=d.M,
    )


def accumulated_objective(acc: RecursiveAccumulators, x: EstimateX) -> float:
    """Objective from the accumulators as an expanded quadratic form.

    The three terms are individually large and cancel near the minimum, so the
    result carries an absolute rounding error of order
    ``eps * (q' S_qq q + |q|^2 theta' S_gram theta)``. Compare against
    ``objective_scale`` rather than zero.
    """
    q, theta = x.q, x.theta
    R_theta = np.tensordot(theta, acc.parameter_blocks(), axes=1)
    return float(q @ acc.S_qq @ q + 2 * q @ R_theta @ q + (q @ q) * theta @ acc.S_gram @ theta)


def objective_scale(acc: RecursiveAccumulators, x: EstimateX) -> float:
    """Magnitude of the terms summed by ``accumulated_objective``."""
    q, theta = x.q, x.theta
    return float(abs(q @ acc.S_qq @ q) + (q @ q) * abs(theta @ acc.S_gram @ theta))


def assemble_grad_hess(acc: RecursiveAccumulators, x: EstimateX) -> Derivatives:
    """Lagrangian derivatives at ``x`` from the accumulators alone.

    Matches ``grad_hess_batch`` over the folded epochs up to rounding.
    """
    q, theta = x.q, x.theta
    qq = q @ q
    R = acc.parameter_blocks()
    R_theta = np.tensordot(theta, R, axes=1)
    gram_theta = acc.S_gram @ theta
    quad_theta = theta @ gram_theta

    # q' R_j q split into its alpha and beta parts
    u = qq * acc.S_lin - np.einsum("ijk,ik->j", acc.S_betag, jq_decomp(q, check=False)[:, 1:])

    sym = acc.S_qq + R_theta + R_theta.T
    grad_f = np.concatenate([
        2 * (sym + quad_theta * np.eye(4)) @ q,
        2 * u + 2 * qq * gram_theta,
    ])
    hess_f = np.zeros((N_STATE, N_STATE))
    hess_f[:4, :4] = 2 * (sym + quad_theta * np.eye(4))
    hess_qt = 2 * np.einsum("jab,b->aj", R + R.transpose(0, 2, 1), q) + 4 * np.outer(q, gram_theta)
    hess_f[:4, 4:] = hess_qt
    hess_f[4:, :4] = hess_qt.T
    hess_f[4:, 4:] = 2 * qq * acc.S_gram
    return _lagrangian_terms(x, grad_f, hess_f)


# ===== NEWTON-LAGRANGE =====
def kkt_matrix(hess: np.ndarray, cross: np.ndarray) -> np.ndarray:
    n = hess.shape[0]
    K = np.zeros((n + 1, n + 1))
    K[:n, :n] = hess
    K[:n, n] = cross
    K[n, :n] = cross
    return K


def newton_lagrange_step(x: EstimateX, grad: np.ndarray, hess: np.ndarray, cross: np.ndarray,
                         max_condition: float = 1e12) -> Tuple[np.ndarray, float, float]:
    """Solve the KKT system for the step in ``x`` and ``mu``.

    ``[[H, c], [c', 0]] [dx; dmu] = [-grad; q.q - 1]`` with ``c`` the mixed
    derivative, solved after symmetric diagonal scaling.

    Returns:
        Tuple ``(dx, dmu, condition)``.

    Raises:
        SingularKKT: If the scaled matrix is singular or its condition number
            exceeds ``max_condition``.
    """
    K = kkt_matrix(hess, cross)
    rhs = np.concatenate([-grad, [x.q @ x.q - 1.0]])

    diagonal = np.abs(np.diag(K))
    scale = np.where(diagonal > 0, 1.0 / np.sqrt(np.where(diagonal > 0, diagonal, 1.0)), 1.0)
    K_scaled = scale[:, None] * K * scale[None, :]
    condition = float(np.linalg.cond(K_scaled))
    if not np.isfinite(condition) or condition > max_condition:
        raise SingularKKT(condition)
    try:
        y = scipy.linalg.solve(K_scaled, scale * rhs, assume_a="sym")
    except (scipy.linalg.LinAlgError, ValueError):
        raise SingularKKT(float("inf"))
    step = scale * y
    return step[:-1], float(step[-1]), condition


def _merit(value: float, x: EstimateX, penalty: float) -> float:
    return value + penalty * (x.q @ x.q - 1.0) ** 2


def newton_lagrange(x0: EstimateX, derivatives: Callable[[EstimateX], Derivatives],
                    value: Callable[[EstimateX], float], settings: SolverSettings) -> SolveResult:
    """Iterate Newton-Lagrange steps from ``x0``.

    Stops once the largest step component is below ``settings.tolerance`` or
    after ``settings.max_iter`` iterations. The quaternion is normalized only
    in the returned estimate.

    Raises:
        NoConvergence: Only in strict mode, carrying the last iterate.
    """
    x = x0
    step_norms: List[float] = []
    condition = float("nan")
    converged = False
    for _ in range(settings.max_iter):
        grad, hess, cross = derivatives(x)
        dx, dmu, condition = newton_lagrange_step(x, grad, hess, cross, settings.max_condition)

        if settings.guard:
            x = _guarded_update(x, dx, dmu, value, settings)
        else:
            x = EstimateX.from_vector(x.vector + dx, x.mu + dmu)

        step = float(np.max(np.abs(dx)))
        step_norms.append(step)
        if step < settings.tolerance:
            converged = True
            break

    estimate = x.normalized()
    result = SolveResult(estimate=estimate, iterations=len(step_norms), converged=converged,
                         step_norms=step_norms, condition=condition, objective=value(estimate))
    if not converged:
        if settings.strict:
            raise NoConvergence(result, f"no convergence after {settings.max_iter} iterations "
                                        f"(last step {step_norms[-1]:.3e})")
        logger.warning("Newton-Lagrange stopped after %d iterations, last step %.3e",
                       settings.max_iter, step_norms[-1])
    return result


def _guarded_update(x: EstimateX, dx: np.ndarray, dmu: float,
                    value: Callable[[EstimateX], float], settings: SolverSettings) -> EstimateX:
    current = _merit(value(x), x, settings.guard_penalty)
    fraction = 1.0
    for _ in range(settings.guard_halvings + 1):
        trial = EstimateX.from_vector(x.vector + fraction * dx, x.mu + fraction * dmu)
        if _merit(value(trial), trial, settings.guard_penalty) <= current:
            return trial
        fraction *= 0.5
    logger.debug("Guard exhausted its halvings, taking the shortest step")
    return trial


def ba_jape(diffs: Sequence[DiffCoeff], x0: EstimateX,
            settings: SolverSettings = SolverSettings()) -> SolveResult:
    """Batch solve over every stored differenced epoch."""
    stacked = stack_epochs(diffs)
    return newton_lagrange(x0, lambda x: _grad_hess_stacked(x, *stacked),
                           lambda x: _batch_objective(x, *stacked), settings)


def ra_jape_update(acc: RecursiveAccumulators, x0: EstimateX,
                   settings: SolverSettings = SolverSettings()) -> SolveResult:
    """Recursive solve from the accumulators; cost independent of history length."""
    return newton_lagrange(x0, lambda x: assemble_grad_hess(acc, x),
                           lambda x: accumulated_objective(acc, x), settings)


def current_attitude(x: EstimateX, C_n: np.ndarray, C_b: np.ndarray,
                     chi: Optional[np.ndarray] = None) -> np.ndarray:
    """Body-to-nav attitude at t from the initial estimate and both frame propagations.

    The body propagation integrates raw gyro increments and so drifts by
    ``chi b_g`` with the gyro bias. Passing ``chi`` removes that drift to first
    order using the estimated bias.

    Args:
        x: Estimate holding ``C_n^b(0)`` and ``b_g``.
        C_n: ``C_n(t)^n(0)`` from the coefficient builder.
        C_b: ``C_b(t)^b(0)`` from the coefficient builder.
        chi: Undifferenced accelerometer-bias coefficient of the same epoch.
    """
    if chi is not None:
        C_b = rotvec_to_dcm(chi @ x.b_g) @ C_b
    return C_n.T @ x.C_nb0.T @ C_b


# ===== ESTIMATORS =====
class JapeEstimator(ABC):
    """Pull-based estimator: ``feed`` differenced epochs, then ``estimate``.

    Until ``warmup_s`` the attitude-only eigenvector is returned with zero
    parameters. The first full solve starts there with ``mu = 0``; later solves
    are warm-started from the previous estimate.
    """
    name = "jape"

    def __init__(self, settings: SolverSettings = SolverSettings(), warmup_s: float = 30.0):
        self.settings = settings
        self.warmup_s = warmup_s
        self.acc = RecursiveAccumulators()
        self.t = 0.0
        self.previous: Optional[EstimateX] = None
        self.last_result: Optional[SolveResult] = None

    def feed(self, d: DiffCoeff) -> None:
        self.acc = accumulate(self.acc, d)
        self.t = d.t

    @property
    def warming_up(self) -> bool:
        return self.t < self.warmup_s

    def attitude_only(self) -> EstimateX:
        return EstimateX(q=attitude_only_init(self.acc.S_qq))

    @abstractmethod
    def _solve(self, x0: EstimateX) -> SolveResult:
        """One full solve started from ``x0``."""

    @abstractmethod
    def objective_at(self, x: EstimateX) -> float:
        """Objective over the epochs fed so far."""

    def estimate(self) -> Optional[SolveResult]:
        """Current estimate, or None while the attitude is still unobservable."""
        if self.acc.M == 0:
            return None
        if self.warming_up or self.previous is None:
            try:
                x0 = self.attitude_only()
            except DegenerateSpectrum:
                if self.warming_up:
                    return None
                raise
            if self.warming_up:
                result = SolveResult(estimate=x0, iterations=0, converged=True, step_norms=[],
                                     condition=float("nan"), objective=self.objective_at(x0))
                self.last_result = result
                return result
            logger.info("%s: warm-up over at t = %.2f s, switching to full estimation", self.name, self.t)
        else:
            x0 = self.previous

        result = self._solve(x0)
        self.previous = result.estimate
        self.last_result = result
        return result


class RecursiveEstimator(JapeEstimator):
    name = "ra-jape"

    def _solve(self, x0: EstimateX) -> SolveResult:
        return ra_jape_update(self.acc, x0, self.settings)

    def objective_at(self, x: EstimateX) -> float:
        return accumulated_objective(self.acc, x)


class BatchEstimator(JapeEstimator):
    """Keeps every differenced epoch and re-solves over all of them."""
    name = "ba-jape"

    def __init__(self, settings: SolverSettings = SolverSettings(), warmup_s: float = 30.0):
        super().__init__(settings, warmup_s)
        self.diffs: List[DiffCoeff] = []

    def feed(self, d: DiffCoeff) -> None:
        super().feed(d)
        self.diffs.append(d)

    def _solve(self, x0: EstimateX) -> SolveResult:
        return ba_jape(self.diffs, x0, self.settings)

    def objective_at(self, x: EstimateX) -> float:
        return objective(x, self.diffs)
