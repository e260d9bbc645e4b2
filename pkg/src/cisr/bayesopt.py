"""GP-UCB over curriculum-policy parameters.

Gaussian-process regression with an ARD squared-exponential kernel and a
Gaussian likelihood. Hyperparameters are MAP estimates under Gamma priors,
refit after every new observation. Inputs are min-max scaled and targets
standardised before fitting; proposals maximise ``mu + sqrt(beta) * sigma``
over a mixed discrete/continuous box.
"""

import csv
import io
import itertools
import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular
from scipy.optimize import minimize
from scipy.special import gammaln

from .errors import DimensionMismatch, EmptySpace, SingularKernel
from .rng import make_rng

log = logging.getLogger(__name__)

JITTER_LADDER = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)
LOG_BOUNDS = (np.log(1e-6), np.log(1e3))
# MAP-fit floors on normalised data: lengthscales below 1e-3 of the input box
# and noise below 1e-5 of the target variance only buy ill-conditioning
LENGTH_LOG_BOUNDS = (np.log(1e-3), np.log(1e3))
NOISE_LOG_BOUNDS = (np.log(1e-5), np.log(1e3))


@dataclass(frozen=True)
class GPHyperparams:
    signal_variance: float
    lengthscales: np.ndarray
    noise_variance: float

    def __post_init__(self):
        ls = np.asarray(self.lengthscales, dtype=float)
        object.__setattr__(self, "lengthscales", ls)
        if self.signal_variance <= 0 or self.noise_variance < 0 or np.any(ls <= 0):
            raise ValueError("GP hyperparameters must be positive")

    def to_log(self):
        return np.concatenate(([np.log(self.signal_variance)], np.log(self.lengthscales),
                               [np.log(self.noise_variance)]))

    @classmethod
    def from_log(cls, theta):
        theta = np.asarray(theta, dtype=float)
        return cls(float(np.exp(theta[0])), np.exp(theta[1:-1]), float(np.exp(theta[-1])))


@dataclass(frozen=True)
class GammaPrior:
    """Gamma prior given by its mean and variance."""

    mean: float
    variance: float

    def __post_init__(self):
        if self.mean <= 0 or self.variance <= 0:
            raise ValueError("Gamma prior mean and variance must be positive")

    @property
    def shape(self):
        return self.mean ** 2 / self.variance

    @property
    def scale(self):
        return self.variance / self.mean

    def logpdf(self, x):
        k, th = self.shape, self.scale
        return (k - 1.0) * np.log(x) - x / th - gammaln(k) - k * np.log(th)

    def dlogpdf(self, x):
        return (self.shape - 1.0) / x - 1.0 / self.scale


@dataclass(frozen=True)
class GPPriors:
    signal_variance: GammaPrior
    lengthscales: tuple
    noise_variance: GammaPrior

    @property
    def all(self):
        return (self.signal_variance, *self.lengthscales, self.noise_variance)

    def means(self):
        return GPHyperparams(self.signal_variance.mean,
                             np.array([p.mean for p in self.lengthscales]),
                             self.noise_variance.mean)


def default_priors(dim):
    """Weakly informative priors for inputs on [0, 1] and standardised targets."""
    return GPPriors(GammaPrior(1.0, 0.2), tuple(GammaPrior(0.5, 0.1) for _ in range(dim)),
                    GammaPrior(0.01, 0.1))


# Hyperprior tables for the teacher GP (mean, variance), one lengthscale per
# parameter coordinate in CurriculumPolicyParams.to_vector order.
FROZEN_LAKE_PRIORS = GPPriors(
    GammaPrior(1.0, 0.2),
    (GammaPrior(1.0, 1.0), GammaPrior(0.05, 0.02), GammaPrior(1.0, 1.0),
     GammaPrior(0.05, 0.02), GammaPrior(0.2, 0.2), GammaPrior(0.2, 0.2),
     GammaPrior(0.2, 0.2)),
    GammaPrior(0.01, 0.1),
)
LANDER_PRIORS = GPPriors(
    GammaPrior(1.0, 0.2),
    (GammaPrior(20.0, 4.0), GammaPrior(1.0, 0.3), GammaPrior(0.2, 0.2), GammaPrior(0.2, 0.2)),
    GammaPrior(0.01, 0.1),
)


@dataclass(frozen=True)
class Normalization:
    """Affine maps taking raw inputs to ``[0, 1]`` and targets to zero mean, unit std."""

    x_min: np.ndarray
    x_scale: np.ndarray
    y_mean: float
    y_std: float

    def inputs(self, x):
        return (np.asarray(x, dtype=float) - self.x_min) / self.x_scale

    def inputs_inverse(self, z):
        return np.asarray(z, dtype=float) * self.x_scale + self.x_min

    def targets(self, y):
        return (np.asarray(y, dtype=float) - self.y_mean) / self.y_std

    def targets_inverse(self, z):
        return np.asarray(z, dtype=float) * self.y_std + self.y_mean


@dataclass
class GPModel:
    inputs: np.ndarray
    targets: np.ndarray
    hyper: GPHyperparams
    priors: GPPriors = None
    normalization: Normalization = None

    @classmethod
    def empty(cls, dim, hyper=None, priors=None):
        priors = priors or default_priors(dim)
        return cls(np.zeros((0, dim)), np.zeros(0), hyper or priors.means(), priors)

    @property
    def dim(self):
        return self.inputs.shape[1]

    def __len__(self):
        return len(self.targets)

    def add(self, x, y):
        x = np.asarray(x, dtype=float).reshape(1, -1)
        if x.shape[1] != self.dim:
            raise DimensionMismatch(f"input of dim {x.shape[1]} for a {self.dim}-d model")
        self.inputs = np.vstack([self.inputs, x])
        self.targets = np.append(self.targets, float(y))


def kernel_rbf_ard(x1, x2, hyper):
    x1, x2 = np.asarray(x1, dtype=float), np.asarray(x2, dtype=float)
    ls = hyper.lengthscales
    if x1.shape[-1] != len(ls) or x2.shape[-1] != len(ls):
        raise DimensionMismatch("input dimension does not match the lengthscales")
    d = (x1 - x2) / ls
    return float(hyper.signal_variance * np.exp(-0.5 * np.dot(d, d)))


def kernel_matrix(X1, X2, hyper):
    ls = hyper.lengthscales
    A, B = np.atleast_2d(X1) / ls, np.atleast_2d(X2) / ls
    if A.shape[1] != len(ls) or B.shape[1] != len(ls):
        raise DimensionMismatch("input dimension does not match the lengthscales")
    sq = ((A[:, None, :] - B[None, :, :]) ** 2).sum(-1)  # direct differences avoid cancellation
    return hyper.signal_variance * np.exp(-0.5 * sq)


def _factor(K):
    n = len(K)
    scale = max(1.0, float(np.mean(np.diag(K)))) if n else 1.0
    for jitter in JITTER_LADDER:
        try:
            return cho_factor(K + jitter * scale * np.eye(n), lower=True), jitter
        except np.linalg.LinAlgError:
            continue
    raise SingularKernel("Cholesky failed after the full jitter ladder")


def gp_posterior(model, query):
    """Posterior mean and variance at one point, or arrays for a matrix of points."""
    q = np.asarray(query, dtype=float)
    single = q.ndim == 1
    Q = np.atleast_2d(q)
    h = model.hyper
    if len(model) == 0:
        mu, var = np.zeros(len(Q)), np.full(len(Q), h.signal_variance)
    else:
        K = kernel_matrix(model.inputs, model.inputs, h) + h.noise_variance * np.eye(len(model))
        cf, _ = _factor(K)
        Ks = kernel_matrix(model.inputs, Q, h)
        mu = Ks.T @ cho_solve(cf, model.targets)
        w = solve_triangular(cf[0], Ks, lower=True)
        var = h.signal_variance - np.einsum("ij,ij->j", w, w)
        if np.any(var < -1e-4 * max(1.0, h.signal_variance)):
            raise SingularKernel(f"negative posterior variance {var.min()}")
        var = np.maximum(var, 0.0)
    if single:
        return float(mu[0]), float(var[0])
    return mu, var


def log_marginal_likelihood(model, hyper=None, grad=False):
    h = hyper or model.hyper
    X, y = model.inputs, model.targets
    n = len(y)
    Kf = kernel_matrix(X, X, h)
    K = Kf + h.noise_variance * np.eye(n)
    cf, _ = _factor(K)
    alpha = cho_solve(cf, y)
    L = cf[0]
    lml = -0.5 * y @ alpha - np.log(np.diag(L)).sum() - 0.5 * n * np.log(2 * np.pi)
    if not grad:
        return lml
    W = np.outer(alpha, alpha) - cho_solve(cf, np.eye(n))
    g = np.empty(len(h.lengthscales) + 2)
    g[0] = 0.5 * np.sum(W * Kf)  # d/d log sf2
    for d, l in enumerate(h.lengthscales):
        diff = (X[:, d][:, None] - X[:, d][None, :]) ** 2 / l ** 2
        g[1 + d] = 0.5 * np.sum(W * Kf * diff)
    g[-1] = 0.5 * np.trace(W) * h.noise_variance
    return lml, g


def log_posterior(model, theta):
    """Log marginal likelihood plus Gamma log-priors, with gradient in log space."""
    h = GPHyperparams.from_log(theta)
    lml, g = log_marginal_likelihood(model, h, grad=True)
    vals = np.exp(theta)
    lp = sum(p.logpdf(v) for p, v in zip(model.priors.all, vals))
    dlp = np.array([p.dlogpdf(v) for p, v in zip(model.priors.all, vals)]) * vals
    return lml + lp, g + dlp


def map_fit(model, restarts=4, rng_seed=0):
    """MAP hyperparameters by multi-start L-BFGS-B in log space.

    The result never scores below the starting point (the current
    hyperparameters). If every start fails, the prior means are returned and
    a warning is logged.
    """
    if len(model) < 2:
        raise ValueError("map_fit needs at least two observations")
    if model.priors is None:
        model.priors = default_priors(model.dim)
    rng = make_rng(rng_seed)
    starts = [model.hyper.to_log(), model.priors.means().to_log()]
    for _ in range(restarts):
        starts.append(np.log([max(rng.gamma(p.shape, p.scale), 1e-5) for p in model.priors.all]))
    bounds = [LOG_BOUNDS] + [LENGTH_LOG_BOUNDS] * model.dim + [NOISE_LOG_BOUNDS]
    lo, hi = np.array(bounds).T

    def obj(theta):
        try:
            v, g = log_posterior(model, theta)
        except SingularKernel:
            return 1e25, np.zeros_like(theta)
        if not np.isfinite(v):
            return 1e25, np.zeros_like(theta)
        return -v, -g

    best_theta, best_val = None, np.inf
    for x0 in starts:
        x0 = np.clip(x0, lo, hi)
        f0, _ = obj(x0)
        if f0 < best_val:
            best_theta, best_val = x0, f0
        try:
            res = minimize(obj, x0, jac=True, method="L-BFGS-B", bounds=bounds)
        except (ValueError, FloatingPointError):
            continue
        if np.isfinite(res.fun) and res.fun < best_val:
            best_theta, best_val = res.x, res.fun
    if best_theta is None or best_val >= 1e25:
        log.warning("MAP fit failed; falling back to prior means")
        return model.priors.means()
    return GPHyperparams.from_log(best_theta)


def normalize_dataset(model):
    """Return a copy of ``model`` with scaled inputs/targets and the maps used.

    Degenerate cases: a constant input coordinate maps to 0, a constant
    target vector maps to 0 (scale 1).
    """
    X, y = model.inputs, model.targets
    if len(y) == 0:
        norm = Normalization(np.zeros(model.dim), np.ones(model.dim), 0.0, 1.0)
    else:
        lo, hi = X.min(axis=0), X.max(axis=0)
        scale = np.where(hi - lo > 0, hi - lo, 1.0)
        sd = float(y.std())
        norm = Normalization(lo, scale, float(y.mean()), sd if sd > 0 else 1.0)
    return replace(model, inputs=norm.inputs(X), targets=norm.targets(y), normalization=norm)


@dataclass(frozen=True)
class Discrete:
    n: int


@dataclass(frozen=True)
class Interval:
    low: float
    high: float


@dataclass(frozen=True)
class UCBConfig:
    beta: float = 4.0
    candidate_count: int = 64
    restarts: int = 4
    local_steps: int = 20

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be positive")


def _random_point(space, rng):
    out = np.empty(len(space))
    for d, dim in enumerate(space):
        if isinstance(dim, Discrete):
            out[d] = rng.integers(dim.n)
        else:
            out[d] = rng.uniform(dim.low, dim.high)
    return out


def random_point(space, rng_seed):
    if not space:
        raise EmptySpace("parameter space has no dimensions")
    return _random_point(space, make_rng(rng_seed))


def ucb_propose(model, space, ucb=UCBConfig(), rng_seed=0):
    """Next raw parameter vector to evaluate.

    ``model`` holds raw inputs and targets; normalisation and MAP fitting are
    done by the caller (see :class:`TeacherBO`), and ``model.normalization``
    maps raw candidates into the GP's input space when present.
    """
    if not space or any(isinstance(d, Discrete) and d.n < 1 for d in space):
        raise EmptySpace("parameter space is empty")
    rng = make_rng(rng_seed)
    if len(model) == 0:
        return _random_point(space, rng)
    norm = model.normalization
    disc = [d for d, dim in enumerate(space) if isinstance(dim, Discrete)]
    cont = [d for d, dim in enumerate(space) if isinstance(dim, Interval)]
    sqb = np.sqrt(ucb.beta)

    def score(P):
        Z = norm.inputs(P) if norm is not None else P
        mu, var = gp_posterior(model, Z)
        return mu + sqb * np.sqrt(var)

    combos = list(itertools.product(*[range(space[d].n) for d in disc])) or [()]
    n_draw = max(ucb.candidate_count, 1) if cont else 1
    cands = np.empty((len(combos) * n_draw, len(space)))
    row = 0
    for combo in combos:
        for _ in range(n_draw):
            p = _random_point(space, rng)
            p[disc] = combo
            cands[row] = p
            row += 1
    # observed points are natural local-search seeds for exploitation
    cands = np.vstack([cands, model_raw_inputs(model, space)])
    scores = score(cands)
    order = np.argsort(-scores, kind="stable")[: max(ucb.restarts, 1)]
    best_x, best_s = cands[order[0]].copy(), scores[order[0]]
    for i in order:
        x, s = cands[i].copy(), scores[i]
        step = np.array([(space[d].high - space[d].low) * 0.1 if d in cont else 0.0
                         for d in range(len(space))])
        for _ in range(ucb.local_steps):
            improved = False
            for d in cont:
                trial = np.repeat(x[None, :], 2, axis=0)
                trial[0, d] = min(x[d] + step[d], space[d].high)
                trial[1, d] = max(x[d] - step[d], space[d].low)
                ts = score(trial)
                j = int(np.argmax(ts))
                if ts[j] > s:
                    x, s, improved = trial[j], ts[j], True
            if not improved:
                step *= 0.5
                if np.all(step[cont] < 1e-4 * np.array([space[d].high - space[d].low for d in cont])):
                    break
        if s > best_s:
            best_x, best_s = x, s
    return best_x


def model_raw_inputs(model, space):
    if len(model) == 0:
        return np.zeros((0, len(space)))
    if model.normalization is not None:
        return model.normalization.inputs_inverse(model.inputs)
    return model.inputs


@dataclass
class TeacherBO:
    """Raw-data GP-UCB loop: normalise, refit, propose."""

    space: list
    priors: GPPriors = None
    ucb: UCBConfig = field(default_factory=UCBConfig)
    X: list = field(default_factory=list)
    y: list = field(default_factory=list)
    hyper: GPHyperparams = None
    fit_log: list = field(default_factory=list)

    def __post_init__(self):
        if self.priors is None:
            self.priors = default_priors(len(self.space))
        if len(self.priors.lengthscales) != len(self.space):
            raise DimensionMismatch("one lengthscale prior per parameter is required")
        if self.hyper is None:
            self.hyper = self.priors.means()

    def observe(self, x, y, rng_seed=0):
        self.X.append(np.asarray(x, dtype=float))
        self.y.append(float(y))
        model = self.model()
        if len(self.y) >= 2:
            self.hyper = map_fit(model, rng_seed=rng_seed)
        self.fit_log.append(self.hyper)

    def model(self):
        dim = len(self.space)
        raw = GPModel(np.array(self.X).reshape(-1, dim), np.array(self.y), self.hyper, self.priors)
        return normalize_dataset(raw)

    def propose(self, rng_seed):
        return ucb_propose(self.model(), self.space, self.ucb, rng_seed)

    def dump_csv(self):
        """Dataset audit: raw and normalised inputs, target and fitted hyperparameters."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        dim = len(self.space)
        w.writerow(["round"] + [f"raw_{d}" for d in range(dim)] + [f"norm_{d}" for d in range(dim)]
                   + ["target", "signal_variance"] + [f"lengthscale_{d}" for d in range(dim)]
                   + ["noise_variance"])
        if not self.y:
            return buf.getvalue()
        m = self.model()
        for i, (x, y) in enumerate(zip(self.X, self.y)):
            h = self.fit_log[i] if i < len(self.fit_log) else self.hyper
            w.writerow([i] + [repr(float(v)) for v in x] + [repr(float(v)) for v in m.inputs[i]]
                       + [repr(y), repr(h.signal_variance)] + [repr(float(v)) for v in h.lengthscales]
                       + [repr(h.noise_variance)])
        return buf.getvalue()
