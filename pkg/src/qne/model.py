"""Scenario data and the transformed game: rates, throughput, interference, Y_q.

Array conventions (Q players, N carriers, P primary receivers):

* ``H[r, q, k]``   complex gain from secondary transmitter r to receiver q
  (``r == q`` is the direct link);
* ``w[p, q, k]``   interference weight of player q on carrier k at PU p;
* ``I_q_max[p, q]`` individual caps, ``I_max[p]`` global caps.

A player's strategy block is laid out as ``[tau_hat, p_1..p_N, gamma_hat_1..N]``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .detector import (
    DetectorStats,
    SignalingModel,
    detection_argument,
    detector_stats,
    p_miss_hat,
    q_function,
    q_inverse,
)

SCENARIO_VERSION = "qne-scenario-v1"


@dataclass(frozen=True)
class Scenario:
    Q: int
    N: int
    P: int
    H: np.ndarray
    noise_var: np.ndarray
    signal_var: np.ndarray
    w: np.ndarray
    P_budget: np.ndarray
    p_max: np.ndarray
    tau_min: np.ndarray
    tau_max: np.ndarray
    f: np.ndarray
    T: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    I_q_max: np.ndarray
    I_max: np.ndarray
    signaling_model: SignalingModel = SignalingModel.GAUSSIAN
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        Q, N, P = self.Q, self.N, self.P
        shapes = {
            "H": (Q, Q, N),
            "noise_var": (Q, N),
            "signal_var": (Q, N),
            "w": (P, Q, N),
            "P_budget": (Q,),
            "p_max": (Q, N),
            "tau_min": (Q,),
            "tau_max": (Q,),
            "f": (Q,),
            "T": (Q,),
            "alpha": (Q, N),
            "beta": (Q, N),
            "I_q_max": (P, Q),
            "I_max": (P,),
        }
        for name, shape in shapes.items():
            dtype = complex if name == "H" else float
            arr = np.array(getattr(self, name), dtype=dtype)
            if arr.shape != shape:
                raise ValueError(f"Scenario.{name}: expected shape {shape}, got {arr.shape}")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "signaling_model", SignalingModel(self.signaling_model))
        self.validate()

    def validate(self):
        if min(self.Q, self.N, self.P) < 1:
            raise ValueError("Scenario: Q, N, P must be >= 1")
        if not (np.all(self.tau_min > 0) and np.all(self.tau_min < self.tau_max)
                and np.all(self.tau_max < self.T)):
            raise ValueError("Scenario: need 0 < tau_min < tau_max < T per player")
        for name in ("noise_var", "signal_var", "P_budget", "p_max", "f"):
            if np.any(getattr(self, name) <= 0):
                raise ValueError(f"Scenario.{name}: values must be positive")
        if np.any(self.I_q_max < 0) or np.any(self.I_max < 0):
            raise ValueError("Scenario: interference caps must be nonnegative")
        if np.any(self.w < 0) or np.any(self.w.max(axis=2) <= 0):
            raise ValueError("Scenario.w: weights nonnegative with one positive per (p, q)")
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if np.any(v <= 0) or np.any(v > 0.5):
                raise ValueError(f"Scenario.{name}: probabilities must lie in (0, 1/2]")

    # Derived quantities, cached since the scenario is immutable.
    def _cached(self, key, fn):
        if key not in self._cache:
            self._cache[key] = fn()
        return self._cache[key]

    @property
    def stats(self) -> DetectorStats:
        return self._cached("stats", lambda: detector_stats(
            self.noise_var, self.signal_var, self.signaling_model))

    @property
    def gain(self) -> np.ndarray:
        """|H[r, q, k]|^2."""
        return self._cached("gain", lambda: np.abs(self.H) ** 2)

    @property
    def direct_gain(self) -> np.ndarray:
        """|H_qq(k)|^2 as a (Q, N) array."""
        return self._cached("direct", lambda: np.einsum("qqk->qk", self.gain).copy())

    @property
    def beta_hat(self):
        return self._cached("beta_hat", lambda: q_inverse(self.beta))

    @property
    def alpha_hat(self):
        return self._cached("alpha_hat", lambda: q_inverse(1.0 - self.alpha))

    @property
    def tau_hat_min(self):
        return np.sqrt(self.f * self.tau_min)

    @property
    def tau_hat_max(self):
        return np.sqrt(self.f * self.tau_max)

    @property
    def tau_hat_frame(self):
        """sqrt(f T): the tau_hat at which the transmission window closes."""
        return np.sqrt(self.f * self.T)

    @property
    def gamma_hat_max(self):
        """Largest admissible gamma_hat (taken at tau_hat_max), per (q, k)."""
        s = self.stats
        return (s.sigma1 * self.alpha_hat + s.delta * self.tau_hat_max[:, None]) / s.sigma0

    @property
    def tau_hat_feasible(self):
        """Smallest tau_hat for which the (q, k) threshold interval is nonempty."""
        s = self.stats
        return (s.sigma0 * self.beta_hat - s.sigma1 * self.alpha_hat) / s.delta

    @property
    def dim_player(self):
        return 2 * self.N + 1

    def with_caps(self, I_q_max=None, I_max=None) -> "Scenario":
        kw = {}
        if I_q_max is not None:
            kw["I_q_max"] = np.broadcast_to(np.asarray(I_q_max, float), (self.P, self.Q)).copy()
        if I_max is not None:
            kw["I_max"] = np.broadcast_to(np.asarray(I_max, float), (self.P,)).copy()
        return replace(self, **kw)

    def digest(self) -> str:
        return hashlib.sha256(scenario_to_json(self).encode()).hexdigest()[:16]


@dataclass
class StrategyProfile:
    tau_hat: np.ndarray
    p: np.ndarray
    gamma_hat: np.ndarray

    def __post_init__(self):
        self.tau_hat = np.asarray(self.tau_hat, dtype=float)
        self.p = np.asarray(self.p, dtype=float)
        self.gamma_hat = np.asarray(self.gamma_hat, dtype=float)

    def player_block(self, q):
        return np.concatenate(([self.tau_hat[q]], self.p[q], self.gamma_hat[q]))

    def copy(self):
        return StrategyProfile(self.tau_hat.copy(), self.p.copy(), self.gamma_hat.copy())


@dataclass(frozen=True)
class HalfSpace:
    """``normal @ x_q <= offset`` over one player's block."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        if not np.any(self.normal):
            raise ValueError("HalfSpace: normal must be nonzero")

    def violation(self, xq):
        return float(self.normal @ xq - self.offset)


# ---------------------------------------------------------------------------
# Scenario generation

_DEFAULTS = dict(
    noise_var=0.01,
    snr_d=0.1,
    P_budget=1.0,
    tau_min=1e-4,
    tau_max=1.5e-2,
    f=1e6,
    T=2e-2,
    alpha=0.1,
    beta=0.1,
    I_max=0.02,
    signaling_model="Gaussian",
    pu_channels=True,
    cross_gain=1.0,
)


def fir_channel(rng, shape, L, N):
    """Frequency response of an L-tap FIR filter with i.i.d. CN(0, 1/L^2) taps."""
    taps = (rng.standard_normal(shape + (L,)) + 1j * rng.standard_normal(shape + (L,)))
    taps *= np.sqrt(0.5) / L
    return np.fft.fft(taps, n=N, axis=-1)


def generate_scenario(seed, Q=3, N=8, P=1, L=8, **overrides) -> Scenario:
    """Draw a random scenario.

    Direct, cross and (optionally) PU channels all follow the same FIR model.
    Keyword overrides: any Scenario field (scalar values broadcast), plus

    * ``snr_d`` sets ``signal_var = snr_d * noise_var`` unless given directly;
    * ``pu_channels`` (default True) draws the PU gains G and sets
      ``w = |G|^2``; with False all weights are 1;
    * ``cross_gain`` scales |H_rq|^2 for r != q;
    * ``taps`` replaces the random taps of H, shape (Q, Q, L');
    * ``I_q_max`` defaults to ``I_max`` (individual caps as loose as the
      shared one, so pricing is what enforces the global cap).
    """
    if min(Q, N, P) < 1 or L < 1:
        raise ValueError("generate_scenario: Q, N, P and L must be >= 1")
    opts = dict(_DEFAULTS)
    unknown = set(overrides) - set(opts) - {f.name for f in fields(Scenario)} - {"taps"}
    if unknown:
        raise ValueError(f"generate_scenario: unknown overrides {sorted(unknown)}")
    opts.update(overrides)
    rng = np.random.default_rng(seed)

    if "taps" in opts:
        taps = np.asarray(opts.pop("taps"), dtype=complex)
        H = np.fft.fft(np.broadcast_to(taps, (Q, Q, taps.shape[-1])), n=N, axis=-1)
    else:
        H = fir_channel(rng, (Q, Q), L, N)
    if opts["cross_gain"] != 1.0:
        scale = np.full((Q, Q), np.sqrt(opts["cross_gain"]))
        np.fill_diagonal(scale, 1.0)
        H = H * scale[:, :, None]
    if "w" in opts:
        w = np.broadcast_to(np.asarray(opts["w"], float), (P, Q, N)).copy()
    elif opts["pu_channels"]:
        w = np.abs(fir_channel(rng, (P, Q), L, N)) ** 2
    else:
        w = np.ones((P, Q, N))

    def qn(name):
        return np.broadcast_to(np.asarray(opts[name], float), (Q, N)).copy()

    def per_q(name):
        return np.broadcast_to(np.asarray(opts[name], float), (Q,)).copy()

    noise_var = qn("noise_var")
    if "signal_var" in opts:
        signal_var = qn("signal_var")
    else:
        signal_var = noise_var * np.asarray(opts["snr_d"], float)
    P_budget = per_q("P_budget")
    p_max = qn("p_max") if "p_max" in opts else np.repeat(P_budget[:, None], N, axis=1)
    I_max = np.broadcast_to(np.asarray(opts["I_max"], float), (P,)).copy()
    if "I_q_max" in opts:
        I_q_max = np.broadcast_to(np.asarray(opts["I_q_max"], float), (P, Q)).copy()
    else:
        I_q_max = np.repeat(I_max[:, None], Q, axis=1)
    return Scenario(
        Q=Q, N=N, P=P, H=H, noise_var=noise_var, signal_var=signal_var, w=w,
        P_budget=P_budget, p_max=p_max, tau_min=per_q("tau_min"), tau_max=per_q("tau_max"),
        f=per_q("f"), T=per_q("T"), alpha=qn("alpha"), beta=qn("beta"),
        I_q_max=I_q_max, I_max=I_max, signaling_model=opts["signaling_model"],
    )


# ---------------------------------------------------------------------------
# Rates, throughput, interference

def interference_plus_noise(p, scenario: Scenario):
    """sigma^2_{q,k} + sum_{r != q} |H_rq(k)|^2 p_{r,k}, shape (Q, N)."""
    g = scenario.gain
    total = np.einsum("rqk,rk->qk", g, p)
    return scenario.noise_var + total - scenario.direct_gain * p


def rates(p, scenario: Scenario):
    """All r_{q,k}(p) in nats, shape (Q, N)."""
    p = np.asarray(p, dtype=float)
    return np.log1p(scenario.direct_gain * p / interference_plus_noise(p, scenario))


def rate(x: StrategyProfile, scenario: Scenario, q, k):
    if np.any(x.p < 0):
        raise ValueError("rate: powers must be nonnegative")
    return float(rates(x.p, scenario)[q, k])


def sensing_factor(tau_hat, scenario: Scenario):
    return 1.0 - np.asarray(tau_hat) ** 2 / (scenario.f * scenario.T)


def throughputs(x: StrategyProfile, scenario: Scenario):
    """Opportunistic throughput of every player, shape (Q,)."""
    s = 1.0 - q_function(x.gamma_hat)
    return sensing_factor(x.tau_hat, scenario) * np.sum(s * rates(x.p, scenario), axis=1)


def throughput_hat(x: StrategyProfile, scenario: Scenario, q):
    return float(throughputs(x, scenario)[q])


def miss_probabilities(x: StrategyProfile, scenario: Scenario):
    return p_miss_hat(x.gamma_hat, x.tau_hat[:, None], scenario.stats)


def interference_terms(x: StrategyProfile, scenario: Scenario):
    """P_miss * w * p per (PU, player, carrier), shape (P, Q, N)."""
    return miss_probabilities(x, scenario)[None] * scenario.w * x.p[None]


def local_violations(x: StrategyProfile, scenario: Scenario):
    """I_q^{(p)}(x_q) for all (p, q), shape (P, Q)."""
    return interference_terms(x, scenario).sum(axis=2) - scenario.I_q_max


def global_violations(x: StrategyProfile, scenario: Scenario):
    """I^{(p)}(x), shape (P,)."""
    return interference_terms(x, scenario).sum(axis=(1, 2)) - scenario.I_max


def interference_local(x, scenario, q, p_index=0):
    return float(local_violations(x, scenario)[p_index, q])


def interference_global(x, scenario):
    return global_violations(x, scenario)


def interference_profile(x: StrategyProfile, scenario: Scenario, p_index=0):
    """Aggregate probabilistic interference per carrier at PU ``p_index``."""
    return interference_terms(x, scenario)[p_index].sum(axis=0)


# ---------------------------------------------------------------------------
# The polyhedron Y_q and feasibility

def y_q_polyhedron(scenario: Scenario, q, implied=True) -> list[HalfSpace]:
    """Half-spaces of Y_q over the block ``[tau_hat, p, gamma_hat]``.

    Order: N threshold lower bounds, N threshold upper bounds
    gamma_hat <= gamma_hat_max, N miss bounds, N lower and N upper power
    bounds, the total-power row, then tau_hat >= min and tau_hat <= max.

    The threshold upper bounds follow from the miss bound together with
    tau_hat <= tau_hat_max, so they do not change the set; ``implied=False``
    leaves them out (4N + 3 rows instead of 5N + 3), which keeps the active
    set nondegenerate for the Newton refinement.
    """
    N = scenario.N
    s = scenario.stats
    dim = 2 * N + 1
    out = []

    def row():
        return np.zeros(dim)

    for k in range(N):
        a = row()
        a[1 + N + k] = -1.0
        out.append(HalfSpace(a, -scenario.beta_hat[q, k]))
    if implied:
        for k in range(N):
            a = row()
            a[1 + N + k] = 1.0
            out.append(HalfSpace(a, scenario.gamma_hat_max[q, k]))
    for k in range(N):
        a = row()
        a[0] = -s.delta[q, k] / s.sigma1[q, k]
        a[1 + N + k] = s.sigma0[q, k] / s.sigma1[q, k]
        out.append(HalfSpace(a, scenario.alpha_hat[q, k]))
    for k in range(N):
        a = row()
        a[1 + k] = -1.0
        out.append(HalfSpace(a, 0.0))
    for k in range(N):
        a = row()
        a[1 + k] = 1.0
        out.append(HalfSpace(a, scenario.p_max[q, k]))
    a = row()
    a[1:1 + N] = 1.0
    out.append(HalfSpace(a, scenario.P_budget[q]))
    a = row()
    a[0] = -1.0
    out.append(HalfSpace(a, -scenario.tau_hat_min[q]))
    a = row()
    a[0] = 1.0
    out.append(HalfSpace(a, scenario.tau_hat_max[q]))
    return out


def polyhedron_matrix(scenario: Scenario, q, implied=True):
    """(A, b) stacking of :func:`y_q_polyhedron`."""
    hs = y_q_polyhedron(scenario, q, implied)
    return np.array([h.normal for h in hs]), np.array([h.offset for h in hs])


def in_y_q(xq, scenario: Scenario, q, tol=0.0):
    """Direct evaluation of the constraints defining Y_q (no half-space list)."""
    N = scenario.N
    t, p, g = xq[0], xq[1:1 + N], xq[1 + N:]
    b = detection_argument(g, t, _row_stats(scenario.stats, q))
    return bool(
        np.all(g >= scenario.beta_hat[q] - tol)
        and np.all(b <= scenario.alpha_hat[q] + tol)
        and np.all(p >= -tol) and np.all(p <= scenario.p_max[q] + tol)
        and p.sum() <= scenario.P_budget[q] + tol
        and scenario.tau_hat_min[q] - tol <= t <= scenario.tau_hat_max[q] + tol
    )


def _row_stats(stats: DetectorStats, q) -> DetectorStats:
    return DetectorStats(stats.mu0[q], stats.mu1[q], stats.sigma0[q], stats.sigma1[q])


@dataclass
class FeasibilityReport:
    feasible: np.ndarray
    margin: np.ndarray

    @property
    def ok(self):
        return bool(np.all(self.feasible))


def feasibility_check(scenario: Scenario) -> FeasibilityReport:
    """Per-(q, k) nonemptiness of the threshold/sensing slice of Y_q.

    The slice is nonempty iff tau_hat_max >= (sigma0 beta_hat - sigma1 alpha_hat)
    / (mu1 - mu0); dividing by sigma0 gives the form
    sqrt(f tau_max) >= (beta_hat + |alpha_hat| sigma1/sigma0) / snr_d for
    alpha <= 1/2.
    """
    s = scenario.stats
    rhs = (scenario.beta_hat - scenario.alpha_hat * s.sigma1 / s.sigma0) / s.snr_d
    margin = scenario.tau_hat_max[:, None] - rhs
    return FeasibilityReport(feasible=margin >= 0, margin=margin)


@dataclass
class EquiFeasibility:
    feasible: bool
    tau_low: float
    tau_high: float


def equi_feasibility_check(scenario: Scenario) -> EquiFeasibility:
    """Interval of common sensing times tau admissible for every player.

    A common tau must lie in every player's [tau_min, tau_max] box and leave
    every (q, k) threshold interval nonempty:
    sqrt(f_q tau) >= tau_hat_feasible[q, k].
    """
    low = max(float(np.max(scenario.tau_min)),
              float(np.max(np.max(scenario.tau_hat_feasible, axis=1) ** 2 / scenario.f)))
    high = float(np.min(scenario.tau_max))
    return EquiFeasibility(feasible=low <= high, tau_low=low, tau_high=high)


# ---------------------------------------------------------------------------
# Serialization

def _encode(value):
    if isinstance(value, np.ndarray):
        if np.iscomplexobj(value):
            return np.stack([value.real, value.imag], axis=-1).tolist()
        return value.tolist()
    if isinstance(value, SignalingModel):
        return value.value
    return value


def scenario_to_dict(scenario: Scenario) -> dict:
    out = {"version": SCENARIO_VERSION}
    for f in fields(Scenario):
        if f.name.startswith("_"):
            continue
        out[f.name] = _encode(getattr(scenario, f.name))
    return out


def scenario_from_dict(data: dict) -> Scenario:
    if data.get("version") != SCENARIO_VERSION:
        raise ValueError(f"scenario document: expected version {SCENARIO_VERSION!r}")
    kw = {}
    for f in fields(Scenario):
        if f.name.startswith("_"):
            continue
        if f.name not in data:
            raise ValueError(f"scenario document: missing field {f.name!r}")
        v = data[f.name]
        if f.name == "H":
            arr = np.asarray(v, dtype=float)
            v = arr[..., 0] + 1j * arr[..., 1]
        kw[f.name] = v
    return Scenario(**kw)


def scenario_to_json(scenario: Scenario) -> str:
    # json emits the shortest repr of each float, which round-trips exactly.
    return json.dumps(scenario_to_dict(scenario), sort_keys=True, indent=1)


def scenario_from_json(text: str) -> Scenario:
    return scenario_from_dict(json.loads(text))
