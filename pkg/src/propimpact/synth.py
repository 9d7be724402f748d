"""Synthetic event series from known kernels, sign flow, type process and noise.

Every path is deterministic given the seed. Randomness is split into named
sub-streams (signs, types, reversal, noise) so that changing one ingredient
does not reshuffle the others.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from .dar import DarSpec, simulate
from .errors import ValidationError
from .events import NS_PER_DAY, NS_PER_SECOND, EventSeries, classify_array
from .hdim import InfluenceKernel
from .tim import NoiseParams, TimKernel

MIN_LENGTH = 10_000
EVENTS_PER_DAY = 21_600           # one event per second, 09:30 to 15:30
SESSION_START_NS = (9 * 3600 + 30 * 60) * NS_PER_SECOND
FIRST_DAY = 19_724                # 2024-01-02, days since the epoch
START_MID = 10_000.0
DIRECT_CONV_MAX = 512


@dataclass(frozen=True, eq=False)
class TypeProcess:
    """How C/NC labels are drawn: ``iid``, ``markov`` or ``scripted``.

    ``transition[i, j]`` is P(next = j | current = i) with 0 = NC, 1 = C.
    A script fixes the labels of the kept events; warm-up events are drawn
    i.i.d. at the script's C frequency.
    """

    kind: str = "iid"
    p_c: float = 0.5
    transition: np.ndarray | None = None
    script: np.ndarray | None = None

    def __post_init__(self):
        if self.kind == "iid":
            if not 0 < self.p_c < 1:
                raise ValidationError("P(C) must lie strictly between 0 and 1")
        elif self.kind == "markov":
            T = np.asarray(self.transition, dtype=float)
            if T.shape != (2, 2) or np.any(T < 0) or np.any(np.abs(T.sum(axis=1) - 1) > 1e-12):
                raise ValidationError("transition matrix must be 2x2 with rows summing to 1")
            if not (0 < T[0, 1] and 0 < T[1, 0]):
                raise ValidationError("Markov type process must be irreducible")
            object.__setattr__(self, "transition", T)
        elif self.kind == "scripted":
            s = np.asarray(self.script)
            if s.ndim != 1 or not np.all((s == 0) | (s == 1)):
                raise ValidationError("scripted types must be a 0/1 array")
            object.__setattr__(self, "script", s.astype(bool))
        else:
            raise ValidationError(f"unknown type process {self.kind!r}")

    @property
    def stationary_p_c(self) -> float:
        if self.kind == "markov":
            T = self.transition
            return float(T[0, 1] / (T[0, 1] + T[1, 0]))
        if self.kind == "scripted":
            return float(self.script.mean())
        return self.p_c

    @classmethod
    def markov_with(cls, p_c, p_cc):
        """Markov chain with stationary P(C) = p_c and P(C | C) = p_cc."""
        p_nc_c = p_c * (1 - p_cc) / (1 - p_c)
        return cls("markov", transition=np.array([[1 - p_nc_c, p_nc_c], [1 - p_cc, p_cc]]))

    def draw(self, n_total, n_keep, rng):
        if self.kind == "iid":
            return rng.random(n_total) < self.p_c
        if self.kind == "scripted":
            if len(self.script) < n_keep:
                raise ValidationError(f"type script has {len(self.script)} entries, need {n_keep}")
            warm = rng.random(n_total - n_keep) < self.stationary_p_c
            return np.concatenate([warm, self.script[:n_keep]])
        T = self.transition
        u = rng.random(n_total)
        out = np.empty(n_total, dtype=bool)
        state = u[0] < self.stationary_p_c
        out[0] = state
        stay_c, enter_c = T[1, 1], T[0, 1]
        for t in range(1, n_total):
            state = u[t] < (stay_c if state else enter_c)
            out[t] = state
        return out

    def to_dict(self):
        d = {"kind": self.kind}
        if self.kind == "iid":
            d["p_c"] = self.p_c
        elif self.kind == "markov":
            d["transition"] = self.transition.tolist()
        else:
            d["script"] = self.script.astype(int).tolist()
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(d.get("kind", "iid"), float(d.get("p_c", 0.5)), d.get("transition"),
                   d.get("script"))


@dataclass(frozen=True, eq=False)
class GeneratorSpec:
    sign: DarSpec
    types: TypeProcess
    impact: TimKernel | InfluenceKernel
    noise: NoiseParams = field(default_factory=NoiseParams)
    n: int = 1_000_000
    seed: int = 0
    reversal: float = 0.0
    signs: np.ndarray | None = None
    name: str = "custom"
    events_per_day: int = EVENTS_PER_DAY

    def __post_init__(self):
        if self.n < MIN_LENGTH:
            raise ValidationError(f"series length must be at least {MIN_LENGTH}")
        if not 1 <= self.events_per_day <= EVENTS_PER_DAY:
            raise ValidationError(f"events per day must lie in [1, {EVENTS_PER_DAY}]")
        if not 0 <= self.reversal <= 1:
            raise ValidationError("reversal probability must lie in [0, 1]")
        if not isinstance(self.impact, (TimKernel, InfluenceKernel)):
            raise ValidationError("impact must be a TimKernel or an InfluenceKernel")

    @property
    def warmup(self) -> int:
        return self.impact.L

    def replace(self, **changes) -> "GeneratorSpec":
        from dataclasses import replace
        return replace(self, **changes)

    def to_dict(self):
        model = "hdim" if isinstance(self.impact, InfluenceKernel) else "tim"
        return {
            "name": self.name, "sign": self.sign.to_dict(), "types": self.types.to_dict(),
            "impact": {"model": model, **self.impact.to_dict()},
            "noise": {"D_LF": self.noise.D_LF, "D_HF": self.noise.D_HF},
            "n": self.n, "seed": self.seed, "reversal": self.reversal,
            "events_per_day": self.events_per_day,
        }

    @classmethod
    def from_dict(cls, d):
        sign = d["sign"]
        if "power_law" in sign:
            pl = sign["power_law"]
            sign_spec = DarSpec.power_law(float(pl["gamma"]), float(pl["rho"]),
                                          int(pl.get("p_max", 10_000)))
        else:
            sign_spec = DarSpec.from_dict(sign)
        imp = dict(d["impact"])
        model = imp.pop("model", "tim")
        impact = InfluenceKernel.from_dict(imp) if model == "hdim" else TimKernel.from_dict(imp)
        noise = NoiseParams(**d.get("noise", {}))
        return cls(sign_spec, TypeProcess.from_dict(d.get("types", {})), impact, noise,
                   int(d.get("n", 1_000_000)), int(d.get("seed", 0)),
                   float(d.get("reversal", 0.0)), name=d.get("name", "custom"),
                   events_per_day=int(d.get("events_per_day", EVENTS_PER_DAY)))


def substream(seed, name) -> np.random.Generator:
    """Independent generator for a named purpose, derived from one seed."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(zlib.crc32(name.encode()),)))


def _convolve(x, k):
    if len(k) <= DIRECT_CONV_MAX:
        return np.convolve(x, k)[: len(x)]
    return signal.fftconvolve(x, k)[: len(x)]


def _apply_reversal(eps, is_c, prob, rng):
    """After a C event, the next sign is the opposite of the previous one with probability ``prob``."""
    if prob == 0:
        return eps
    eps = eps.copy()
    hit = np.zeros(len(eps), dtype=bool)
    hit[1:] = is_c[:-1] & (rng.random(len(eps) - 1) < prob)
    idx = np.flatnonzero(hit)
    # runs of consecutive hits need the already reversed predecessor, so sweep until stable
    while True:
        new = -eps[idx - 1]
        if np.array_equal(new, eps[idx]):
            break
        eps[idx] = new
    return eps


def _draw_flow(spec: GeneratorSpec):
    total = spec.n + spec.warmup
    is_c = spec.types.draw(total, spec.n, substream(spec.seed, "types"))
    if spec.signs is not None:
        if len(spec.signs) < total:
            raise ValidationError(f"need {total} external signs, got {len(spec.signs)}")
        eps = np.asarray(spec.signs[:total], dtype=np.int8)
    else:
        eps = simulate(spec.sign, total, rng=substream(spec.seed, "signs"))
    eps = _apply_reversal(eps, is_c, spec.reversal, substream(spec.seed, "reversal"))
    return eps, is_c


def _tim_noise(noise, n, rng):
    out = np.zeros(n)
    if noise.D_LF > 0:
        out += np.sqrt(noise.D_LF) * rng.standard_normal(n)
    if noise.D_HF > 0:
        u = np.sqrt(noise.D_HF / 2) * rng.standard_normal(n + 1)
        out += np.diff(u)
    return out


def build_series(returns, eps, types, instrument_id="SYNTH",
                 events_per_day=EVENTS_PER_DAY) -> EventSeries:
    """Wrap generated returns with synthetic timestamps, mids and day bounds.

    Labels come from the returns when the classification reproduces the
    generator's types; otherwise the generator's labels are attached.
    """
    n = len(returns)
    k = np.arange(n)
    day, sec = np.divmod(k, events_per_day)
    ts = (FIRST_DAY + day) * NS_PER_DAY + SESSION_START_NS + sec * NS_PER_SECOND
    mids = START_MID + np.concatenate([[0.0], np.cumsum(returns)])
    mb, ma = mids[:-1], mids[1:]
    bounds = np.append(np.arange(0, n, events_per_day), n)
    types = np.asarray(types, dtype=bool)
    if np.array_equal(classify_array(ma - mb), types):
        return EventSeries(ts, eps, mb, ma, bounds, instrument_id)
    return EventSeries(ts, eps, mb, ma, bounds, instrument_id, is_c=types, labels="generator")


def tim_returns(kernel: TimKernel, eps, is_c):
    """Noise-free returns sum_k sum_n dG_k(n) x_k(t - n) of a transient model."""
    eps = eps.astype(float)
    if kernel.variant == "TIM1":
        return _convolve(eps, kernel.dG[0])
    r = np.zeros(len(eps))
    for k, ind in enumerate((~is_c, is_c)):
        r += _convolve(eps * ind, kernel.dG[k])
    return r


def hdim_returns(kernel: InfluenceKernel, eps, is_c):
    """Noise-free returns of the history dependent model."""
    eps = eps.astype(float)
    ind = (~is_c, is_c)
    x = [eps * i for i in ind]
    r = np.zeros(len(eps))
    for c in (0, 1):
        if not (kernel.G1[c] or np.any(kernel.kappa[:, c])):
            continue
        part = kernel.G1[c] * eps
        for a in (0, 1):
            part = part + _convolve(x[a], np.concatenate([[0.0], kernel.kappa[a, c]]))
        r += np.where(ind[c], part, 0.0)
    return r


def generate_tim(spec: GeneratorSpec) -> EventSeries:
    if not isinstance(spec.impact, TimKernel):
        raise ValidationError("generate_tim needs a TimKernel")
    eps, is_c = _draw_flow(spec)
    r = tim_returns(spec.impact, eps, is_c)
    r = r + _tim_noise(spec.noise, len(r), substream(spec.seed, "noise"))
    w = spec.warmup
    return build_series(r[w:], eps[w:], is_c[w:], spec.name, spec.events_per_day)


def generate_hdim2(spec: GeneratorSpec) -> EventSeries:
    """History dependent returns; NC events return exactly zero.

    Noise sits on C events only: white noise scaled by 1/sqrt(P(C)) so that
    it adds D_LF per event on average, plus a first difference of i.i.d.
    innovations counted on the C-event clock.
    """
    if not isinstance(spec.impact, InfluenceKernel):
        raise ValidationError("generate_hdim2 needs an InfluenceKernel")
    eps, is_c = _draw_flow(spec)
    r = hdim_returns(spec.impact, eps, is_c)
    rng = substream(spec.seed, "noise")
    n_c = int(is_c.sum())
    if n_c and (spec.noise.D_LF > 0 or spec.noise.D_HF > 0):
        p_c = spec.types.stationary_p_c
        eta = np.zeros(n_c)
        if spec.noise.D_LF > 0:
            eta += np.sqrt(spec.noise.D_LF / p_c) * rng.standard_normal(n_c)
        if spec.noise.D_HF > 0:
            eta += np.diff(np.sqrt(spec.noise.D_HF / 2) * rng.standard_normal(n_c + 1))
        r[is_c] += eta
    r[~is_c] = 0.0
    w = spec.warmup
    return build_series(r[w:], eps[w:], is_c[w:], spec.name, spec.events_per_day)


def generate(spec: GeneratorSpec) -> EventSeries:
    if isinstance(spec.impact, InfluenceKernel):
        return generate_hdim2(spec)
    return generate_tim(spec)


def constant_tim2(g_nc, g_c, L=0) -> TimKernel:
    dG = np.zeros((2, L + 1))
    dG[:, 0] = (g_nc, g_c)
    return TimKernel("TIM2", dG)


def small_tick_kernel(L=100) -> InfluenceKernel:
    """Decaying negative influence of past orders on C-event returns."""
    n = np.arange(1, L + 1, dtype=float)
    kappa = np.zeros((2, 2, L))
    kappa[0, 1] = -0.25 * n ** -1.1
    kappa[1, 1] = -0.35 * n ** -1.1
    return InfluenceKernel(kappa, np.array([0.0, 1.0]))


PRESETS = ("iid-null", "large-tick", "small-tick")


def preset(name: str, n=1_000_000, seed=0) -> GeneratorSpec:
    """Named stand-ins for the two stock archetypes plus an all-independent null."""
    if name == "iid-null":
        return GeneratorSpec(DarSpec.order_one(0.5), TypeProcess("iid", 0.5),
                             constant_tim2(0.0, 1.0), NoiseParams(), n, seed, name=name)
    if name == "large-tick":
        return GeneratorSpec(DarSpec.power_law(0.5, 0.95), TypeProcess.markov_with(0.08, 0.02),
                             constant_tim2(0.0, 1.0), NoiseParams(), n, seed,
                             reversal=0.9, name=name)
    if name == "small-tick":
        return GeneratorSpec(DarSpec.power_law(0.5, 0.95), TypeProcess("iid", 0.7),
                             small_tick_kernel(), NoiseParams(D_LF=0.3), n, seed, name=name)
    raise ValidationError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
