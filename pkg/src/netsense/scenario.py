"""Geometry, priors, array response and the frozen Monte-Carlo sample set.

Positions are in km throughout. Path loss is evaluated in metres. All angles
follow the convention ``theta = arctan(dx / dy)`` measured from the BS to the
target, so they live in ``(-pi/2, pi/2]``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DegenerateGeometry, SamplingFailed

# offsets below this (km) count as coincident
_COINCIDENT_KM = 1e-9


def dbm_to_watt(dbm):
    return 10.0 ** ((np.asarray(dbm, dtype=float) - 30.0) / 10.0)


def noise_power(psd_dbm_hz=-169.0, bandwidth_hz=1e6):
    """Receiver noise power in W from a PSD in dBm/Hz and a bandwidth."""
    return float(10.0 ** ((psd_dbm_hz + 10.0 * np.log10(bandwidth_hz) - 30.0) / 10.0))


@dataclass(frozen=True)
class GaussianPrior:
    """Isotropic Gaussian location prior, ``N(center, radius**2 I)``."""

    center: tuple[float, float]
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"prior radius must be positive, got {self.radius}")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))


@dataclass(frozen=True)
class Scenario:
    """Everything needed to evaluate and optimise the PCRB.

    ``attenuation[n, u, k]`` is the complex round-trip gain from the transmit
    array of BS ``u`` via target ``k`` to the receive array of BS ``n``.
    ``snapshots`` is the number of i.i.d. samples per sensing frame; the data
    FIM scales with it while the fronthaul rate is per sample.
    """

    bs_positions: np.ndarray
    priors: tuple[GaussianPrior, ...]
    Mt: int
    Mr: int
    sigma2: float
    attenuation: np.ndarray
    power_budget: np.ndarray
    fronthaul_cap: np.ndarray
    wavelength: float = 0.1
    mc_samples: int = 50
    rng_seed: int = 0
    rcs_m2: float = 1.0
    snapshots: int = 1

    def __post_init__(self):
        bs = np.atleast_2d(np.asarray(self.bs_positions, dtype=float))
        object.__setattr__(self, "bs_positions", bs)
        object.__setattr__(self, "priors", tuple(self.priors))
        N, K = bs.shape[0], len(self.priors)
        pw = np.broadcast_to(np.asarray(self.power_budget, dtype=float), (N,)).copy()
        cap = np.broadcast_to(np.asarray(self.fronthaul_cap, dtype=float), (N,)).copy()
        object.__setattr__(self, "power_budget", pw)
        object.__setattr__(self, "fronthaul_cap", cap)
        att = np.asarray(self.attenuation, dtype=complex)
        object.__setattr__(self, "attenuation", att)
        if bs.shape[1] != 2:
            raise ValueError("bs_positions must be an N x 2 array")
        if K < 1:
            raise ValueError("need at least one target")
        if self.Mt < 1 or self.Mr < 1:
            raise ValueError("antenna counts must be positive")
        if not self.sigma2 > 0:
            raise ValueError("noise power must be positive")
        if np.any(pw <= 0) or np.any(cap <= 0):
            raise ValueError("power budgets and fronthaul capacities must be positive")
        if self.mc_samples < 1 or self.snapshots < 1:
            raise ValueError("mc_samples and snapshots must be >= 1")
        if att.shape != (N, N, K):
            raise ValueError(f"attenuation must have shape {(N, N, K)}, got {att.shape}")

    @property
    def N(self) -> int:
        return self.bs_positions.shape[0]

    @property
    def K(self) -> int:
        return len(self.priors)

    @property
    def centers(self) -> np.ndarray:
        return np.array([p.center for p in self.priors])

    @property
    def radii(self) -> np.ndarray:
        return np.array([p.radius for p in self.priors])

    def with_(self, **changes) -> "Scenario":
        """Copy with fields replaced.

        Geometry changes (BS positions, priors, wavelength, RCS) regenerate
        the attenuation from ``rng_seed`` unless it is passed explicitly.
        """
        regen = {"bs_positions", "priors", "wavelength", "rcs_m2", "rng_seed"}
        if regen & changes.keys() and "attenuation" not in changes:
            N = len(np.atleast_2d(changes.get("bs_positions", self.bs_positions)))
            K = len(changes.get("priors", self.priors))
            changes["attenuation"] = np.zeros((N, N, K), complex)
            draft = replace(self, **changes)
            att = gen_attenuation(draft, np.random.default_rng(draft.rng_seed))
            return replace(draft, attenuation=att)
        return replace(self, **changes)


def angle_between(bs_pos, target_pos) -> float:
    """Angle from a BS to a target, ``arctan(dx/dy)`` folded to (-pi/2, pi/2]."""
    dx = float(target_pos[0]) - float(bs_pos[0])
    dy = float(target_pos[1]) - float(bs_pos[1])
    if np.hypot(dx, dy) < _COINCIDENT_KM:
        raise DegenerateGeometry("target coincides with BS")
    return float(_fold(np.arctan2(dx, dy)))


def _fold(theta):
    theta = np.where(theta > np.pi / 2, theta - np.pi, theta)
    return np.where(theta <= -np.pi / 2, theta + np.pi, theta)


def angle_jacobian(bs_pos, target_pos) -> np.ndarray:
    """Gradient of :func:`angle_between` with respect to the target position.

    Uses ``[dy, -dx] / (dx**2 + dy**2)``, which equals the tan/cot forms but
    stays finite when either offset vanishes.
    """
    dx = float(target_pos[0]) - float(bs_pos[0])
    dy = float(target_pos[1]) - float(bs_pos[1])
    r2 = dx * dx + dy * dy
    if r2 < _COINCIDENT_KM**2:
        raise DegenerateGeometry("target coincides with BS")
    return np.array([dy / r2, -dx / r2])


def steering(theta, M: int, kind: str = "receive") -> np.ndarray:
    """Half-wavelength ULA response ``exp(j pi m sin theta)``, m = 0..M-1.

    ``theta`` may be an array; the antenna axis is appended last. Transmit and
    receive arrays share the same model, ``kind`` is accepted for clarity only.
    """
    if kind not in ("transmit", "receive"):
        raise ValueError(f"unknown array kind {kind!r}")
    m = np.arange(M)
    return np.exp(1j * np.pi * m * np.sin(np.asarray(theta, dtype=float))[..., None])


def steering_derivative(theta, M: int) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)[..., None]
    m = np.arange(M)
    return 1j * np.pi * m * np.cos(theta) * np.exp(1j * np.pi * m * np.sin(theta))


def gen_attenuation(scenario: Scenario, rng: np.random.Generator) -> np.ndarray:
    """Radar-equation magnitudes at the prior centres with seeded uniform phase."""
    d = np.linalg.norm(
        scenario.centers[None, :, :] - scenario.bs_positions[:, None, :], axis=-1
    ) * 1e3  # (N, K) in metres
    if np.any(d < _COINCIDENT_KM * 1e3):
        raise DegenerateGeometry("prior centre coincides with a BS")
    lam2 = scenario.wavelength**2
    mag2 = lam2 * scenario.rcs_m2 / ((4 * np.pi) ** 3 * d[None, :, :] ** 2 * d[:, None, :] ** 2)
    phase = rng.uniform(0.0, 2 * np.pi, size=mag2.shape)
    return np.sqrt(mag2) * np.exp(1j * phase)


@dataclass(frozen=True)
class SampleSet:
    """Frozen Monte-Carlo draws with all derived per-sample geometry.

    Array shapes (S samples, N BSs, K targets):
    ``positions (S,K,2)``, ``theta (S,N,K)``, ``jac (S,N,K,2)``,
    ``A, Adot (S,N,Mr,K)``, ``V, Vdot (S,N,Mt,K)``.
    ``gain`` is the attenuation divided by the noise amplitude, so every
    quantity downstream is expressed with unit noise power. ``radii`` are the
    prior standard deviations, kept here so the prior FIM travels with the draws.
    """

    positions: np.ndarray
    theta: np.ndarray
    jac: np.ndarray
    A: np.ndarray
    Adot: np.ndarray
    V: np.ndarray
    Vdot: np.ndarray
    gain: np.ndarray
    sigma2: float
    radii: np.ndarray
    snapshots: int = 1

    @property
    def S(self):
        return self.positions.shape[0]

    @property
    def N(self):
        return self.theta.shape[1]

    @property
    def K(self):
        return self.theta.shape[2]

    @property
    def Mt(self):
        return self.V.shape[2]

    @property
    def Mr(self):
        return self.A.shape[2]

    def U(self, s: int) -> np.ndarray:
        from .fim import chain_rule_U

        return chain_rule_U(self.jac[s])

    def subset(self, idx) -> "SampleSet":
        idx = np.atleast_1d(idx)
        return replace(
            self,
            positions=self.positions[idx],
            theta=self.theta[idx],
            jac=self.jac[idx],
            A=self.A[idx],
            Adot=self.Adot[idx],
            V=self.V[idx],
            Vdot=self.Vdot[idx],
        )

    def with_receive(self, A, Adot) -> "SampleSet":
        """Same draws with a replaced (e.g. beamformed) receive response."""
        return replace(self, A=np.asarray(A), Adot=np.asarray(Adot))


def geometry(bs_positions, positions):
    """Angles and angle jacobians for targets ``positions (S,K,2)``."""
    delta = positions[:, None, :, :] - bs_positions[None, :, None, :]  # (S,N,K,2)
    dx, dy = delta[..., 0], delta[..., 1]
    r2 = dx * dx + dy * dy
    if np.any(r2 < _COINCIDENT_KM**2):
        raise DegenerateGeometry("target coincides with BS")
    theta = _fold(np.arctan2(dx, dy))
    jac = np.stack([dy / r2, -dx / r2], axis=-1)
    return theta, jac


def sample_set_from_positions(scenario: Scenario, positions) -> SampleSet:
    positions = np.asarray(positions, dtype=float).reshape(-1, scenario.K, 2)
    theta, jac = geometry(scenario.bs_positions, positions)
    return SampleSet(
        positions=positions,
        theta=theta,
        jac=jac,
        A=np.swapaxes(steering(theta, scenario.Mr), -1, -2),
        Adot=np.swapaxes(steering_derivative(theta, scenario.Mr), -1, -2),
        V=np.swapaxes(steering(theta, scenario.Mt, "transmit"), -1, -2),
        Vdot=np.swapaxes(steering_derivative(theta, scenario.Mt), -1, -2),
        gain=scenario.attenuation / np.sqrt(scenario.sigma2),
        sigma2=scenario.sigma2,
        radii=scenario.radii,
        snapshots=scenario.snapshots,
    )


def draw_samples(scenario: Scenario, rng=None, max_retries: int = 100) -> SampleSet:
    """Draw ``mc_samples`` target configurations from the product prior.

    Draws that put a target on top of a BS are redrawn.
    """
    if rng is None:
        # stream 0 of this seed is used for the attenuation phases
        rng = np.random.default_rng((scenario.rng_seed, 1))
    S, K = scenario.mc_samples, scenario.K
    centers, radii = scenario.centers, scenario.radii
    out = np.empty((S, K, 2))
    for s in range(S):
        for _ in range(max_retries + 1):
            q = centers + radii[:, None] * rng.standard_normal((K, 2))
            d = np.linalg.norm(q[None] - scenario.bs_positions[:, None], axis=-1)
            if np.all(d >= _COINCIDENT_KM):
                out[s] = q
                break
        else:
            raise SamplingFailed(f"sample {s}: {max_retries} degenerate redraws")
    return sample_set_from_positions(scenario, out)


# reference geometry: two BSs on the x axis, five candidate targets
SQ3 = np.sqrt(3.0)
DEFAULT_TARGETS = (
    GaussianPrior((SQ3 / 4, 0.75), 0.03),
    GaussianPrior((0.0, 0.75), 0.048),
    GaussianPrior((-SQ3 / 4, 0.75), 0.03),
    GaussianPrior((SQ3 / 4, SQ3 / 4), 0.03),
    GaussianPrior((-0.25, 0.5), 0.048),
)
# 7-cell hexagonal cluster centred at (0, 1.5); the first two sites are the
# default pair so every N-sweep point contains the two-BS geometry
HEX_SITES = np.array(
    [
        [SQ3 / 2, 0.0],
        [-SQ3 / 2, 0.0],
        [0.0, 1.5],
        [SQ3, 1.5],
        [-SQ3, 1.5],
        [SQ3 / 2, 3.0],
        [-SQ3 / 2, 3.0],
    ]
)
# 10 ms sensing frame at 1 MHz
DEFAULT_SNAPSHOTS = 10_000


def make_scenario(
    bs_positions=HEX_SITES[:2],
    targets: Sequence[GaussianPrior] = DEFAULT_TARGETS[:2],
    Mt: int = 4,
    Mr: int = 4,
    power_dbm=31.0,
    fronthaul_bits=8.0,
    wavelength: float = 0.1,
    noise_psd_dbm_hz: float = -169.0,
    bandwidth_hz: float = 1e6,
    mc_samples: int = 20,
    seed: int = 0,
    rcs_m2: float = 1.0,
    snapshots: int = DEFAULT_SNAPSHOTS,
) -> Scenario:
    """Build a scenario with attenuation drawn from ``seed``.

    Defaults reproduce the two-BS, two-target reference geometry at desk
    scale (4 transmit and 4 receive antennas).
    """
    bs = np.atleast_2d(np.asarray(bs_positions, dtype=float))
    targets = tuple(t if isinstance(t, GaussianPrior) else GaussianPrior(**t) for t in targets)
    N, K = bs.shape[0], len(targets)
    draft = Scenario(
        bs_positions=bs,
        priors=targets,
        Mt=Mt,
        Mr=Mr,
        sigma2=noise_power(noise_psd_dbm_hz, bandwidth_hz),
        attenuation=np.zeros((N, N, K), complex),
        power_budget=dbm_to_watt(np.broadcast_to(power_dbm, (N,))),
        fronthaul_cap=np.broadcast_to(np.asarray(fronthaul_bits, float), (N,)),
        wavelength=wavelength,
        mc_samples=mc_samples,
        rng_seed=seed,
        rcs_m2=rcs_m2,
        snapshots=snapshots,
    )
    att = gen_attenuation(draft, np.random.default_rng(seed))
    return replace(draft, attenuation=att)


CONFIG_KEYS = {
    "bs_positions",
    "targets",
    "Mt",
    "Mr",
    "wavelength_m",
    "noise_psd_dbm_hz",
    "bandwidth_hz",
    "power_dbm",
    "fronthaul_bits",
    "mc_samples",
    "seed",
    "rcs_m2",
    "snapshots",
}


_INT_KEYS = {"Mt", "Mr", "mc_samples", "seed", "snapshots"}
_FLOAT_KEYS = {"wavelength_m", "noise_psd_dbm_hz", "bandwidth_hz", "power_dbm", "fronthaul_bits", "rcs_m2"}


def scenario_from_config(cfg: dict) -> Scenario:
    unknown = set(cfg) - CONFIG_KEYS
    if unknown:
        raise ValueError(f"unknown scenario keys: {sorted(unknown)}")
    kw = {}
    rename = {"wavelength_m": "wavelength"}
    for key, val in cfg.items():
        if key == "targets":
            val = [GaussianPrior(tuple(float(c) for c in t["center"]), float(t["radius"])) for t in val]
        elif key in _INT_KEYS:
            val = int(val)
        elif key in _FLOAT_KEYS:
            # YAML 1.1 reads "1.0e6" as a string
            val = np.asarray(val, dtype=float)
            val = float(val) if val.ndim == 0 else val.tolist()
        kw[rename.get(key, key)] = val
    return make_scenario(**kw)


def load_scenario(path) -> Scenario:
    """Read a scenario from a YAML or JSON file (keys as in ``CONFIG_KEYS``)."""
    text = Path(path).read_text()
    if str(path).endswith(".json"):
        cfg = json.loads(text)
    else:
        import yaml

        cfg = yaml.safe_load(text)
    return scenario_from_config(cfg or {})


def scenario_to_config(sc: Scenario) -> dict:
    """Inverse of :func:`scenario_from_config` for scenarios built by ``make_scenario``."""
    return {
        "bs_positions": sc.bs_positions.tolist(),
        "targets": [{"center": list(p.center), "radius": p.radius} for p in sc.priors],
        "Mt": sc.Mt,
        "Mr": sc.Mr,
        "wavelength_m": sc.wavelength,
        "noise_psd_dbm_hz": float(10 * np.log10(sc.sigma2) + 30 - 60),
        "bandwidth_hz": 1e6,
        "power_dbm": (10 * np.log10(sc.power_budget) + 30).tolist(),
        "fronthaul_bits": sc.fronthaul_cap.tolist(),
        "mc_samples": sc.mc_samples,
        "seed": sc.rng_seed,
        "rcs_m2": sc.rcs_m2,
        "snapshots": sc.snapshots,
    }
