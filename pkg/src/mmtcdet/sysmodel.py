"""Sparse-activity uplink scenario: augmented alphabet, frames, channels, noise."""
from dataclasses import dataclass, field
import zlib

import numpy as np

from .coding import encode
from .errors import ConfigError


SQRT_HALF = np.sqrt(0.5)


@dataclass(frozen=True)
class AugmentedAlphabet:
    """Constellation A plus the inactivity symbol 0.

    ``points[0]`` is the zero symbol; ``points[1:]`` are the active points in
    label order. ``bit_labels[i]`` is the antipodal (+1 for bit 0, -1 for
    bit 1) label of ``active_points[i]``.
    """
    name: str
    active_points: np.ndarray
    bit_labels: np.ndarray

    @property
    def bits_per_symbol(self):
        return self.bit_labels.shape[1]

    @property
    def points(self):
        return np.concatenate(([0j], self.active_points))

    @property
    def size(self):
        return len(self.active_points) + 1

    @property
    def zero_point(self):
        return 0j

    @property
    def bits01(self):
        return ((1 - self.bit_labels) // 2).astype(np.uint8)

    def label_index(self, bits):
        """Map an (..., M_c) array of {0,1} bits to active-point indices."""
        bits = np.asarray(bits, dtype=np.int64)
        idx = np.zeros(bits.shape[:-1], dtype=np.int64)
        for z in range(bits.shape[-1]):
            idx = 2 * idx + bits[..., z]
        return idx


def build_alphabet(modulation_name="QPSK"):
    """Gray-labelled constellation with unit average energy, augmented by 0."""
    if str(modulation_name).upper() != "QPSK":
        raise ConfigError(f"unsupported modulation {modulation_name!r}")
    # label index = 2*b1 + b2; b1 drives the real part, b2 the imaginary part
    bits = np.array([[0, 0], [0, 1], [1, 0], [1, 1]])
    labels = 1 - 2 * bits
    pts = (labels[:, 0] + 1j * labels[:, 1]) * SQRT_HALF
    pts.setflags(write=False)
    labels.setflags(write=False)
    return AugmentedAlphabet("QPSK", pts, labels)


@dataclass(frozen=True)
class SystemConfig:
    N: int = 64
    M: int = 32
    activity_prob: tuple = (0.2,)
    noise_var: float = 1.0
    symbol_var: float = 1.0
    csi_error_var: float = 0.0
    pilot_len: int = 128
    data_len: int = 32

    def __post_init__(self):
        p = np.atleast_1d(np.asarray(self.activity_prob, dtype=float))
        if p.size == 1:
            p = np.full(self.N, p[0])
        object.__setattr__(self, "activity_prob", tuple(float(v) for v in p))
        if self.N < 1:
            raise ConfigError("N must be >= 1")
        if self.M < 1:
            raise ConfigError("M must be >= 1")
        if len(p) != self.N:
            raise ConfigError("activity_prob must have one entry per device")
        if np.any(p <= 0) or np.any(p > 1):
            raise ConfigError("activity_prob entries must be in (0,1]")
        for name in ("noise_var", "symbol_var", "csi_error_var"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.pilot_len < 0 or self.data_len < 0:
            raise ConfigError("pilot_len and data_len must be >= 0")

    @property
    def p(self):
        return np.array(self.activity_prob)

    @property
    def frame_len(self):
        return self.pilot_len + self.data_len


@dataclass(frozen=True)
class FrameRealization:
    """One simulated transmission. Arrays are read-only.

    ``X[:, :pilot_len]`` is the pilot section; ``pilots`` holds the pilot
    sequence assigned to every device (known to the receiver), including
    devices that stayed silent.
    """
    H: np.ndarray
    H_hat: np.ndarray
    active_mask: np.ndarray
    X: np.ndarray
    V: np.ndarray
    Y: np.ndarray
    pilots: np.ndarray
    data_index: np.ndarray
    bit_payload: np.ndarray
    coded_bits: np.ndarray = field(default=None)
    pilot_len: int = 0

    @property
    def X_data(self):
        return self.X[:, self.pilot_len:]

    @property
    def Y_pilot(self):
        return self.Y[:, :self.pilot_len]

    @property
    def Y_data(self):
        return self.Y[:, self.pilot_len:]


def complex_normal(rng, shape, var=1.0):
    """i.i.d. CN(0, var): real and imaginary parts each N(0, var/2)."""
    g = rng.standard_normal((2,) + tuple(np.atleast_1d(shape)))
    return (g[0] + 1j * g[1]) * np.sqrt(var / 2.0)


def substream(seed, trial, tag):
    """Independent generator for (master seed, trial index, purpose tag)."""
    key = zlib.crc32(str(tag).encode())
    ss = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=(int(trial), key))
    return np.random.Generator(np.random.PCG64(ss))


def snr_to_noise_var(snr_db, N, rate=1.0, sigma_x2=1.0):
    """Noise variance for average SNR 10 log10(N R sigma_x^2 / sigma_v^2)."""
    if not np.isfinite(snr_db):
        raise ConfigError("snr_db must be finite")
    if not 0 < rate <= 1:
        raise ConfigError("rate must be in (0,1]")
    return N * rate * sigma_x2 / 10.0 ** (snr_db / 10.0)


def corrupt_csi(H, sigma_e2, rng):
    """Return H + E with E i.i.d. CN(0, sigma_e2)."""
    if sigma_e2 < 0:
        raise ConfigError("sigma_e2 must be >= 0")
    E = complex_normal(rng, H.shape, 1.0)
    if sigma_e2 == 0:
        return H.copy()
    return H + np.sqrt(sigma_e2) * E


def _freeze(*arrays):
    for a in arrays:
        if a is not None:
            a.setflags(write=False)


def draw_frame(cfg, alphabet, rng, code=None):
    """Draw one frame: activity, channel, pilots, payload, noise, CSI error.

    Every random quantity is drawn at unit scale in a fixed order, then
    scaled, so frames drawn from equal streams differ across SNR or CSI
    quality only through the scaling.
    """
    N, M, Tp, Td = cfg.N, cfg.M, cfg.pilot_len, cfg.data_len
    T = Tp + Td
    Mc = alphabet.bits_per_symbol
    pts = alphabet.active_points
    amp = np.sqrt(cfg.symbol_var)

    active = rng.random(N) < cfg.p
    H = complex_normal(rng, (M, N))
    pilot_idx = rng.integers(0, len(pts), size=(N, Tp))
    pilots = amp * pts[pilot_idx]

    coded_bits = None
    if code is None:
        data_idx = rng.integers(0, len(pts), size=(N, Td))
        payload = alphabet.bits01[data_idx].reshape(N, Td * Mc)
    else:
        n_cw, rem = divmod(Td * Mc, code.n)
        if rem or n_cw == 0:
            raise ConfigError(
                f"coded frames need data_len*{Mc} to be a multiple of {code.n}")
        payload = rng.integers(0, 2, size=(N, n_cw * code.k), dtype=np.uint8)
        coded_bits = np.concatenate(
            [encode(code, payload[:, c * code.k:(c + 1) * code.k]) for c in range(n_cw)],
            axis=1)
        data_idx = alphabet.label_index(coded_bits.reshape(N, Td, Mc))

    X = np.zeros((N, T), dtype=complex)
    X[:, :Tp] = pilots
    X[:, Tp:] = amp * pts[data_idx]
    X[~active] = 0.0

    V = complex_normal(rng, (M, T)) * np.sqrt(cfg.noise_var)
    H_hat = corrupt_csi(H, cfg.csi_error_var, rng)
    Y = H @ X + V
    data_index = np.where(active[:, None], data_idx + 1, 0)
    _freeze(H, H_hat, active, X, V, Y, pilots, data_index, payload, coded_bits)
    return FrameRealization(H=H, H_hat=H_hat, active_mask=active, X=X, V=V, Y=Y,
                            pilots=pilots, data_index=data_index,
                            bit_payload=payload, coded_bits=coded_bits,
                            pilot_len=Tp)
