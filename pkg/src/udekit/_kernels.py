"""Hot sampling kernels: counter-based Gaussian/uniform streams and Poisson counts.

Each kernel exists twice, as a numba ``@njit`` loop and as a vectorised numpy
fallback.  ``UDEKIT_NUMBA=0`` in the environment (or a missing numba install)
selects the numpy path at import time.  Both paths consume the same counter
stream, so they agree to within libm rounding of ``log``/``cos``.
"""
import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    numba = None

USE_NUMBA = numba is not None and os.environ.get("UDEKIT_NUMBA", "1").strip().lower() not in (
    "0", "false", "no", "off")
BACKEND = "numba" if USE_NUMBA else "numpy"

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_C_PATH = np.uint64(0xD1B54A32D192ED03)
_C_STEP = np.uint64(0x8CB92BA72F3D8DD7)
_C_CHAN = np.uint64(0xABC98388FB8FAC03)
_C_PAIR = np.uint64(0x6A09E667F3BCC909)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_TWO_M53 = 2.0 ** -53
_TWO_PI = 2.0 * np.pi
_MASK64 = (1 << 64) - 1

# elements per numpy block; bounds the uint64 temporaries
_BLOCK = 1 << 20


def seed_to_u64(seed):
    return np.uint64(int(seed) & _MASK64)


# ---------------------------------------------------------------------------
# numpy path

def _mix_np(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def _key_np(seed, path, step, chan):
    h = _mix_np(np.asarray(seed + _GOLDEN, dtype=np.uint64))
    h = _mix_np(h ^ (path * _C_PATH))
    h = _mix_np(h ^ (step * _C_STEP))
    return _mix_np(h ^ (chan * _C_CHAN))


def _unit_np(h):
    return ((h >> _S11).astype(np.float64) + 0.5) * _TWO_M53


def _normals_np(seed, first_path, n_paths, n_steps, dim):
    out = np.empty((n_steps, n_paths, dim))
    paths = (np.arange(n_paths, dtype=np.uint64) + np.uint64(first_path))[None, :, None]
    chans = np.arange(dim, dtype=np.uint64)[None, None, :]
    rows = max(1, _BLOCK // max(1, n_paths * dim))
    with np.errstate(over="ignore"):
        for start in range(0, n_steps, rows):
            stop = min(n_steps, start + rows)
            steps = np.arange(start, stop, dtype=np.uint64)[:, None, None]
            h = _key_np(seed, paths, steps, chans)
            u1 = _unit_np(h)
            u2 = _unit_np(_mix_np(h ^ _C_PAIR))
            out[start:stop] = np.sqrt(-2.0 * np.log(u1)) * np.cos(_TWO_PI * u2)
    return out


def _uniforms_np(seed, element, draw):
    with np.errstate(over="ignore"):
        return _unit_np(_key_np(seed, element, draw, np.uint64(0)))


def _poisson_np(lam, seed):
    lam = np.ascontiguousarray(lam, dtype=np.float64).ravel()
    counts = np.zeros(lam.size, dtype=np.int64)
    total = np.zeros(lam.size)
    active = np.arange(lam.size)
    draw = 0
    while active.size:
        u = _uniforms_np(seed, active.astype(np.uint64), np.uint64(draw))
        total[active] += np.log(u)
        done = total[active] < -lam[active]
        counts[active[~done]] += 1
        active = active[~done]
        draw += 1
    return counts


# ---------------------------------------------------------------------------
# numba path

if numba is not None:

    @numba.njit(cache=True, inline="always")
    def _mix_nb(z):
        z = (z ^ (z >> _S30)) * _M1
        z = (z ^ (z >> _S27)) * _M2
        return z ^ (z >> _S31)

    @numba.njit(cache=True, inline="always")
    def _key_nb(seed, path, step, chan):
        h = _mix_nb(seed + _GOLDEN)
        h = _mix_nb(h ^ (path * _C_PATH))
        h = _mix_nb(h ^ (step * _C_STEP))
        return _mix_nb(h ^ (chan * _C_CHAN))

    @numba.njit(cache=True, inline="always")
    def _unit_nb(h):
        return (np.float64(h >> _S11) + 0.5) * _TWO_M53

    @numba.njit(cache=True)
    def _normals_nb(seed, first_path, n_paths, n_steps, dim):
        out = np.empty((n_steps, n_paths, dim))
        for n in range(n_steps):
            step = np.uint64(n)
            for p in range(n_paths):
                path = np.uint64(p) + first_path
                for c in range(dim):
                    h = _key_nb(seed, path, step, np.uint64(c))
                    u1 = _unit_nb(h)
                    u2 = _unit_nb(_mix_nb(h ^ _C_PAIR))
                    out[n, p, c] = np.sqrt(-2.0 * np.log(u1)) * np.cos(_TWO_PI * u2)
        return out

    @numba.njit(cache=True)
    def _poisson_nb(lam, seed):
        counts = np.zeros(lam.size, dtype=np.int64)
        zero = np.uint64(0)
        for i in range(lam.size):
            total = 0.0
            k = 0
            draw = 0
            while True:
                total += np.log(_unit_nb(_key_nb(seed, np.uint64(i), np.uint64(draw), zero)))
                if total < -lam[i]:
                    break
                k += 1
                draw += 1
            counts[i] = k
        return counts


# ---------------------------------------------------------------------------
# public entry points

def counter_normals(seed, n_steps, n_paths, dim, first_path=0, backend=None):
    """Standard normals of shape ``(n_steps, n_paths, dim)`` keyed by
    (seed, path, step, channel)."""
    backend = backend or BACKEND
    s = seed_to_u64(seed)
    fp = np.uint64(int(first_path))
    if backend == "numba":
        return _normals_nb(s, fp, int(n_paths), int(n_steps), int(dim))
    return _normals_np(s, fp, int(n_paths), int(n_steps), int(dim))


def counter_uniforms(seed, n, backend=None):
    """Open-interval uniforms, element ``i`` keyed by (seed, i, 0, 0)."""
    s = seed_to_u64(seed)
    return _uniforms_np(s, np.arange(int(n), dtype=np.uint64), np.uint64(0))


def poisson_counts(lam, seed, backend=None):
    """Poisson draws by multiplicative (log-space) Knuth sampling."""
    backend = backend or BACKEND
    lam = np.asarray(lam, dtype=np.float64)
    if np.any(lam < 0) or not np.all(np.isfinite(lam)):
        raise ValueError("Poisson rates must be finite and nonnegative")
    flat = np.ascontiguousarray(lam.ravel())
    s = seed_to_u64(seed)
    if backend == "numba":
        out = _poisson_nb(flat, s)
    else:
        out = _poisson_np(flat, s)
    return out.reshape(lam.shape)
