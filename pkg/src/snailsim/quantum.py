"""Truncated-Fock states, bosonic gates, Wigner maps and state-family fitting.

All operators live in a dim-dimensional Fock space.  The Wigner convention is
displaced parity, W(alpha) = (2/pi) Tr[D(alpha)^dag rho D(alpha) P], so the
vacuum peaks at 2/pi and the map integrates to one.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm
from scipy.optimize import minimize

__all__ = [
    "TruncationWarning",
    "WignerKernel",
    "DensityMatrix",
    "GateSpec",
    "WignerMap",
    "StateFitResult",
    "ladder_operators",
    "make_state",
    "apply_gate",
    "wigner",
    "default_grid",
    "fidelity",
    "fit_state",
    "squeezing_to_db",
    "save_wigner_csv",
    "load_wigner_csv",
    "save_state_csv",
    "load_state_csv",
]

_GATE_KINDS = ("rotation", "displacement", "squeeze", "trisqueeze", "cubic")
_TOP_LEVEL_WARN = 1e-4
_TOP_LEVEL_ERROR = 1e-2


class TruncationWarning(UserWarning):
    """The top Fock level carries non-negligible population."""


def ladder_operators(dim: int) -> dict[str, np.ndarray]:
    """Annihilation, creation and number operators in a dim-level Fock space."""
    if dim < 2:
        raise ValueError("dim must be >= 2")
    a = np.zeros((dim, dim), dtype=complex)
    for j in range(1, dim):
        a[j - 1, j] = math.sqrt(j)
    a_dagger = a.conj().T
    return {"a": a, "a_dagger": a_dagger, "n": a_dagger @ a}


@dataclass
class DensityMatrix:
    """Density operator in a truncated Fock basis."""

    dim: int
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=complex)
        if self.data.shape != (self.dim, self.dim):
            raise ValueError("data must be dim x dim")

    @classmethod
    def from_ket(cls, ket: np.ndarray) -> "DensityMatrix":
        ket = np.asarray(ket, dtype=complex)
        return cls(dim=len(ket), data=np.outer(ket, ket.conj()))

    def validate(self, check_truncation: bool = True) -> None:
        """Raise if Hermiticity, unit trace or positivity are violated."""
        d = self.data
        if np.linalg.norm(d - d.conj().T) >= 1e-10:
            raise ValueError("density matrix is not Hermitian")
        if abs(np.trace(d).real - 1.0) >= 1e-8:
            raise ValueError(f"trace deviates from one by {abs(np.trace(d).real - 1.0):.2e}")
        if np.linalg.eigvalsh(d).min() <= -1e-8:
            raise ValueError("density matrix has a negative eigenvalue")
        if check_truncation:
            self.check_truncation()

    def check_truncation(self) -> float:
        top = self.data[self.dim - 1, self.dim - 1].real
        if top > _TOP_LEVEL_ERROR:
            raise ValueError(f"top Fock level population {top:.2e} > {_TOP_LEVEL_ERROR}")
        if top > _TOP_LEVEL_WARN:
            warnings.warn(
                f"top Fock level population {top:.2e}; increase dim",
                TruncationWarning,
                stacklevel=2,
            )
        return top

    def expect(self, op: np.ndarray) -> complex:
        return complex(np.trace(op @ self.data))

    @property
    def purity(self) -> float:
        return float(np.trace(self.data @ self.data).real)


@dataclass(frozen=True)
class GateSpec:
    """One gate of the generalized-squeezing set plus the cubic gate.

    kind      -- rotation | displacement | squeeze | trisqueeze | cubic
    parameter -- theta (real), alpha, zeta, tau (complex) or gamma (real)
    """

    kind: str
    parameter: complex

    def __post_init__(self):
        if self.kind not in _GATE_KINDS:
            raise ValueError(f"unknown gate kind {self.kind!r}")
        if not np.isfinite(self.parameter):
            raise ValueError("gate parameter must be finite")
        if self.kind == "cubic" and abs(complex(self.parameter).imag) > 1e-12:
            raise ValueError("cubicity must be real")


def gate_generator(gate: GateSpec, dim: int) -> np.ndarray:
    """Anti-Hermitian generator G such that the unitary is expm(G)."""
    ops = ladder_operators(dim)
    a, ad = ops["a"], ops["a_dagger"]
    p = complex(gate.parameter)
    if gate.kind == "rotation":
        return -1j * p.real * ops["n"]
    if gate.kind == "displacement":
        return p * ad - np.conj(p) * a
    if gate.kind == "squeeze":
        return 0.5 * (p * ad @ ad - np.conj(p) * a @ a)
    if gate.kind == "trisqueeze":
        return p * ad @ ad @ ad - np.conj(p) * a @ a @ a
    # cubic: exp(i gamma ((a + adag)/sqrt(2))^3)
    x = (a + ad) / math.sqrt(2.0)
    return 1j * p.real * x @ x @ x


def gate_unitary(gate: GateSpec, dim: int) -> np.ndarray:
    return expm(gate_generator(gate, dim))


def apply_gate(state: DensityMatrix, gate: GateSpec) -> DensityMatrix:
    """Conjugate the state by the gate unitary in the truncated space."""
    u = gate_unitary(gate, state.dim)
    out = DensityMatrix(state.dim, u @ state.data @ u.conj().T)
    out.check_truncation()
    return out


def make_state(family: str, dim: int, **params) -> DensityMatrix:
    """Construct a named state by applying gate exponentials to vacuum.

    Families: vacuum | fock(n) | coherent(alpha) | thermal(n_th) |
    squeezed(zeta) | trisqueezed(tau) | cubic(zeta, gamma, alpha=0).
    The cubic family is D(alpha) C(gamma) S(zeta) |0>, displacement outermost.
    """
    if family == "vacuum":
        ket = np.zeros(dim, dtype=complex)
        ket[0] = 1.0
        return DensityMatrix.from_ket(ket)
    if family == "fock":
        ket = np.zeros(dim, dtype=complex)
        ket[int(params["n"])] = 1.0
        return DensityMatrix.from_ket(ket)
    if family == "thermal":
        n_th = float(params["n_th"])
        if n_th < 0:
            raise ValueError("n_th must be >= 0")
        if n_th == 0.0:
            return make_state("vacuum", dim)
        ratio = n_th / (1.0 + n_th)
        probs = (1.0 - ratio) * ratio ** np.arange(dim)
        probs /= probs.sum()
        state = DensityMatrix(dim, np.diag(probs).astype(complex))
        state.check_truncation()
        return state

    vac = make_state("vacuum", dim)
    if family == "coherent":
        state = apply_gate(vac, GateSpec("displacement", params["alpha"]))
    elif family == "squeezed":
        state = apply_gate(vac, GateSpec("squeeze", params["zeta"]))
    elif family == "trisqueezed":
        state = apply_gate(vac, GateSpec("trisqueeze", params["tau"]))
    elif family == "cubic":
        state = apply_gate(vac, GateSpec("squeeze", params["zeta"]))
        state = apply_gate(state, GateSpec("cubic", params["gamma"]))
        alpha = params.get("alpha", 0.0)
        if alpha != 0.0:
            state = apply_gate(state, GateSpec("displacement", alpha))
    else:
        raise ValueError(f"unknown state family {family!r}")
    state.check_truncation()
    return state


@dataclass
class WignerMap:
    """Wigner values on a rectangular phase-space grid.

    values[j, k] = W(re_axis[k] + 1j * im_axis[j]).
    """

    re_axis: np.ndarray
    im_axis: np.ndarray
    values: np.ndarray

    @property
    def cell_area(self) -> float:
        dre = self.re_axis[1] - self.re_axis[0]
        dim_ = self.im_axis[1] - self.im_axis[0]
        return float(dre * dim_)

    def integral(self) -> float:
        """Riemann sum of W over the grid (should be ~1 for contained states)."""
        return float(self.values.sum() * self.cell_area)


def default_grid(extent: float = 3.5, points: int = 81) -> tuple[np.ndarray, np.ndarray]:
    axis = np.linspace(-extent, extent, points)
    return axis, axis.copy()


def wigner(
    state: DensityMatrix,
    re_axis: np.ndarray | None = None,
    im_axis: np.ndarray | None = None,
) -> WignerMap:
    """Displaced-parity Wigner function W(alpha) = (2/pi) <D P D^dag>.

    Evaluated through the closed-form Fock-basis expansion with associated
    Laguerre polynomials (upward recurrence per anti-diagonal), which is exact
    and avoids a matrix exponential per grid point.
    """
    if re_axis is None or im_axis is None:
        re_default, im_default = default_grid()
        re_axis = re_default if re_axis is None else np.asarray(re_axis, dtype=float)
        im_axis = im_default if im_axis is None else np.asarray(im_axis, dtype=float)
    else:
        re_axis = np.asarray(re_axis, dtype=float)
        im_axis = np.asarray(im_axis, dtype=float)

    alpha = re_axis[None, :] + 1j * im_axis[:, None]
    values = _wigner_values(state.data, alpha.ravel()).reshape(alpha.shape)
    return WignerMap(re_axis=re_axis, im_axis=im_axis, values=values)


def _wigner_values(rho: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """W at arbitrary complex points, vectorized over ``alpha``.

    Expansion over diagonal offsets d = m - n of the density matrix,
    W = (2/pi) e^{-x/2} [ sum_n rho_nn (-1)^n L_n(x)
        + 2 sum_{d>=1} sum_n Re( rho_{n,n+d} (-1)^n sqrt(n!/(n+d)!) (2a)^d L_n^d(x) ) ]
    with x = 4|alpha|^2 and associated Laguerre polynomials by upward recurrence.
    Offsets whose coherences are negligible are skipped.
    """
    dim = rho.shape[0]
    x = 4.0 * np.abs(alpha) ** 2
    w = np.zeros(alpha.shape, dtype=float)
    for d in range(dim):
        if d and np.max(np.abs(np.diagonal(rho, d))) < 1e-14:
            continue
        if d == 0:
            phase_factor = None
        else:
            phase_factor = (2.0 * alpha) ** d
        lag_prev = np.ones_like(x)  # L_0^d
        lag = None
        for n in range(dim - d):
            if n == 0:
                lag_n = lag_prev
            elif n == 1:
                lag = 1.0 + d - x
                lag_n = lag
            else:
                lag, lag_prev = ((2 * n - 1 + d - x) * lag - (n - 1 + d) * lag_prev) / n, lag
                lag_n = lag
            m = n + d
            sign = -1.0 if n % 2 else 1.0
            if d == 0:
                w += (rho[n, n].real * sign) * lag_n
            else:
                root = math.exp(0.5 * (math.lgamma(n + 1) - math.lgamma(m + 1)))
                w += 2.0 * sign * root * (rho[n, m] * phase_factor * lag_n).real
    return w * np.exp(-0.5 * x) * (2.0 / math.pi)


def fidelity(rho: DensityMatrix, sigma: DensityMatrix) -> float:
    """Uhlmann fidelity (Tr sqrt(sqrt(rho) sigma sqrt(rho)))^2 in [0, 1].

    For pure sigma this reduces to <psi|rho|psi>.
    """
    if rho.dim != sigma.dim:
        raise ValueError("states must share the same truncation")
    evals, evecs = np.linalg.eigh(rho.data)
    evals = np.clip(evals, 0.0, None)
    sqrt_rho = (evecs * np.sqrt(evals)) @ evecs.conj().T
    inner = sqrt_rho @ sigma.data @ sqrt_rho
    lam = np.linalg.eigvalsh(inner)
    lam = np.clip(lam, 0.0, None)
    return float(min(1.0, (np.sqrt(lam).sum()) ** 2))


def squeezing_to_db(zeta_mag: float) -> float:
    """Quadrature noise reduction in dB for squeezing magnitude |zeta|."""
    if zeta_mag < 0:
        raise ValueError("zeta_mag must be >= 0")
    return 10.0 * math.log10(math.exp(2.0 * zeta_mag))


@dataclass
class StateFitResult:
    """Best pure-state match of a Wigner map within one gate family."""

    family: str
    parameters: dict[str, complex]
    overlap: float
    converged: bool = True
    message: str = ""


def coherent_ket(alpha: complex, dim: int) -> np.ndarray:
    ns = np.arange(dim)
    log_mag = ns * math.log(max(abs(alpha), 1e-300)) - 0.5 * np.array(
        [math.lgamma(n + 1) for n in range(dim)]
    )
    ket = np.exp(log_mag - 0.5 * abs(alpha) ** 2) * np.exp(1j * ns * np.angle(alpha))
    if alpha == 0:
        ket = np.zeros(dim, dtype=complex)
        ket[0] = 1.0
    return ket


def _expm_action(gen: np.ndarray, vec: np.ndarray) -> np.ndarray:
    """expm(gen) @ vec by scaled Taylor summation (anti-Hermitian generators).

    Substep count keeps the per-step norm small enough for a short Taylor
    series; much cheaper than a full matrix exponential for a single column.
    """
    norm = np.linalg.norm(gen, 1)
    steps = max(1, int(math.ceil(norm / 4.0)))
    g = gen / steps
    out = vec.astype(complex)
    for _ in range(steps):
        term = out
        acc = out.copy()
        for k in range(1, 40):
            term = (g @ term) / k
            acc += term
            if np.linalg.norm(term) < 1e-15 * np.linalg.norm(acc):
                break
        out = acc
    return out


def family_ket(family: str, theta: np.ndarray, dim: int) -> np.ndarray:
    """Pure-state member of a fit family, built by gate actions on vacuum.

    Applies the same gate exponentials as ``make_state`` but acting on a
    single column, which keeps fitting loops fast.
    """
    if family == "coherent":
        return coherent_ket(theta[0] + 1j * theta[1], dim)
    vac = np.zeros(dim, dtype=complex)
    vac[0] = 1.0
    if family == "squeezed":
        gen = gate_generator(GateSpec("squeeze", theta[0] + 1j * theta[1]), dim)
        return _expm_action(gen, vac)
    if family == "trisqueezed":
        gen = gate_generator(GateSpec("trisqueeze", theta[0] + 1j * theta[1]), dim)
        return _expm_action(gen, vac)
    if family == "cubic":
        ket = _expm_action(gate_generator(GateSpec("squeeze", theta[0] + 1j * theta[1]), dim), vac)
        ket = _expm_action(gate_generator(GateSpec("cubic", theta[2]), dim), ket)
        alpha = theta[3] + 1j * theta[4]
        if alpha != 0:
            ket = _expm_action(gate_generator(GateSpec("displacement", alpha), dim), ket)
        return ket
    raise ValueError(f"unknown fit family {family!r}")


class WignerKernel:
    """Precomputed Laguerre table turning Wigner evaluation into one matvec.

    Rows are indexed by the density-matrix band (d, n); entries bundle
    (-1)^n sqrt(n!/(n+d)!) L_n^d(4|a|^2) (2a)^d e^{-2|a|^2} (2/pi) with the
    factor 2 for d > 0 (the conjugate band is folded in by taking the real
    part).  ``values`` then costs a single complex GEMV per state.
    """

    def __init__(self, re_axis: np.ndarray, im_axis: np.ndarray, dim: int):
        self.re_axis = np.asarray(re_axis, dtype=float)
        self.im_axis = np.asarray(im_axis, dtype=float)
        self.dim = dim
        alpha = (self.re_axis[None, :] + 1j * self.im_axis[:, None]).ravel()
        self.shape = (len(self.im_axis), len(self.re_axis))
        x = 4.0 * np.abs(alpha) ** 2
        envelope = np.exp(-0.5 * x) * (2.0 / math.pi)
        rows = []
        self._index = []
        for d in range(dim):
            factor = envelope if d == 0 else 2.0 * envelope * (2.0 * alpha) ** d
            lag_prev = np.ones_like(x)
            lag = None
            for n in range(dim - d):
                if n == 0:
                    lag_n = lag_prev
                elif n == 1:
                    lag = 1.0 + d - x
                    lag_n = lag
                else:
                    lag, lag_prev = ((2 * n - 1 + d - x) * lag - (n - 1 + d) * lag_prev) / n, lag
                    lag_n = lag
                sign = -1.0 if n % 2 else 1.0
                root = math.exp(0.5 * (math.lgamma(n + 1) - math.lgamma(n + d + 1)))
                rows.append(sign * root * factor * lag_n)
                self._index.append((n, n + d))
        self._table = np.array(rows)
        self._n_idx = np.array([i for i, _ in self._index])
        self._m_idx = np.array([m for _, m in self._index])

    def values(self, state) -> np.ndarray:
        """Wigner map of a ket (1D) or density matrix (2D) on the cached grid."""
        arr = state.data if isinstance(state, DensityMatrix) else np.asarray(state)
        if arr.ndim == 1:
            coeff = arr[self._n_idx] * arr.conj()[self._m_idx]
        else:
            coeff = arr[self._n_idx, self._m_idx]
        return np.real(coeff @ self._table).reshape(self.shape)


def _family_state(family: str, theta: np.ndarray, dim: int) -> DensityMatrix:
    ket = family_ket(family, theta, dim)
    return DensityMatrix(dim, np.outer(ket, ket.conj()))


def _family_theta(family: str, guess: dict[str, complex]) -> np.ndarray:
    if family == "coherent":
        al = complex(guess.get("alpha", 0.0))
        return np.array([al.real, al.imag])
    if family == "squeezed":
        z = complex(guess.get("zeta", 0.0))
        return np.array([z.real, z.imag])
    if family == "trisqueezed":
        t = complex(guess.get("tau", 0.0))
        return np.array([t.real, t.imag])
    if family == "cubic":
        z = complex(guess.get("zeta", 0.0))
        al = complex(guess.get("alpha", 0.0))
        return np.array([z.real, z.imag, float(np.real(guess.get("gamma", 0.0))), al.real, al.imag])
    raise ValueError(f"unknown fit family {family!r}")


def _family_params(family: str, theta: np.ndarray) -> dict[str, complex]:
    if family == "coherent":
        return {"alpha": theta[0] + 1j * theta[1]}
    if family == "squeezed":
        return {"zeta": theta[0] + 1j * theta[1]}
    if family == "trisqueezed":
        return {"tau": theta[0] + 1j * theta[1]}
    return {
        "zeta": theta[0] + 1j * theta[1],
        "gamma": theta[2],
        "alpha": theta[3] + 1j * theta[4],
    }


def wigner_overlap(w1: WignerMap, w2: WignerMap) -> float:
    """Normalized pixel overlap sum(W1 W2)/sqrt(sum W1^2 sum W2^2)."""
    num = float(np.sum(w1.values * w2.values))
    den = math.sqrt(float(np.sum(w1.values**2)) * float(np.sum(w2.values**2)))
    return num / den if den > 0 else 0.0


def fit_state(
    wmap: WignerMap,
    family: str,
    guess: dict[str, complex] | None = None,
    dim: int = 60,
    restarts: int = 3,
    maxiter: int = 400,
) -> StateFitResult:
    """Maximize the normalized Wigner overlap over one pure-state family.

    Derivative-free simplex search with a few perturbed restarts; returns the
    best parameters and the achieved overlap.  Non-convergence degrades to the
    best iterate with a warning message rather than raising.
    """
    guess = guess or {}
    theta0 = _family_theta(family, guess)
    kernel = WignerKernel(wmap.re_axis, wmap.im_axis, dim)
    w_meas = wmap.values
    meas_norm = math.sqrt(float(np.sum(w_meas**2)))

    def cost(theta: np.ndarray) -> float:
        try:
            ket = family_ket(family, theta, dim)
        except ValueError:
            return 1.0
        wm = kernel.values(ket)
        den = meas_norm * math.sqrt(float(np.sum(wm**2)))
        return -(float(np.sum(w_meas * wm)) / den) if den > 0 else 1.0

    rng = np.random.default_rng(17)
    best = None
    converged = False
    for k in range(max(1, restarts)):
        start = theta0 if k == 0 else theta0 + rng.normal(scale=0.05, size=theta0.shape)
        res = minimize(
            cost,
            start,
            method="Nelder-Mead",
            options={"maxiter": maxiter, "xatol": 1e-5, "fatol": 1e-9},
        )
        if best is None or res.fun < best.fun:
            best = res
        converged = converged or res.success
        if converged and k >= 1:
            break

    message = "" if converged else "simplex search hit the iteration cap"
    if not converged:
        warnings.warn("state fit did not converge; returning best iterate", stacklevel=2)
    return StateFitResult(
        family=family,
        parameters=_family_params(family, best.x),
        overlap=-float(best.fun),
        converged=converged,
        message=message,
    )


def save_wigner_csv(path, wmap: WignerMap) -> None:
    """CSV layout: first row Re-axis coordinates, first column Im-axis, body W."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("," + ",".join(f"{x:.10g}" for x in wmap.re_axis) + "\n")
        for j, y in enumerate(wmap.im_axis):
            row = ",".join(f"{v:.10g}" for v in wmap.values[j])
            fh.write(f"{y:.10g},{row}\n")


def load_wigner_csv(path) -> WignerMap:
    raw = np.genfromtxt(path, delimiter=",")
    return WignerMap(re_axis=raw[0, 1:], im_axis=raw[1:, 0], values=raw[1:, 1:])


def save_state_csv(path, state: DensityMatrix) -> None:
    """Real block on top of imaginary block, dim columns each."""
    stacked = np.vstack([state.data.real, state.data.imag])
    np.savetxt(path, stacked, delimiter=",", fmt="%.12g")


def load_state_csv(path) -> DensityMatrix:
    stacked = np.loadtxt(path, delimiter=",")
    dim = stacked.shape[1]
    return DensityMatrix(dim, stacked[:dim] + 1j * stacked[dim:])
