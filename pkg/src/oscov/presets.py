"""Named hyperparameter presets for the demonstration kernels.

These are the parameter sets used by the package's reference figures and
self-checks.  Amplitudes are unit-normalized (the plots they feed are of
``C / C(0,0)``), so only the shape parameters matter.
"""

from __future__ import annotations

import math

from .errors import DomainError
from .kernel_core import Dispersion, KernelModel, LdhoParams, OuParams, Regime

__all__ = ["available_presets", "preset_model", "DEFAULT_R_MAX", "DEFAULT_TAU_MAX"]

# default half-width of the lag grid used when evaluating a preset kernel
DEFAULT_R_MAX = 6.0
DEFAULT_TAU_MAX = 6.0


def _fig1() -> KernelModel:
    params = LdhoParams.from_damped_frequency(
        c0=1.0,
        tau_c=3.0,
        omega_d=1.5 * math.pi,
        regime=Regime.UNDERDAMPED,
        epsilon=1.0,
        interaction=0.4,
        dispersion=Dispersion.QUADRATIC,
        dim=2,
    )
    return KernelModel(params=params)


def _fig2() -> KernelModel:
    params = LdhoParams.from_damped_frequency(
        c0=1.0,
        tau_c=0.8,
        omega_d=0.1 * math.pi,
        regime=Regime.OVERDAMPED,
        epsilon=8.0,
        interaction=0.4,
        dispersion=Dispersion.QUADRATIC,
        dim=2,
    )
    return KernelModel(params=params)


def _fig3() -> KernelModel:
    params = LdhoParams.from_damped_frequency(
        c0=1.0,
        tau_c=3.0,
        omega_d=1.5 * math.pi,
        regime=Regime.UNDERDAMPED,
        epsilon=3.0,
        interaction=0.4,
        dispersion=Dispersion.QUADRATIC,
        dim=2,
    )
    return KernelModel(params=params)


def _ou1() -> KernelModel:
    params = OuParams(
        sigma0_sq=1.0,
        tau_c=0.8,
        a=0.5,
        scale=0.4,
        beta=8.0,
        dispersion=Dispersion.QUADRATIC,
        dim=2,
    )
    return KernelModel(params=params)


def _ou2() -> KernelModel:
    params = OuParams(
        sigma0_sq=1.0,
        tau_c=0.8,
        a=0.5,
        scale=0.4,
        beta=8.0,
        dispersion=Dispersion.LINEAR,
        dim=2,
    )
    return KernelModel(params=params)


_PRESETS = {
    "fig1": _fig1,
    "fig2": _fig2,
    "fig3": _fig3,
    "ou1": _ou1,
    "ou2": _ou2,
}


def available_presets() -> tuple[str, ...]:
    """Names accepted by ``preset_model``, in a stable order."""
    return tuple(_PRESETS)


def preset_model(name: str) -> KernelModel:
    """Build the named preset model.

    ``fig1``/``fig3`` are underdamped oscillator kernels (sharp and soft
    spatial decay respectively), ``fig2`` is overdamped, and ``ou1``/``ou2``
    are the first-order relaxation kernels with quadratic and linear
    dispersion.  All are two-dimensional with unit amplitude and no nugget.
    """
    try:
        builder = _PRESETS[name]
    except KeyError:
        known = ", ".join(available_presets())
        raise DomainError(f"unknown preset {name!r}; choose one of: {known}") from None
    return builder()
