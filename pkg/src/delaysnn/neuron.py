"""Leaky integrate-and-fire dynamics with one-spike-per-stimulus coding.

The membrane decays exponentially between steps and arriving spikes add
their synaptic weight as an instantaneous charge (delta-current synapse).
Each neuron fires at most once per stimulus; the adaptive threshold moves
up after a spike and slowly down otherwise, and survives resets so that
adaptation accumulates across stimuli.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .config import SimConfig


@dataclass(frozen=True)
class NeuronState:
    """Value-type state of one neuron.

    ``fired_at`` is set at most once between resets; ``inhibited`` marks a
    neuron silenced by a same-location winner for the rest of the stimulus.
    """

    potential: float = 0.0
    threshold: float = 4.15
    fired_at: float | None = None
    inhibited: bool = False


def integrate_step(
    state: NeuronState, incoming_charge: float, dt: float, tau_m: float, noise: float
) -> NeuronState:
    """Advance the membrane by one step of length ``dt``.

    The old potential leaks by exp(-dt/tau_m); charge arriving within the
    step and the noise sample are added undecayed. No threshold check here.
    Callers only step neurons that have neither fired nor been inhibited.
    """
    if dt < 0:
        raise ValueError(f"dt must be >= 0, got {dt}")
    decayed = state.potential * math.exp(-dt / tau_m)
    return replace(state, potential=decayed + incoming_charge + noise)


def check_fire(state: NeuronState, now: float) -> tuple[NeuronState, bool]:
    """Fire iff potential >= threshold and the neuron is still eligible.

    The boundary counts as a fire (>=, fixed for determinism). A neuron
    that already fired this stimulus, or is inhibited, never fires.
    """
    if state.fired_at is None and not state.inhibited and state.potential >= state.threshold:
        return replace(state, fired_at=now), True
    return state, False


def adapt_threshold(
    state: NeuronState, fired_this_stimulus: bool, cfg: SimConfig
) -> NeuronState:
    """Linear threshold adaptation, applied once per neuron at stimulus end."""
    if fired_this_stimulus:
        new_threshold = state.threshold + cfg.threshold_adapt_up
    else:
        new_threshold = max(cfg.threshold_min, state.threshold - cfg.threshold_adapt_down)
    return replace(state, threshold=new_threshold)


def reset(state: NeuronState) -> NeuronState:
    """Clear per-stimulus state; the adapted threshold persists."""
    return replace(state, potential=0.0, fired_at=None, inhibited=False)
