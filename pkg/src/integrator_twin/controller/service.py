"""Command execution against the controller state and a bank of simulated channels."""

from __future__ import annotations

import enum
import logging
import threading
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..integrator import IntegratorParams, IntegratorState, Mode, get_preset, run_channel
from ..signals import PulseSpec, SignalTrace, add_noise, gen_pulse_signal, gen_standard_signal, lobe_samples
from .protocol import (
    N_CHANNELS,
    Command,
    ErrorCode,
    IntHold,
    Initialization,
    NetConfig,
    ProtocolError,
    PulseSignal,
    Quit,
    ReadAll,
    Response,
    SetAllGains,
    SetModuleGain,
    SetUniformGain,
    StandardSignal,
    parse_command,
)
from .state import ControllerMode, ControllerState, NetSettings, ParameterStore

log = logging.getLogger(__name__)

STANDARD_RATE = 1e6  # Hz; trapezoid edge error ~1e-4 relative on the plateau
PULSE_RATE = 10e3  # Hz
PULSE_WIDTH = 1.0  # s


@dataclass
class CalibrationResult:
    """Per-channel integrator outputs of one standard/pulse signal run."""

    plateau: list[float]
    final: list[float]

    def payload(self) -> str:
        def fmt(values):
            # + 0.0 folds -0.0 into 0.0
            return ";".join(f"{v + 0.0:.6f}" for v in values)

        return f"plateau={fmt(self.plateau)} final={fmt(self.final)}"


class ChannelBank:
    """Eight simulated integrator channels driven in lockstep.

    ``noise_rms`` adds seeded white noise to the calibration stimulus; each run
    draws a fresh seed from a generator seeded once with ``seed``.
    """

    def __init__(
        self,
        params: IntegratorParams | Sequence[IntegratorParams] | str = "ideal",
        noise_rms: float = 0.0,
        seed: int = 0,
    ):
        if isinstance(params, str):
            params = get_preset(params)
        if isinstance(params, IntegratorParams):
            params = [params] * N_CHANNELS
        if len(params) != N_CHANNELS:
            raise ValueError(f"need {N_CHANNELS} channel parameter sets, got {len(params)}")
        self.params = list(params)
        self.states = [IntegratorState() for _ in range(N_CHANNELS)]
        self.noise_rms = noise_rms
        self._seeds = np.random.SeedSequence(seed)

    def outputs(self) -> list[float]:
        return [s.accumulated_output for s in self.states]

    def reset(self) -> None:
        self.states = [IntegratorState(0.0, Mode.INTEGRATE) for _ in self.states]

    def hold(self) -> None:
        self.states = [IntegratorState(s.accumulated_output, Mode.HOLD) for s in self.states]

    def release(self) -> None:
        self.states = [IntegratorState(s.accumulated_output, Mode.INTEGRATE) for s in self.states]

    def advance(self, duration: float, sample_rate: float = 100.0, v_cm: float = 0.0) -> None:
        """Let the channels run with zero differential input for ``duration`` seconds."""
        n = int(round(duration * sample_rate)) + 1
        zero = SignalTrace.zeros(n, sample_rate)
        cm = SignalTrace.constant(v_cm, n, sample_rate)
        self.states = [run_channel(zero, cm, p, (), s)[1] for p, s in zip(self.params, self.states)]

    def calibrate(self, stimulus: SignalTrace, plateau_index: int) -> CalibrationResult:
        """Reset, integrate ``stimulus`` on every channel, report plateau and final values."""
        if self.noise_rms > 0:
            (child,) = self._seeds.spawn(1)
            stimulus = add_noise(stimulus, self.noise_rms, int(child.generate_state(1)[0]))
        cm = SignalTrace.zeros(len(stimulus), stimulus.sample_rate)
        plateau, final, states = [], [], []
        for p in self.params:
            out, st = run_channel(stimulus, cm, p, (), IntegratorState())
            plateau.append(float(out.samples[plateau_index]))
            final.append(float(out.samples[-1]))
            states.append(st)
        self.states = states
        return CalibrationResult(plateau, final)


_MUTATING = (SetAllGains, SetModuleGain, SetUniformGain, NetConfig, Initialization, IntHold)
_GAIN_COMMANDS = (SetAllGains, SetModuleGain, SetUniformGain)
_TEST_MODES = (ControllerMode.STANDARD_SIGNAL_TEST, ControllerMode.PULSE_SIGNAL_TEST)


def execute(
    cmd: Command,
    state: ControllerState,
    bank: ChannelBank,
    pulse_width: float = PULSE_WIDTH,
) -> tuple[Response, ControllerState]:
    """Apply one parsed command.

    The state is immutable and a new one is returned; the channel bank is
    mutated in place. Signal tests auto-return to normal mode. Persisting the
    new state is the caller's job.
    """
    mode = state.mode
    if mode in _TEST_MODES and isinstance(cmd, _GAIN_COMMANDS + (StandardSignal, PulseSignal, IntHold)):
        return Response.failure(ErrorCode.BUSY), state

    match cmd:
        case SetAllGains(gains):
            return Response.success(), state.evolve(gains=gains)
        case SetModuleGain(module, gain):
            gains = list(state.gains)
            gains[module - 1] = gain
            return Response.success(), state.evolve(gains=tuple(gains))
        case SetUniformGain(gain):
            return Response.success(), state.evolve(gains=(gain,) * N_CHANNELS)
        case ReadAll():
            return Response.success(";".join(str(g) for g in state.gains)), state
        case Initialization():
            bank.reset()
            return Response.success(), state.evolve(mode=ControllerMode.NORMAL)
        case IntHold():
            bank.hold()
            return Response.success(), state.evolve(mode=ControllerMode.HOLD)
        case StandardSignal() | PulseSignal():
            if mode is ControllerMode.HOLD:
                # a calibration run would overwrite held accumulators
                return Response.failure(ErrorCode.BUSY), state
            if isinstance(cmd, StandardSignal):
                stimulus = gen_standard_signal(STANDARD_RATE)
                plateau_at = lobe_samples(0.01, STANDARD_RATE)
            else:
                spec = PulseSpec(2.5, pulse_width, (1,))
                stimulus = gen_pulse_signal(spec, PULSE_RATE)
                plateau_at = lobe_samples(pulse_width, PULSE_RATE)
            result = bank.calibrate(stimulus, plateau_at)
            return Response.success(result.payload()), state.evolve(mode=ControllerMode.NORMAL)
        case NetConfig(ip, mask, gateway):
            return Response.success(), state.evolve(net=NetSettings(ip, mask, gateway))
        case Quit():
            return Response.success(), state
    raise TypeError(f"not a command: {cmd!r}")


class ControlSource(enum.Enum):
    HARDWARE_TRIGGER = "hardware"
    MANUAL_SWITCH = "manual"


class Controller:
    """Stateful controller: parses lines, executes, persists after every mutation.

    All entry points serialize on one lock, so the TCP session loop and the
    hardware/manual control paths never interleave.
    """

    def __init__(
        self,
        store: ParameterStore,
        bank: ChannelBank | None = None,
        pulse_width: float = PULSE_WIDTH,
        default_state: ControllerState | None = None,
    ):
        self.store = store
        self.bank = bank or ChannelBank()
        self.pulse_width = pulse_width
        self.default_state = default_state
        self.state = store.load(default_state)
        if self.state.mode is ControllerMode.HOLD:
            self.bank.hold()
        self.lock = threading.RLock()

    def handle_line(self, line: str | bytes) -> tuple[Response, bool]:
        """One request line in, one response out; the flag is set for QUIT."""
        try:
            cmd = parse_command(line)
        except ProtocolError as exc:
            log.debug("rejected %r: %s", line, exc)
            return Response.failure(exc.code), False
        return self.handle(cmd), isinstance(cmd, Quit)

    def handle(self, cmd: Command) -> Response:
        with self.lock:
            response, new_state = execute(cmd, self.state, self.bank, self.pulse_width)
            if response.ok and isinstance(cmd, _MUTATING) and new_state != self.state:
                self.store.save(new_state)
            self.state = new_state
            return response

    def power_cycle(self) -> None:
        """Reload persisted parameters; accumulators come back zeroed."""
        with self.lock:
            self.bank.reset()
            self.state = self.store.load(self.default_state)
            if self.state.mode is ControllerMode.HOLD:
                self.bank.hold()

    def _inject(self, source: ControlSource, event: Mode) -> None:
        with self.lock:
            log.info("%s control: %s", source.value, event.value)
            if event is Mode.RESET:
                self.bank.reset()
                new_mode = ControllerMode.NORMAL
            elif event is Mode.HOLD:
                self.bank.hold()
                new_mode = ControllerMode.HOLD
            else:
                self.bank.release()
                new_mode = ControllerMode.NORMAL
            if new_mode != self.state.mode:
                self.state = self.state.evolve(mode=new_mode)
                self.store.save(self.state)

    def hardware_trigger(self, event: Mode) -> None:
        """External hardware-level control signal (normal experiment operation)."""
        self._inject(ControlSource.HARDWARE_TRIGGER, event)

    def manual_switch(self, event: Mode) -> None:
        """Local manual switch on the front panel (debugging)."""
        self._inject(ControlSource.MANUAL_SWITCH, event)
