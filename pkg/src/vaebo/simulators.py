"""Objective providers: the toy reactor, a bi-objective variant, and external processes.

A simulator is any callable taking a ``{variable name: value}`` mapping and
returning a tuple of objective values (minimization). It raises
:class:`SimulatorError` when an evaluation fails.

External simulators speak a one-line JSON protocol over stdin/stdout, one
child process per evaluation::

    request  {"id": 7, "variables": {"pathway": 1, "temperature": 350.0, "time": 300.0}}
    response {"id": 7, "status": "ok", "objectives": [-0.41]}
    failure  {"id": 7, "status": "error", "reason": "flowsheet did not converge"}
"""

from __future__ import annotations

import json
import math
import os
import shlex
import signal
import subprocess
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

GAS_CONSTANT = 8.314  # J/(mol K)
PROTOCOL_VERSION = 1


@dataclass(frozen=True)
class ReactorParams:
    """Arrhenius constants for both pathways.

    Pathway 1 is A -k1-> B -k2-> C, pathway 2 is A -k3-> C -k4-> D.
    The energy proxy is ``energy_scale * (T - t_ref_temperature) * t``.
    """

    A: tuple = (1e4, 1e5, 5e6, 1e8)  # 1/s
    E: tuple = (5.0e4, 6.0e4, 5.5e4, 7.0e4)  # J/mol
    R: float = GAS_CONSTANT
    c_a0: float = 1.0  # mol/L
    t_ref_temperature: float = 300.0  # K
    energy_scale: float = 1.0 / 60000.0  # 1/(K s)

    def __post_init__(self):
        if len(self.A) != 4 or len(self.E) != 4:
            raise ValueError("need four pre-exponential factors and four activation energies")
        if min(*self.A, *self.E, self.R, self.c_a0) <= 0:
            raise ValueError("kinetic constants must be positive")


def rate_constant(A: float, E: float, T: float, R: float = GAS_CONSTANT) -> float:
    if not T > 0:
        raise ValueError(f"temperature must be positive, got {T}")
    return A * math.exp(-E / (R * T))


def _phi(delta: float, t: float, kmax: float) -> float:
    """(1 - exp(-delta t)) / delta for delta >= 0, with the series limit for tiny delta."""
    if delta < 1e-9 * kmax:
        x = delta * t
        return t * (1.0 - x / 2.0 + x * x / 6.0)
    return -math.expm1(-delta * t) / delta


def _gap(a: float, b: float, t: float) -> float:
    """(exp(-a t) - exp(-b t)) / (b - a), evaluated without overflow or cancellation."""
    lo, hi = min(a, b), max(a, b)
    return math.exp(-lo * t) * _phi(hi - lo, t, hi)


def yield_c(params: ReactorParams, pathway: int, T: float, t: float) -> float:
    """Concentration of C after time ``t`` (s) at temperature ``T`` (K)."""
    if t < 0:
        raise ValueError(f"time must be nonnegative, got {t}")
    pathway = int(pathway)
    if pathway == 1:
        k1 = rate_constant(params.A[0], params.E[0], T, params.R)
        k2 = rate_constant(params.A[1], params.E[1], T, params.R)
        c = -math.expm1(-k1 * t) - k1 * _gap(k1, k2, t)
    elif pathway == 2:
        k3 = rate_constant(params.A[2], params.E[2], T, params.R)
        k4 = rate_constant(params.A[3], params.E[3], T, params.R)
        c = k3 * _gap(k3, k4, t)
    else:
        raise ValueError(f"pathway must be 1 or 2, got {pathway}")
    return params.c_a0 * min(max(c, 0.0), 1.0)


def energy_proxy(params: ReactorParams, T: float, t: float) -> float:
    return params.energy_scale * (T - params.t_ref_temperature) * t


def reactor_bi_objective(params: ReactorParams, pathway: int, T: float, t: float) -> tuple[float, float]:
    """(-yield of C, energy proxy); both minimized."""
    return (-yield_c(params, pathway, T, t), energy_proxy(params, T, t))


class SimulatorError(RuntimeError):
    """An evaluation did not produce objective values."""


class SimulatorFailure(SimulatorError):
    """The simulator answered with a failure record."""


class LaunchError(SimulatorError):
    pass


class SimulatorTimeout(SimulatorError):
    pass


class MalformedResponse(SimulatorError):
    pass


class ChildExitError(SimulatorError):
    pass


@dataclass(frozen=True)
class ReactorSimulator:
    """In-process toy reactor; ``bi_objective`` adds the energy proxy."""

    params: ReactorParams = field(default_factory=ReactorParams)
    bi_objective: bool = False

    @property
    def arity(self) -> int:
        return 2 if self.bi_objective else 1

    def __call__(self, variables: Mapping[str, Any]) -> tuple:
        p, T, t = variables["pathway"], float(variables["temperature"]), float(variables["time"])
        if self.bi_objective:
            return reactor_bi_objective(self.params, p, T, t)
        return (-yield_c(self.params, p, T, t),)


@dataclass(frozen=True)
class SimulatorRequest:
    variables: dict
    id: int = 0

    def to_line(self) -> str:
        return json.dumps({"id": self.id, "variables": self.variables}, sort_keys=True) + "\n"


@dataclass(frozen=True)
class SimulatorResponse:
    id: int
    ok: bool
    objectives: tuple = ()
    reason: str = ""

    @classmethod
    def from_line(cls, line: str) -> "SimulatorResponse":
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedResponse(f"response is not JSON: {line[:200]!r}") from exc
        if not isinstance(doc, dict) or doc.get("status") not in ("ok", "error"):
            raise MalformedResponse(f"response lacks a valid status: {line[:200]!r}")
        rid = doc.get("id", 0)
        if doc["status"] == "error":
            return cls(rid, False, (), str(doc.get("reason", "")))
        objs = doc.get("objectives")
        if not isinstance(objs, list) or not objs:
            raise MalformedResponse("ok response without an objectives list")
        try:
            vals = tuple(float(v) for v in objs)
        except (TypeError, ValueError) as exc:
            raise MalformedResponse(f"non-numeric objectives {objs!r}") from exc
        if not all(math.isfinite(v) for v in vals):
            raise MalformedResponse(f"non-finite objectives {objs!r}")
        return cls(rid, True, vals)

    def to_line(self) -> str:
        if self.ok:
            doc = {"id": self.id, "status": "ok", "objectives": list(self.objectives)}
        else:
            doc = {"id": self.id, "status": "error", "reason": self.reason}
        return json.dumps(doc) + "\n"


def _kill_group(proc: subprocess.Popen) -> None:
    try:
        os.killpg(proc.pid, signal.SIGKILL)
    except (ProcessLookupError, PermissionError):
        proc.kill()


def external_evaluate(command, request: SimulatorRequest, timeout: float = 60.0) -> SimulatorResponse:
    """Run one evaluation in a fresh child process."""
    argv = shlex.split(command) if isinstance(command, str) else list(command)
    try:
        proc = subprocess.Popen(argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                                stderr=subprocess.PIPE, text=True, start_new_session=True)
    except OSError as exc:
        raise LaunchError(f"cannot launch {argv!r}: {exc}") from exc
    try:
        out, err = proc.communicate(request.to_line(), timeout=timeout)
    except subprocess.TimeoutExpired:
        _kill_group(proc)
        proc.communicate()
        raise SimulatorTimeout(f"simulator exceeded {timeout} s and was killed") from None
    except BaseException:
        _kill_group(proc)
        proc.communicate()
        raise
    if proc.returncode != 0:
        tail = (err or "").strip().splitlines()[-1:] or [""]
        raise ChildExitError(f"simulator exited with status {proc.returncode}: {tail[0]}")
    lines = [ln for ln in out.splitlines() if ln.strip()]
    if not lines:
        raise MalformedResponse("simulator wrote no response line")
    resp = SimulatorResponse.from_line(lines[0])
    if resp.id != request.id:
        raise MalformedResponse(f"response id {resp.id!r} does not match request id {request.id}")
    return resp


class ExternalSimulator:
    """Callable wrapper around :func:`external_evaluate`."""

    def __init__(self, command, arity: int, timeout: float = 60.0):
        self.command = command
        self.arity = arity
        self.timeout = timeout
        self._next_id = 0

    def __call__(self, variables: Mapping[str, Any]) -> tuple:
        self._next_id += 1
        resp = external_evaluate(self.command, SimulatorRequest(dict(variables), self._next_id), self.timeout)
        if not resp.ok:
            raise SimulatorFailure(resp.reason or "simulator reported failure")
        if len(resp.objectives) != self.arity:
            raise MalformedResponse(f"expected {self.arity} objectives, got {len(resp.objectives)}")
        return resp.objectives


# Relative selectivity and heat-load factors for the four extraction solvents.
_SOLVENT_FACTORS = {
    "oleyl alcohol": (0.55, 1.6),
    "1-octanol": (0.75, 1.1),
    "1-decanol": (0.85, 0.9),
    "n-butyl acetate": (0.95, 0.8),
}


def caprylic_mock(variables: Mapping[str, Any]) -> tuple[float, float]:
    """Cheap stand-in for the extraction flowsheet: (-purity fraction, reboiler duty in kW).

    Qualitative only: purity grows with solvent flow, reflux and stage count;
    duty grows with reflux and solvent flow.
    """
    sel, heat = _SOLVENT_FACTORS[str(variables["solvent"])]
    R = float(variables["reflux_ratio"])
    F = float(variables["solvent_flowrate"])
    nf, nt = int(variables["feed_stage"]), int(variables["total_stages"])
    feed_penalty = 0.15 * ((nf / max(nt, 1)) - 0.5) ** 2 if nf <= nt else 0.5
    purity = sel * (1.0 - math.exp(-0.6 * F)) * (1.0 - math.exp(-0.08 * nt * (0.3 + R))) - feed_penalty
    duty = heat * (8.0 + 12.0 * (1.0 + R) * F * 0.5)
    return (-max(purity, 0.0), duty)


MOCK_MODELS: dict[str, Any] = {
    "reactor": ReactorSimulator(),
    "reactor-bi": ReactorSimulator(bi_objective=True),
    "caprylic": caprylic_mock,
}
