import math
import os
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from oracles import dominated_oracle, rk4_yield
from vaebo import simulators as sim

P = sim.ReactorParams()
MOCK = [sys.executable, "-m", "vaebo.mock_simulator"]


def _ks(params, pathway, T):
    j = 2 * (pathway - 1)
    return (sim.rate_constant(params.A[j], params.E[j], T, params.R),
            sim.rate_constant(params.A[j + 1], params.E[j + 1], T, params.R))


# -- kinetics ------------------------------------------------------------------

def test_rate_constant_examples():
    for T in (1.0, 300.0, 1e6):
        assert sim.rate_constant(3.7, 0.0, T) == 3.7
    ks = [sim.rate_constant(1e6, 5e4, T) for T in (300, 1e3, 1e4, 1e6, 1e9)]
    assert all(a < b for a, b in zip(ks, ks[1:])) and ks[-1] <= 1e6
    assert sim.rate_constant(1e6, 5e4, 350) == pytest.approx(1e6 * math.exp(-5e4 / (8.314 * 350)), rel=1e-12)
    for T in (0.0, -5.0):
        with pytest.raises(ValueError):
            sim.rate_constant(1.0, 1.0, T)


def test_yield_at_time_zero():
    for p in (1, 2):
        for T in (300.0, 350.0, 400.0):
            assert sim.yield_c(P, p, T, 0.0) == 0.0


def test_pathway1_tends_to_feed():
    assert sim.yield_c(P, 1, 400.0, 1e7) == pytest.approx(P.c_a0, abs=1e-9)


def test_pathway2_equal_rates_limit():
    params = sim.ReactorParams(A=(1e4, 1e5, 2e5, 2e5), E=(5e4, 6e4, 4e4, 4e4))
    k = sim.rate_constant(2e5, 4e4, 350.0)
    ts = np.linspace(0, 5 / k, 400)
    ys = [sim.yield_c(params, 2, 350.0, t) for t in ts]
    for t, y in zip(ts, ys):
        assert y == pytest.approx(k * t * math.exp(-k * t), rel=1e-12, abs=1e-15)
    assert sim.yield_c(params, 2, 350.0, 1 / k) >= max(ys) - 1e-15


@pytest.mark.parametrize("pathway", [1, 2])
def test_continuity_at_degeneracy(pathway):
    T, base = 350.0, 3e5
    params = sim.ReactorParams(A=(base, base * (1 + 1e-9), base, base * (1 + 1e-9)), E=(4.5e4,) * 4)
    k = sim.rate_constant(base, 4.5e4, T)
    for t in np.linspace(1.0, 600.0, 25):
        limit = 1 - math.exp(-k * t) * (1 + k * t) if pathway == 1 else k * t * math.exp(-k * t)
        assert abs(sim.yield_c(params, pathway, T, t) - limit) <= 1e-6 * abs(limit)


def test_closed_form_matches_ode_on_grid():
    worst = 0.0
    for pathway in (1, 2):
        for T in np.linspace(300.0, 400.0, 10):
            ka, kb = _ks(P, pathway, T)
            for t in np.linspace(0.0, 600.0, 10):
                ref = rk4_yield(ka, kb, pathway, t)
                got = sim.yield_c(P, pathway, T, t)
                if ref == 0.0:
                    assert got == 0.0
                else:
                    worst = max(worst, abs(got - ref) / abs(ref))
    assert worst < 1e-6


def test_yield_bounds_on_random_points():
    rng = np.random.default_rng(0)
    for _ in range(2000):
        p = int(rng.integers(1, 3))
        c = sim.yield_c(P, p, rng.uniform(250, 600), rng.uniform(0, 1e5))
        assert 0.0 <= c <= P.c_a0


def test_yield_rejects_bad_input():
    with pytest.raises(ValueError):
        sim.yield_c(P, 1, 350.0, -1.0)
    with pytest.raises(ValueError):
        sim.yield_c(P, 3, 350.0, 1.0)


def test_landscape_shape(reactor_space, reactor_grid):
    idx, f, _ = reactor_grid
    n_temp = len(reactor_space.variables[1].levels)
    # pathway 2 peaks at an interior temperature and beats pathway 1 overall
    p2 = idx[:, 0] == 1
    best2 = idx[p2][np.argmin(f[p2])]
    assert 0 < best2[1] < n_temp - 1
    assert f[p2].min() < f[~p2].min() < -0.3
    # pathway 1 ends in C, so its yield is monotone in T and t
    grid1 = -f[~p2].reshape(n_temp, -1)
    assert np.all(np.diff(grid1, axis=0) >= 0) and np.all(np.diff(grid1, axis=1) >= 0)


def test_params_validation():
    with pytest.raises(ValueError):
        sim.ReactorParams(A=(1.0, 2.0, 3.0))
    with pytest.raises(ValueError):
        sim.ReactorParams(A=(1.0, 2.0, 3.0, -4.0))


# -- bi-objective ----------------------------------------------------------------

def test_bi_objective_basics():
    assert sim.reactor_bi_objective(P, 1, 350.0, 0.0) == (0.0, 0.0)
    for t in (25.0, 300.0, 600.0):
        e = [sim.reactor_bi_objective(P, 2, T, t)[1] for T in np.linspace(300, 400, 25)]
        assert all(a < b for a, b in zip(e, e[1:]))
    assert sim.energy_proxy(P, 360.0, 500.0) == pytest.approx(60.0 * 500.0 / 60000.0, rel=1e-15)


def test_grid_pareto_front_is_nontrivial(reactor_grid):
    _, _, F = reactor_grid
    assert len(dominated_oracle(F)) >= 5


# -- wire protocol ---------------------------------------------------------------

def test_request_response_round_trip():
    line = sim.SimulatorRequest({"x": 1.5, "s": "a"}, 4).to_line()
    assert line.endswith("\n") and line.count("\n") == 1
    ok = sim.SimulatorResponse(4, True, (1.0, -2.5))
    assert sim.SimulatorResponse.from_line(ok.to_line()) == ok
    bad = sim.SimulatorResponse(4, False, reason="nope")
    assert sim.SimulatorResponse.from_line(bad.to_line()) == bad


@pytest.mark.parametrize("line", ["{", "[]", '{"status": "ok"}', '{"status": "ok", "objectives": []}',
                                  '{"status": "ok", "objectives": ["a"]}', '{"status": "ok", "objectives": [NaN]}',
                                  '{"status": "maybe"}'])
def test_malformed_lines(line):
    with pytest.raises(sim.MalformedResponse):
        sim.SimulatorResponse.from_line(line)


def test_external_constant_loopback():
    f = sim.ExternalSimulator(MOCK + ["--model", "constant", "--value", "1.0"], arity=1, timeout=30)
    assert f({"x": 1}) == (1.0,)


def _alive_with_marker(marker: str) -> list[int]:
    found = []
    for proc in Path("/proc").iterdir():
        if not proc.name.isdigit():
            continue
        try:
            cmd = (proc / "cmdline").read_bytes()
            state = (proc / "stat").read_text().split(") ")[-1][0]
        except OSError:
            continue
        if b"vaebo.mock_simulator" in cmd and marker.encode() in cmd and state != "Z":
            found.append(int(proc.name))
    return found


@pytest.mark.skipif(not Path("/proc/self/cmdline").exists(), reason="needs /proc")
def test_timeout_kills_and_reaps_child():
    marker = "4321.125"
    req = sim.SimulatorRequest({"x": 1}, 1)
    t0 = time.monotonic()
    with pytest.raises(sim.SimulatorTimeout):
        sim.external_evaluate(MOCK + ["--model", "sleep", "--seconds", marker], req, timeout=1.0)
    assert time.monotonic() - t0 < 10
    assert _alive_with_marker(marker) == []


def test_timeout_kills_grandchildren(tmp_path):
    marker = "98765.5"
    script = tmp_path / "wrap.sh"
    script.write_text(f"#!/bin/sh\n{sys.executable} -m vaebo.mock_simulator --model sleep --seconds {marker}\n")
    script.chmod(0o755)
    with pytest.raises(sim.SimulatorTimeout):
        sim.external_evaluate([str(script)], sim.SimulatorRequest({}, 1), timeout=1.0)
    time.sleep(0.2)
    assert _alive_with_marker(marker) == []


def test_crash_is_child_exit_error():
    with pytest.raises(sim.ChildExitError, match="status 3"):
        sim.external_evaluate(MOCK + ["--model", "crash"], sim.SimulatorRequest({}, 1), timeout=30)


def test_garbage_is_malformed():
    with pytest.raises(sim.MalformedResponse):
        sim.external_evaluate(MOCK + ["--model", "garbage"], sim.SimulatorRequest({}, 1), timeout=30)


def test_failure_record_is_simulator_failure():
    f = sim.ExternalSimulator(MOCK + ["--model", "fail"], arity=1, timeout=30)
    with pytest.raises(sim.SimulatorFailure, match="mock failure"):
        f({})


def test_launch_failure():
    with pytest.raises(sim.LaunchError):
        sim.external_evaluate(["/nonexistent/simulator-binary"], sim.SimulatorRequest({}, 1), timeout=5)


def test_error_kinds_are_distinct():
    kinds = [sim.LaunchError, sim.SimulatorTimeout, sim.MalformedResponse, sim.ChildExitError, sim.SimulatorFailure]
    for a in kinds:
        assert issubclass(a, sim.SimulatorError)
        assert sum(issubclass(a, b) for b in kinds) == 1


def test_arity_mismatch():
    f = sim.ExternalSimulator(MOCK + ["--model", "constant"], arity=2, timeout=30)
    with pytest.raises(sim.MalformedResponse):
        f({})


def test_command_string_is_split():
    cmd = f"{sys.executable} -m vaebo.mock_simulator --model constant --value 2.5"
    assert sim.external_evaluate(cmd, sim.SimulatorRequest({}, 9), 30).objectives == (2.5,)


def mock_conformance_error(reactor_space, count=100, seed=0) -> float:
    """Largest |external - in-process| over random reactor points (single and bi-objective)."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    models = {"reactor": sim.ReactorSimulator(), "reactor-bi": sim.ReactorSimulator(bi_objective=True)}
    for i, row in enumerate(reactor_space.points(reactor_space.enumerate_indices()[rng.choice(1250, count)])):
        name = "reactor" if i % 2 == 0 else "reactor-bi"
        ext = sim.ExternalSimulator(MOCK + ["--model", name], arity=models[name].arity, timeout=30)
        a = reactor_space.assignment(row)
        worst = max(worst, max(abs(x - y) for x, y in zip(ext(a), models[name](a))))
    return worst


def test_mock_matches_in_process(reactor_space):
    assert mock_conformance_error(reactor_space, count=20, seed=1) <= 1e-9


def test_caprylic_mock_trade_off():
    base = {"solvent": "1-decanol", "reflux_ratio": 1.0, "solvent_flowrate": 5.0, "feed_stage": 20, "total_stages": 40}
    lo = sim.caprylic_mock(base)
    hi = sim.caprylic_mock({**base, "solvent_flowrate": 9.0})
    assert hi[0] < lo[0] and hi[1] > lo[1]
    assert sim.caprylic_mock({**base, "feed_stage": 50})[0] > lo[0]
