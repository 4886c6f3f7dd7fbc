import collections
import pytest

from tsclab.baselines import (
    FixedTimePlan,
    argmax_lowest,
    fixed_time_controller,
    max_pressure_controller,
    random_controller,
)
from tsclab.dsl import PolicyController, Signature, parse
from tsclab.network import network_from_dict
from tsclab.scenarios import bundled
from tsclab.sim import Observation, run_episode, write_events

from helpers import cross_doc, cross_network, empty_state, queue_on
from oracles import fixed_time_phases


def _obs(net, t=0):
    return Observation(t, t * 30, empty_state(net), {})


def single_phase_network():
    doc = cross_doc()
    ix = doc["intersections"][0]
    ix["phases"] = ix["phases"][:1]
    ix["movements"] = ix["movements"][:1]
    del doc["conflicts"]
    doc["links"] = [l for l in doc["links"] if l["id"] in ("BN-I0", "I0-BS")]
    doc["boundary"] = ["BN", "BS"]
    return network_from_dict(doc)


# --- random -----------------------------------------------------------------

def test_random_is_seeded():
    net, _ = bundled("symmetric_1x1")
    a, b = random_controller(7), random_controller(7)
    seq_a = [a(_obs(net, t)) for t in range(50)]
    assert seq_a == [b(_obs(net, t)) for t in range(50)]
    assert seq_a != [random_controller(8)(_obs(net, t)) for t in range(50)]


def test_random_single_phase_always_zero():
    net = single_phase_network()
    ctl = random_controller(3)
    assert {ctl(_obs(net))["I0"] for _ in range(100)} == {0}


def test_random_is_uniform_within_two_percent():
    net, _ = bundled("symmetric_1x1")
    ctl = random_controller(11)
    obs = _obs(net)
    counts = collections.Counter(ctl(obs)["I0_0"] for _ in range(10_000))
    for p in range(4):
        assert abs(counts[p] / 10_000 - 0.25) < 0.02


# --- fixed time -------------------------------------------------------------

@pytest.mark.parametrize("segments,expected", [
    (((0, 30), (1, 30), (2, 30), (3, 30)), [0, 1, 2, 3, 0, 1, 2, 3]),
    (((0, 60), (1, 30)), [0, 0, 1, 0, 0, 1, 0, 0]),
])
def test_fixed_time_cycles_by_cumulative_duration(segments, expected):
    plan = FixedTimePlan(segments)
    net = cross_network() if len({p for p, _ in segments}) == 2 else bundled("symmetric_1x1")[0]
    ctl = fixed_time_controller(plan)
    iid = net.intersections[0].id
    got = [ctl(_obs(net, t))[iid] for t in range(8)]
    assert got == expected
    assert got == fixed_time_phases(list(segments), 30, 8)


def test_fixed_time_ignores_state():
    net = cross_network()
    ctl = fixed_time_controller()
    state = empty_state(net)
    queue_on(state, "BE-I0", 0, 20, ("BE-I0", "I0-BW"))
    assert ctl(Observation(0, 0, state, {}))["I0"] == 0


def test_default_plan_is_round_robin():
    assert FixedTimePlan.round_robin(3).segments == ((0, 30), (1, 30), (2, 30))


@pytest.mark.parametrize("segments,match", [
    (((0, 30), (1, 5)), "min green"),
    (((0, 30),), "never serves"),
    (((0, 30), (2, 30)), "out of range"),
])
def test_plan_validation(segments, match):
    with pytest.raises(ValueError, match=match):
        fixed_time_controller(FixedTimePlan(segments), network=cross_network())


def test_plan_rejects_bad_segments():
    with pytest.raises(ValueError):
        FixedTimePlan(())
    with pytest.raises(ValueError):
        FixedTimePlan(((0, 0),))


# --- max pressure -----------------------------------------------------------

@pytest.mark.parametrize("values,expected", [([8, 3, 1, 0], 0), ([2, 2, 2, 2], 0), ([-1, -3, 4, 4], 2)])
def test_argmax_lowest(values, expected):
    assert argmax_lowest(values) == expected


def test_max_pressure_picks_loaded_phase():
    net = cross_network()
    state = empty_state(net)
    queue_on(state, "BE-I0", 0, 4, ("BE-I0", "I0-BW"))
    assert max_pressure_controller()(Observation(0, 0, state, {}))["I0"] == 1
    assert max_pressure_controller()(Observation(0, 0, empty_state(net), {}))["I0"] == 0


def test_dsl_program_reproduces_max_pressure_at_every_decision():
    net, flows = bundled("asymmetric_2x2")
    mp = max_pressure_controller()
    program = PolicyController(parse("ELSE argmax(pressure)", Signature(4)))
    mismatches = []

    def both(obs):
        a, b = mp(obs), program(obs)
        if a != b:
            mismatches.append(obs.t)
        return a

    run_episode(net, flows, both, 3600, 5)
    assert mismatches == []


@pytest.mark.parametrize("make", [fixed_time_controller, max_pressure_controller])
def test_state_only_baselines_are_bit_identical(make):
    net, flows = bundled("asymmetric_1x1")
    a = run_episode(net, flows, make(), 1800, 2)
    b = run_episode(net, flows, make(), 1800, 2)
    assert write_events(a.events) == write_events(b.events)
    assert a.decisions == b.decisions
