import copy
import json
from pathlib import Path

import pytest

from tsclab.network import NetworkError, flows_from_list, flows_to_list, load_flows, load_network, network_from_dict

from helpers import cross_doc

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def four_way_text():
    return (FIXTURES / "four_way.network.json").read_text()


def test_four_way_fixture_loads(four_way_text):
    net = load_network(four_way_text)
    assert len(net.intersections) == 1
    assert len(net.links) == 8
    ix = net.intersections[0]
    assert len(ix.movements) == 12
    assert ix.phase_count == 4


def test_conflicting_phase_names_both_movements(four_way_text):
    doc = json.loads(four_way_text)
    doc["intersections"][0]["phases"][0]["movements"] = ["N_T", "E_T"]
    with pytest.raises(NetworkError, match="N_T") as err:
        network_from_dict(doc)
    assert "E_T" in str(err.value)


def test_zero_phases_rejected(four_way_text):
    doc = json.loads(four_way_text)
    doc["intersections"][0]["phases"] = []
    with pytest.raises(NetworkError, match="phases"):
        network_from_dict(doc)


@pytest.mark.parametrize("field,value", [("lanes", 0), ("travel_time", 0), ("capacity", 0)])
def test_link_fields_must_be_positive(field, value):
    doc = cross_doc()
    doc["links"][0][field] = value
    with pytest.raises(NetworkError, match=field):
        network_from_dict(doc)


def test_unknown_link_endpoint():
    doc = cross_doc()
    doc["links"][0]["from"] = "nowhere"
    with pytest.raises(NetworkError, match="nowhere"):
        network_from_dict(doc)


def test_disconnected_network_rejected():
    # vehicles entering at BN can only circle between I0 and I1
    link = {"lanes": 1, "travel_time": 5, "capacity": 5}
    doc = {
        "intersections": [
            {"id": "I0", "movements": [{"from": "BN-I0", "to": "I0-I1"}], "phases": [[0]]},
            {"id": "I1", "movements": [{"from": "I0-I1", "to": "I1-I0"}], "phases": [[0]]},
        ],
        "links": [{"id": "BN-I0", "from": "BN", "to": "I0", **link},
                  {"id": "I0-I1", "from": "I0", "to": "I1", **link},
                  {"id": "I1-I0", "from": "I1", "to": "I0", **link}],
        "boundary": ["BN"],
    }
    with pytest.raises(NetworkError, match="disconnected"):
        network_from_dict(doc)


def test_missing_field_is_named():
    doc = cross_doc()
    del doc["boundary"]
    with pytest.raises(NetworkError, match="boundary"):
        network_from_dict(doc)


def test_min_green_and_yellow_bounds():
    doc = cross_doc()
    doc["intersections"][0]["min_green"] = 0
    with pytest.raises(NetworkError, match="min_green"):
        network_from_dict(doc)
    doc = cross_doc(yellow=0)
    assert network_from_dict(doc).intersections[0].yellow == 0


def test_network_round_trip(four_way_text):
    net = load_network(four_way_text)
    again = network_from_dict(json.loads(json.dumps(net.to_dict())))
    assert again == net


def test_flows_validate_and_round_trip():
    net = network_from_dict(cross_doc())
    doc = [
        {"route": ["BN-I0", "I0-BS"], "arrival": {"kind": "poisson", "rate": 0.2}, "start": 0, "end": 100},
        {"route": ["BE-I0", "I0-BW"], "arrival": {"kind": "schedule", "times": [3, 1]}},
    ]
    flows = flows_from_list(doc, net)
    assert flows[1].times == (1, 3)
    assert load_flows(json.dumps(flows_to_list(flows)), net) == flows


@pytest.mark.parametrize("mutate,match", [
    (lambda d: d[0].update(route=["BN-I0", "I0-BW"]), "no movement"),
    (lambda d: d[0]["arrival"].update(rate=0), "rate"),
    (lambda d: d[0].update(start=50, end=10), "start"),
    (lambda d: d[0].update(route=["I0-BS", "BN-I0"]), "boundary"),
    (lambda d: d[0]["arrival"].update(kind="burst"), "kind"),
])
def test_flow_errors(mutate, match):
    net = network_from_dict(cross_doc())
    doc = [{"route": ["BN-I0", "I0-BS"], "arrival": {"kind": "poisson", "rate": 0.2}}]
    doc = copy.deepcopy(doc)
    mutate(doc)
    with pytest.raises(NetworkError, match=match):
        flows_from_list(doc, net)
