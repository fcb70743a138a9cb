import json

import pytest

from coopstake.scenario import InvalidScenario, load_scenario, parse_scenario
from conftest import small_doc


def fields_of(doc):
    with pytest.raises(InvalidScenario) as exc:
        parse_scenario(doc)
    return [f for f, _ in exc.value.errors]


def test_valid_document_parses():
    cfg = parse_scenario(small_doc())
    assert cfg.node_count == 10 and cfg.nodes[0] == "n000"
    assert cfg.overlay.super_peer_count == 4
    assert cfg.with_seed(9).seed == 9 and cfg.seed == 1


@pytest.mark.parametrize("section,key", [("overlay", "max_connection_fraction"),
                                         ("mint_policy", "free_tx_fraction"),
                                         ("reward_policy", "mint_fraction")])
def test_out_of_range_fraction_names_field(section, key):
    assert f"{section}.{key}" in fields_of(small_doc(**{section: {key: 1.5}}))


def test_unknown_fields_rejected():
    assert "colour" in fields_of(small_doc(colour="red"))
    assert "workload.speed" in fields_of(small_doc(workload={"speed": 1}))
    assert "faults[0].when" in fields_of(small_doc(faults=[{"at": 1, "target": "n001", "mode": "crash",
                                                           "when": 2}]))


def test_required_and_version():
    doc = small_doc()
    del doc["seed"]
    assert "seed" in fields_of(doc)
    assert "schema_version" in fields_of(small_doc(schema_version=2))


def test_references_must_exist():
    assert "faults[0].target" in fields_of(small_doc(faults=[{"at": 1, "target": "n999", "mode": "crash"}]))
    assert "stakes.n050" in fields_of(small_doc(stakes={"n050": 5}))
    assert "super_peers" in fields_of(small_doc(super_peers=["n001", "n002"]))


def test_fault_parameters_checked():
    errs = fields_of(small_doc(faults=[
        {"at": 1, "target": "n001", "mode": "tamper-log-entry"},
        {"at": 1, "target": "n001", "mode": "partition", "nodes": ["n001"]},
        {"at": 99_999_999, "target": "n001", "mode": "crash"},
        {"at": 1, "target": "reward", "mode": "equivocate-block"},
    ]))
    assert {"faults[0].index", "faults[1].duration", "faults[2].at", "faults[3].target"} <= set(errs)


def test_genesis_budget():
    assert "genesis_balance" in fields_of(small_doc(genesis_balance=10**9))


def test_capacity_must_fit_three_links_per_node():
    assert "overlay.max_connection_fraction" in fields_of(
        small_doc(node_count=40, super_peer_count=4, overlay={"max_connection_fraction": 0.2}))


def test_load_from_file(tmp_path):
    p = tmp_path / "s.json"
    p.write_text(json.dumps(small_doc()))
    assert load_scenario(p).seed == 1
    p.write_text("{ truncated")
    with pytest.raises(InvalidScenario):
        load_scenario(p)
