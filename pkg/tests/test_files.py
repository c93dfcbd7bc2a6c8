import json

import pytest

from qnndse.errors import QnnDseError
from qnndse.files import load_accuracy, load_thresholds, sample_path, thresholds_from_doc
from qnndse.quant import ThresholdSet
from qnndse.topology import chain, conv, max_pool


def test_accuracy_sample():
    recs = load_accuracy(sample_path("dorefa-accuracy.json"))
    dorefa = [r for r in recs if r.network == "dorefa"]
    assert [r.label for r in dorefa] == ["1/1", "1/2", "2/2", "4/4", "8/8"]
    two = next(r for r in dorefa if r.label == "2/2")
    assert (two.top5_err, two.top1_err, two.kfps_est) == (0.294, 0.534, 7.6)
    pruned = next(r for r in recs if r.network == "dorefa-pruned")
    assert pruned.kfps_measured == 3.94
    cifar = [r for r in recs if r.network == "cifar10-vgg-hwgq"]
    assert all(r.top5_err is None for r in cifar)


def test_accuracy_validation(tmp_path):
    p = tmp_path / "a.json"
    p.write_text(json.dumps([{"label": "x", "top1_err": 54.6, "top5_err": 0.3, "precision": {"a": 1, "w": 1}}]))
    with pytest.raises(QnnDseError, match="fractions"):
        load_accuracy(p)
    p.write_text(json.dumps([{"label": "x", "precision": {"a": 1}}]))
    with pytest.raises(QnnDseError, match="malformed"):
        load_accuracy(p)
    p.write_text("[1,")
    with pytest.raises(QnnDseError, match="syntax error"):
        load_accuracy(p)


def test_thresholds_by_topology_index(tmp_path):
    topo = chain("t", [conv(4, 1, 1, 2, 2, 1), max_pool(4, 2, 2, 1), conv(2, 2, 1, 1, 1, 1)])
    doc = [{"layer": 0, "channel": 0, "thresholds": [1]}, {"layer": 0, "channel": 1, "thresholds": [2]},
           {"layer": 2, "channel": 0, "thresholds": [0, 1, 2], "cutoff": 5}]
    p = tmp_path / "t.json"
    p.write_text(json.dumps(doc))
    sets = load_thresholds(p, topo)
    assert sets == [[ThresholdSet((1,)), ThresholdSet((2,))], [ThresholdSet((0, 1, 2), 5)]]
    with pytest.raises(QnnDseError, match="not a conv-like"):
        thresholds_from_doc([{"layer": 1, "channel": 0, "thresholds": [1]}], topo)
    with pytest.raises(QnnDseError, match="unknown"):
        thresholds_from_doc([{"layer": 0, "channel": 0, "thresholds": [1], "gain": 2}], topo)
