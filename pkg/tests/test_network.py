import itertools

import pytest

from fifobound.curves import INF, RateLatency, Shaper, TokenBucket
from fifobound.network import (Flow, Server, Topology, from_dict, gen_one_hop, gen_sinktree,
                               gen_tree, generate, to_dict, validate)


def _single(R=2.0, flows=()):
    return Topology((Server("s", RateLatency(R, 1)),), tuple(flows))


def test_one_hop_parameters():
    net = gen_one_hop(3, 0.5, 2)
    assert {s.rate for s in net.servers} == {4.0}
    assert net.server("s1").shaper_to("s2") == Shaper(0.5, 8.0)
    assert net.flow("f0").path == ("s1", "s2", "s3")
    for s in net.servers:
        assert sum(s.id in f.path for f in net.flows) == 2
    assert validate(net).ok


def test_sinktree_and_tree_parameters():
    st = gen_sinktree(3, 1.0, 1)
    assert st.server("s1").rate == 3.0 and st.flow("f1").ingress_shaper.Rp == 3.0
    assert st.flow("f2").path == ("s2", "s3")
    tr = gen_tree(3, 0.75, 3)
    assert tr.server("s1").rate == pytest.approx(4.0)
    assert tr.flow("f1").ingress_shaper.Rp == pytest.approx(12.0)
    assert tr.flow("f3").path == ("a3", "s3")
    assert tr.flow("g2").path == ("a2",)
    deep = gen_tree(3, 0.5, 1, side_depth=2)
    assert deep.flow("f2").path == ("a2_1", "a2_2", "s2", "s3")


@pytest.mark.parametrize("family,N,u,ratio", list(itertools.product(
    ("one_hop", "sinktree", "tree"), (2, 3, 5), (0.5, 0.75, 1.0), (1, 2, 3))))
def test_generated_pass_validation(family, N, u, ratio):
    net = generate(family, N, u, ratio)
    rep = validate(net, allow_full=True)
    assert rep.ok, rep.errors
    assert bool(rep.warnings) == (u == 1.0)
    if u < 1.0:
        assert validate(net).ok


def test_stability_boundary_is_a_violation():
    net = _single(2.0, [Flow("a", ("s",), TokenBucket(1, 1)), Flow("b", ("s",), TokenBucket(1, 1))])
    rep = validate(net)
    assert not rep.ok and "stability" in rep.errors[0]
    assert validate(net, allow_full=True).ok


def test_overload_rejected_even_when_full_allowed():
    net = _single(1.5, [Flow("a", ("s",), TokenBucket(1, 1)), Flow("b", ("s",), TokenBucket(1, 1))])
    assert not validate(net, allow_full=True).ok


def test_shaper_rate_violation():
    servers = (Server("s1", RateLatency(2, 1), {"s2": Shaper(0.5, 1.0)}), Server("s2", RateLatency(2, 1)))
    net = Topology(servers, (Flow("f", ("s1", "s2"), TokenBucket(1, 0.5)),))
    rep = validate(net)
    assert any("shaper s1->s2" in e for e in rep.errors)


def test_cycle_and_missing_link():
    servers = (Server("a", RateLatency(5, 1)), Server("b", RateLatency(5, 1)))
    cyc = Topology(servers, (Flow("f", ("a", "b"), TokenBucket(1, 1)), Flow("g", ("b", "a"), TokenBucket(1, 1))))
    assert any("feedforward" in e for e in validate(cyc).errors)
    with pytest.raises(ValueError):
        cyc.topological_order()
    gap = Topology(servers, (Flow("f", ("a", "b"), TokenBucket(1, 1)),), (("b", "a"),))
    assert any("missing link" in e for e in validate(gap).errors)


def test_bad_generator_parameters():
    for args in ((1, 0.5, 2), (3, 0.0, 2), (3, 1.2, 2), (3, 0.5, 0)):
        with pytest.raises(ValueError):
            gen_one_hop(*args)
    with pytest.raises(ValueError):
        generate("ring", 3, 0.5, 2)


def test_round_trip():
    for fam in ("one_hop", "sinktree", "tree"):
        net = generate(fam, 3, 0.75, 2)
        d = to_dict(net)
        assert from_dict(d) == net
        assert to_dict(from_dict(d)) == d


def test_inf_encoding():
    net = gen_one_hop(2, 0.5, 2).without_shapers()
    d = to_dict(net)
    assert d["flows"][0]["ingress"]["Rp"] == "inf"
    assert from_dict(d).flow("f0").ingress_shaper.Rp == INF


def test_malformed_documents():
    with pytest.raises(ValueError, match="servers"):
        from_dict({"flows": []})
    with pytest.raises(ValueError, match=r"flows\[0\]"):
        from_dict({"servers": [], "flows": [{"id": "f"}]})
    with pytest.raises(ValueError, match="rate"):
        from_dict({"servers": [{"id": "s", "rate": "fast", "latency": 1}], "flows": []})
