"""Smoke test for the brb extension module.

Build it with `cargo build -p brb-py --release --features extension-module`
and put the resulting library on the path as `brb.so` (see README).
"""

import json

import brb


def hand_driven_broadcast():
    # Four fully connected nodes, delivered by pushing frames around by hand.
    cfg = brb.Config("bdopt")
    nodes = [brb.Node(i, [j for j in range(4) if j != i], 4, 1, cfg) for i in range(4)]
    queue = [(0, to, frame) for to, _, frame in nodes[0].broadcast(b"hello")]
    while queue:
        sender, to, frame = queue.pop(0)
        queue.extend((to, nxt, f) for nxt, _, f in nodes[to].on_frame(sender, frame))
    for node in nodes:
        assert node.deliveries() == [(0, 0, b"hello")], node.id


def simulated_broadcasts():
    g = brb.Graph.regular(16, 5, 2, seed=1)
    assert len(g) == 16 and g.connectivity() >= 5
    base = brb.simulate(g, 2, brb.Config("bdopt"), payload_size=1024)
    fast = brb.simulate(g, 2, brb.Config("latbdw"), payload_size=1024)
    assert base.latency is not None and fast.latency is not None
    assert fast.total_bits < base.total_bits
    assert sorted(fast.delivered) == list(range(16))

    faulty = brb.simulate(
        g, 2, brb.Config("latbdw"), asynchronous=True, adversaries={3: "equivocator", 9: "mutator"}
    )
    assert all(faulty.check_properties().values())
    report = json.loads(faulty.to_json())
    assert report["n"] == 16 and 3 not in report["correct"]


def formulas_and_sweeps():
    assert brb.echo_quorum(31, 4) == 18
    echo, ready = brb.roles(31, 4, brb.Config("bdopt+mbd11"))
    assert echo == list(range(22)) and ready == list(range(13))
    assert "path_forger" in brb.STRATEGIES
    cfg = brb.Config("bd")
    cfg.set("mbd1", True)
    assert cfg.enabled() == ["mbd1"]
    csv = brb.run_experiment(
        '[topology]\nn=[7]\nk=[4]\nf=[1]\n[protocol]\nconfigs=["bdopt","bdw"]\n'
        "[run]\npayload_sizes=[16]\nrepetitions=2\n"
    )
    assert csv.splitlines()[0].startswith("n,k,f,payload,preset,seed")
    assert len(csv.splitlines()) == 1 + 2 * 3
    try:
        brb.Config("mbd42")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown toggle accepted")


if __name__ == "__main__":
    hand_driven_broadcast()
    simulated_broadcasts()
    formulas_and_sweeps()
    print("ok")
