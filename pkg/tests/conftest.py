"""Instances shared across test modules."""

from __future__ import annotations

import numpy as np

from navrisk.network import AffineCost, BPRCost, Edge, Network, PathSet
from navrisk.equilibrium import RoutingModel

AB = ("A", "B")
UV = ("u", "v")


def braess_network(eps: float = 1e-4) -> Network:
    # Two symmetric routes A->C->B / A->D->B plus a near-free shortcut C->D;
    # the load-sensitive edges are A->C and D->B (cost x/10).
    return Network(
        name="braess",
        nodes=("A", "C", "D", "B"),
        edges=(
            Edge("AC", "A", "C", AffineCost(0.0, 0.1)),
            Edge("AD", "A", "D", AffineCost(2.0, 0.0)),
            Edge("CB", "C", "B", AffineCost(2.0, 0.0)),
            Edge("CD", "C", "D", AffineCost(0.0, eps)),
            Edge("DB", "D", "B", AffineCost(0.0, 0.1)),
        ),
    )


def braess_paths() -> PathSet:
    # Strategy order: (A-C-B, A-C-D-B, A-D-B).
    return PathSet(AB, (("AC", "CB"), ("AC", "CD", "DB"), ("AD", "DB")), 3)


def braess_model(demand: float = 30.0, eps: float = 1e-4) -> RoutingModel:
    return RoutingModel(braess_network(eps), {AB: demand}, [braess_paths()])


def braess_attack_model(fake_cd: float, demand: float = 30.0, eps: float = 1e-4) -> RoutingModel:
    net = braess_network(eps)
    cd = PathSet(("C", "D"), (("CD",),), 1)
    return RoutingModel(net, {AB: demand, ("C", "D"): fake_cd}, [braess_paths(), cd])


def pigou_network() -> Network:
    # Two routes u->v: a constant-cost road and a purely load-priced road
    # (split in two edges so no node pair carries parallel edges).
    return Network(
        name="pigou",
        nodes=("u", "m", "v"),
        edges=(
            Edge("uv", "u", "v", AffineCost(2.0, 0.0)),
            Edge("um", "u", "m", AffineCost(0.0, 1.0)),
            Edge("mv", "m", "v", AffineCost(0.0, 0.0)),
        ),
    )


def pigou_paths() -> PathSet:
    return PathSet(UV, (("uv",), ("um", "mv")), 2)


def pigou_model(demand: float = 10.0) -> RoutingModel:
    return RoutingModel(pigou_network(), {UV: demand}, [pigou_paths()])


def random_two_class_instance(seed: int):
    """Small random instance: 2 OD classes, <= 4 paths each, affine costs.

    Shape: diamond o1 -> {a, b} -> t1 with cross links, second class o2 -> t1.
    Every edge gets a random affine cost with strictly positive slope so the
    equilibrium edge flows are unique.
    """
    rng = np.random.default_rng(seed)

    def cost():
        return AffineCost(float(rng.uniform(0.0, 2.0)), float(rng.uniform(0.05, 0.5)))

    net = Network(
        name=f"rand{seed}",
        nodes=("o1", "a", "b", "t1", "o2"),
        edges=(
            Edge("o1a", "o1", "a", cost()),
            Edge("o1b", "o1", "b", cost()),
            Edge("at1", "a", "t1", cost()),
            Edge("bt1", "b", "t1", cost()),
            Edge("ab", "a", "b", cost()),
            Edge("o2a", "o2", "a", cost()),
            Edge("o2b", "o2", "b", cost()),
        ),
    )
    ps1 = PathSet(("o1", "t1"), (("o1a", "at1"), ("o1b", "bt1"), ("o1a", "ab", "bt1")), 3)
    ps2 = PathSet(("o2", "t1"), (("o2a", "at1"), ("o2b", "bt1"), ("o2a", "ab", "bt1")), 3)
    d1 = float(rng.uniform(4.0, 10.0))
    d2 = float(rng.uniform(4.0, 10.0))
    model = RoutingModel(net, {("o1", "t1"): d1, ("o2", "t1"): d2}, [ps1, ps2])
    return model
