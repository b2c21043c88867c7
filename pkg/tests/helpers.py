import numpy as np

from latprune.knapsack import Item
from latprune.netmodel import LayerSpec


def conv(layer_id, in_channels, out_channels, preds=(), kernel_size=3,
         spatial=8, **kwargs):
    return LayerSpec(layer_id, "conv{}".format(layer_id), "conv", kernel_size,
                     in_channels, out_channels, (spatial, spatial), preds,
                     **kwargs)


def chain_items(costs_by_chain, importances_by_chain):
    items = []
    for chain_id, (costs, importances) in enumerate(
            zip(costs_by_chain, importances_by_chain)):
        previous = None
        for rank, (cost, importance) in enumerate(zip(costs, importances), 1):
            item = Item(len(items), float(importance), int(cost), chain_id,
                        rank, previous)
            items.append(item)
            previous = item.item_id
    return items


def random_instance(rng, max_chains=4, max_items=6, max_cost=20,
                    min_cost=0):
    chains = rng.integers(1, max_chains + 1)
    costs, importances = [], []
    for _ in range(chains):
        length = rng.integers(1, max_items + 1)
        costs.append(rng.integers(min_cost, max_cost + 1, length))
        importances.append(np.sort(rng.random(length))[::-1] * 10)
    items = chain_items(costs, importances)
    total = sum(max(item.cost, 0) for item in items)
    return items, int(rng.integers(0, total + 1))


def prefix_closed(items, kept):
    by_id = {item.item_id: item for item in items}
    return all(by_id[i].preceding_item_id is None
               or by_id[i].preceding_item_id in kept for i in kept)
