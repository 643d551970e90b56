import numpy as np
import pytest

from memscrub.corpus import CHOICES, generate_corpus, populate_store, split_items, to_dataset
from memscrub.store import MemoryStore, RetrievalSettings
from memscrub.training import ModelState, UnlearnConfig, pretrain

FEATURE_DIM = 256
HIDDEN_DIM = 64


def build_random_dag(rng, n_nodes=60, episodic_fraction=0.4):
    """Random layered DAG in a fresh graph; returns (graph, edges, episodic_ids)."""
    from memscrub.graph import Layer, MemoryGraph

    graph = MemoryGraph()
    edges = []
    episodic = []
    derived_layers = [Layer.SEMANTIC, Layer.REFLECTION, Layer.KG_ENTITY]
    n_episodic = max(1, int(n_nodes * episodic_fraction))
    for i in range(n_episodic):
        episodic.append(graph.add_memory(Layer.EPISODIC, f"episode {i}"))
    all_ids = list(episodic)
    for i in range(n_nodes - n_episodic):
        k = int(rng.integers(1, min(4, len(all_ids)) + 1))
        parents = list(rng.choice(all_ids, size=k, replace=False))
        layer = derived_layers[int(rng.integers(0, len(derived_layers)))]
        node_id = graph.add_memory(layer, f"derived {i}", parents)
        for p in parents:
            edges.append((p, node_id))
        all_ids.append(node_id)
    return graph, edges, episodic


def brute_force_closure(edges, targets, layer_of):
    """Reachability by repeated edge relaxation, restricted to derived layers."""
    from memscrub.graph import DERIVED_LAYERS

    reach = set(targets)
    changed = True
    while changed:
        changed = False
        for parent, child in edges:
            if parent in reach and child not in reach:
                reach.add(child)
                changed = True
    return {v for v in reach - set(targets) if layer_of(v) in DERIVED_LAYERS}


@pytest.fixture(scope="session")
def corpus_items():
    return generate_corpus(seed=0)


@pytest.fixture(scope="session")
def pretrained_model(corpus_items):
    model = ModelState.init(FEATURE_DIM, HIDDEN_DIM, len(CHOICES), seed=0, ref_seed=7919)
    trained = split_items(corpus_items, "forget") + split_items(corpus_items, "retain")
    cfg = UnlearnConfig(lambda_f=0.0, temperature=1.0, lr=0.5, epochs=120,
                        batch_size=16, seed=0)
    pretrain(to_dataset(trained, FEATURE_DIM), model, cfg)
    return model


@pytest.fixture()
def fresh_agent(corpus_items, pretrained_model):
    """A populated store plus a copy of the pretrained model, safe to mutate."""
    from memscrub.protocol import AgentState

    store = MemoryStore(settings=RetrievalSettings())
    prov = populate_store(store, corpus_items)
    agent = AgentState(store=store, model=pretrained_model.copy(),
                       feature_dim=FEATURE_DIM)
    return agent, corpus_items, prov
