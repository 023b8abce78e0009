"""Triple ingestion, reciprocal augmentation, filter indices, and batching.

Datasets are directories holding ``train.txt``, ``valid.txt`` and
``test.txt``, one tab-separated ``head\\trelation\\ttail`` triple per line.
Entity and relation names are opaque strings; ids are assigned densely in
first-appearance order scanning train, then valid, then test, so loading is
fully deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ParseError
from .rng import RngState

_SPLITS = ("train", "valid", "test")

# Suffix appended to a relation name for its synthetic inverse.
RECIPROCAL_SUFFIX = "_reciprocal"


@dataclass
class Vocabulary:
    """Dense, contiguous string-to-id maps for entities and relations."""

    entities: list[str] = field(default_factory=list)
    relations: list[str] = field(default_factory=list)
    entity_ids: dict[str, int] = field(default_factory=dict)
    relation_ids: dict[str, int] = field(default_factory=dict)

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    def add_entity(self, name: str) -> int:
        idx = self.entity_ids.get(name)
        if idx is None:
            idx = len(self.entities)
            self.entity_ids[name] = idx
            self.entities.append(name)
        return idx

    def add_relation(self, name: str) -> int:
        idx = self.relation_ids.get(name)
        if idx is None:
            idx = len(self.relations)
            self.relation_ids[name] = idx
            self.relations.append(name)
        return idx


@dataclass
class TripleStore:
    """Id-encoded train/valid/test triples plus their vocabulary.

    ``base_relation_count`` is the relation count before reciprocal
    augmentation; an augmented store has twice that many relation ids, and
    relation ``r + base_relation_count`` is the inverse of relation ``r``.
    """

    vocab: Vocabulary
    train: np.ndarray  # (n, 3) int64
    valid: np.ndarray
    test: np.ndarray
    base_relation_count: int

    @property
    def n_entities(self) -> int:
        return self.vocab.n_entities

    @property
    def n_relations(self) -> int:
        return self.vocab.n_relations

    @property
    def augmented(self) -> bool:
        return self.vocab.n_relations == 2 * self.base_relation_count and self.base_relation_count > 0

    def split(self, name: str) -> np.ndarray:
        if name not in _SPLITS:
            raise ValueError(f"unknown split {name!r}, expected one of {_SPLITS}")
        return getattr(self, name)

    def stats(self) -> dict:
        return {
            "entities": self.n_entities,
            "relations": self.n_relations,
            "base_relations": self.base_relation_count,
            "train": int(len(self.train)),
            "valid": int(len(self.valid)),
            "test": int(len(self.test)),
        }


def _read_split(path: Path, vocab: Vocabulary) -> np.ndarray:
    if not path.is_file():
        raise IOError(f"dataset file not found: {path}")
    rows = []
    seen = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise ParseError(
                    f"{path}:{lineno}: expected 3 tab-separated fields, got {len(fields)}"
                )
            h, r, t = fields
            triple = (vocab.add_entity(h), vocab.add_relation(r), vocab.add_entity(t))
            if triple in seen:
                continue
            seen.add(triple)
            rows.append(triple)
    if not rows:
        return np.empty((0, 3), dtype=np.int64)
    return np.asarray(rows, dtype=np.int64)


def load_dataset(directory: str | Path) -> TripleStore:
    """Load a dataset directory into an id-encoded store.

    The vocabulary covers the union of all three splits; entities or
    relations that appear only in valid/test still get ids. Duplicate lines
    within a split are dropped.
    """
    directory = Path(directory)
    vocab = Vocabulary()
    splits = {name: _read_split(directory / f"{name}.txt", vocab) for name in _SPLITS}
    return TripleStore(
        vocab=vocab,
        train=splits["train"],
        valid=splits["valid"],
        test=splits["test"],
        base_relation_count=vocab.n_relations,
    )


def save_dataset(store: TripleStore, directory: str | Path) -> None:
    """Write the store back to train/valid/test files (inverse of load)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    ents, rels = store.vocab.entities, store.vocab.relations
    for name in _SPLITS:
        with open(directory / f"{name}.txt", "w", encoding="utf-8") as fh:
            for h, r, t in store.split(name):
                fh.write(f"{ents[h]}\t{rels[r]}\t{ents[t]}\n")


def augment_reciprocal(store: TripleStore) -> TripleStore:
    """Add an inverse triple (t, r', h) for every (h, r, t) in every split.

    The relation vocabulary doubles; original ids are unchanged, and the
    inverse of relation ``r`` is ``r + N_r``. Head prediction then reduces
    to tail prediction under the inverse relation.
    """
    if store.augmented:
        raise ValueError("store is already reciprocal-augmented")
    n_rel = store.vocab.n_relations
    vocab = Vocabulary(
        entities=list(store.vocab.entities),
        relations=list(store.vocab.relations) + [r + RECIPROCAL_SUFFIX for r in store.vocab.relations],
        entity_ids=dict(store.vocab.entity_ids),
        relation_ids=dict(store.vocab.relation_ids),
    )
    for i, name in enumerate(store.vocab.relations):
        vocab.relation_ids[name + RECIPROCAL_SUFFIX] = n_rel + i

    def double(split: np.ndarray) -> np.ndarray:
        if len(split) == 0:
            return split.copy()
        inverse = split[:, [2, 1, 0]].copy()
        inverse[:, 1] += n_rel
        return np.concatenate([split, inverse], axis=0)

    return TripleStore(
        vocab=vocab,
        train=double(store.train),
        valid=double(store.valid),
        test=double(store.test),
        base_relation_count=n_rel,
    )


class FilterIndex:
    """Map from (head, relation) to every tail observed in any split."""

    def __init__(self, mapping: dict):
        self._mapping = mapping

    def tails(self, head: int, relation: int) -> np.ndarray:
        """All known true tails for the query, sorted; empty if unseen."""
        got = self._mapping.get((head, relation))
        if got is None:
            return np.empty(0, dtype=np.int64)
        return got

    def __len__(self) -> int:
        return len(self._mapping)

    def __contains__(self, query) -> bool:
        return query in self._mapping


def build_filter_index(store: TripleStore) -> FilterIndex:
    """Index train, valid and test tails for filtered ranking.

    Call after reciprocal augmentation so head queries (inverse relations)
    are covered too.
    """
    mapping: dict[tuple[int, int], set] = {}
    for name in _SPLITS:
        for h, r, t in store.split(name):
            mapping.setdefault((int(h), int(r)), set()).add(int(t))
    return FilterIndex(
        {k: np.asarray(sorted(v), dtype=np.int64) for k, v in mapping.items()}
    )


@dataclass
class Batch:
    """A block of (head, relation) queries with their training tails.

    ``targets()`` materializes the multi-label 0/1 matrix on demand; at
    40k-entity scale a dense row block is ~160 MB, so batches keep the
    sparse form until the loss needs it.
    """

    heads: np.ndarray
    relations: np.ndarray
    tails: tuple
    n_entities: int

    def __len__(self) -> int:
        return len(self.heads)

    def targets(self) -> np.ndarray:
        y = np.zeros((len(self.heads), self.n_entities))
        for i, t in enumerate(self.tails):
            y[i, t] = 1.0
        return y


def group_queries(store: TripleStore) -> list:
    """Distinct (head, relation) train queries with their tail id arrays.

    Order is first appearance in the train split, so the result is
    deterministic for a given store.
    """
    grouped: dict[tuple[int, int], list] = {}
    for h, r, t in store.train:
        grouped.setdefault((int(h), int(r)), []).append(int(t))
    return [
        (h, r, np.asarray(ts, dtype=np.int64)) for (h, r), ts in grouped.items()
    ]


def make_batches(
    store: TripleStore,
    batch_size: int,
    rng: RngState,
    queries: list | None = None,
) -> list[Batch]:
    """Shuffle distinct train queries and group them into full batches.

    The final partial batch is dropped: the distillation block's expanding
    projection has a fixed row count, so every batch must have exactly
    ``batch_size`` rows. Pass ``queries`` (from :func:`group_queries`) to
    avoid regrouping on every epoch.
    """
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    if queries is None:
        queries = group_queries(store)
    if batch_size > len(queries):
        raise ConfigError(
            f"batch_size {batch_size} exceeds the {len(queries)} distinct train queries"
        )
    order = rng.permutation(len(queries))
    n_batches = len(queries) // batch_size
    batches = []
    for b in range(n_batches):
        idx = order[b * batch_size : (b + 1) * batch_size]
        chosen = [queries[i] for i in idx]
        batches.append(
            Batch(
                heads=np.asarray([c[0] for c in chosen], dtype=np.int64),
                relations=np.asarray([c[1] for c in chosen], dtype=np.int64),
                tails=tuple(c[2] for c in chosen),
                n_entities=store.n_entities,
            )
        )
    return batches


def label_smooth(targets: np.ndarray, epsilon: float) -> np.ndarray:
    """Blend hard targets toward uniform: (1 - eps) * y + eps / N."""
    if not 0.0 <= epsilon < 1.0:
        raise ValueError(f"label smoothing must lie in [0, 1), got {epsilon}")
    if epsilon == 0.0:
        return targets
    n = targets.shape[-1]
    return (1.0 - epsilon) * targets + epsilon / n
