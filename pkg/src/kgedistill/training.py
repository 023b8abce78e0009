"""Adam optimization, the per-iteration distillation loop, and checkpoints.

The trainer is fully deterministic: the seed fixes four independent random
streams (model init, block init, epoch shuffling, dropout masks), so a
(seed, config, dataset) triple determines every logged number. Keeping the
streams separate is what makes "distillation enabled with beta 0" produce
bit-identical parameters to "distillation disabled".
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .autodiff import Tensor, backward, custom_node, no_grad
from .config import RunConfig
from .data import TripleStore, group_queries, label_smooth, make_batches
from .distill import SemanticBlock, TeacherCache, beta_at_epoch, distill_loss, extract, total_loss
from .errors import CheckpointError, ConfigError, ShapeError, TrainingAbort
from .models import EmbeddingModel
from .rng import RngState

__all__ = [
    "Adam",
    "Checkpoint",
    "Trainer",
    "bce_loss",
    "load_checkpoint",
    "lr_at_epoch",
    "model_from_checkpoint",
]


def lr_at_epoch(epoch: int, lr_initial: float, decay: float) -> float:
    """Exponentially decayed learning rate: lr * decay^epoch."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    return lr_initial * decay**epoch


def bce_loss(logits: Tensor, targets) -> Tensor:
    """Multi-label binary cross entropy over all entities, from logits.

    Computed in the stable form mean(softplus(u) - y * u), which never
    exponentiates a positive logit; the gradient is (sigmoid(u) - y) / size.
    """
    y = targets.data if isinstance(targets, Tensor) else np.asarray(targets, dtype=np.float64)
    if logits.shape != y.shape:
        raise ShapeError(f"bce_loss: logits {logits.shape} vs targets {y.shape}")
    if y.size and (y.min() < 0.0 or y.max() > 1.0):
        raise ValueError("bce_loss targets must lie in [0, 1]")
    u = logits.data
    value = float(np.mean(np.logaddexp(0.0, u) - y * u))

    def vjp(g):
        return g * (expit(u) - y) / u.size

    return custom_node(np.float64(value), (logits,), (vjp,))


class Adam:
    """Bias-corrected Adam over named parameters (beta 0.9/0.999, eps 1e-8)."""

    beta1 = 0.9
    beta2 = 0.999
    eps = 1e-8

    def __init__(self, named_params: list):
        self.named_params = list(named_params)
        self.moment1 = {name: np.zeros_like(p.data) for name, p in self.named_params}
        self.moment2 = {name: np.zeros_like(p.data) for name, p in self.named_params}
        self.step_count = 0

    def zero_grad(self) -> None:
        for _, p in self.named_params:
            p.zero_grad()

    def step(self, lr: float) -> None:
        self.step_count += 1
        correction1 = 1.0 - self.beta1**self.step_count
        correction2 = 1.0 - self.beta2**self.step_count
        for name, p in self.named_params:
            if not p.trainable:
                continue
            g = p.grad
            m = self.moment1[name]
            v = self.moment2[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= lr * (m / correction1) / (np.sqrt(v / correction2) + self.eps)


class Trainer:
    """Owns the model, optional distillation block, optimizer, and rng state.

    ``store`` must be reciprocal-augmented. One :meth:`train_epoch` call runs
    the full per-batch loop: BCE on smoothed 1-N targets, the softened KL
    term against the cached teacher vector when distillation is active, one
    Adam step, then a detached re-extraction that becomes the next teacher.
    """

    def __init__(self, store: TripleStore, run_config: RunConfig):
        if not store.augmented:
            raise ConfigError("trainer requires a reciprocal-augmented store")
        run_config.validate()
        self.store = store
        self.run_config = run_config
        self.epoch = 0
        self.metrics_history: list[dict] = []

        seed = run_config.train.seed
        base = RngState(seed)
        self.rng_shuffle = base.derive("shuffle")
        self.rng_dropout = base.derive("dropout")

        self.model = EmbeddingModel(
            run_config.model, store.n_entities, store.n_relations, base.derive("model-init")
        )
        self.block = None
        if run_config.isd.enabled:
            k_b = run_config.isd.k_b or run_config.model.d_e
            self.block = SemanticBlock(
                embed_dim=run_config.model.d_e,
                n_entities=store.n_entities,
                batch_size=run_config.train.batch_size,
                k_b=k_b,
                rng=base.derive("block-init"),
            )
        self.teacher = TeacherCache()
        self.queries = group_queries(store)
        self.adam = Adam(self._named_parameters())

    def _named_parameters(self) -> list:
        named = [(f"model.{n}", p) for n, p in self.model.named_parameters()]
        if self.block is not None:
            named.extend((f"block.{n}", p) for n, p in self.block.named_parameters())
        return named

    def train_epoch(self) -> dict:
        """Run one epoch and return its metrics record."""
        cfg = self.run_config.train
        dcfg = self.run_config.isd
        ep = self.epoch
        if ep >= cfg.epochs:
            raise ValueError(f"epoch {ep} is outside the configured schedule of {cfg.epochs}")

        beta = beta_at_epoch(ep, cfg.epochs, dcfg.beta_init) if dcfg.enabled else 0.0
        lr = lr_at_epoch(ep, cfg.learning_rate, cfg.lr_decay)
        # With beta exactly 0 the KL term cannot contribute, so the whole
        # distillation path is skipped; this keeps the run bit-identical to
        # a distillation-disabled run.
        use_isd = dcfg.enabled and beta > 0.0

        batches = make_batches(self.store, cfg.batch_size, self.rng_shuffle, self.queries)
        first_batch = batches[0]
        bce_sum = kl_sum = loss_sum = 0.0
        for index, batch in enumerate(batches):
            self.adam.zero_grad()
            logits = self.model.forward(
                batch.heads, batch.relations, training=True, rng=self.rng_dropout
            )
            targets = label_smooth(batch.targets(), cfg.label_smoothing)
            bce = bce_loss(logits, targets)
            if use_isd and self.teacher.present:
                student = extract(batch, self.model.entity_embeddings, self.block)
                kl = distill_loss(student, self.teacher.vector, dcfg.temperature)
            else:
                kl = Tensor(0.0)
            loss = total_loss(bce, kl, beta)
            if not np.isfinite(loss.data):
                raise TrainingAbort(
                    ep, index, f"non-finite loss at epoch {ep}, batch {index}"
                )
            backward(loss)
            self.adam.step(lr)
            if use_isd:
                source = first_batch if dcfg.static_input else batch
                with no_grad():
                    refreshed = extract(source, self.model.entity_embeddings, self.block)
                self.teacher.refresh(refreshed.data)
            bce_sum += float(bce.data)
            kl_sum += float(kl.data)
            loss_sum += float(loss.data)

        n = len(batches)
        record = {
            "epoch": ep,
            "loss_bce": bce_sum / n,
            "loss_kl": kl_sum / n,
            "beta": beta,
            "lr": lr,
            "loss_total": loss_sum / n,
        }
        self.epoch += 1
        self.metrics_history.append(record)
        return record

    # -- checkpointing ---------------------------------------------------------

    def _named_tensors(self) -> dict:
        tensors = {f"model.{n}": p.data for n, p in self.model.named_parameters()}
        tensors.update((f"model.{n}", b) for n, b in self.model.named_buffers())
        if self.block is not None:
            tensors.update((f"block.{n}", p.data) for n, p in self.block.named_parameters())
        for name in self.adam.moment1:
            tensors[f"adam.m.{name}"] = self.adam.moment1[name]
            tensors[f"adam.v.{name}"] = self.adam.moment2[name]
        if self.teacher.present:
            tensors["teacher.vector"] = self.teacher.vector
        return tensors

    def save(self, directory: str | Path) -> None:
        """Write a resumable checkpoint: manifest, vocab, one file per tensor."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        tensors = self._named_tensors()
        manifest = {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "config": self.run_config.to_dict(),
            "epoch": self.epoch,
            "seed": self.run_config.train.seed,
            "adam_step": self.adam.step_count,
            "rng": {
                "shuffle": _state_to_json(self.rng_shuffle.state),
                "dropout": _state_to_json(self.rng_dropout.state),
            },
            "teacher_present": self.teacher.present,
            "metrics_history": self.metrics_history,
            "tensors": sorted(tensors),
            "n_entities": self.store.n_entities,
            "n_relations": self.store.n_relations,
            "base_relations": self.store.base_relation_count,
        }
        with open(directory / "manifest.json", "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
        for name, arr in tensors.items():
            _write_tensor(directory / f"{name}.bin", arr)
        with open(directory / "entities.txt", "w", encoding="utf-8") as fh:
            fh.writelines(e + "\n" for e in self.store.vocab.entities)
        with open(directory / "relations.txt", "w", encoding="utf-8") as fh:
            fh.writelines(r + "\n" for r in self.store.vocab.relations)

    @classmethod
    def resume(cls, directory: str | Path, store: TripleStore) -> "Trainer":
        """Rebuild a trainer from a checkpoint, bit-exact with the saved run."""
        ckpt = load_checkpoint(directory)
        config = RunConfig.from_dict(ckpt.manifest["config"])
        if store.n_entities != ckpt.n_entities or store.n_relations != ckpt.n_relations:
            raise ConfigError(
                f"dataset has {store.n_entities} entities / {store.n_relations} relations, "
                f"checkpoint expects {ckpt.n_entities} / {ckpt.n_relations}"
            )
        trainer = cls(store, config)
        for name, p in trainer._named_parameters():
            if name not in ckpt.tensors:
                raise CheckpointError(f"checkpoint is missing tensor {name}")
            _assign(p.data, ckpt.tensors[name], name)
        for name, buf in trainer.model.named_buffers():
            key = f"model.{name}"
            if key not in ckpt.tensors:
                raise CheckpointError(f"checkpoint is missing tensor {key}")
            _assign(buf, ckpt.tensors[key], key)
        for name in trainer.adam.moment1:
            for prefix, store_dict in (("adam.m.", trainer.adam.moment1), ("adam.v.", trainer.adam.moment2)):
                key = prefix + name
                if key not in ckpt.tensors:
                    raise CheckpointError(f"checkpoint is missing tensor {key}")
                _assign(store_dict[name], ckpt.tensors[key], key)
        trainer.adam.step_count = ckpt.manifest["adam_step"]
        trainer.epoch = ckpt.manifest["epoch"]
        trainer.metrics_history = list(ckpt.manifest["metrics_history"])
        trainer.rng_shuffle.set_state(_state_from_json(ckpt.manifest["rng"]["shuffle"]))
        trainer.rng_dropout.set_state(_state_from_json(ckpt.manifest["rng"]["dropout"]))
        if ckpt.manifest["teacher_present"]:
            trainer.teacher.refresh(ckpt.tensors["teacher.vector"])
        return trainer


# ---------------------------------------------------------------------------
# Checkpoint file format
# ---------------------------------------------------------------------------

CHECKPOINT_FORMAT = "kgedistill-checkpoint"
CHECKPOINT_VERSION = 1
_TENSOR_MAGIC = b"KGE1"
_MAX_RANK = 8


@dataclass
class Checkpoint:
    """A loaded checkpoint: manifest, tensors, and vocabulary names."""

    manifest: dict
    tensors: dict
    entities: list[str] = field(default_factory=list)
    relations: list[str] = field(default_factory=list)

    @property
    def n_entities(self) -> int:
        return self.manifest["n_entities"]

    @property
    def n_relations(self) -> int:
        return self.manifest["n_relations"]

    @property
    def config(self) -> RunConfig:
        return RunConfig.from_dict(self.manifest["config"])


def _write_tensor(path: Path, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    with open(path, "wb") as fh:
        fh.write(_TENSOR_MAGIC)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(arr.astype("<f8", copy=False).tobytes(order="C"))


def _read_tensor(path: Path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != _TENSOR_MAGIC:
        raise CheckpointError(f"{path}: bad magic bytes, not a tensor file")
    if len(raw) < 8:
        raise CheckpointError(f"{path}: truncated header")
    (rank,) = struct.unpack_from("<I", raw, 4)
    if rank > _MAX_RANK:
        raise CheckpointError(f"{path}: implausible tensor rank {rank}")
    header_end = 8 + 8 * rank
    if len(raw) < header_end:
        raise CheckpointError(f"{path}: truncated dimension header")
    dims = struct.unpack_from(f"<{rank}Q", raw, 8)
    expected = int(np.prod(dims, dtype=np.int64)) if rank else 1
    body = raw[header_end:]
    if len(body) != expected * 8:
        raise CheckpointError(
            f"{path}: expected {expected * 8} data bytes for shape {dims}, got {len(body)}"
        )
    return np.frombuffer(body, dtype="<f8").astype(np.float64).reshape(dims)


def _assign(target: np.ndarray, value: np.ndarray, name: str) -> None:
    if target.shape != value.shape:
        raise CheckpointError(
            f"tensor {name} has shape {value.shape}, expected {target.shape}"
        )
    target[...] = value


def _state_to_json(state: dict) -> dict:
    def convert(v):
        if isinstance(v, dict):
            return {k: convert(x) for k, x in v.items()}
        if isinstance(v, (np.integer,)):
            return int(v)
        return v

    return convert(state)


def _state_from_json(state: dict) -> dict:
    return state


def load_checkpoint(directory: str | Path) -> Checkpoint:
    """Read and validate a checkpoint directory."""
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.is_file():
        raise CheckpointError(f"no manifest.json in {directory}")
    with open(manifest_path, "r", encoding="utf-8") as fh:
        try:
            manifest = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"{manifest_path}: corrupt manifest: {exc}") from exc
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{manifest_path}: not a {CHECKPOINT_FORMAT} manifest")
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{manifest_path}: unsupported version {manifest.get('version')!r}"
        )
    tensors = {}
    for name in manifest["tensors"]:
        tensors[name] = _read_tensor(directory / f"{name}.bin")

    def read_names(path: Path) -> list[str]:
        if not path.is_file():
            return []
        with open(path, "r", encoding="utf-8") as fh:
            return [line.rstrip("\n") for line in fh]

    return Checkpoint(
        manifest=manifest,
        tensors=tensors,
        entities=read_names(directory / "entities.txt"),
        relations=read_names(directory / "relations.txt"),
    )


def model_from_checkpoint(ckpt: Checkpoint) -> EmbeddingModel:
    """Instantiate the model a checkpoint describes and load its tensors."""
    config = ckpt.config
    model = EmbeddingModel(
        config.model, ckpt.n_entities, ckpt.n_relations, RngState(0, "unused-init")
    )
    for name, p in model.named_parameters():
        key = f"model.{name}"
        if key not in ckpt.tensors:
            raise CheckpointError(f"checkpoint is missing tensor {key}")
        _assign(p.data, ckpt.tensors[key], key)
    for name, buf in model.named_buffers():
        key = f"model.{name}"
        if key not in ckpt.tensors:
            raise CheckpointError(f"checkpoint is missing tensor {key}")
        _assign(buf, ckpt.tensors[key], key)
    return model
