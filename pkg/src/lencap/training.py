"""Teacher-forced training with ground-truth length (or duration bin) codes.

Each sample is conditioned on k = its own token count (tokens mode) or its
duration bin (duration mode). Loss is next-token cross-entropy over the full
sequence including EOS; the optimizer steps once per `accumulation_steps`
micro-batches (AdamW, decoupled decay).
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import OptimizerState, Tape, adamw_step, zero_grads
from .corpus import BOS, EOS, Sample, Vocabulary
from .decoder import CaptionModel, ModelConfig
from .lengthcodes import discretize_duration, encode_length


class CheckpointError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 5
    batch_size: int = 4
    accumulation_steps: int = 8
    learning_rate: float = 1e-4
    weight_decay: float = 5e-4
    control_mode: str = "tokens"
    scheme: str = "ordinal"
    seed: int = 0
    grad_clip: float | None = None

    def __post_init__(self):
        if self.control_mode not in ("tokens", "duration"):
            raise ValueError(f"unknown control mode: {self.control_mode!r}")
        if min(self.epochs, self.batch_size, self.accumulation_steps) < 1:
            raise ValueError("epochs, batch size and accumulation steps must be >= 1")


def control_index(sample: Sample, mode: str, K: int) -> int:
    """The conditioning index for one sample: its length or duration bin."""
    if mode == "tokens":
        return min(max(sample.length, 1), K)
    return discretize_duration(sample.duration, K=K)


def sample_loss(model: CaptionModel, sample: Sample, k: int):
    code = encode_length(k, model.config.K, model.config.scheme)
    input_ids = [BOS] + list(sample.tokens)
    targets = list(sample.tokens) + [EOS]
    logits = model.forward_teacher_forced(input_ids, sample.condition, code)
    return ad.softmax_cross_entropy(logits, targets)


def corpus_loss(model: CaptionModel, samples, mode: str) -> float:
    """Mean per-sample loss without recording gradients."""
    total = 0.0
    for s in samples:
        total += float(sample_loss(model, s, control_index(s, mode, model.config.K)).data)
    return total / len(samples)


def _usable(samples, max_seq_len: int):
    kept = []
    for s in samples:
        if len(s.tokens) + 1 > max_seq_len:
            warnings.warn(f"dropping sample with {len(s.tokens)} tokens "
                          f"(max_seq_len={max_seq_len})")
        elif not s.tokens:
            warnings.warn("dropping empty sample")
        else:
            kept.append(s)
    return kept


def train(model: CaptionModel, samples: list[Sample], cfg: TrainConfig,
          vocab: Vocabulary | None = None, heldout: list[Sample] | None = None,
          on_sample=None) -> list[dict]:
    """Train in place; returns one metrics row per optimizer step plus
    per-epoch rows (and held-out loss when a held-out split is given)."""
    if vocab is not None and model.vocab_hash and vocab.content_hash() != model.vocab_hash:
        raise ValueError("vocabulary hash mismatch: corpus was tokenized with a "
                         "different vocabulary than the model was built for")
    if cfg.scheme != model.config.scheme:
        raise ValueError(f"config scheme {cfg.scheme!r} != model scheme "
                         f"{model.config.scheme!r}")
    data = _usable(samples, model.config.max_seq_len)
    if not data:
        raise ValueError("no usable training samples")

    params = model.trainable_params()
    state = OptimizerState(learning_rate=cfg.learning_rate,
                           weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    rows: list[dict] = []
    step = 0
    window_losses: list[float] = []
    zero_grads(params)

    def flush(epoch):
        nonlocal step, window_losses
        if len(window_losses) < cfg.accumulation_steps:
            # tail window: undo the 1/accumulation_steps pre-scaling
            factor = cfg.accumulation_steps / len(window_losses)
            for p in params.values():
                if p.grad is not None:
                    p.grad = p.grad * factor
        if cfg.grad_clip is not None:
            ad.clip_grad_norm(params, cfg.grad_clip)
        adamw_step(params, state)
        zero_grads(params)
        step += 1
        rows.append({"step": step, "epoch": epoch,
                     "loss": float(np.mean(window_losses)),
                     "lr": cfg.learning_rate})
        window_losses = []

    for epoch in range(cfg.epochs):
        order = rng.permutation(len(data))
        epoch_losses = []
        for start in range(0, len(order), cfg.batch_size):
            batch = [data[i] for i in order[start:start + cfg.batch_size]]
            entries, targets = [], []
            for s in batch:
                k = control_index(s, cfg.control_mode, model.config.K)
                if on_sample is not None:
                    on_sample(s, k)
                code = encode_length(k, model.config.K, model.config.scheme)
                entries.append(([BOS] + list(s.tokens), s.condition, code))
                targets.extend(list(s.tokens) + [EOS])
            with Tape() as tape:
                loss = ad.softmax_cross_entropy(model.forward_batch(entries), targets)
                scaled = ad.scale(loss, 1.0 / cfg.accumulation_steps)
            tape.backward(scaled)
            batch_loss = float(loss.data)
            if not np.isfinite(batch_loss):
                raise FloatingPointError("non-finite training loss")
            window_losses.append(batch_loss)
            epoch_losses.append(batch_loss)
            if len(window_losses) == cfg.accumulation_steps:
                flush(epoch)
        row = {"step": step, "epoch": epoch,
               "loss": float(np.mean(epoch_losses)), "lr": cfg.learning_rate,
               "kind": "epoch"}
        if heldout:
            row["heldout_loss"] = corpus_loss(model, heldout, cfg.control_mode)
        rows.append(row)
    if window_losses:
        flush(cfg.epochs - 1)
    return rows


def write_metrics_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "epoch", "loss", "lr"])
        for r in rows:
            writer.writerow([r["step"], r["epoch"], repr(r["loss"]), repr(r["lr"])])


# ---------------------------------------------------------------------------
# checkpointing


CHECKPOINT_VERSION = 1


def save_checkpoint(model: CaptionModel, directory, vocab: Vocabulary | None = None) -> None:
    """Manifest plus one flat little-endian f64 file per named parameter."""
    from pathlib import Path
    out = Path(directory)
    (out / "params").mkdir(parents=True, exist_ok=True)
    c = model.config
    lines = [
        "format=lencap-checkpoint",
        f"version={CHECKPOINT_VERSION}",
        f"scheme={c.scheme}",
        f"vocab_size={c.vocab_size}",
        f"layers={c.layers}",
        f"heads={c.heads}",
        f"d={c.d}",
        f"d_ff={c.d_ff}",
        f"max_seq_len={c.max_seq_len}",
        f"d_cond={c.d_cond}",
        f"K={c.K}",
        f"positional={c.positional}",
        f"activation={c.activation}",
        f"mlp_hidden={'' if c.mlp_hidden is None else ','.join(map(str, c.mlp_hidden))}",
        f"vocab_hash={model.vocab_hash}",
    ]
    for name, p in model.params.items():
        lines.append(f"param.{name}={'x'.join(map(str, p.shape))}")
        p.data.astype("<f8").tofile(out / "params" / f"{name}.f64")
    (out / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    if vocab is not None:
        vocab.save(out / "vocab.txt")


def load_checkpoint(directory, expect_scheme: str | None = None) -> CaptionModel:
    from pathlib import Path
    src = Path(directory)
    manifest_path = src / "manifest.txt"
    if not manifest_path.exists():
        raise CheckpointError(f"no manifest at {manifest_path}")
    fields: dict[str, str] = {}
    shapes: dict[str, tuple[int, ...]] = {}
    for line in manifest_path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        if "=" not in line:
            raise CheckpointError(f"malformed manifest line: {line!r}")
        key, value = line.split("=", 1)
        if key.startswith("param."):
            shapes[key[len("param."):]] = tuple(int(v) for v in value.split("x"))
        else:
            fields[key] = value
    if fields.get("format") != "lencap-checkpoint":
        raise CheckpointError("not a lencap checkpoint manifest")
    if int(fields.get("version", -1)) != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {fields.get('version')}")
    if expect_scheme is not None and fields["scheme"] != expect_scheme:
        raise CheckpointError(f"checkpoint scheme {fields['scheme']!r} does not match "
                              f"required scheme {expect_scheme!r}")
    mlp_hidden = fields.get("mlp_hidden", "")
    config = ModelConfig(
        vocab_size=int(fields["vocab_size"]),
        layers=int(fields["layers"]),
        heads=int(fields["heads"]),
        d=int(fields["d"]),
        d_ff=int(fields["d_ff"]),
        max_seq_len=int(fields["max_seq_len"]),
        d_cond=int(fields["d_cond"]),
        scheme=fields["scheme"],
        K=int(fields["K"]),
        positional=fields["positional"],
        activation=fields["activation"],
        mlp_hidden=tuple(int(v) for v in mlp_hidden.split(",")) if mlp_hidden else None,
    )
    model = CaptionModel(config, np.random.default_rng(0),
                         vocab_hash=fields.get("vocab_hash", ""))
    if set(shapes) != set(model.params):
        missing = set(model.params) - set(shapes)
        extra = set(shapes) - set(model.params)
        raise CheckpointError(f"parameter set mismatch (missing={sorted(missing)}, "
                              f"unexpected={sorted(extra)})")
    for name, shape in shapes.items():
        path = src / "params" / f"{name}.f64"
        if not path.exists():
            raise CheckpointError(f"missing parameter file {path}")
        arr = np.fromfile(path, dtype="<f8")
        expected = int(np.prod(shape))
        if arr.size != expected:
            raise CheckpointError(f"parameter {name} has {arr.size} values, "
                                  f"expected {expected}")
        model.params[name].data = arr.astype(np.float64).reshape(shape)
    return model
