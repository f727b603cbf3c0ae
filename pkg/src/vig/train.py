"""Desk-scale training harness on synthetic image tasks.

Two task families, both with labels that are a deterministic function of
(seed, index):

* ``bars``  - classify the orientation of a single bright bar (32x32).
* ``blobs`` - two far-apart blobs, each bright or dark; the label says
  whether they match (96x96). The pooled features of any purely local model
  place the mismatched case exactly at the midpoint of the two matched
  cases, so solving it requires mixing information across distant tokens;
  this is the task used for the global-branch ablation.

The optimizer is AdamW (decoupled weight decay on matrices, none on biases,
gains or position embeddings) under a cosine learning-rate schedule.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autograd as F
from .autograd import Var
from .gla import DEFAULT_CHUNK
from .model import ViGConfig, init_vig_params, map_parameters, named_parameters, vig_forward
from .tensor_ops import softmax_rows


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; reported with the offending step."""


@dataclass
class SyntheticTask:
    family: str  # "bars" | "blobs"
    image_size: int
    num_classes: int = 2
    seed: int = 0
    noise: float = 0.05

    def __post_init__(self):
        if self.family not in ("bars", "blobs"):
            raise ValueError(f"unknown task family {self.family!r}")


def make_task(family: str, seed: int = 0) -> SyntheticTask:
    return SyntheticTask(family=family, image_size=32 if family == "bars" else 96,
                         seed=seed)


def _sample_rng(task: SyntheticTask, index: int) -> np.random.Generator:
    return np.random.default_rng([task.seed, index])


_FAR_PAIRS: dict[int, list] = {}


def _far_cell_pairs(g: int, min_dist: int = 4) -> list:
    """Ordered cell pairs at Chebyshev distance >= min_dist on a g x g grid.

    The distance floor keeps the two blobs outside each other's local
    receptive field (patch embedding overlap plus one 3x3 mix per block).
    """
    if g not in _FAR_PAIRS:
        cells = [(r, c) for r in range(g) for c in range(g)]
        _FAR_PAIRS[g] = [(a, b) for a in cells for b in cells
                         if max(abs(a[0] - b[0]), abs(a[1] - b[1])) >= min_dist]
        if not _FAR_PAIRS[g]:
            raise ValueError(f"grid {g}x{g} too small for blob separation")
    return _FAR_PAIRS[g]


def sample(task: SyntheticTask, index: int) -> tuple[np.ndarray, int]:
    """Deterministically generate example ``index`` of the task."""
    rng = _sample_rng(task, index)
    s = task.image_size
    img = rng.normal(0.0, task.noise, (s, s, 3))
    if task.family == "bars":
        label = int(rng.integers(2))  # 0 horizontal, 1 vertical
        width = 6
        offset = int(rng.integers(0, s - width))
        if label == 0:
            img[offset : offset + width, :, :] += 0.8
        else:
            img[:, offset : offset + width, :] += 0.8
        return img, label

    # blobs: two 12x12 patches in 16px grid cells at Chebyshev distance >= 4,
    # each bright (+) or dark (-); label 1 iff they match.
    g = s // 16
    pairs = _far_cell_pairs(g)
    (r1, c1), (r2, c2) = pairs[int(rng.integers(len(pairs)))]
    s1, s2 = (1.0 if rng.random() < 0.5 else -1.0 for _ in range(2))
    for (r, c), sign in (((r1, c1), s1), ((r2, c2), s2)):
        y, x = 16 * r + 2, 16 * c + 2
        img[y : y + 12, x : x + 12, :] += 0.9 * sign
    return img, int(s1 == s2)


def sample_batch(task: SyntheticTask, indices) -> tuple[np.ndarray, np.ndarray]:
    pairs = [sample(task, int(i)) for i in indices]
    return np.stack([p[0] for p in pairs]), np.array([p[1] for p in pairs])


def cross_entropy(logits: np.ndarray, label: int) -> tuple[float, np.ndarray]:
    """Single-instance loss -log softmax(logits)[label] and its gradient."""
    logits = np.asarray(logits, dtype=np.float64)
    if not 0 <= label < logits.shape[-1]:
        raise ValueError(f"label {label} out of range for {logits.shape[-1]} classes")
    p = softmax_rows(logits[None, :])[0]
    grad = p.copy()
    grad[label] -= 1.0
    m = logits.max()
    loss = float(m + np.log(np.exp(logits - m).sum()) - logits[label])
    return loss, grad


def cosine_lr(step: int, total_steps: int, base: float,
              minimum: float | None = None) -> float:
    if minimum is None:
        minimum = 0.01 * base
    if total_steps <= 1:
        return base
    t = min(step, total_steps - 1) / (total_steps - 1)
    return minimum + 0.5 * (base - minimum) * (1.0 + np.cos(np.pi * t))


class AdamW:
    """Decoupled-weight-decay Adam over named parameter arrays (in place)."""

    def __init__(self, param_names, betas=(0.9, 0.999), weight_decay=0.05,
                 eps=1e-8, no_decay=("pos_embed",)):
        self.b1, self.b2 = betas
        self.weight_decay = weight_decay
        self.eps = eps
        self.no_decay = set(no_decay)
        self.t = 0
        self.m = {n: None for n in param_names}
        self.v = {n: None for n in param_names}

    def _decays(self, name: str, arr: np.ndarray) -> bool:
        return arr.ndim >= 2 and name not in self.no_decay

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
             lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for name, theta in params.items():
            g = grads[name]
            if g is None:  # parameter unused by the ablated graph
                continue
            if self.m[name] is None:
                self.m[name] = np.zeros_like(theta)
                self.v[name] = np.zeros_like(theta)
            m, v = self.m[name], self.v[name]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            if self._decays(name, theta):
                update = update + self.weight_decay * theta
            theta -= lr * update


@dataclass
class MetricsRow:
    step: int
    loss: float
    lr: float
    heldout_acc: float | None = None


@dataclass
class TrainResult:
    history: list[MetricsRow]
    params: object
    config: ViGConfig
    final_acc: float
    steps_run: int


HELDOUT_BASE = 1_000_000


def heldout_set(task: SyntheticTask, n: int = 256) -> tuple[np.ndarray, np.ndarray]:
    return sample_batch(task, range(HELDOUT_BASE, HELDOUT_BASE + n))


def evaluate(params, config: ViGConfig, task: SyntheticTask, n: int = 256,
             chunk: int = DEFAULT_CHUNK, force_local: bool = False,
             batch: int = 64, data=None) -> float:
    imgs_all, labels_all = heldout_set(task, n) if data is None else data
    correct = 0
    for start in range(0, len(labels_all), batch):
        imgs = imgs_all[start : start + batch]
        labels = labels_all[start : start + batch]
        logits = vig_forward(imgs, params, config, chunk, force_local=force_local)
        correct += int((np.argmax(logits, axis=-1) == labels).sum())
    return correct / len(labels_all)


def train(config: ViGConfig, task: SyntheticTask, steps: int, seed: int = 0,
          batch_size: int = 32, lr: float = 1e-3, betas=(0.9, 0.999),
          weight_decay: float = 0.05, eval_every: int = 100, eval_size: int = 256,
          chunk: int = DEFAULT_CHUNK, force_local: bool = False,
          stop_at_acc: float | None = None) -> TrainResult:
    """Run the training loop; deterministic given (config, task, seed).

    Returns per-step loss plus periodic held-out accuracy. A non-finite loss
    raises TrainingDiverged rather than being swallowed.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    params = init_vig_params(config, seed=seed)
    arrays = dict(named_parameters(params))
    opt = AdamW(arrays.keys(), betas=betas, weight_decay=weight_decay)
    history: list[MetricsRow] = []
    acc = float("nan")
    steps_run = 0
    eval_data = None
    for step in range(steps):
        idx = range(seed * 100_000_000 + step * batch_size,
                    seed * 100_000_000 + (step + 1) * batch_size)
        imgs, labels = sample_batch(task, idx)
        vparams = map_parameters(params, Var)
        try:
            logits = vig_forward(imgs, vparams, config, chunk,
                                 force_local=force_local)
            loss = F.cross_entropy_mean(logits, labels)
        except (FloatingPointError, ValueError) as exc:
            # exploded activations trip the finite/gate-range guards mid-graph
            raise TrainingDiverged(f"non-finite forward at step {step}") from exc
        loss_val = float(loss.value)
        if not np.isfinite(loss_val):
            raise TrainingDiverged(f"loss became non-finite at step {step}")
        loss.backward()
        grads = {name: var.grad for name, var in named_parameters(vparams)}
        step_lr = cosine_lr(step, steps, lr)
        opt.step(arrays, grads, step_lr)
        steps_run = step + 1
        row = MetricsRow(step=step, loss=loss_val, lr=step_lr)
        if eval_every and (step + 1) % eval_every == 0:
            if eval_data is None:
                eval_data = heldout_set(task, eval_size)
            acc = evaluate(params, config, task, chunk=chunk,
                           force_local=force_local, data=eval_data)
            row.heldout_acc = acc
        history.append(row)
        if stop_at_acc is not None and row.heldout_acc is not None \
                and row.heldout_acc >= stop_at_acc:
            break
    if not history or history[-1].heldout_acc is None:
        if eval_data is None:
            eval_data = heldout_set(task, eval_size)
        acc = evaluate(params, config, task, chunk=chunk,
                       force_local=force_local, data=eval_data)
        if history:
            history[-1].heldout_acc = acc
    return TrainResult(history=history, params=params, config=config,
                       final_acc=acc, steps_run=steps_run)


def metrics_csv(history: list[MetricsRow]) -> str:
    """Serialize the metrics history: step, loss, lr, heldout_acc."""
    lines = ["step,loss,lr,heldout_acc"]
    for row in history:
        acc = "" if row.heldout_acc is None else f"{row.heldout_acc:.6f}"
        lines.append(f"{row.step},{row.loss:.9g},{row.lr:.9g},{acc}")
    return "\n".join(lines) + "\n"
