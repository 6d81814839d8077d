"""Attack decoders and the reactive / proactive training protocols.

The adversary sees whatever the encoder releases. An inversion decoder tries
to rebuild the input image from those features; a property classifier tries
to recover a hidden attribute. In the reactive setting the user's model is
fixed before the decoder trains. In the proactive setting the two alternate:
the encoder is pushed to keep task accuracy while making the current decoder
fail.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .engine import Tensor, backward, make_optimizer, no_grad, ops
from .engine.losses import cross_entropy, kl_soft, mse, ssim_map
from .errors import ConfigError, DataError, StructureError
from .ir.cost import partition_split, perf_indicators
from .ir.graph import LayerSpec, ModelGraph
from .metrics import (MetricsReport, SsimParams, accuracy, blind_normalizer, l2_errors,
                      privacy_p0, privacy_p1, privacy_p2, reward)

ATTACK_KINDS = ("inversion-mse", "inversion-ssim", "property-inference")
P_VARIANT = {"inversion-mse": "p0", "inversion-ssim": "p1", "property-inference": "p2"}

FeatureFn = Callable[[np.ndarray, np.random.Generator], np.ndarray]


@dataclass(frozen=True)
class AttackSpec:
    kind: str = "inversion-ssim"
    epochs: int = 20
    lr: float = 3e-3
    batch_size: int = 32
    hidden_classes: int = 2
    ssim: SsimParams = field(default_factory=SsimParams)

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ConfigError(f"unknown attack kind {self.kind!r}; choose from {ATTACK_KINDS}")
        if self.epochs < 0 or self.lr <= 0 or self.batch_size < 1:
            raise ConfigError("attack epochs must be >= 0, lr > 0, batch_size >= 1")
        if self.hidden_classes < 2:
            raise ConfigError("property inference needs at least 2 hidden classes")

    @property
    def p_variant(self) -> str:
        return P_VARIANT[self.kind]


@dataclass(frozen=True)
class TrainSchedule:
    cloud_epochs: int = 1
    decoder_epochs: int = 1
    encoder_epochs: int = 1
    rounds: int = 1
    alpha: float = 0.5
    temperature: float = 4.0
    lr: float = 1e-3
    decoder_lr_scale: float = 0.5
    privacy_weight: float = 1.0
    batch_size: int = 32
    optimizer: str = "adam"
    seed: int = 0

    def __post_init__(self):
        if min(self.cloud_epochs, self.decoder_epochs, self.encoder_epochs, self.rounds) < 0:
            raise ConfigError("epoch and round counts must be >= 0")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"distillation alpha must be in [0, 1], got {self.alpha}")
        if self.temperature <= 0 or self.lr <= 0 or self.decoder_lr_scale <= 0:
            raise ConfigError("temperature and learning rates must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")


@dataclass
class TrainedModels:
    model: ModelGraph
    encoder: ModelGraph
    cloud: ModelGraph
    decoder: Optional[ModelGraph]
    aux_images: np.ndarray
    feature_fn: Optional[FeatureFn] = None
    history: dict = field(default_factory=dict)
    seed: int = 0


# ------------------------------------------------------------------ builders

def _mirror(layer: LayerSpec, shape_in: tuple, shape_out: tuple, name: str) -> list:
    k, h = layer.kind, layer.hyper
    if k == "conv":
        s, p, kk = h.get("stride", 1), h.get("padding", 0), h["k"]
        natural = (shape_out[1] - 1) * s - 2 * p + kk
        extra = shape_in[1] - natural
        if extra < 0 or shape_in[2] - ((shape_out[2] - 1) * s - 2 * p + kk) != extra:
            raise StructureError(f"cannot mirror conv layer {layer.index} with a transposed conv")
        return [LayerSpec(0, "convT", {"cin": h["cout"], "cout": h["cin"], "k": kk, "stride": s,
                                       "padding": p, "output_padding": extra}, name)]
    if k == "fire-expand":
        return [LayerSpec(0, "convT", {"cin": h["cout"], "cout": h["cin"], "k": 3, "stride": 1,
                                       "padding": 1}, name)]
    if k == "fc":
        return [LayerSpec(0, "fc", {"cin": h["cout"], "cout": h["cin"]}, name)]
    if k == "pool":
        return [LayerSpec(0, "upsample", {"out_h": shape_in[1], "out_w": shape_in[2]}, name)]
    if k == "flatten":
        return [LayerSpec(0, "unflatten", {"shape": list(shape_in)}, name)]
    if k in ("relu", "batchnorm", "dropout", "residual-add", "sigmoid"):
        return []
    raise StructureError(f"layer kind {k!r} has no inverse")


def build_inverse_decoder(encoder: ModelGraph, rng: Optional[np.random.Generator] = None) -> ModelGraph:
    """Mirror the encoder layer by layer so the output matches its input shape."""
    if not encoder.layers:
        raise StructureError("nothing to invert: the encoder is empty")
    layers = []
    for layer in reversed(encoder.layers):
        mirrored = _mirror(layer, encoder.shapes[layer.index], encoder.shapes[layer.index + 1],
                           f"dec{len(layers)}")
        for m in mirrored:
            if m.kind in ("convT", "fc") and any(d.kind in ("convT", "fc") for d in layers):
                layers.append(LayerSpec(0, "relu", {}, f"dec{len(layers)}"))
            m.name = f"dec{len(layers)}"
            layers.append(m)
    if not any(layer.kind in ("convT", "fc") for layer in layers):
        if all(layer.kind == "unflatten" for layer in layers):
            # pure reshapes invert exactly; keep the identity exact
            layers = [LayerSpec(0, "unflatten", {"shape": list(encoder.input_shape)}, "dec0")]
            return ModelGraph(layers, encoder.output_shape, name=f"{encoder.name}.decoder",
                              dtype=encoder.dtype)
        c = encoder.input_shape[0]
        layers.append(LayerSpec(0, "convT", {"cin": c, "cout": c, "k": 1}, f"dec{len(layers)}"))
    layers.append(LayerSpec(0, "sigmoid", {}, f"dec{len(layers)}"))
    dec = ModelGraph(layers, encoder.output_shape, name=f"{encoder.name}.decoder", dtype=encoder.dtype)
    dec.init_params(rng if rng is not None else np.random.default_rng(0))
    if dec.output_shape != encoder.input_shape:
        raise StructureError(f"decoder output {dec.output_shape} != encoder input {encoder.input_shape}")
    return dec


def build_property_classifier(feature_shape, classes: int, hidden: int = 32,
                              rng: Optional[np.random.Generator] = None, dtype=np.float32) -> ModelGraph:
    """Global-average-pool head for spatial features, two-layer MLP for flat ones."""
    if classes < 2:
        raise ConfigError("property classifier needs at least 2 classes")
    feature_shape = tuple(feature_shape)
    if len(feature_shape) == 3:
        width = feature_shape[0]
        layers = [LayerSpec(0, "pool", {"mode": "global-avg"}, "prop0"),
                  LayerSpec(1, "flatten", {}, "prop1")]
    else:
        width = int(np.prod(feature_shape))
        layers = [] if len(feature_shape) == 1 else [LayerSpec(0, "flatten", {}, "prop1")]
    n = len(layers)
    layers += [LayerSpec(n, "fc", {"cin": width, "cout": hidden}, f"prop{n + 2}"),
               LayerSpec(n + 1, "relu", {}, f"prop{n + 3}"),
               LayerSpec(n + 2, "fc", {"cin": hidden, "cout": classes}, f"prop{n + 4}")]
    head = ModelGraph(layers, feature_shape, name="property-head", dtype=dtype)
    head.init_params(rng if rng is not None else np.random.default_rng(0))
    return head


# ------------------------------------------------------------------ losses

def distillation_loss(student_logits: Tensor, hard_labels, teacher_logits: Optional[np.ndarray],
                      alpha: float, temperature: float) -> Tensor:
    """alpha * CE(hard) + (1 - alpha) * T^2 * KL(teacher_T || student_T)."""
    if not 0.0 <= alpha <= 1.0 or temperature <= 0:
        raise ConfigError("distillation needs alpha in [0, 1] and temperature > 0")
    ce = cross_entropy(student_logits, hard_labels)
    if teacher_logits is None or alpha == 1.0:
        return ce
    kl = kl_soft(student_logits, teacher_logits, temperature)
    soft = ops.mul(kl, (1.0 - alpha) * temperature ** 2)
    return soft if alpha == 0.0 else ops.add(ops.mul(ce, alpha), soft)


def _attack_loss(out: Tensor, target, attack: AttackSpec) -> Tensor:
    if attack.kind == "inversion-mse":
        return mse(out, target)
    if attack.kind == "inversion-ssim":
        p = attack.ssim
        return ops.neg(ops.mean(ssim_map(out, Tensor(np.asarray(target, out.dtype)), p.window, p.c1, p.c2)))
    return cross_entropy(out, target)


def _privacy_surrogate(out: Tensor, target, attack: AttackSpec) -> Tensor:
    """Quantity the encoder minimizes to hurt the decoder (bounded in every case)."""
    if attack.kind == "inversion-mse":
        return ops.neg(mse(out, target))
    if attack.kind == "inversion-ssim":
        return ops.neg(_attack_loss(out, target, attack))
    return ops.neg(ops.minimum(cross_entropy(out, target), math.log(attack.hidden_classes)))


# ------------------------------------------------------------------ training helpers

@contextmanager
def frozen(*graphs: ModelGraph):
    """Temporarily stop gradient flow into the parameters of ``graphs``."""
    params = [p for g in graphs for p in g.params.values()]
    saved = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, flag in zip(params, saved):
            p.requires_grad = flag


def predict(g: ModelGraph, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Eval-mode forward pass in batches without recording gradients."""
    if len(x) == 0:
        return np.zeros((0,) + tuple(g.output_shape), dtype=g.dtype)
    with no_grad():
        return np.concatenate([g(x[i:i + batch_size]).data for i in range(0, len(x), batch_size)])


def encode_features(encoder: ModelGraph, images: np.ndarray, feature_fn: Optional[FeatureFn] = None,
                    rng: Optional[np.random.Generator] = None) -> np.ndarray:
    feats = predict(encoder, images)
    if feature_fn is not None:
        feats = feature_fn(feats, rng if rng is not None else np.random.default_rng(0))
    return feats.astype(encoder.dtype, copy=False)


def _fit(params: list, step_loss: Callable[[np.ndarray], Tensor], n: int, epochs: int,
         batch_size: int, lr: float, kind: str, rng: np.random.Generator) -> list:
    """Minibatch training; returns the mean loss of each epoch."""
    params = [p for p in params if p.requires_grad]
    if not params or epochs == 0 or n == 0:
        return []
    opt = make_optimizer(params, kind, lr)
    history = []
    for _ in range(epochs):
        total, count = 0.0, 0
        for idx in np.array_split(rng.permutation(n), max(1, math.ceil(n / batch_size))):
            loss = step_loss(idx)
            backward(loss)
            opt.step()
            opt.zero_grad()
            total += loss.item() * len(idx)
            count += len(idx)
        history.append(total / count)
    return history


def train_attacker(encoder: ModelGraph, attack: AttackSpec, aux_images: np.ndarray,
                   aux_hidden: Optional[np.ndarray], rng: np.random.Generator,
                   decoder: Optional[ModelGraph] = None, feature_fn: Optional[FeatureFn] = None,
                   epochs: Optional[int] = None, lr: Optional[float] = None) -> tuple:
    """Fit (or keep fitting) the adversary's decoder against a frozen encoder."""
    if len(aux_images) == 0:
        raise DataError("auxiliary set is empty")
    if attack.kind == "property-inference" and aux_hidden is None:
        raise DataError("property inference needs hidden-attribute labels in the aux set")
    if decoder is None:
        if attack.kind == "property-inference":
            decoder = build_property_classifier(encoder.output_shape, attack.hidden_classes,
                                                rng=rng, dtype=encoder.dtype)
        elif encoder.layers:
            decoder = build_inverse_decoder(encoder, rng)
        else:
            return None, []  # raw input released: the identity reconstructs it exactly
    feats = encode_features(encoder, aux_images, feature_fn, rng)
    target = aux_hidden if attack.kind == "property-inference" else aux_images

    def step(idx):
        return _attack_loss(decoder(Tensor(feats[idx]), train=True, rng=rng), target[idx], attack)

    hist = _fit(list(decoder.params.values()), step, len(feats),
                attack.epochs if epochs is None else epochs, attack.batch_size,
                attack.lr if lr is None else lr, "adam", rng)
    return decoder, hist


def _teacher_logits(teacher: Optional[ModelGraph], images: np.ndarray) -> Optional[np.ndarray]:
    return None if teacher is None else predict(teacher, images)


def split_arrays(data, name):
    images, coarse, fine = data.split(name)
    return np.asarray(images), np.asarray(coarse), None if fine is None else np.asarray(fine)


def _hidden(attack: AttackSpec, fine):
    if attack.kind == "property-inference" and fine is None:
        raise DataError("property inference needs hidden-attribute labels")
    return fine


def model_accuracy(trained: TrainedModels, images: np.ndarray, labels: np.ndarray) -> float:
    rng = np.random.default_rng([trained.seed, 17])
    feats = encode_features(trained.encoder, images, trained.feature_fn, rng)
    logits = predict(trained.cloud, feats)
    return accuracy(logits.argmax(axis=1), labels)


# ------------------------------------------------------------------ protocols

def train_reactive(composed: ModelGraph, attack: AttackSpec, sched: TrainSchedule, data,
                   teacher: Optional[ModelGraph] = None, a_base: float = 1.0, s_variant: str = "s1",
                   feature_fn: Optional[FeatureFn] = None) -> tuple:
    """Train the user's model for accuracy, then attack its frozen encoder."""
    x_tr, y_tr, _ = split_arrays(data, "train")
    x_aux, _, h_aux = split_arrays(data, "aux")
    if len(x_aux) == 0:
        raise DataError("auxiliary set is empty")
    h_aux = _hidden(attack, h_aux)
    rng = np.random.default_rng(sched.seed)
    encoder, cloud = partition_split(composed)
    t_logits = _teacher_logits(teacher, x_tr)

    def step(idx):
        out = composed(x_tr[idx], train=True, rng=rng)
        return distillation_loss(out, y_tr[idx], None if t_logits is None else t_logits[idx],
                                 sched.alpha, sched.temperature)

    task_hist = _fit(composed.parameters(), step, len(x_tr), sched.cloud_epochs, sched.batch_size,
                     sched.lr, sched.optimizer, rng)
    decoder, dec_hist = train_attacker(encoder, attack, x_aux, h_aux, rng, feature_fn=feature_fn)
    trained = TrainedModels(composed, encoder, cloud, decoder, x_aux, feature_fn,
                            {"task": task_hist, "decoder": dec_hist}, sched.seed)
    return trained, score_trained(trained, attack, data, a_base, s_variant)


def train_proactive(composed: ModelGraph, attack: AttackSpec, sched: TrainSchedule, data,
                    teacher: Optional[ModelGraph] = None, a_base: float = 1.0,
                    s_variant: str = "s1") -> tuple:
    """Run ``sched.rounds`` rounds of the alternating cloud/decoder/encoder schedule."""
    x_tr, y_tr, h_tr = split_arrays(data, "train")
    x_aux, _, h_aux = split_arrays(data, "aux")
    if len(x_aux) == 0:
        raise DataError("auxiliary set is empty")
    h_aux, h_tr = _hidden(attack, h_aux), _hidden(attack, h_tr)
    rng = np.random.default_rng(sched.seed)
    encoder, cloud = partition_split(composed)
    t_logits = _teacher_logits(teacher, x_tr)
    dec_lr = sched.lr * sched.decoder_lr_scale
    history = {"cloud": [], "decoder": [], "encoder": []}
    decoder = None

    def soft(idx):
        return None if t_logits is None else t_logits[idx]

    for _ in range(sched.rounds):
        feats = encode_features(encoder, x_tr)

        def cloud_step(idx):
            return distillation_loss(cloud(Tensor(feats[idx]), train=True, rng=rng), y_tr[idx],
                                     soft(idx), sched.alpha, sched.temperature)

        history["cloud"] += _fit(cloud.parameters(), cloud_step, len(x_tr), sched.cloud_epochs,
                                 sched.batch_size, sched.lr, sched.optimizer, rng)
        decoder, hist = train_attacker(encoder, attack, x_aux, h_aux, rng, decoder,
                                       epochs=sched.decoder_epochs, lr=dec_lr)
        history["decoder"] += hist
        if decoder is None:
            continue  # empty encoder: nothing to defend with
        adv_target = h_tr if attack.kind == "property-inference" else x_tr

        def encoder_step(idx):
            z = encoder(x_tr[idx], train=True, rng=rng)
            task = distillation_loss(cloud(z), y_tr[idx], soft(idx), sched.alpha, sched.temperature)
            leak = _privacy_surrogate(decoder(z), adv_target[idx], attack)
            return ops.add(task, ops.mul(leak, sched.privacy_weight))

        with frozen(cloud, decoder):
            history["encoder"] += _fit(encoder.parameters(), encoder_step, len(x_tr),
                                       sched.encoder_epochs, sched.batch_size, sched.lr,
                                       sched.optimizer, rng)
    # the persistent adversary gets its full budget against the final encoder
    decoder, hist = train_attacker(encoder, attack, x_aux, h_aux, rng, decoder)
    history["decoder"] += hist
    trained = TrainedModels(composed, encoder, cloud, decoder, x_aux, None, history, sched.seed)
    return trained, score_trained(trained, attack, data, a_base, s_variant)


def evaluate_attack(trained: TrainedModels, attack: AttackSpec, eval_split) -> float:
    """Privacy loss of the trained adversary on held-out ``(images, labels, hidden)``."""
    images, _, hidden = eval_split
    images = np.asarray(images)
    rng = np.random.default_rng([trained.seed, 29])
    feats = encode_features(trained.encoder, images, trained.feature_fn, rng)
    if attack.kind == "property-inference":
        if hidden is None:
            raise DataError("property inference needs hidden-attribute labels")
        return privacy_p2(lambda _: predict(trained.decoder, feats).argmax(axis=1), images, hidden)
    recons = images if trained.decoder is None else predict(trained.decoder, feats)
    if attack.kind == "inversion-mse":
        err = float(l2_errors(images, recons).mean())
        return privacy_p0(err, blind_normalizer(trained.aux_images, images))
    return privacy_p1(lambda _: recons, images, attack.ssim)


def score_trained(trained: TrainedModels, attack: AttackSpec, data, a_base: float, s_variant: str) -> MetricsReport:
    x_ev, y_ev, h_ev = split_arrays(data, "eval")
    A = model_accuracy(trained, x_ev, y_ev)
    P = evaluate_attack(trained, attack, (x_ev, y_ev, h_ev))
    s1, s2 = perf_indicators(trained.model)
    if s_variant not in ("s1", "s2"):
        raise ConfigError(f"unknown performance indicator {s_variant!r}")
    S = s1 if s_variant == "s1" else s2
    return reward(A, a_base, P, S, P_variant=attack.p_variant, S_variant=s_variant)


def with_cr(report: MetricsReport, cr: float) -> MetricsReport:
    return replace(report, CR=cr)


__all__ = [
    "ATTACK_KINDS", "AttackSpec", "TrainSchedule", "TrainedModels", "build_inverse_decoder",
    "build_property_classifier", "distillation_loss", "encode_features", "evaluate_attack",
    "frozen", "model_accuracy", "predict", "score_trained", "split_arrays", "train_attacker",
    "train_proactive", "train_reactive", "with_cr",
]
