"""Training losses: cross-entropy, counterfactual and factual terms, the
input-gradient saliency penalty, FGSM on the background, mixup and label
smoothing, and the assembler that sums whichever terms are enabled.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import augment
from .nnet import autodiff as ad
from .nnet.autodiff import Tensor

P_MAX = 1.0 - 1e-7
_NEG = -1e9


@dataclass
class LossConfig:
    cf_enabled: bool = False
    cf_infill: str = "grey"
    cf_variant: int = 1
    cf_region: str = "bbox"
    f_enabled: bool = False
    f_infill: str = "shuffle"
    f_region: str = "mask"
    sal_enabled: bool = False
    lambda_sal: float = 1.0
    fgsm_eps: float = 0.5
    mixup_alpha: float = 0.0
    label_smoothing: float = 0.0

    def __post_init__(self):
        if self.lambda_sal < 0:
            raise ValueError("lambda_sal must be non-negative")
        if self.fgsm_eps < 0:
            raise ValueError("fgsm_eps must be non-negative")
        if not 0 <= self.label_smoothing < 1:
            raise ValueError("label_smoothing must be in [0, 1)")
        if self.mixup_alpha < 0:
            raise ValueError("mixup_alpha must be non-negative")
        if self.cf_variant not in (1, 2, 3):
            raise ValueError("cf_variant must be 1, 2 or 3")
        if self.cf_infill not in augment.CF_METHODS:
            raise ValueError(f"unknown cf_infill {self.cf_infill!r}")
        if self.f_infill not in augment.F_METHODS:
            raise ValueError(f"unknown f_infill {self.f_infill!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Batch:
    """Images in [0, 1] (N, H, W, C), boolean regions (N, H, W), integer labels."""

    images: np.ndarray
    regions: np.ndarray
    labels: np.ndarray
    ids: list = field(default_factory=list)
    cf_images: np.ndarray | None = None  # precomputed deterministic counterfactuals

    def __len__(self) -> int:
        return len(self.labels)


# ---------------------------------------------------------------- helpers
def _logits(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _labels(y, k: int) -> np.ndarray:
    y = np.atleast_1d(np.asarray(y))
    if y.dtype.kind not in "iu" or np.any(y < 0) or np.any(y >= k):
        raise ValueError(f"labels must be integers in [0, {k})")
    return y


def _onehot(y: np.ndarray, k: int, dtype) -> np.ndarray:
    return np.eye(k, dtype=dtype)[y]


def _as_batch(logits: Tensor) -> Tensor:
    return ad.reshape(logits, (1, logits.shape[0])) if logits.ndim == 1 else logits


# ----------------------------------------------------------------- losses
def cross_entropy(logits, y) -> Tensor:
    """Mean of -log softmax(logits)[y]."""
    logits = _as_batch(_logits(logits))
    y = _labels(y, logits.shape[1])
    picked = ad.sum_(ad.log_softmax(logits) * Tensor(_onehot(y, logits.shape[1], logits.dtype)), axis=1)
    return -ad.sum_(picked) * (1.0 / len(y))


def counterfactual_loss(logits, y, variant: int = 1) -> Tensor:
    """Loss on an image whose causal region was removed (label "not y").

    1: -log(1 - p_y), with p_y capped at 1 - 1e-7
    2: KL(uniform over all K || p)
    3: KL(uniform over the K - 1 classes other than y || p)
    """
    logits = _as_batch(_logits(logits))
    n, k = logits.shape
    y = _labels(y, k)
    oh = _onehot(y, k, logits.dtype)
    if variant == 1:
        # log(1 - p_y) = logsumexp(non-y logits) - logsumexp(all logits)
        per = ad.logsumexp(logits) - ad.logsumexp(logits + Tensor(_NEG * oh))
        capped = per.data > -np.log1p(-P_MAX)
        per = per * Tensor((~capped).astype(logits.dtype)) + Tensor(np.where(capped, -np.log1p(-P_MAX), 0.0).astype(logits.dtype))
        return ad.sum_(per) * (1.0 / n)
    logp = ad.log_softmax(logits)
    if variant == 2:
        per = -np.log(k) - ad.sum_(logp, axis=1) * (1.0 / k)
    elif variant == 3:
        w = (1.0 - oh) / (k - 1)
        per = -np.log(k - 1) - ad.sum_(logp * Tensor(w), axis=1)
    else:
        raise ValueError(f"unknown counterfactual loss variant {variant}")
    return ad.sum_(per) * (1.0 / n)


def label_smooth_ce(logits, y, eps_ls: float, num_classes: int | None = None) -> Tensor:
    """Cross-entropy against (1 - eps) on y and eps / (K - 1) elsewhere."""
    if not 0 <= eps_ls < 1:
        raise ValueError("label smoothing must be in [0, 1)")
    logits = _as_batch(_logits(logits))
    k = num_classes or logits.shape[1]
    y = _labels(y, k)
    target = np.full((len(y), k), eps_ls / (k - 1), dtype=logits.dtype)
    target[np.arange(len(y)), y] = 1.0 - eps_ls
    return -ad.sum_(ad.log_softmax(logits) * Tensor(target)) * (1.0 / len(y))


def mixup(images, labels, alpha: float, rng: np.random.Generator, lam: float | None = None):
    """Convex pairing of each example with a random partner.

    Returns (mixed, labels_a, labels_b, lam) with lam ~ Beta(alpha, alpha)
    unless given.
    """
    images = np.asarray(images)
    if len(images) < 2:
        raise ValueError("mixup needs a batch of at least two")
    if lam is None:
        if alpha <= 0:
            raise ValueError("mixup alpha must be positive")
        lam = float(rng.beta(alpha, alpha))
    perm = rng.permutation(len(images))
    mixed = lam * images + (1.0 - lam) * images[perm]
    return mixed, np.asarray(labels), np.asarray(labels)[perm], lam


def mixup_loss(logits, labels_a, labels_b, lam: float) -> Tensor:
    return cross_entropy(logits, labels_a) * lam + cross_entropy(logits, labels_b) * (1.0 - lam)


# --------------------------------------------------------- input gradients
def saliency_penalty_from_gradient(gradient, region, lam: float) -> float:
    """lam * sum_j g_j^2 (1 - r_j) / sum_j (1 - r_j) for one (H, W, C) gradient."""
    gradient = np.asarray(gradient, dtype=np.float64)
    if gradient.ndim == 2:
        gradient = gradient[..., None]
    bg = np.broadcast_to(~np.asarray(region, dtype=bool)[..., None], gradient.shape)
    denom = bg.sum()
    if denom == 0:
        return 0.0
    return float(lam * (gradient ** 2 * bg).sum() / denom)


def saliency_penalty(net, images, regions, y, lam: float) -> Tensor:
    """Differentiable mean over the batch of the background input-gradient penalty.

    ``images`` are normalized (N, H, W, C); the gradient is of the target-class
    logit. Images with no background contribute 0.
    """
    images = np.asarray(images, dtype=net.dtype)
    if images.ndim == 3:
        images, regions, y = images[None], np.asarray(regions)[None], np.atleast_1d(y)
    y = _labels(y, net.num_classes)
    if lam == 0:
        return Tensor(np.zeros((), dtype=net.dtype))
    x = Tensor(images, requires_grad=True)
    logits = net.forward(x)
    target = ad.sum_(logits * Tensor(_onehot(y, net.num_classes, net.dtype)))
    (g,) = ad.grad(target, [x], create_graph=True)
    bg = (~np.asarray(regions, dtype=bool))[..., None].astype(net.dtype)
    counts = bg.sum(axis=(1, 2, 3)) * images.shape[-1]
    weights = np.divide(np.broadcast_to(bg, images.shape), counts[:, None, None, None],
                        out=np.zeros(images.shape, dtype=net.dtype), where=counts[:, None, None, None] > 0)
    return ad.sum_(g * g * Tensor(weights)) * (lam / len(y))


def fgsm_background(net, images, regions, y, eps: float) -> np.ndarray:
    """One signed-gradient step of size eps on background coordinates only.

    Works on normalized images (N, H, W, C) or a single (H, W, C); the result
    is clipped to [-1, 1].
    """
    single = np.ndim(images) == 3
    images = np.asarray(images, dtype=net.dtype)
    regions = np.asarray(regions, dtype=bool)
    if single:
        images, regions, y = images[None], regions[None], np.atleast_1d(y)
    y = _labels(y, net.num_classes)
    if eps == 0:
        out = images.copy()
    else:
        x = Tensor(images, requires_grad=True)
        loss = cross_entropy(net.forward(x), y) * float(len(y))
        (g,) = ad.grad(loss, [x])
        step = eps * np.sign(g.data) * (~regions)[..., None]
        out = np.clip(images + step, -1.0, 1.0).astype(images.dtype)
    return out[0] if single else out


# ------------------------------------------------------------- augmentation
def counterfactual_batch(batch: Batch, config: LossConfig, rng: np.random.Generator) -> np.ndarray:
    """Counterfactual images in [0, 1] for every example."""
    if batch.cf_images is not None:
        return batch.cf_images
    return np.stack([
        augment.counterfactual(img, reg, config.cf_infill, rng, region_mode=config.cf_region)
        for img, reg in zip(batch.images, batch.regions)
    ])


def factual_batch(net, batch: Batch, config: LossConfig, rng: np.random.Generator):
    """Normalized factual images and the mask of examples that got one."""
    method = config.f_infill
    n = len(batch)
    keep = batch.regions if config.f_region == "mask" else np.stack([augment.bbox_mask(r) for r in batch.regions])
    if method == "fgsm":
        return fgsm_background(net, augment.normalize(batch.images), keep, batch.labels, config.fgsm_eps), np.ones(n, bool)
    out = np.empty_like(batch.images)
    used = np.ones(n, dtype=bool)
    for i in range(n):
        if method == "mixed-rand":
            others = np.flatnonzero(batch.labels != batch.labels[i])
            if others.size == 0:
                used[i] = False
                out[i] = batch.images[i]
                continue
            j = int(others[rng.integers(others.size)])
            out[i] = augment.mixed_rand_background(batch.images[i], keep[i], batch.images[j], batch.regions[j])
        else:
            out[i] = augment.factual(batch.images[i], keep[i], method, rng)
    return augment.normalize(out), used


def factual_loss(net, images, regions, y, f_infill: str, rng: np.random.Generator,
                 eps: float = 0.5) -> Tensor:
    """Cross-entropy on background-perturbed copies of [0, 1] ``images``."""
    batch = Batch(np.asarray(images), np.asarray(regions, dtype=bool), np.atleast_1d(y))
    cfg = LossConfig(f_enabled=True, f_infill=f_infill, fgsm_eps=eps)
    x_f, used = factual_batch(net, batch, cfg, rng)
    if not used.any():
        return Tensor(np.zeros((), dtype=net.dtype))
    return cross_entropy(net.forward(x_f[used].astype(net.dtype)), batch.labels[used])


# ----------------------------------------------------------------- combined
def total_loss(net, batch: Batch, config: LossConfig, rng: np.random.Generator):
    """Sum of the enabled terms and a dict with each term's value.

    Every term draws from its own child generator, so switching one term on
    or off leaves the others' randomness untouched.
    """
    streams = [np.random.default_rng(s) for s in rng.integers(0, 2**63 - 1, size=4)]
    mix_rng, cf_rng, f_rng, _ = streams
    labels = np.asarray(batch.labels)
    n = len(labels)
    x = augment.normalize(batch.images).astype(net.dtype)
    main_a = main_b = labels
    lam = 1.0
    if config.mixup_alpha > 0:
        x, main_a, main_b, lam = mixup(x, labels, config.mixup_alpha, mix_rng)

    chunks = [x]
    f_used = None
    if config.cf_enabled:
        chunks.append(augment.normalize(counterfactual_batch(batch, config, cf_rng)).astype(net.dtype))
    if config.f_enabled:
        x_f, f_used = factual_batch(net, batch, config, f_rng)
        chunks.append(x_f[f_used].astype(net.dtype))
    sizes = [len(c) for c in chunks]
    logits = net.forward(np.concatenate(chunks))
    bounds = np.cumsum([0] + sizes)

    def part(i):
        return ad.take_slice(logits, 0, int(bounds[i]), int(bounds[i + 1]))

    main_logits = part(0)
    if config.label_smoothing > 0:
        if lam != 1.0:
            ce = label_smooth_ce(main_logits, main_a, config.label_smoothing) * lam + \
                label_smooth_ce(main_logits, main_b, config.label_smoothing) * (1.0 - lam)
        else:
            ce = label_smooth_ce(main_logits, labels, config.label_smoothing)
    elif lam != 1.0:
        ce = mixup_loss(main_logits, main_a, main_b, lam)
    else:
        ce = cross_entropy(main_logits, labels)
    terms = {"ce": ce}
    idx = 1
    if config.cf_enabled:
        terms["cf"] = counterfactual_loss(part(idx), labels, config.cf_variant)
        idx += 1
    if config.f_enabled:
        if f_used.any():
            terms["f"] = cross_entropy(part(idx), labels[f_used])
        else:
            terms["f_skipped"] = None
        idx += 1
    if config.sal_enabled:
        terms["sal"] = saliency_penalty(net, augment.normalize(batch.images), batch.regions, labels,
                                        config.lambda_sal)
    total = None
    report = {}
    for name, t in terms.items():
        if t is None:
            report[name] = 1.0
            continue
        report[name] = float(t.data)
        total = t if total is None else total + t
    report["total"] = float(total.data)
    report["n"] = n
    return total, report
