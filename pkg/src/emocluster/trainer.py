"""Training orchestration: contrastive / speaker / multi-task pretraining,
supervised emotion fine-tuning with early stopping, and the multi-seed
evaluation protocol reporting mean UAR per pretraining mode.

Inputs are utterance-level embedding vectors, so the desk-scale encoder is
a small dense trunk and the pooling stage ahead of each head degenerates
to an identity (kept explicit for structural clarity).
"""

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .clustering import KMeansConfig, cluster_speakers
from .corpus import Corpus, build_corpus, is_normalized, strip_labels, warn_if_unnormalized
from .nn_core import (
    ModelParams,
    adamw_step,
    backward,
    clone_params,
    forward,
    grads_to_arrays,
    grl,
    grl_backward,
    init_optimizer,
    make_mlp,
    model_param_arrays,
)
from .objectives import ContrastiveBatch, MtlWeights, cross_entropy, mtl_combine, ntxent_variant
from .pair_miner import ContrastiveTuple, MiningConfig, mine_tuples
from .serialize import stable_seed

MODES = ("none", "spk_cls", "contrastive", "mtl_adversarial", "mtl")

MODE_LABELS = {
    "none": "no pretraining",
    "spk_cls": "speaker classification",
    "contrastive": "cluster contrastive",
    "mtl_adversarial": "speaker-adversarial MTL",
    "mtl": "contrastive + speaker MTL",
}


@dataclass
class TrainConfig:
    mode: str = "contrastive"
    steps: int = 5000
    batch_size: int = 8
    ser_batch_size: int | None = None  # None: use batch_size; 0: full batch
    lr: float = 1e-5  # supervised SER learning rate
    pretrain_lr: float = 1e-4
    epochs_ser: int = 30
    tau: float = 0.1
    n_clusters_N: int = 20
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    patience: int = 5
    mtl_weights: MtlWeights = field(default_factory=MtlWeights)
    resample_pairs_each_epoch: bool = False
    include_positive_in_denominator: bool = False
    trunk_hidden: int = 32
    contrastive_hidden: int | None = None  # default: trunk output dim
    contrastive_out: int = 128
    head_hidden: int | None = None  # classifier heads; default: trunk output dim
    split_fractions: tuple[float, float, float] = (0.7, 0.1, 0.2)
    pretrain_speaker_fraction: float = 0.0  # protocol: speakers reserved for the unlabeled pool
    weight_decay: float = 0.01
    allow_fewer_negatives: bool = True
    seed: int = 0

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; choose from {MODES}")
        if self.steps < 0 or self.batch_size < 1 or self.epochs_ser < 1 or self.patience < 1:
            raise ValueError("steps must be >= 0; batch_size, epochs_ser, patience >= 1")
        if self.ser_batch_size is not None and self.ser_batch_size < 0:
            raise ValueError("ser_batch_size must be None, 0 (full batch), or positive")
        if self.lr <= 0 or self.pretrain_lr <= 0 or self.tau <= 0:
            raise ValueError("lr, pretrain_lr, tau must be > 0")
        if self.n_clusters_N < 2:
            raise ValueError("n_clusters_N must be >= 2")
        if not self.seeds:
            raise ValueError("at least one seed required")
        if len(self.split_fractions) != 3 or any(f < 0 for f in self.split_fractions):
            raise ValueError("split_fractions must be 3 nonnegative values")
        if abs(sum(self.split_fractions) - 1.0) > 1e-9:
            raise ValueError("split_fractions must sum to 1")
        if not 0.0 <= self.pretrain_speaker_fraction < 1.0:
            raise ValueError("pretrain_speaker_fraction must lie in [0, 1)")
        self.mtl_weights.validate()


def config_to_dict(config: TrainConfig) -> dict:
    return {
        "mode": config.mode,
        "steps": config.steps,
        "batch_size": config.batch_size,
        "ser_batch_size": config.ser_batch_size,
        "lr": config.lr,
        "pretrain_lr": config.pretrain_lr,
        "epochs_ser": config.epochs_ser,
        "tau": config.tau,
        "n_clusters_N": config.n_clusters_N,
        "seeds": list(config.seeds),
        "patience": config.patience,
        "mtl_weights": {
            "w_contrastive": config.mtl_weights.w_contrastive,
            "w_speaker": config.mtl_weights.w_speaker,
            "adversarial": config.mtl_weights.adversarial,
            "grl_lambda": config.mtl_weights.grl_lambda,
        },
        "resample_pairs_each_epoch": config.resample_pairs_each_epoch,
        "include_positive_in_denominator": config.include_positive_in_denominator,
        "trunk_hidden": config.trunk_hidden,
        "contrastive_hidden": config.contrastive_hidden,
        "contrastive_out": config.contrastive_out,
        "head_hidden": config.head_hidden,
        "split_fractions": list(config.split_fractions),
        "pretrain_speaker_fraction": config.pretrain_speaker_fraction,
        "weight_decay": config.weight_decay,
        "allow_fewer_negatives": config.allow_fewer_negatives,
        "seed": config.seed,
    }


@dataclass
class Checkpoint:
    components: dict[str, ModelParams]  # "encoder" plus the heads used by the mode
    mode: str
    seed: int
    steps: int
    history: dict[str, list[float]]

    @property
    def encoder(self) -> ModelParams:
        return self.components["encoder"]


@dataclass
class SerModel:
    encoder: ModelParams
    head: ModelParams
    emotions: list[str]
    train_speakers: set[str]
    seed: int


@dataclass
class EvalResult:
    uar: float
    per_class_recall: dict[str, float]
    confusion: np.ndarray  # (C, C) over `emotions`, rows true / cols predicted
    emotions: list[str]
    seed: int


def pool_utterance_level(x: np.ndarray) -> np.ndarray:
    """Pooling stage ahead of each head; identity for utterance-level inputs."""
    return x


# ------------------------------------------------------------- model building

def build_encoder(dim: int, config: TrainConfig, seed: int) -> ModelParams:
    rng = np.random.default_rng(stable_seed(seed, "encoder"))
    h = config.trunk_hidden
    return make_mlp(rng, [dim, h, h], ["relu", "relu"], "encoder")


def build_contrastive_head(in_dim: int, config: TrainConfig, seed: int) -> ModelParams:
    rng = np.random.default_rng(stable_seed(seed, "contrastive_head"))
    hidden = config.contrastive_hidden or in_dim
    return make_mlp(rng, [in_dim, hidden, config.contrastive_out], ["relu", "tanh"], "contrastive")


def build_classifier_head(in_dim: int, n_classes: int, kind: str, config: TrainConfig, seed: int) -> ModelParams:
    rng = np.random.default_rng(stable_seed(seed, kind))
    hidden = config.head_hidden or in_dim
    return make_mlp(rng, [in_dim, hidden, n_classes], ["relu", "softmax"], kind)


# ----------------------------------------------------------------- pretraining

def _shuffled_batches(n_items: int, batch_size: int, rng: np.random.Generator):
    """Yield index batches forever, reshuffling at each pass boundary."""
    while True:
        order = rng.permutation(n_items)
        for start in range(0, n_items, batch_size):
            chunk = order[start : start + batch_size]
            if len(chunk):
                yield chunk, start + batch_size >= n_items


def _contrastive_step(encoder, con_head, spk_head, batch, vec_by_id, spk_index, config):
    """Forward/backward one tuple batch; returns (losses, flat gradient arrays)."""
    weights = config.mtl_weights
    B = len(batch)
    anchors = np.stack([vec_by_id[t.anchor] for t in batch])
    positives = np.stack([vec_by_id[t.positive] for t in batch])
    neg_counts = [len(t.negatives) for t in batch]
    neg_rows = np.stack([vec_by_id[n.utt_id] for t in batch for n in t.negatives])

    rows = np.concatenate([anchors, positives, neg_rows])
    enc_out, enc_cache = forward(encoder, rows)
    pooled = pool_utterance_level(enc_out)

    proj, head_cache = forward(con_head, pooled)
    za, zp = proj[:B], proj[B : 2 * B]
    zn, off = [], 2 * B
    for m in neg_counts:
        zn.append(proj[off : off + m])
        off += m

    loss_con, cg = ntxent_variant(
        ContrastiveBatch(za, zp, zn, config.tau), config.include_positive_in_denominator
    )
    dproj = np.concatenate([cg.d_anchor, cg.d_positive] + cg.d_negatives) * weights.w_contrastive
    con_grads, d_enc = backward(con_head, head_cache, dproj)

    loss_spk = 0.0
    spk_grads = None
    if spk_head is not None:
        spk_in = grl(pooled[:B]) if weights.adversarial else pooled[:B]
        probs, spk_cache = forward(spk_head, spk_in)
        logits = spk_cache[-1][1]
        labels = np.asarray([spk_index[t.spk_id] for t in batch])
        loss_spk, dlogits = cross_entropy(logits, labels)
        spk_grads, d_spk_in = backward(spk_head, spk_cache, weights.w_speaker * dlogits, from_logits=True)
        if weights.adversarial:
            d_spk_in = grl_backward(d_spk_in, weights.grl_lambda)
        d_enc[:B] += d_spk_in

    enc_grads, _ = backward(encoder, enc_cache, d_enc)
    flat = grads_to_arrays(enc_grads) + grads_to_arrays(con_grads)
    if spk_grads is not None:
        flat += grads_to_arrays(spk_grads)
    return loss_con, loss_spk, flat


def _speaker_step(encoder, spk_head, rows, labels):
    enc_out, enc_cache = forward(encoder, rows)
    pooled = pool_utterance_level(enc_out)
    probs, spk_cache = forward(spk_head, pooled)
    logits = spk_cache[-1][1]
    loss, dlogits = cross_entropy(logits, labels)
    spk_grads, d_enc = backward(spk_head, spk_cache, dlogits, from_logits=True)
    enc_grads, _ = backward(encoder, enc_cache, d_enc)
    return loss, grads_to_arrays(enc_grads) + grads_to_arrays(spk_grads)


def pretrain(
    corpus_unlabeled: Corpus,
    config: TrainConfig,
    run=None,
    tuples: list[ContrastiveTuple] | None = None,
) -> Checkpoint:
    """Train the trunk (plus mode-specific heads) for config.steps steps.

    Contrastive modes need intra-speaker clusters and mined tuples; both
    are built internally (k = n_clusters_N) when not supplied.
    """
    config.validate()
    if config.mode == "none":
        raise ValueError("pretrain requires a mode other than 'none'")
    warn_if_unnormalized(corpus_unlabeled, "pretrain")

    dim = corpus_unlabeled.dim
    encoder = build_encoder(dim, config, config.seed)
    enc_out_dim = encoder.output_dim
    components: dict[str, ModelParams] = {"encoder": encoder}

    speakers = sorted(corpus_unlabeled.speakers)
    spk_index = {s: i for i, s in enumerate(speakers)}

    contrastive_on = config.mode in ("contrastive", "mtl", "mtl_adversarial")
    speaker_on = config.mode in ("spk_cls", "mtl", "mtl_adversarial")
    weights = replace(
        config.mtl_weights, adversarial=(config.mode == "mtl_adversarial")
    )
    if config.mode == "contrastive":
        weights = replace(weights, w_speaker=0.0, adversarial=False)
    config = replace(config, mtl_weights=weights)

    if contrastive_on:
        components["contrastive"] = build_contrastive_head(enc_out_dim, config, config.seed)
    if speaker_on:
        components["speaker_cls"] = build_classifier_head(
            enc_out_dim, len(speakers), "speaker_cls", config, config.seed
        )

    def mine(seed: int) -> list[ContrastiveTuple]:
        nonlocal run
        if run is None:
            run = cluster_speakers(
                corpus_unlabeled,
                KMeansConfig(k=config.n_clusters_N, seed=stable_seed(config.seed, "pretrain_cluster")),
            )
        mined = mine_tuples(
            run,
            corpus_unlabeled,
            MiningConfig(
                n_clusters_N=config.n_clusters_N,
                seed=seed,
                allow_fewer_negatives=config.allow_fewer_negatives,
            ),
        )
        if not mined:
            raise ValueError("no mineable tuples: every anchor was skipped")
        return mined

    history: dict[str, list[float]] = {"contrastive": [], "speaker": [], "total": []}
    params = model_param_arrays(*components.values())
    opt = init_optimizer(params, lr=config.pretrain_lr, weight_decay=config.weight_decay)
    # batch order is seeded independently of the mode so runs that share a
    # seed differ only in their loss composition (paired comparisons)
    rng = np.random.default_rng(stable_seed(config.seed, "pretrain_batches"))

    if config.steps == 0:
        return Checkpoint(components=components, mode=config.mode, seed=config.seed, steps=0, history=history)

    vec_by_id = {r.utt_id: r.vec for r in corpus_unlabeled.records}

    if contrastive_on:
        epoch = 0
        pool = tuples if tuples is not None else mine(config.seed)
        batches = _shuffled_batches(len(pool), config.batch_size, rng)
        for _ in range(config.steps):
            idx, epoch_end = next(batches)
            batch = [pool[i] for i in idx]
            spk_head = components.get("speaker_cls")
            l_con, l_spk, flat = _contrastive_step(
                encoder, components["contrastive"], spk_head, batch, vec_by_id, spk_index, config
            )
            adamw_step(opt, params, flat)
            history["contrastive"].append(l_con)
            history["speaker"].append(l_spk)
            history["total"].append(mtl_combine(l_con, l_spk, config.mtl_weights))
            if epoch_end and config.resample_pairs_each_epoch and tuples is None:
                epoch += 1
                pool = mine(stable_seed(config.seed, "resample", epoch))
                batches = _shuffled_batches(len(pool), config.batch_size, rng)
    else:  # speaker classification only
        all_rows = corpus_unlabeled.matrix()
        labels = np.asarray([spk_index[r.spk_id] for r in corpus_unlabeled.records])
        batches = _shuffled_batches(len(all_rows), config.batch_size, rng)
        for _ in range(config.steps):
            idx, _ = next(batches)
            loss, flat = _speaker_step(encoder, components["speaker_cls"], all_rows[idx], labels[idx])
            adamw_step(opt, params, flat)
            history["speaker"].append(loss)
            history["contrastive"].append(0.0)
            history["total"].append(loss)

    return Checkpoint(
        components=components, mode=config.mode, seed=config.seed, steps=config.steps, history=history
    )


# ------------------------------------------------------------------ SER stage

def split_by_speaker(corpus: Corpus, fractions, seed: int):
    """Speaker-disjoint (train, val, test) split with seeded assignment."""
    speakers = sorted(corpus.speakers)
    if len(speakers) < 3:
        raise ValueError("need at least 3 speakers for a 3-way speaker split")
    rng = np.random.default_rng(stable_seed(seed, "split"))
    order = [speakers[i] for i in rng.permutation(len(speakers))]
    n = len(order)
    n_val = max(1, round(fractions[1] * n))
    n_test = max(1, round(fractions[2] * n))
    n_train = n - n_val - n_test
    if n_train < 1:
        raise ValueError(f"split fractions leave no training speakers for {n} speakers")
    groups = {
        "train": set(order[:n_train]),
        "val": set(order[n_train : n_train + n_val]),
        "test": set(order[n_train + n_val :]),
    }

    def pick(names):
        indices = [i for spk in sorted(names) for i in corpus.speakers[spk]]
        return build_corpus([corpus.records[i] for i in sorted(indices)])

    return pick(groups["train"]), pick(groups["val"]), pick(groups["test"])


def check_speaker_disjoint(*corpora: Corpus) -> None:
    seen: dict[str, int] = {}
    for i, c in enumerate(corpora):
        for spk in c.speakers:
            if spk in seen and seen[spk] != i:
                raise ValueError(f"split leakage: speaker {spk!r} appears in multiple splits")
            seen[spk] = i


def _labeled_arrays(corpus: Corpus, emotions: list[str]):
    index = {e: i for i, e in enumerate(emotions)}
    rows, labels = [], []
    for rec in corpus.records:
        if rec.emotion is None:
            continue
        if rec.emotion not in index:
            warnings.warn(f"unknown emotion label {rec.emotion!r}; record excluded", stacklevel=2)
            continue
        rows.append(rec.vec)
        labels.append(index[rec.emotion])
    if not rows:
        raise ValueError("no labeled records available")
    return np.stack(rows), np.asarray(labels)


def _ser_accuracy(encoder, head, rows, labels) -> float:
    enc_out, _ = forward(encoder, rows)
    probs, _ = forward(head, pool_utterance_level(enc_out))
    return float((probs.argmax(axis=1) == labels).mean())


def train_ser(
    checkpoint: Checkpoint | None,
    corpus_labeled: Corpus,
    config: TrainConfig,
    val_corpus: Corpus | None = None,
    seed: int | None = None,
):
    """Fine-tune (pretrained or fresh) encoder plus a new emotion head.

    Stops on the best validation accuracy (with patience) and returns the
    best-epoch model together with its validation EvalResult.  When no
    val_corpus is given the labeled corpus is split by speaker internally.
    """
    config.validate()
    seed = config.seed if seed is None else seed

    if val_corpus is None:
        f_train, f_val, _ = config.split_fractions
        speakers = sorted(corpus_labeled.speakers)
        if len(speakers) < 2:
            raise ValueError("need at least 2 speakers to carve out a validation split")
        rng = np.random.default_rng(stable_seed(seed, "ser_split"))
        order = [speakers[i] for i in rng.permutation(len(speakers))]
        n_val = min(len(order) - 1, max(1, round(f_val / (f_train + f_val) * len(order))))
        val_set = set(order[:n_val])
        train_idx = [i for spk in speakers if spk not in val_set for i in corpus_labeled.speakers[spk]]
        val_idx = [i for spk in sorted(val_set) for i in corpus_labeled.speakers[spk]]
        train_c = build_corpus([corpus_labeled.records[i] for i in sorted(train_idx)])
        val_c = build_corpus([corpus_labeled.records[i] for i in sorted(val_idx)])
    else:
        train_c, val_c = corpus_labeled, val_corpus
    check_speaker_disjoint(train_c, val_c)

    emotions = sorted({r.emotion for r in train_c.records if r.emotion is not None})
    if len(emotions) < 2:
        raise ValueError(f"SER training needs >= 2 emotion classes, found {emotions}")

    if checkpoint is not None:
        encoder = clone_params(checkpoint.encoder)
    else:
        encoder = build_encoder(corpus_labeled.dim, config, stable_seed(seed, "ser_encoder"))
    head = build_classifier_head(encoder.output_dim, len(emotions), "emotion_cls", config, seed)

    train_rows, train_labels = _labeled_arrays(train_c, emotions)
    val_rows, val_labels = _labeled_arrays(val_c, emotions)

    params = model_param_arrays(encoder, head)
    opt = init_optimizer(params, lr=config.lr, weight_decay=config.weight_decay)

    if config.ser_batch_size is None:
        ser_batch = config.batch_size
    elif config.ser_batch_size == 0:
        ser_batch = len(train_rows)
    else:
        ser_batch = config.ser_batch_size

    best = (-1.0, clone_params(encoder), clone_params(head))
    since_best = 0
    for epoch in range(config.epochs_ser):
        rng = np.random.default_rng(stable_seed(seed, "ser_epoch", epoch))
        order = rng.permutation(len(train_rows))
        for start in range(0, len(order), ser_batch):
            idx = order[start : start + ser_batch]
            enc_out, enc_cache = forward(encoder, train_rows[idx])
            probs, head_cache = forward(head, pool_utterance_level(enc_out))
            logits = head_cache[-1][1]
            _, dlogits = cross_entropy(logits, train_labels[idx])
            head_grads, d_enc = backward(head, head_cache, dlogits, from_logits=True)
            enc_grads, _ = backward(encoder, enc_cache, d_enc)
            adamw_step(opt, params, grads_to_arrays(enc_grads) + grads_to_arrays(head_grads))
        acc = _ser_accuracy(encoder, head, val_rows, val_labels)
        if acc > best[0]:
            best = (acc, clone_params(encoder), clone_params(head))
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.patience:
                break

    model = SerModel(
        encoder=best[1],
        head=best[2],
        emotions=emotions,
        train_speakers=set(train_c.speakers),
        seed=seed,
    )
    return model, evaluate_uar(model, val_c)


def ser_predict(model: SerModel, rows: np.ndarray) -> np.ndarray:
    enc_out, _ = forward(model.encoder, rows)
    probs, _ = forward(model.head, pool_utterance_level(enc_out))
    return probs.argmax(axis=1)


def evaluate_uar(model: SerModel, corpus_test: Corpus) -> EvalResult:
    """Unweighted average recall from the argmax confusion matrix.

    Test speakers must be disjoint from the model's training speakers.
    Emotion classes absent from the test set are excluded (with a warning)
    from the per-class recalls and the UAR average.
    """
    overlap = set(corpus_test.speakers) & model.train_speakers
    if overlap:
        raise ValueError(f"test speakers overlap training speakers: {sorted(overlap)[:3]}")
    rows, labels = _labeled_arrays(corpus_test, model.emotions)
    preds = ser_predict(model, rows)

    C = len(model.emotions)
    confusion = np.zeros((C, C), dtype=np.int64)
    for t, p in zip(labels, preds):
        confusion[t, p] += 1

    per_class: dict[str, float] = {}
    for ci, emotion in enumerate(model.emotions):
        support = confusion[ci].sum()
        if support == 0:
            warnings.warn(f"class {emotion!r} absent from test set; excluded from UAR", stacklevel=2)
            continue
        per_class[emotion] = float(confusion[ci, ci] / support)
    if not per_class:
        raise ValueError("no test class has support; UAR undefined")
    uar = float(np.mean(list(per_class.values())))
    return EvalResult(
        uar=uar, per_class_recall=per_class, confusion=confusion, emotions=list(model.emotions), seed=model.seed
    )


# ------------------------------------------------------------------- protocol

def labeled_fraction(corpus: Corpus, fraction: float, seed: int) -> Corpus:
    """Seeded per-emotion subsample of labeled records (at least 1 per class)."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must be in (0, 1]")
    if fraction == 1.0:
        return corpus
    by_emotion: dict[str, list[int]] = {}
    for i, rec in enumerate(corpus.records):
        if rec.emotion is not None:
            by_emotion.setdefault(rec.emotion, []).append(i)
    keep: list[int] = []
    for emotion in sorted(by_emotion):
        indices = by_emotion[emotion]
        n_keep = max(1, round(fraction * len(indices)))
        rng = np.random.default_rng(stable_seed(seed, "label_budget", emotion))
        chosen = rng.choice(len(indices), size=n_keep, replace=False)
        keep.extend(indices[i] for i in chosen)
    return build_corpus([corpus.records[i] for i in sorted(keep)])


def run_protocol(
    corpus: Corpus,
    config: TrainConfig,
    modes: list[str] | None = None,
    label_fraction: float = 0.05,
) -> dict:
    """Pretrain per mode, fine-tune per seed, report mean UAR rows.

    The corpus is length-normalized and split by speaker.  When
    config.pretrain_speaker_fraction > 0 that share of speakers forms an
    exclusive unlabeled pretraining pool (the large-unlabeled-corpus
    setting) and the rest are split train/val/test for SER; otherwise
    pretraining reads the unlabeled SER train split.  SER training sees
    only a seeded label_fraction of its train labels.
    """
    config.validate()
    modes = list(MODES) if modes is None else modes
    for mode in modes:
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}")

    from .corpus import length_normalize

    normalized = corpus if is_normalized(corpus) else length_normalize(corpus)
    if config.pretrain_speaker_fraction > 0.0:
        speakers = sorted(normalized.speakers)
        rng = np.random.default_rng(stable_seed(config.seed, "pretrain_pool"))
        order = [speakers[i] for i in rng.permutation(len(speakers))]
        n_pool = max(1, round(config.pretrain_speaker_fraction * len(order)))
        if len(order) - n_pool < 3:
            raise ValueError("pretrain_speaker_fraction leaves too few speakers for SER splits")
        pool = set(order[:n_pool])
        pool_idx = [i for spk in sorted(pool) for i in normalized.speakers[spk]]
        pretrain_base = build_corpus([normalized.records[i] for i in sorted(pool_idx)])
        rest_idx = [i for spk in speakers if spk not in pool for i in normalized.speakers[spk]]
        ser_base = build_corpus([normalized.records[i] for i in sorted(rest_idx)])
    else:
        pretrain_base = None
        ser_base = normalized

    train_c, val_c, test_c = split_by_speaker(
        ser_base, config.split_fractions, stable_seed(config.seed, "protocol")
    )
    check_speaker_disjoint(train_c, val_c, test_c)
    ser_train = labeled_fraction(train_c, label_fraction, config.seed)
    pretrain_corpus = strip_labels(pretrain_base if pretrain_base is not None else train_c)

    rows = []
    for mode in modes:
        per_seed = []
        for s in config.seeds:
            ckpt = None
            if mode != "none":
                # one pretraining run per (mode, seed); the derived seed is
                # shared across modes so their initializations pair up
                run_seed = stable_seed(config.seed, "protocol_run", s)
                ckpt = pretrain(pretrain_corpus, replace(config, mode=mode, seed=run_seed))
            model, _val_result = train_ser(ckpt, ser_train, config, val_corpus=val_c, seed=s)
            result = evaluate_uar(model, test_c)
            per_seed.append({"seed": int(s), "uar": result.uar})
        rows.append(
            {
                "mode": mode,
                "label": MODE_LABELS[mode],
                "mean_uar": float(np.mean([p["uar"] for p in per_seed])),
                "per_seed": per_seed,
            }
        )
    return {"rows": rows, "label_fraction": label_fraction, "config": config_to_dict(config)}


# ------------------------------------------------------------ gradient checks

def _relu_margin(model, cache) -> float:
    margins = [
        float(np.abs(z).min())
        for layer, (_, z) in zip(model.layers, cache)
        if layer.activation == "relu" and z.size
    ]
    return min(margins) if margins else np.inf


def _grad_check_nets(kind: str, config: TrainConfig, seed: int, attempt: int):
    """One candidate configuration of small nets plus an input batch.

    Inputs cluster around a common direction (as length-normalized
    embeddings do), which keeps the contrastive softmax weights away from
    underflow at small temperatures.  Returns None when any relu
    pre-activation sits within 1e-3 of its kink or a projection row is
    nearly zero: central differences need the loss differentiable (and the
    cosine defined) throughout the perturbation neighborhood.
    """
    dim, B, n_neg, margin = 5, 3, 3, 1e-3
    cfg = replace(config, trunk_hidden=6, contrastive_hidden=6, contrastive_out=4, head_hidden=6)
    salt = stable_seed(seed, "gradcheck", kind, attempt)
    rng = np.random.default_rng(salt)
    encoder = build_encoder(dim, cfg, salt)
    con_head = build_contrastive_head(encoder.output_dim, cfg, salt)
    spk_head = build_classifier_head(encoder.output_dim, 3, "speaker_cls", cfg, salt)
    emo_head = build_classifier_head(encoder.output_dim, 3, "emotion_cls", cfg, salt)

    # inputs cluster around one direction and are scaled up so pre-activations
    # sit well clear of the relu kinks (cosine geometry is scale-invariant)
    base = rng.normal(size=dim)
    base /= np.linalg.norm(base)
    draw = lambda *shape: 5.0 * (base + 0.35 * rng.normal(size=(*shape, dim)))
    anchors, positives, negatives = draw(B), draw(B), draw(B, n_neg)
    labels = rng.integers(0, 3, size=B)

    rows = np.concatenate([anchors, positives, negatives.reshape(B * n_neg, dim)])
    enc_out, enc_cache = forward(encoder, rows)
    worst = _relu_margin(encoder, enc_cache)
    proj, con_cache = forward(con_head, enc_out)
    worst = min(worst, _relu_margin(con_head, con_cache))
    for head in (spk_head, emo_head):
        _, cache = forward(head, enc_out[:B])
        worst = min(worst, _relu_margin(head, cache))
    if worst <= margin:
        return None
    # cosine curvature scales like 1/row-norm^k: keep projections well away from 0
    if float(np.linalg.norm(proj, axis=1).min()) < 0.05:
        return None
    return cfg, encoder, con_head, spk_head, emo_head, anchors, positives, negatives, labels


def _contrastive_loss_and_grads(encoder, head, anchors, positives, negatives, tau, include_pos):
    B, n_neg = negatives.shape[0], negatives.shape[1]
    rows = np.concatenate([anchors, positives, negatives.reshape(B * n_neg, -1)])
    enc_out, enc_cache = forward(encoder, rows)
    proj, head_cache = forward(head, pool_utterance_level(enc_out))
    zn = [proj[2 * B + i * n_neg : 2 * B + (i + 1) * n_neg] for i in range(B)]
    loss, cg = ntxent_variant(ContrastiveBatch(proj[:B], proj[B : 2 * B], zn, tau), include_pos)
    dproj = np.concatenate([cg.d_anchor, cg.d_positive] + cg.d_negatives)
    head_grads, d_enc = backward(head, head_cache, dproj)
    enc_grads, _ = backward(encoder, enc_cache, d_enc)
    return loss, enc_grads, head_grads


def _classifier_loss_and_grads(encoder, head, rows, labels):
    enc_out, enc_cache = forward(encoder, rows)
    _, head_cache = forward(head, pool_utterance_level(enc_out))
    loss, dlogits = cross_entropy(head_cache[-1][1], labels)
    head_grads, d_enc = backward(head, head_cache, dlogits, from_logits=True)
    enc_grads, _ = backward(encoder, enc_cache, d_enc)
    return loss, enc_grads, head_grads


def grad_check_cases(kind: str, config: TrainConfig, seed: int = 0, grl_lambda: float = 1.0):
    """Named (loss_fn, params) cases for finite-difference verification.

    For the adversarial trunk the finite differences run against the
    effective objective w_con*L_con - lambda*w_spk*L_spk, whose gradient is
    what the reversal layer routes into the trunk.  Configurations whose
    smallest nonzero analytic gradient entry falls below what float64
    central differences can resolve are resampled.
    """
    for attempt in range(500):
        nets = _grad_check_nets(kind, config, seed, attempt)
        if nets is None:
            continue
        cases = _assemble_grad_check_cases(kind, nets, grl_lambda)
        floor = 3e-6
        ok = True
        for _, loss_fn, _params in cases:
            _, grads = loss_fn()
            for g in grads:
                nz = np.abs(np.asarray(g)[np.asarray(g) != 0.0])
                if nz.size and nz.min() < floor:
                    ok = False
                    break
            if not ok:
                break
        if ok:
            return cases
    raise RuntimeError("could not sample a well-conditioned gradient-check configuration")


def _assemble_grad_check_cases(kind: str, nets, grl_lambda: float):
    cfg, encoder, con_head, spk_head, emo_head, anchors, positives, negatives, labels = nets
    cases = []
    if kind in ("contrastive", "all"):
        for include_pos in (False, True):
            def loss_fn(include_pos=include_pos):
                loss, enc_g, head_g = _contrastive_loss_and_grads(
                    encoder, con_head, anchors, positives, negatives, cfg.tau, include_pos
                )
                return loss, grads_to_arrays(enc_g) + grads_to_arrays(head_g)

            label = "denominator with positive" if include_pos else "denominator negatives-only"
            cases.append((f"contrastive ({label})", loss_fn, model_param_arrays(encoder, con_head)))
    if kind in ("speaker_cls", "emotion_cls", "all"):
        kinds = [kind] if kind != "all" else ["speaker_cls", "emotion_cls"]
        for hk in kinds:
            head = spk_head if hk == "speaker_cls" else emo_head

            def loss_fn(head=head):
                loss, enc_g, head_g = _classifier_loss_and_grads(encoder, head, anchors, labels)
                return loss, grads_to_arrays(enc_g) + grads_to_arrays(head_g)

            cases.append((f"{hk} cross-entropy", loss_fn, model_param_arrays(encoder, head)))
    if kind in ("mtl", "all"):
        w = MtlWeights(w_contrastive=1.0, w_speaker=1.0, adversarial=True, grl_lambda=grl_lambda)

        def parts():
            l_con, enc_g_con, con_g = _contrastive_loss_and_grads(
                encoder, con_head, anchors, positives, negatives, cfg.tau, False
            )
            l_spk, enc_g_spk, spk_g = _classifier_loss_and_grads(encoder, spk_head, anchors, labels)
            return l_con, l_spk, enc_g_con, enc_g_spk, con_g, spk_g

        def trunk_loss_fn():
            l_con, l_spk, enc_g_con, enc_g_spk, _, _ = parts()
            loss = w.w_contrastive * l_con - w.grl_lambda * w.w_speaker * l_spk
            grads = [
                w.w_contrastive * gc + grl_backward(w.w_speaker * gs, w.grl_lambda)
                for gc, gs in zip(grads_to_arrays(enc_g_con), grads_to_arrays(enc_g_spk))
            ]
            return loss, grads

        def head_loss_fn():
            l_con, l_spk, _, _, con_g, spk_g = parts()
            loss = mtl_combine(l_con, l_spk, w)
            grads = [w.w_contrastive * g for g in grads_to_arrays(con_g)]
            grads += [w.w_speaker * g for g in grads_to_arrays(spk_g)]
            return loss, grads

        cases.append((f"mtl trunk through GRL (lambda={grl_lambda})", trunk_loss_fn, model_param_arrays(encoder)))
        cases.append(
            (f"mtl heads (lambda={grl_lambda})", head_loss_fn, model_param_arrays(con_head, spk_head))
        )
    if not cases:
        raise ValueError(f"unknown grad-check kind {kind!r}")
    return cases


def protocol_to_table(report: dict) -> str:
    """Aligned text table of mean UAR per pretraining mode."""
    header = ["pretraining", "mean UAR", "per-seed UAR"]
    body = []
    for row in report["rows"]:
        per_seed = " ".join(f"{p['uar']:.4f}" for p in row["per_seed"])
        body.append([row["label"], f"{row['mean_uar']:.4f}", per_seed])
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    for row in body:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)))
    return "\n".join(lines) + "\n"
