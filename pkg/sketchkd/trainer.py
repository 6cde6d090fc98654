"""Teacher pre-training, student training, checkpoints and ablation suites."""

import os
import math
import time
from collections import OrderedDict
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np
import torch

from sketchkd.config import config_hash, load_config
from sketchkd.helpers import component_rng, atomic_write_text, check_filepath
from sketchkd.backbone import PyramidBackbone, as_image_tensor
from sketchkd.data import sample_triplet_batch, sample_photo_triplet_batch
from sketchkd.losses import TripletEmbeddings, combined_training_loss, triplet_hinge
from sketchkd.distill import FeatureBank, build_bank, distillation_loss
from sketchkd.ema import EmaState, ema_init, ema_update, ema_swap_for_eval, load_ema_state
from sketchkd.evaluation import evaluate_model, population_std
from sketchkd.exceptions import NonFiniteLossError, ConfigError, BankMismatchError, DatasetError


METRICS_COLUMNS = ["step", "loss_total", "loss_cm", "loss_im_p", "loss_im_s", "loss_tri_u", "loss_kl_pl", "loss_kl_sl", "loss_kl_pu",
                   "acc1_raw", "acc5_raw", "acc10_raw", "acc1_ema", "acc5_ema", "acc10_ema"]

PARAM_PREFIX = "backbone."


@dataclass(frozen=True)
class Recipe:
    """Which losses, augmentation and token design a student run uses."""
    name: str
    use_im: bool = True
    use_ema: bool = True
    distill: bool = False
    kl_pl: bool = True
    kl_sl: bool = True
    kl_pu: bool = True
    augmentation: str = "structural"
    token_design: str = "every_level"
    photo_objective: str = "triplet"
    kd_objective: str = "contextual"


RECIPES = {
    "strong_baseline" : Recipe("strong_baseline"),
    "full_kd" : Recipe("full_kd", distill=True),

    # Strip-down of the full objective
    "type_I" : Recipe("type_I", use_im=False, use_ema=False, distill=True),
    "type_II" : Recipe("type_II", use_ema=False, distill=True),
    "type_III" : Recipe("type_III", distill=True, kl_pl=False, kl_sl=False),
    "type_IV" : Recipe("type_IV", distill=True, kl_sl=False),

    # Photo augmentation for the intra-modal photo triplet
    "aug_color" : Recipe("aug_color", distill=True, augmentation="color"),
    "aug_blur" : Recipe("aug_blur", distill=True, augmentation="blur"),
    "aug_sharpness" : Recipe("aug_sharpness", distill=True, augmentation="sharpness"),

    # Distillation token placement
    "token_A" : Recipe("token_A", distill=True, token_design="none"),
    "token_B" : Recipe("token_B", distill=True, token_design="last_level"),

    "contrastive" : Recipe("contrastive", distill=True, photo_objective="contrastive"),

    # Alternative distillation objectives
    "kd_regress" : Recipe("kd_regress", distill=True, kd_objective="regress"),
    "kd_rkd" : Recipe("kd_rkd", distill=True, kd_objective="rkd"),
    "kd_pkt" : Recipe("kd_pkt", distill=True, kd_objective="pkt")
}

# Suite -> [(row label, mode)]
SUITES = {
    "loss_stripdown" : [("I", "type_I"), ("II", "type_II"), ("III", "type_III"), ("IV", "type_IV"), ("full", "full_kd")],
    "augmentation" : [("structural", "full_kd"), ("color", "aug_color"), ("blur", "aug_blur"), ("sharpness", "aug_sharpness")],
    "token_design" : [("A", "token_A"), ("B", "token_B"), ("ours", "full_kd")],
    "objective" : [("triplet", "full_kd"), ("contrastive", "contrastive")],
    "kd_family" : [("regress", "kd_regress"), ("rkd", "kd_rkd"), ("pkt", "kd_pkt"), ("contextual", "full_kd")]
}


def get_recipe(mode):
    """Returns the Recipe for a student mode name."""
    try:
        return RECIPES[mode]
    except KeyError:
        raise ValueError("{0} is not a valid student mode. Choose from {1}.".format(mode, sorted(RECIPES)))


def make_optimizer(model, hp, total_steps):
    # AdamW with a per-step cosine schedule
    optimizer = torch.optim.AdamW([param for param in model.parameters() if param.requires_grad], lr=hp.lr, betas=(0.9, 0.999), weight_decay=hp.weight_decay)
    scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(optimizer, T_max=max(1, total_steps))
    return optimizer, scheduler


def batch_count(n, batch_size):
    """Batches per epoch; a trailing single row joins the previous batch."""
    count = math.ceil(n/batch_size)
    if count > 1 and n % batch_size == 1:
        count -= 1
    return count


def epoch_batches(ids, batch_size, rng):
    """Splits a random permutation of the ids into consecutive batches.

    A trailing batch of one joins the batch before it, so no batch has a single
    row unless there is only one id.
    """
    order = rng.permutation(len(ids))
    batches = [[ids[i] for i in order[start:start+batch_size]] for start in range(0, len(ids), batch_size)]
    if len(batches) > 1 and len(batches[-1]) == 1:
        batches[-2].extend(batches.pop())
    return batches


def _forward_features(model, image_sets, mode):
    # One forward over several image stacks; returns the f rows of each stack
    sizes = [len(images) for images in image_sets]
    images = as_image_tensor(np.concatenate(image_sets, axis=0), dtype=model.dtype)
    f = model(images, mode=mode).f
    return list(torch.split(f, sizes, dim=0))


def photo_triplet_loss(model, batch, margin, mode="teacher"):
    """Batch-mean photo-form intra-modal triplet (anchor, augmented anchor, other photo)."""
    f_a, f_pos, f_neg = _forward_features(model, [batch.anchor, batch.positive, batch.negative], mode)
    return triplet_hinge(f_a, f_pos, f_neg, margin).mean()


def embed_triplets(model, batch, unlabelled_batch=None):
    """Student-mode discriminative features of a TripletBatch and an optional photo triplet batch."""
    sets = [batch.anchor_sketch, batch.positive_photo, batch.negative_photo, batch.positive_sketch, batch.negative_sketch, batch.augmented_photo]
    if unlabelled_batch is not None:
        sets.extend([unlabelled_batch.anchor, unlabelled_batch.positive, unlabelled_batch.negative])
    f = _forward_features(model, sets, "student")
    embeddings = TripletEmbeddings(f_s=f[0], f_p=f[1], f_n=f[2], f_sp=f[3], f_sn=f[4], f_pt=f[5], ids=list(batch.anchor_ids))
    if unlabelled_batch is not None:
        embeddings.u_a, embeddings.u_pos, embeddings.u_neg = f[6], f[7], f[8]
        embeddings.u_ids = list(unlabelled_batch.anchor_ids)
    return embeddings


def student_loss(model, batch, unlabelled_batch, hp, recipe, bank=None, pool=None):
    """Total student objective for one step.

    total = discriminative loss (+ lambda6 * distillation loss when the recipe distils).

    Returns
    -------
    total : tensor

    LossBreakdown

    DistillationBreakdown or None
    """
    include_unlabelled = unlabelled_batch is not None
    embeddings = embed_triplets(model, batch, unlabelled_batch)
    discriminative = combined_training_loss(embeddings, hp, include_unlabelled=include_unlabelled, use_im=recipe.use_im, photo_objective=recipe.photo_objective)
    total = discriminative.total

    distillation = None
    if recipe.distill:
        distill_total, distillation = distillation_loss(model, bank, batch, unlabelled_batch, hp, pool,
                                                        kl_pl=recipe.kl_pl, kl_sl=recipe.kl_sl, kl_pu=recipe.kl_pu and include_unlabelled,
                                                        objective=recipe.kd_objective)
        total = total+hp.lambda6*distill_total

    return total, discriminative, distillation


@dataclass
class TrainState:
    """Everything needed to continue or reproduce a run besides the data."""
    model: PyramidBackbone
    optimizer: torch.optim.Optimizer
    scheduler: object
    ema: Optional[EmaState]
    step: int
    rngs: Dict[str, np.random.Generator]
    config_hash: str


@dataclass
class TeacherResult:
    model: PyramidBackbone
    bank: FeatureBank
    steps: int
    losses: List[float]
    probe_initial: float
    probe_final: float
    state: TrainState


@dataclass
class TrainResult:
    """Outcome of a student run.

    reported holds the final accuracies of the weights the recipe reports (EMA
    when the recipe uses EMA, raw otherwise); raw and ema hold both.
    """
    model: PyramidBackbone
    ema: EmaState
    recipe: Recipe
    metrics: List[dict]
    reported: Dict[str, float]
    raw: Dict[str, float]
    ema_acc: Dict[str, float]
    labelled_id_log: set
    state: TrainState

    @contextmanager
    def reported_weights(self):
        """Installs the reported weights in self.model for the duration of the block."""
        if self.recipe.use_ema:
            with ema_swap_for_eval(self.ema, self.model):
                yield self.model
        else:
            yield self.model


def _check_finite(total, step):
    value = float(total)
    if not math.isfinite(value):
        raise NonFiniteLossError(step, value)


def pretrain_teacher(photos, hp, **kwargs):
    """Trains the photo-only teacher with the photo-form intra-modal triplet.

    Each step draws anchors from a permutation of the pool, a structural augmentation
    of each anchor as positive and a random other photo as negative.

    Parameters
    ----------
    photos : dict
        The photo pool G (unlabelled photos and photos of labelled pairs), keyed by id.

    hp : Hyperparameters

    out_dir : str, optional
        Writes teacher.ckpt and bank.bin here.

    dtype : torch.dtype, optional
        Defaults to torch.float32.

    verbose : bool, optional

    Returns
    -------
    TeacherResult
        The teacher is frozen (no gradients, eval mode) and its feature bank over the
        pool is built.
    """

    out_dir = kwargs.get("out_dir", None)
    dtype = kwargs.get("dtype", torch.float32)
    verbose = kwargs.get("verbose", False)

    if len(photos) < 2:
        raise DatasetError("Teacher pre-training needs at least 2 photos in the pool, got {0}.".format(len(photos)))

    ids = sorted(photos)
    steps_per_epoch = batch_count(len(ids), hp.batch_size)
    total_steps = hp.epochs*steps_per_epoch

    model = PyramidBackbone(hp, token_design="none", init_name="teacher.init").to(dtype)
    model.train()
    optimizer, scheduler = make_optimizer(model, hp, total_steps)
    rngs = {"sampling" : component_rng(hp.seed, "teacher.sampling"), "augment" : component_rng(hp.seed, "teacher.augment")}
    augment_kwargs = {"max_rotation" : hp.max_rotation, "perspective_strength" : hp.perspective_strength}

    # Fixed probe batch for the descent check
    probe = sample_photo_triplet_batch(photos, min(hp.batch_size, len(ids)), component_rng(hp.seed, "teacher.probe"), **augment_kwargs)
    with torch.no_grad():
        probe_initial = float(photo_triplet_loss(model, probe, hp.m_im_p))

    if verbose:
        print("\nPre-training teacher on {0} photos for {1} steps...".format(len(ids), total_steps))
        print("{0:<12}{1:<20}".format("Step", "Loss"))
    start_time = time.time()

    step = 0
    losses = []
    for _ in range(hp.epochs):
        for chunk in epoch_batches(ids, hp.batch_size, rngs["sampling"]):
            step += 1
            batch = sample_photo_triplet_batch(photos, len(chunk), rngs["sampling"], anchor_ids=chunk, augment_rng=rngs["augment"], **augment_kwargs)
            loss = photo_triplet_loss(model, batch, hp.m_im_p)
            _check_finite(loss, step)

            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            scheduler.step()

            losses.append(float(loss))
            if verbose and (step % hp.eval_every == 0 or step == total_steps):
                print("{0:<12}{1:<20.10f}".format(step, float(loss)))

    with torch.no_grad():
        probe_final = float(photo_triplet_loss(model, probe, hp.m_im_p))

    # Freeze
    for param in model.parameters():
        param.requires_grad_(False)
    model.eval()
    bank = build_bank(model, photos)

    if verbose:
        print("Teacher done in {0:.1f} s. Probe loss {1:.6f} -> {2:.6f}".format(time.time()-start_time, probe_initial, probe_final))

    state = TrainState(model=model, optimizer=optimizer, scheduler=scheduler, ema=None, step=step, rngs=rngs, config_hash=config_hash(hp))
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        save_checkpoint(os.path.join(out_dir, "teacher.ckpt"), model, hp, state=state, kind="teacher")
        bank.save(os.path.join(out_dir, "bank.bin"))

    return TeacherResult(model=model, bank=bank, steps=step, losses=losses, probe_initial=probe_initial, probe_final=probe_final, state=state)


def train_student(train_set, hp, mode="strong_baseline", **kwargs):
    """Trains the cross-modal student.

    Per step: a labelled TripletBatch over a permutation of the labelled instances,
    an equally sized unlabelled photo triplet batch when the pool has unlabelled
    photos, the discriminative loss, the distillation loss in distilling modes,
    one optimizer step and one EMA update. Every eval_every steps (and at the last
    step) the raw and EMA weights are evaluated on the gallery.

    Parameters
    ----------
    train_set : SketchPhotoDataset
        Labelled pairs and unlabelled photos.

    hp : Hyperparameters

    mode : str, optional
        "strong_baseline" (default), "full_kd" or an ablation mode (see RECIPES).

    teacher : PyramidBackbone, optional
        Frozen teacher. Required by distilling modes unless bank is given.

    bank : FeatureBank, optional
        Teacher bank over the photo pool of train_set. Built from teacher when not given.

    gallery : SketchPhotoDataset, optional
        Held-out labelled instances for evaluation. Without it no accuracy is logged.

    out_dir : str, optional
        Writes student.ckpt and metrics.csv here.

    dtype : torch.dtype, optional
        Defaults to torch.float32.

    verbose : bool, optional

    Returns
    -------
    TrainResult

    Raises
    ------
    ValueError
        If a distilling mode has neither teacher nor bank.

    BankMismatchError
        If the bank names photos outside the training pool.

    DatasetError
        If there are fewer than 2 labelled instances, or the mode distils only over
        unlabelled photos and fewer than 2 are available.

    ConfigError
        If the contrastive mode is given a batch size below 2.

    NonFiniteLossError
        If the loss becomes NaN or infinite.
    """

    teacher = kwargs.get("teacher", None)
    bank = kwargs.get("bank", None)
    gallery = kwargs.get("gallery", None)
    out_dir = kwargs.get("out_dir", None)
    dtype = kwargs.get("dtype", torch.float32)
    verbose = kwargs.get("verbose", False)

    recipe = get_recipe(mode)
    labelled = train_set.labelled
    if len(labelled) < 2:
        raise DatasetError("Student training needs at least 2 labelled instances, got {0}.".format(len(labelled)))

    unlabelled_photos = {instance.instance_id : instance.photo for instance in train_set.unlabelled}
    include_unlabelled = len(unlabelled_photos) >= 2
    pool = train_set.photo_pool()

    if recipe.photo_objective == "contrastive" and hp.batch_size < 2:
        raise ConfigError("batch_size", hp.batch_size, "must be >= 2 for the contrastive photo objective")
    if recipe.distill and not (recipe.kl_pl or recipe.kl_sl or (recipe.kl_pu and include_unlabelled)):
        raise DatasetError("Mode '{0}' only distils over unlabelled photos and the training set has {1} (at least 2 are needed).".format(mode, len(unlabelled_photos)))

    # Teacher bank
    if recipe.distill:
        if bank is None:
            if teacher is None:
                raise ValueError("Mode '{0}' distils from a teacher; pass a teacher or a feature bank.".format(mode))
            bank = build_bank(teacher, pool)
        missing = [photo_id for photo_id in bank.ids if photo_id not in pool]
        if missing:
            raise BankMismatchError(missing)
        if len(bank) < hp.K+1:
            raise ConfigError("K", hp.K, "needs a bank of at least K+1 photos, the bank has {0}".format(len(bank)))

    labelled_ids = [instance.instance_id for instance in labelled]
    steps_per_epoch = batch_count(len(labelled_ids), hp.batch_size)
    total_steps = hp.epochs*steps_per_epoch

    model = PyramidBackbone(hp, token_design=recipe.token_design, init_name="student.init").to(dtype)
    model.train()
    optimizer, scheduler = make_optimizer(model, hp, total_steps)
    ema = ema_init(model, hp.beta)

    # Sampling streams are shared by every mode, so variants see the same data order
    rngs = {"sampling" : component_rng(hp.seed, "student.sampling"),
            "unlabelled" : component_rng(hp.seed, "student.unlabelled"),
            "augment" : component_rng(hp.seed, "student.augment")}
    augment_kwargs = {"augmentation" : recipe.augmentation, "augment_rng" : rngs["augment"],
                      "max_rotation" : hp.max_rotation, "perspective_strength" : hp.perspective_strength}

    if verbose:
        print("\nTraining student ({0}) on {1} labelled and {2} unlabelled instances for {3} steps...".format(mode, len(labelled_ids), len(unlabelled_photos), total_steps))
        print("{0:<12}{1:<16}{2:<16}{3:<16}{4:<12}{5:<12}".format("Step", "Total", "Discrim.", "Distill.", "Acc@1 raw", "Acc@1 EMA"))
    start_time = time.time()

    metrics = []
    id_log = set()
    raw_acc = {}
    ema_acc = {}
    step = 0
    for _ in range(hp.epochs):
        for chunk in epoch_batches(labelled_ids, hp.batch_size, rngs["sampling"]):
            step += 1

            batch = sample_triplet_batch(train_set, len(chunk), rngs["sampling"], anchor_ids=chunk, **augment_kwargs)
            id_log.update(batch.anchor_ids)
            id_log.update(batch.negative_ids)
            unlabelled_batch = None
            if include_unlabelled:
                unlabelled_batch = sample_photo_triplet_batch(unlabelled_photos, len(chunk), rngs["unlabelled"], **augment_kwargs)

            total, discriminative, distillation = student_loss(model, batch, unlabelled_batch, hp, recipe, bank=bank, pool=pool)
            _check_finite(total, step)

            optimizer.zero_grad()
            total.backward()
            optimizer.step()
            scheduler.step()
            ema_update(ema, model)

            row = {column : None for column in METRICS_COLUMNS}
            row["step"] = step
            row["loss_total"] = float(total)
            for name, value in discriminative.as_floats().items():
                if name != "total":
                    row["loss_"+name] = value
            if not include_unlabelled:
                row["loss_tri_u"] = None
            if distillation is not None:
                for name in ("kl_pl", "kl_sl", "kl_pu"):
                    row["loss_"+name] = distillation.as_floats()[name]

            # Evaluation with raw and EMA weights
            if gallery is not None and (step % hp.eval_every == 0 or step == total_steps):
                raw_acc = evaluate_model(model, gallery)
                with ema_swap_for_eval(ema, model):
                    ema_acc = evaluate_model(model, gallery)
                for key in raw_acc:
                    row[key+"_raw"] = raw_acc[key]
                    row[key+"_ema"] = ema_acc[key]

            metrics.append(row)
            if verbose and (step % hp.eval_every == 0 or step == total_steps):
                distill_value = float(total)-float(discriminative.total)
                print("{0:<12}{1:<16.8f}{2:<16.8f}{3:<16.8f}{4:<12}{5:<12}".format(step, float(total), float(discriminative.total), distill_value,
                                                                                  "" if row["acc1_raw"] is None else "{0:.4f}".format(row["acc1_raw"]),
                                                                                  "" if row["acc1_ema"] is None else "{0:.4f}".format(row["acc1_ema"])))

    if verbose:
        print("Student done in {0:.1f} s.".format(time.time()-start_time))

    state = TrainState(model=model, optimizer=optimizer, scheduler=scheduler, ema=ema, step=step, rngs=rngs, config_hash=config_hash(hp))
    reported = dict(ema_acc if recipe.use_ema else raw_acc)

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        save_checkpoint(os.path.join(out_dir, "student.ckpt"), model, hp, state=state, kind="student")
        write_metrics_csv(metrics, os.path.join(out_dir, "metrics.csv"))

    return TrainResult(model=model, ema=ema, recipe=recipe, metrics=metrics, reported=reported, raw=raw_acc, ema_acc=ema_acc, labelled_id_log=id_log, state=state)


def write_metrics_csv(rows, filename):
    """Writes metrics rows with the fixed column set; missing values are empty cells."""
    lines = [",".join(METRICS_COLUMNS)]
    for row in rows:
        lines.append(",".join("" if row.get(column) is None else repr(row[column]) for column in METRICS_COLUMNS))
    atomic_write_text(filename, "\n".join(lines)+"\n")


@dataclass
class Checkpoint:
    model: PyramidBackbone
    hp: object
    kind: str
    step: int
    ema: Optional[EmaState]
    payload: dict


def save_checkpoint(filename, model, hp, **kwargs):
    """Saves a model with its configuration.

    Parameters are stored under "backbone.<name>", the EMA shadow under
    "ema.<name>", together with optimizer and scheduler state, the step count, the
    sampling generator states and the configuration hash.

    Parameters
    ----------
    filename : str

    model : PyramidBackbone

    hp : Hyperparameters

    state : TrainState, optional

    kind : str, optional
        "teacher" or "student". Defaults to "student".
    """

    state = kwargs.get("state", None)
    kind = kwargs.get("kind", "student")

    payload = {
        "kind" : kind,
        "config" : hp.to_dict(),
        "config_hash" : config_hash(hp),
        "token_design" : model.token_design,
        "params" : OrderedDict((PARAM_PREFIX+name, tensor.detach().clone()) for name, tensor in model.state_dict().items()),
        "step" : 0
    }
    if state is not None:
        payload["step"] = state.step
        payload["optimizer"] = state.optimizer.state_dict()
        payload["scheduler"] = state.scheduler.state_dict()
        payload["rng"] = {name : rng.bit_generator.state for name, rng in state.rngs.items()}
        if state.ema is not None:
            payload["ema"] = state.ema.state_dict()
            payload["ema_beta"] = state.ema.beta
            payload["ema_step"] = state.ema.step

    torch.save(payload, filename)


def load_checkpoint(filename, hp=None):
    """Loads a checkpoint written by save_checkpoint.

    Parameters
    ----------
    filename : str

    hp : Hyperparameters, optional
        When given, its hash must match the checkpoint's. Otherwise the stored
        configuration is used.

    Returns
    -------
    Checkpoint
    """

    check_filepath(filename, ".ckpt")
    payload = torch.load(filename, map_location="cpu")

    if hp is None:
        hp = load_config(payload["config"])
    elif config_hash(hp) != payload["config_hash"]:
        raise ConfigError("config", config_hash(hp), "does not match the checkpoint {0} (hash {1})".format(filename, payload["config_hash"]))

    params = OrderedDict((name[len(PARAM_PREFIX):], tensor) for name, tensor in payload["params"].items())
    dtype = next(iter(params.values())).dtype
    model = PyramidBackbone(hp, token_design=payload["token_design"]).to(dtype)
    model.load_state_dict(params)
    if payload["kind"] == "teacher":
        for param in model.parameters():
            param.requires_grad_(False)
        model.eval()

    ema = None
    if "ema" in payload:
        ema = load_ema_state(payload["ema"], payload["ema_beta"], payload["ema_step"])

    return Checkpoint(model=model, hp=hp, kind=payload["kind"], step=payload["step"], ema=ema, payload=payload)


@dataclass
class AblationTable:
    """Acc@1 of each suite variant over a fixed set of seeds."""
    suite: str
    variants: List[str]
    seeds: List[int]
    accuracies: Dict[str, List[float]]

    def row(self, variant):
        values = self.accuracies[variant]
        return {"variant" : variant, "seeds" : len(values), "acc1_mean" : float(np.mean(values)), "acc1_std" : population_std(values)}

    @property
    def rows(self):
        return [self.row(variant) for variant in self.variants]

    def to_csv(self):
        lines = ["variant,seeds,acc1_mean,acc1_std"]
        for row in self.rows:
            lines.append("{0},{1},{2:.6f},{3:.6f}".format(row["variant"], row["seeds"], row["acc1_mean"], row["acc1_std"]))
        return "\n".join(lines)+"\n"


def run_ablation(suite, train_set, test_set, hp, **kwargs):
    """Runs every variant of an ablation suite over fixed seeds.

    Suites are "loss_stripdown" (I, II, III, IV, full), "augmentation" (structural,
    color, blur, sharpness), "token_design" (A, B, ours), "objective" (triplet,
    contrastive) and "kd_family" (regress, rkd, pkt, contextual). Within a seed all
    variants share one teacher and one data order.

    Parameters
    ----------
    suite : str

    train_set, test_set : SketchPhotoDataset

    hp : Hyperparameters

    seeds : list of int, optional
        Defaults to [hp.seed, hp.seed+1, hp.seed+2].

    out_dir : str, optional
        Writes ablation_<suite>.csv here.

    verbose : bool, optional

    Returns
    -------
    AblationTable
    """

    seeds = list(kwargs.get("seeds", [hp.seed, hp.seed+1, hp.seed+2]))
    out_dir = kwargs.get("out_dir", None)
    verbose = kwargs.get("verbose", False)

    if suite not in SUITES:
        raise ValueError("{0} is not a valid ablation suite. Choose from {1}.".format(suite, sorted(SUITES)))
    variants = SUITES[suite]

    accuracies = {label : [] for label, _ in variants}
    for seed in seeds:
        hp_seed = hp.replace(seed=seed)
        teacher = None
        if any(get_recipe(mode).distill for _, mode in variants):
            teacher = pretrain_teacher(train_set.photo_pool(), hp_seed, verbose=verbose)
        for label, mode in variants:
            result = train_student(train_set, hp_seed, mode=mode, bank=teacher.bank if teacher is not None and get_recipe(mode).distill else None,
                                   gallery=test_set, verbose=verbose)
            accuracies[label].append(result.reported["acc1"])
            if verbose:
                print("{0:<20}{1:<8}{2:<10.4f}".format(label, seed, result.reported["acc1"]))

    table = AblationTable(suite=suite, variants=[label for label, _ in variants], seeds=seeds, accuracies=accuracies)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        atomic_write_text(os.path.join(out_dir, "ablation_{0}.csv".format(suite)), table.to_csv())
    return table
