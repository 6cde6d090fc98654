"""Retrieval metrics, training-stability traces, the data-scaling study and the
cross-category harness."""

import os
import csv
from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np
import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

from sketchkd.helpers import component_rng, atomic_write_text
from sketchkd.data import split_dataset, subsample_labelled, SketchPhotoDataset
from sketchkd.exceptions import DatasetError


ACC_QS = (1, 5, 10)


@dataclass
class RetrievalResult:
    """Rank of the true photo for every query sketch.

    Members
    ----------
    ranks : ndarray
        1-based rank per sketch.

    gallery_sizes : ndarray
        Size of the gallery each sketch was ranked against.

    groups : list
        Class of each sketch (the gallery it was searched in when per-class).

    query_ids : list
        Instance id of each sketch.
    """
    ranks: np.ndarray
    gallery_sizes: np.ndarray
    groups: List[str] = field(default_factory=list)
    query_ids: List[str] = field(default_factory=list)

    def __post_init__(self):
        self.ranks = np.asarray(self.ranks, dtype=np.int64)
        self.gallery_sizes = np.broadcast_to(np.asarray(self.gallery_sizes, dtype=np.int64), self.ranks.shape).copy()
        if (self.ranks < 1).any() or (self.ranks > self.gallery_sizes).any():
            raise ValueError("Every rank must lie between 1 and its gallery size.")

    def __len__(self):
        return len(self.ranks)

    @property
    def gallery_size(self):
        return int(self.gallery_sizes.max()) if len(self) else 0

    def by_group(self):
        """Splits the result by class."""
        out = {}
        for group in sorted(set(self.groups)):
            rows = [i for i, g in enumerate(self.groups) if g == group]
            out[group] = RetrievalResult(self.ranks[rows], self.gallery_sizes[rows], [group]*len(rows), [self.query_ids[i] for i in rows])
        return out


def retrieval_ranks(sketch_features, photo_features, photo_ids, true_ids):
    """Ranks of the true photos under squared Euclidean distance.

    rank = 1 + #{closer photos} + #{equally close photos with a smaller id}.
    """
    sketch_features = np.asarray(sketch_features, dtype=np.float64)
    photo_features = np.asarray(photo_features, dtype=np.float64)
    photo_ids = np.asarray(photo_ids, dtype=object)
    index_of = {photo_id : i for i, photo_id in enumerate(photo_ids)}

    ranks = np.empty(len(true_ids), dtype=np.int64)
    for i, (query, true_id) in enumerate(zip(sketch_features, true_ids)):
        dists = ((photo_features-query)**2).sum(axis=1)
        true_dist = dists[index_of[true_id]]
        tied_before = np.array([photo_id < true_id for photo_id in photo_ids]) & (dists == true_dist)
        ranks[i] = 1+int((dists < true_dist).sum())+int(tied_before.sum())
    return ranks


def retrieval(model, gallery, mode="student", per_class=False, batch_size=64):
    """Ranks every sketch of a labelled gallery set against its photos.

    Parameters
    ----------
    model : PyramidBackbone
        Used without gradients and left unchanged.

    gallery : SketchPhotoDataset
        Labelled instances; their photos form the gallery, their sketches the queries.

    mode : str, optional
        Backbone mode. Defaults to "student".

    per_class : bool, optional
        Search only photos of the query's own class. Defaults to False.

    Returns
    -------
    RetrievalResult
    """

    instances = gallery.labelled
    if len(instances) == 0:
        raise DatasetError("The retrieval gallery has no labelled instances.")

    was_training = model.training
    model.eval()
    try:
        photos = np.stack([instance.photo for instance in instances], axis=0)
        sketches = np.stack([sketch for instance in instances for sketch in instance.sketches], axis=0)
        photo_features = model.embed(photos, mode=mode, batch_size=batch_size)
        sketch_features = model.embed(sketches, mode=mode, batch_size=batch_size)
    finally:
        model.train(was_training)
    if mode == "student":
        photo_features = photo_features[0]
        sketch_features = sketch_features[0]

    photo_ids = [instance.instance_id for instance in instances]
    photo_classes = np.array([instance.class_id for instance in instances], dtype=object)
    true_ids = [instance.instance_id for instance in instances for _ in instance.sketches]
    groups = [instance.class_id for instance in instances for _ in instance.sketches]

    if not per_class:
        ranks = retrieval_ranks(sketch_features, photo_features, photo_ids, true_ids)
        return RetrievalResult(ranks, len(photo_ids), groups, true_ids)

    ranks = np.empty(len(true_ids), dtype=np.int64)
    sizes = np.empty(len(true_ids), dtype=np.int64)
    for group in sorted(set(groups)):
        columns = np.nonzero(photo_classes == group)[0]
        rows = [i for i, g in enumerate(groups) if g == group]
        ranks[rows] = retrieval_ranks(sketch_features[rows], photo_features[columns], [photo_ids[j] for j in columns], [true_ids[i] for i in rows])
        sizes[rows] = len(columns)
    return RetrievalResult(ranks, sizes, groups, true_ids)


def acc_at_q(results, q):
    """Fraction of query sketches whose true photo ranks within the top q."""
    if q < 1:
        raise ValueError("q must be >= 1, got {0}.".format(q))
    if len(results) == 0:
        raise ValueError("Cannot compute accuracy over an empty result.")
    return float(np.mean(results.ranks <= q))


def evaluate_model(model, gallery, mode="student", per_class=False):
    """Returns {"acc1", "acc5", "acc10"} for the model on the gallery."""
    result = retrieval(model, gallery, mode=mode, per_class=per_class)
    return {"acc{0}".format(q) : acc_at_q(result, q) for q in ACC_QS}


def population_std(values):
    return float(np.std(np.asarray(values, dtype=np.float64)))


@dataclass
class StabilityTrace:
    """Evaluation-accuracy traces and their late-training spread."""
    std_raw: float
    std_ema: float
    steps: np.ndarray
    acc1_raw: np.ndarray
    acc1_ema: np.ndarray

    def series(self):
        return {"acc1_raw" : (self.steps, self.acc1_raw), "acc1_ema" : (self.steps, self.acc1_ema)}


def stability_trace(metrics, min_rows=20):
    """Spread of Acc@1 over the last half of the evaluation checkpoints.

    Parameters
    ----------
    metrics : str or list of dict
        Path to a metrics CSV, or its rows.

    min_rows : int, optional
        Minimum number of evaluation rows. Defaults to 20.

    Returns
    -------
    StabilityTrace
        Population standard deviations of the raw and EMA Acc@1 columns.
    """

    if isinstance(metrics, str):
        if not os.path.exists(metrics):
            raise IOError("Cannot find metrics file {0}.".format(metrics))
        with open(metrics, 'r', newline='') as metrics_handle:
            reader = csv.DictReader(metrics_handle)
            columns = reader.fieldnames or []
            rows = list(reader)
    else:
        rows = list(metrics)
        columns = list(rows[0].keys()) if rows else []

    for column in ("step", "acc1_raw", "acc1_ema"):
        if column not in columns:
            raise ValueError("Metrics are missing the '{0}' column.".format(column))

    def value(cell):
        if cell is None or cell == "":
            return None
        return float(cell)

    steps = []
    raw = []
    ema = []
    for row in rows:
        a_raw = value(row["acc1_raw"])
        a_ema = value(row["acc1_ema"])
        if a_raw is None and a_ema is None:
            continue
        if a_raw is None or a_ema is None:
            raise ValueError("Evaluation row at step {0} has only one of acc1_raw and acc1_ema.".format(row["step"]))
        steps.append(int(float(row["step"])))
        raw.append(a_raw)
        ema.append(a_ema)

    if len(steps) < min_rows:
        raise ValueError("Stability needs at least {0} evaluation rows, found {1}.".format(min_rows, len(steps)))

    half = len(steps)//2
    return StabilityTrace(std_raw=population_std(raw[half:]), std_ema=population_std(ema[half:]),
                          steps=np.array(steps), acc1_raw=np.array(raw), acc1_ema=np.array(ema))


def write_series_csv(series, filename):
    """Writes named (x, y) series as long-format CSV with columns series, x, y."""
    lines = ["series,x,y"]
    for name, (x, y) in series.items():
        for xi, yi in zip(x, y):
            lines.append("{0},{1},{2}".format(name, xi, yi))
    atomic_write_text(filename, "\n".join(lines)+"\n")


def plot_series(series, filename, **kwargs):
    """Plots named (x, y) series to an image file.

    Parameters
    ----------
    series : dict
        Name -> (x, y).

    filename : str
        Output image path.

    xlabel, ylabel, title : str, optional
    """
    fig = plt.figure(figsize=plt.figaspect(0.6))
    ax = fig.gca()
    for name, (x, y) in series.items():
        ax.plot(x, y, label=name)
    ax.set_xlabel(kwargs.get("xlabel", "step"))
    ax.set_ylabel(kwargs.get("ylabel", "Acc@1"))
    if "title" in kwargs:
        ax.set_title(kwargs["title"])
    ax.legend()
    fig.savefig(filename)
    plt.close(fig)


def _mean_std(values):
    return float(np.mean(values)), population_std(values)


@dataclass
class StudyTable:
    """Acc@1 per (mode, fraction) cell, one value per seed."""
    fractions: List[float]
    modes: List[str]
    seeds: List[int]
    cells: Dict[tuple, List[float]]

    def mean(self, mode, fraction):
        return float(np.mean(self.cells[(mode, fraction)]))

    @property
    def baseline_improves_with_data(self):
        """True when the baseline mean Acc@1 at the smallest fraction is below that at the largest."""
        if "strong_baseline" not in self.modes or len(self.fractions) < 2:
            return False
        return self.mean("strong_baseline", min(self.fractions)) < self.mean("strong_baseline", max(self.fractions))

    def to_csv(self):
        lines = ["mode,fraction,seeds,acc1_mean,acc1_std"]
        for mode in self.modes:
            for fraction in self.fractions:
                mean, std = _mean_std(self.cells[(mode, fraction)])
                lines.append("{0},{1},{2},{3:.6f},{4:.6f}".format(mode, fraction, len(self.seeds), mean, std))
        return "\n".join(lines)+"\n"


def data_scaling_study(train_set, test_set, fractions, hp, **kwargs):
    """Trains each mode at each labelled fraction with the unlabelled pool fixed.

    Parameters
    ----------
    train_set, test_set : SketchPhotoDataset
        Training pool and held-out gallery.

    fractions : list of float
        Labelled fractions in (0, 1].

    hp : Hyperparameters

    modes : list of str, optional
        Defaults to ["strong_baseline", "full_kd"].

    seeds : list of int, optional
        Defaults to [hp.seed].

    out_dir : str, optional
        Where the table (study.csv) is written.

    verbose : bool, optional

    Returns
    -------
    StudyTable
    """

    # Deferred to avoid a circular import
    from sketchkd.trainer import pretrain_teacher, train_student, get_recipe

    modes = list(kwargs.get("modes", ["strong_baseline", "full_kd"]))
    seeds = list(kwargs.get("seeds", [hp.seed]))
    out_dir = kwargs.get("out_dir", None)
    verbose = kwargs.get("verbose", False)

    fractions = [float(fraction) for fraction in fractions]
    for fraction in fractions:
        if not 0.0 < fraction <= 1.0:
            raise DatasetError("Labelled fractions must lie in (0, 1], got {0}.".format(fraction))

    cells = {(mode, fraction) : [] for mode in modes for fraction in fractions}
    for seed in seeds:
        hp_seed = hp.replace(seed=seed)

        # One teacher per seed, trained on the full photo pool
        teacher = None
        if any(get_recipe(mode).distill for mode in modes):
            teacher = pretrain_teacher(train_set.photo_pool(), hp_seed, verbose=verbose).model

        for fraction in fractions:
            subset = subsample_labelled(train_set, fraction, component_rng(seed, "study.subsample"))
            for mode in modes:
                result = train_student(subset, hp_seed, mode=mode, teacher=teacher if get_recipe(mode).distill else None, gallery=test_set, verbose=verbose)
                cells[(mode, fraction)].append(result.reported["acc1"])
                if verbose:
                    print("{0:<20}{1:<10}{2:<8}{3:<10.4f}".format(mode, fraction, seed, result.reported["acc1"]))

    table = StudyTable(fractions=fractions, modes=modes, seeds=seeds, cells=cells)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        atomic_write_text(os.path.join(out_dir, "study.csv"), table.to_csv())
    return table


@dataclass
class CrossCategoryReport:
    """Per-class Acc@q on classes that had no training pairs."""
    per_class: Dict[str, Dict[str, float]]
    mean: Dict[str, float]
    chance: float
    unseen_classes: List[str]
    leaked_ids: List[str]

    def to_text(self):
        lines = ["unseen_classes: {0}".format(",".join(self.unseen_classes)),
                 "chance_acc1: {0:.6f}".format(self.chance)]
        for q in ACC_QS:
            lines.append("mean_acc{0}: {1:.6f}".format(q, self.mean["acc{0}".format(q)]))
        for class_id, accs in sorted(self.per_class.items()):
            lines.append("class {0}: ".format(class_id)+" ".join("{0}={1:.6f}".format(key, accs[key]) for key in sorted(accs)))
        lines.append("leaked_ids: {0}".format(len(self.leaked_ids)))
        return "\n".join(lines)+"\n"


def cross_category_harness(dataset, seen_classes, unseen_classes, hp, **kwargs):
    """Trains on paired data from seen classes and only photos from unseen classes,
    then retrieves within a separate gallery per unseen class.

    Parameters
    ----------
    dataset : SketchPhotoDataset
        Labelled instances of every class, plus any unlabelled photos.

    seen_classes, unseen_classes : list of str
        Disjoint class sets.

    hp : Hyperparameters

    mode : str, optional
        Student mode. Defaults to "full_kd".

    n_test : int, optional
        Held-out seen instances used when unseen_classes is empty. Defaults to a
        quarter of the seen labelled instances.

    verbose : bool, optional

    Returns
    -------
    CrossCategoryReport
    """

    from sketchkd.trainer import pretrain_teacher, train_student, get_recipe

    mode = kwargs.get("mode", "full_kd")
    verbose = kwargs.get("verbose", False)

    seen_classes = sorted(seen_classes)
    unseen_classes = sorted(unseen_classes)
    overlap = set(seen_classes) & set(unseen_classes)
    if overlap:
        raise DatasetError("Seen and unseen classes overlap: {0}.".format(sorted(overlap)))

    seen = dataset.filter_classes(seen_classes)
    unseen = dataset.filter_classes(unseen_classes)
    unseen_labelled = unseen.subset([instance.instance_id for instance in unseen.labelled])

    if len(unseen_classes) == 0:
        # Degenerate split: ordinary held-out evaluation on the seen classes
        n_test = kwargs.get("n_test", max(1, len(seen.labelled)//4))
        train_set, gallery = split_dataset(seen, n_test, component_rng(hp.seed, "cross_category.split"))
        per_class_search = False
    else:
        train_set = seen.merge(unseen.as_unlabelled())
        gallery = unseen_labelled
        per_class_search = True

    teacher = None
    if get_recipe(mode).distill:
        teacher = pretrain_teacher(train_set.photo_pool(), hp, verbose=verbose).model
    result = train_student(train_set, hp, mode=mode, teacher=teacher, verbose=verbose)

    unseen_ids = {instance.instance_id for instance in unseen.instances}
    leaked = sorted(result.labelled_id_log & unseen_ids)

    with result.reported_weights():
        ranks = retrieval(result.model, gallery, mode="student", per_class=per_class_search)

    if per_class_search:
        groups = ranks.by_group()
        per_class = {class_id : {"acc{0}".format(q) : acc_at_q(group, q) for q in ACC_QS} for class_id, group in groups.items()}
        mean = {"acc{0}".format(q) : float(np.mean([accs["acc{0}".format(q)] for accs in per_class.values()])) for q in ACC_QS}
        chance = float(np.mean([1.0/group.gallery_size for group in groups.values()]))
    else:
        mean = {"acc{0}".format(q) : acc_at_q(ranks, q) for q in ACC_QS}
        per_class = {}
        chance = 1.0/ranks.gallery_size

    return CrossCategoryReport(per_class=per_class, mean=mean, chance=chance, unseen_classes=unseen_classes, leaked_ids=leaked)
