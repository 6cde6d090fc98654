"""Contextual-similarity knowledge distillation from a frozen photo teacher.

The teacher embeds every photo of the pool once into a FeatureBank. For a query
photo the bank supplies its K nearest neighbours and the teacher distances to them;
the student recomputes the same distances in its own distillation space and the two
temperature-softmaxed distance distributions are matched under KL(teacher || student).

Bank file layout (all little-endian):

    bytes 0-7      magic b"SKDBANK1"
    bytes 8-11     uint32 header length H
    next H bytes   UTF-8 JSON header {"N": int, "d": int, "ids": [str, ...]}
    remainder      N*d float32 values, row-major (row i is the feature of ids[i])
"""

import json
import struct
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import torch
import torch.nn.functional as F

from sketchkd.losses import as_tensor
from sketchkd.backbone import as_image_tensor
from sketchkd.exceptions import BankMismatchError


BANK_MAGIC = b"SKDBANK1"

KD_OBJECTIVES = ("contextual", "regress", "rkd", "pkt")


@dataclass(frozen=True)
class NeighbourSet:
    """The K nearest bank entries of a query, closest first."""
    query_id: str
    neighbour_ids: Tuple[str, ...]
    teacher_dists: np.ndarray


class FeatureBank:
    """Frozen teacher embeddings of a photo pool.

    Parameters
    ----------
    ids : list of str
        Unique photo ids, one per row.

    features : ndarray
        Teacher features [N, d]. Stored as float64 and never modified.
    """

    def __init__(self, ids, features):

        features = np.array(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[0] != len(ids):
            raise ValueError("Bank features must have shape [{0}, d], got {1}.".format(len(ids), list(features.shape)))
        if len(set(ids)) != len(ids):
            raise ValueError("Bank ids must be unique.")
        if not np.isfinite(features).all():
            raise ValueError("Bank features must be finite.")

        features.setflags(write=False)
        self.ids = list(ids)
        self.features = features
        self.index_of = {photo_id : i for i, photo_id in enumerate(self.ids)}

        # Position of each row in ascending id order, used to break distance ties
        self.id_rank = np.empty(len(self.ids), dtype=np.int64)
        self.id_rank[np.argsort(np.array(self.ids, dtype=object), kind="stable")] = np.arange(len(self.ids))

        self._neighbour_cache = {}


    def __len__(self):
        return len(self.ids)


    @property
    def d(self):
        return self.features.shape[1]


    def row(self, photo_id):
        return self.features[self.index_of[photo_id]]


    def neighbours(self, photo_id, K):
        """Returns (and caches) the K nearest neighbours of a bank entry, itself excluded."""
        key = (photo_id, K)
        if key not in self._neighbour_cache:
            if photo_id not in self.index_of:
                raise BankMismatchError([photo_id])
            self._neighbour_cache[key] = knn(self, self.row(photo_id), K, exclude_id=photo_id)
        return self._neighbour_cache[key]


    def save(self, filename):
        """Writes the bank in the documented binary layout."""
        header = json.dumps({"N" : len(self.ids), "d" : self.d, "ids" : self.ids}).encode("utf-8")
        with open(filename, 'wb') as bank_handle:
            bank_handle.write(BANK_MAGIC)
            bank_handle.write(struct.pack("<I", len(header)))
            bank_handle.write(header)
            bank_handle.write(self.features.astype("<f4").tobytes(order="C"))


    @classmethod
    def load(cls, filename):
        """Reads a bank written by save."""
        try:
            with open(filename, 'rb') as bank_handle:
                data = bank_handle.read()
        except OSError as e:
            raise IOError("Cannot read feature bank {0}: {1}".format(filename, e))

        if data[:8] != BANK_MAGIC:
            raise IOError("{0} is not a feature bank file.".format(filename))
        header_length = struct.unpack("<I", data[8:12])[0]
        header = json.loads(data[12:12+header_length].decode("utf-8"))
        N = header["N"]
        d = header["d"]
        values = np.frombuffer(data[12+header_length:], dtype="<f4")
        if values.size != N*d:
            raise IOError("Feature bank {0} is truncated: expected {1} values, found {2}.".format(filename, N*d, values.size))
        return cls(header["ids"], values.reshape(N, d).astype(np.float64))


def build_bank(teacher, photos, batch_size=64):
    """Embeds every photo of the pool with the frozen teacher.

    Parameters
    ----------
    teacher : PyramidBackbone
        Used in teacher mode. Its parameters are not changed.

    photos : dict
        Photos keyed by id.

    Returns
    -------
    FeatureBank
        Rows in ascending id order.
    """
    if len(photos) == 0:
        raise ValueError("Cannot build a feature bank from an empty photo pool.")

    ids = sorted(photos)
    was_training = teacher.training
    teacher.eval()
    try:
        features = teacher.embed(np.stack([photos[photo_id] for photo_id in ids], axis=0), mode="teacher", batch_size=batch_size)
    finally:
        teacher.train(was_training)
    return FeatureBank(ids, features)


def knn(bank, query, K, exclude_id=None):
    """Exact K nearest neighbours of a query under squared Euclidean distance.

    Ties are broken by ascending id.

    Parameters
    ----------
    bank : FeatureBank

    query : ndarray
        Query feature [d].

    K : int

    exclude_id : str, optional
        A bank id left out of the candidates (the query itself).

    Returns
    -------
    NeighbourSet
    """

    query = np.asarray(query, dtype=np.float64)
    if query.shape != (bank.d,):
        raise ValueError("Query must have shape [{0}], got {1}.".format(bank.d, list(query.shape)))

    candidates = np.ones(len(bank), dtype=bool)
    if exclude_id is not None and exclude_id in bank.index_of:
        candidates[bank.index_of[exclude_id]] = False
    n_candidates = int(candidates.sum())
    if K < 1 or K > n_candidates:
        raise ValueError("K = {0} is too large for a bank with {1} candidate neighbours.".format(K, n_candidates))

    dists = ((bank.features-query)**2).sum(axis=1)
    rows = np.nonzero(candidates)[0]
    order = rows[np.lexsort((bank.id_rank[rows], dists[rows]))][:K]

    return NeighbourSet(query_id=exclude_id, neighbour_ids=tuple(bank.ids[i] for i in order), teacher_dists=dists[order])


def similarity_distribution(dists, tau):
    """Temperature softmax over negated distances along the last dimension.

    p_j = exp(-d_j/tau) / sum_k exp(-d_k/tau), evaluated with max-subtraction.
    """
    if not tau > 0.0:
        raise ValueError("Temperature must be > 0, got {0}.".format(tau))
    dists = as_tensor(dists)
    if not torch.isfinite(dists).all() or (dists < 0.0).any():
        raise ValueError("Distances must be finite and >= 0.")
    return torch.softmax(-dists/tau, dim=-1)


def kl_consistency(p_teacher, p_student):
    """KL(teacher || student) along the last dimension, with 0*ln(0/x) = 0.

    The teacher distribution is treated as a constant. Student probabilities that
    underflowed to zero are clamped to the smallest normal float.
    """
    p_teacher = as_tensor(p_teacher).detach()
    p_student = as_tensor(p_student)
    if p_teacher.shape != p_student.shape:
        raise ValueError("Distributions have different shapes {0} and {1}.".format(list(p_teacher.shape), list(p_student.shape)))
    for name, p in (("teacher", p_teacher), ("student", p_student)):
        if (torch.abs(p.detach().sum(dim=-1)-1.0) > 1e-6).any():
            raise ValueError("The {0} distribution does not sum to 1.".format(name))
    log_student = torch.log(p_student.clamp_min(torch.finfo(p_student.dtype).tiny))
    return (torch.xlogy(p_teacher, p_teacher)-p_teacher*log_student).sum(dim=-1)


@dataclass
class DistillationBreakdown:
    """Batch-mean distillation terms. Disabled terms are None."""
    kl_pl: Optional[torch.Tensor]
    kl_sl: Optional[torch.Tensor]
    kl_pu: Optional[torch.Tensor]
    total: torch.Tensor

    def as_floats(self):
        return {name : (None if value is None else float(value)) for name, value in (("kl_pl", self.kl_pl), ("kl_sl", self.kl_sl), ("kl_pu", self.kl_pu), ("total", self.total))}


def _contextual_term(mu_queries, mu_neighbours, teacher_dists, tau):
    # mu_queries [Q, d], mu_neighbours [Q, K, d], teacher_dists [Q, K]
    # Student side in log space, finite at any temperature
    student_dists = ((mu_queries[:, None, :]-mu_neighbours)**2).sum(dim=-1)
    p_teacher = similarity_distribution(teacher_dists, tau)
    log_student = torch.log_softmax(-student_dists/tau, dim=-1)
    return (torch.xlogy(p_teacher, p_teacher)-p_teacher*log_student).sum(dim=-1).mean()


def _rkd_term(mu_queries, mu_neighbours, teacher_dists):
    # Distance-wise relational loss on mean-normalised neighbour distances
    student_dists = ((mu_queries[:, None, :]-mu_neighbours)**2).sum(dim=-1).clamp_min(1e-12).sqrt()
    teacher = teacher_dists.clamp_min(1e-12).sqrt()
    teacher = teacher/teacher.mean(dim=-1, keepdim=True).clamp_min(1e-12)
    student = student_dists/student_dists.mean(dim=-1, keepdim=True).clamp_min(1e-12)
    return F.smooth_l1_loss(student, teacher)


def _regress_term(mu_queries, teacher_features):
    return ((mu_queries-teacher_features)**2).sum(dim=-1).mean()


def _pkt_term(mu_queries, teacher_features):
    # Cosine-kernel conditional probabilities over the batch, KL(teacher || student) per row
    def conditional(x):
        x = F.normalize(x, dim=-1)
        kernel = (x@x.T+1.0)/2.0
        kernel = kernel*(1.0-torch.eye(x.shape[0], dtype=x.dtype))
        return kernel/kernel.sum(dim=-1, keepdim=True).clamp_min(1e-12)
    p_teacher = conditional(teacher_features).detach()
    p_student = conditional(mu_queries).clamp_min(1e-12)
    return (torch.xlogy(p_teacher, p_teacher)-p_teacher*torch.log(p_student)).sum(dim=-1).mean()


def distillation_loss(student, bank, labelled_batch, unlabelled_batch, hp, pool, **kwargs):
    """Student-side distillation objective.

    total = kl_pl + lambda4*kl_sl + lambda5*kl_pu, where

        kl_pl : labelled photo queries against their bank neighbours,
        kl_sl : labelled sketch queries, with the teacher side taken from the paired
                photo and the student side measured from the sketch to the same
                neighbour photos,
        kl_pu : unlabelled photo queries.

    Student features of queries and neighbours come from one forward pass of the
    live student in student mode (distillation features mu).

    Parameters
    ----------
    student : PyramidBackbone

    bank : FeatureBank
        Teacher features over the photo pool.

    labelled_batch : TripletBatch
        Queries are its anchor ids (photos) and anchor sketches. May be None when
        both labelled terms are disabled.

    unlabelled_batch : PhotoTripletBatch
        Queries are its anchor ids. May be None when kl_pu is disabled.

    hp : Hyperparameters
        Supplies K, tau, lambda4 and lambda5.

    pool : dict
        Photos keyed by id. Must contain every query and neighbour id.

    kl_pl, kl_sl, kl_pu : bool, optional
        Enable the individual terms. All default to True.

    objective : str, optional
        "contextual" (default), or one of the baseline objectives "regress"
        (squared L2 between student mu and teacher f of the query photo), "rkd"
        (smooth-L1 between mean-normalised neighbour distances) or "pkt" (KL between
        cosine-kernel conditional probabilities over the batch).

    Returns
    -------
    total : tensor

    DistillationBreakdown
    """

    use = {name : kwargs.get(name, True) for name in ("kl_pl", "kl_sl", "kl_pu")}
    objective = kwargs.get("objective", "contextual")
    if objective not in KD_OBJECTIVES:
        raise ValueError("{0} is not an allowable distillation objective. Choose from {1}.".format(objective, KD_OBJECTIVES))

    # Nothing enabled
    if not any(use.values()):
        total = torch.zeros((), dtype=student.dtype)
        return total, DistillationBreakdown(total=total, kl_pl=None, kl_sl=None, kl_pu=None)

    if (use["kl_pl"] or use["kl_sl"]) and (labelled_batch is None or len(labelled_batch) == 0):
        raise ValueError("The labelled distillation terms need a non-empty labelled batch.")
    if use["kl_pu"] and (unlabelled_batch is None or len(unlabelled_batch) == 0):
        raise ValueError("The unlabelled distillation term needs a non-empty unlabelled batch.")

    labelled_ids = list(labelled_batch.anchor_ids) if (use["kl_pl"] or use["kl_sl"]) else []
    unlabelled_ids = list(unlabelled_batch.anchor_ids) if use["kl_pu"] else []

    # Neighbour lists from the bank; everything referenced must be in the pool
    needed = set(labelled_ids+unlabelled_ids)
    neighbours = {}
    for query_id in sorted(needed):
        if query_id in bank.index_of:
            neighbours[query_id] = bank.neighbours(query_id, hp.K)
            needed.update(neighbours[query_id].neighbour_ids)
    missing = sorted((needed-set(pool)) | {query_id for query_id in labelled_ids+unlabelled_ids if query_id not in bank.index_of})
    if missing:
        raise BankMismatchError(missing)

    # One student forward over query photos, neighbour photos and query sketches
    photo_ids = sorted(needed)
    position = {photo_id : i for i, photo_id in enumerate(photo_ids)}
    images = [pool[photo_id] for photo_id in photo_ids]
    n_sketches = 0
    if use["kl_sl"]:
        images.extend(list(labelled_batch.anchor_sketch))
        n_sketches = len(labelled_ids)
    mu = student(as_image_tensor(np.stack(images, axis=0), dtype=student.dtype), mode="student").mu
    mu_photos = mu[:len(photo_ids)]
    mu_sketches = mu[len(photo_ids):]

    def branch(query_ids, mu_queries):
        neighbour_rows = torch.as_tensor([[position[n] for n in neighbours[q].neighbour_ids] for q in query_ids])
        teacher_dists = torch.as_tensor(np.stack([neighbours[q].teacher_dists for q in query_ids], axis=0), dtype=mu.dtype)
        teacher_features = torch.as_tensor(np.stack([bank.row(q) for q in query_ids], axis=0), dtype=mu.dtype)
        if objective == "contextual":
            return _contextual_term(mu_queries, mu_photos[neighbour_rows], teacher_dists, hp.tau)
        if objective == "rkd":
            return _rkd_term(mu_queries, mu_photos[neighbour_rows], teacher_dists)
        if objective == "regress":
            return _regress_term(mu_queries, teacher_features)
        return _pkt_term(mu_queries, teacher_features)

    terms = {"kl_pl" : None, "kl_sl" : None, "kl_pu" : None}
    if use["kl_pl"]:
        terms["kl_pl"] = branch(labelled_ids, mu_photos[[position[q] for q in labelled_ids]])
    if use["kl_sl"]:
        terms["kl_sl"] = branch(labelled_ids, mu_sketches[:n_sketches])
    if use["kl_pu"]:
        terms["kl_pu"] = branch(unlabelled_ids, mu_photos[[position[q] for q in unlabelled_ids]])

    total = torch.zeros((), dtype=mu.dtype)
    for name, weight in (("kl_pl", 1.0), ("kl_sl", hp.lambda4), ("kl_pu", hp.lambda5)):
        if terms[name] is not None:
            total = total+weight*terms[name]

    return total, DistillationBreakdown(total=total, **terms)
