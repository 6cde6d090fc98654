"""Triplet objectives, their weighted combination and the contrastive alternative.

All functions take torch tensors (numpy arrays are converted to float64) whose last
dimension is the embedding dimension, so they apply row-wise to batches [B, d] as
well as to single vectors [d].
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F


def as_tensor(x):
    """Passes tensors through; converts anything else to a float64 tensor."""
    if isinstance(x, torch.Tensor):
        return x
    return torch.as_tensor(np.asarray(x, dtype=np.float64))


def squared_distance(a, b):
    """Squared Euclidean distance along the last dimension."""
    a = as_tensor(a)
    b = as_tensor(b)
    if a.shape != b.shape:
        raise ValueError("Cannot compute a distance between shapes {0} and {1}.".format(list(a.shape), list(b.shape)))
    return ((a-b)**2).sum(dim=-1)


def triplet_hinge(anchor, positive, negative, margin):
    """max{0, margin + d(anchor, positive) - d(anchor, negative)}.

    The subgradient at the kink is 0.
    """
    if margin < 0.0:
        raise ValueError("Triplet margin must be >= 0, got {0}.".format(margin))
    return F.relu(margin+squared_distance(anchor, positive)-squared_distance(anchor, negative))


def cross_modal_triplet(f_s, f_p, f_n, m_cm):
    """Pulls a sketch toward its paired photo and away from a non-matching photo."""
    return triplet_hinge(f_s, f_p, f_n, m_cm)


def intra_modal_triplets(f_p, f_pt, f_n, f_s, f_sp, f_sn, m_im_p, m_im_s):
    """Returns the photo term (photo vs. its augmentation vs. another photo) and the
    sketch term (sketch vs. a sibling sketch vs. another instance's sketch)."""
    return triplet_hinge(f_p, f_pt, f_n, m_im_p), triplet_hinge(f_s, f_sp, f_sn, m_im_s)


def contrastive_alternative(f_a, f_b, labels=None, tau=0.1):
    """Normalised-temperature contrastive loss over two views of a batch.

    The 2N views are L2-normalised; every view is scored against the other 2N-1 and
    its positives are all other views carrying the same label.

    Parameters
    ----------
    f_a, f_b : tensor
        Embeddings [N, d] of the two views. Row i of f_a and row i of f_b belong together.

    labels : sequence, optional
        Group label per row. Defaults to one group per row.

    tau : float, optional
        Temperature. Defaults to 0.1.

    Returns
    -------
    tensor
        Mean loss over the 2N views.
    """

    if tau <= 0.0:
        raise ValueError("Contrastive temperature must be > 0, got {0}.".format(tau))
    f_a = as_tensor(f_a)
    f_b = as_tensor(f_b)
    if f_a.shape != f_b.shape or f_a.dim() != 2:
        raise ValueError("Contrastive views must both have shape [N, d], got {0} and {1}.".format(list(f_a.shape), list(f_b.shape)))
    N = f_a.shape[0]
    if N < 2:
        raise ValueError("Contrastive loss needs a batch of at least 2, got {0}.".format(N))

    if labels is None:
        groups = np.arange(N)
    else:
        if len(labels) != N:
            raise ValueError("Got {0} labels for a batch of {1}.".format(len(labels), N))
        groups = np.unique(np.asarray(labels), return_inverse=True)[1]
    groups = torch.as_tensor(np.concatenate([groups, groups]))

    z = F.normalize(torch.cat([f_a, f_b], dim=0), dim=1)
    logits = z@z.T/tau
    eye = torch.eye(2*N, dtype=torch.bool)
    logits = logits.masked_fill(eye, float("-inf"))
    positives = (groups[:, None] == groups[None, :]) & ~eye

    log_denominator = torch.logsumexp(logits, dim=1)
    log_numerator = torch.logsumexp(logits.masked_fill(~positives, float("-inf")), dim=1)
    return (log_denominator-log_numerator).mean()


@dataclass
class TripletEmbeddings:
    """Discriminative features of one TripletBatch, row-aligned, plus the optional
    unlabelled photo triplet (u_a, u_pos, u_neg)."""
    f_s: torch.Tensor
    f_p: torch.Tensor
    f_n: torch.Tensor
    f_sp: torch.Tensor
    f_sn: torch.Tensor
    f_pt: torch.Tensor
    u_a: Optional[torch.Tensor] = None
    u_pos: Optional[torch.Tensor] = None
    u_neg: Optional[torch.Tensor] = None
    ids: Optional[list] = None
    u_ids: Optional[list] = None

    def __len__(self):
        return self.f_s.shape[0]


@dataclass
class LossBreakdown:
    """Batch-mean loss terms and their weighted total. Terms are scalar tensors."""
    cm: torch.Tensor
    im_p: torch.Tensor
    im_s: torch.Tensor
    tri_u: torch.Tensor
    total: torch.Tensor

    def as_floats(self):
        return {"cm" : float(self.cm), "im_p" : float(self.im_p), "im_s" : float(self.im_s), "tri_u" : float(self.tri_u), "total" : float(self.total)}


def combined_training_loss(embeddings, hp, include_unlabelled=False, **kwargs):
    """Discriminative student objective.

    total = cm + lambda1*im_p + lambda2*im_s (+ lambda3*tri_u with the unlabelled branch).

    Parameters
    ----------
    embeddings : TripletEmbeddings

    hp : Hyperparameters

    include_unlabelled : bool, optional
        Adds the photo-form intra-modal triplet over the unlabelled photo triplet.

    use_im : bool, optional
        When False every intra-modal term (im_p, im_s, tri_u) is dropped. Defaults to True.

    photo_objective : str, optional
        "triplet" (default) or "contrastive". The contrastive objective replaces the
        photo intra-modal triplets (im_p and tri_u) with contrastive_alternative over
        (photo, augmented photo) pairs.

    contrastive_tau : float, optional
        Temperature of the contrastive objective. Defaults to 0.1.

    Returns
    -------
    LossBreakdown
    """

    use_im = kwargs.get("use_im", True)
    photo_objective = kwargs.get("photo_objective", "triplet")
    contrastive_tau = kwargs.get("contrastive_tau", 0.1)

    if len(embeddings) == 0:
        raise ValueError("Cannot compute the training loss of an empty batch.")
    if photo_objective not in ("triplet", "contrastive"):
        raise ValueError("{0} is not an allowable photo objective. Choose 'triplet' or 'contrastive'.".format(photo_objective))
    if include_unlabelled and (embeddings.u_a is None or embeddings.u_a.shape[0] == 0):
        raise ValueError("The unlabelled branch was requested but the batch has no unlabelled photos.")

    e = embeddings
    cm = cross_modal_triplet(e.f_s, e.f_p, e.f_n, hp.m_cm).mean()
    zero = torch.zeros((), dtype=cm.dtype)

    if not use_im:
        im_p = zero
        im_s = zero
        tri_u = zero
    else:
        im_s = triplet_hinge(e.f_s, e.f_sp, e.f_sn, hp.m_im_s).mean()
        if photo_objective == "triplet":
            im_p = triplet_hinge(e.f_p, e.f_pt, e.f_n, hp.m_im_p).mean()
            tri_u = triplet_hinge(e.u_a, e.u_pos, e.u_neg, hp.m_im_p).mean() if include_unlabelled else zero
        else:
            im_p = contrastive_alternative(e.f_p, e.f_pt, labels=e.ids, tau=contrastive_tau)
            tri_u = contrastive_alternative(e.u_a, e.u_pos, labels=e.u_ids, tau=contrastive_tau) if include_unlabelled else zero

    total = cm+hp.lambda1*im_p+hp.lambda2*im_s
    if include_unlabelled:
        total = total+hp.lambda3*tri_u

    return LossBreakdown(cm=cm, im_p=im_p, im_s=im_s, tri_u=tri_u, total=total)
