"""Unlearning-quality metrics.

All functions are deterministic, pure, and operate on the models module's
(spec, params, data) triples.  The causal-faithfulness ratio carries an
instability flag because its denominator — the trained-vs-retrained
accuracy difference — is routinely near zero, at which point the ratio is
meaningless; callers must check ``cf_unstable`` before trusting ``cf``.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import models

CF_STABILITY_THRESHOLD = 0.005  # absolute accuracy difference
PROB_FLOOR = 1e-12


@dataclass
class MetricsReport:
    acc_trained: float
    acc_retrained: float
    acc_unlearned: float
    cf: float  # nan when undefined (zero denominator)
    cf_unstable: bool
    parameter_gap: float
    mia_trained: float
    mia_retrained: float
    mia_unlearned: float
    privacy_gap: float
    agreement_fa: float
    kl_func: float  # D_KL(retrained || unlearned), mean nats
    kl_func_reverse: float
    logit_mse: float
    speedup: float

    def to_dict(self):
        return dict(self.__dict__)

    @staticmethod
    def csv_header():
        return ("seed,method,acc,cf,cf_unstable,gap,mia,fa,kl,logit_mse,"
                "privacy_gap")


def accuracy(spec, params, data):
    """Fraction of argmax-correct predictions."""
    if len(data) == 0:
        raise ValueError("cannot score an empty dataset")
    logits = models.predict_logits(spec, params, data)
    return float(np.mean(np.argmax(logits, axis=1) == data.labels))


def causal_faithfulness(acc_trained, acc_retrained, acc_unlearned,
                        stability_threshold=CF_STABILITY_THRESHOLD):
    """CF = 1 - |A_u - A_r| / |A_t - A_r| with an instability flag.

    Returns (cf, unstable).  cf is nan when the denominator is exactly
    zero; unstable is True whenever the denominator falls below the
    threshold (default half a percentage point).
    """
    for a in (acc_trained, acc_retrained, acc_unlearned):
        if not (0.0 <= a <= 1.0):
            raise ValueError("accuracies must lie in [0, 1]")
    denom = abs(acc_trained - acc_retrained)
    unstable = denom < stability_threshold
    if denom == 0.0:
        return float("nan"), True
    return 1.0 - abs(acc_unlearned - acc_retrained) / denom, unstable


def parameter_gap(theta_a, theta_b):
    """Normalized l2 distance ||a - b|| / ||b||."""
    a = np.asarray(theta_a, dtype=np.float64).ravel()
    b = np.asarray(theta_b, dtype=np.float64).ravel()
    denom = float(np.linalg.norm(b))
    if denom == 0.0:
        raise ValueError("reference parameters have zero norm")
    return float(np.linalg.norm(a - b)) / denom


def mia_attack(spec, params, members, nonmembers):
    """Loss-threshold membership inference.

    Balanced accuracy of the best single threshold separating member
    losses (low) from nonmember losses (high), swept over all midpoints
    plus the two trivial extremes — hence always >= 0.5.
    """
    if len(members) == 0 or len(nonmembers) == 0:
        raise ValueError("member and nonmember sets must be nonempty")
    lm = np.sort(models.per_example_loss(spec, params, members))
    ln = np.sort(models.per_example_loss(spec, params, nonmembers))
    both = np.unique(np.concatenate([lm, ln]))
    mids = (both[1:] + both[:-1]) / 2.0
    thresholds = np.concatenate(([both[0] - 1.0], mids, [both[-1] + 1.0]))
    # member predicted when loss <= threshold
    tpr = np.searchsorted(lm, thresholds, side="right") / lm.size
    fpr = np.searchsorted(ln, thresholds, side="right") / ln.size
    bacc = 0.5 * (tpr + (1.0 - fpr))
    return float(max(0.5, bacc.max()))


def prediction_agreement(spec, params_a, params_b, data):
    """Fraction of examples where the two models pick the same class."""
    pa = np.argmax(models.predict_logits(spec, params_a, data), axis=1)
    pb = np.argmax(models.predict_logits(spec, params_b, data), axis=1)
    return float(np.mean(pa == pb))


def output_kl(spec, params_ref, params_cmp, data):
    """Mean D_KL(p_ref || p_cmp) over the dataset, in nats."""
    p = np.maximum(models.predict_proba(spec, params_ref, data), PROB_FLOOR)
    q = np.maximum(models.predict_proba(spec, params_cmp, data), PROB_FLOOR)
    kl = np.sum(p * (np.log(p) - np.log(q)), axis=1)
    return float(np.mean(kl))


def logit_mse(spec, params_a, params_b, data):
    """Mean squared l2 distance between pre-softmax outputs."""
    za = models.predict_logits(spec, params_a, data)
    zb = models.predict_logits(spec, params_b, data)
    return float(np.mean(np.sum((za - zb) ** 2, axis=1)))


def privacy_gap(mia_unlearned, mia_retrained):
    return abs(mia_unlearned - mia_retrained)


def speedup(retrain_seconds, unlearn_seconds):
    if unlearn_seconds <= 0:
        raise ValueError("unlearning time must be positive")
    return retrain_seconds / unlearn_seconds


def aggregate_cf(cf_values, acc_trained, acc_retrained, acc_unlearned,
                 stability_threshold=CF_STABILITY_THRESHOLD):
    """Mean-of-CF and CF-of-means across seeds.

    These can disagree badly when the per-seed denominators are small, so
    both are reported: ``mean_of_cf`` averages the finite per-seed values,
    ``cf_of_means`` applies the formula to seed-averaged accuracies.
    """
    finite = [v for v in cf_values if not math.isnan(v)]
    mean_of_cf = float(np.mean(finite)) if finite else float("nan")
    cf_of_means, unstable = causal_faithfulness(
        float(np.mean(acc_trained)), float(np.mean(acc_retrained)),
        float(np.mean(acc_unlearned)), stability_threshold)
    return {"mean_of_cf": mean_of_cf, "cf_of_means": cf_of_means,
            "cf_of_means_unstable": unstable}
