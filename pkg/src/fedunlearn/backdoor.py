"""Backdoor injection and unlearning-as-mitigation scenario.

The trigger is a feature-overwrite pattern (the tabular analogue of a pixel
patch): selected feature columns are set to fixed values and the label is
flipped to the target class.  The scenario trains with one poisoned client,
unlearns that client, retrains without it, and reports clean accuracy and
attack success rate per stage.
"""

import time
from dataclasses import dataclass

import numpy as np

from . import evaluation, models
from .federation import ClientDataset, assign_weights, partition_dirichlet, train_from_clients
from .unlearning import ForgetSpec, unlearn


@dataclass(frozen=True)
class TriggerSpec:
    feature_indices: tuple
    trigger_values: tuple
    target_label: int
    poison_ratio: float = 0.5

    def __post_init__(self):
        idx = tuple(int(i) for i in self.feature_indices)
        vals = tuple(float(v) for v in self.trigger_values)
        if len(idx) != len(vals) or not idx:
            raise ValueError("feature_indices and trigger_values must be "
                             "nonempty and the same length")
        if len(set(idx)) != len(idx):
            raise ValueError("feature indices must be unique")
        if not (0.0 < self.poison_ratio <= 1.0):
            raise ValueError("poison_ratio must lie in (0, 1]")
        object.__setattr__(self, "feature_indices", idx)
        object.__setattr__(self, "trigger_values", vals)

    def to_dict(self):
        return {"feature_indices": list(self.feature_indices),
                "trigger_values": list(self.trigger_values),
                "target_label": self.target_label,
                "poison_ratio": self.poison_ratio}

    @staticmethod
    def from_dict(d):
        return TriggerSpec(feature_indices=tuple(d["feature_indices"]),
                           trigger_values=tuple(d["trigger_values"]),
                           target_label=d["target_label"],
                           poison_ratio=d.get("poison_ratio", 0.5))


def apply_trigger(features, trigger):
    out = np.array(features, dtype=np.float64)
    for i, v in zip(trigger.feature_indices, trigger.trigger_values):
        out[:, i] = v
    return out


def poison_client(client, trigger, seed):
    """Overwrite trigger features and relabel a seeded fraction of rows.

    max(1, round(ratio * n)) rows are poisoned, so any positive ratio
    poisons at least one example.  Per-row the operation is idempotent.
    """
    n = len(client.data)
    if trigger.feature_indices and max(trigger.feature_indices) >= client.data.n_features:
        raise ValueError("trigger feature index out of range")
    count = max(1, int(round(trigger.poison_ratio * n)))
    count = min(count, n)
    rng = np.random.default_rng(seed)
    rows = rng.choice(n, size=count, replace=False)
    feats = np.array(client.data.features)
    labs = np.array(client.data.labels)
    for i, v in zip(trigger.feature_indices, trigger.trigger_values):
        feats[rows, i] = v
    labs[rows] = trigger.target_label
    return ClientDataset(client_id=client.client_id,
                         data=models.Dataset(feats, labs),
                         weight=client.weight)


def attack_success_rate(spec, params, clean_test, trigger):
    """Fraction of triggered non-target-class examples predicted as the
    target label."""
    if len(clean_test) == 0:
        raise ValueError("empty test set")
    keep = clean_test.labels != trigger.target_label
    if not np.any(keep):
        raise ValueError("test set has no non-target-class examples")
    feats = apply_trigger(clean_test.features[keep], trigger)
    triggered = models.Dataset(feats, clean_test.labels[keep])
    logits = models.predict_logits(spec, params, triggered)
    return float(np.mean(np.argmax(logits, axis=1) == trigger.target_label))


def backdoor_scenario(spec, train_data, test_data, partition, train_config,
                      unlearn_config, trigger, malicious_client=0,
                      poison_seed=0):
    """Train poisoned -> unlearn the malicious client -> retrain without it.

    Returns a report keyed by method (poisoned / unlearned / retrained)
    with clean accuracy, ASR, relative ASR reduction, and timings.
    """
    clients = partition_dirichlet(train_data, partition)
    poisoned = []
    for c in clients:
        if c.client_id == malicious_client:
            poisoned.append(poison_client(c, trigger, poison_seed))
        else:
            poisoned.append(c)
    assign_weights(poisoned)

    t0 = time.perf_counter()
    state = train_from_clients(spec, poisoned, train_config,
                               init_seed=train_config.seed)
    train_time = time.perf_counter() - t0
    theta_p = state.global_params

    forget = ForgetSpec(forget_client=malicious_client)
    result = unlearn(spec, theta_p, poisoned, forget, unlearn_config)

    t0 = time.perf_counter()
    kept = [c for c in poisoned if c.client_id != malicious_client]
    assign_weights(kept)
    retrain_state = train_from_clients(spec, kept, train_config,
                                       init_seed=train_config.seed)
    retrain_time = time.perf_counter() - t0
    theta_r = retrain_state.global_params

    asr_p = attack_success_rate(spec, theta_p, test_data, trigger)
    report = {"train_time_s": train_time, "methods": {}}
    for name, theta, t in (("poisoned", theta_p, None),
                           ("unlearned", result.theta_u, result.wall_time_s),
                           ("retrained", theta_r, retrain_time)):
        asr = attack_success_rate(spec, theta, test_data, trigger)
        entry = {
            "clean_acc": evaluation.accuracy(spec, theta, test_data),
            "asr": asr,
            "asr_reduction": (0.0 if name == "poisoned" or asr_p == 0.0
                              else 1.0 - asr / asr_p),
            "time_s": t,
            "speedup": (retrain_time / t if t else None),
        }
        report["methods"][name] = entry
    report["unlearn"] = result.to_report(unlearn_config)
    return report
