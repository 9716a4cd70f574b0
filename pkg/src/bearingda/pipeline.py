"""End-to-end experiment wiring shared by the CLI and the acceptance suite."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping, NamedTuple, Optional, Sequence

import numpy as np

from . import adapt
from . import datastore as ds
from . import metrics as M
from .errors import ParameterError
from .segment import DomainTag, FaultClass
from .siggen import CWRU_DRIVE_END, BearingGeometry, DefectSpec, generate_source_dataset

log = logging.getLogger(__name__)

CWRU_CLASSES = (FaultClass.Healthy, FaultClass.InnerRace, FaultClass.RollingElement, FaultClass.OuterRace)


class Domains(NamedTuple):
    source: ds.Dataset
    target_train: ds.Dataset
    target_eval: ds.Dataset


def build_waveform_domains(recordings: Sequence[ds.Recording], per_class: int, seed: int,
                           geom: BearingGeometry = CWRU_DRIVE_END,
                           specs: Optional[Mapping[FaultClass, DefectSpec]] = None,
                           seg_len: int = 4096) -> tuple[ds.Dataset, ds.Dataset]:
    """Segment real recordings and synthesize the labeled source domain.

    Half of the real healthy segments become carriers for the synthetic
    faults, the other half stays in the target domain; both halves are
    up-sampled back to ``per_class``. Returns ``(source, target)``, both
    labeled waveforms (target labels are for evaluation only).
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
    real = ds.segment_recordings(recordings, per_class, rng, seg_len)
    if FaultClass.Healthy not in real.classes:
        raise ParameterError("recordings must include healthy data")
    classes = [c for c in CWRU_CLASSES if c in real.classes]
    healthy_idx = [i for i, s in enumerate(real.segments) if s.label is FaultClass.Healthy]
    split = ds.split_healthy(real.subset(healthy_idx), rng, upsample_to=per_class)
    source = generate_source_dataset(split.source_pool.segments, geom, classes, per_class, seed,
                                     specs=dict(specs or {}), carrier_ids=split.source_pool.ids)
    faulty = real.subset(i for i, s in enumerate(real.segments) if s.label is not FaultClass.Healthy)
    target = ds.concat_datasets([split.target_pool, faulty], classes=classes,
                                domain_tag=DomainTag.RealTarget)
    provenance = {"seed": seed, "per_class": per_class, "seg_len": seg_len,
                  "source_healthy_ids": split.source_ids, "target_healthy_ids": split.target_ids}
    source.provenance.update(provenance)
    target.provenance.update(provenance)
    return source, target


def make_domains(source: ds.Dataset, target: ds.Dataset, seed: int,
                 imbalance: Optional[ds.ImbalanceSpec] = None, held_out: float = 0.0) -> Domains:
    """Apply the imbalance protocol to the target and preprocess both domains.

    With ``held_out == 0`` evaluation is transductive: the labeled evaluation
    copy holds the same waveforms the model sees unlabeled during training.
    A fraction in (0, 1) instead reserves that share of every target class
    for evaluation only, disjoint from the unlabeled training target.
    """
    if not 0 <= held_out < 1:
        raise ParameterError(f"held_out must lie in [0, 1), got {held_out}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 11]))
    if imbalance is not None:
        split = ds.subsample_imbalanced(target, imbalance, rng)
        train_t, eval_t = split.train, split.evaluation
    else:
        train_t, eval_t = target.without_labels(), target
    if held_out > 0:
        labels = eval_t.labels()
        test_idx: list[int] = []
        for c in range(len(eval_t.classes)):
            idx = np.flatnonzero(labels == c)
            k = ds.keep_count(held_out, idx.size)
            if not 0 < k < idx.size:
                raise ParameterError(f"held_out={held_out} leaves class {eval_t.classes[c].name} "
                                     f"({idx.size} samples) without a train or evaluation part")
            test_idx.extend(rng.choice(idx, size=k, replace=False).tolist())
        train_idx = sorted(set(range(len(eval_t))) - set(test_idx))
        train_t, eval_t = train_t.subset(train_idx), eval_t.subset(sorted(test_idx))
    return Domains(ds.preprocess_dataset(source), ds.preprocess_dataset(train_t),
                   ds.preprocess_dataset(eval_t))


@dataclass
class RunOutcome:
    method: str
    seed: int
    metrics: dict
    result: adapt.TrainResult


def run(domains: Domains, config: adapt.TrainConfig, log_fn=None) -> RunOutcome:
    """Train one method and score it on the labeled target evaluation copy."""
    src, tgt, ev = domains
    if src.classes != ev.classes:
        raise ParameterError("source and target class lists differ")
    xs, ys = src.array(), src.labels()
    xt = tgt.array()
    xe, ye = ev.array(), ev.labels()
    result = adapt.train(xs, ys, xt, config, n_classes=len(src.classes), eval_x=None, eval_y=None,
                         log_fn=log_fn)
    scores = adapt.evaluate(result.net, xe, ye)
    return RunOutcome(config.method.value, config.seed, scores, result)


def sweep(domains_for_level, levels: Sequence[float], methods: Sequence, seeds: Sequence[int],
          base_config: adapt.TrainConfig, on_cell=None) -> list[dict]:
    """Mean metrics over seeds for every (balance level, method) cell.

    ``domains_for_level(level, seed)`` must return :class:`Domains`. A failing
    cell is recorded with ``status=failed`` and the sweep carries on.
    """
    from dataclasses import replace

    rows = []
    for level in levels:
        for method in methods:
            runs, error = [], None
            for seed in seeds:
                try:
                    cfg = replace(base_config, method=adapt.Method.parse(method), seed=seed)
                    runs.append(run(domains_for_level(level, seed), cfg).metrics)
                except Exception as exc:  # noqa: BLE001 - a failed cell must not stop the sweep
                    log.exception("cell level=%s method=%s seed=%s failed", level, method, seed)
                    error = f"{type(exc).__name__}: {exc}"
                    break
            try:
                name = adapt.Method.parse(method).value
            except ParameterError:
                name = str(method)
            row = {"level": level, "method": name, "seeds": len(runs)}
            if error is None:
                row.update(M.average_runs(runs))
                row["status"] = "ok"
            else:
                row["status"] = "failed"
                row["error"] = error
            rows.append(row)
            if on_cell is not None:
                on_cell(row)
    return rows
