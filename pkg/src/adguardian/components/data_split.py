import math
from collections import defaultdict
from pathlib import Path
from typing import Dict, FrozenSet, List, Optional, Sequence, Set, Tuple

import numpy as np
import pandas as pd

from src.adguardian import logger
from src.adguardian.constants import CLASS_NAMES, SEXES
from src.adguardian.entity.artifact_entity import SampleRecord, SplitResult, SplitSpec
from src.adguardian.utils.common import save_jsonl
from src.adguardian.utils.exceptions import SplitError

_EPS = 1e-9


def _ceil(x: float) -> int:
    return int(math.ceil(x - _EPS))


def _speaker_table(records: Sequence[SampleRecord]) -> Dict[str, List[SampleRecord]]:
    table = defaultdict(list)
    for r in records:
        table[r.speaker_id].append(r)
    return dict(table)


def _ordered_speakers(speakers: Dict[str, List[SampleRecord]], rng: np.random.Generator) -> List[str]:
    """Descending sample count; ties broken by a seeded shuffle."""
    names = sorted(speakers)
    shuffled = [names[i] for i in rng.permutation(len(names))]
    return sorted(shuffled, key=lambda s: -len(speakers[s]))


class DataSplitter:
    """
    Speaker-disjoint train/dev/test partitioning with several split versions.

    The test set is chosen once (version 1, or given by `frozen_test`) and shared by every
    version; train/dev are redistributed per version with a version-specific seed.
    Automatic test selection prefers large speakers that fit the group target, so a hand-picked
    partition with many small test speakers needs `frozen_test`.
    """

    def __init__(self, spec: SplitSpec):
        self.spec = spec
        r_train, r_dev, r_test = spec.ratios
        self.r_train, self.r_dev, self.r_test = r_train, r_dev, r_test

    # ------------------------------------------------------------------ test selection
    def _check_feasible(self, records: Sequence[SampleRecord]):
        problems = []
        for group in CLASS_NAMES:
            n_speakers = len({r.speaker_id for r in records if r.group == group})
            if n_speakers < 3:
                problems.append(f"{group} has {n_speakers} speakers")
        if problems:
            raise SplitError("At least 3 speakers per group are required: " + ", ".join(problems))

    def select_test_speakers(self, records: Sequence[SampleRecord], rng: np.random.Generator,
                             diagnostics: List[str]) -> Set[str]:
        chosen = set()
        for group in CLASS_NAMES:
            members = [r for r in records if r.group == group]
            speakers = _speaker_table(members)
            n_group = len(members)
            group_target = _ceil(self.r_test * n_group)
            order = _ordered_speakers(speakers, rng)

            # speakers bigger than the whole test target can never be placed in test
            candidates = [s for s in order if len(speakers[s]) <= group_target]
            # keep two speakers back so train and dev stay populated
            max_take = len(speakers) - 2
            taken, filled = [], 0

            for sex in SEXES:
                cell_n = sum(len(v) for v in speakers.values() if v[0].sex == sex)
                cell_target, cell_filled = _ceil(self.r_test * cell_n), 0
                for s in candidates:
                    size = len(speakers[s])
                    if speakers[s][0].sex != sex or s in taken or len(taken) >= max_take:
                        continue
                    if cell_filled + size <= cell_target and filled + size <= group_target:
                        taken.append(s)
                        cell_filled += size
                        filled += size

            for s in candidates:
                size = len(speakers[s])
                if s not in taken and len(taken) < max_take and filled + size <= group_target:
                    taken.append(s)
                    filled += size

            if not taken:
                smallest = min(order, key=lambda s: (len(speakers[s]), order.index(s)))
                taken.append(smallest)
                filled = len(speakers[smallest])
                diagnostics.append(f"imbalance: {group} test target {group_target} unreachable, "
                                   f"took speaker {smallest} ({filled} samples)")
            chosen.update(taken)
            logger.info(f"Test {group}: {filled}/{n_group} samples from {len(taken)} speakers (target {group_target})")
        return chosen

    # ------------------------------------------------------------------ train/dev distribution
    def _distribute(self, records: Sequence[SampleRecord], rng: np.random.Generator,
                    diagnostics: List[str]) -> Tuple[List[SampleRecord], List[SampleRecord], List[str]]:
        dev_share = self.r_dev / (self.r_train + self.r_dev)
        train, dev, overlap = [], [], []

        for group in CLASS_NAMES:
            members = [r for r in records if r.group == group]
            if not members:
                continue
            speakers = _speaker_table(members)
            n_group = len(members)
            dev_target = _ceil(dev_share * n_group)
            cell_n = {sex: sum(len(v) for v in speakers.values() if v[0].sex == sex) for sex in SEXES}
            assigned = {"train": defaultdict(int), "dev": defaultdict(int)}
            totals = {"train": 0, "dev": 0}
            targets = {"train": n_group - dev_target, "dev": dev_target}
            train_speakers = []

            def deficit(which: str, sex: str) -> Tuple[float, float]:
                share = dev_share if which == "dev" else 1.0 - dev_share
                cell_target = share * cell_n[sex]
                cell = (cell_target - assigned[which][sex]) / cell_target if cell_target > 0 else -1.0
                grp = (targets[which] - totals[which]) / targets[which] if targets[which] > 0 else -1.0
                return cell, grp

            def place(which: str, items: List[SampleRecord]):
                (dev if which == "dev" else train).extend(items)
                for r in items:
                    assigned[which][r.sex] += 1
                totals[which] += len(items)

            for s in _ordered_speakers(speakers, rng):
                items = speakers[s]
                sex, size = items[0].sex, len(items)
                if size > dev_target:
                    if self.spec.allow_dev_overlap and totals["dev"] < dev_target:
                        dealt = [items[i] for i in rng.permutation(size)]
                        room = dev_target - totals["dev"]
                        place("dev", sorted(dealt[:room], key=lambda r: r.sample_id))
                        place("train", sorted(dealt[room:], key=lambda r: r.sample_id))
                        overlap.append(s)
                        diagnostics.append(f"imbalance: speaker {s} holds {size}/{n_group} {group} samples; "
                                           f"dealt {room} to dev")
                    else:
                        place("train", items)
                        train_speakers.append(s)
                        diagnostics.append(f"imbalance: speaker {s} holds {size}/{n_group} {group} samples; "
                                           f"kept in train")
                    continue
                fits_dev = totals["dev"] + size <= dev_target
                if fits_dev and deficit("dev", sex) > deficit("train", sex):
                    place("dev", items)
                else:
                    place("train", items)
                    train_speakers.append(s)

            if totals["dev"] == 0 and len(train_speakers) >= 2:
                # no speaker fit the dev target: move the smallest train speaker over
                s = min(train_speakers, key=lambda k: (len(speakers[k]), k))
                moved = {r.sample_id for r in speakers[s]}
                train[:] = [r for r in train if r.sample_id not in moved]
                dev.extend(speakers[s])
                diagnostics.append(f"imbalance: {group} dev set forced to speaker {s}")
        return train, dev, overlap

    # ------------------------------------------------------------------ entry point
    def make_split(self, records: Sequence[SampleRecord]) -> List[SplitResult]:
        self._check_feasible(records)
        diagnostics: List[str] = []
        if self.spec.frozen_test is not None:
            known = {r.speaker_id for r in records}
            unknown = sorted(set(self.spec.frozen_test) - known)
            if unknown:
                raise SplitError(f"Frozen test speakers not in the manifest: {unknown}")
            test_speakers = set(self.spec.frozen_test)
        else:
            test_speakers = self.select_test_speakers(records, np.random.default_rng([self.spec.seed, 1]), diagnostics)

        test = [r for r in records if r.speaker_id in test_speakers]
        rest = [r for r in records if r.speaker_id not in test_speakers]

        results = []
        for k in range(1, self.spec.n_versions + 1):
            version_diag = list(diagnostics)
            rng = np.random.default_rng([self.spec.seed, k])
            train, dev, overlap = self._distribute(rest, rng, version_diag)
            result = SplitResult(version_tag=f"v{k}", train=train, dev=dev, test=list(test),
                                 dev_overlap_speakers=overlap, diagnostics=version_diag)
            version_diag.extend(self.fraction_diagnostics(result, len(records)))
            for message in version_diag:
                logger.warning(f"{result.version_tag}: {message}")
            results.append(result)
        return results

    def fraction_diagnostics(self, result: SplitResult, n_total: int) -> List[str]:
        out = []
        for (name, items), ratio in zip(result.sets().items(), self.spec.ratios):
            realized = len(items) / n_total if n_total else 0.0
            if abs(realized - ratio) > 0.05:
                out.append(f"imbalance: {name} holds {realized:.3f} of samples (target {ratio:.3f})")
        return out


def make_split(records: Sequence[SampleRecord], spec: SplitSpec) -> List[SplitResult]:
    return DataSplitter(spec).make_split(records)


def split_stats(result: SplitResult) -> pd.DataFrame:
    """Per set, per group `#samples (speakers)` cells plus totals."""
    counts = result.counts()
    rows = []
    for name, per_group in counts.items():
        row = {"set": name}
        for group in CLASS_NAMES:
            c = per_group[group]
            row[group] = f"#{c['samples']} ({c['speakers']})"
        total_samples = sum(c["samples"] for c in per_group.values())
        total_speakers = len({r.speaker_id for r in result.sets()[name]})
        row["total"] = f"#{total_samples} ({total_speakers})"
        rows.append(row)
    return pd.DataFrame(rows, columns=["set", *CLASS_NAMES, "total"])


def save_split(result: SplitResult, out_dir: Path) -> Path:
    version_dir = Path(out_dir) / result.version_tag
    version_dir.mkdir(parents=True, exist_ok=True)
    for name, items in result.sets().items():
        save_jsonl(version_dir / f"{name}.jsonl", (r.model_dump() for r in items))
    split_stats(result).to_csv(version_dir / "split_stats.csv", index=False)
    return version_dir


def frozen_test_ids(results: Sequence[SplitResult]) -> List[FrozenSet[str]]:
    return [frozenset(r.sample_id for r in res.test) for res in results]
