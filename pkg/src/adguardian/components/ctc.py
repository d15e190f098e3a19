from itertools import groupby
from typing import List, Sequence

import editdistance
import torch
import torch.nn.functional as F

from src.adguardian import logger
from src.adguardian.constants import BLANK_INDEX
from src.adguardian.utils.exceptions import MetricError


def min_ctc_frames(reference: Sequence[int]) -> int:
    """|y| plus one blank between every pair of equal neighbours."""
    repeats = sum(1 for a, b in zip(reference, reference[1:]) if a == b)
    return len(reference) + repeats


def ctc_loss(log_probs: torch.Tensor, reference: Sequence[int], blank: int = BLANK_INDEX) -> torch.Tensor:
    """
    Negative log of the total path probability of `reference` under (T, V) frame log-probs.

    An alignment that cannot fit in T frames yields +inf instead of an error.
    """
    reference = [int(t) for t in reference]
    if any(t == blank for t in reference):
        raise ValueError("reference transcripts must not contain the blank index")
    T, V = log_probs.shape
    if any(not 0 <= t < V for t in reference):
        raise ValueError(f"reference index out of range for vocabulary of size {V}")
    needed = min_ctc_frames(reference)
    if T < needed:
        logger.warning(f"CTC alignment infeasible: {T} frames for a reference needing {needed}")
        return torch.tensor(float("inf"), dtype=log_probs.dtype)
    targets = torch.tensor(reference, dtype=torch.long)
    return F.ctc_loss(
        log_probs.unsqueeze(1),
        targets,
        input_lengths=torch.tensor([T]),
        target_lengths=torch.tensor([len(reference)]),
        blank=blank,
        reduction="sum",
        zero_infinity=False,
    )


def batch_ctc_loss(log_probs: torch.Tensor, input_lengths: torch.Tensor, targets: List[List[int]],
                   blank: int = BLANK_INDEX) -> torch.Tensor:
    """Mean over the batch of per-utterance CTC losses; log_probs is (B, T, V)."""
    flat = torch.tensor([t for seq in targets for t in seq], dtype=torch.long)
    target_lengths = torch.tensor([len(seq) for seq in targets], dtype=torch.long)
    loss = F.ctc_loss(log_probs.transpose(0, 1), flat, input_lengths.long(), target_lengths,
                      blank=blank, reduction="sum", zero_infinity=True)
    return loss / log_probs.size(0)


def greedy_ctc_decode(log_probs: torch.Tensor, blank: int = BLANK_INDEX) -> List[int]:
    """Frame argmax, collapse repeats, drop blanks."""
    best = log_probs.argmax(dim=-1).tolist()
    return [k for k, _ in groupby(best) if k != blank]


def cer(reference: Sequence, hypothesis: Sequence) -> float:
    if len(reference) == 0:
        raise MetricError("CER is undefined for an empty reference")
    return editdistance.eval(list(reference), list(hypothesis)) / len(reference)
