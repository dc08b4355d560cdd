"""CTC prefix scoring for joint CTC/attention beam search.

Forward variables follow the usual two-state layout: ``r_n[t]`` is the log
probability of having emitted the prefix by frame ``t`` with the last frame
on its final label, ``r_b[t]`` the same ending on blank. Frames are 0-based
here.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from stitchdec.endpoint import CtcPosteriorBlock

NEG_INF = -np.inf


def _logsumexp(values: np.ndarray, axis: int) -> np.ndarray:
    peak = np.max(values, axis=axis, keepdims=True)
    safe = np.where(np.isfinite(peak), peak, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(values - safe), axis=axis, keepdims=True)) + safe
    return np.squeeze(out, axis=axis)


def prefix_forward(log_post: np.ndarray, labels: np.ndarray, blank: int) -> tuple[np.ndarray, np.ndarray]:
    """Forward variables of a batch of equal-length label prefixes.

    Args:
      log_post: (T, V) log CTC posteriors.
      labels: (K, L) integer label prefixes, blank-free, ``L`` may be 0.
      blank: blank id.

    Returns:
      ``(r_n, r_b)``, each of shape (K, T), for the full prefixes.
    """
    labels = np.asarray(labels, dtype=np.int64)
    num, length = labels.shape
    frames = log_post.shape[0]
    blank_path = np.cumsum(log_post[:, blank])
    if length == 0:
        return np.full((num, frames), NEG_INF), np.tile(blank_path, (num, 1))

    emit = log_post[:, labels]  # (T, K, L)
    # a repeated label needs a blank in between, so r_n of the previous
    # label cannot feed the next one
    same_as_prev = np.zeros((num, length), dtype=bool)
    same_as_prev[:, 1:] = labels[:, 1:] == labels[:, :-1]

    r_n = np.full((frames, num, length), NEG_INF)
    r_b = np.full((frames, num, length), NEG_INF)
    r_n[0, :, 0] = emit[0, :, 0]
    for t in range(1, frames):
        phi = np.empty((num, length))
        phi[:, 0] = blank_path[t - 1]
        if length > 1:
            carried = np.where(same_as_prev[:, 1:], NEG_INF, r_n[t - 1, :, :-1])
            phi[:, 1:] = np.logaddexp(r_b[t - 1, :, :-1], carried)
        r_n[t] = np.logaddexp(r_n[t - 1], phi) + emit[t]
        r_b[t] = np.logaddexp(r_n[t - 1], r_b[t - 1]) + log_post[t, blank]
    return r_n[:, :, -1].T.copy(), r_b[:, :, -1].T.copy()


def extension_scores(
    log_post: np.ndarray,
    r_n: np.ndarray,
    r_b: np.ndarray,
    last: np.ndarray,
    blank: int,
) -> np.ndarray:
    """Prefix scores of every one-token extension.

    Args:
      log_post: (T, V) log CTC posteriors.
      r_n, r_b: (K, T) forward variables of the parent prefixes.
      last: (K,) last label of each parent, or -1 for an empty parent.

    Returns:
      (K, V) array; entry ``(k, c)`` is the log prefix probability of
      ``parent_k + [c]``. Columns for blank and non-emitting symbols are
      meaningless and left to the caller to mask.
    """
    num, frames = r_n.shape
    vocab = log_post.shape[1]
    repeat = np.arange(vocab)[None, :] == np.asarray(last)[:, None]  # (K, V)
    # phi[k, t, c]: parent probability at frame t that may be followed by c
    phi = np.where(repeat[:, None, :], r_b[:, :, None], np.logaddexp(r_b, r_n)[:, :, None])
    terms = phi[:, :-1, :] + log_post[None, 1:, :]
    first = np.where(np.asarray(last)[:, None] < 0, log_post[0][None, :], NEG_INF)
    if frames == 1:
        return first
    return np.logaddexp(first, _logsumexp(terms, axis=1))


def extend_states(
    log_post: np.ndarray,
    r_n: np.ndarray,
    r_b: np.ndarray,
    last: np.ndarray,
    tokens: np.ndarray,
    blank: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Forward variables of ``parent_k + [tokens_k]`` for each row ``k``."""
    num, frames = r_n.shape
    tokens = np.asarray(tokens)
    last = np.asarray(last)
    phi = np.where((tokens == last)[:, None], r_b, np.logaddexp(r_b, r_n))
    emit = log_post[:, tokens].T  # (K, T)
    new_n = np.full((num, frames), NEG_INF)
    new_b = np.full((num, frames), NEG_INF)
    new_n[:, 0] = np.where(last < 0, emit[:, 0], NEG_INF)
    for t in range(1, frames):
        new_n[:, t] = np.logaddexp(new_n[:, t - 1], phi[:, t - 1]) + emit[:, t]
        new_b[:, t] = np.logaddexp(new_n[:, t - 1], new_b[:, t - 1]) + log_post[t, blank]
    return new_n, new_b


def full_score(r_n: np.ndarray, r_b: np.ndarray) -> np.ndarray:
    """Log probability that the prefix is the complete labeling."""
    return np.logaddexp(r_n[..., -1], r_b[..., -1])


def ctc_prefix_score(prefix: Sequence[int], posterior: CtcPosteriorBlock) -> float:
    """Log CTC prefix probability of ``prefix`` over all posterior frames.

    For an empty prefix this is the log probability of the all-blank path.
    """
    log_post = posterior.log_rows
    blank = posterior.blank_id
    prefix = list(prefix)
    if any(token == blank for token in prefix):
        raise ValueError("prefix must not contain blank")
    if not prefix:
        return float(np.sum(log_post[:, blank]))
    parent = np.asarray([prefix[:-1]], dtype=np.int64).reshape(1, len(prefix) - 1)
    r_n, r_b = prefix_forward(log_post, parent, blank)
    last = np.asarray([prefix[-2] if len(prefix) > 1 else -1])
    return float(extension_scores(log_post, r_n, r_b, last, blank)[0, prefix[-1]])
