"""Episodic support/query sampling and the pairwise relation scorer.

An episode is one training mini-batch for the metric-learning head: the
support set carries K examples of every attack type except one held-out
type plus K bonafide, the query set carries K examples of the held-out
type plus K bonafide.  The relation net scores (support, query) embedding
pairs with a scalar in (0,1); targets are binary label agreement.
"""

from dataclasses import dataclass

import numpy as np

from .autodiff import Linear, Module, Tensor, concat, index_select

# protocol convention: the "system id" column of bonafide rows is "-"
BONAFIDE_KEY = "-"


@dataclass
class Episode:
    """One sampled episode: lists of (utterance ref, binary label, attack id)."""

    support: list
    query: list
    held_out_attack: str

    def validate(self, n_types: int, k: int) -> None:
        if len(self.support) != (n_types - 1) * k + k:
            raise ValueError("support size mismatch")
        if len(self.query) != 2 * k:
            raise ValueError("query size mismatch")
        for _, lab, att in self.support:
            if att == self.held_out_attack:
                raise ValueError("held-out attack leaked into support")
            if (lab == 1) != (att == BONAFIDE_KEY):
                raise ValueError("label/attack-id disagreement in support")
        q_attacks = {att for _, lab, att in self.query if lab == 0}
        if q_attacks != {self.held_out_attack}:
            raise ValueError("query spoof rows must all be the held-out attack")
        n_bona_s = sum(1 for _, lab, _ in self.support if lab == 1)
        n_bona_q = sum(1 for _, lab, _ in self.query if lab == 1)
        if n_bona_s != k or n_bona_q != k:
            raise ValueError("bonafide rows must split K/K across support/query")
        refs = [r for r, _, _ in self.support] + [r for r, _, _ in self.query]
        if len(refs) != len(set(refs)):
            raise ValueError("episode sampled an utterance twice")

    def labels(self) -> np.ndarray:
        """Binary labels for support rows followed by query rows."""
        return np.array(
            [lab for _, lab, _ in self.support] + [lab for _, lab, _ in self.query],
            dtype=np.int64,
        )

    def refs(self) -> list:
        return [r for r, _, _ in self.support] + [r for r, _, _ in self.query]


def sample_episode(index: dict, n_types: int, k: int, rng) -> Episode:
    """Draw one episode without replacement from per-attack utterance pools.

    index maps attack id -> list of utterance refs, with bonafide refs under
    BONAFIDE_KEY.  The held-out attack is chosen uniformly; 2K bonafide are
    drawn in one pass and split half/half between support and query.
    """
    attack_ids = sorted(a for a in index if a != BONAFIDE_KEY)
    if n_types != len(attack_ids):
        raise ValueError(
            f"episode wants {n_types} attack types but index has {len(attack_ids)}"
        )
    if n_types < 2:
        raise ValueError("need at least 2 attack types (one is always held out)")
    if k < 1:
        raise ValueError("k must be >= 1")
    bona_pool = index.get(BONAFIDE_KEY, [])
    if len(bona_pool) < 2 * k:
        raise ValueError(f"bonafide pool has {len(bona_pool)} < 2K={2 * k} utterances")
    for a in attack_ids:
        if len(index[a]) < k:
            raise ValueError(f"attack {a} pool has {len(index[a])} < K={k} utterances")

    held = attack_ids[int(rng.integers(0, n_types))]

    support = []
    for a in attack_ids:
        if a == held:
            continue
        pool = index[a]
        picks = rng.choice(len(pool), size=k, replace=False)
        support.extend((pool[int(i)], 0, a) for i in picks)

    bona_picks = rng.choice(len(bona_pool), size=2 * k, replace=False)
    bona_refs = [bona_pool[int(i)] for i in bona_picks]
    support.extend((r, 1, BONAFIDE_KEY) for r in bona_refs[:k])

    held_pool = index[held]
    held_picks = rng.choice(len(held_pool), size=k, replace=False)
    query = [(held_pool[int(i)], 0, held) for i in held_picks]
    query.extend((r, 1, BONAFIDE_KEY) for r in bona_refs[k:])

    ep = Episode(support=support, query=query, held_out_attack=held)
    ep.validate(n_types, k)
    return ep


class RelationNet(Module):
    """Scores a concatenated embedding pair with a scalar in (0,1).

    Two 64-unit fully connected layers with SeLU in between, then a scalar
    head squashed through a sigmoid so the output is comparable with the
    binary match targets.
    """

    def __init__(self, embed_dim: int, rng, hidden: int = 64):
        super().__init__()
        self.embed_dim = embed_dim
        self.fc1 = Linear(2 * embed_dim, hidden, rng)
        self.fc2 = Linear(hidden, hidden, rng)
        self.head = Linear(hidden, 1, rng)

    def forward(self, pairs: Tensor) -> Tensor:
        if pairs.data.ndim != 2 or pairs.data.shape[1] != 2 * self.embed_dim:
            raise ValueError(
                f"relation net expects (n, {2 * self.embed_dim}) pairs, "
                f"got {pairs.data.shape}"
            )
        h = self.fc1(pairs).selu()
        h = self.fc2(h).selu()
        return self.head(h).sigmoid().reshape((pairs.data.shape[0],))


def relation_forward(support_embs: Tensor, query_embs: Tensor, net: RelationNet) -> Tensor:
    """All-pairs relation scores, shape (n_support, n_query).

    Row i column j scores the pair [support_i ; query_j] — support first in
    the concatenation.
    """
    s_shape, q_shape = support_embs.data.shape, query_embs.data.shape
    if len(s_shape) != 2 or len(q_shape) != 2 or s_shape[1] != q_shape[1]:
        raise ValueError(f"embedding shape mismatch: {s_shape} vs {q_shape}")
    if s_shape[1] != net.embed_dim:
        raise ValueError(f"net expects {net.embed_dim}-d embeddings, got {s_shape[1]}")
    ns, nq = s_shape[0], q_shape[0]
    s_rows = index_select(support_embs, np.repeat(np.arange(ns), nq))
    q_rows = index_select(query_embs, np.tile(np.arange(nq), ns))
    pairs = concat([s_rows, q_rows], axis=1)
    return net(pairs).reshape((ns, nq))


def pair_labels(episode: Episode) -> np.ndarray:
    """Binary match matrix (n_support, n_query): 1 where labels agree."""
    s = np.array([lab for _, lab, _ in episode.support])
    q = np.array([lab for _, lab, _ in episode.query])
    return (s[:, None] == q[None, :]).astype(np.float64)
