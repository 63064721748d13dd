"""Sampling protocol, measurement campaigns, and significance testing.

Every metric is recomputed over many repetitions. Per repetition the
Following group is first resized to the smaller group's size and then
p-sampled, so both groups contribute equal sample sizes; the Ignoring
group is p-sampled directly (and resized first only if it happens to be
the larger one). Significance uses two-sided Welch t-tests.

Repetition seeds derive from (master seed, kind, metric, repetition, ...)
so results are bitwise independent of execution order and thread count.
Sampling and clustering seeds intentionally omit the group name: with
common random numbers, two groups holding identical data produce
identical metric values, and between-group comparisons lose no validity.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy import stats

from .blocks import InteractionBlock
from .cluster import (
    PointSet,
    adjusted_rand_index,
    bic,
    calinski_harabasz,
    choose_k_from_curve,
    hopkins,
    kmeans,
    mean_pairwise_distance,
)
from .embed import EmbeddingTable, block_embedding
from .errors import ConfigError
from .seeds import derive_seed

FOLLOWING = "following"
IGNORING = "ignoring"
ALL_USERS = "all"


@dataclass(frozen=True)
class SamplingPlan:
    """Repetition and sampling fractions of the measurement protocol."""

    repetitions: int = 50
    p_fraction_default: float = 0.8
    p_fraction_hopkins: float = 0.1
    hopkins_m_fraction: float = 0.1
    master_seed: int = 0

    def __post_init__(self):
        if self.repetitions < 2:
            raise ConfigError("repetitions must be >= 2 (t-tests need variance)")
        for name in ("p_fraction_default", "p_fraction_hopkins", "hopkins_m_fraction"):
            value = getattr(self, name)
            if not 0.0 < value <= 1.0:
                raise ConfigError(f"{name} must be in (0, 1], got {value}")


@dataclass(frozen=True)
class GroupPair:
    """Sorted, disjoint Following and Ignoring user id tuples."""

    following: tuple[str, ...]
    ignoring: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "following", tuple(sorted(self.following)))
        object.__setattr__(self, "ignoring", tuple(sorted(self.ignoring)))
        if set(self.following) & set(self.ignoring):
            raise ConfigError("following and ignoring groups overlap")

    @property
    def target_size(self) -> int:
        """Common per-group size after resize-sampling."""
        return min(len(self.following), len(self.ignoring))


@dataclass(frozen=True)
class FirstLastEmbeddings:
    """Per-user first- and last-block embedding vectors for one kind."""

    kind: str
    user_ids: tuple[str, ...]
    first: np.ndarray
    last: np.ndarray
    _index: dict[str, int] = field(repr=False, default_factory=dict)

    def __post_init__(self):
        if self.first.shape != self.last.shape or self.first.shape[0] != len(self.user_ids):
            raise ValueError("misaligned first/last embedding arrays")
        if not self._index:
            self._index.update({u: i for i, u in enumerate(self.user_ids)})

    def rows(self, users: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
        picks = [self._index[u] for u in users]
        return self.first[picks], self.last[picks]

    def has(self, user: str) -> bool:
        return user in self._index


def collect_first_last(
    blocks_per_user: Mapping[str, Sequence[InteractionBlock]],
    table: EmbeddingTable,
    kind: str,
    users: Iterable[str],
    missing_policy: str = "error",
) -> FirstLastEmbeddings:
    """Pool each user's first and last block into aligned embedding rows."""
    ids = sorted(users)
    first_rows = []
    last_rows = []
    for user in ids:
        blocks = blocks_per_user[user]
        if len(blocks) < 2:
            raise ValueError(f"user {user!r} lacks distinct first and last blocks")
        first_rows.append(block_embedding(blocks[0], table, missing_policy).vector)
        last_rows.append(block_embedding(blocks[-1], table, missing_policy).vector)
    return FirstLastEmbeddings(
        kind=kind,
        user_ids=tuple(ids),
        first=np.vstack(first_rows) if first_rows else np.empty((0, table.dim)),
        last=np.vstack(last_rows) if last_rows else np.empty((0, table.dim)),
    )


def resize_sample(group: Iterable[str], target_size: int, seed: int) -> tuple[str, ...]:
    """Uniform subsample without replacement down to target_size.

    Input order does not matter: ids are canonicalized by sorting before
    the draw, and the result is returned sorted.
    """
    ids = sorted(group)
    if target_size > len(ids):
        raise ValueError(f"target size {target_size} exceeds group size {len(ids)}")
    if target_size == len(ids):
        return tuple(ids)
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(ids), size=target_size, replace=False)
    picks.sort()
    return tuple(ids[i] for i in picks)


def p_sample(group: Iterable[str], fraction: float, seed: int) -> tuple[str, ...]:
    """Sample floor(fraction·|group|) users uniformly without replacement."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    ids = sorted(group)
    size = int(math.floor(fraction * len(ids) + 1e-9))
    return resize_sample(ids, size, seed)


def welch_t_test(sample_a: Sequence[float], sample_b: Sequence[float]) -> float:
    """Two-sided Welch (unequal-variance) t-test p-value.

    Degenerate inputs where both samples have zero variance yield p=1
    for equal means and p=0 otherwise.
    """
    a = np.asarray(sample_a, dtype=np.float64)
    b = np.asarray(sample_b, dtype=np.float64)
    if len(a) < 2 or len(b) < 2:
        raise ValueError("both samples need at least 2 observations")
    va = float(a.var(ddof=1))
    vb = float(b.var(ddof=1))
    ma = float(a.mean())
    mb = float(b.mean())
    if va == 0.0 and vb == 0.0:
        return 1.0 if ma == mb else 0.0
    sa = va / len(a)
    sb = vb / len(b)
    t = (ma - mb) / math.sqrt(sa + sb)
    df = (sa + sb) ** 2 / (sa**2 / (len(a) - 1) + sb**2 / (len(b) - 1))
    return float(min(1.0, 2.0 * stats.t.sf(abs(t), df)))


def _run_tasks(fn: Callable[[int], object], n: int, threads: int) -> list:
    if threads <= 1:
        return [fn(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(n)))


@dataclass(frozen=True)
class GroupBlockStats:
    amount: int
    first_mean: float
    last_mean: float
    within_p: float

    def to_dict(self) -> dict:
        return {
            "amount": self.amount,
            "first_mean": self.first_mean,
            "last_mean": self.last_mean,
            "within_p": self.within_p,
        }


@dataclass(frozen=True)
class TwoStepNote:
    """Audit record of the Following group's two-step sampling."""

    following_size: int
    resized_to: int
    p_sampled_to: int

    def to_dict(self) -> dict:
        return {
            "following_size": self.following_size,
            "resized_to": self.resized_to,
            "p_sampled_to": self.p_sampled_to,
        }


@dataclass(frozen=True)
class TendencySection:
    """Hopkins tendency results in the shape of the per-action table:
    All users / Following / Ignoring rows plus between-group p-values."""

    kind: str
    rows: dict[str, GroupBlockStats]
    between_p_first: float
    between_p_last: float
    repetitions: int
    m: int
    following_sampling: TwoStepNote

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "rows": {name: row.to_dict() for name, row in self.rows.items()},
            "between_p_first": self.between_p_first,
            "between_p_last": self.between_p_last,
            "repetitions": self.repetitions,
            "hopkins_m": self.m,
            "following_sampling": self.following_sampling.to_dict(),
        }


@dataclass(frozen=True)
class KOffsetRow:
    offset: int | str
    following: float
    ignoring: float
    p_value: float

    def to_dict(self) -> dict:
        return {
            "offset": self.offset,
            "following": self.following,
            "ignoring": self.ignoring,
            "p_value": self.p_value,
        }


@dataclass(frozen=True)
class ReinforcementSection:
    """Per-k-offset metric table (CH drop or ARI) plus the AVE row."""

    kind: str
    metric: str
    k_star: dict[str, int]
    k_used: dict[str, list[int]]
    rows: list[KOffsetRow]
    ave: KOffsetRow
    repetitions: int
    sample_size: int
    following_sampling: TwoStepNote
    clipped_offsets: list[int]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "metric": self.metric,
            "k_star": dict(self.k_star),
            "k_used": {g: list(ks) for g, ks in self.k_used.items()},
            "rows": [r.to_dict() for r in self.rows],
            "ave": self.ave.to_dict(),
            "repetitions": self.repetitions,
            "sample_size": self.sample_size,
            "following_sampling": self.following_sampling.to_dict(),
            "clipped_offsets": list(self.clipped_offsets),
        }


@dataclass(frozen=True)
class DiversitySection:
    """Content-diversity table: All users / Following / Ignoring rows.

    Within-group p-values compare repetition values; between-group
    p-values compare the per-user diversity scalars of the two groups
    (repetition values share their finite population, so a repetition-
    level between test would be degenerate).
    """

    rows: dict[str, GroupBlockStats]
    between_p_first: float
    between_p_last: float
    repetitions: int
    excluded_users: int
    following_sampling: TwoStepNote

    def to_dict(self) -> dict:
        return {
            "rows": {name: row.to_dict() for name, row in self.rows.items()},
            "between_p_first": self.between_p_first,
            "between_p_last": self.between_p_last,
            "repetitions": self.repetitions,
            "excluded_users": self.excluded_users,
            "following_sampling": self.following_sampling.to_dict(),
        }


def two_step_sample(
    groups: GroupPair, plan: SamplingPlan, kind: str, metric: str, rep: int, fraction: float
) -> tuple[tuple[str, ...], tuple[str, ...], tuple[str, ...]]:
    """One repetition's samples: (following, ignoring, pooled all-users).

    Following is resize-sampled to the common size and then p-sampled;
    Ignoring is p-sampled (after an identity resize unless it is the
    larger group). The pooled sample is drawn from the union of the two
    resized groups.
    """
    target = groups.target_size
    seed_resize = derive_seed(plan.master_seed, kind, metric, rep, "resize")
    seed_p = derive_seed(plan.master_seed, kind, metric, rep, "p")
    seed_p_all = derive_seed(plan.master_seed, kind, metric, rep, "p-all")
    f_resized = resize_sample(groups.following, target, seed_resize)
    i_resized = resize_sample(groups.ignoring, target, seed_resize)
    f_sample = p_sample(f_resized, fraction, seed_p)
    i_sample = p_sample(i_resized, fraction, seed_p)
    pooled = sorted(set(f_resized) | set(i_resized))
    all_sample = p_sample(pooled, fraction, seed_p_all)
    return f_sample, i_sample, all_sample


def _two_step_note(groups: GroupPair, fraction: float) -> TwoStepNote:
    target = groups.target_size
    return TwoStepNote(
        following_size=len(groups.following),
        resized_to=target,
        p_sampled_to=int(math.floor(fraction * target + 1e-9)),
    )


def run_tendency(
    groups: GroupPair,
    embeddings: FirstLastEmbeddings,
    plan: SamplingPlan,
    threads: int = 1,
) -> TendencySection:
    """Hopkins statistic per group on first and last blocks.

    Per repetition, users are sampled with the Hopkins p-fraction and the
    statistic is computed on their first-block and last-block embeddings.
    Within-group p compares the repetition values of the two blocks;
    between-group p compares the two groups per block.
    """
    kind = embeddings.kind
    frac = plan.p_fraction_hopkins
    names = (FOLLOWING, IGNORING, ALL_USERS)

    def one_rep(rep: int) -> tuple[tuple[float, float], ...]:
        samples = dict(zip(names, two_step_sample(groups, plan, kind, "hopkins", rep, frac)))
        out = []
        for name in names:
            users = samples[name]
            n = len(users)
            if n < 4:
                raise ConfigError(
                    f"hopkins sample of {n} users is too small; raise "
                    "p_fraction_hopkins or supply more users"
                )
            m = min(max(2, int(math.floor(plan.hopkins_m_fraction * n + 1e-9))), n // 2)
            first_pts, last_pts = embeddings.rows(users)
            h_first = hopkins(
                PointSet(users, first_pts), m, derive_seed(plan.master_seed, kind, "hopkins", rep, "first")
            )
            h_last = hopkins(
                PointSet(users, last_pts), m, derive_seed(plan.master_seed, kind, "hopkins", rep, "last")
            )
            out.append((h_first, h_last))
        return tuple(out)

    results = _run_tasks(one_rep, plan.repetitions, threads)
    rows: dict[str, GroupBlockStats] = {}
    values: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    sizes = {
        FOLLOWING: int(math.floor(frac * groups.target_size + 1e-9)),
        IGNORING: int(math.floor(frac * groups.target_size + 1e-9)),
        ALL_USERS: int(math.floor(frac * 2 * groups.target_size + 1e-9)),
    }
    m_used = min(
        max(2, int(math.floor(plan.hopkins_m_fraction * sizes[FOLLOWING] + 1e-9))),
        sizes[FOLLOWING] // 2,
    )
    for pos, name in enumerate(names):
        first_vals = np.array([r[pos][0] for r in results])
        last_vals = np.array([r[pos][1] for r in results])
        values[name] = (first_vals, last_vals)
        rows[name] = GroupBlockStats(
            amount=sizes[name],
            first_mean=float(first_vals.mean()),
            last_mean=float(last_vals.mean()),
            within_p=welch_t_test(first_vals, last_vals),
        )
    return TendencySection(
        kind=kind,
        rows=rows,
        between_p_first=welch_t_test(values[FOLLOWING][0], values[IGNORING][0]),
        between_p_last=welch_t_test(values[FOLLOWING][1], values[IGNORING][1]),
        repetitions=plan.repetitions,
        m=m_used,
        following_sampling=_two_step_note(groups, frac),
    )


def select_k_star(
    groups: GroupPair,
    embeddings: FirstLastEmbeddings,
    plan: SamplingPlan,
    k_range: Sequence[int],
    variant: str = "xmeans",
    strategy: str = "global_max",
    threads: int = 1,
) -> tuple[dict[str, int], dict[str, list[tuple[int, float]]]]:
    """Choose K* per group from averaged BIC over sampled repetitions.

    Each repetition resamples users (resize then p-sample for Following)
    and reruns K-means for every k on the first-block embeddings; the
    BIC curve is averaged over repetitions and its maximum picks K*.
    """
    kind = embeddings.kind
    frac = plan.p_fraction_default
    sample_n = int(math.floor(frac * groups.target_size + 1e-9))
    ks = sorted(set(int(k) for k in k_range))
    ks = [k for k in ks if 1 <= k < sample_n]
    if not ks:
        raise ConfigError("k_range has no feasible k for the per-repetition sample size")

    def one_rep(rep: int) -> tuple[list[float], list[float]]:
        f_users, i_users, _ = two_step_sample(groups, plan, kind, "k_select", rep, frac)
        out = []
        for users in (f_users, i_users):
            first_pts, _ = embeddings.rows(users)
            ps = PointSet(users, first_pts)
            vals = []
            for k in ks:
                part = kmeans(ps, k, seed=derive_seed(plan.master_seed, kind, "k_select", rep, k))
                vals.append(bic(ps, part, variant=variant))
            out.append(vals)
        return out[0], out[1]

    results = _run_tasks(one_rep, plan.repetitions, threads)
    k_star: dict[str, int] = {}
    curves: dict[str, list[tuple[int, float]]] = {}
    for pos, name in enumerate((FOLLOWING, IGNORING)):
        mat = np.array([r[pos] for r in results])
        means = mat.mean(axis=0)
        curves[name] = [(k, float(v)) for k, v in zip(ks, means)]
        k_star[name] = choose_k_from_curve(ks, means, strategy=strategy)
    return k_star, curves


def _k_window(k_star: int, window: int, sample_n: int) -> tuple[list[int], list[int]]:
    """Valid ks in [k*-window, k*+window] plus the clipped offsets."""
    ks = []
    clipped = []
    for off in range(-window, window + 1):
        k = k_star + off
        if 2 <= k <= sample_n - 1:
            ks.append(k)
        else:
            clipped.append(off)
    return ks, clipped


def run_reinforcement(
    groups: GroupPair,
    embeddings: FirstLastEmbeddings,
    plan: SamplingPlan,
    k_star: Mapping[str, int],
    k_window: int = 5,
    threads: int = 1,
) -> tuple[ReinforcementSection, ReinforcementSection]:
    """CH-drop and ARI tables over the k window around each group's K*.

    CH drop per repetition and k: cluster the first-block sample, score
    both blocks under those fixed labels, and subtract. ARI per
    repetition and k: cluster first and last blocks independently (same
    seed) and compare the partitions aligned by user. Rows are keyed by
    offset from K*; offsets infeasible for either group are dropped with
    a notice.
    """
    kind = embeddings.kind
    frac = plan.p_fraction_default
    sample_n = int(math.floor(frac * groups.target_size + 1e-9))
    windows = {}
    clipped_all: set[int] = set()
    for name in (FOLLOWING, IGNORING):
        ks, clipped = _k_window(int(k_star[name]), k_window, sample_n)
        offsets = [k - int(k_star[name]) for k in ks]
        windows[name] = dict(zip(offsets, ks))
        clipped_all.update(clipped)
    offsets = sorted(set(windows[FOLLOWING]) & set(windows[IGNORING]))
    clipped_all.update(
        o for o in range(-k_window, k_window + 1) if o not in offsets
    )
    if not offsets:
        raise ConfigError("no feasible k offsets; the sample is too small for the k window")

    def metric_rep(metric: str, rep: int) -> tuple[list[float], list[float]]:
        f_users, i_users, _ = two_step_sample(groups, plan, kind, metric, rep, frac)
        per_group: list[list[float]] = []
        for name, users in ((FOLLOWING, f_users), (IGNORING, i_users)):
            first_pts, last_pts = embeddings.rows(users)
            first_ps = PointSet(users, first_pts)
            last_ps = PointSet(users, last_pts)
            vals = []
            for off in offsets:
                k = windows[name][off]
                seed = derive_seed(plan.master_seed, kind, metric, rep, k)
                if metric == "ch_drop":
                    part = kmeans(first_ps, k, seed)
                    vals.append(
                        calinski_harabasz(first_ps, part.labels)
                        - calinski_harabasz(last_ps, part.labels)
                    )
                else:
                    part_first = kmeans(first_ps, k, seed)
                    part_last = kmeans(last_ps, k, seed)
                    vals.append(
                        adjusted_rand_index(part_first.labels, part_last.labels)
                    )
            per_group.append(vals)
        return per_group[0], per_group[1]

    sections = []
    for metric in ("ch_drop", "ari"):
        results = _run_tasks(lambda rep: metric_rep(metric, rep), plan.repetitions, threads)
        f_mat = np.array([r[0] for r in results])
        i_mat = np.array([r[1] for r in results])
        rows = []
        for j, off in enumerate(offsets):
            rows.append(
                KOffsetRow(
                    offset=off,
                    following=float(f_mat[:, j].mean()),
                    ignoring=float(i_mat[:, j].mean()),
                    p_value=welch_t_test(f_mat[:, j], i_mat[:, j]),
                )
            )
        f_ave = f_mat.mean(axis=1)
        i_ave = i_mat.mean(axis=1)
        ave = KOffsetRow(
            offset="AVE",
            following=float(f_ave.mean()),
            ignoring=float(i_ave.mean()),
            p_value=welch_t_test(f_ave, i_ave),
        )
        sections.append(
            ReinforcementSection(
                kind=kind,
                metric=metric,
                k_star={g: int(k_star[g]) for g in (FOLLOWING, IGNORING)},
                k_used={g: [windows[g][o] for o in offsets] for g in (FOLLOWING, IGNORING)},
                rows=rows,
                ave=ave,
                repetitions=plan.repetitions,
                sample_size=sample_n,
                following_sampling=_two_step_note(groups, frac),
                clipped_offsets=sorted(clipped_all),
            )
        )
    return sections[0], sections[1]


def diversity_scalars(
    browse_blocks: Mapping[str, Sequence[InteractionBlock]],
    table: EmbeddingTable,
    users: Iterable[str],
    missing_policy: str = "error",
) -> tuple[dict[str, float], dict[str, float], int]:
    """Per-user content diversity of the first and last browse block.

    Diversity is the mean pairwise Euclidean distance between the item
    embeddings within the block. Under the skip policy, users whose
    blocks resolve fewer than two items are excluded and counted.
    """
    first: dict[str, float] = {}
    last: dict[str, float] = {}
    excluded = 0
    for user in sorted(users):
        blocks = browse_blocks[user]
        pair = []
        ok = True
        for block in (blocks[0], blocks[-1]):
            if missing_policy == "error":
                vectors = table.rows(block.item_ids)
            else:
                known = [i for i in block.item_ids if i in table]
                if len(known) < 2:
                    ok = False
                    break
                vectors = table.rows(known)
            pair.append(mean_pairwise_distance(vectors))
        if not ok:
            excluded += 1
            continue
        first[user], last[user] = pair
    return first, last, excluded


def run_diversity(
    groups: GroupPair,
    browse_blocks: Mapping[str, Sequence[InteractionBlock]],
    table: EmbeddingTable,
    plan: SamplingPlan,
    missing_policy: str = "error",
    threads: int = 1,
) -> DiversitySection:
    """Content-diversity trends for both groups plus the pooled row.

    Group values per repetition are means of the sampled users' per-user
    diversity scalars. The between-group test runs over the per-user
    scalars of the resized groups; within-group tests compare first
    versus last repetition values.
    """
    kind = "browse"
    usable = [
        u
        for u in set(groups.following) | set(groups.ignoring)
        if u in browse_blocks and len(browse_blocks[u]) >= 2
    ]
    first_by_user, last_by_user, excluded = diversity_scalars(
        browse_blocks, table, usable, missing_policy
    )
    eligible = set(first_by_user)
    pair = GroupPair(
        following=tuple(u for u in groups.following if u in eligible),
        ignoring=tuple(u for u in groups.ignoring if u in eligible),
    )
    frac = plan.p_fraction_default
    names = (FOLLOWING, IGNORING, ALL_USERS)

    def one_rep(rep: int) -> tuple[tuple[float, float], ...]:
        samples = dict(zip(names, two_step_sample(pair, plan, kind, "diversity", rep, frac)))
        out = []
        for name in names:
            users = samples[name]
            if not users:
                raise ConfigError("diversity sample is empty; supply more users")
            out.append(
                (
                    float(np.mean([first_by_user[u] for u in users])),
                    float(np.mean([last_by_user[u] for u in users])),
                )
            )
        return tuple(out)

    results = _run_tasks(one_rep, plan.repetitions, threads)
    target = pair.target_size
    sizes = {
        FOLLOWING: int(math.floor(frac * target + 1e-9)),
        IGNORING: int(math.floor(frac * target + 1e-9)),
        ALL_USERS: int(math.floor(frac * 2 * target + 1e-9)),
    }
    rows: dict[str, GroupBlockStats] = {}
    for pos, name in enumerate(names):
        first_vals = np.array([r[pos][0] for r in results])
        last_vals = np.array([r[pos][1] for r in results])
        rows[name] = GroupBlockStats(
            amount=sizes[name],
            first_mean=float(first_vals.mean()),
            last_mean=float(last_vals.mean()),
            within_p=welch_t_test(first_vals, last_vals),
        )

    # User-level between-group comparison on one resize draw.
    seed_between = derive_seed(plan.master_seed, kind, "diversity", "between-resize")
    f_users = resize_sample(pair.following, target, seed_between)
    i_users = resize_sample(pair.ignoring, target, seed_between)
    between_first = welch_t_test(
        [first_by_user[u] for u in f_users], [first_by_user[u] for u in i_users]
    )
    between_last = welch_t_test(
        [last_by_user[u] for u in f_users], [last_by_user[u] for u in i_users]
    )
    return DiversitySection(
        rows=rows,
        between_p_first=between_first,
        between_p_last=between_last,
        repetitions=plan.repetitions,
        excluded_users=excluded,
        following_sampling=_two_step_note(pair, frac),
    )
