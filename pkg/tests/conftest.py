import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("repo", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


def flood_fill_labels(open_mask: np.ndarray) -> np.ndarray:
    """Plain BFS labelling used as an oracle for cluster labelling."""
    labels = np.zeros(open_mask.shape, dtype=np.int64)
    d = open_mask.ndim
    nxt = 0
    for start in zip(*np.nonzero(open_mask)):
        if labels[start]:
            continue
        nxt += 1
        labels[start] = nxt
        stack = [start]
        while stack:
            cur = stack.pop()
            for axis in range(d):
                for step in (-1, 1):
                    nb = list(cur)
                    nb[axis] += step
                    nb = tuple(nb)
                    if 0 <= nb[axis] < open_mask.shape[axis] and open_mask[nb] and not labels[nb]:
                        labels[nb] = nxt
                        stack.append(nb)
    return labels


def same_partition(a: np.ndarray, b: np.ndarray) -> bool:
    """True when two labelings induce the same partition (0 = unlabelled)."""
    if not np.array_equal(a > 0, b > 0):
        return False
    pairs = set(zip(a[a > 0].tolist(), b[b > 0].tolist()))
    return len(pairs) == len({x for x, _ in pairs}) == len({y for _, y in pairs})


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
