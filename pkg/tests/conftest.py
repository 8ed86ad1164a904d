import numpy as np
import pytest

from jumpgop.market import MarketSpec

B = [[0.2, 0.1], [0.1, 0.5]]


def two_asset(theta, cap=None, r=0.02, lam=1.0, horizon=1.0, b=B):
    return MarketSpec.from_theta(m=1, horizon=horizon, r=r, theta=theta, b=b, lam=[lam], constraint_cap=cap)


def random_spec(rng, d=None, m=None, bounded_event_risk=True, n_pieces=1):
    """Well-conditioned random market; jump columns respect the lower bound on b."""
    d = d if d is not None else int(rng.integers(1, 5))
    m = m if m is not None else int(rng.integers(0, d + 1))
    pieces_b, pieces_a, pieces_lam, rs = [], [], [], []
    for _ in range(n_pieces):
        while True:
            b = rng.normal(0.0, 0.4, size=(d, d)) + np.eye(d) * 0.6
            lam = rng.uniform(0.2, 4.0, size=d - m)
            sl = np.sqrt(lam)
            for i in range(d - m):
                b[:, m + i] = np.maximum(b[:, m + i], -0.9 * sl[i])
            if np.linalg.cond(b) < 1e3:
                break
        theta = rng.uniform(-1.0, 1.0, size=d)
        if bounded_event_risk:
            theta[m:] = rng.uniform(-1.5, 0.95, size=d - m) * sl
        r = float(rng.uniform(-0.02, 0.08))
        pieces_b.append(b)
        pieces_lam.append(lam)
        pieces_a.append(r + b @ theta)
        rs.append(r)
    bps = np.concatenate([[0.0], np.sort(rng.uniform(0.05, 0.95, n_pieces - 1)), [1.0]])
    return MarketSpec(d=d, m=m, breakpoints=bps, r=rs, a=np.array(pieces_a), b=np.array(pieces_b),
                      lam=np.array(pieces_lam).reshape(n_pieces, d - m))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def elmm():
    return two_asset([0.3, 0.5])


@pytest.fixture
def constrained():
    return two_asset([0.3, 1.5], cap=1.0)


@pytest.fixture
def binding_cap():
    return two_asset([0.3, 0.6], cap=0.5)


def pytest_terminal_summary(terminalreporter):
    try:
        import test_acceptance
    except ImportError:
        return
    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.RESULTS:
            terminalreporter.write_line(line)
