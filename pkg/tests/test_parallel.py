import pytest

from hyperfuse.errors import ConfigError
from hyperfuse.parallel import THREADS_ENV, map_chunks, resolve_threads


def test_results_in_chunk_order_for_any_thread_count():
    want = [(lo, hi) for lo, hi in map_chunks(lambda lo, hi: (lo, hi), 103, 10, 1)]
    for t in (2, 8):
        assert map_chunks(lambda lo, hi: (lo, hi), 103, 10, t) == want
    assert want[0] == (0, 10) and want[-1] == (100, 103)


def test_empty_range():
    assert map_chunks(lambda lo, hi: 1, 0, 10, 4) == []


def test_resolve_threads(monkeypatch):
    monkeypatch.delenv(THREADS_ENV, raising=False)
    assert resolve_threads(None) == 1
    monkeypatch.setenv(THREADS_ENV, "6")
    assert resolve_threads(None) == 6
    assert resolve_threads(2) == 2  # the flag wins over the environment
    monkeypatch.setenv(THREADS_ENV, "many")
    with pytest.raises(ConfigError):
        resolve_threads(None)
    with pytest.raises(ConfigError):
        resolve_threads(0)
