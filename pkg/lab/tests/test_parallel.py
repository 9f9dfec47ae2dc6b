"""
Tests for the parallel module.
"""

import os
from unittest.mock import patch

from app.parallel import get_executor, map_ordered, worker_count


class TestWorkers:
    """Test cases for the worker pool."""

    @patch.dict(os.environ, {"TUBELAB_WORKERS": "3"})
    def test_worker_count_from_env(self):
        """Test that TUBELAB_WORKERS sets the pool size."""
        assert worker_count() == 3

    @patch.dict(os.environ, {"TUBELAB_WORKERS": "lots"})
    def test_invalid_worker_count(self):
        """Test that an invalid value falls back to one worker."""
        assert worker_count() == 1

    @patch.dict(os.environ, {"TUBELAB_WORKERS": "0"})
    def test_worker_count_at_least_one(self):
        """Test that nonpositive values are raised to one."""
        assert worker_count() == 1

    @patch.dict(os.environ, {"TUBELAB_WORKERS": "4"})
    def test_map_ordered_keeps_order(self):
        """Test that parallel results come back in submission order."""
        assert map_ordered(lambda x: x * x, range(20)) == [x * x for x in range(20)]

    @patch.dict(os.environ, {"TUBELAB_WORKERS": "1"})
    def test_serial_path_skips_pool(self):
        """Test that one worker runs inline without creating a pool."""
        with patch("app.parallel.get_executor") as mock_executor:
            assert map_ordered(str, [1, 2]) == ["1", "2"]
        mock_executor.assert_not_called()

    @patch.dict(os.environ, {"TUBELAB_WORKERS": "2"})
    def test_get_executor(self):
        """Test that the executor runs submitted work."""
        with get_executor() as pool:
            assert pool.submit(sum, [1, 2, 3]).result() == 6
