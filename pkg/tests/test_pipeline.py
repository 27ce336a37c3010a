"""End-to-end recovery in a density regime where the second eigenvalue is resolvable."""
import numpy as np
import pytest

import test_acceptance as ta


@pytest.mark.parametrize("seed", range(3))
def test_dense_small_world_recovery(seed):
    run = ta._pipeline(ta.SWM_DIST, ta.SWM_KERNEL, 2000, 400, seed)
    assert len(run.cd.clusters) >= 1
    assert ta.pipeline_pearson(run) >= 0.75
    for e, c in zip(run.embeddings, run.cd.clusters):
        assert abs(ta.ev.correlations(e.coordinates, run.x[c])["spearman"]) >= 0.9
    assert np.isfinite(run.coords).mean() >= 0.9
