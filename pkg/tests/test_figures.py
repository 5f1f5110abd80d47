import numpy as np

from subsetsdm import figures
from subsetsdm.baselines import BaselineComparison
from subsetsdm.shapley import stratified_mc_shapley
from subsetsdm.training import TrainHistory

from conftest import tiny_bundle
from test_shapley import random_game


def nonempty(path):
    return path.exists() and path.stat().st_size > 500


def test_history_figure(tmp_path):
    hist = TrainHistory(train_loss=[1.2, 0.9, 0.7], val_auc=[0.5, 0.6, 0.58])
    out = tmp_path / "history.png"
    figures.render_history(hist, out)
    assert nonempty(out)


def test_shapley_figures(tmp_path):
    est = stratified_mc_shapley(random_game(4, seed=1), 5, np.random.default_rng(2))
    bars = tmp_path / "values.png"
    conv = tmp_path / "trace.png"
    figures.render_shapley_values(est, bars)
    figures.render_convergence(est, conv)
    assert nonempty(bars) and nonempty(conv)


def test_map_and_grid_figures(tmp_path):
    ds, split, _, model, _ = tiny_bundle()
    from subsetsdm.evaluation import evaluate_group_powerset
    from subsetsdm.shapley import shapley_map

    grid = evaluate_group_powerset(model, ds, split)
    gpath = tmp_path / "grid.png"
    figures.render_subset_grid(grid, gpath)
    smap = shapley_map(model, ds.samples[:25], ds.schema.groups(), ds.species[0])
    mpath = tmp_path / "map.png"
    figures.render_map(smap, mpath)
    assert nonempty(gpath) and nonempty(mpath)


def test_comparison_figure(tmp_path):
    comp = BaselineComparison(rows=[
        {"method": m, "subset_bits": b, "mean_auc": 0.6 + 0.01 * i, "msd_vs_oracle": 0.01}
        for i, (m, b) in enumerate(
            (m, b) for b in ("110", "011") for m in ("oracle", "masked", "mean"))
    ])
    out = tmp_path / "cmp.png"
    figures.render_baseline_comparison(comp, out)
    assert nonempty(out)
