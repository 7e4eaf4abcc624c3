"""Score stocks the model never saw during training.

The beta network is shared across stocks, so any stock with a characteristic
history gets exposures.  Run with ``python demos/03_unseen_stocks.py``.
"""

from rvrae.data import SplitSpec, SyntheticSpec, generate_synthetic, normalize_characteristics
from rvrae.model import ModelDims, TrainConfig
from rvrae.pipeline import omission_run, summarize_omission

panel, _ = generate_synthetic(SyntheticSpec(n_stocks=200, n_dates=120, seed=3))
panel = normalize_characteristics(panel)
dims = ModelDims(n_assets=200, n_factors=3, hidden=8, n_chars=10, window=6)
config = TrainConfig(epochs=5, window=6, patience=3)

print(f"{'omitted':>8s} {'Rank IC mean(sd)':>18s} {'Rank ICIR mean(sd)':>20s}")
for m in (50, 100, 150):
    runs = [omission_run(panel, SplitSpec(), dims, config, m, seed) for seed in range(3)]
    s = summarize_omission(runs)
    print(f"{m:8d} {s['rank_ic_mean']:9.4f}({s['rank_ic_sd']:.4f}) "
          f"{s['rank_icir_mean']:11.4f}({s['rank_icir_sd']:.4f})")
