"""Check every gradient of the training loss, then show the check catching a planted bug.

Run with ``python demos/01_gradients.py``.  Takes a few seconds.
"""

from rvrae.model import ModelDims, loss_gradcheck
from rvrae.numerics import corrupt_backward

dims = ModelDims(n_assets=8, n_factors=2, hidden=4, n_chars=6, window=4)

# Every parameter of the full model.  The decoder's reconstruction heads show
# zero error because they train on a separate auxiliary loss, not this one.
report = loss_gradcheck(dims, seed=0)
print("clean backward pass")
for name, err in report.per_parameter.items():
    print(f"  {name:22s} {err:.2e}")
print(f"  passed={report.passed} (worst {report.max_rel_error:.2e} at {report.worst_parameter})")

# Scale the LSTM cell's backward rule by 1.01.  The check must notice.
with corrupt_backward("lstm_cell", 1.01):
    bad = loss_gradcheck(dims, seed=0)
print("\nlstm_cell backward scaled by 1.01")
print(f"  passed={bad.passed} (worst {bad.max_rel_error:.2e} at {bad.worst_parameter})")
