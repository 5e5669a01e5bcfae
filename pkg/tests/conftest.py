import os

# The training loops are many small BLAS calls; thread pools only add
# contention on this class of machine. Must run before numpy loads.
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")
