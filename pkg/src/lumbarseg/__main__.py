"""Console entry point; pins the BLAS/OpenMP thread count before numpy loads."""

import os
import sys


def main() -> int:
    threads = os.environ.get("LUMBARSEG_THREADS", "1")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = threads
    from .cli import main as cli_main

    return cli_main()


if __name__ == "__main__":
    sys.exit(main())
