"""Small power sweep written to CSV, the same path the ``netsense sweep`` command takes."""
import sys

from netsense.harness import SweepSpec, rows_to_csv, run_sweep

spec = SweepSpec(axis="power_dbm", values=[21, 29, 37], schemes=["bench3", "alg3", "bench1"],
                 overrides={"mc_samples": 5})
sys.stdout.write(rows_to_csv(run_sweep(spec)))
