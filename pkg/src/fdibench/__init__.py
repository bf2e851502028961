"""fdibench: sensor-spoofing detection workbench for quadrotor state estimation.

The package glues together four layers:

* ``dynamics`` / ``noise`` / ``attacks`` / ``simulate`` — desk-scale plant
  simulators (a 6-state double integrator and a 12-state rigid-body quadrotor)
  with pluggable noise families and additive measurement-injection attacks.
* ``ekf`` — extended Kalman filtering with per-channel masking and whitened
  innovation (residue) streams, the raw material every detector consumes.
* ``detectors`` — sequential tests (CUSUM, SPRT, windowed Bayes), a logistic
  baseline, and a window-attention reconstruction detector trained with plain
  gradient descent on numpy.
* ``resilience`` / ``metrics`` / ``benchmark`` / ``cli`` — closed-loop sensor
  masking driven by detector verdicts, exact-count metrics, and the grid
  benchmark with CSV/text/figure reports.

Everything is deterministic given a seed: runs record their RNG algorithm in a
JSON sidecar and artifacts are written atomically with printed SHA-256 digests.
"""

from fdibench.version import __version__

__all__ = ["__version__"]
