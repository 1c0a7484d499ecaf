"""wildpay: a camera-trap detection pipeline that pays the animals it sees.

The package has three layers:

* numeric kernels for detector post-processing and training math
  (:mod:`wildpay.geometry`, :mod:`wildpay.losses`),
* an evaluation stack (:mod:`wildpay.metrics`, :mod:`wildpay.evaluation`)
  that scores detections against VOC-style annotations and renders
  fold-averaged reports,
* an ingestion/payment pipeline (:mod:`wildpay.smtp_server`,
  :mod:`wildpay.events`, :mod:`wildpay.backends`, :mod:`wildpay.ledger`,
  :mod:`wildpay.service`) that turns camera uploads into integer-pence
  transfers from a guardian account to per-species accounts.

Everything is importable as a library; the ``wildpay`` console script in
:mod:`wildpay.cli` wires the layers together.
"""

__version__ = "0.1.0"
