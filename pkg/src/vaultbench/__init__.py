"""Desk-scale secure analytics sandbox platform.

Providers publish end-to-end-encrypted datasets into per-owner private
storage spaces.  Consumers with active sharing agreements run
data-preparation and analytics workflows inside isolated sandbox workers,
where datasets are decrypted only transiently, results are re-encrypted,
and plaintext never leaves the sandbox boundary.
"""

__version__ = "0.1.0"
