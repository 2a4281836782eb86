#!/usr/bin/env python3
"""CLI — extraction de la topologie d'un schéma P&ID et exports jumeau numérique.

Usage:
    python pid2twin.py extract plans/sample.png --annotations annotations/sample.json --out out/sample
    python pid2twin.py eval out/pred truth --mode connections
    python pid2twin.py overlay plans/sample.png out/sample
    python pid2twin.py check --config pipeline.yaml
    python pid2twin.py synth --seed 0 --count 50 --out fixtures

Configuration : pipeline.yaml (ou $PIDTWIN_CONFIG), surcharges PIDTWIN__SECTION__CLE,
PIDTWIN_WORKERS, LOG_LEVEL.
Code retour : 0 OK, 1 configuration, 2 entrée illisible/invalide, 3 échec du pipeline.
"""

from __future__ import annotations

import sys

from pidtwin.cli import main

if __name__ == "__main__":
    sys.exit(main())
