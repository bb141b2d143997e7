"""Quantum-jump coherence laboratory: bistable Jaynes-Cummings trajectories,
an auxiliary-cavity jump meter, and integrated-charge statistics of
mode-matched heterodyne and homodyne detection."""

__version__ = "0.1.0"
