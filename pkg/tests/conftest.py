"""Shared fixtures for the test suite."""

# Five trivial sentences that the default model drives to perfect triplet F1
# within 50 epochs (verified across 10 seeds while freezing these tests).
OVERFIT_FIXTURE = """speakers lovely .####[([0], [1], 'POS')]
trackpad awful .####[([0], [1], 'NEG')]
webcam average .####[([0], [1], 'NEU')]
lovely keyboard .####[([1], [0], 'POS')]
broken charger .####[([1], [0], 'NEG')]"""
