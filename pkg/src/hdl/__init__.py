"""Harmonic maps into pinched conformal disks, on a truncated polar grid."""
