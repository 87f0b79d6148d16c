"""Frozen outputs of ``oracles.py`` (independent scipy quadrature / simulation).

Regenerate with ``python tests/oracles.py [--interference]``; every value below was printed by it.
All left-tail problems use i.i.d. LogNormal(0, 1) summands.
"""

# N = 2: thresholds solving P(S_2 <= gamma) = 1e-4 and 1e-6 (rounded to 4 digits)
N2_GAMMA_1E4 = 0.1621
N2_ALPHA_1E4 = 1.0006227243956973e-4
N2_GAMMA_1E6 = 0.07712
N2_ALPHA_1E6 = 9.999581624701488e-7

# N = 3
N3_GAMMA_1E4 = 0.4156
N3_ALPHA_1E4 = 1.0001910702096576e-4
N3_GAMMA_1E6 = 0.2252
N3_ALPHA_1E6 = 9.997775692571067e-7

# N = 4 benchmark point with alpha of order 1e-6
N4_GAMMA_MID = 0.5
N4_ALPHA_MID = 2.8468696325081797e-6

# N = 4 threshold sweep (alpha near 1e-3, 1e-5, 1e-7)
N4_GAMMA_1E3 = 1.05
N4_ALPHA_1E3 = 9.456757223248952e-4
N4_GAMMA_1E5 = 0.58
N4_ALPHA_1E5 = 1.068659599545916e-5
N4_GAMMA_1E7 = 0.37
N4_ALPHA_1E7 = 1.5110773057810293e-7

# Interference integrand, N = 4: interferers LogNormal(0 dB, 4 dB), desired signal
# LogNormal(10 dB, 4 dB), eta = -10 dB. Constant-twist simulation, 1e9 samples, seed 2024.
INTERFERENCE_GAMMA_DB = -20.0
INTERFERENCE_ALPHA = 6.191378267806353e-07
INTERFERENCE_SE = 3.3545572907446593e-11
