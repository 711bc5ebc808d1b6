"""Physical constants and unit conversions shared across the package."""

import math

AU_M = 149_597_870_700.0          # IAU 2012, exact
C_M_S = 299_792_458.0             # exact
C_AU_S = C_M_S / AU_M             # ~2.00398880e-3 au/s
AU_LIGHT_TIME_S = AU_M / C_M_S    # ~499.00478 s
SECONDS_PER_DAY = 86_400.0
C_AU_DAY = C_AU_S * SECONDS_PER_DAY

H_PLANCK = 6.626_070_15e-27       # erg s, exact (SI 2019)
C_CM_S = C_M_S * 100.0
ELECTRON_CHARGE = 1.602_176_634e-19  # C, exact

GM_SUN_AU3_DAY2 = 2.959_122_082_855_911e-4   # Gaussian gravitational constant squared
OBLIQUITY_J2000_DEG = 23.439_279_444_4
ARCSEC_PER_RAD = math.degrees(1.0) * 3600.0
