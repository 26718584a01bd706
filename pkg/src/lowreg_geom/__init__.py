"""Numerical toolkit for scalar-curvature rigidity of low-regularity metrics.

Submodules:
    grid      -- chart grids, fields, finite differences, quadrature, mollifier
    metric    -- admissible metric fields, Christoffels, frames, volume density
    scal      -- distributional scalar curvature pairing and certificates
    clifford  -- Clifford modules, curvature endomorphism bounds
    atlas     -- two-chart sphere-type atlases with partition of unity
    dirac     -- discrete twisted Dirac operators, spectra, index
    maps      -- Lipschitz map analysis: differentials, quasiregularity, distances
    doubling  -- disk doubling, boundary mean curvature, folded maps
    cli       -- experiment runner
"""

__version__ = "0.1.0"
