"""flowtopo - meshfree topology optimization of Stokes flow with kernel-corrected networks."""

__version__ = "0.1.0"
