"""Monte Carlo laboratory for central limit theorems of randomly reinforced urns."""

__version__ = "0.1.0"
