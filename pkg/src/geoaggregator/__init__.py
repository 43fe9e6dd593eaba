"""GeoAggregator: Gaussian-biased Cartesian-product attention for geospatial tabular regression."""

__version__ = "0.1.0"
