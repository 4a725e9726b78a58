"""
Trip anomaly detectors: DBSCAN over Frechet distances and a sequence autoencoder.
"""
