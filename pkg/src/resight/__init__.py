"""resight: photo re-sighting identification for individual animals.

A retrieval pipeline that indexes an unlabeled image collection into
individual identities: a transactional data server (DEI) drives species
workflows, stateless image-processing workers (IPEs) score candidate
pairs with an ensemble of matchers, and sparse human verification of top
matches adapts the ensemble online while building capture histories.
"""

__version__ = "0.1.0"
