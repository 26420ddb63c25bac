"""Adaptive boundary element solver for the hypersingular equation on a
flat polygonal screen, with non-conforming sub-domain coupling and an
h-h/2 error estimator driving the refinement loop."""

__version__ = "0.1.0"
