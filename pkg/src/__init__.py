"""connlab: connectivity-matrix classification with a dropout DNN"""

__version__ = "0.1.0"
