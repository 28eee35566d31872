from DistilPy.config.constants import *
