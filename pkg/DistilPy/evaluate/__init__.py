from DistilPy.evaluate.probe import *
from DistilPy.evaluate.metrics import *
