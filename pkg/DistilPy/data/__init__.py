from DistilPy.data.datasets import *
from DistilPy.data.poison import *
