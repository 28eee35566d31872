from DistilPy.attack.badencoder import *
from DistilPy.attack.bassl import *
