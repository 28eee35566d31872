from DistilPy.distill.losses import *
from DistilPy.distill.student import *
from DistilPy.distill.trainer import *
